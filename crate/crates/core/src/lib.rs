//! Stochastic piecewise-linear FitzHugh-Nagumo model.
//!
//! The crate covers the deterministic canard-proxy quantities of the model,
//! exit distributions of the noisy system across four cross-sections, the
//! resulting mixed-mode oscillation region in the `(lambda, D)` plane and
//! its analytic boundary slopes, plus a Monte-Carlo simulator used as an
//! independent check on all of it.
//!
//! ```
//! use pwl_fhn::model::{epsilon_crit, ModelParams};
//!
//! let p = ModelParams::default();
//! let ec = epsilon_crit(&p).unwrap();
//! assert!((ec - (7.5 - 2.0 * 14f64.sqrt())).abs() < 1e-14);
//! ```

pub mod error;
pub mod exit;
pub mod flow;
pub mod mc;
pub mod model;
pub mod numeric;
pub mod orbit;
pub mod section;

pub use error::{Error, Result};
pub use model::{ModelParams, Point2, Region};

/// Version of this crate.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/deterministic.md")]
    struct Deterministic;
    #[doc = include_str!("../../../book/src/exit.md")]
    struct Exit;
    #[doc = include_str!("../../../book/src/mmo.md")]
    struct Mmo;
    #[doc = include_str!("../../../book/src/monte_carlo.md")]
    struct MonteCarlo;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
