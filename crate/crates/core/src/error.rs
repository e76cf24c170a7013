//! Error type shared by every numerical routine in the crate.

use crate::model::Region;

/// Failures raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// The nullclines of a linear piece are parallel, so it has no equilibrium.
    #[error("nullclines are parallel in region {0:?} (alpha = sigma * slope)")]
    ParallelNullclines(Region),

    /// A routine was called outside of its documented domain.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An event search ran past its time horizon in an unstable region.
    #[error("no crossing bracketed within horizon {horizon} in region {region:?}")]
    NoBracket { region: Region, horizon: f64 },

    /// An iterative method stopped before meeting its tolerance.
    #[error("{what} did not converge: {detail}")]
    NoConvergence { what: &'static str, detail: String },

    /// A root search had no sign change to work with.
    #[error("no root of {0} in the search interval")]
    NoRoot(&'static str),

    /// A computation produced NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A covariance matrix was too close to singular to invert.
    #[error("covariance is numerically singular (det = {det:e}) at t = {t}")]
    SingularCovariance { t: f64, det: f64 },

    /// The exit flux on a target captured too little probability.
    #[error("exit density captured only {mass:.3} of the probability")]
    LowCapture { mass: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn no_conv(what: &'static str, detail: impl Into<String>) -> Self {
        Error::NoConvergence {
            what,
            detail: detail.into(),
        }
    }
}
