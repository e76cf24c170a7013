//! Exit distributions of the noisy system across the four sections, their
//! limiting densities, the resulting oscillation fractions and the region
//! of mixed-mode oscillations.

mod covariance;
mod density;
mod gaussian;
mod kernel;
mod mmo;
mod slopes;
mod stationary;

pub use covariance::{covariance, CovMatrix};
pub use density::{Node, Patch, SectionDensity};
pub use gaussian::{nullcline_conditional, probability_current, transition_density, Gaussian2};
pub use mmo::{extrapolate, mmo_boundaries, mmo_grid, mmo_region, BoundaryRow, MmoCell, MmoOptions, MmoReport};
pub use slopes::{
    return_probability, slope_details, slope_large, slope_small, slope_sweep, SlopeDetails, SweepAxis, SweepRow,
};
pub use stationary::{
    exit_density_point, oscillation_fractions, point_density, propagate, stationary_density, stationary_from_funnel,
    ExitOptions, Fractions, Propagated, StationaryResult,
};
