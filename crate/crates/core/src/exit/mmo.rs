//! The region of the `(lambda, D)` plane where small and large oscillations
//! both occur with at least a threshold frequency.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::slopes::slope_details;
use super::stationary::{oscillation_fractions, ExitOptions, Fractions};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numeric::brent;
use crate::orbit::{lambda_1, lambda_v1};

/// Knobs of the boundary search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmoOptions {
    /// Fraction both oscillation sizes must reach.
    pub threshold: f64,
    /// Absolute tolerance on boundary values of `lambda`.
    pub lambda_tol: f64,
    pub exit: ExitOptions,
}

impl Default for MmoOptions {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            lambda_tol: 1e-6,
            exit: ExitOptions::default(),
        }
    }
}

/// Fractions at one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MmoCell {
    pub lambda: f64,
    pub d: f64,
    pub fractions: Option<Fractions>,
    pub error: Option<String>,
}

impl MmoCell {
    pub fn is_mmo(&self, threshold: f64) -> bool {
        self.fractions
            .map_or(false, |f| f.small >= threshold && f.large >= threshold)
    }
}

/// Boundaries at one noise level. `lambda_left` is where large oscillations
/// reach the threshold, `lambda_right` where small ones fall to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryRow {
    pub d: f64,
    pub lambda_left: Option<f64>,
    pub lambda_right: Option<f64>,
    /// No `lambda` has both fractions above the threshold.
    pub empty: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MmoReport {
    pub threshold: f64,
    pub cells: Vec<MmoCell>,
    pub boundaries: Vec<BoundaryRow>,
}

/// Fractions on a `lambda` by `D` grid, `D` varying fastest.
pub fn mmo_grid(p: &ModelParams, lambdas: &[f64], ds: &[f64], opts: &ExitOptions) -> Vec<MmoCell> {
    let pairs: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| ds.iter().map(move |&d| (l, d))).collect();
    pairs
        .par_iter()
        .map(|&(lambda, d)| match oscillation_fractions(&p.with_lambda(lambda).with_noise(d), opts) {
            Ok(f) => MmoCell {
                lambda,
                d,
                fractions: Some(f),
                error: None,
            },
            Err(e) => MmoCell {
                lambda,
                d,
                fractions: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Side {
    Left,
    Right,
}

/// Finds where the fraction of one size class crosses the threshold,
/// starting from a linear guess in `D` and widening until bracketed.
fn boundary(p: &ModelParams, d: f64, side: Side, guess: f64, width: f64, opts: &MmoOptions) -> Result<f64> {
    let thr = opts.threshold;
    // increasing in lambda on both sides
    let g = |lambda: f64| -> Result<f64> {
        let f = oscillation_fractions(&p.with_lambda(lambda).with_noise(d), &opts.exit)?;
        Ok(match side {
            Side::Left => f.large - thr,
            Side::Right => thr - f.small,
        })
    };
    let mut a = guess;
    let mut fa = g(a)?;
    let dir = if fa < 0.0 { 1.0 } else { -1.0 };
    let mut step = width;
    let mut b = a + dir * step;
    let mut fb = g(b)?;
    let mut tries = 0;
    while fa.signum() == fb.signum() && fb != 0.0 {
        tries += 1;
        if tries > 12 || b <= 0.0 {
            return Err(Error::NoRoot("mixed-mode boundary"));
        }
        a = b;
        fa = fb;
        step *= 2.0;
        b = a + dir * step;
        fb = g(b)?;
    }
    if fb == 0.0 {
        return Ok(b);
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mut failure = None;
    let root = brent("mixed-mode boundary", lo, hi, opts.lambda_tol, |x| {
        if failure.is_some() {
            return 0.0;
        }
        g(x).unwrap_or_else(|e| {
            failure = Some(e);
            0.0
        })
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(root),
    }
}

/// Both boundaries at every `D`. At `D = 0` they are the deterministic
/// values `lambda_1` and `lambda_v1`.
pub fn mmo_boundaries(p: &ModelParams, ds: &[f64], opts: &MmoOptions) -> Result<Vec<BoundaryRow>> {
    if !(opts.threshold > 0.0 && opts.threshold < 0.5) {
        return Err(Error::Precondition(format!(
            "threshold must lie in (0, 0.5), got {}",
            opts.threshold
        )));
    }
    if let Some(d) = ds.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::Precondition(format!("noise levels must be non-negative, got {d}")));
    }
    let lv1 = lambda_v1(p)?;
    let l1 = lambda_1(p)?;
    let slopes = slope_details(p, opts.threshold).ok();
    let jobs: Vec<(f64, Side)> = ds.iter().flat_map(|&d| [(d, Side::Left), (d, Side::Right)]).collect();
    let found: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(d, side)| {
            if d == 0.0 {
                return Ok(match side {
                    Side::Left => l1,
                    Side::Right => lv1,
                });
            }
            let (base, s) = match side {
                Side::Left => (l1, slopes.map(|s| s.s_large)),
                Side::Right => (lv1, slopes.map(|s| s.s_small)),
            };
            let shift = s.filter(|s| s.is_finite() && *s != 0.0).map_or(0.0, |s| d / s);
            let width = (0.25 * shift.abs()).max(1e-5);
            boundary(p, d, side, base + shift, width, opts)
        })
        .collect();
    Ok(ds
        .iter()
        .zip(found.chunks(2))
        .map(|(&d, pair)| {
            let left = pair[0].as_ref().ok().copied();
            let right = pair[1].as_ref().ok().copied();
            let error = pair
                .iter()
                .filter_map(|r| r.as_ref().err())
                .map(|e| e.to_string())
                .reduce(|a, b| format!("{a}; {b}"));
            BoundaryRow {
                d,
                lambda_left: left,
                lambda_right: right,
                empty: match (left, right) {
                    (Some(l), Some(r)) => !(l < r),
                    _ => false,
                },
                error,
            }
        })
        .collect())
}

/// Boundaries at each `D` of `ds` and fractions on the `lambdas` by `ds` grid.
pub fn mmo_region(p: &ModelParams, lambdas: &[f64], ds: &[f64], opts: &MmoOptions) -> Result<MmoReport> {
    let boundaries = mmo_boundaries(p, ds, opts)?;
    let cells = mmo_grid(p, lambdas, ds, &opts.exit);
    Ok(MmoReport {
        threshold: opts.threshold,
        cells,
        boundaries,
    })
}

/// `lambda` at `D = 0` and `dD/dlambda` of the line through the two rows
/// with the smallest positive `D`, for the left and right boundaries.
pub fn extrapolate(rows: &[BoundaryRow]) -> Option<[(f64, f64); 2]> {
    let mut pos: Vec<&BoundaryRow> = rows
        .iter()
        .filter(|r| r.d > 0.0 && r.lambda_left.is_some() && r.lambda_right.is_some())
        .collect();
    pos.sort_by(|a, b| a.d.total_cmp(&b.d));
    let (a, b) = (pos.first()?, pos.get(1)?);
    let line = |la: f64, lb: f64| {
        let slope = (b.d - a.d) / (lb - la);
        (la - a.d / slope, slope)
    };
    Some([
        line(a.lambda_left?, b.lambda_left?),
        line(a.lambda_right?, b.lambda_right?),
    ])
}
