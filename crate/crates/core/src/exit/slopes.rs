//! Slopes of the boundaries of the mixed-mode region at zero noise.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;

use super::covariance::covariance_with;
use crate::error::{Error, Result};
use crate::flow::{LinearFlow, Line, DEFAULT_HORIZON};
use crate::model::{epsilon_crit, validate, ModelParams, Region};
use crate::numeric::erf_inv;
use crate::orbit::{lambda_1, lambda_v1, w_l_hat};

/// Every intermediate of both slope formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeDetails {
    pub lambda_v1: f64,
    pub lambda_1: f64,
    /// Rate at which the peak of the small orbit grows with `lambda`.
    pub kappa1: f64,
    /// Noise-free spread of the nullcline crossing of the small orbit.
    pub gamma1: f64,
    /// Ordinate where the orbit at `lambda_1` crosses `v = v1`.
    pub w_lambda_1: f64,
    /// Transit time from `v = 0` to `v = v1` at `lambda_1`.
    pub t_int: f64,
    /// `d w / d lambda` of that crossing, analytic and by central differences.
    pub kappa2: f64,
    pub kappa2_fd: f64,
    /// `d w2_hat / d lambda`.
    pub kappa3: f64,
    pub gamma2: f64,
    pub s_small: f64,
    pub s_large: f64,
}

/// `A^{-1} (0, eps)`: how the centre of a piece moves with `lambda`.
fn center_rate(flow: &LinearFlow, p: &ModelParams) -> Result<Vector2<f64>> {
    let inv = flow
        .a
        .try_inverse()
        .ok_or_else(|| Error::Precondition("singular Jacobian".into()))?;
    Ok(inv * Vector2::new(0.0, p.epsilon))
}

fn crossing(flow: &LinearFlow, x0: &Vector2<f64>, v: f64, backward: bool, what: &'static str) -> Result<f64> {
    flow.first_crossing(x0, &Line::vertical(v), backward, DEFAULT_HORIZON)?
        .ok_or(Error::NoRoot(what))
}

/// `w` where the orbit from `(0, w_l_hat)` first meets `v = v1`, with the
/// transit time.
fn launch(p: &ModelParams) -> Result<(f64, Vector2<f64>, LinearFlow)> {
    let flow = LinearFlow::new(Region::R1, p)?;
    let x0 = Vector2::new(0.0, w_l_hat(p));
    let t = crossing(&flow, &x0, p.v1, false, "launch crossing")?;
    let x = flow.state(t, &x0);
    Ok((t, x, flow))
}

fn kappa1_gamma1(p: &ModelParams, lv1: f64) -> Result<(f64, f64)> {
    let q = p.with_lambda(lv1);
    let flow = LinearFlow::new(Region::R1, &q)?;
    let top = Vector2::new(q.v1, q.w1);
    let t = crossing(&flow, &top, 0.0, true, "small orbit transit")?;
    let theta = covariance_with(&flow, t)?;
    Ok((q.v1 / lv1, theta.theta11.sqrt()))
}

/// `kappa2` from the variational equations of the linear flow.
fn kappa2_analytic(p: &ModelParams) -> Result<(f64, f64, Vector2<f64>, LinearFlow)> {
    let (t, x, flow) = launch(p)?;
    let e = flow.propagator(t);
    let dc = center_rate(&flow, p)?;
    let dx0 = Vector2::new(0.0, w_l_hat(&p.with_lambda(1.0)));
    let dx = (Matrix2::identity() - e) * dc + e * dx0;
    let vel = flow.velocity(&x);
    if vel[0] == 0.0 {
        return Err(Error::Precondition("orbit is tangent to v = v1".into()));
    }
    let dt = -dx[0] / vel[0];
    Ok((dx[1] + vel[1] * dt, t, x, flow))
}

fn kappa2_fd(p: &ModelParams) -> Result<f64> {
    let h = 1e-5 * p.lambda.abs().max(1e-3);
    let up = launch(&p.with_lambda(p.lambda + h))?.1[1];
    let down = launch(&p.with_lambda(p.lambda - h))?.1[1];
    Ok((up - down) / (2.0 * h))
}

/// `d w2_hat / d lambda` from the backward orbit of `(1, 1)`.
fn kappa3(p: &ModelParams) -> Result<f64> {
    let flow = LinearFlow::new(Region::R2, p)?;
    let x = Vector2::new(1.0, 1.0);
    let s = crossing(&flow, &x, p.v1, true, "w2_hat")?;
    let y = flow.state(-s, &x);
    let e = flow.propagator(-s);
    let dy = (Matrix2::identity() - e) * center_rate(&flow, p)?;
    // y(s) runs backwards, so dy/ds is minus the velocity
    let ds_rate = -flow.velocity(&y);
    if ds_rate[0] == 0.0 {
        return Err(Error::Precondition("backward orbit is tangent to v = v1".into()));
    }
    let ds = -dy[0] / ds_rate[0];
    Ok(dy[1] + ds_rate[1] * ds)
}

/// All slope ingredients for a fraction threshold (0.1 in the standard
/// definition of the mixed-mode region).
pub fn slope_details(p: &ModelParams, threshold: f64) -> Result<SlopeDetails> {
    if !(threshold > 0.0 && threshold < 0.5) {
        return Err(Error::Precondition(format!("threshold must lie in (0, 0.5), got {threshold}")));
    }
    let report = validate(p);
    if !report.is_valid() {
        return Err(Error::Precondition(report.to_string()));
    }
    let lv1 = lambda_v1(p)?;
    let l1 = lambda_1(p)?;
    let root = std::f64::consts::SQRT_2 * erf_inv(1.0 - 2.0 * threshold)?;
    let (kappa1, gamma1) = kappa1_gamma1(p, lv1)?;

    let q = p.with_lambda(l1);
    let (kappa2, t_int, x, flow) = kappa2_analytic(&q)?;
    let kappa2_fd = kappa2_fd(&q)?;
    let kappa3 = kappa3(&q)?;
    let theta = covariance_with(&flow, t_int)?;
    let vel = flow.velocity(&x);
    let r = vel[1] / vel[0];
    let gamma2 = (theta.theta11 * r * r - 2.0 * theta.theta12 * r + theta.theta22).sqrt();
    Ok(SlopeDetails {
        lambda_v1: lv1,
        lambda_1: l1,
        kappa1,
        gamma1,
        w_lambda_1: x[1],
        t_int,
        kappa2,
        kappa2_fd,
        kappa3,
        gamma2,
        s_small: kappa1 / (root * gamma1),
        s_large: (kappa2 - kappa3) / (root * gamma2),
    })
}

/// `dD/dlambda` at `D = 0` of the curve on which 10% of oscillations are small.
pub fn slope_small(p: &ModelParams) -> Result<f64> {
    if !(p.epsilon > epsilon_crit(p)?) {
        return Err(Error::Precondition("slope_small needs epsilon > epsilon_crit".into()));
    }
    let lv1 = lambda_v1(p)?;
    let (kappa1, gamma1) = kappa1_gamma1(p, lv1)?;
    Ok(kappa1 / (std::f64::consts::SQRT_2 * erf_inv(0.8)? * gamma1))
}

/// `dD/dlambda` at `D = 0` of the curve on which 10% of oscillations are
/// large. Negative: that curve leans towards smaller `lambda`.
pub fn slope_large(p: &ModelParams) -> Result<f64> {
    slope_details(p, 0.1).map(|d| d.s_large)
}

/// Parameter varied by a slope sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Eta1,
    Epsilon,
    Alpha,
}

impl SweepAxis {
    pub fn apply(self, p: &ModelParams, value: f64) -> ModelParams {
        match self {
            SweepAxis::Eta1 => p.with_eta1(value),
            SweepAxis::Epsilon => p.with_epsilon(value),
            SweepAxis::Alpha => ModelParams { alpha: value, ..*p },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Eta1 => "eta1",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::Alpha => "alpha",
        }
    }
}

/// One sweep row; the slopes are scaled by `1/epsilon` and the large one
/// is negated so that both are positive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub lambda_v1: Option<f64>,
    pub lambda_1: Option<f64>,
    pub s_small_scaled: Option<f64>,
    pub s_large_scaled: Option<f64>,
    /// Why the row is incomplete, if it is.
    pub error: Option<String>,
}

/// Slopes and canard proxies across a parameter sweep, in input order.
pub fn slope_sweep(p: &ModelParams, axis: SweepAxis, values: &[f64]) -> Vec<SweepRow> {
    values
        .par_iter()
        .map(|&value| {
            let q = axis.apply(p, value);
            match slope_details(&q, 0.1) {
                Ok(d) => SweepRow {
                    value,
                    lambda_v1: Some(d.lambda_v1),
                    lambda_1: Some(d.lambda_1),
                    s_small_scaled: Some(d.s_small / q.epsilon),
                    s_large_scaled: Some(-d.s_large / q.epsilon),
                    error: None,
                },
                Err(e) => SweepRow {
                    value,
                    lambda_v1: lambda_v1(&q).ok(),
                    lambda_1: lambda_1(&q).ok(),
                    s_small_scaled: None,
                    s_large_scaled: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Probability that `dy = c dt + D dW` started at 0 is back at or below 0
/// after time `delta`, using the hitting density of the level.
pub fn return_probability(delta: f64, c: f64, d: f64) -> Result<f64> {
    if !(delta > 0.0 && c > 0.0 && d >= 0.0) || !(delta.is_finite() && c.is_finite() && d.is_finite()) {
        return Err(Error::Precondition(format!(
            "return_probability needs delta, c > 0 and D >= 0, got ({delta}, {c}, {d})"
        )));
    }
    if d == 0.0 {
        return Ok(0.0);
    }
    Ok(erfc(c * delta.sqrt() / (std::f64::consts::SQRT_2 * d)))
}
