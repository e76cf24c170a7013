//! Periodic orbits and the canard-proxy parameter values.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{integrate_orbit, Flows, Line, Manifold, Stop, Trajectory};
use crate::model::{eigenvalues, epsilon_crit, omega, ModelParams, Point2, Region};
use crate::numeric::bisect_predicate;
use crate::section::{next_hit, Component, Section, SectionId};

/// Oscillation amplitude class by the largest `v` reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub fn of(v_max: f64, p: &ModelParams) -> Self {
        if v_max <= p.v1 {
            SizeClass::Small
        } else if v_max <= 1.0 {
            SizeClass::Medium
        } else {
            SizeClass::Large
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// The attracting periodic orbit of the deterministic system.
#[derive(Debug, Clone)]
pub struct PeriodicOrbitResult {
    pub v_max: f64,
    pub period: f64,
    pub size_class: SizeClass,
    /// Crossing of the first section.
    pub section_point: Point2,
    pub orbit: Trajectory,
}

/// Coordinate on the first section: `w` on the ray, `v` on the segment.
fn s1_point(sec: &Section, s: f64) -> Point2 {
    if s < 0.0 {
        Point2::new(0.0, s)
    } else {
        sec.point(Component::Nullcline, s)
    }
}

fn s1_coord(hit_point: Point2, comp: Component) -> f64 {
    match comp {
        Component::Manifold => hit_point.w,
        Component::Nullcline => hit_point.v,
    }
}

struct ReturnMap {
    flows: Flows,
    sec: Section,
    horizon: f64,
}

impl ReturnMap {
    fn new(p: &ModelParams) -> Result<Self> {
        Ok(Self {
            flows: Flows::new(p)?,
            sec: Section::new(SectionId::S1, p),
            horizon: 1e5,
        })
    }

    /// One return: next coordinate, `v` maximum on the way and elapsed time.
    fn step(&self, s: f64) -> Result<(f64, f64, f64)> {
        let hit = next_hit(&self.flows, s1_point(&self.sec, s), &self.sec, self.horizon)?
            .ok_or_else(|| Error::no_conv("periodic_orbit", "orbit does not return to the first section"))?;
        Ok((s1_coord(hit.point, hit.component), hit.v_max, hit.t))
    }
}

/// Largest `v` and period of the attracting orbit, without building samples.
fn orbit_fixed_point(p: &ModelParams) -> Result<(f64, f64, f64)> {
    if !(p.lambda > 0.0) {
        return Err(Error::Precondition(format!(
            "periodic_orbit needs lambda > 0, got {}",
            p.lambda
        )));
    }
    let map = ReturnMap::new(p)?;
    let mut s = w_l_hat(p);
    if s == 0.0 {
        s = -f64::MIN_POSITIVE;
    }
    let (mut s_next, _, _) = map.step(s)?;
    let mut prev: Option<(f64, f64)> = None;
    // rounding in strongly expanding turns sets a noise floor on the residual
    let mut best = (f64::INFINITY, s);
    for it in 0..400 {
        let f = s_next - s;
        let scale = s.abs().max(s_next.abs()).max(1e-300);
        let rel = f.abs() / scale;
        if rel < best.0 {
            best = (rel, s_next);
        }
        if rel <= 1e-13 || (it >= 40 && best.0 <= 1e-8) {
            let start = if rel <= 1e-13 { s_next } else { best.1 };
            return map.step(start);
        }
        let mut cand = s_next;
        if let Some((sp, fp)) = prev {
            if fp != f && (f / fp).abs() > 0.3 {
                // secant on s -> P(s) - s when plain iteration crawls
                let sec = s - f * (s - sp) / (f - fp);
                if sec.is_finite() && (sec < 0.0 || sec < map.sec.null_hi) {
                    cand = sec;
                }
            }
        }
        prev = Some((s, f));
        s = cand;
        s_next = map.step(s)?.0;
    }
    Err(Error::no_conv(
        "periodic_orbit",
        format!("return map residual {:e}", s_next - s),
    ))
}

/// Attracting periodic orbit, found as a fixed point of the return map to
/// the first section.
pub fn periodic_orbit(p: &ModelParams) -> Result<PeriodicOrbitResult> {
    let (s, v_max, period) = orbit_fixed_point(p)?;
    let sec = Section::new(SectionId::S1, p);
    let start = s1_point(&sec, s);
    let orbit = integrate_orbit(start, Stop::MaxTime, period, period / 2000.0, p)?;
    Ok(PeriodicOrbitResult {
        v_max,
        period,
        size_class: SizeClass::of(v_max, p),
        section_point: start,
        orbit,
    })
}

/// Largest `v` over the attracting orbit.
pub fn orbit_v_max(p: &ModelParams) -> Result<f64> {
    orbit_fixed_point(p).map(|r| r.1)
}

/// Ordinate where the slow eigenvector of the left region meets `v = 0`.
pub fn w_l_hat(p: &ModelParams) -> f64 {
    let slow = eigenvalues(Region::L, p).first.re;
    p.lambda * slow / (p.alpha - p.sigma * p.eta_l)
}

/// Closed-form estimate of `lambda_v1` from half a turn of the inner focus.
pub fn lambda_v1_approx(p: &ModelParams) -> f64 {
    let om = omega(Region::R1, p);
    let growth = (p.eta1() - p.epsilon * p.sigma) * std::f64::consts::PI / (2.0 * om);
    (p.alpha * p.v1 - p.sigma * p.w1) / (1.0 + growth.exp())
}

/// Bifurcation parameter at which the attracting orbit first reaches `v1`.
pub fn lambda_v1(p: &ModelParams) -> Result<f64> {
    let ec = epsilon_crit(p)?;
    if !(p.epsilon > ec) {
        return Err(Error::Precondition(format!(
            "lambda_v1 needs epsilon > epsilon_crit ({} <= {ec})",
            p.epsilon
        )));
    }
    let reaches = |lam: f64| -> Result<bool> { Ok(orbit_v_max(&p.with_lambda(lam))? > p.v1) };
    let top = p.alpha * p.v1 - p.sigma * p.w1;
    let mut hi = 0.5 * top;
    while !reaches(hi)? {
        if hi >= top * (1.0 - 1e-6) {
            return Err(Error::NoRoot("lambda_v1"));
        }
        hi = (1.5 * hi).min(top * (1.0 - 1e-6));
    }
    let mut lo = 0.5 * hi;
    let mut shrink = 0;
    while reaches(lo)? {
        hi = lo;
        lo *= 0.5;
        shrink += 1;
        if shrink > 1100 || lo == 0.0 {
            return Err(Error::NoRoot("lambda_v1"));
        }
    }
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        // an orbit grazing v1 can stall the section map; it sits on the root
        let up = match reaches(mid) {
            Err(Error::NoConvergence { .. }) => true,
            r => r?,
        };
        if up {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `w` at which the backward orbit from `(1, 1)` through the inner right
/// region meets `v = v1`.
pub fn w2_hat(p: &ModelParams) -> Result<f64> {
    let flows = Flows::new(p)?;
    let x = nalgebra::Vector2::new(1.0, 1.0);
    let flow = flows.get(Region::R2);
    let t = flow
        .first_crossing(&x, &Line::vertical(p.v1), true, crate::flow::DEFAULT_HORIZON)?
        .ok_or(Error::NoRoot("w2_hat"))?;
    Ok(flow.state(-t, &x)[1])
}

/// Crossing of `v = v1` by the orbit launched from `(0, w_l_hat)`, with the
/// transit time. `None` when the orbit turns back first.
pub fn launch_crossing(p: &ModelParams) -> Result<Option<(f64, Point2)>> {
    let flows = Flows::new(p)?;
    let x0 = nalgebra::Vector2::new(0.0, w_l_hat(p));
    let hop = flows.hop(&x0, &[], false, crate::flow::DEFAULT_HORIZON)?;
    match hop.manifold {
        Some(Manifold::V1) => Ok(Some((hop.t, Point2::from_vector(&hop.x)))),
        _ => Ok(None),
    }
}

/// Whether the orbit from `(0, w_l_hat)` passes below `(1, 1)`.
fn launches_large(p: &ModelParams) -> Result<bool> {
    match launch_crossing(p)? {
        Some((_, x)) => Ok(x.w < w2_hat(p)?),
        None => Ok(false),
    }
}

/// Bifurcation parameter at which the orbit from `(0, w_l_hat)` passes
/// through `(1, 1)`; the boundary between medium and large oscillations.
pub fn lambda_1(p: &ModelParams) -> Result<f64> {
    let large = |lam: f64| launches_large(&p.with_lambda(lam));
    let top = p.alpha * p.v1 - p.sigma * p.w1;
    let cap = top * (1.0 - 1e-6);
    let mut hi = 0.5 * top;
    while !large(hi)? {
        if hi >= cap {
            return Err(Error::NoRoot("lambda_1"));
        }
        hi = (1.5 * hi).min(cap);
    }
    let mut lo = 0.5 * hi;
    while large(lo)? {
        hi = lo;
        lo *= 0.5;
        if lo < 1e-12 * top {
            return Ok(0.0);
        }
    }
    let (lo, hi) = bisect_predicate(lo, hi, 1e-11, large)?;
    Ok(0.5 * (lo + hi))
}

/// One row of the bifurcation diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BifurcationRow {
    pub lambda: f64,
    pub v_eq: f64,
    pub v_max: Option<f64>,
    pub size_class: Option<SizeClass>,
}

/// The admissible equilibrium (unique under the validation conditions).
pub fn admissible_equilibrium(p: &ModelParams) -> Result<Point2> {
    for r in Region::ALL {
        let piece = p.piece(r)?;
        if piece.admissible {
            return Ok(piece.equilibrium);
        }
    }
    Err(Error::NoRoot("admissible equilibrium"))
}

/// Equilibrium position and attracting-orbit amplitude across a `lambda` grid.
pub fn bifurcation_diagram(p: &ModelParams, lambdas: &[f64]) -> Result<Vec<BifurcationRow>> {
    lambdas
        .par_iter()
        .map(|&lam| {
            let q = p.with_lambda(lam);
            let eq = admissible_equilibrium(&q)?;
            let region = q.region_of(eq.v);
            let stable = q.jacobian(region).trace() < 0.0;
            let v_max = if lam > 0.0 && !stable {
                orbit_v_max(&q).ok()
            } else {
                None
            };
            Ok(BifurcationRow {
                lambda: lam,
                v_eq: eq.v,
                v_max,
                size_class: v_max.map(|v| SizeClass::of(v, &q)),
            })
        })
        .collect()
}

/// One row of the two-parameter diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoParamRow {
    pub epsilon: f64,
    pub lambda_v1: Option<f64>,
    pub lambda_1: Option<f64>,
    pub lambda_v1_approx: Option<f64>,
}

/// `lambda_v1`, `lambda_1` and the closed-form estimate across an `epsilon` grid.
pub fn two_param_diagram(p: &ModelParams, epsilons: &[f64]) -> Result<Vec<TwoParamRow>> {
    let ec = epsilon_crit(p)?;
    Ok(epsilons
        .par_iter()
        .map(|&eps| {
            let q = p.with_epsilon(eps);
            let above = eps > ec;
            TwoParamRow {
                epsilon: eps,
                lambda_v1: if above { lambda_v1(&q).ok() } else { None },
                lambda_1: lambda_1(&q).ok(),
                lambda_v1_approx: if above { Some(lambda_v1_approx(&q)) } else { None },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w_l_hat_values() {
        let p = ModelParams::default();
        assert!((w_l_hat(&p) + 0.000585).abs() < 1e-6);
        assert!((w_l_hat(&p.with_lambda(0.19)) + 0.00397).abs() < 1e-5);
        assert_eq!(w_l_hat(&p.with_lambda(0.0)), 0.0);
    }

    #[test]
    fn approx_value() {
        let p = ModelParams::default();
        assert!((lambda_v1_approx(&p) - 0.02784).abs() < 1e-5);
    }

    #[test]
    fn orbit_classes() {
        let p = ModelParams::default();
        let o = periodic_orbit(&p).unwrap();
        assert_eq!(o.size_class, SizeClass::Medium, "{}", o.v_max);
        let o = periodic_orbit(&p.with_lambda(0.05)).unwrap();
        assert_eq!(o.size_class, SizeClass::Large);
        let o = periodic_orbit(&p.with_lambda(0.01)).unwrap();
        assert_eq!(o.size_class, SizeClass::Small);
        assert!(periodic_orbit(&p.with_lambda(-0.01)).is_err());
    }

    #[test]
    fn proxies_ordered() {
        let p = ModelParams::default();
        let lv1 = lambda_v1(&p).unwrap();
        let l1 = lambda_1(&p).unwrap();
        assert!(lv1 > 0.0278 * 0.9 && lv1 < 0.0278 * 1.1, "{lv1}");
        assert!(l1 > lv1 && l1 < 0.05, "{l1}");
        let v = orbit_v_max(&p.with_lambda(lv1)).unwrap();
        assert!((v - p.v1).abs() < 1e-6);
    }
}
