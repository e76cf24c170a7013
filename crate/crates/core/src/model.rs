//! Model parameters, the four-piece nullcline and per-region linear algebra.
//!
//! The deterministic system is
//!
//! ```text
//! v' = f(v) - w
//! w' = eps * (alpha * v - sigma * w - lambda)
//! ```
//!
//! with noise of amplitude `D` entering the `w` equation only. `f` is either
//! the piecewise-linear nullcline built from `(v1, w1)` and the two outer
//! slopes, or the cubic `3v^2 - 2v^3`.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point `(v, w)` of the phase plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub v: f64,
    pub w: f64,
}

impl Point2 {
    pub const fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.v, self.w)
    }

    pub fn from_vector(x: &Vector2<f64>) -> Self {
        Self::new(x[0], x[1])
    }

    pub fn is_finite(self) -> bool {
        self.v.is_finite() && self.w.is_finite()
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.v - other.v).hypot(self.w - other.w)
    }
}

/// One of the four regions cut out by the switching lines `v = 0, v1, 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    /// `v < 0`
    L,
    /// `0 <= v < v1`
    R1,
    /// `v1 <= v < 1`
    R2,
    /// `v >= 1`
    R,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::L, Region::R1, Region::R2, Region::R];

    /// Closed interval `[lo, hi]` of `v` values in the closure of the region.
    pub fn closure(self, p: &ModelParams) -> (f64, f64) {
        match self {
            Region::L => (f64::NEG_INFINITY, 0.0),
            Region::R1 => (0.0, p.v1),
            Region::R2 => (p.v1, 1.0),
            Region::R => (1.0, f64::INFINITY),
        }
    }

    pub fn contains_closure(self, v: f64, p: &ModelParams) -> bool {
        let (lo, hi) = self.closure(p);
        lo <= v && v <= hi
    }
}

/// Which nullcline drives the `v` equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nullcline {
    #[default]
    Pwl,
    Cubic,
}

/// Scalar parameters of the stochastic model.
///
/// `eta1` and `eta2` are not stored: they are always recomputed from the
/// breakpoint `(v1, w1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub epsilon: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub noise_d: f64,
    pub eta_l: f64,
    pub eta_r: f64,
    pub v1: f64,
    pub w1: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            epsilon: 0.04,
            alpha: 4.0,
            sigma: 1.0,
            lambda: 0.028,
            noise_d: 0.0008,
            eta_l: -2.0,
            eta_r: -1.0,
            v1: 0.1,
            w1: 0.05,
        }
    }
}

/// Linear restriction of the nullcline to one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPiece {
    pub region: Region,
    pub slope: f64,
    pub intercept: f64,
    pub equilibrium: Point2,
    pub admissible: bool,
}

/// Eigenvalues of a region's Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenpair {
    pub first: Complex64,
    pub second: Complex64,
}

impl Eigenpair {
    pub fn is_real(&self) -> bool {
        self.first.im == 0.0 && self.second.im == 0.0
    }
}

/// One failed admissibility check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub constraint: &'static str,
    pub detail: String,
}

/// Result of [`validate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn fail(&mut self, constraint: &'static str, detail: String) {
        self.violations.push(Violation { constraint, detail });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_valid() {
            write!(f, "valid")?;
        } else {
            for v in &self.violations {
                writeln!(f, "violated {}: {}", v.constraint, v.detail)?;
            }
        }
        for n in &self.notes {
            write!(f, "\nnote: {n}")?;
        }
        Ok(())
    }
}

impl ModelParams {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_noise(mut self, d: f64) -> Self {
        self.noise_d = d;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// Slope of the inner left piece, `w1 / v1`.
    pub fn eta1(&self) -> f64 {
        self.w1 / self.v1
    }

    /// Slope of the inner right piece, `(1 - w1) / (1 - v1)`.
    pub fn eta2(&self) -> f64 {
        (1.0 - self.w1) / (1.0 - self.v1)
    }

    /// Replaces `w1` so that the inner left slope equals `eta1`.
    pub fn with_eta1(mut self, eta1: f64) -> Self {
        self.w1 = eta1 * self.v1;
        self
    }

    pub fn region_of(&self, v: f64) -> Region {
        region_of(v, self)
    }

    pub fn slope(&self, region: Region) -> f64 {
        match region {
            Region::L => self.eta_l,
            Region::R1 => self.eta1(),
            Region::R2 => self.eta2(),
            Region::R => self.eta_r,
        }
    }

    /// Offset `b` such that `f(v) = slope * v + b` inside `region`.
    pub fn intercept(&self, region: Region) -> f64 {
        match region {
            Region::L | Region::R1 => 0.0,
            Region::R2 => self.w1 - self.eta2() * self.v1,
            Region::R => 1.0 - self.eta_r,
        }
    }

    pub fn f_pwl(&self, v: f64) -> f64 {
        eval_f_pwl(v, self)
    }

    pub fn jacobian(&self, region: Region) -> Matrix2<f64> {
        jacobian(region, self)
    }

    pub fn omega(&self, region: Region) -> f64 {
        omega(region, self)
    }

    pub fn piece(&self, region: Region) -> Result<LinearPiece> {
        equilibrium(region, self)
    }

    /// Drift of the deterministic system with the piecewise-linear nullcline.
    pub fn vector_field(&self, x: Point2) -> Point2 {
        self.vector_field_with(x, Nullcline::Pwl)
    }

    pub fn vector_field_with(&self, x: Point2, nullcline: Nullcline) -> Point2 {
        let f = match nullcline {
            Nullcline::Pwl => self.f_pwl(x.v),
            Nullcline::Cubic => eval_f_cubic(x.v),
        };
        Point2::new(
            f - x.w,
            self.epsilon * (self.alpha * x.v - self.sigma * x.w - self.lambda),
        )
    }
}

/// The piecewise-linear nullcline through `(0,0)`, `(v1,w1)` and `(1,1)`.
pub fn eval_f_pwl(v: f64, p: &ModelParams) -> f64 {
    let r = region_of(v, p);
    p.slope(r) * v + p.intercept(r)
}

/// The smooth cubic nullcline `3v^2 - 2v^3`.
pub fn eval_f_cubic(v: f64) -> f64 {
    v * v * (3.0 - 2.0 * v)
}

/// Region containing `v`, using half-open intervals closed on the left.
pub fn region_of(v: f64, p: &ModelParams) -> Region {
    if v < 0.0 {
        Region::L
    } else if v < p.v1 {
        Region::R1
    } else if v < 1.0 {
        Region::R2
    } else {
        Region::R
    }
}

/// Jacobian `[[eta_j, -1], [eps*alpha, -eps*sigma]]` of a region.
pub fn jacobian(region: Region, p: &ModelParams) -> Matrix2<f64> {
    Matrix2::new(
        p.slope(region),
        -1.0,
        p.epsilon * p.alpha,
        -p.epsilon * p.sigma,
    )
}

/// Discriminant `(eta + eps*sigma)^2 - 4*eps*alpha` of the characteristic polynomial.
pub fn discriminant(region: Region, p: &ModelParams) -> f64 {
    let s = p.slope(region) + p.epsilon * p.sigma;
    s * s - 4.0 * p.epsilon * p.alpha
}

/// Eigenvalues of the Jacobian. Complex pairs come as `(re + i w, re - i w)`;
/// real pairs as `(slow, fast)`, ordered by modulus.
pub fn eigenvalues(region: Region, p: &ModelParams) -> Eigenpair {
    let half_trace = 0.5 * (p.slope(region) - p.epsilon * p.sigma);
    let disc = discriminant(region, p);
    if disc < 0.0 {
        let w = 0.5 * (-disc).sqrt();
        Eigenpair {
            first: Complex64::new(half_trace, w),
            second: Complex64::new(half_trace, -w),
        }
    } else {
        let h = 0.5 * disc.sqrt();
        // product of roots keeps the small one accurate
        let det = p.epsilon * (p.alpha - p.sigma * p.slope(region));
        let big = if half_trace >= 0.0 { half_trace + h } else { half_trace - h };
        let small = if big != 0.0 { det / big } else { half_trace - h };
        let (slow, fast) = if small.abs() <= big.abs() { (small, big) } else { (big, small) };
        Eigenpair {
            first: Complex64::new(slow, 0.0),
            second: Complex64::new(fast, 0.0),
        }
    }
}

/// Half the square root of the modulus of the discriminant.
pub fn omega(region: Region, p: &ModelParams) -> f64 {
    0.5 * discriminant(region, p).abs().sqrt()
}

/// Equilibrium of the region's linear system, flagged admissible when it lies
/// in the closure of the region.
pub fn equilibrium(region: Region, p: &ModelParams) -> Result<LinearPiece> {
    let slope = p.slope(region);
    let intercept = p.intercept(region);
    let denom = p.alpha - p.sigma * slope;
    if denom == 0.0 {
        return Err(Error::ParallelNullclines(region));
    }
    let v = (p.lambda + p.sigma * intercept) / denom;
    let w = slope * v + intercept;
    Ok(LinearPiece {
        region,
        slope,
        intercept,
        equilibrium: Point2::new(v, w),
        admissible: region.contains_closure(v, p),
    })
}

/// Value of `eps` at which the inner left equilibrium changes between node and focus.
pub fn epsilon_crit(p: &ModelParams) -> Result<f64> {
    let eta1 = p.eta1();
    let gap = p.alpha - p.sigma * eta1;
    if !(gap > 0.0) {
        return Err(Error::Precondition(format!(
            "epsilon_crit needs alpha > sigma * eta1 (alpha = {}, sigma * eta1 = {})",
            p.alpha,
            p.sigma * eta1
        )));
    }
    // (2a - s*e - 2 sqrt(a (a - s*e))) / s^2 rewritten without cancellation
    let r = eta1 / (p.alpha.sqrt() + gap.sqrt());
    Ok(r * r)
}

/// Checks parameter ranges and the admissibility conditions on the slopes.
pub fn validate(p: &ModelParams) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let fields = [
        ("epsilon", p.epsilon),
        ("alpha", p.alpha),
        ("sigma", p.sigma),
        ("lambda", p.lambda),
        ("noise_d", p.noise_d),
        ("eta_l", p.eta_l),
        ("eta_r", p.eta_r),
        ("v1", p.v1),
        ("w1", p.w1),
    ];
    for (name, x) in fields {
        if !x.is_finite() {
            rep.fail("finite", format!("{name} = {x}"));
        }
    }
    if !rep.is_valid() {
        return rep;
    }
    if !(p.epsilon > 0.0) {
        rep.fail("epsilon > 0", format!("epsilon = {}", p.epsilon));
    }
    if !(p.alpha > 0.0) {
        rep.fail("alpha > 0", format!("alpha = {}", p.alpha));
    }
    if p.sigma < 0.0 {
        rep.fail("sigma >= 0", format!("sigma = {}", p.sigma));
    }
    if p.noise_d < 0.0 {
        rep.fail("noise_d >= 0", format!("noise_d = {}", p.noise_d));
    }
    if !(p.eta_l < 0.0) {
        rep.fail("eta_l < 0", format!("eta_l = {}", p.eta_l));
    }
    if !(p.eta_r < 0.0) {
        rep.fail("eta_r < 0", format!("eta_r = {}", p.eta_r));
    }
    if !(p.v1 > 0.0 && p.v1 < 1.0) {
        rep.fail("0 < v1 < 1", format!("v1 = {}", p.v1));
    }
    if !(p.w1 > 0.0 && p.w1 < 1.0) {
        rep.fail("0 < w1 < 1", format!("w1 = {}", p.w1));
    }
    if !rep.is_valid() {
        return rep;
    }
    let node_bound = -p.epsilon * p.sigma - 2.0 * (p.epsilon * p.alpha).sqrt();
    if !(p.eta_l < node_bound) {
        rep.fail(
            "left equilibrium is an attracting node",
            format!("eta_l = {} must be below {:.6}", p.eta_l, node_bound),
        );
    }
    let eta1 = p.eta1();
    if !(eta1 > p.epsilon * p.sigma) {
        rep.fail(
            "eta1 > eps * sigma",
            format!("eta1 = {} vs eps * sigma = {}", eta1, p.epsilon * p.sigma),
        );
    }
    for region in [Region::R1, Region::R2] {
        let slope = p.slope(region);
        if p.sigma * slope >= p.alpha {
            rep.fail(
                "unique equilibrium (sigma * eta_j < alpha)",
                format!("{region:?}: sigma * slope = {} >= alpha = {}", p.sigma * slope, p.alpha),
            );
        }
    }
    if p.sigma == 0.0 {
        rep.notes
            .push("sigma = 0 (van der Pol limit) is accepted but outside the usual scaling".into());
    }
    if p.noise_d == 0.0 {
        rep.notes.push("noise_d = 0: deterministic dynamics".into());
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nullcline_values() {
        let p = ModelParams::default();
        assert_eq!(eval_f_pwl(0.0, &p), 0.0);
        assert_abs_diff_eq!(eval_f_pwl(1.0, &p), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eval_f_pwl(0.1, &p), 0.05, epsilon = 1e-15);
        assert_eq!(eval_f_cubic(0.0), 0.0);
        assert_eq!(eval_f_cubic(1.0), 1.0);
        assert_eq!(eval_f_cubic(0.5), 3.0 * 0.25 - 2.0 * 0.125);
    }

    #[test]
    fn regions() {
        let p = ModelParams::default();
        assert_eq!(region_of(-0.3, &p), Region::L);
        assert_eq!(region_of(0.05, &p), Region::R1);
        assert_eq!(region_of(1.2, &p), Region::R);
        assert_eq!(region_of(0.0, &p), Region::R1);
        assert_eq!(region_of(0.1, &p), Region::R2);
        assert_eq!(region_of(1.0, &p), Region::R);
    }

    #[test]
    fn jacobians() {
        let p = ModelParams::default();
        let a = jacobian(Region::R1, &p);
        assert_abs_diff_eq!(a, Matrix2::new(0.5, -1.0, 0.16, -0.04), epsilon = 1e-15);
        let a = jacobian(Region::L, &p);
        assert_abs_diff_eq!(a, Matrix2::new(-2.0, -1.0, 0.16, -0.04), epsilon = 1e-15);
        let a = jacobian(Region::R1, &p.with_epsilon(0.0));
        assert_eq!(a, Matrix2::new(0.5, -1.0, 0.0, 0.0));
    }

    #[test]
    fn eigen_r1_and_l() {
        let p = ModelParams::default();
        let e = eigenvalues(Region::R1, &p);
        assert_abs_diff_eq!(e.first.re, 0.23, epsilon = 1e-15);
        let om = 0.5 * (0.64f64 - 0.2916).sqrt();
        assert_abs_diff_eq!(e.first.im, om, epsilon = 1e-15);
        assert_abs_diff_eq!(omega(Region::R1, &p), om, epsilon = 1e-15);
        assert_abs_diff_eq!(om, 0.2951, epsilon = 1e-4);

        let e = eigenvalues(Region::L, &p);
        let r = 3.2016f64.sqrt();
        assert!(e.is_real());
        assert_abs_diff_eq!(e.first.re, 0.5 * (-2.04 + r), epsilon = 1e-14);
        assert_abs_diff_eq!(e.second.re, 0.5 * (-2.04 - r), epsilon = 1e-14);
        assert_abs_diff_eq!(omega(Region::L, &p), 0.5 * r, epsilon = 1e-15);

        let e = eigenvalues(Region::R1, &p.with_epsilon(0.0));
        assert_eq!(e.first.re, 0.0);
        assert_eq!(e.second.re, 0.5);
    }

    #[test]
    fn equilibria() {
        let p = ModelParams::default();
        let e = equilibrium(Region::R1, &p.with_lambda(0.0)).unwrap();
        assert_eq!(e.equilibrium, Point2::new(0.0, 0.0));
        assert!(e.admissible);
        let e = equilibrium(Region::R1, &p).unwrap();
        assert_abs_diff_eq!(e.equilibrium.v, 0.008, epsilon = 1e-16);
        assert_abs_diff_eq!(e.equilibrium.w, 0.004, epsilon = 1e-16);
        assert!(e.admissible);
        let e = equilibrium(Region::R1, &p.with_lambda(0.5)).unwrap();
        assert_abs_diff_eq!(e.equilibrium.v, 0.5 / 3.5, epsilon = 1e-15);
        assert!(!e.admissible);
        let q = ModelParams { alpha: 0.5, ..p };
        assert_eq!(equilibrium(Region::R1, &q), Err(Error::ParallelNullclines(Region::R1)));
    }

    #[test]
    fn eps_crit() {
        let p = ModelParams::default();
        let direct = 2.0 * 4.0 - 0.5 - 2.0 * (4.0f64 * 3.5).sqrt();
        assert_abs_diff_eq!(epsilon_crit(&p).unwrap(), direct, epsilon = 1e-14);
        let q = ModelParams { alpha: 1.0, sigma: 1.0, v1: 0.1, w1: 0.075, ..p };
        assert_abs_diff_eq!(epsilon_crit(&q).unwrap(), 0.25, epsilon = 1e-14);
        let q = ModelParams { w1: 1e-12, ..p };
        assert!(epsilon_crit(&q).unwrap() < 1e-20);
        let q = ModelParams { alpha: 0.4, ..p };
        assert!(epsilon_crit(&q).is_err());
    }

    #[test]
    fn validation() {
        let p = ModelParams::default();
        assert!(validate(&p).is_valid());
        let q = ModelParams { eta_l: -0.5, ..p };
        let rep = validate(&q);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].constraint, "left equilibrium is an attracting node");
        let q = p.with_eta1(0.01);
        assert!(!validate(&q).is_valid());
        let q = ModelParams { sigma: 0.0, ..p };
        let rep = validate(&q);
        assert!(rep.is_valid());
        assert!(!rep.notes.is_empty());
    }
}
