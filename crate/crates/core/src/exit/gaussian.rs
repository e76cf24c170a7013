//! Gaussian transition densities and their probability current.

use nalgebra::{Matrix2, Vector2};

use super::covariance::{covariance_with, CovMatrix};
use crate::error::{Error, Result};
use crate::flow::LinearFlow;
use crate::model::{ModelParams, Point2, Region};

/// Bivariate normal law of the state of one region's process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    pub mean: Point2,
    /// Noise-free factor; the covariance is `d^2 * theta`.
    pub theta: CovMatrix,
    pub d: f64,
}

impl Gaussian2 {
    /// A point mass: zero noise or zero elapsed time.
    pub fn is_point_mass(&self) -> bool {
        self.d == 0.0 || self.theta.det() == 0.0 && self.theta.theta22 == 0.0
    }

    pub fn cov(&self) -> Matrix2<f64> {
        self.theta.scaled(self.d)
    }

    /// Density at `x`; zero for a point mass.
    pub fn pdf(&self, x: Point2) -> f64 {
        let c = self.cov();
        let det = c.determinant();
        if !(det > 0.0) {
            return 0.0;
        }
        let y = x.to_vector() - self.mean.to_vector();
        let q = (c[(1, 1)] * y[0] * y[0] - 2.0 * c[(0, 1)] * y[0] * y[1] + c[(0, 0)] * y[1] * y[1]) / det;
        (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
    }

    /// `dp/dw` at `x`.
    pub fn pdf_dw(&self, x: Point2) -> f64 {
        let c = self.cov();
        let det = c.determinant();
        if !(det > 0.0) {
            return 0.0;
        }
        let y = x.to_vector() - self.mean.to_vector();
        let pw = (-c[(0, 1)] * y[0] + c[(0, 0)] * y[1]) / det;
        -pw * self.pdf(x)
    }
}

/// Law at time `t` of the process of `region` started from `p0`.
pub fn transition_density(region: Region, t: f64, p0: Point2, p: &ModelParams) -> Result<Gaussian2> {
    let flow = LinearFlow::new(region, p)?;
    transition_with(&flow, t, p0, p.noise_d)
}

pub(crate) fn transition_with(flow: &LinearFlow, t: f64, p0: Point2, d: f64) -> Result<Gaussian2> {
    let mean = Point2::from_vector(&flow.state(t, &p0.to_vector()));
    let theta = covariance_with(flow, t)?;
    let g = Gaussian2 { mean, theta, d };
    if t > 0.0 && d > 0.0 {
        let det = g.cov().determinant();
        if !(det >= 1e-300) {
            return Err(Error::SingularCovariance { t, det });
        }
    }
    Ok(g)
}

/// Probability current of `density` at `x`, using the drift of the linear
/// piece the point lies in. The diffusive part `-(D^2/2) dp/dw` is added to
/// the second component only when `include_diffusion` is set.
pub fn probability_current(density: &Gaussian2, x: Point2, p: &ModelParams, include_diffusion: bool) -> Vector2<f64> {
    let pdf = density.pdf(x);
    let drift = p.vector_field(x);
    let mut j = Vector2::new(drift.v * pdf, drift.w * pdf);
    if include_diffusion {
        j[1] -= 0.5 * density.d * density.d * density.pdf_dw(x);
    }
    j
}

/// Mean `v` and variance of the law at time `t` restricted to the
/// `v`-nullcline `w = eta1 v`, for a start `p0` on that nullcline.
pub fn nullcline_conditional(t: f64, p0: Point2, p: &ModelParams) -> Result<(f64, f64)> {
    let flow = LinearFlow::new(Region::R1, p)?;
    let g = transition_with(&flow, t, p0, p.noise_d)?;
    let det = g.theta.det();
    if !(det > 0.0) {
        return Err(Error::SingularCovariance { t, det });
    }
    let eta = p.eta1();
    let th = &g.theta;
    let q = th.theta22 - 2.0 * eta * th.theta12 + eta * eta * th.theta11;
    let m = g.mean;
    // u^T adj(Theta) m with u = (1, eta)
    let num = th.theta22 * m.v - th.theta12 * (m.w + eta * m.v) + th.theta11 * eta * m.w;
    Ok((num / q, p.noise_d * p.noise_d * det / q))
}

/// The law of a Gaussian along the line `a + s u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LineLaw {
    /// Signed Mahalanobis distance of the mean from the line, positive on the
    /// side `normal` points to.
    pub delta: f64,
    /// Centre and spread in the line parameter.
    pub mu: f64,
    pub sigma: f64,
    /// `integral of p(a + s u) ds` over the whole line.
    pub mass: f64,
}

/// Restriction of `N(m, d^2 theta)` to a line; `normal` must be `±(-u2, u1)`.
pub(crate) fn restrict(
    m: &Vector2<f64>,
    theta: &Matrix2<f64>,
    d: f64,
    a: &Vector2<f64>,
    u: &Vector2<f64>,
    normal: &Vector2<f64>,
) -> Option<LineLaw> {
    let adj = Matrix2::new(theta[(1, 1)], -theta[(0, 1)], -theta[(1, 0)], theta[(0, 0)]);
    let q = u.dot(&(adj * u));
    let det = theta.determinant();
    if !(q > 0.0) || !(det > 0.0) || d <= 0.0 {
        return None;
    }
    let y = m - a;
    let delta = normal.dot(&y) / (d * q.sqrt());
    let mu = u.dot(&(adj * y)) / q;
    let sigma = d * (det / q).sqrt();
    let mass = (-0.5 * delta * delta).exp() / ((2.0 * std::f64::consts::PI).sqrt() * d * q.sqrt());
    Some(LineLaw { delta, mu, sigma, mass })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> ModelParams {
        ModelParams::default().with_noise(0.01)
    }

    #[test]
    fn mean_is_flow() {
        let p = defaults();
        let x0 = Point2::new(0.0, -0.001);
        for t in [0.5, 5.0] {
            let g = transition_density(Region::R1, t, x0, &p).unwrap();
            let det = crate::flow::flow_linear(Region::R1, t, x0, &p).unwrap();
            assert_eq!(g.mean, det);
        }
    }

    #[test]
    fn normalised() {
        let p = defaults();
        let g = transition_density(Region::R1, 5.0, Point2::new(0.0, -0.001), &p).unwrap();
        let c = g.cov();
        let (sv, sw) = (c[(0, 0)].sqrt(), c[(1, 1)].sqrt());
        let n = 400;
        let (hv, hw) = (16.0 * sv / n as f64, 16.0 * sw / n as f64);
        let mut sum = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let x = Point2::new(g.mean.v - 8.0 * sv + i as f64 * hv, g.mean.w - 8.0 * sw + j as f64 * hw);
                let wi = if i == 0 || i == n { 0.5 } else { 1.0 };
                let wj = if j == 0 || j == n { 0.5 } else { 1.0 };
                sum += wi * wj * g.pdf(x);
            }
        }
        sum *= hv * hw;
        assert!((sum - 1.0).abs() < 1e-6, "{sum}");
    }

    #[test]
    fn current_on_nullcline_is_vertical() {
        let p = defaults();
        let g = transition_density(Region::R1, 3.0, Point2::new(0.0, -0.01), &p).unwrap();
        let x = Point2::new(0.05, p.eta1() * 0.05);
        let j = probability_current(&g, x, &p, false);
        assert!(j[0].abs() < 1e-15 * j[1].abs().max(1.0));
        let far = Point2::new(10.0, 10.0);
        assert_eq!(probability_current(&g, far, &p, false), Vector2::zeros());
    }

    #[test]
    fn fokker_planck_residual() {
        let p = defaults();
        let x0 = Point2::new(0.03, 0.0);
        let t = 1.0;
        let flow = LinearFlow::new(Region::R1, &p).unwrap();
        let at = |t: f64| transition_with(&flow, t, x0, p.noise_d).unwrap();
        let g = at(t);
        let x = Point2::new(g.mean.v + 0.3 * g.cov()[(0, 0)].sqrt(), g.mean.w - 0.2 * g.cov()[(1, 1)].sqrt());
        assert_eq!(p.region_of(x.v), Region::R1);
        let ht = 1e-4;
        let dpdt = (at(t + ht).pdf(x) - at(t - ht).pdf(x)) / (2.0 * ht);
        let hv = 1e-4 * g.cov()[(0, 0)].sqrt();
        let hw = 1e-4 * g.cov()[(1, 1)].sqrt();
        let jv = |x: Point2| probability_current(&g, x, &p, true)[0];
        let jw = |x: Point2| probability_current(&g, x, &p, true)[1];
        let div = (jv(Point2::new(x.v + hv, x.w)) - jv(Point2::new(x.v - hv, x.w))) / (2.0 * hv)
            + (jw(Point2::new(x.v, x.w + hw)) - jw(Point2::new(x.v, x.w - hw))) / (2.0 * hw);
        let res = (div + dpdt).abs() / dpdt.abs().max(g.pdf(x));
        assert!(res < 1e-6, "{res:e}");
    }

    #[test]
    fn restriction_matches_pdf() {
        let p = defaults();
        let g = transition_density(Region::R1, 2.0, Point2::new(0.0, -0.01), &p).unwrap();
        let a = Vector2::new(0.0, 0.0);
        let u = Vector2::new(1.0, p.eta1());
        let n = Vector2::new(-u[1], u[0]);
        let law = restrict(&g.mean.to_vector(), &g.theta.to_matrix(), g.d, &a, &u, &n).unwrap();
        let s = law.mu + 0.7 * law.sigma;
        let direct = g.pdf(Point2::from_vector(&(a + u * s)));
        let gauss = law.mass / (law.sigma * (2.0 * std::f64::consts::PI).sqrt())
            * (-0.5 * ((s - law.mu) / law.sigma).powi(2)).exp();
        assert!((direct - gauss).abs() < 1e-10 * direct);
        let (vt, var) = nullcline_conditional(2.0, Point2::new(0.0, 0.0), &p).unwrap();
        assert!(var > 0.0 && vt.is_finite());
    }

    #[test]
    fn conditional_mean_is_noise_free() {
        let x0 = Point2::new(0.01, 0.005);
        let a = nullcline_conditional(1.5, x0, &ModelParams::default().with_noise(1e-3)).unwrap();
        let b = nullcline_conditional(1.5, x0, &ModelParams::default().with_noise(1e-6)).unwrap();
        assert!((a.0 - b.0).abs() < 1e-14);
        assert!((a.1 / b.1 - 1e6).abs() < 1e-3);
    }
}
