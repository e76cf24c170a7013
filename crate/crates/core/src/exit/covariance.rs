//! Covariance of the per-region Ornstein-Uhlenbeck processes.

use nalgebra::Matrix2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::LinearFlow;
use crate::model::{ModelParams, Region};

/// Noise-free covariance factor `Theta(t)`; the covariance of the process is
/// `D^2 Theta(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CovMatrix {
    pub theta11: f64,
    pub theta12: f64,
    pub theta22: f64,
}

impl CovMatrix {
    pub fn from_matrix(m: &Matrix2<f64>) -> Self {
        Self {
            theta11: m[(0, 0)],
            theta12: 0.5 * (m[(0, 1)] + m[(1, 0)]),
            theta22: m[(1, 1)],
        }
    }

    pub fn to_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.theta11, self.theta12, self.theta12, self.theta22)
    }

    pub fn det(&self) -> f64 {
        self.theta11 * self.theta22 - self.theta12 * self.theta12
    }

    /// `D^2 Theta`.
    pub fn scaled(&self, d: f64) -> Matrix2<f64> {
        self.to_matrix() * (d * d)
    }
}

/// Integral of `e^{As} e2 e2^T e^{A^T s}` over `[a, b]`.
fn panel(flow: &LinearFlow, a: f64, b: f64) -> Result<Matrix2<f64>> {
    let ea = flow.propagator(a);
    let eb = flow.propagator(b);
    let mag = ea.column(1).norm_squared().max(eb.column(1).norm_squared()).max(1e-300);
    let tol = 1e-15 * mag * (b - a);
    let entry = |i: usize, j: usize| {
        let out = quadrature::integrate(
            |s| {
                let e = flow.propagator(s);
                e[(i, 1)] * e[(j, 1)]
            },
            a,
            b,
            tol,
        );
        if !out.integral.is_finite() || out.error_estimate > 1e-11 * mag * (b - a) {
            return Err(Error::no_conv(
                "covariance",
                format!("quadrature error {:e} on [{a}, {b}]", out.error_estimate),
            ));
        }
        Ok(out.integral)
    };
    let t11 = entry(0, 0)?;
    let t12 = entry(0, 1)?;
    let t22 = entry(1, 1)?;
    Ok(Matrix2::new(t11, t12, t12, t22))
}

pub(crate) fn covariance_with(flow: &LinearFlow, t: f64) -> Result<CovMatrix> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Precondition(format!("covariance needs finite t >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(CovMatrix::default());
    }
    let h = 0.5 * flow.base_step();
    let n = (t / h).ceil().max(1.0) as usize;
    let mut sum = Matrix2::zeros();
    for k in 0..n {
        let a = t * k as f64 / n as f64;
        let b = t * (k + 1) as f64 / n as f64;
        sum += panel(flow, a, b)?;
    }
    Ok(CovMatrix::from_matrix(&sum))
}

/// `Theta(t)` for the linear piece of `region`, by quadrature over panels.
pub fn covariance(region: Region, t: f64, p: &ModelParams) -> Result<CovMatrix> {
    let flow = LinearFlow::new(region, p)?;
    covariance_with(&flow, t)
}

/// Precomputed one-step propagators and covariances on a doubling ladder of
/// step sizes.
#[derive(Debug, Clone)]
pub(crate) struct StepLadder {
    pub flow: LinearFlow,
    pub steps: Vec<Rung>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Rung {
    pub h: f64,
    pub e: Matrix2<f64>,
    pub theta: Matrix2<f64>,
}

impl StepLadder {
    pub const LEVELS: usize = 34;

    pub fn new(flow: LinearFlow) -> Result<Self> {
        let top = 0.25 * flow.base_step();
        let mut steps = Vec::with_capacity(Self::LEVELS);
        for k in 0..Self::LEVELS {
            let h = top * 0.5f64.powi((Self::LEVELS - 1 - k) as i32);
            let theta = covariance_with(&flow, h)?.to_matrix();
            steps.push(Rung {
                h,
                e: flow.propagator(h),
                theta,
            });
        }
        Ok(Self { flow, steps })
    }

    pub fn top(&self) -> usize {
        self.steps.len() - 1
    }
}
