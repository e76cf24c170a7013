//! Ensembles: first exits, grid scans and the one-dimensional return test.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::{count_oscillations, simulate_stream, step, stream, Geometry, SectionHit, SimConfig};
use crate::error::{Error, Result};
use crate::exit::Fractions;
use crate::model::{validate, ModelParams, Point2};
use crate::section::SectionId;

/// First crossings of `target` by `n` independent trajectories from `x0`,
/// each given at most `cfg.t_end`. `None` marks a trajectory that ran out
/// of time.
pub fn first_exits(
    p: &ModelParams,
    x0: Point2,
    target: SectionId,
    n: usize,
    cfg: &SimConfig,
) -> Result<Vec<Option<SectionHit>>> {
    if !(cfg.dt > 0.0 && cfg.t_end > 0.0) {
        return Err(Error::Precondition("first_exits needs dt > 0 and t_end > 0".into()));
    }
    let report = validate(p);
    if !report.is_valid() {
        return Err(Error::Precondition(report.to_string()));
    }
    let g = Geometry::new(p, cfg.model);
    let scale = p.noise_d * cfg.dt.sqrt();
    let steps = (cfg.t_end / cfg.dt).ceil() as u64;
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, i);
            let mut x = (x0.v, x0.w);
            let mut v_max = x.0;
            for k in 0..steps {
                let kick = if scale > 0.0 {
                    scale * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                let y = step(&g, x, cfg.dt, kick);
                if !(y.0.is_finite() && y.1.is_finite()) {
                    return Err(Error::NonFinite("first_exits"));
                }
                v_max = v_max.max(y.0);
                if let Some((component, coord)) = g.hit(target, x, y) {
                    return Ok(Some(SectionHit {
                        t: (k + 1) as f64 * cfg.dt,
                        section: target,
                        component,
                        coord,
                        v_max,
                    }));
                }
                x = y;
            }
            Ok(None)
        })
        .collect()
}

/// Empirical fractions at one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McCell {
    pub lambda: f64,
    pub d: f64,
    pub cycles: usize,
    pub fractions: Option<Fractions>,
    pub std_errors: [f64; 3],
    pub warning: Option<String>,
}

impl McCell {
    pub fn is_mmo(&self, threshold: f64) -> bool {
        self.fractions
            .map_or(false, |f| f.small >= threshold && f.large >= threshold)
    }
}

/// Oscillation fractions on a `lambda` by `D` grid, `D` varying fastest.
/// Cell `k` simulates on stream `k` of `cfg.seed`.
pub fn mc_mmo_scan(p: &ModelParams, lambdas: &[f64], ds: &[f64], cfg: &SimConfig) -> Result<Vec<McCell>> {
    cfg.check()?;
    let cells: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| ds.iter().map(move |&d| (l, d))).collect();
    Ok(cells
        .par_iter()
        .enumerate()
        .map(|(k, &(lambda, d))| {
            let q = p.with_lambda(lambda).with_noise(d);
            let local = SimConfig { stride: 0, ..*cfg };
            match simulate_stream(&q, &local, k as u64) {
                Ok(out) => {
                    let s = count_oscillations(&out, &q);
                    McCell {
                        lambda,
                        d,
                        cycles: s.records.len(),
                        fractions: (!s.records.is_empty()).then_some(s.fractions),
                        std_errors: s.std_errors,
                        warning: s.warning,
                    }
                }
                Err(e) => McCell {
                    lambda,
                    d,
                    cycles: 0,
                    fractions: None,
                    std_errors: [f64::NAN; 3],
                    warning: Some(e.to_string()),
                },
            }
        })
        .collect())
}

/// A Monte-Carlo frequency with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Frequency with which `dy = c dt + D dW` from `y = 0` is back at zero at
/// some time after `delta`. Paths are sampled exactly on a time grid and a
/// Brownian-bridge test catches zeros between grid points; a path stops
/// once its chance of ever returning is below `1e-14`.
pub fn return_probability_mc(delta: f64, c: f64, d: f64, paths: usize, seed: u64) -> Result<McEstimate> {
    if !(delta > 0.0 && c > 0.0 && d > 0.0 && paths > 0) {
        return Err(Error::Precondition("return_probability_mc needs positive inputs".into()));
    }
    let h = 0.02 * (d * d / (c * c)).min(delta);
    let far = 32.2 * d * d / (2.0 * c);
    let chunk = 4096usize;
    let chunks = paths.div_ceil(chunk);
    let hits: usize = (0..chunks as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k);
            let count = chunk.min(paths - k as usize * chunk);
            let mut hits = 0;
            for _ in 0..count {
                let z: f64 = rng.sample(StandardNormal);
                let mut y = c * delta + d * delta.sqrt() * z;
                let mut back = y <= 0.0;
                while !back && y < far {
                    let z: f64 = rng.sample(StandardNormal);
                    let next = y + c * h + d * h.sqrt() * z;
                    let u: f64 = rng.gen();
                    back = next <= 0.0 || u < (-2.0 * y * next / (d * d * h)).exp();
                    y = next;
                }
                hits += back as usize;
            }
            hits
        })
        .sum();
    let value = hits as f64 / paths as f64;
    Ok(McEstimate {
        value,
        std_error: (value * (1.0 - value) / paths as f64).sqrt(),
        samples: paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn return_frequency_matches_formula() {
        let (delta, c, d) = (0.6, 0.0035, 0.0012);
        let mc = return_probability_mc(delta, c, d, 200_000, 7).unwrap();
        let exact = crate::exit::return_probability(delta, c, d).unwrap();
        assert!((mc.value - exact).abs() < 4.0 * mc.std_error, "{mc:?} {exact}");
    }

    #[test]
    fn first_exit_streams_are_reproducible() {
        let p = ModelParams::default().with_noise(4e-4);
        let x0 = Point2::new(0.0, crate::orbit::w_l_hat(&p));
        let cfg = SimConfig {
            t_end: 200.0,
            ..SimConfig::default()
        };
        let a = first_exits(&p, x0, SectionId::S2, 16, &cfg).unwrap();
        let b = first_exits(&p, x0, SectionId::S2, 16, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|h| h.is_some()));
        assert_ne!(a[0], a[1]);
    }
}
