//! Euler-Maruyama simulation of the noisy model, used as an independent
//! check on the exit-density machinery.
//!
//! Every trajectory draws from its own ChaCha stream, selected by the run
//! seed and the trajectory index, so parallel runs are reproducible.
//!
//! ```
//! use pwl_fhn::mc::{simulate, SimConfig};
//! use pwl_fhn::ModelParams;
//!
//! let cfg = SimConfig { t_end: 50.0, burn_in: 0.0, ..SimConfig::default() };
//! let a = simulate(&ModelParams::default(), &cfg).unwrap();
//! let b = simulate(&ModelParams::default(), &cfg).unwrap();
//! assert_eq!(a.sections, b.sections);
//! ```

mod count;
mod scan;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{eval_f_cubic, validate, ModelParams, Nullcline, Point2};
use crate::numeric::brent;
use crate::orbit::w_l_hat;
use crate::section::{Component, SectionId};

pub use count::{count_oscillations, section_histogram, Histogram, OscillationRecord, OscillationSummary};
pub use scan::{first_exits, mc_mmo_scan, return_probability_mc, McCell, McEstimate};

/// Settings of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// Time discarded before anything is recorded.
    pub burn_in: f64,
    pub model: Nullcline,
    /// Keep every `stride`-th step of the path; 0 keeps none.
    pub stride: usize,
    /// Start point; `(0, w_l_hat)` when absent.
    pub start: Option<Point2>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 2e5,
            seed: 0,
            burn_in: 1000.0,
            model: Nullcline::Pwl,
            stride: 0,
            start: None,
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Precondition(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.burn_in >= 0.0 && self.t_end > self.burn_in && self.t_end.is_finite()) {
            return Err(Error::Precondition(format!(
                "need t_end > burn_in >= 0, got t_end = {}, burn_in = {}",
                self.t_end, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Switching lines and the inner-left nullcline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Crossed {
    VZero,
    VOne,
    /// `v = 1`
    VUnit,
    Nullcline,
}

/// A crossing of a switching line, or of the nullcline for `0 <= v <= v1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub v: f64,
    pub w: f64,
    pub crossed: Crossed,
    /// `v` (or `w - f(v)` for the nullcline) increases through the crossing.
    pub rising: bool,
}

/// A crossing of one of the four sections in visiting order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectionHit {
    pub t: f64,
    pub section: SectionId,
    pub component: Component,
    /// `w` on the ray, `v` on the nullcline segment.
    pub coord: f64,
    /// Largest `v` since the previous section hit.
    pub v_max: f64,
}

/// What a run recorded after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOutput {
    pub model: Nullcline,
    pub t_start: f64,
    pub t_end: f64,
    /// `(t, v, w)` every `stride` steps.
    pub path: Vec<[f64; 3]>,
    pub events: Vec<Event>,
    pub sections: Vec<SectionHit>,
}

/// Section geometry for either nullcline.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    p: ModelParams,
    model: Nullcline,
    /// Top of the inner-left nullcline piece, `f(v1)`.
    w_top: f64,
    /// `v` where the nullcline meets the `w`-nullcline, clamped to `[0, v1]`.
    vstar: f64,
}

impl Geometry {
    pub fn new(p: &ModelParams, model: Nullcline) -> Self {
        let f = |v: f64| p.vector_field_with(Point2::new(v, 0.0), model).v;
        let gap = |v: f64| p.alpha * v - p.sigma * f(v) - p.lambda;
        let vstar = if gap(0.0) >= 0.0 {
            0.0
        } else if gap(p.v1) <= 0.0 {
            p.v1
        } else {
            brent("w-nullcline crossing", 0.0, p.v1, 1e-15, gap).unwrap_or(p.v1)
        };
        Self {
            p: *p,
            model,
            w_top: f(p.v1),
            vstar,
        }
    }

    #[inline]
    pub fn f(&self, v: f64) -> f64 {
        match self.model {
            Nullcline::Pwl => self.p.f_pwl(v),
            Nullcline::Cubic => eval_f_cubic(v),
        }
    }

    /// The crossing of section `id` on the step from `a` to `b`, if any.
    #[inline]
    pub fn hit(&self, id: SectionId, a: (f64, f64), b: (f64, f64)) -> Option<(Component, f64)> {
        let (v_line, w_junction, rightwards) = match id {
            SectionId::S1 => (0.0, 0.0, true),
            SectionId::S2 => (self.p.v1, self.w_top, true),
            SectionId::S3 => (self.p.v1, self.w_top, false),
            SectionId::S4 => (0.0, 0.0, false),
        };
        let crossed = if rightwards {
            a.0 < v_line && b.0 >= v_line
        } else {
            a.0 >= v_line && b.0 < v_line
        };
        if crossed {
            let w = a.1 + (b.1 - a.1) * (v_line - a.0) / (b.0 - a.0);
            if (rightwards && w < w_junction) || (!rightwards && w > w_junction) {
                return Some((Component::Manifold, w));
            }
        }
        let (ga, gb) = (a.1 - self.f(a.0), b.1 - self.f(b.0));
        let (downward, lo, hi) = match id {
            SectionId::S1 | SectionId::S4 => (true, 0.0, self.vstar),
            SectionId::S2 | SectionId::S3 => (false, self.vstar, self.p.v1),
        };
        let through = if downward { ga > 0.0 && gb <= 0.0 } else { ga < 0.0 && gb >= 0.0 };
        if through {
            let v = a.0 + (b.0 - a.0) * ga / (ga - gb);
            let inside = match id {
                SectionId::S1 | SectionId::S4 => v >= lo && v < hi,
                SectionId::S2 | SectionId::S3 => v > lo && v <= hi,
            };
            if inside {
                return Some((Component::Nullcline, v));
            }
        }
        None
    }
}

/// Seeded generator for trajectory `index` of a run.
pub(crate) fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One Euler-Maruyama step; noise enters the `w` equation only.
#[inline]
pub(crate) fn step(g: &Geometry, x: (f64, f64), dt: f64, kick: f64) -> (f64, f64) {
    let p = &g.p;
    let (v, w) = x;
    (
        v + (g.f(v) - w) * dt,
        w + p.epsilon * (p.alpha * v - p.sigma * w - p.lambda) * dt + kick,
    )
}

fn line_events(g: &Geometry, t0: f64, dt: f64, a: (f64, f64), b: (f64, f64), out: &mut Vec<Event>) {
    for (level, crossed) in [(0.0, Crossed::VZero), (g.p.v1, Crossed::VOne), (1.0, Crossed::VUnit)] {
        if (a.0 < level) != (b.0 < level) {
            let s = (level - a.0) / (b.0 - a.0);
            out.push(Event {
                t: t0 + s * dt,
                v: level,
                w: a.1 + s * (b.1 - a.1),
                crossed,
                rising: b.0 > a.0,
            });
        }
    }
    let (ga, gb) = (a.1 - g.f(a.0), b.1 - g.f(b.0));
    if (ga < 0.0) != (gb < 0.0) {
        let s = ga / (ga - gb);
        let v = a.0 + s * (b.0 - a.0);
        if (0.0..=g.p.v1).contains(&v) {
            out.push(Event {
                t: t0 + s * dt,
                v,
                w: a.1 + s * (b.1 - a.1),
                crossed: Crossed::Nullcline,
                rising: gb > ga,
            });
        }
    }
}

/// Simulates one trajectory on stream `index` of `cfg.seed`.
pub(crate) fn simulate_stream(p: &ModelParams, cfg: &SimConfig, index: u64) -> Result<SimOutput> {
    cfg.check()?;
    let report = validate(p);
    if !report.is_valid() {
        return Err(Error::Precondition(report.to_string()));
    }
    let g = Geometry::new(p, cfg.model);
    let mut rng = stream(cfg.seed, index);
    let start = cfg.start.unwrap_or(Point2::new(0.0, w_l_hat(p)));
    let mut x = (start.v, start.w);
    let scale = p.noise_d * cfg.dt.sqrt();
    let steps = (cfg.t_end / cfg.dt).round() as u64;
    let first = (cfg.burn_in / cfg.dt).round() as u64;
    let mut out = SimOutput {
        model: cfg.model,
        t_start: first as f64 * cfg.dt,
        t_end: steps as f64 * cfg.dt,
        path: Vec::new(),
        events: Vec::new(),
        sections: Vec::new(),
    };
    let mut expect = SectionId::S1;
    let mut v_max = f64::NEG_INFINITY;
    for n in 0..steps {
        let kick = if scale > 0.0 {
            scale * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        let y = step(&g, x, cfg.dt, kick);
        if !(y.0.is_finite() && y.1.is_finite()) || y.0.abs() > 1e6 || y.1.abs() > 1e6 {
            return Err(Error::NonFinite("simulate"));
        }
        let t = (n + 1) as f64 * cfg.dt;
        let live = n + 1 > first;
        v_max = v_max.max(y.0);
        if live {
            line_events(&g, t - cfg.dt, cfg.dt, x, y, &mut out.events);
        }
        if let Some((component, coord)) = g.hit(expect, x, y) {
            let mut record = |section: SectionId, v_max: f64| {
                if live {
                    out.sections.push(SectionHit {
                        t,
                        section,
                        component,
                        coord,
                        v_max,
                    });
                }
            };
            record(expect, v_max);
            // the inner segments are shared by consecutive sections
            let shared = component == Component::Nullcline && matches!(expect, SectionId::S2 | SectionId::S4);
            if shared {
                record(expect.next(), v_max);
                expect = expect.next();
            }
            expect = expect.next();
            v_max = y.0;
        }
        if live && cfg.stride > 0 && (n + 1 - first) % cfg.stride as u64 == 0 {
            out.path.push([t, y.0, y.1]);
        }
        x = y;
    }
    Ok(out)
}

/// Simulates one long trajectory from `cfg.start`.
pub fn simulate(p: &ModelParams, cfg: &SimConfig) -> Result<SimOutput> {
    simulate_stream(p, cfg, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_matches_sections() {
        let p = ModelParams::default();
        let g = Geometry::new(&p, Nullcline::Pwl);
        let s = crate::section::Section::new(SectionId::S1, &p);
        assert!((g.vstar - s.null_hi).abs() < 1e-14);
        assert_eq!(g.w_top, p.w1);
        assert_eq!(g.hit(SectionId::S1, (-0.01, -0.002), (0.01, -0.001)), Some((Component::Manifold, -0.0015)));
        assert_eq!(g.hit(SectionId::S1, (-0.01, 0.002), (0.01, 0.001)), None);
        let hit = g.hit(SectionId::S2, (0.05, 0.02), (0.05, 0.03)).unwrap();
        assert_eq!(hit.0, Component::Nullcline);
    }

    #[test]
    fn zero_noise_follows_exact_flow() {
        let p = ModelParams::default().with_lambda(0.032).with_noise(0.0);
        let start = Point2::new(0.0, -0.01);
        let t_end = 20.0;
        let exact = crate::flow::integrate_orbit(start, crate::flow::Stop::MaxTime, t_end, 1.0, &p).unwrap();
        let end = exact.end().unwrap().1;
        let mut errs = Vec::new();
        for dt in [2e-3, 1e-3] {
            let cfg = SimConfig {
                dt,
                t_end,
                burn_in: 0.0,
                stride: 1,
                start: Some(start),
                ..SimConfig::default()
            };
            let out = simulate(&p, &cfg).unwrap();
            let last = out.path.last().unwrap();
            errs.push(((last[1] - end.v).powi(2) + (last[2] - end.w).powi(2)).sqrt());
        }
        // first order: halving dt roughly halves the error
        assert!(errs[1] < 1e-3, "{errs:?}");
        assert!((errs[0] / errs[1] - 2.0).abs() < 0.5, "{errs:?}");
    }

    #[test]
    fn events_lie_inside_their_step() {
        let cfg = SimConfig {
            t_end: 300.0,
            burn_in: 0.0,
            ..SimConfig::default()
        };
        let out = simulate(&ModelParams::default(), &cfg).unwrap();
        assert!(!out.events.is_empty());
        for w in out.events.windows(2) {
            assert!(w[0].t <= w[1].t + 1e-3);
        }
        assert!(out.sections.iter().all(|s| s.t <= out.t_end));
    }
}
