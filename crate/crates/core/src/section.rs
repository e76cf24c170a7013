//! The four cross-sections cut across the oscillation and the deterministic
//! map that carries a point from one to the next.
//!
//! Each section is the union of a ray on a switching line (`v = 0` or
//! `v = v1`) and a segment of the inner-left nullcline `w = eta1 v`. The two
//! pieces meet at a junction point, `(0, 0)` or `(v1, w1)`.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Flows, Line, Manifold, Target};
use crate::model::{ModelParams, Point2, Region};

/// Section index, in the order an orbit visits them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SectionId {
    S1,
    S2,
    S3,
    S4,
}

impl SectionId {
    pub const ALL: [SectionId; 4] = [SectionId::S1, SectionId::S2, SectionId::S3, SectionId::S4];

    pub fn next(self) -> SectionId {
        match self {
            SectionId::S1 => SectionId::S2,
            SectionId::S2 => SectionId::S3,
            SectionId::S3 => SectionId::S4,
            SectionId::S4 => SectionId::S1,
        }
    }

    pub fn number(self) -> u8 {
        self as u8 + 1
    }
}

/// Which of the two pieces of a section a point lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    /// Ray on a switching line, parametrised by `w`.
    Manifold,
    /// Nullcline segment, parametrised by `v`.
    Nullcline,
}

/// Geometry of one section for a fixed parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub id: SectionId,
    /// `v` of the switching line holding the ray.
    pub manifold_v: f64,
    /// `w` at the junction.
    pub junction_w: f64,
    /// Ray runs below the junction (`w < junction_w`) when set.
    pub ray_below: bool,
    /// `v` range of the nullcline segment.
    pub null_lo: f64,
    pub null_hi: f64,
    pub eta1: f64,
}

impl Section {
    pub fn new(id: SectionId, p: &ModelParams) -> Self {
        let eta1 = p.eta1();
        let vstar = p.lambda / (p.alpha - p.sigma * eta1);
        let (manifold_v, junction_w, ray_below, null_lo, null_hi) = match id {
            SectionId::S1 => (0.0, 0.0, true, 0.0, vstar.clamp(0.0, p.v1)),
            SectionId::S2 => (p.v1, p.w1, true, vstar.clamp(0.0, p.v1), p.v1),
            SectionId::S3 => (p.v1, p.w1, false, vstar.clamp(0.0, p.v1), p.v1),
            SectionId::S4 => (0.0, 0.0, false, 0.0, vstar.clamp(0.0, p.v1)),
        };
        Self {
            id,
            manifold_v,
            junction_w,
            ray_below,
            null_lo,
            null_hi,
            eta1,
        }
    }

    pub fn on_ray(&self, w: f64) -> bool {
        if self.ray_below {
            w < self.junction_w
        } else {
            w > self.junction_w
        }
    }

    pub fn on_segment(&self, v: f64) -> bool {
        match self.id {
            SectionId::S1 | SectionId::S4 => v >= self.null_lo && v < self.null_hi,
            SectionId::S2 | SectionId::S3 => v > self.null_lo && v <= self.null_hi,
        }
    }

    /// `v` of the junction end of the nullcline segment.
    pub fn junction_v(&self) -> f64 {
        self.manifold_v
    }

    /// Point with the given component coordinate.
    pub fn point(&self, comp: Component, coord: f64) -> Point2 {
        match comp {
            Component::Manifold => Point2::new(self.manifold_v, coord),
            Component::Nullcline => Point2::new(coord, self.eta1 * coord),
        }
    }

    /// Signed arc length from the junction: negative on the ray, positive on
    /// the segment.
    pub fn arc(&self, comp: Component, coord: f64) -> f64 {
        match comp {
            Component::Manifold => -(coord - self.junction_w).abs(),
            Component::Nullcline => (coord - self.junction_v()).abs() * (1.0 + self.eta1 * self.eta1).sqrt(),
        }
    }

    /// Inverse of [`Section::arc`].
    pub fn from_arc(&self, s: f64) -> (Component, f64) {
        if s < 0.0 {
            let w = if self.ray_below {
                self.junction_w + s
            } else {
                self.junction_w - s
            };
            (Component::Manifold, w)
        } else {
            let dv = s / (1.0 + self.eta1 * self.eta1).sqrt();
            let v = match self.id {
                SectionId::S1 | SectionId::S4 => self.junction_v() + dv,
                SectionId::S2 | SectionId::S3 => self.junction_v() - dv,
            };
            (Component::Nullcline, v)
        }
    }

    /// Length of the nullcline segment in its own coordinate `v`.
    pub fn segment_len(&self) -> f64 {
        (self.null_hi - self.null_lo).max(0.0)
    }

    /// Line carrying the nullcline segment.
    pub fn segment_line(&self) -> Line {
        Line::through_origin(self.eta1)
    }
}

/// A section crossing found by [`next_hit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Point2,
    pub component: Component,
    /// Largest `v` reached between the start and the hit.
    pub v_max: f64,
}

/// Runs the deterministic flow from `x` to the next crossing of `sec`,
/// ignoring the starting point. `Ok(None)` when the orbit settles before.
pub fn next_hit(flows: &Flows, x: Point2, sec: &Section, max_time: f64) -> Result<Option<Hit>> {
    let p = &flows.params;
    let targets: Vec<Target> = Region::ALL
        .iter()
        .map(|&r| Target {
            line: Line {
                normal: Vector2::new(-p.slope(r), 1.0),
                offset: p.intercept(r),
            },
            region: Some(r),
        })
        .collect();
    let mut t = 0.0;
    let mut y = x.to_vector();
    let mut v_max = x.v;
    let mut hops = 0usize;
    while t < max_time {
        let hop = flows.hop(&y, &targets, false, max_time - t);
        let hop = hop?;
        t += hop.t;
        y = hop.x;
        let pt = Point2::from_vector(&y);
        if !pt.is_finite() {
            return Err(Error::NonFinite("section map"));
        }
        v_max = v_max.max(pt.v);
        if let Some(m) = hop.manifold {
            let v = match m {
                Manifold::V0 => 0.0,
                Manifold::V1 => p.v1,
                _ => 1.0,
            };
            if v == sec.manifold_v && sec.on_ray(pt.w) {
                return Ok(Some(Hit {
                    t,
                    point: pt,
                    component: Component::Manifold,
                    v_max,
                }));
            }
        } else if let Some(i) = hop.target {
            let region = Region::ALL[i];
            if region == Region::R1 && sec.on_segment(pt.v) {
                // snap onto the nullcline
                let pt = Point2::new(pt.v, sec.eta1 * pt.v);
                return Ok(Some(Hit {
                    t,
                    point: pt,
                    component: Component::Nullcline,
                    v_max,
                }));
            }
        } else {
            return Ok(None);
        }
        hops += 1;
        if hops > 1_000_000 {
            return Err(Error::no_conv("section map", "too many events"));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arc_round_trip() {
        let p = ModelParams::default();
        for id in SectionId::ALL {
            let s = Section::new(id, &p);
            for arc in [-0.3, -1e-4, 1e-4, 0.5 * s.segment_len()] {
                let (c, x) = s.from_arc(arc);
                assert!((s.arc(c, x) - arc).abs() < 1e-15, "{id:?} {arc}");
            }
        }
    }

    #[test]
    fn sigma1_to_sigma2() {
        let p = ModelParams::default();
        let flows = Flows::new(&p).unwrap();
        let s2 = Section::new(SectionId::S2, &p);
        let hit = next_hit(&flows, Point2::new(0.0, -0.001), &s2, 1e3).unwrap().unwrap();
        assert!(hit.t > 0.0);
        match hit.component {
            Component::Manifold => assert_eq!(hit.point.v, p.v1),
            Component::Nullcline => assert!((hit.point.w - p.eta1() * hit.point.v).abs() < 1e-15),
        }
    }
}
