//! Exit atoms: the time-integrated probability flux of one region's process
//! through the lines of the next section, one Gaussian slice per time step.

use nalgebra::{Matrix2, Vector2};

use super::covariance::StepLadder;
use super::density::Atom;
use super::gaussian::{restrict, LineLaw};
use crate::error::{Error, Result};
use crate::flow::{Flows, Line, LinearFlow, DEFAULT_HORIZON};
use crate::model::{ModelParams, Point2, Region};
use crate::orbit::w2_hat;
use crate::section::{next_hit, Component, Section, SectionId};

/// A piece of a section as the line `a + s u` with `s` in `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LineTarget {
    pub component: Component,
    pub a: Vector2<f64>,
    pub u: Vector2<f64>,
    /// Points to the side the flow crosses into.
    pub normal: Vector2<f64>,
    pub lo: f64,
    pub hi: f64,
    /// Normal drift `k0 + k1 s` along the line.
    k0: f64,
    k1: f64,
}

impl LineTarget {
    fn new(component: Component, a: Vector2<f64>, u: Vector2<f64>, forward: bool, lo: f64, hi: f64, flow: &LinearFlow) -> Self {
        let rot = Vector2::new(-u[1], u[0]);
        let normal = if forward { rot } else { -rot };
        let k0 = normal.dot(&(flow.a * (a - flow.center)));
        let k1 = normal.dot(&(flow.a * u));
        Self {
            component,
            a,
            u,
            normal,
            lo,
            hi,
            k0,
            k1,
        }
    }

    /// The ray `v = v0` between `lo` and `hi`, crossed towards larger `v`
    /// when `rightward`.
    fn ray(v0: f64, lo: f64, hi: f64, rightward: bool, flow: &LinearFlow) -> Self {
        // rot(u) = (-1, 0) for u = (0, 1)
        Self::new(
            Component::Manifold,
            Vector2::new(v0, 0.0),
            Vector2::new(0.0, 1.0),
            !rightward,
            lo,
            hi,
            flow,
        )
    }

    /// The segment of `w = eta v` between `lo` and `hi`, crossed upwards
    /// when `upward`.
    fn segment(eta: f64, lo: f64, hi: f64, upward: bool, flow: &LinearFlow) -> Self {
        Self::new(
            Component::Nullcline,
            Vector2::zeros(),
            Vector2::new(1.0, eta),
            upward,
            lo,
            hi,
            flow,
        )
    }

    fn line(&self) -> Line {
        Line {
            normal: self.normal,
            offset: self.normal.dot(&self.a),
        }
    }

    fn is_empty(&self) -> bool {
        !(self.hi > self.lo)
    }

    fn relevant(&self, law: &LineLaw) -> bool {
        law.delta.abs() <= 12.0 && law.mu >= self.lo - 10.0 * law.sigma && law.mu <= self.hi + 10.0 * law.sigma
    }

    fn coord(&self, x: &Vector2<f64>) -> f64 {
        let y = x - self.a;
        y.dot(&self.u) / self.u.norm_squared()
    }
}

/// The process of one region and the lines it exits through.
#[derive(Debug, Clone)]
pub(crate) struct ExitProblem {
    pub ladder: StepLadder,
    pub targets: Vec<LineTarget>,
    pub d: f64,
    pub include_diffusion: bool,
}

#[derive(Clone, Copy)]
struct Slice {
    t: f64,
    laws: [Option<LineLaw>; 2],
    m: Vector2<f64>,
    theta: Matrix2<f64>,
}

impl ExitProblem {
    fn laws(&self, m: &Vector2<f64>, theta: &Matrix2<f64>) -> [Option<LineLaw>; 2] {
        let mut out = [None, None];
        for (i, tg) in self.targets.iter().enumerate() {
            out[i] = restrict(m, theta, self.d, &tg.a, &tg.u, &tg.normal);
        }
        out
    }

    fn side(&self, i: usize, m: &Vector2<f64>) -> f64 {
        let tg = &self.targets[i];
        let g = tg.normal.dot(&(m - tg.a));
        let tol = 4.0 * f64::EPSILON * (tg.normal.norm() * m.norm() + tg.normal.dot(&tg.a).abs());
        if g.abs() <= tol {
            0.0
        } else {
            g
        }
    }

    /// Deterministic first crossing over all target lines.
    fn first_event(&self, x0: &Vector2<f64>) -> Result<Option<(f64, usize)>> {
        let mut best: Option<(f64, usize)> = None;
        for (i, tg) in self.targets.iter().enumerate() {
            let t = match self.ladder.flow.first_crossing(x0, &tg.line(), false, DEFAULT_HORIZON) {
                Ok(t) => t,
                Err(Error::NoBracket { .. }) | Err(Error::NonFinite(_)) => None,
                Err(e) => return Err(e),
            };
            if let Some(t) = t {
                if best.map_or(true, |b| t < b.0) {
                    best = Some((t, i));
                }
            }
        }
        Ok(best)
    }

    /// End of the flux integration: halfway between the mean's return across
    /// the crossed line and its next crossing of any target line, so that
    /// later revolutions of the free process are not counted.
    fn horizon(&self, x0: &Vector2<f64>, t_c: f64, i: usize) -> Result<f64> {
        let flow = &self.ladder.flow;
        let next = |x: &Vector2<f64>, tg: &LineTarget| match flow.first_crossing(x, &tg.line(), false, DEFAULT_HORIZON) {
            Ok(t) => Ok(t),
            Err(Error::NoBracket { .. }) | Err(Error::NonFinite(_)) => Ok(None),
            Err(e) => Err(e),
        };
        let xc = flow.state(t_c, x0);
        let Some(tb) = next(&xc, &self.targets[i])? else {
            return Ok(t_c + t_c.max(20.0));
        };
        let xb = flow.state(tb, &xc);
        let mut t2: Option<f64> = None;
        for tg in &self.targets {
            if let Some(t) = next(&xb, tg)? {
                t2 = Some(t2.map_or(t, |s| s.min(t)));
            }
        }
        Ok(match t2 {
            Some(t2) => t_c + tb + 0.5 * t2,
            None => t_c + tb + tb.max(20.0),
        })
    }

    fn step_ok(&self, old: &Slice, new: &[Option<LineLaw>; 2]) -> bool {
        for i in 0..self.targets.len() {
            let Some(n) = new[i] else { return false };
            let (d_old, mu_old, s_old) = match old.laws[i] {
                Some(o) => (o.delta, Some(o.mu), o.sigma),
                None => {
                    let g = self.side(i, &old.m);
                    (if g == 0.0 { 0.0 } else { g.signum() * f64::INFINITY }, None, 0.0)
                }
            };
            let far = d_old.abs() > 9.0 && n.delta.abs() > 9.0 && d_old.signum() == n.delta.signum();
            if far {
                let lo = d_old.abs().min(n.delta.abs());
                let hi = d_old.abs().max(n.delta.abs());
                if lo > 30.0 || lo >= 0.3 * hi {
                    continue;
                }
                return false;
            }
            if (n.delta - d_old).abs() > 0.5 {
                return false;
            }
            if let (Some(mu_old), Some(o)) = (mu_old, old.laws[i]) {
                let tg = &self.targets[i];
                if tg.relevant(&o) || tg.relevant(&n) {
                    if (n.mu - mu_old).abs() > 0.5 * s_old.min(n.sigma) {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Unnormalised exit atoms for a start at `x0`.
    pub fn atoms(&self, x0: &Vector2<f64>) -> Result<Vec<Atom>> {
        let flow = &self.ladder.flow;
        let event = self.first_event(x0)?;
        if self.d == 0.0 {
            let (t, i) = event.ok_or_else(|| Error::no_conv("exit density", "no deterministic crossing"))?;
            let x = flow.state(t, x0);
            let tg = &self.targets[i];
            let s = tg.coord(&x);
            return Ok(vec![Atom::point(tg.component, s, 1.0)]);
        }
        let (t_c, crossed) = match event {
            Some((t, i)) => (t, Some(i)),
            None => (0.0, None),
        };
        let t_cap = match crossed {
            Some(i) => self.horizon(x0, t_c, i)?,
            None => 20.0,
        };
        let c = flow.center;
        let mut slices = vec![Slice {
            t: 0.0,
            laws: [None, None],
            m: *x0,
            theta: Matrix2::zeros(),
        }];
        let top = self.ladder.top();
        let mut k = top;
        loop {
            let cur = *slices.last().unwrap();
            let rung = &self.ladder.steps[k];
            let m = c + rung.e * (cur.m - c);
            let theta = rung.theta + rung.e * cur.theta * rung.e.transpose();
            let laws = self.laws(&m, &theta);
            if k > 0 && !self.step_ok(&cur, &laws) {
                k -= 1;
                continue;
            }
            let t = cur.t + rung.h;
            slices.push(Slice { t, laws, m, theta });
            k = (k + 1).min(top);
            if !m.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("exit density"));
            }
            if t >= t_cap {
                break;
            }
            if t > t_c {
                let done = match crossed {
                    Some(i) => laws[i].map_or(false, |l| l.delta > 8.0),
                    None => laws.iter().take(self.targets.len()).any(|l| l.map_or(false, |l| l.delta > 8.0)),
                };
                if done {
                    break;
                }
            }
            if slices.len() > 2_000_000 {
                return Err(Error::no_conv("exit density", "too many time steps"));
            }
        }
        let n = slices.len();
        let mut out = Vec::new();
        for idx in 1..n {
            let w = 0.5 * (slices[(idx + 1).min(n - 1)].t - slices[idx - 1].t);
            let sl = &slices[idx];
            for (i, tg) in self.targets.iter().enumerate() {
                let Some(law) = sl.laws[i] else { continue };
                if !tg.relevant(&law) || law.mass == 0.0 {
                    continue;
                }
                let mut b0 = tg.k0 + tg.k1 * law.mu;
                let mut b1 = tg.k1;
                if self.include_diffusion {
                    // -(D^2/2) dp/dw projected on the normal
                    let inv = sl.theta.try_inverse().unwrap_or_else(Matrix2::zeros);
                    let y = tg.a + tg.u * law.mu - sl.m;
                    b0 += 0.5 * tg.normal[1] * (inv * y)[1];
                    b1 += 0.5 * tg.normal[1] * (inv * tg.u)[1];
                }
                out.push(Atom {
                    component: tg.component,
                    weight: w * law.mass,
                    mu: law.mu,
                    sigma: law.sigma,
                    b0,
                    b1,
                });
            }
        }
        Ok(trim(out))
    }

    /// Mass of `atoms` inside the target domains.
    pub fn captured(&self, atoms: &[Atom]) -> f64 {
        atoms
            .iter()
            .map(|a| {
                let tg = self.targets.iter().find(|t| t.component == a.component).unwrap();
                a.mass_on(tg.lo, tg.hi)
            })
            .sum()
    }

    pub fn domain(&self, c: Component) -> Option<(f64, f64)> {
        self.targets.iter().find(|t| t.component == c).map(|t| (t.lo, t.hi))
    }
}

/// How a node of one section maps to the next.
#[derive(Debug, Clone)]
pub(crate) enum Row {
    /// Same point on the shared nullcline segment.
    Identity,
    /// Atoms on the next section with unit total mass.
    Atoms(Vec<Atom>),
}

/// Per-parameter-set machinery for the four section-to-section stages.
#[derive(Debug, Clone)]
pub(crate) struct Stages {
    pub flows: Flows,
    pub sections: [Section; 4],
    pub w2: f64,
    /// Exit problems into S2 (from R1), S3 (from R2), S4 (from R1), S1 (from L).
    problems: [ExitProblem; 4],
}

/// Domain of the ray and segment of a section, in component coordinates.
pub(crate) fn domains(sec: &Section) -> [(Component, f64, f64); 2] {
    let ray = if sec.ray_below {
        (f64::NEG_INFINITY, sec.junction_w)
    } else {
        (sec.junction_w, f64::INFINITY)
    };
    [
        (Component::Manifold, ray.0, ray.1),
        (Component::Nullcline, sec.null_lo, sec.null_hi),
    ]
}

fn index(id: SectionId) -> usize {
    id.number() as usize - 1
}

impl Stages {
    pub fn new(p: &ModelParams, include_diffusion: bool) -> Result<Self> {
        let flows = Flows::new(p)?;
        let sections = SectionId::ALL.map(|id| Section::new(id, p));
        let eta = p.eta1();
        let d = p.noise_d;
        let l1 = StepLadder::new(flows.get(Region::R1).clone())?;
        let l2 = StepLadder::new(flows.get(Region::R2).clone())?;
        let ll = StepLadder::new(flows.get(Region::L).clone())?;
        let build = |ladder: &StepLadder, targets: Vec<LineTarget>| ExitProblem {
            ladder: ladder.clone(),
            targets: targets.into_iter().filter(|t| !t.is_empty()).collect(),
            d,
            include_diffusion,
        };
        let [s1, s2, s3, s4] = &sections;
        let f1 = &l1.flow;
        let into2 = build(
            &l1,
            vec![
                LineTarget::ray(p.v1, f64::NEG_INFINITY, s2.junction_w, true, f1),
                LineTarget::segment(eta, s2.null_lo, s2.null_hi, true, f1),
            ],
        );
        let into3 = build(
            &l2,
            vec![LineTarget::ray(p.v1, s3.junction_w, f64::INFINITY, false, &l2.flow)],
        );
        let into4 = build(
            &l1,
            vec![
                LineTarget::ray(0.0, s4.junction_w, f64::INFINITY, false, f1),
                LineTarget::segment(eta, s4.null_lo, s4.null_hi, false, f1),
            ],
        );
        let into1 = build(
            &ll,
            vec![LineTarget::ray(0.0, f64::NEG_INFINITY, s1.junction_w, true, &ll.flow)],
        );
        let w2 = w2_hat(p)?;
        Ok(Self {
            flows,
            sections,
            w2,
            problems: [into1, into2, into3, into4],
        })
    }

    pub fn section(&self, id: SectionId) -> &Section {
        &self.sections[index(id)]
    }

    /// Exit problem whose targets make up section `to`.
    pub fn problem_into(&self, to: SectionId) -> &ExitProblem {
        &self.problems[index(to)]
    }

    /// Row of the stage leaving `from` for a node at `(c, coord)`. The
    /// second value is the captured mass before normalisation.
    pub fn row(&self, from: SectionId, c: Component, coord: f64) -> Result<(Row, f64)> {
        let sec = self.section(from);
        let x = sec.point(c, coord).to_vector();
        let to = from.next();
        match (from, c) {
            (SectionId::S2, Component::Nullcline) | (SectionId::S4, Component::Nullcline) => Ok((Row::Identity, 1.0)),
            (SectionId::S2, Component::Manifold) if coord <= self.w2 => {
                let hit = next_hit(&self.flows, Point2::from_vector(&x), self.section(to), 1e5)?
                    .ok_or_else(|| Error::no_conv("large oscillation routing", "orbit does not return"))?;
                let s = match hit.component {
                    Component::Manifold => hit.point.w,
                    Component::Nullcline => hit.point.v,
                };
                Ok((Row::Atoms(vec![Atom::point(hit.component, s, 1.0)]), 1.0))
            }
            _ => {
                let prob = self.problem_into(to);
                let mut atoms = prob.atoms(&x)?;
                let m = prob.captured(&atoms);
                if !(m > 0.0) || !m.is_finite() {
                    return Ok((Row::Atoms(Vec::new()), 0.0));
                }
                for a in &mut atoms {
                    a.weight /= m;
                }
                Ok((Row::Atoms(atoms), m))
            }
        }
    }
}

/// Drops the lightest atoms while their combined mass stays below `1e-12`
/// of the total.
fn trim(mut atoms: Vec<Atom>) -> Vec<Atom> {
    let size = |a: &Atom| (a.weight * a.b0).abs();
    let total: f64 = atoms.iter().map(size).sum();
    let mut sizes: Vec<f64> = atoms.iter().map(size).collect();
    sizes.sort_by(f64::total_cmp);
    let mut acc = 0.0;
    let mut cut = -1.0;
    for m in sizes {
        acc += m;
        if acc > 1e-12 * total {
            break;
        }
        cut = m;
    }
    atoms.retain(|a| size(a) > cut);
    atoms
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_is_the_crossing() {
        let p = ModelParams::default().with_noise(0.0);
        let st = Stages::new(&p, false).unwrap();
        let x0 = Point2::new(0.0, -0.001);
        let (row, _) = st.row(SectionId::S1, Component::Manifold, x0.w).unwrap();
        let Row::Atoms(a) = row else { panic!() };
        assert_eq!(a.len(), 1);
        let hit = next_hit(&st.flows, x0, st.section(SectionId::S2), 1e3).unwrap().unwrap();
        let s = match hit.component {
            Component::Manifold => hit.point.w,
            Component::Nullcline => hit.point.v,
        };
        assert_eq!(a[0].component, hit.component);
        assert!((a[0].mu - s).abs() < 1e-12);
    }

    #[test]
    fn small_noise_captures_unit_mass() {
        let p = ModelParams::default().with_noise(4e-4);
        let st = Stages::new(&p, false).unwrap();
        for (from, c, x) in [
            (SectionId::S1, Component::Manifold, -0.0006),
            (SectionId::S2, Component::Manifold, 0.0),
            (SectionId::S3, Component::Manifold, 0.09),
            (SectionId::S4, Component::Manifold, 0.08),
        ] {
            let (_, m) = st.row(from, c, x).unwrap();
            assert!((m - 1.0).abs() < 0.02, "{from:?} {m}");
        }
    }
}
