//! Section-to-section propagation of densities and the limiting densities
//! of the composite return map.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;

use super::density::{merge, plan_patches, project_atoms, tile, Atom, Patch, SectionDensity};
use super::kernel::{domains, Row, Stages};
use crate::error::{Error, Result};
use crate::model::{validate, ModelParams, Point2};
use crate::orbit::{periodic_orbit, w_l_hat, SizeClass};
use crate::section::{Component, SectionId};

/// Numerical knobs of the exit-density machinery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExitOptions {
    /// Nodes per patch at least.
    pub min_nodes: usize,
    /// Nodes per patch at most.
    pub max_nodes: usize,
    /// Adds the diffusive part of the current to the exit flux.
    pub include_diffusion: bool,
    /// L1 gap between successive first-section densities that ends the iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest captured flux mass accepted before renormalisation.
    pub min_capture: f64,
}

impl Default for ExitOptions {
    fn default() -> Self {
        Self {
            min_nodes: 200,
            max_nodes: 4000,
            include_diffusion: false,
            tol: 1e-6,
            max_iter: 200,
            min_capture: 0.5,
        }
    }
}

/// One propagated density.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Propagated {
    pub density: SectionDensity,
    /// Mass that fell outside the output grid, before renormalisation.
    pub lost: f64,
}

type RowKey = (u8, bool, u64);

/// Stage machinery with a row cache keyed by node position.
pub(crate) struct Engine {
    pub stages: Stages,
    pub opts: ExitOptions,
    cache: Mutex<HashMap<RowKey, Arc<(Row, f64)>>>,
}

struct Scaled {
    atoms: Vec<Atom>,
    input: f64,
}

impl Engine {
    pub fn new(p: &ModelParams, opts: ExitOptions) -> Result<Self> {
        Ok(Self {
            stages: Stages::new(p, opts.include_diffusion)?,
            opts,
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn row(&self, from: SectionId, c: Component, x: f64) -> Result<Arc<(Row, f64)>> {
        let key = (from.number(), c == Component::Manifold, x.to_bits());
        if let Some(r) = self.cache.lock().unwrap().get(&key) {
            return Ok(r.clone());
        }
        let r = Arc::new(self.stages.row(from, c, x)?);
        self.cache.lock().unwrap().insert(key, r.clone());
        Ok(r)
    }

    /// Rows that lost most of their flux are tolerated only on nodes with
    /// negligible mass, such as segment ends at the equilibrium.
    fn check_capture(&self, rows: impl Iterator<Item = (f64, f64)>) -> Result<()> {
        for (share, captured) in rows {
            if captured < self.opts.min_capture && share > 1e-4 {
                return Err(Error::LowCapture { mass: captured });
            }
        }
        Ok(())
    }

    /// Atoms on the next section from a weighted node list.
    fn scatter(&self, from: SectionId, nodes: &[(Component, f64, f64)]) -> Result<Scaled> {
        let rows: Vec<Arc<(Row, f64)>> = nodes
            .par_iter()
            .map(|&(c, x, _)| self.row(from, c, x))
            .collect::<Result<_>>()?;
        let total: f64 = nodes.iter().map(|n| n.2).sum();
        self.check_capture(nodes.iter().map(|n| n.2 / total).zip(rows.iter().map(|r| r.1)))?;
        let mut atoms = Vec::new();
        let mut input = 0.0;
        for (&(c, x, m), r) in nodes.iter().zip(&rows) {
            input += m;
            match &r.0 {
                Row::Identity => atoms.push(Atom::point(c, x, m)),
                Row::Atoms(a) => atoms.extend(a.iter().map(|a| Atom {
                    weight: a.weight * m,
                    ..*a
                })),
            }
        }
        Ok(Scaled { atoms, input })
    }

    /// Output layout on `to`: the input's segment patches for shared
    /// segments, fresh patches around the atoms otherwise.
    fn layout(&self, from: &SectionDensity, atoms: &[Atom]) -> Vec<Patch> {
        let to = from.section.next();
        let mut out = Vec::new();
        for (c, lo, hi) in domains(self.stages.section(to)) {
            let shared = c == Component::Nullcline && matches!(from.section, SectionId::S2 | SectionId::S4);
            if shared {
                out.extend(
                    from.patches
                        .iter()
                        .filter(|p| p.component == c)
                        .map(|p| Patch::zeros(c, p.lo, p.h, p.len())),
                );
                continue;
            }
            let mine: Vec<Atom> = atoms.iter().filter(|a| a.component == c).copied().collect();
            for (a, h, n) in plan_patches(&mine, lo, hi, self.opts.min_nodes, self.opts.max_nodes) {
                out.push(Patch::zeros(c, a, h, n));
            }
        }
        out
    }

    fn significant(d: &SectionDensity) -> Vec<(Component, f64, f64)> {
        let masses: Vec<f64> = d.nodes().map(|n| n.mass).collect();
        let cut = cutoff(&masses);
        d.nodes()
            .filter(|n| n.mass > cut)
            .map(|n| (n.component, n.coord, n.mass))
            .collect()
    }

    /// Propagates onto fresh patches around the image.
    pub fn advance(&self, d: &SectionDensity) -> Result<Propagated> {
        let nodes = Self::significant(d);
        let sc = self.scatter(d.section, &nodes)?;
        let mut patches = self.layout(d, &sc.atoms);
        let captured = project_all(&sc.atoms, &mut patches);
        let mut density = SectionDensity::new(d.section.next(), patches);
        let lost = (sc.input - captured).max(0.0);
        density.normalize();
        Ok(Propagated { density, lost })
    }
}

/// Largest node mass such that all nodes at or below it together carry at
/// most `1e-10` of the total.
fn cutoff(masses: &[f64]) -> f64 {
    let mut sorted: Vec<f64> = masses.iter().map(|m| m.max(0.0)).collect();
    sorted.sort_by(f64::total_cmp);
    let budget = 1e-10 * sorted.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut cut = 0.0;
    for m in sorted {
        acc += m;
        if acc > budget {
            break;
        }
        cut = m;
    }
    cut
}

/// Projects atoms onto patches of matching component, converting node
/// masses to density values. Returns the mass placed.
fn project_all(atoms: &[Atom], patches: &mut [Patch]) -> f64 {
    let masses = project_atoms(atoms, patches);
    let mut placed = 0.0;
    for (p, m) in patches.iter_mut().zip(masses) {
        let m = m.unwrap_or_else(|| vec![0.0; p.len()]);
        for (j, m) in m.into_iter().enumerate() {
            let m = m.max(0.0);
            placed += m;
            p.values[j] = m / p.weight(j);
        }
    }
    placed
}

/// Density of the first exit through `to` for the process started at `p0`.
/// `to` names the section the process of the preceding region exits
/// through: the second and fourth from the inner focus region, the third
/// from the inner right region and the first from the left region.
pub fn exit_density_point(p0: Point2, to: SectionId, p: &ModelParams, opts: &ExitOptions) -> Result<SectionDensity> {
    let stages = Stages::new(p, opts.include_diffusion)?;
    let prob = stages.problem_into(to);
    let mut atoms = prob.atoms(&p0.to_vector())?;
    let m = prob.captured(&atoms);
    if !(m >= opts.min_capture) {
        return Err(Error::LowCapture { mass: m });
    }
    for a in &mut atoms {
        a.weight /= m;
    }
    let mut patches = Vec::new();
    for (c, lo, hi) in domains(stages.section(to)) {
        if prob.domain(c).is_none() {
            continue;
        }
        let mine: Vec<Atom> = atoms.iter().filter(|a| a.component == c).copied().collect();
        for (a, h, n) in plan_patches(&mine, lo, hi, opts.min_nodes, opts.max_nodes) {
            patches.push(Patch::zeros(c, a, h, n));
        }
    }
    project_all(&atoms, &mut patches);
    let mut d = SectionDensity::new(to, patches);
    d.normalize();
    Ok(d)
}

/// Pushes a density on one section to the next.
pub fn propagate(density: &SectionDensity, p: &ModelParams, opts: &ExitOptions) -> Result<Propagated> {
    let engine = Engine::new(p, *opts)?;
    engine.advance(density)
}

/// A point mass on one section component, as a density.
pub fn point_density(section: SectionId, c: Component, x: f64) -> SectionDensity {
    let h = 1e-12 * (1.0 + x.abs());
    let mut p = Patch::zeros(c, x - h, h, 3);
    p.values[1] = 1.0 / h;
    SectionDensity::new(section, vec![p])
}

/// Limiting densities on all four sections.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryResult {
    /// Densities on the first to fourth sections.
    pub sections: Vec<SectionDensity>,
    pub iterations: usize,
    /// L1 gap of the first-section node masses at each iteration.
    pub gaps: Vec<f64>,
    /// Largest mass lost off the grids in one stage of the last iteration.
    pub lost: f64,
}

impl StationaryResult {
    pub fn section(&self, id: SectionId) -> &SectionDensity {
        &self.sections[id.number() as usize - 1]
    }

    pub fn gap(&self) -> f64 {
        self.gaps.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// Fixed grid on one section with a flat node index.
#[derive(Debug, Clone)]
struct Grid {
    patches: Vec<Patch>,
    offsets: Vec<usize>,
}

impl Grid {
    fn new(patches: Vec<Patch>) -> Self {
        let mut offsets = Vec::with_capacity(patches.len() + 1);
        let mut n = 0;
        for p in &patches {
            offsets.push(n);
            n += p.len();
        }
        offsets.push(n);
        Self { patches, offsets }
    }

    fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn node(&self, k: usize) -> (Component, f64, f64) {
        let i = self.offsets.partition_point(|&o| o <= k) - 1;
        let p = &self.patches[i];
        let j = k - self.offsets[i];
        (p.component, p.node(j), p.weight(j))
    }

    /// Node masses of the projection of atoms, as sparse entries.
    fn project(&self, atoms: &[Atom]) -> Vec<(u32, f64)> {
        let mut out = Vec::new();
        for (i, m) in project_atoms(atoms, &self.patches).into_iter().enumerate() {
            for (j, m) in m.into_iter().flatten().enumerate() {
                if m > 0.0 {
                    out.push(((self.offsets[i] + j) as u32, m));
                }
            }
        }
        out
    }

    fn sample(&self, d: &SectionDensity) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let (c, x, w) = self.node(k);
                d.eval(c, x) * w
            })
            .collect()
    }

    fn density(&self, id: SectionId, masses: &[f64]) -> SectionDensity {
        let patches = self
            .patches
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut q = p.clone();
                for j in 0..p.len() {
                    q.values[j] = masses[self.offsets[i] + j].max(0.0) / p.weight(j);
                }
                q
            })
            .collect();
        SectionDensity::new(id, patches)
    }

    /// Union of two layouts with a margin, at the finer spacing.
    fn union(a: &[Patch], b: &[Patch], domain: &[(Component, f64, f64)], opts: &ExitOptions) -> Vec<Patch> {
        let mut out = Vec::new();
        for &(c, lo, hi) in domain {
            let mine: Vec<&Patch> = a.iter().chain(b).filter(|p| p.component == c && p.len() > 1).collect();
            let mut reqs: Vec<(f64, f64, f64)> = mine.iter().map(|p| (p.lo, p.hi(), p.h)).collect();
            for (x0, x1) in merge(reqs.iter().map(|s| (s.0, s.1)).collect()) {
                let pad = 0.1 * (x1 - x0);
                let coarse = (x1 - x0) / (opts.min_nodes - 1) as f64;
                if x0 > lo {
                    reqs.push(((x0 - pad).max(lo), x0, coarse));
                }
                if x1 < hi {
                    reqs.push((x1, (x1 + pad).min(hi), coarse));
                }
            }
            for (x0, h, n) in tile(reqs, 4 * opts.max_nodes) {
                out.push(Patch::zeros(c, x0, h, n));
            }
        }
        out
    }

    /// Widens every cluster of patches by half its length on each side, at
    /// the spacing of its end patches.
    fn extended(&self, domain: &[(Component, f64, f64)], opts: &ExitOptions) -> Vec<Patch> {
        let mut out = Vec::new();
        for &(c, lo, hi) in domain {
            let mine: Vec<&Patch> = self.patches.iter().filter(|p| p.component == c && p.len() > 1).collect();
            let mut reqs: Vec<(f64, f64, f64)> = mine.iter().map(|p| (p.lo, p.hi(), p.h)).collect();
            let end_h = |x: f64| {
                mine.iter()
                    .filter(|p| p.lo <= x && p.hi() >= x)
                    .map(|p| p.h)
                    .fold(f64::INFINITY, f64::min)
            };
            for (x0, x1) in merge(reqs.iter().map(|s| (s.0, s.1)).collect()) {
                let add = 0.5 * (x1 - x0);
                if x0 > lo {
                    reqs.push(((x0 - add).max(lo), x0, end_h(x0)));
                }
                if x1 < hi {
                    reqs.push((x1, (x1 + add).min(hi), end_h(x1)));
                }
            }
            for (x0, h, n) in tile(reqs, 4 * opts.max_nodes) {
                out.push(Patch::zeros(c, x0, h, n));
            }
        }
        out
    }
}

struct Sparse {
    rows: Vec<Option<Vec<(u32, f64)>>>,
}

impl Engine {
    fn apply(&self, from: SectionId, grid: &Grid, next: &Grid, k: &mut Sparse, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let total: f64 = x.iter().sum();
        let cut = cutoff(x);
        let missing: Vec<usize> = (0..grid.len())
            .filter(|&i| x[i] > cut && k.rows[i].is_none())
            .collect();
        let rows: Vec<(usize, Vec<(u32, f64)>, f64)> = missing
            .par_iter()
            .map(|&i| {
                let (c, s, _) = grid.node(i);
                let r = self.row(from, c, s)?;
                let atoms = match &r.0 {
                    Row::Identity => vec![Atom::point(c, s, 1.0)],
                    Row::Atoms(a) => a.clone(),
                };
                Ok((i, next.project(&atoms), r.1))
            })
            .collect::<Result<_>>()?;
        self.check_capture(rows.iter().map(|r| (x[r.0] / total, r.2)))?;
        for (i, r, _) in rows {
            k.rows[i] = Some(r);
        }
        let mut y = vec![0.0; next.len()];
        let mut used = 0.0;
        for i in 0..grid.len() {
            if x[i] > cut {
                used += x[i];
                for &(j, w) in k.rows[i].as_ref().unwrap() {
                    y[j as usize] += x[i] * w;
                }
            }
        }
        let out: f64 = y.iter().sum();
        let lost = (used - out).max(0.0) / used.max(f64::MIN_POSITIVE);
        if out > 0.0 {
            for v in &mut y {
                *v /= out;
            }
        }
        Ok((y, lost))
    }
}

/// Iterates the composite map from the first section to itself, starting
/// from `init`, until successive first-section densities agree.
pub fn stationary_density(p: &ModelParams, init: &SectionDensity, opts: &ExitOptions) -> Result<StationaryResult> {
    let report = validate(p);
    if !report.is_valid() {
        return Err(Error::Precondition(report.to_string()));
    }
    if !(p.noise_d > 0.0) {
        return Err(Error::Precondition("stationary densities need D > 0".into()));
    }
    if init.section != SectionId::S1 {
        return Err(Error::Precondition("initial density must live on the first section".into()));
    }
    let engine = Engine::new(p, *opts)?;
    let ids = SectionId::ALL;

    // pilot cycles on adaptive patches until the layouts settle
    let mut cur = init.clone();
    cur.normalize();
    let mut history: Vec<[SectionDensity; 4]> = Vec::new();
    for _ in 0..8 {
        let d2 = engine.advance(&cur)?.density;
        let d3 = engine.advance(&d2)?.density;
        let d4 = engine.advance(&d3)?.density;
        let d1 = engine.advance(&d4)?.density;
        let settled = history.last().map_or(false, |h| {
            let a = Grid::new(h[0].patches.clone()).sample(&d1);
            let b: Vec<f64> = {
                let g = Grid::new(h[0].patches.clone());
                g.sample(&h[0])
            };
            a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() < 1e-3
        });
        cur = d1.clone();
        history.push([d1, d2, d3, d4]);
        if settled {
            break;
        }
    }
    let n = history.len();
    let last = &history[n - 1];
    let prev = &history[n.saturating_sub(2)];
    let mut grids: Vec<Grid> = (0..4)
        .map(|i| {
            let dom = domains(engine.stages.section(ids[i]));
            Grid::new(Grid::union(&last[i].patches, &prev[i].patches, &dom, opts))
        })
        .collect();
    share_segments(&mut grids);

    let mut extensions = 0;
    loop {
        let mut kernels: Vec<Sparse> = grids
            .iter()
            .map(|g| Sparse {
                rows: vec![None; g.len()],
            })
            .collect();
        let mut x = grids[0].sample(&cur);
        let s: f64 = x.iter().sum();
        for v in &mut x {
            *v /= s;
        }
        let mut gaps = Vec::new();
        let mut xs: Vec<Vec<f64>> = vec![Vec::new(); 4];
        let mut lost = [0.0f64; 4];
        let mut iterations = 0;
        while iterations < opts.max_iter {
            iterations += 1;
            let mut y = x.clone();
            for i in 0..4 {
                let (next, l) = engine.apply(ids[i], &grids[i], &grids[(i + 1) % 4], &mut kernels[i], &y)?;
                lost[(i + 1) % 4] = l;
                xs[i] = y;
                y = next;
            }
            let gap: f64 = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
            gaps.push(gap);
            x = y;
            if gap < opts.tol {
                break;
            }
        }
        xs[0] = x;
        let worst = lost.iter().copied().fold(0.0, f64::max);
        if worst > 1e-6 && extensions < 3 {
            extensions += 1;
            for i in 0..4 {
                if lost[i] > 1e-6 {
                    let dom = domains(engine.stages.section(ids[i]));
                    grids[i] = Grid::new(grids[i].extended(&dom, opts));
                }
            }
            share_segments(&mut grids);
            cur = grids[0].density(SectionId::S1, &xs[0]);
            continue;
        }
        let gap = *gaps.last().unwrap();
        if !(gap < opts.tol) {
            return Err(Error::no_conv("stationary density", format!("L1 gap {gap:e} after {iterations} iterations")));
        }
        let sections: Vec<SectionDensity> = (0..4).map(|i| grids[i].density(ids[i], &xs[i])).collect();
        return Ok(StationaryResult {
            sections,
            iterations,
            gaps,
            lost: worst,
        });
    }
}

/// Shared segments carry the same grid on both sections they belong to.
fn share_segments(grids: &mut [Grid]) {
    for (src, dst) in [(1usize, 2usize), (3, 0)] {
        let seg: Vec<Patch> = grids[src]
            .patches
            .iter()
            .filter(|p| p.component == Component::Nullcline)
            .cloned()
            .collect();
        let mut patches: Vec<Patch> = grids[dst]
            .patches
            .iter()
            .filter(|p| p.component != Component::Nullcline)
            .cloned()
            .collect();
        patches.extend(seg);
        grids[dst] = Grid::new(patches);
    }
}

/// Stationary densities from the default start, a point mass at the
/// funnel point `(0, w_l_hat)`.
pub fn stationary_from_funnel(p: &ModelParams, opts: &ExitOptions) -> Result<StationaryResult> {
    let init = point_density(SectionId::S1, Component::Manifold, w_l_hat(p).min(-1e-12));
    stationary_density(p, &init, opts)
}

/// Fractions of small, medium and large oscillations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fractions {
    pub small: f64,
    pub medium: f64,
    pub large: f64,
}

impl Fractions {
    pub fn one_hot(c: SizeClass) -> Self {
        let mut v = [0.0; 3];
        v[c.index()] = 1.0;
        Self {
            small: v[0],
            medium: v[1],
            large: v[2],
        }
    }

    pub fn from_stationary(st: &StationaryResult, w2: f64) -> Self {
        let s2 = st.section(SectionId::S2);
        let total = s2.norm();
        // adding zero turns a negative zero into a plain one
        let small = s2.component_mass(Component::Nullcline) / total + 0.0;
        let large = s2.ray_mass_below(w2) / total + 0.0;
        Self {
            small,
            large,
            medium: (1.0 - small - large).max(0.0),
        }
    }
}

/// Oscillation fractions from the stationary second-section density; the
/// deterministic class when `D = 0`.
pub fn oscillation_fractions(p: &ModelParams, opts: &ExitOptions) -> Result<Fractions> {
    if p.noise_d == 0.0 {
        return Ok(Fractions::one_hot(periodic_orbit(p)?.size_class));
    }
    let st = stationary_from_funnel(p, opts)?;
    Ok(Fractions::from_stationary(&st, crate::orbit::w2_hat(p)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_exit_is_normalised() {
        let p = ModelParams::default().with_noise(4e-4);
        let d = exit_density_point(Point2::new(0.0, -0.0006), SectionId::S2, &p, &ExitOptions::default()).unwrap();
        assert!((d.norm() - 1.0).abs() < 1e-9);
        assert!(d.nodes().all(|n| n.value >= 0.0));
    }

    #[test]
    fn defaults_mix_small_and_large() {
        let p = ModelParams::default();
        let st = stationary_from_funnel(&p, &ExitOptions::default()).unwrap();
        for d in &st.sections {
            assert!((d.norm() - 1.0).abs() < 1e-9, "{}", d.norm());
        }
        let f = Fractions::from_stationary(&st, crate::orbit::w2_hat(&p).unwrap());
        assert!(f.small >= 0.1 && f.large >= 0.1, "{f:?}");
    }
}
