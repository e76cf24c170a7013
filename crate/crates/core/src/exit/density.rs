//! Densities on the sections, stored on equally spaced patches.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::section::{Component, Section, SectionId};

/// Equally spaced nodes on one component of a section; `values` is density
/// per unit of the component coordinate (`w` on the ray, `v` on the
/// segment), interpolated linearly between nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Patch {
    pub component: Component,
    pub lo: f64,
    pub h: f64,
    pub values: Vec<f64>,
}

impl Patch {
    pub fn zeros(component: Component, lo: f64, h: f64, n: usize) -> Self {
        Self {
            component,
            lo,
            h,
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.h * (self.len().max(1) - 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        self.lo + self.h * j as f64
    }

    /// Trapezoid weight of node `j`.
    pub fn weight(&self, j: usize) -> f64 {
        if self.len() == 1 {
            return 1.0;
        }
        if j == 0 || j + 1 == self.len() {
            0.5 * self.h
        } else {
            self.h
        }
    }

    pub fn mass(&self) -> f64 {
        (0..self.len()).map(|j| self.weight(j) * self.values[j]).sum()
    }

    /// Mass of the piecewise linear density on `(-inf, x]`.
    pub fn mass_below(&self, x: f64) -> f64 {
        if self.len() < 2 {
            return if self.len() == 1 && self.lo <= x { self.values[0] } else { 0.0 };
        }
        let mut m = 0.0;
        for j in 0..self.len() - 1 {
            let (a, b) = (self.node(j), self.node(j + 1));
            if x >= b {
                m += 0.5 * self.h * (self.values[j] + self.values[j + 1]);
            } else if x > a {
                let f = (x - a) / self.h;
                let vx = self.values[j] + f * (self.values[j + 1] - self.values[j]);
                m += 0.5 * (x - a) * (self.values[j] + vx);
                break;
            } else {
                break;
            }
        }
        m
    }

    /// Linear interpolant at `x`, zero outside.
    pub fn eval(&self, x: f64) -> f64 {
        if self.is_empty() || x < self.lo || x > self.hi() {
            return 0.0;
        }
        if self.len() == 1 {
            return self.values[0];
        }
        let f = (x - self.lo) / self.h;
        let j = (f.floor() as usize).min(self.len() - 2);
        let r = f - j as f64;
        self.values[j] * (1.0 - r) + self.values[j + 1] * r
    }
}

/// A probability density on one section.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectionDensity {
    pub section: SectionId,
    pub patches: Vec<Patch>,
}

/// One grid node with its trapezoid mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub component: Component,
    pub coord: f64,
    pub value: f64,
    pub mass: f64,
}

impl SectionDensity {
    pub fn new(section: SectionId, patches: Vec<Patch>) -> Self {
        Self { section, patches }
    }

    /// Total trapezoid mass.
    pub fn norm(&self) -> f64 {
        self.patches.iter().map(Patch::mass).sum()
    }

    pub fn component_mass(&self, c: Component) -> f64 {
        self.patches.iter().filter(|p| p.component == c).map(Patch::mass).sum()
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        self.patches.iter().flat_map(|p| {
            (0..p.len()).map(move |j| Node {
                component: p.component,
                coord: p.node(j),
                value: p.values[j],
                mass: p.weight(j) * p.values[j],
            })
        })
    }

    pub fn node_count(&self) -> usize {
        self.patches.iter().map(Patch::len).sum()
    }

    /// Scales to unit mass. Returns the mass before scaling.
    pub fn normalize(&mut self) -> f64 {
        let m = self.norm();
        if m > 0.0 {
            for p in &mut self.patches {
                for v in &mut p.values {
                    *v /= m;
                }
            }
        }
        m
    }

    /// Density at a component coordinate.
    pub fn eval(&self, c: Component, x: f64) -> f64 {
        self.patches.iter().filter(|p| p.component == c).map(|p| p.eval(x)).sum()
    }

    /// Mass on the ray with `w <= x`.
    pub fn ray_mass_below(&self, x: f64) -> f64 {
        self.patches
            .iter()
            .filter(|p| p.component == Component::Manifold)
            .map(|p| p.mass_below(x))
            .sum()
    }

    /// Mean of the coordinate on one component, `None` without mass.
    pub fn component_mean(&self, c: Component) -> Option<f64> {
        let (m, s) = self
            .nodes()
            .filter(|n| n.component == c)
            .fold((0.0, 0.0), |(m, s), n| (m + n.mass, s + n.mass * n.coord));
        (m > 0.0).then(|| s / m)
    }

    /// Probability of each arc-length bin, with the same convention as
    /// [`Section::arc`].
    pub fn arc_histogram(&self, sec: &Section, edges: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; edges.len().saturating_sub(1)];
        for p in &self.patches {
            if p.len() < 2 {
                if let Some(v) = p.values.first() {
                    add_point(&mut out, edges, sec.arc(p.component, p.lo), *v);
                }
                continue;
            }
            // integrate each cell exactly, split at bin edges in coordinate space
            let mut cuts: Vec<f64> = edges
                .iter()
                .map(|&s| coord_of_arc(sec, p.component, s))
                .filter_map(|x| x.filter(|x| *x > p.lo && *x < p.hi()))
                .collect();
            for j in 0..p.len() {
                cuts.push(p.node(j));
            }
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cuts.dedup();
            for w in cuts.windows(2) {
                let (a, b) = (w[0], w[1]);
                let m = 0.5 * (b - a) * (p.eval(a) + p.eval(b));
                add_point(&mut out, edges, sec.arc(p.component, 0.5 * (a + b)), m);
            }
        }
        out
    }
}

fn coord_of_arc(sec: &Section, c: Component, s: f64) -> Option<f64> {
    let (cc, x) = sec.from_arc(s);
    (cc == c).then_some(x)
}

fn add_point(out: &mut [f64], edges: &[f64], s: f64, m: f64) {
    if edges.len() < 2 || s < edges[0] || s > edges[edges.len() - 1] {
        return;
    }
    let k = edges.partition_point(|e| *e <= s).saturating_sub(1).min(out.len() - 1);
    out[k] += m;
}

/// Gaussian-weighted linear flux profile `weight * (b0 + b1 (s - mu)) N(s; mu, sigma)`
/// in a component coordinate. `sigma == 0` is a point mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Atom {
    pub component: Component,
    pub weight: f64,
    pub mu: f64,
    pub sigma: f64,
    pub b0: f64,
    pub b1: f64,
}

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// `Phi(zb) - Phi(za)` without cancellation in either tail.
pub(crate) fn cdf_diff(za: f64, zb: f64) -> f64 {
    use statrs::function::erf::erfc;
    let r = std::f64::consts::FRAC_1_SQRT_2;
    if za >= 0.0 {
        0.5 * (erfc(za * r) - erfc(zb * r))
    } else if zb <= 0.0 {
        0.5 * (erfc(-zb * r) - erfc(-za * r))
    } else {
        1.0 - 0.5 * (erfc(-za * r) + erfc(zb * r))
    }
}

impl Atom {
    pub fn point(component: Component, mu: f64, weight: f64) -> Self {
        Self {
            component,
            weight,
            mu,
            sigma: 0.0,
            b0: 1.0,
            b1: 0.0,
        }
    }

    /// Mass on `[a, b]`.
    pub fn mass_on(&self, a: f64, b: f64) -> f64 {
        if self.sigma == 0.0 {
            return if self.mu >= a && self.mu <= b { self.weight * self.b0 } else { 0.0 };
        }
        let za = (a - self.mu) / self.sigma;
        let zb = (b - self.mu) / self.sigma;
        self.weight * (self.b0 * cdf_diff(za, zb) + self.b1 * self.sigma * (phi(za) - phi(zb)))
    }

    /// Adds the atom's mass on each cell to the nodes of `patch` by
    /// integrating against the hat functions, as node masses.
    pub fn project(&self, patch: &Patch, masses: &mut [f64]) {
        let n = patch.len();
        if n == 0 {
            return;
        }
        if n == 1 {
            if (self.mu - patch.lo).abs() <= 0.0 {
                masses[0] += self.weight * self.b0;
            }
            return;
        }
        let h = patch.h;
        let lo = patch.lo;
        let hi = patch.hi();
        if self.sigma == 0.0 {
            if self.mu < lo || self.mu > hi {
                return;
            }
            let f = ((self.mu - lo) / h).clamp(0.0, (n - 1) as f64);
            let j = (f.floor() as usize).min(n - 2);
            let r = f - j as f64;
            let m = self.weight * self.b0;
            masses[j] += m * (1.0 - r);
            masses[j + 1] += m * r;
            return;
        }
        let reach = 7.5 * self.sigma;
        if self.sigma >= 2.5 * h && n >= 3 {
            self.project_smooth(patch, masses);
            return;
        }
        let a = (self.mu - reach).max(lo);
        let b = (self.mu + reach).min(hi);
        if a >= b {
            return;
        }
        let j0 = (((a - lo) / h).floor() as usize).min(n - 2);
        let j1 = (((b - lo) / h).ceil() as usize).clamp(j0 + 1, n - 1);
        let s = self.sigma;
        // moments over each cell in y = x - mu, standard-normal scaled
        let mut prev: Option<(f64, f64, f64)> = None;
        for j in j0..j1 {
            let xa = lo + h * j as f64;
            let xb = lo + h * (j + 1) as f64;
            let (za, pa) = match prev {
                Some((z, p, _)) => (z, p),
                None => {
                    let z = (xa - self.mu) / s;
                    (z, phi(z))
                }
            };
            let zb = (xb - self.mu) / s;
            let pb = phi(zb);
            let d = cdf_diff(za, zb);
            prev = Some((zb, pb, d));
            let m0 = d;
            let m1 = s * (pa - pb);
            let m2 = s * s * (d + za * pa - zb * pb);
            // integrand (b0 + b1 y) against the hats in y
            let ya = xa - self.mu;
            let yb = xb - self.mu;
            let k0 = self.b0 * m0 + self.b1 * m1;
            let k1 = self.b0 * m1 + self.b1 * m2;
            let left = (yb * k0 - k1) / h;
            let right = (k1 - ya * k0) / h;
            masses[j] += self.weight * left;
            masses[j + 1] += self.weight * right;
        }
    }

    /// Hat masses of the cell `[xa, xb]` on its two end nodes.
    fn cell(&self, xa: f64, xb: f64) -> (f64, f64) {
        let s = self.sigma;
        let (za, zb) = ((xa - self.mu) / s, (xb - self.mu) / s);
        let (pa, pb) = (phi(za), phi(zb));
        let m0 = cdf_diff(za, zb);
        let m1 = s * (pa - pb);
        let m2 = s * s * (m0 + za * pa - zb * pb);
        let (ya, yb) = (xa - self.mu, xb - self.mu);
        let k0 = self.b0 * m0 + self.b1 * m1;
        let k1 = self.b0 * m1 + self.b1 * m2;
        let h = xb - xa;
        (self.weight * (yb * k0 - k1) / h, self.weight * (k1 - ya * k0) / h)
    }

    /// Hat projection of an atom that is wide against the spacing: interior
    /// nodes from a midpoint rule with derivative corrections, rescaled to
    /// the exact mass, and the half hats at the patch ends exactly.
    fn project_smooth(&self, patch: &Patch, masses: &mut [f64]) {
        let n = patch.len();
        let h = patch.h;
        let (lo, hi) = (patch.lo, patch.hi());
        let s2 = self.sigma * self.sigma;
        let reach = 7.5 * self.sigma;
        let a = (self.mu - reach).max(lo);
        let b = (self.mu + reach).min(hi);
        if a >= b {
            return;
        }
        let mut total = self.mass_on(lo, hi);
        if lo >= self.mu - reach {
            let (left, _) = self.cell(lo, lo + h);
            masses[0] += left;
            total -= left;
        }
        if hi <= self.mu + reach {
            let (_, right) = self.cell(hi - h, hi);
            masses[n - 1] += right;
            total -= right;
        }
        let j0 = (((a - lo) / h).floor() as usize).clamp(1, n - 2);
        let j1 = (((b - lo) / h).ceil() as usize).clamp(j0, n - 2);
        let mut y = patch.node(j0) - self.mu;
        let mut g = (-0.5 * y * y / s2).exp() / (SQRT_2PI * self.sigma);
        let step = (-h * h / s2).exp();
        let mut ratio = (-(y * h) / s2 - 0.5 * h * h / s2).exp();
        let (c2, c4) = (h * h / 12.0, h.powi(4) / 360.0);
        let mut vals = Vec::with_capacity(j1 - j0 + 1);
        for _ in j0..=j1 {
            let z = y / self.sigma;
            let lin = self.b0 + self.b1 * y;
            let he2 = z * z - 1.0;
            let he3 = z * (z * z - 3.0);
            let he4 = z * z * (z * z - 6.0) + 3.0;
            let d2 = lin * he2 / s2 - 2.0 * self.b1 * z / self.sigma;
            let d4 = lin * he4 / (s2 * s2) - 4.0 * self.b1 * he3 / (s2 * self.sigma);
            vals.push(h * g * (lin + c2 * d2 + c4 * d4));
            g *= ratio;
            ratio *= step;
            y += h;
        }
        let sum: f64 = vals.iter().sum();
        let scale = if sum != 0.0 && total.is_finite() { total / sum } else { self.weight };
        for (k, v) in vals.into_iter().enumerate() {
            masses[j0 + k] += v * scale;
        }
    }
}

/// Picks patches on one component that cover the given atoms. The support
/// is the union of `mu ± 6.5 sigma` over all but the lightest atoms, padded
/// by 10% and clipped to `[lo, hi]`. The spacing varies along the support:
/// each stretch resolves the narrow end of the widths of the atoms that
/// carry mass there, and empty stretches get a coarse spacing.
pub(crate) fn plan_patches(
    atoms: &[Atom],
    lo: f64,
    hi: f64,
    min_nodes: usize,
    max_nodes: usize,
) -> Vec<(f64, f64, usize)> {
    let mass: Vec<f64> = atoms.iter().map(|a| a.mass_on(lo, hi).abs()).collect();
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Vec::new();
    }
    // drop the lightest atoms up to a tiny share of the total
    let mut order: Vec<usize> = (0..atoms.len()).collect();
    order.sort_by(|&i, &j| mass[i].total_cmp(&mass[j]));
    let mut dropped = 0.0;
    let mut keep = vec![true; atoms.len()];
    for &i in &order {
        if dropped + mass[i] > 1e-9 * total {
            break;
        }
        dropped += mass[i];
        keep[i] = false;
    }
    let support = |a: &Atom| {
        let r = if a.sigma > 0.0 { 6.5 * a.sigma } else { 1e-9 * (1.0 + a.mu.abs()) };
        ((a.mu - r).max(lo), (a.mu + r).min(hi))
    };
    let spans: Vec<(f64, f64)> = atoms
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(a, _)| support(a))
        .filter(|s| s.0 < s.1)
        .collect();
    let padded: Vec<(f64, f64)> = merge(spans)
        .into_iter()
        .map(|(a, b)| {
            let pad = 0.1 * (b - a);
            ((a - pad).max(lo), (b + pad).min(hi))
        })
        .collect();
    const BINS: usize = 256;
    let mut reqs = Vec::new();
    for (a, b) in merge(padded) {
        let len = b - a;
        let coarse = len / (min_nodes - 1) as f64;
        let bw = len / BINS as f64;
        // per bin, atom mass by width class, four classes per octave below `coarse`
        const CLASSES: usize = 160;
        let mut bins = vec![[0.0f64; CLASSES]; BINS];
        for (i, at) in atoms.iter().enumerate() {
            if !keep[i] || at.sigma <= 0.0 {
                continue;
            }
            let (x0, x1) = (at.mu - 4.0 * at.sigma, at.mu + 4.0 * at.sigma);
            if x1 < a || x0 > b {
                continue;
            }
            let k0 = (((x0 - a) / bw).floor().max(0.0) as usize).min(BINS - 1);
            let k1 = (((x1 - a) / bw).floor().max(0.0) as usize).min(BINS - 1);
            let class = ((4.0 * (coarse / at.sigma).log2()).floor().max(0.0) as usize).min(CLASSES - 1);
            // rough share of the atom's mass per bin
            let share = mass[i] * (bw / (2.5 * at.sigma)).min(1.0);
            for bin in &mut bins[k0..=k1] {
                bin[class] += share;
            }
        }
        for (k, bin) in bins.iter().enumerate() {
            let wt: f64 = bin.iter().sum();
            let mut h = coarse;
            if wt >= 1e-6 * total {
                let mut acc = 0.0;
                for c in (0..CLASSES).rev() {
                    acc += bin[c];
                    if acc >= 0.2 * wt {
                        // light stretches only need their mass in roughly the right place
                        let relax = (1e-3 * total / wt).sqrt().clamp(1.0, 8.0);
                        h = h.min(relax * 0.5 * coarse * 2f64.powf(-((c + 1) as f64) / 4.0));
                        break;
                    }
                }
            }
            reqs.push((a + k as f64 * bw, a + (k + 1) as f64 * bw, h));
        }
    }
    tile(reqs, max_nodes)
}

/// Uniform patches covering the union of `(x0, x1, h)` requirements, each
/// stretch at the finest spacing required over it. Neighbouring stretches
/// within a factor of two are joined. Spacings are scaled up evenly when
/// the node count would exceed `max_nodes`.
pub(crate) fn tile(reqs: Vec<(f64, f64, f64)>, max_nodes: usize) -> Vec<(f64, f64, usize)> {
    // sweep over interval ends, keeping the spacings of the covering requirements
    let mut events: Vec<(f64, bool, f64)> = reqs
        .iter()
        .filter(|r| r.1 > r.0)
        .flat_map(|r| [(r.0, true, r.2), (r.1, false, r.2)])
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut active: BTreeMap<u64, usize> = BTreeMap::new();
    let mut pieces: Vec<(f64, f64, f64)> = Vec::new();
    let mut k = 0;
    while k < events.len() {
        let x0 = events[k].0;
        while k < events.len() && events[k].0 == x0 {
            let (_, open, h) = events[k];
            let key = h.to_bits();
            if open {
                *active.entry(key).or_insert(0) += 1;
            } else if let Some(c) = active.get_mut(&key) {
                *c -= 1;
                if *c == 0 {
                    active.remove(&key);
                }
            }
            k += 1;
        }
        let Some((&key, _)) = active.iter().next() else { continue };
        let Some(x1) = events.get(k).map(|e| e.0) else { break };
        let h = f64::from_bits(key);
        match pieces.last_mut() {
            Some(last) if last.1 == x0 && h <= 2.0 * last.2 && last.2 <= 2.0 * h => {
                last.1 = x1;
                last.2 = last.2.min(h);
            }
            _ => pieces.push((x0, x1, h)),
        }
    }
    let count = |scale: f64| -> usize {
        pieces
            .iter()
            .map(|p| ((p.1 - p.0) / (scale * p.2)).ceil() as usize + 1)
            .sum()
    };
    let mut scale = 1.0;
    while count(scale) > max_nodes && scale < 1e12 {
        scale *= 1.25;
    }
    pieces
        .into_iter()
        .map(|(x0, x1, h)| {
            let n = (((x1 - x0) / (scale * h)).ceil() as usize + 1).max(2);
            (x0, (x1 - x0) / (n - 1) as f64, n)
        })
        .collect()
}

/// Node masses of the projection of `atoms` onto `patches`, which must not
/// overlap within a component. Patches nothing lands on stay `None`.
pub(crate) fn project_atoms(atoms: &[Atom], patches: &[Patch]) -> Vec<Option<Vec<f64>>> {
    let mut index: Vec<(Component, f64, f64, usize)> =
        patches.iter().enumerate().map(|(i, p)| (p.component, p.lo, p.hi(), i)).collect();
    index.sort_by(|x, y| (x.0 as u8).cmp(&(y.0 as u8)).then(x.1.total_cmp(&y.1)));
    let mut out: Vec<Option<Vec<f64>>> = vec![None; patches.len()];
    for a in atoms {
        let reach = 7.5 * a.sigma;
        let (x0, x1) = (a.mu - reach, a.mu + reach);
        let start = index.partition_point(|e| (e.0 as u8) < (a.component as u8) || e.0 == a.component && e.2 < x0);
        for e in &index[start..] {
            if e.0 != a.component || e.1 > x1 {
                break;
            }
            let p = &patches[e.3];
            a.project(p, out[e.3].get_or_insert_with(|| vec![0.0; p.len()]));
        }
    }
    out
}

pub(crate) fn merge(mut spans: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    spans.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in spans {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}
