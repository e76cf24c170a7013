//! Oscillation counts and section histograms of a simulated path.

use serde::Serialize;

use super::SimOutput;
use crate::error::{Error, Result};
use crate::exit::Fractions;
use crate::model::ModelParams;
use crate::orbit::SizeClass;
use crate::section::{Component, SectionId};

/// One revolution, from a first-section crossing to the next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscillationRecord {
    pub t_start: f64,
    pub t_end: f64,
    pub v_max: f64,
    pub size_class: SizeClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationSummary {
    pub records: Vec<OscillationRecord>,
    /// Small, medium and large counts.
    pub counts: [usize; 3],
    pub fractions: Fractions,
    /// Binomial standard errors of the fractions.
    pub std_errors: [f64; 3],
    /// Set when there are too few cycles to trust the fractions.
    pub warning: Option<String>,
}

/// Classifies every complete cycle of `out` by its peak `v`.
pub fn count_oscillations(out: &SimOutput, p: &ModelParams) -> OscillationSummary {
    let mut records = Vec::new();
    let mut open: Option<f64> = None;
    let mut peak = f64::NEG_INFINITY;
    for hit in &out.sections {
        if open.is_some() {
            peak = peak.max(hit.v_max);
        }
        if hit.section == SectionId::S1 {
            if let Some(t0) = open {
                records.push(OscillationRecord {
                    t_start: t0,
                    t_end: hit.t,
                    v_max: peak,
                    size_class: SizeClass::of(peak, p),
                });
            }
            open = Some(hit.t);
            peak = f64::NEG_INFINITY;
        }
    }
    let mut counts = [0usize; 3];
    for r in &records {
        counts[r.size_class.index()] += 1;
    }
    let n = records.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { counts[k] as f64 / n as f64 };
    let fractions = Fractions {
        small: frac(0),
        medium: frac(1),
        large: frac(2),
    };
    let se = |k: usize| if n == 0 { f64::NAN } else { (frac(k) * (1.0 - frac(k)) / n as f64).sqrt() };
    let warning = (n < 100).then(|| format!("only {n} complete cycles"));
    OscillationSummary {
        records,
        counts,
        fractions,
        std_errors: [se(0), se(1), se(2)],
        warning,
    }
}

/// Histogram of crossing coordinates on one component of a section.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    /// Crossings of the whole section, the normalising count.
    pub total: u64,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.bin_width()
    }

    /// Density per unit coordinate; integrates to the share of crossings
    /// that landed in range.
    pub fn density(&self) -> Vec<f64> {
        let scale = 1.0 / (self.total as f64 * self.bin_width());
        self.counts.iter().map(|&c| c as f64 * scale).collect()
    }

    pub fn add(&mut self, coord: f64) {
        self.total += 1;
        if coord >= self.lo && coord < self.hi {
            let last = self.counts.len() - 1;
            let k = ((coord - self.lo) / self.bin_width()) as usize;
            self.counts[k.min(last)] += 1;
        }
    }
}

/// Histogram of the crossings of `section` that land on `component` within
/// `[lo, hi)`, normalised by all crossings of the section.
pub fn section_histogram(
    hits: &[super::SectionHit],
    section: SectionId,
    component: Component,
    lo: f64,
    hi: f64,
    bins: usize,
) -> Result<Histogram> {
    if !(hi > lo) || bins == 0 {
        return Err(Error::Precondition(format!("bad histogram range [{lo}, {hi}) with {bins} bins")));
    }
    let mut h = Histogram {
        lo,
        hi,
        counts: vec![0; bins],
        total: 0,
    };
    for hit in hits.iter().filter(|h| h.section == section) {
        if hit.component == component {
            h.add(hit.coord);
        } else {
            h.total += 1;
        }
    }
    if h.total == 0 {
        return Err(Error::Precondition(format!("no crossings of {section:?} to histogram")));
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::{simulate, SimConfig};
    use crate::model::Point2;

    #[test]
    fn deterministic_medium_orbit() {
        // between the two canard proxies the attracting orbit is medium
        let p = ModelParams::default().with_lambda(0.029).with_noise(0.0);
        let cfg = SimConfig {
            t_end: 3000.0,
            burn_in: 500.0,
            ..SimConfig::default()
        };
        let out = simulate(&p, &cfg).unwrap();
        let s = count_oscillations(&out, &p);
        assert!(s.records.len() > 5);
        assert_eq!(s.counts[1], s.records.len(), "{:?}", s.counts);
    }

    #[test]
    fn zero_noise_single_bin() {
        let p = ModelParams::default().with_lambda(0.032).with_noise(0.0);
        let cfg = SimConfig {
            t_end: 4000.0,
            burn_in: 1000.0,
            start: Some(Point2::new(0.0, -0.01)),
            ..SimConfig::default()
        };
        let out = simulate(&p, &cfg).unwrap();
        let ws: Vec<f64> = out
            .sections
            .iter()
            .filter(|h| h.section == SectionId::S1)
            .map(|h| h.coord)
            .collect();
        let mean = ws.iter().sum::<f64>() / ws.len() as f64;
        let h = section_histogram(&out.sections, SectionId::S1, Component::Manifold, mean - 0.05, mean + 0.05, 50)
            .unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert!(section_histogram(&out.sections, SectionId::S1, Component::Manifold, 1.0, 0.0, 5).is_err());
    }
}
