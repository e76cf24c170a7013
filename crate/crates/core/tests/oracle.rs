//! Analytic exit densities against simulated first exits.

use pwl_fhn::exit::{exit_density_point, ExitOptions};
use pwl_fhn::mc::{first_exits, SimConfig};
use pwl_fhn::orbit::w_l_hat;
use pwl_fhn::section::{Section, SectionId};
use pwl_fhn::{ModelParams, Point2};

const PATHS: usize = 100_000;
const BINS: usize = 40;

/// L1 distance between the analytic density and the histogram of simulated
/// first exits, on equal arc-length bins spanning the simulated range.
fn l1_distance(p: &ModelParams, x0: Point2, to: SectionId, seed: u64) -> f64 {
    let analytic = exit_density_point(x0, to, p, &ExitOptions::default()).unwrap();
    let sec = Section::new(to, p);
    let cfg = SimConfig {
        t_end: 2000.0,
        seed,
        ..SimConfig::default()
    };
    let arcs: Vec<f64> = first_exits(p, x0, to, PATHS, &cfg)
        .unwrap()
        .into_iter()
        .flatten()
        .map(|h| sec.arc(h.component, h.coord))
        .collect();
    let lo = arcs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = arcs.iter().copied().fold(f64::NEG_INFINITY, f64::max) * (1.0 + 1e-12);
    let edges: Vec<f64> = (0..=BINS).map(|k| lo + (hi - lo) * k as f64 / BINS as f64).collect();
    let mut sim = vec![0.0; BINS];
    for s in &arcs {
        let k = edges.partition_point(|e| e <= s).saturating_sub(1).min(BINS - 1);
        sim[k] += 1.0 / PATHS as f64;
    }
    let norm = analytic.norm();
    let binned = analytic.arc_histogram(&sec, &edges);
    let inside: f64 = binned.iter().zip(&sim).map(|(a, b)| (a / norm - b).abs()).sum();
    let outside = 1.0 - binned.iter().sum::<f64>() / norm;
    inside + outside.abs()
}

#[test]
fn funnel_exit_below_first_proxy() {
    let p = ModelParams::default().with_lambda(0.026);
    let d = l1_distance(&p, Point2::new(0.0, w_l_hat(&p)), SectionId::S2, 21);
    assert!(d < 0.05, "{d}");
}

#[test]
fn funnel_exit_between_proxies() {
    let p = ModelParams::default().with_lambda(0.030).with_noise(6e-4);
    let d = l1_distance(&p, Point2::new(0.0, w_l_hat(&p)), SectionId::S2, 22);
    assert!(d < 0.05, "{d}");
}

#[test]
fn return_through_left_region() {
    let p = ModelParams::default();
    let d = l1_distance(&p, Point2::new(0.0, 1.2), SectionId::S1, 23);
    assert!(d < 0.05, "{d}");
}
