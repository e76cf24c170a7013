use pwl_fhn::mc::{count_oscillations, simulate, OscillationSummary, SimConfig};
use pwl_fhn::orbit::periodic_orbit;
use pwl_fhn::section::SectionId;
use pwl_fhn::ModelParams;

fn run(p: &ModelParams, dt: f64, seed: u64) -> OscillationSummary {
    let cfg = SimConfig {
        dt,
        t_end: 1e5,
        seed,
        ..SimConfig::default()
    };
    count_oscillations(&simulate(p, &cfg).unwrap(), p)
}

/// Largest difference between two runs in units of their combined
/// standard error.
fn z_max(a: &OscillationSummary, b: &OscillationSummary) -> f64 {
    let fa = [a.fractions.small, a.fractions.medium, a.fractions.large];
    let fb = [b.fractions.small, b.fractions.medium, b.fractions.large];
    (0..3)
        .map(|k| (fa[k] - fb[k]).abs() / a.std_errors[k].hypot(b.std_errors[k]))
        .fold(0.0, f64::max)
}

#[test]
fn halving_the_step_keeps_fractions() {
    let p = ModelParams::default();
    let z = z_max(&run(&p, 1e-3, 31), &run(&p, 5e-4, 32));
    assert!(z < 3.0, "{z}");
}

#[test]
fn disjoint_seeds_agree() {
    let p = ModelParams::default();
    let z = z_max(&run(&p, 1e-3, 41), &run(&p, 1e-3, 42));
    assert!(z < 3.0, "{z}");
}

#[test]
fn zero_noise_returns_settle() {
    let p = ModelParams::default().with_lambda(0.032).with_noise(0.0);
    let cfg = SimConfig {
        t_end: 3000.0,
        burn_in: 1000.0,
        ..SimConfig::default()
    };
    let out = simulate(&p, &cfg).unwrap();
    let ws: Vec<f64> = out
        .sections
        .iter()
        .filter(|h| h.section == SectionId::S1)
        .map(|h| h.coord)
        .collect();
    assert!(ws.len() > 5);
    let spread = ws.iter().copied().fold(f64::NEG_INFINITY, f64::max) - ws.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(spread < 1e-6, "{spread}");
    let exact = periodic_orbit(&p).unwrap().section_point;
    assert!((ws[0] - exact.w).abs() < 1e-3 * (1.0 + exact.w.abs()), "{} {:?}", ws[0], exact);
}
