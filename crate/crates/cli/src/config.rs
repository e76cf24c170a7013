//! Run configuration: a flat JSON object of scalars.
//!
//! Values come from the built-in defaults, then the `--config` file, then
//! command-line flags, each overriding the one before. Optional ranges left
//! as `null` take a per-command default.

use std::path::Path;

use pwl_fhn::exit::{ExitOptions, MmoOptions, SweepAxis};
use pwl_fhn::mc::SimConfig;
use pwl_fhn::model::Nullcline;
use pwl_fhn::ModelParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub lambda: f64,
    #[serde(rename = "D")]
    pub noise_d: f64,
    #[serde(rename = "eta_L")]
    pub eta_l: f64,
    #[serde(rename = "eta_R")]
    pub eta_r: f64,
    pub v1: f64,
    pub w1: f64,

    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub d_min: Option<f64>,
    pub d_max: Option<f64>,
    pub epsilon_min: Option<f64>,
    pub epsilon_max: Option<f64>,
    pub sweep_axis: SweepAxis,
    pub sweep_min: Option<f64>,
    pub sweep_max: Option<f64>,
    /// Points per grid axis.
    pub grid: Option<usize>,

    pub threshold: f64,
    pub include_diffusion: bool,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub lambda_tol: f64,

    pub seed: u64,
    pub dt: f64,
    pub t_end: Option<f64>,
    pub burn_in: Option<f64>,
    pub model: Nullcline,
    pub stride: usize,
    /// Monte-Carlo trajectories for `exit-dist`; 0 skips the simulation.
    pub paths: usize,
    pub bins: usize,

    pub out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = ModelParams::default();
        let e = ExitOptions::default();
        let m = MmoOptions::default();
        Self {
            epsilon: p.epsilon,
            alpha: p.alpha,
            sigma: p.sigma,
            lambda: p.lambda,
            noise_d: p.noise_d,
            eta_l: p.eta_l,
            eta_r: p.eta_r,
            v1: p.v1,
            w1: p.w1,
            lambda_min: None,
            lambda_max: None,
            d_min: None,
            d_max: None,
            epsilon_min: None,
            epsilon_max: None,
            sweep_axis: SweepAxis::Eta1,
            sweep_min: None,
            sweep_max: None,
            grid: None,
            threshold: m.threshold,
            include_diffusion: e.include_diffusion,
            min_nodes: e.min_nodes,
            max_nodes: e.max_nodes,
            tol: e.tol,
            max_iter: e.max_iter,
            lambda_tol: m.lambda_tol,
            seed: 0,
            dt: SimConfig::default().dt,
            t_end: None,
            burn_in: None,
            model: Nullcline::Pwl,
            stride: 100,
            paths: 0,
            bins: 60,
            out: "out".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            epsilon: self.epsilon,
            alpha: self.alpha,
            sigma: self.sigma,
            lambda: self.lambda,
            noise_d: self.noise_d,
            eta_l: self.eta_l,
            eta_r: self.eta_r,
            v1: self.v1,
            w1: self.w1,
        }
    }

    pub fn exit_options(&self) -> ExitOptions {
        ExitOptions {
            min_nodes: self.min_nodes,
            max_nodes: self.max_nodes,
            include_diffusion: self.include_diffusion,
            tol: self.tol,
            max_iter: self.max_iter,
            ..ExitOptions::default()
        }
    }

    pub fn mmo_options(&self) -> MmoOptions {
        MmoOptions {
            threshold: self.threshold,
            lambda_tol: self.lambda_tol,
            exit: self.exit_options(),
        }
    }

    /// Simulation settings with per-command fallbacks for the horizon.
    pub fn sim_config(&self, t_end: f64, burn_in: f64) -> SimConfig {
        SimConfig {
            dt: self.dt,
            t_end: self.t_end.unwrap_or(t_end),
            seed: self.seed,
            burn_in: self.burn_in.unwrap_or(burn_in),
            model: self.model,
            stride: self.stride,
            start: None,
        }
    }
}

/// `n` evenly spaced values from `a` to `b`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// `n` geometrically spaced values from `a` to `b`, both positive.
pub fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_library() {
        assert_eq!(RunConfig::default().params(), ModelParams::default());
        assert_eq!(RunConfig::default().exit_options(), ExitOptions::default());
    }

    #[test]
    fn spacing() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        let g = geomspace(1e-4, 1e-2, 3);
        assert!((g[1] - 1e-3).abs() < 1e-15);
    }
}
