//! The subcommands.

use std::path::Path;

use pwl_fhn::exit::{
    exit_density_point, extrapolate, mmo_region, oscillation_fractions, slope_details, slope_sweep,
    stationary_from_funnel, Fractions, SectionDensity, SweepAxis,
};
use pwl_fhn::mc::{count_oscillations, first_exits, section_histogram, simulate, SimConfig};
use pwl_fhn::model::{epsilon_crit, validate, ModelParams, Point2};
use pwl_fhn::orbit::{bifurcation_diagram, two_param_diagram, w2_hat, w_l_hat};
use pwl_fhn::section::{Component, Section, SectionId};

use crate::config::{geomspace, linspace, RunConfig};
use crate::output::{Cell, OutDir};
use crate::{CliError, Command};

use Cell::{F, O, S, U};

pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<(), CliError> {
    let p = cfg.params();
    let report = validate(&p);
    let mut out = OutDir::create(Path::new(&cfg.out))?;
    if cmd == Command::Validate {
        let rows = report
            .violations
            .iter()
            .map(|v| vec![S("violation".into()), S(v.constraint.into()), S(v.detail.clone())])
            .chain(report.notes.iter().map(|n| vec![S("note".into()), S(String::new()), S(n.clone())]));
        out.csv("validation.csv", &["kind", "constraint", "detail"], rows)?;
        out.finish(cmd.name(), cfg)?;
        println!("{report}");
        return if report.is_valid() {
            Ok(())
        } else {
            Err(CliError::Validation(report.to_string()))
        };
    }
    if !report.is_valid() {
        return Err(CliError::Validation(report.to_string()));
    }
    match cmd {
        Command::Validate => unreachable!(),
        Command::Bifurcation => bifurcation(&p, cfg, &mut out)?,
        Command::TwoParam => two_param(&p, cfg, &mut out)?,
        Command::ExitDist => exit_dist(&p, cfg, &mut out)?,
        Command::Stationary => stationary(&p, cfg, &mut out)?,
        Command::MmoRegion => mmo(&p, cfg, &mut out)?,
        Command::Slopes => slopes(&p, cfg, &mut out)?,
        Command::Simulate => sim(&p, cfg, &mut out)?,
        Command::Compare => compare(&p, cfg, &mut out)?,
    }
    out.finish(cmd.name(), cfg)
}

fn bifurcation(p: &ModelParams, cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    let lambdas = linspace(cfg.lambda_min.unwrap_or(0.0), cfg.lambda_max.unwrap_or(0.2), cfg.grid.unwrap_or(201));
    let rows = bifurcation_diagram(p, &lambdas)?;
    out.csv(
        "bifurcation.csv",
        &["lambda", "v_eq", "v_max", "size_class"],
        rows.iter().map(|r| {
            vec![
                F(r.lambda),
                F(r.v_eq),
                O(r.v_max),
                S(r.size_class.map(|c| c.as_str().to_string()).unwrap_or_default()),
            ]
        }),
    )
}

fn two_param(p: &ModelParams, cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    let ec = epsilon_crit(p)?;
    let eps = linspace(cfg.epsilon_min.unwrap_or(ec), cfg.epsilon_max.unwrap_or(0.1), cfg.grid.unwrap_or(101));
    let rows = two_param_diagram(p, &eps)?;
    out.csv(
        "two_param.csv",
        &["epsilon", "lambda_v1", "lambda_1", "lambda_v1_approx"],
        rows.iter()
            .map(|r| vec![F(r.epsilon), O(r.lambda_v1), O(r.lambda_1), O(r.lambda_v1_approx)]),
    )
}

fn density_rows(p: &ModelParams, d: &SectionDensity) -> Vec<Vec<Cell>> {
    let sec = Section::new(d.section, p);
    d.nodes()
        .map(|n| {
            let pt = sec.point(n.component, n.coord);
            vec![
                U(d.section.number() as u64),
                S(component_name(n.component).into()),
                F(n.coord),
                F(sec.arc(n.component, n.coord)),
                F(pt.v),
                F(pt.w),
                F(n.value),
            ]
        })
        .collect()
}

const DENSITY_HEADER: [&str; 7] = ["section", "component", "coord", "arc", "v", "w", "density"];

fn component_name(c: Component) -> &'static str {
    match c {
        Component::Manifold => "ray",
        Component::Nullcline => "nullcline",
    }
}

fn exit_dist(p: &ModelParams, cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    let x0 = Point2::new(0.0, w_l_hat(p));
    let d = exit_density_point(x0, SectionId::S2, p, &cfg.exit_options())?;
    out.csv("exit_density.csv", &DENSITY_HEADER, density_rows(p, &d))?;
    if cfg.paths > 0 {
        let sim = SimConfig {
            t_end: cfg.t_end.unwrap_or(500.0),
            ..cfg.sim_config(500.0, 0.0)
        };
        let hits: Vec<_> = first_exits(p, x0, SectionId::S2, cfg.paths, &sim)?
            .into_iter()
            .flatten()
            .collect();
        let mut rows = Vec::new();
        for c in [Component::Nullcline, Component::Manifold] {
            let coords: Vec<f64> = hits.iter().filter(|h| h.component == c).map(|h| h.coord).collect();
            if coords.is_empty() {
                continue;
            }
            let lo = coords.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = coords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pad = 1e-9 * (1.0 + hi.abs()) + 1e-6 * (hi - lo);
            let h = section_histogram(&hits, SectionId::S2, c, lo - pad, hi + pad, cfg.bins)?;
            let dens = h.density();
            for (k, &count) in h.counts.iter().enumerate() {
                let half = 0.5 * h.bin_width();
                rows.push(vec![
                    S(component_name(c).into()),
                    F(h.center(k) - half),
                    F(h.center(k) + half),
                    U(count),
                    F(dens[k]),
                ]);
            }
        }
        out.csv("exit_mc.csv", &["component", "bin_lo", "bin_hi", "count", "density"], rows)?;
    }
    Ok(())
}

fn fraction_cells(f: &Fractions) -> Vec<Cell> {
    vec![F(f.small), F(f.medium), F(f.large)]
}

fn stationary(p: &ModelParams, cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    let st = stationary_from_funnel(p, &cfg.exit_options())?;
    let rows: Vec<Vec<Cell>> = st.sections.iter().flat_map(|d| density_rows(p, d)).collect();
    out.csv("stationary.csv", &DENSITY_HEADER, rows)?;
    let f = Fractions::from_stationary(&st, w2_hat(p)?);
    let mut row = fraction_cells(&f);
    row.extend([U(st.iterations as u64), F(st.gap()), F(st.lost)]);
    out.csv(
        "fractions.csv",
        &["p_small", "p_medium", "p_large", "iterations", "l1_gap", "lost"],
        [row],
    )
}

fn mmo(p: &ModelParams, cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    let n = cfg.grid.unwrap_or(5);
    let ds = geomspace(cfg.d_min.unwrap_or(2.5e-5), cfg.d_max.unwrap_or(1e-3), n);
    if ds.iter().any(|d| !(*d > 0.0)) {
        return Err(CliError::Validation("the D grid must be positive".into()));
    }
    let lambdas = linspace(cfg.lambda_min.unwrap_or(0.026), cfg.lambda_max.unwrap_or(0.032), n);
    let opts = cfg.mmo_options();
    let report = mmo_region(p, &lambdas, &ds, &opts)?;
    out.csv(
        "mmo_grid.csv",
        &["lambda", "D", "p_small", "p_medium", "p_large", "mmo", "error"],
        report.cells.iter().map(|c| {
            let f = c.fractions;
            vec![
                F(c.lambda),
                F(c.d),
                O(f.map(|f| f.small)),
                O(f.map(|f| f.medium)),
                O(f.map(|f| f.large)),
                U(c.is_mmo(opts.threshold) as u64),
                S(c.error.clone().unwrap_or_default()),
            ]
        }),
    )?;
    out.csv(
        "boundaries.csv",
        &["D", "lambda_left", "lambda_right", "empty", "error"],
        report.boundaries.iter().map(|b| {
            vec![
                F(b.d),
                O(b.lambda_left),
                O(b.lambda_right),
                U(b.empty as u64),
                S(b.error.clone().unwrap_or_default()),
            ]
        }),
    )?;
    let analytic = slope_details(p, opts.threshold).ok();
    let fit = extrapolate(&report.boundaries);
    out.csv(
        "intercepts.csv",
        &["side", "lambda_at_zero", "fd_slope", "deterministic", "analytic_slope"],
        ["left", "right"].iter().enumerate().map(|(k, side)| {
            let det = analytic.map(|a| if k == 0 { a.lambda_1 } else { a.lambda_v1 });
            let slope = analytic.map(|a| if k == 0 { a.s_large } else { a.s_small });
            vec![
                S(side.to_string()),
                O(fit.map(|f| f[k].0)),
                O(fit.map(|f| f[k].1)),
                O(det),
                O(slope),
            ]
        }),
    )
}

fn slopes(p: &ModelParams, cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    let (lo, hi) = match cfg.sweep_axis {
        SweepAxis::Eta1 => {
            let a = p.epsilon * p.sigma;
            let b = 2.0 * (p.epsilon * p.alpha).sqrt() - p.epsilon * p.sigma;
            (a + 0.01 * (b - a), b - 0.01 * (b - a))
        }
        SweepAxis::Epsilon => (1.01 * epsilon_crit(p)?, 0.1),
        SweepAxis::Alpha => (2.0, 8.0),
    };
    let values = linspace(cfg.sweep_min.unwrap_or(lo), cfg.sweep_max.unwrap_or(hi), cfg.grid.unwrap_or(41));
    let rows = slope_sweep(p, cfg.sweep_axis, &values);
    let axis = cfg.sweep_axis.as_str();
    out.csv(
        "slopes.csv",
        &["axis", "value", "lambda_v1", "lambda_1", "s_small_scaled", "s_large_scaled", "error"],
        rows.iter().map(|r| {
            vec![
                S(axis.into()),
                F(r.value),
                O(r.lambda_v1),
                O(r.lambda_1),
                O(r.s_small_scaled),
                O(r.s_large_scaled),
                S(r.error.clone().unwrap_or_default()),
            ]
        }),
    )?;
    let d = slope_details(p, cfg.threshold)?;
    out.csv(
        "slope_details.csv",
        &[
            "lambda_v1",
            "lambda_1",
            "kappa1",
            "gamma1",
            "w_lambda_1",
            "t_int",
            "kappa2",
            "kappa2_fd",
            "kappa3",
            "gamma2",
            "s_small",
            "s_large",
        ],
        [vec![
            F(d.lambda_v1),
            F(d.lambda_1),
            F(d.kappa1),
            F(d.gamma1),
            F(d.w_lambda_1),
            F(d.t_int),
            F(d.kappa2),
            F(d.kappa2_fd),
            F(d.kappa3),
            F(d.gamma2),
            F(d.s_small),
            F(d.s_large),
        ]],
    )
}

fn sim(p: &ModelParams, cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    let sc = cfg.sim_config(2000.0, 0.0);
    let run = simulate(p, &sc)?;
    out.csv("timeseries.csv", &["t", "v", "w"], run.path.iter().map(|r| vec![F(r[0]), F(r[1]), F(r[2])]))?;
    out.csv(
        "events.csv",
        &["t", "v", "w", "crossed", "rising"],
        run.events.iter().map(|e| {
            vec![
                F(e.t),
                F(e.v),
                F(e.w),
                S(format!("{:?}", e.crossed).to_lowercase()),
                U(e.rising as u64),
            ]
        }),
    )?;
    out.csv(
        "sections.csv",
        &["t", "section", "component", "coord", "v_max"],
        run.sections.iter().map(|h| {
            vec![
                F(h.t),
                U(h.section.number() as u64),
                S(component_name(h.component).into()),
                F(h.coord),
                F(h.v_max),
            ]
        }),
    )?;
    let s = count_oscillations(&run, p);
    out.csv(
        "oscillations.csv",
        &["t_start", "t_end", "v_max", "size_class"],
        s.records
            .iter()
            .map(|r| vec![F(r.t_start), F(r.t_end), F(r.v_max), S(r.size_class.as_str().into())]),
    )?;
    if let Some(w) = &s.warning {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn compare(p: &ModelParams, cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    let analytic = oscillation_fractions(p, &cfg.exit_options())?;
    let sc = SimConfig {
        stride: 0,
        ..cfg.sim_config(2e5, 1000.0)
    };
    let run = simulate(p, &sc)?;
    let s = count_oscillations(&run, p);
    if let Some(w) = &s.warning {
        eprintln!("warning: {w}");
    }
    let mut a = vec![S("analytic".into())];
    a.extend(fraction_cells(&analytic));
    a.extend([S(String::new()), S(String::new()), S(String::new()), S(String::new())]);
    let mut m = vec![S(format!("{:?}", sc.model).to_lowercase())];
    m.extend(fraction_cells(&s.fractions));
    m.extend([F(s.std_errors[0]), F(s.std_errors[1]), F(s.std_errors[2]), U(s.records.len() as u64)]);
    out.csv(
        "compare.csv",
        &["source", "p_small", "p_medium", "p_large", "se_small", "se_medium", "se_large", "cycles"],
        [a, m],
    )
}
