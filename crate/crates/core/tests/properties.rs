use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use proptest::prelude::*;

use pwl_fhn::exit::{covariance, exit_density_point, oscillation_fractions, slope_small, stationary_from_funnel, ExitOptions};
use pwl_fhn::flow::{flow_linear, Line, LinearFlow};
use pwl_fhn::model::{
    discriminant, eigenvalues, epsilon_crit, equilibrium, eval_f_pwl, jacobian, region_of, validate, ModelParams,
};
use pwl_fhn::orbit::{admissible_equilibrium, lambda_1, lambda_v1, orbit_v_max, periodic_orbit, w_l_hat};
use pwl_fhn::section::SectionId;
use pwl_fhn::{Point2, Region};

const REGIONS: [Region; 4] = [Region::L, Region::R1, Region::R2, Region::R];

/// Parameter sets that pass validation, spread around the defaults.
fn params() -> impl Strategy<Value = ModelParams> {
    (0.02..0.08f64, 2.0..8.0f64, 0.5..1.5f64, 0.005..0.05f64, 0.05..0.3f64, 0.2..0.7f64).prop_map(
        |(epsilon, alpha, sigma, lambda, v1, eta1)| ModelParams {
            epsilon,
            alpha,
            sigma,
            lambda,
            v1,
            w1: eta1 * v1,
            ..ModelParams::default()
        },
    )
}

fn region() -> impl Strategy<Value = Region> {
    prop::sample::select(REGIONS.to_vec())
}

/// `X - e^{At} X e^{A^T t}` with `A X + X A^T + e2 e2^T = 0`.
fn lyapunov_closed_form(a: &Matrix2<f64>, e: &Matrix2<f64>) -> Matrix2<f64> {
    let m = Matrix3::new(
        2.0 * a[(0, 0)],
        2.0 * a[(0, 1)],
        0.0,
        a[(1, 0)],
        a[(0, 0)] + a[(1, 1)],
        a[(0, 1)],
        0.0,
        2.0 * a[(1, 0)],
        2.0 * a[(1, 1)],
    );
    let x = m.lu().solve(&Vector3::new(0.0, 0.0, -1.0)).unwrap();
    let xm = Matrix2::new(x[0], x[1], x[1], x[2]);
    xm - e * xm * e.transpose()
}

/// Classical RK4 on `x' = J (x - x*)` for one region.
fn rk4(region: Region, p: &ModelParams, x0: Point2, t: f64, steps: usize) -> Point2 {
    let j = jacobian(region, p);
    let eq = equilibrium(region, p).unwrap().equilibrium.to_vector();
    let f = |x: &Vector2<f64>| j * (x - eq);
    let h = t / steps as f64;
    let mut x = x0.to_vector();
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&(x + 0.5 * h * k1));
        let k3 = f(&(x + 0.5 * h * k2));
        let k4 = f(&(x + h * k3));
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Point2::from_vector(&x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_params_validate(p in params()) {
        prop_assert!(validate(&p).is_valid(), "{}", validate(&p));
        prop_assert_eq!(p.eta1(), p.w1 / p.v1);
        prop_assert_eq!(p.eta2(), (1.0 - p.w1) / (1.0 - p.v1));
    }

    #[test]
    fn nullcline_is_continuous(p in params()) {
        for (b, left, right) in [(0.0, Region::L, Region::R1), (p.v1, Region::R1, Region::R2), (1.0, Region::R2, Region::R)] {
            let from_left = p.slope(left) * b + p.intercept(left);
            let from_right = p.slope(right) * b + p.intercept(right);
            prop_assert!((from_left - from_right).abs() <= 4.0 * f64::EPSILON, "{b}: {from_left} {from_right}");
            prop_assert!((eval_f_pwl(b, &p) - from_left).abs() <= 4.0 * f64::EPSILON);
            prop_assert!(region_of(b, &p) == left || region_of(b, &p) == right);
        }
    }

    #[test]
    fn eigenvalues_solve_characteristic_polynomial(p in params(), r in region()) {
        let j = jacobian(r, &p);
        let (tr, det) = (j.trace(), j.determinant());
        let e = eigenvalues(r, &p);
        for z in [e.first, e.second] {
            let res = z * z - z * tr + det;
            prop_assert!(res.norm() < 1e-12, "{r:?} residual {}", res.norm());
        }
    }

    #[test]
    fn epsilon_crit_separates_node_and_focus(p in params()) {
        let ec = epsilon_crit(&p).unwrap();
        prop_assert!(discriminant(Region::R1, &p.with_epsilon(ec * (1.0 + 1e-6))) < 0.0);
        prop_assert!(discriminant(Region::R1, &p.with_epsilon(ec * (1.0 - 1e-6))) > 0.0);
    }

    #[test]
    fn equilibrium_is_at_rest(p in params()) {
        let x = admissible_equilibrium(&p).unwrap();
        let rate = p.vector_field(x);
        prop_assert!(rate.v.hypot(rate.w) < 1e-12, "{rate:?}");
    }

    #[test]
    fn flow_is_a_semigroup(
        p in params(),
        r in region(),
        v in -0.2..1.2f64,
        w in -0.2..1.2f64,
        t1 in 0.0..20.0f64,
        t2 in 0.0..20.0f64,
    ) {
        let x0 = Point2::new(v, w);
        let two = flow_linear(r, t2, flow_linear(r, t1, x0, &p).unwrap(), &p).unwrap();
        let one = flow_linear(r, t1 + t2, x0, &p).unwrap();
        let scale = 1.0 + one.v.abs().max(one.w.abs());
        prop_assert!(one.dist(two) < 1e-10 * scale, "{one:?} {two:?}");
    }

    #[test]
    fn covariance_solves_lyapunov(p in params(), r in region(), exponent in -3.0..2.0f64) {
        let t = 10f64.powf(exponent);
        let flow = LinearFlow::new(r, &p).unwrap();
        let c = covariance(r, t, &p).unwrap();
        prop_assert!(c.theta11 >= 0.0 && c.theta22 >= 0.0);
        prop_assert!(c.det() >= -1e-12 * c.theta11 * c.theta22);
        let o = lyapunov_closed_form(&flow.a, &flow.propagator(t));
        let err = (c.to_matrix() - o).norm() / o.norm();
        prop_assert!(err < 1e-8, "{r:?} t={t} err={err:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn flow_matches_reference_integrator(p in params(), r in region(), t in 1.0..100.0f64) {
        let x0 = Point2::new(0.5 * p.v1, 0.3 * p.w1);
        let exact = flow_linear(r, t, x0, &p).unwrap();
        let reference = rk4(r, &p, x0, t, (t / 2e-3) as usize);
        let scale = 1.0 + exact.v.abs().max(exact.w.abs());
        prop_assert!(exact.dist(reference) < 1e-8 * scale, "{exact:?} {reference:?}");
    }

    #[test]
    fn canard_proxies_are_ordered(p in params()) {
        let ec = epsilon_crit(&p).unwrap();
        prop_assume!(p.epsilon > 1.2 * ec);
        let lv1 = lambda_v1(&p).unwrap();
        prop_assume!(lv1 > 1e-6);
        let l1 = lambda_1(&p).unwrap();
        prop_assert!(0.0 < lv1 && lv1 < l1, "{lv1} {l1}");
    }

    #[test]
    fn small_orbits_scale_with_lambda(p in params(), frac in 0.1..0.9f64) {
        prop_assume!(p.epsilon > 1.2 * epsilon_crit(&p).unwrap());
        let lv1 = lambda_v1(&p).unwrap();
        prop_assume!(lv1 > 1e-6);
        let kappa1 = p.v1 / lv1;
        let lam = frac * lv1;
        let ratio = orbit_v_max(&p.with_lambda(lam)).unwrap() / lam;
        prop_assert!((ratio / kappa1 - 1.0).abs() < 1e-6, "{ratio} {kappa1}");
    }

    #[test]
    fn left_region_funnels_onto_slow_direction(w0 in 0.6..1.5f64, lam in 0.01..0.05f64) {
        let p = ModelParams::default().with_lambda(lam);
        let flow = LinearFlow::new(Region::L, &p).unwrap();
        let x0 = Vector2::new(0.0, w0);
        let t = flow.first_crossing(&x0, &Line::vertical(0.0), false, 5000.0).unwrap().unwrap();
        let w = flow.state(t, &x0)[1];
        prop_assert!((w - w_l_hat(&p)).abs() < 1e-6, "{w} {}", w_l_hat(&p));
    }

    #[test]
    fn slope_small_ignores_breakpoint_scale(v1 in 0.02..0.5f64) {
        let p = ModelParams::default();
        let q = ModelParams { v1, w1: p.eta1() * v1, ..p };
        let (a, b) = (slope_small(&p).unwrap(), slope_small(&q).unwrap());
        prop_assert!(((a - b) / a).abs() < 1e-9, "{a} {b}");
    }

    #[test]
    fn exit_densities_are_normalised(lam in 0.026..0.032f64, d in 3e-4..2e-3f64) {
        let p = ModelParams::default().with_lambda(lam).with_noise(d);
        let x0 = Point2::new(0.0, w_l_hat(&p));
        let dens = exit_density_point(x0, SectionId::S2, &p, &ExitOptions::default()).unwrap();
        prop_assert!((dens.norm() - 1.0).abs() < 1e-9, "{}", dens.norm());
        prop_assert!(dens.patches.iter().flat_map(|q| q.values.iter()).all(|v| *v >= 0.0));
    }
}

#[test]
fn stationary_iteration_contracts() {
    let st = stationary_from_funnel(&ModelParams::default(), &ExitOptions::default()).unwrap();
    for g in st.gaps.windows(2).skip(2) {
        assert!(g[1] < g[0], "{:?}", st.gaps);
    }
    assert!(*st.gaps.last().unwrap() < 1e-6);
    for d in &st.sections {
        assert!((d.norm() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn fractions_approach_the_deterministic_class() {
    for lam in [0.026, 0.0295] {
        let p = ModelParams::default().with_lambda(lam);
        let class = periodic_orbit(&p.with_noise(0.0)).unwrap().size_class.index();
        let mut last = f64::INFINITY;
        for d in [1e-3, 1e-4, 1e-5] {
            let f = oscillation_fractions(&p.with_noise(d), &ExitOptions::default()).unwrap();
            let v = [f.small, f.medium, f.large];
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let miss = 1.0 - v[class];
            assert!(miss < last, "lambda {lam} D {d}: {v:?}");
            last = miss;
        }
        assert!(last < 1e-6, "lambda {lam}: {last}");
    }
}
