use nalgebra::DMatrix;
use proptest::prelude::*;
use robust_forward::bsde::*;
use robust_forward::market::MarketSpec;
use robust_forward::preferences::{GClosedForm, LambdaSpec, PreferencePair};

fn fig2() -> MarketSpec<f64> {
    MarketSpec::one_dim(0.2, (0.3, 0.8), (0.25, 0.25), (-0.5, 1.5)).unwrap()
}

fn constant(s: f64) -> SigmaModel {
    SigmaModel::Constant { sigma: DMatrix::from_element(1, 1, s) }
}

fn factor(eta: f64) -> SigmaModel {
    SigmaModel::MarkovFactor(MarkovFactor {
        kappa: 1.0,
        theta: 0.0,
        eta,
        v0: 0.0,
        base: DMatrix::from_element(1, 1, 0.5),
        scale_lo: 0.5,
        scale_hi: 1.5,
    })
}

#[test]
fn truncation_matches_closed_form() {
    let rho = 0.1;
    for t in [10.0, 25.0, 50.0] {
        let sol = solve_bsde_deterministic_sigma(&constant(0.5), &fig2(), 0.5, rho, t, 0.01).unwrap();
        let exact = 1.2 * (1.0 - (-rho * t).exp());
        assert!((sol.y0() - exact).abs() < 1e-8, "T={t}: {} vs {exact}", sol.y0());
    }
}

#[test]
fn truncation_error_shrinks_geometrically() {
    for rho in [0.1, 0.2] {
        let y0 = |t: f64| solve_bsde_deterministic_sigma(&constant(0.5), &fig2(), 0.5, rho, t, 0.01).unwrap();
        for t in [10.0, 20.0] {
            let (a, b) = (y0(t), y0(2.0 * t));
            let limit = 0.12 / rho;
            let ratio = (b.y0() - limit).abs() / (a.y0() - limit).abs();
            let want = (-rho * t).exp();
            assert!((ratio / want - 1.0).abs() <= 0.05, "rho {rho} T {t}: {ratio} vs {want}");
            assert!((b.y0() - a.y0()).abs() <= a.sup_bound * want * 1.05);
        }
    }
}

#[test]
fn deterministic_solution_invariants() {
    let model = SigmaModel::Piecewise {
        breaks: vec![2.0, 5.0],
        sigmas: vec![
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 0.3),
            DMatrix::from_element(1, 1, 0.7),
        ],
    };
    let sol = solve_bsde_deterministic_sigma(&model, &fig2(), 0.5, 0.3, 20.0, 0.05).unwrap();
    assert!(sol.z.iter().flatten().all(|&z| z == 0.0));
    assert_eq!(sol.z_energy, 0.0);
    assert!(sol.y.iter().all(|y| y.is_finite()));
    assert!(sol.bound_holds());
    for (k, y) in sol.y.iter().enumerate() {
        assert!(y.abs() <= sol.sup_bound + sol.tail_estimate[k]);
    }
}

#[test]
fn degenerate_factor_matches_deterministic_small_scale() {
    let spec = fig2();
    let (rho, t, dt) = (0.5, 4.0, 0.02);
    let det = solve_bsde_deterministic_sigma(&constant(0.5), &spec, 0.5, rho, t, dt).unwrap();
    let mc = solve_bsde_lsmc(&factor(0.0), &spec, 0.5, rho, t, dt, 20_000, 4, 11).unwrap();
    let se = mc.lsmc.as_ref().unwrap().y0_std_error;
    let tol = (3.0 * se).max(1e-3);
    assert!((mc.y0() - det.y0()).abs() <= tol, "{} vs {} (se {se})", mc.y0(), det.y0());
    assert!(mc.z_energy.is_finite());
    assert!(mc.bound_holds());
}

#[test]
fn lsmc_is_seed_deterministic() {
    let spec = fig2();
    let run = |seed| solve_bsde_lsmc(&factor(0.6), &spec, 0.5, 0.5, 1.0, 0.02, 3_000, 3, seed).unwrap();
    let (a, b, c) = (run(5), run(5), run(6));
    assert_eq!(a, b);
    assert_eq!(a.y0().to_bits(), b.y0().to_bits());
    assert_ne!(a.y, c.y);
}

#[test]
fn large_rho_bound_is_tight() {
    let spec = fig2();
    let rho = 5.0;
    let sol = solve_bsde_lsmc(&factor(0.8), &spec, 0.5, rho, 3.0, 0.01, 10_000, 4, 3).unwrap();
    assert!(sol.sup_bound <= 0.2 / rho + 1e-12);
    for (k, y) in sol.y.iter().enumerate() {
        assert!(y.abs() <= 0.04 + sol.tail_estimate[k], "k {k}: {y}");
    }
    assert!(sol.bound_holds());
    assert!(sol.z_energy.is_finite() && sol.z_energy >= 0.0);
    assert!(sol.z_energy_weighted <= sol.z_energy);
}

#[test]
fn driver_estimates_hold() {
    let spec = fig2();
    let rep = driver_estimates_check(&constant(0.5), &spec, 0.5, 0.1, 10_000, 1).unwrap();
    assert!(rep.passed(), "{rep:?}");
    assert_eq!(rep.n_samples, 10_000);
    let rep = driver_estimates_check(&factor(0.5), &spec, 0.5, 0.1, 10_000, 2).unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn driver_estimates_correlated_two_dim() {
    let spec = MarketSpec::new(
        0.03,
        vec![0.02, 0.0],
        vec![0.12, 0.09],
        vec![DMatrix::identity(2, 2)],
        vec![-1.0, -1.0],
        vec![2.0, 2.0],
    )
    .unwrap();
    let model = SigmaModel::Constant { sigma: DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.12, 0.25]) };
    let rep = driver_estimates_check(&model, &spec, 0.4, 0.2, 300, 9).unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn drift_only_utility_matches_bsde() {
    let spec = fig2();
    let rho = 0.1;
    let sol = solve_bsde_deterministic_sigma(&constant(0.5), &spec, 0.5, rho, 30.0, 0.01).unwrap();
    let g = GClosedForm::new(0.0, sol.times.clone(), sol.y.clone(), rho, LambdaSpec::Zero, 0.5).unwrap();
    let pair = PreferencePair::drift_only(g, Some((sol.times.clone(), sol.z.clone())), 30.0, 300).unwrap();
    let x: f64 = 7.0;
    let mut integral = 0.0;
    for k in 0..sol.times.len() {
        if k > 0 {
            integral += 0.5 * (sol.y[k] + sol.y[k - 1]) * (sol.times[k] - sol.times[k - 1]);
        }
        let t = sol.times[k];
        let direct = x.powf(0.5) / 0.5 * (sol.y[k] - rho * integral).exp();
        let u = pair.u(x, t).unwrap();
        assert!((u - direct).abs() <= 1e-10 * direct, "t {t}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn driver_is_affine_in_y(
        y1 in -5.0..5.0f64, y2 in -5.0..5.0f64, z in -2.0..2.0f64, rho in 0.01..2.0f64, t in 0.0..10.0f64,
    ) {
        let spec = fig2();
        let m = constant(0.5);
        let f1 = driver(t, y1, &[z], &m, 0.0, &spec, 0.5, rho).unwrap();
        let f2 = driver(t, y2, &[z], &m, 0.0, &spec, 0.5, rho).unwrap();
        let lhs = (y1 - y2) * (f1 - f2);
        prop_assert!((lhs + rho * (y1 - y2).powi(2)).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn constant_h_closed_form_any_rho(rho in 0.05..2.0f64, t in 1.0..30.0f64) {
        let sol = solve_bsde_deterministic_sigma(&constant(0.5), &fig2(), 0.5, rho, t, 0.05).unwrap();
        let exact = 0.12 / rho * (1.0 - (-rho * t).exp());
        prop_assert!((sol.y0() - exact).abs() < 1e-10);
        prop_assert!(sol.bound_holds());
    }
}
