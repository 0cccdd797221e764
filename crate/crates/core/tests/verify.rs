use nalgebra::DMatrix;
use robust_forward::bsde::{solve_bsde_deterministic_sigma, SigmaModel};
use robust_forward::market::{simulate_wealth, MarketSpec, StrategyPath};
use robust_forward::preferences::{GClosedForm, LambdaSpec, PreferencePair, YClosedForm};
use robust_forward::saddle::{solve_saddle_g_1d, solve_saddle_g_nd, DEFAULT_MAX_ITER, DEFAULT_TOL};
use robust_forward::verify::*;

const FIGS: [(f64, f64); 3] = [(0.1, 0.5), (0.3, 0.8), (-0.1, 0.1)];

fn fig(k: usize) -> MarketSpec<f64> {
    MarketSpec::one_dim(0.2, FIGS[k], (0.01, 0.25), (-0.5, 1.5)).unwrap()
}

fn grid(horizon: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| horizon * k as f64 / n as f64).collect()
}

fn zero_lambda_prefs(g: f64) -> PreferencePair<f64> {
    let y = YClosedForm::new(0.0, g, LambdaSpec::Zero, 0.5).unwrap();
    PreferencePair::drift_vol(y, 1, 3.0, 300).unwrap()
}

fn consuming_prefs(g: f64) -> PreferencePair<f64> {
    let y = YClosedForm::consumption_family(0.0, g, 0.75, 0.5).unwrap();
    PreferencePair::drift_vol(y, 1, 3.0, 300).unwrap()
}

#[test]
fn saddle_drift_vanishes_on_the_figure_scenarios() {
    let times = grid(3.0, 300);
    for k in 0..3 {
        let spec = fig(k);
        let sol = solve_saddle_g_1d(&spec, 0.5).unwrap();
        for prefs in [zero_lambda_prefs(sol.value), consuming_prefs(sol.value)] {
            let scn = Scenario::drift_vol(format!("fig{}", k + 1), &spec, 0.5, 50.0, &prefs, &sol).unwrap();
            let s = drift_sign_summary(&scn, &Deviation::None, &times).unwrap();
            assert!(s.max_abs <= 1e-10, "fig{}: {}", k + 1, s.max_abs);
        }
    }
}

#[test]
fn saddle_drift_vanishes_with_numeric_saddle() {
    let times = grid(3.0, 60);
    for k in 0..3 {
        let spec = fig(k);
        let sol = solve_saddle_g_nd(&spec, 0.5, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let prefs = consuming_prefs(sol.value);
        let scn = Scenario::drift_vol("nd", &spec, 0.5, 50.0, &prefs, &sol).unwrap();
        let s = drift_sign_summary(&scn, &Deviation::None, &times).unwrap();
        assert!(s.max_abs <= 1e-10, "fig{}: {}", k + 1, s.max_abs);
    }
}

#[test]
fn saddle_drift_vanishes_drift_only() {
    let spec = MarketSpec::one_dim(0.2, (0.3, 0.8), (0.25, 0.25), (-0.5, 1.5)).unwrap();
    let model = SigmaModel::Piecewise {
        breaks: vec![1.0],
        sigmas: vec![DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 0.3)],
    };
    let rho = 0.1;
    let sol = solve_bsde_deterministic_sigma(&model, &spec, 0.5, rho, 10.0, 0.01).unwrap();
    let lam = LambdaSpec::Exponential { alpha: 0.05, beta: 0.5, rate_base: rho * 1.3 };
    let g = GClosedForm::new(0.0, sol.times.clone(), sol.y.clone(), rho, lam, 0.5).unwrap();
    let prefs = PreferencePair::drift_only(g, Some((sol.times.clone(), sol.z.clone())), 10.0, 500).unwrap();
    let scn = Scenario::drift_only("demo", &spec, 0.5, 50.0, &prefs, &model).unwrap();
    let times = grid(3.0, 300);
    let s = drift_sign_summary(&scn, &Deviation::None, &times).unwrap();
    assert!(s.max_abs <= 1e-10, "{}", s.max_abs);
    let rep = random_deviation_sign_check(&scn, 1000, 4, &grid(3.0, 6)).unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn random_deviations_respect_the_sign_dichotomy() {
    let times = grid(3.0, 6);
    for k in 0..3 {
        let spec = fig(k);
        let sol = solve_saddle_g_1d(&spec, 0.5).unwrap();
        for prefs in [zero_lambda_prefs(sol.value), consuming_prefs(sol.value)] {
            let scn = Scenario::drift_vol("fig", &spec, 0.5, 50.0, &prefs, &sol).unwrap();
            let rep = random_deviation_sign_check(&scn, 1000, 17 + k as u64, &times).unwrap();
            assert!(rep.passed(), "fig{}: {rep:?}", k + 1);
            assert!(rep.max_strategy_drift <= 1e-12 && rep.min_parameter_drift >= -1e-12);
        }
    }
}

#[test]
fn sign_dichotomy_two_assets() {
    let spec = MarketSpec::new(
        0.02,
        vec![0.04, 0.03],
        vec![0.1, 0.08],
        vec![
            DMatrix::from_row_slice(2, 2, &[0.04, 0.0, 0.0, 0.02]),
            DMatrix::from_row_slice(2, 2, &[0.02, 0.005, 0.005, 0.05]),
        ],
        vec![-1.0; 2],
        vec![2.0; 2],
    )
    .unwrap();
    let sol = solve_saddle_g_nd(&spec, 0.5, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let y = YClosedForm::new(0.0, sol.value, LambdaSpec::Zero, 0.5).unwrap();
    let prefs = PreferencePair::drift_vol(y, 2, 3.0, 30).unwrap();
    let scn = Scenario::drift_vol("2d", &spec, 0.5, 10.0, &prefs, &sol).unwrap();
    let rep = random_deviation_sign_check(&scn, 500, 3, &[0.0, 1.5]).unwrap();
    assert!(rep.passed(), "{rep:?}");
    assert!(rep.saddle_max_abs <= 1e-7);
}

#[test]
fn criterion_starts_at_utility() {
    let spec = fig(1);
    let sol = solve_saddle_g_1d(&spec, 0.5).unwrap();
    let prefs = consuming_prefs(sol.value);
    let scn = Scenario::drift_vol("fig2", &spec, 0.5, 50.0, &prefs, &sol).unwrap();
    for dev in [Deviation::None, Deviation::Strategy { p: vec![0.2], c: Some(0.3) }] {
        let (times, paths) = criterion_paths(&scn, &dev, 4, 1.0, 0.01, 9).unwrap();
        assert_eq!(paths[0].len(), times.len());
        let u0 = prefs.u(50.0, 0.0).unwrap();
        for p in &paths {
            assert!((p[0] - u0).abs() <= 1e-12 * u0);
        }
    }
}

#[test]
fn fig1_wealth_is_deterministic() {
    let spec = fig(0);
    let sol = solve_saddle_g_1d(&spec, 0.5).unwrap();
    assert_eq!(sol.p_star, vec![0.0]);
    let times = StrategyPath::uniform_grid(3.0, 0.01).unwrap();
    let strat =
        StrategyPath::constant(times, sol.p_star.clone(), 0.0, sol.b_star.clone(), DMatrix::from_element(1, 1, 0.5))
            .unwrap();
    let sim = simulate_wealth(&spec, 50.0, &strat, 3, 1, 0.01).unwrap();
    for path in &sim.paths {
        for (t, x) in sim.times.iter().zip(&path.wealth) {
            let exact = 50.0 * (0.2 * t).exp();
            assert!((x - exact).abs() <= 1e-12 * exact, "t {t}");
        }
    }
    // the criterion process is then constant
    let prefs = zero_lambda_prefs(sol.value);
    let scn = Scenario::drift_vol("fig1", &spec, 0.5, 50.0, &prefs, &sol).unwrap();
    let (_, paths) = criterion_paths(&scn, &Deviation::None, 2, 3.0, 0.01, 1).unwrap();
    let r0 = paths[0][0];
    assert!(paths.iter().flatten().all(|r| (r - r0).abs() <= 1e-12 * r0));
}

#[test]
fn monte_carlo_verdicts_small_scale() {
    let spec = fig(1);
    let sol = solve_saddle_g_1d(&spec, 0.5).unwrap();
    let prefs = zero_lambda_prefs(sol.value);
    let scn = Scenario::drift_vol("fig2", &spec, 0.5, 50.0, &prefs, &sol).unwrap();
    let run = |dev: Deviation, seed| run_martingale_test(&scn, &dev, 20_000, 3.0, 1e-3, seed, 0.99).unwrap();

    let none = run(Deviation::None, 1);
    assert_eq!(none.verdict, Verdict::MartingaleConsistent, "{none:?}");
    assert!(none.mean_increment.abs() <= 3.0 * none.std_error);
    assert!(none.agrees_with_drift);
    assert!((none.qv_ratio.unwrap() - 1.0).abs() <= 0.05);

    let strat = run(Deviation::Strategy { p: vec![0.2], c: None }, 2);
    assert_eq!(strat.verdict, Verdict::SupermartingaleConsistent);
    assert!(strat.significant && strat.mean_increment < 0.0 && strat.agrees_with_drift);
    assert!((strat.drift.max + 0.01125).abs() < 1e-12);
    assert!((strat.qv_ratio.unwrap() - 1.0).abs() <= 0.05);

    let param = run(Deviation::Parameter { b: Some(vec![0.5]), sigma: None }, 3);
    assert_eq!(param.verdict, Verdict::SubmartingaleConsistent);
    assert!(param.significant && param.mean_increment > 0.0 && param.agrees_with_drift);
    assert!((param.drift.min - 0.08).abs() < 1e-12);
    assert!((param.qv_ratio.unwrap() - 1.0).abs() <= 0.05);
}

#[test]
fn monte_carlo_with_consumption() {
    let spec = fig(2);
    let sol = solve_saddle_g_1d(&spec, 0.5).unwrap();
    let prefs = consuming_prefs(sol.value);
    let scn = Scenario::drift_vol("fig3", &spec, 0.5, 50.0, &prefs, &sol).unwrap();
    let rep = run_martingale_test(&scn, &Deviation::None, 10_000, 2.0, 1e-3, 5, 0.99).unwrap();
    assert_eq!(rep.verdict, Verdict::MartingaleConsistent, "{rep:?}");
    for inc in &rep.restart_increments {
        assert!(inc.mean.abs() <= 4.0 * inc.std_error.max(1e-12), "{inc:?}");
    }
    let rep = run_martingale_test(&scn, &Deviation::Strategy { p: vec![-0.5], c: Some(3.0) }, 10_000, 2.0, 1e-3, 6, 0.99)
        .unwrap();
    assert!(rep.drift.max < 0.0);
    assert_eq!(rep.verdict, Verdict::SupermartingaleConsistent, "{rep:?}");
}

#[test]
fn monte_carlo_is_reproducible() {
    let spec = fig(1);
    let sol = solve_saddle_g_1d(&spec, 0.5).unwrap();
    let prefs = zero_lambda_prefs(sol.value);
    let scn = Scenario::drift_vol("fig2", &spec, 0.5, 50.0, &prefs, &sol).unwrap();
    let a = run_martingale_test(&scn, &Deviation::None, 2_000, 1.0, 1e-2, 42, 0.99).unwrap();
    let b = run_martingale_test(&scn, &Deviation::None, 2_000, 1.0, 1e-2, 42, 0.99).unwrap();
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn inadmissible_deviations_are_rejected() {
    let spec = fig(1);
    let sol = solve_saddle_g_1d(&spec, 0.5).unwrap();
    let prefs = zero_lambda_prefs(sol.value);
    let scn = Scenario::drift_vol("fig2", &spec, 0.5, 50.0, &prefs, &sol).unwrap();
    let bad = [
        Deviation::Strategy { p: vec![2.0], c: None },
        Deviation::Strategy { p: vec![0.0], c: Some(-1.0) },
        Deviation::Parameter { b: Some(vec![0.9]), sigma: None },
        Deviation::Parameter { b: None, sigma: Some(DMatrix::from_element(1, 1, 0.6)) },
    ];
    for dev in bad {
        assert!(run_martingale_test(&scn, &dev, 10, 1.0, 0.1, 0, 0.99).is_err(), "{dev:?}");
    }
}
