//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fail.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_forward::bsde::{
    driver_estimates_check, solve_bsde_deterministic_sigma, solve_bsde_lsmc, MarkovFactor, SigmaModel,
};
use robust_forward::market::MarketSpec;
use robust_forward::preferences::{LambdaSpec, PreferencePair, YClosedForm};
use robust_forward::saddle::{solve_saddle_g_1d, solve_saddle_g_nd, DEFAULT_MAX_ITER, DEFAULT_TOL};
use robust_forward::verify::{
    drift_sign_summary, random_deviation_sign_check, run_martingale_test, Deviation, Scenario, Verdict,
};
use robust_forward_cli::commands::reproduce_figures;
use serde_json::Value;

type Check = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Check,
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fig2() -> MarketSpec<f64> {
    MarketSpec::one_dim(0.2, (0.3, 0.8), (0.01, 0.25), (-0.5, 1.5)).unwrap()
}

fn fig2_single_vol() -> MarketSpec<f64> {
    MarketSpec::one_dim(0.2, (0.3, 0.8), (0.25, 0.25), (-0.5, 1.5)).unwrap()
}

fn grid(horizon: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| horizon * k as f64 / n as f64).collect()
}

const FIGURES: [(&str, f64, f64, f64, f64); 3] =
    [("fig1", 0.0, 0.2, 0.5, 0.1), ("fig2", 0.8, 0.3, 0.5, 0.12), ("fig3", -0.5, 0.1, 0.5, 0.1171875)];

fn figure_summaries(dir: &Path) -> Result<Vec<Value>, String> {
    reproduce_figures(None, &[], &[], dir).map_err(|e| e.to_string())?;
    FIGURES
        .iter()
        .map(|(name, ..)| {
            let text = std::fs::read_to_string(dir.join(name).join("saddle.json")).map_err(|e| e.to_string())?;
            serde_json::from_str(&text).map_err(|e| e.to_string())
        })
        .collect()
}

fn figure_saddle_points() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let docs = figure_summaries(dir.path())?;
    let mut worst: f64 = 0.0;
    for ((_, p, b, s, _), doc) in FIGURES.iter().zip(&docs) {
        let got = [&doc["p_star"][0], &doc["b_star"][0], &doc["sigma_star"][0][0]];
        for (g, want) in got.into_iter().zip([p, b, s]) {
            let g = g.as_f64().ok_or("missing field")?;
            worst = worst.max((g - want).abs());
        }
    }
    ensure(worst <= 1e-12, format!("max |Δ| = {worst:e}"))
}

fn figure_saddle_values() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let docs = figure_summaries(dir.path())?;
    let mut worst: f64 = 0.0;
    for ((.., g), doc) in FIGURES.iter().zip(&docs) {
        worst = worst.max((doc["G"].as_f64().ok_or("missing G")? - g).abs());
    }
    ensure(worst <= 1e-12, format!("max |ΔG| = {worst:e}"))
}

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let r = rng.random_range(0.0..0.3);
        let b_lo = rng.random_range(-0.3..0.6);
        let b_hi = b_lo + rng.random_range(0.0..0.5);
        let s_lo = rng.random_range(0.005..0.1);
        let s_hi = s_lo + rng.random_range(0.0..0.3);
        let pi = (-rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
        let delta = rng.random_range(0.05..0.95);
        let spec = MarketSpec::one_dim(r, (b_lo, b_hi), (s_lo, s_hi), pi).map_err(|e| e.to_string())?;
        let exact = solve_saddle_g_1d(&spec, delta).map_err(|e| e.to_string())?;
        let num = solve_saddle_g_nd(&spec, delta, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(|e| e.to_string())?;
        worst = worst.max((num.value - exact.value).abs());
    }
    ensure(worst <= 1e-6, format!("100 instances, max |Δvalue| = {worst:e}"))
}

fn ode_consistency() -> Check {
    let mut ratios = Vec::new();
    for beta in [0.6, 0.75, 1.5] {
        let y = YClosedForm::consumption_family(0.0, 0.12, beta, 0.5).map_err(|e| e.to_string())?;
        let residual = |h: f64| -> Result<f64, String> {
            let mut worst: f64 = 0.0;
            for k in 1..=40 {
                let t = 0.25 * k as f64;
                let v = |s: f64| y.value(s).map_err(|e| e.to_string());
                let d = (v(t + h)? - v(t - h)?) / (2.0 * h);
                worst = worst.max((d - y.ode_rhs(t, v(t)?)).abs());
            }
            Ok(worst)
        };
        ratios.push(residual(2e-2)? / residual(1e-2)?);
    }
    let ok = ratios.iter().all(|r| (r / 4.0 - 1.0).abs() <= 0.2);
    ensure(ok, format!("residual ratios {ratios:.4?} (β = 0.6, 0.75, 1.5)"))
}

fn condition_1_checker() -> Check {
    let lambda = LambdaSpec::Exponential { alpha: 4.0, beta: 0.5, rate_base: 0.12 };
    let y = YClosedForm::new(0.0, 0.12, lambda, 0.5).map_err(|e| e.to_string())?;
    let rep = y.check_condition_1(1.0, 1000).map_err(|e| e.to_string())?;
    let t = rep.first_violation_time.ok_or("no violation reported")?;
    let err = (t - (16.0f64 / 15.0).ln()).abs();
    ensure(!rep.holds && err <= 1e-6, format!("t = {t:.10}, |Δ| = {err:e}"))
}

fn martingale_suite() -> Check {
    let spec = fig2();
    let sol = solve_saddle_g_1d(&spec, 0.5).map_err(|e| e.to_string())?;
    let y = YClosedForm::new(0.0, sol.value, LambdaSpec::Zero, 0.5).map_err(|e| e.to_string())?;
    let prefs = PreferencePair::drift_vol(y, 1, 3.0, 300).map_err(|e| e.to_string())?;
    let scn = Scenario::drift_vol("fig2", &spec, 0.5, 50.0, &prefs, &sol).map_err(|e| e.to_string())?;

    let times = grid(3.0, 3000);
    let at_saddle = drift_sign_summary(&scn, &Deviation::None, &times).map_err(|e| e.to_string())?;
    let signs = random_deviation_sign_check(&scn, 1000, 17, &grid(3.0, 30)).map_err(|e| e.to_string())?;

    let runs = [
        (Deviation::None, Verdict::MartingaleConsistent),
        (Deviation::Strategy { p: vec![0.2], c: None }, Verdict::SupermartingaleConsistent),
        (Deviation::Parameter { b: Some(vec![0.5]), sigma: None }, Verdict::SubmartingaleConsistent),
    ];
    let mut mc_ok = true;
    let mut z = Vec::new();
    for (seed, (dev, want)) in runs.into_iter().enumerate() {
        let rep = run_martingale_test(&scn, &dev, 100_000, 3.0, 1e-3, 11 + seed as u64, 0.99)
            .map_err(|e| e.to_string())?;
        mc_ok &= rep.verdict == want && rep.agrees_with_drift;
        z.push(rep.z_score);
    }
    let ok = at_saddle.max_abs <= 1e-10 && signs.passed() && mc_ok;
    ensure(
        ok,
        format!(
            "saddle max|D| = {:e}; violations {}+{} of {}+{}; MC z = {:.2?}",
            at_saddle.max_abs,
            signs.strategy_violations,
            signs.parameter_violations,
            signs.n_strategy,
            signs.n_parameter,
            z
        ),
    )
}

fn constant_sigma() -> SigmaModel {
    SigmaModel::Constant { sigma: DMatrix::from_element(1, 1, 0.5) }
}

fn bsde_truncation() -> Check {
    let rho = 0.1;
    let spec = fig2_single_vol();
    let y0 = |t: f64| -> Result<f64, String> {
        Ok(solve_bsde_deterministic_sigma(&constant_sigma(), &spec, 0.5, rho, t, 0.01).map_err(|e| e.to_string())?.y0())
    };
    let mut worst: f64 = 0.0;
    for t in [10.0, 25.0, 50.0] {
        worst = worst.max((y0(t)? - 1.2 * (1.0 - (-rho * t).exp())).abs());
    }
    let mut shrink = Vec::new();
    for t in [10.0, 25.0] {
        let ratio = (y0(2.0 * t)? - 1.2).abs() / (y0(t)? - 1.2).abs();
        shrink.push(ratio / (-rho * t).exp());
    }
    let ok = worst <= 1e-8 && shrink.iter().all(|s| (s - 1.0).abs() <= 0.05);
    ensure(ok, format!("max |ΔY0| = {worst:e}; doubling ratio / e^(-ρT) = {shrink:.6?}"))
}

fn lsmc_vs_ode() -> Check {
    let spec = fig2_single_vol();
    let (rho, t, dt) = (0.1, 10.0, 0.01);
    let factor = SigmaModel::MarkovFactor(MarkovFactor {
        kappa: 1.0,
        theta: 0.0,
        eta: 0.0,
        v0: 0.0,
        base: DMatrix::from_element(1, 1, 0.5),
        scale_lo: 0.5,
        scale_hi: 1.5,
    });
    let det = solve_bsde_deterministic_sigma(&constant_sigma(), &spec, 0.5, rho, t, dt).map_err(|e| e.to_string())?;
    let mc = solve_bsde_lsmc(&factor, &spec, 0.5, rho, t, dt, 100_000, 4, 7).map_err(|e| e.to_string())?;
    let se = mc.lsmc.as_ref().map(|d| d.y0_std_error).ok_or("missing diagnostics")?;
    let tol = (3.0 * se).max(1e-3);
    let diff = (mc.y0() - det.y0()).abs();
    ensure(diff <= tol, format!("LSMC {:.8} vs ODE {:.8}, |Δ| = {diff:e}, tol = {tol:e}", mc.y0(), det.y0()))
}

fn driver_estimates() -> Check {
    let rep = driver_estimates_check(&constant_sigma(), &fig2_single_vol(), 0.5, 0.1, 10_000, 1)
        .map_err(|e| e.to_string())?;
    ensure(
        rep.passed() && rep.n_samples == 10_000,
        format!(
            "K = {:.4}, violations: lipschitz {}, growth {}, affinity {}",
            rep.k_const, rep.lipschitz_violations, rep.growth_violations, rep.monotonicity_violations
        ),
    )
}

fn preference_ratio_asymptotics() -> Check {
    let (beta, delta, t) = (0.75, 0.5, 40.0);
    let y = YClosedForm::consumption_family(0.0, 0.12, beta, delta).map_err(|e| e.to_string())?;
    let pair = PreferencePair::drift_vol(y, 1, 50.0, 500).map_err(|e| e.to_string())?;
    let (x, c): (f64, f64) = (50.0, 3.0);
    let ratio = (pair.u(x, t).map_err(|e| e.to_string())? / x.powf(delta)) / (pair.uc(c, t) / c.powf(delta));
    ensure((ratio - 1.0).abs() <= 1e-6, format!("ratio at t = 40 is {ratio:e}"))
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "figure saddle points", budget: Some(Duration::from_secs(1)), run: figure_saddle_points },
        Criterion { id: 2, name: "figure saddle values", budget: None, run: figure_saddle_values },
        Criterion { id: 3, name: "numeric vs closed-form saddle", budget: Some(Duration::from_secs(10)), run: oracle_equivalence },
        Criterion { id: 4, name: "ODE residual is second order", budget: None, run: ode_consistency },
        Criterion { id: 5, name: "condition-1 crossing time", budget: None, run: condition_1_checker },
        Criterion { id: 6, name: "martingale suite", budget: Some(Duration::from_secs(120)), run: martingale_suite },
        Criterion { id: 7, name: "BSDE truncation", budget: None, run: bsde_truncation },
        Criterion { id: 8, name: "LSMC vs ODE", budget: Some(Duration::from_secs(300)), run: lsmc_vs_ode },
        Criterion { id: 9, name: "driver estimates", budget: None, run: driver_estimates },
        Criterion { id: 10, name: "preference ratio asymptotics", budget: None, run: preference_ratio_asymptotics },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let over = c.budget.filter(|b| elapsed > *b);
        let (pass, detail) = match (&outcome, over) {
            (Ok(d), None) => (true, d.clone()),
            (Ok(d), Some(b)) => (false, format!("{d}; over budget {b:?}")),
            (Err(d), _) => (false, d.clone()),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} ({}) [{:.2?}]: {detail}",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
