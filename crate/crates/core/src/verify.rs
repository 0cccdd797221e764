//! Martingale optimality checks on the criterion process
//!
//! ```text
//! R_s = U(X_s, s) + ∫₀ˢ U^c(c_u X_u, u) du.
//! ```
//!
//! `dR = (U(X,s)/δ)·D_s ds + U(X,s)·(δσᵀp + Z)ᵀ dW`, where the drift integrand
//! `D` vanishes at the saddle point, is non-positive for any other strategy and
//! non-negative for any other admissible market parameter.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bsde::SigmaModel;
use crate::linalg::psd_sqrt;
use crate::market::{observe_paths, MarketSpec, PathObserver, StrategyPath};
use crate::preferences::{PreferenceMode, PreferencePair};
use crate::saddle::{eval_g, eval_h, solve_saddle_h, SaddleSolutionG};
use crate::stats::{normal_quantile, pairwise_sum, SampleMoments};
use crate::{Error, Result};

/// Which value function sets the benchmark drift.
#[derive(Debug, Clone, Copy)]
pub enum Uncertainty<'a> {
    /// Drift and volatility uncertainty, benchmark `G*`.
    DriftVol { g_star: f64 },
    /// Drift uncertainty only, benchmark `H*(t, Z_t)`.
    DriftOnly { h_star: f64, z: &'a [f64] },
}

/// Controls and realized parameters at one instant; `sigma` is the volatility
/// matrix (covariance `σσᵀ`).
#[derive(Debug, Clone, Copy)]
pub struct Controls<'a> {
    pub p: &'a [f64],
    pub c: f64,
    pub b: &'a [f64],
    pub sigma: &'a DMatrix<f64>,
}

/// Drift integrand `D` of the criterion process. `log_scale` is `Y_t` (drift
/// and volatility uncertainty) or `Y_t − g_t` (drift uncertainty only).
pub fn drift_integrand(
    spec: &MarketSpec<f64>,
    delta: f64,
    ctl: Controls<'_>,
    log_scale: f64,
    lambda: f64,
    ctx: Uncertainty<'_>,
) -> Result<f64> {
    if ctl.c < 0.0 || !ctl.c.is_finite() {
        return Err(Error::invalid(format!("consumption rate must be >= 0, got {}", ctl.c)));
    }
    let q = 1.0 / (1.0 - delta);
    let consumption = if lambda == 0.0 {
        -delta * ctl.c
    } else {
        ctl.c.powf(delta) * lambda * (-log_scale).exp() - delta * ctl.c
    };
    let optimal_consumption = if lambda == 0.0 { 0.0 } else { (1.0 - delta) * lambda.powf(q) * (-log_scale * q).exp() };
    let (value, benchmark) = match ctx {
        Uncertainty::DriftVol { g_star } => {
            let cov = ctl.sigma * ctl.sigma.transpose();
            (eval_g(spec, delta, ctl.p, ctl.b, &cov)?, g_star)
        }
        Uncertainty::DriftOnly { h_star, z } => (eval_h(spec, delta, ctl.sigma, z, ctl.p, ctl.b)?, h_star),
    };
    Ok(value + consumption - (benchmark + optimal_consumption))
}

/// A saddle point `(p*, b*, σ*)` with its value.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddlePoint {
    pub p: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub value: f64,
}

/// Everything needed to simulate and check the criterion process.
#[derive(Debug, Clone)]
pub struct Scenario<'a> {
    pub label: String,
    pub spec: &'a MarketSpec<f64>,
    pub delta: f64,
    pub x0: f64,
    pub prefs: &'a PreferencePair<f64>,
    /// `(start time, saddle point)` pieces, sorted, the first starting at 0.
    pub saddles: Vec<(f64, SaddlePoint)>,
    /// Slack allowed in sign checks (numerical saddle residual).
    pub tolerance: f64,
}

impl<'a> Scenario<'a> {
    pub fn drift_vol(
        label: impl Into<String>,
        spec: &'a MarketSpec<f64>,
        delta: f64,
        x0: f64,
        prefs: &'a PreferencePair<f64>,
        saddle: &SaddleSolutionG<f64>,
    ) -> Result<Self> {
        if prefs.mode() != PreferenceMode::DriftVol {
            return Err(Error::invalid("drift/volatility scenario needs drift_vol preferences"));
        }
        let point = SaddlePoint {
            p: saddle.p_star.clone(),
            b: saddle.b_star.clone(),
            sigma: psd_sqrt(&saddle.sigma_star),
            value: saddle.value,
        };
        Ok(Self {
            label: label.into(),
            spec,
            delta,
            x0,
            prefs,
            saddles: vec![(0.0, point)],
            tolerance: saddle.residual.max(1e-12),
        })
    }

    /// Drift-only scenario for deterministic volatility, where `Z ≡ 0`.
    pub fn drift_only(
        label: impl Into<String>,
        spec: &'a MarketSpec<f64>,
        delta: f64,
        x0: f64,
        prefs: &'a PreferencePair<f64>,
        model: &SigmaModel,
    ) -> Result<Self> {
        if prefs.mode() != PreferenceMode::DriftOnly {
            return Err(Error::invalid("drift-only scenario needs drift_only preferences"));
        }
        let starts: Vec<f64> = match model {
            SigmaModel::Constant { .. } => vec![0.0],
            SigmaModel::Piecewise { breaks, .. } => std::iter::once(0.0).chain(breaks.iter().cloned()).collect(),
            SigmaModel::MarkovFactor(_) => {
                return Err(Error::invalid("criterion simulation supports deterministic volatility only"))
            }
        };
        let zero = vec![0.0; spec.dim()];
        let saddles = starts
            .into_iter()
            .map(|t| {
                let sigma = model.sigma_at(t, 0.0);
                let sol = solve_saddle_h(spec, delta, t, &sigma, &zero)?;
                Ok((t, SaddlePoint { p: sol.p_star, b: sol.b_star, sigma, value: sol.value }))
            })
            .collect::<Result<_>>()?;
        Ok(Self { label: label.into(), spec, delta, x0, prefs, saddles, tolerance: 1e-12 })
    }

    pub fn saddle_at(&self, t: f64) -> &SaddlePoint {
        let k = self.saddles.partition_point(|(s, _)| *s <= t).max(1) - 1;
        &self.saddles[k].1
    }

    fn z_at(&self, t: f64) -> Vec<f64> {
        self.prefs.z(t)
    }

    /// `D` at time `t` for the given controls.
    pub fn drift_at(&self, t: f64, ctl: Controls<'_>) -> Result<f64> {
        let saddle = self.saddle_at(t);
        let z = self.z_at(t);
        let ctx = match self.prefs.mode() {
            PreferenceMode::DriftVol => Uncertainty::DriftVol { g_star: saddle.value },
            PreferenceMode::DriftOnly => Uncertainty::DriftOnly { h_star: saddle.value, z: &z },
        };
        drift_integrand(self.spec, self.delta, ctl, self.prefs.log_scale(t)?, self.prefs.lambda(t), ctx)
    }
}

/// A constant-in-time departure from the saddle point.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Deviation {
    None,
    /// Investor deviates; `c = None` keeps optimal consumption.
    Strategy { p: Vec<f64>, c: Option<f64> },
    /// Market deviates from the worst case; `sigma` is a volatility matrix.
    Parameter {
        b: Option<Vec<f64>>,
        #[serde(skip)]
        sigma: Option<DMatrix<f64>>,
    },
}

impl Deviation {
    fn expected_sign(&self) -> ExpectedSign {
        match self {
            Deviation::None => ExpectedSign::Zero,
            Deviation::Strategy { .. } => ExpectedSign::NonPositive,
            Deviation::Parameter { .. } => ExpectedSign::NonNegative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedSign {
    Zero,
    NonPositive,
    NonNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    MartingaleConsistent,
    SupermartingaleConsistent,
    SubmartingaleConsistent,
    Violation,
}

/// `(p, c, b, σ)`.
type ControlSet = (Vec<f64>, f64, Vec<f64>, DMatrix<f64>);

/// Controls actually in force on `[t_k, t_{k+1})`.
fn controls_at(scn: &Scenario<'_>, dev: &Deviation, t: f64) -> Result<ControlSet> {
    let s = scn.saddle_at(t);
    let c_star = scn.prefs.c_star(t)?;
    Ok(match dev {
        Deviation::None => (s.p.clone(), c_star, s.b.clone(), s.sigma.clone()),
        Deviation::Strategy { p, c } => (p.clone(), c.unwrap_or(c_star), s.b.clone(), s.sigma.clone()),
        Deviation::Parameter { b, sigma } => (
            s.p.clone(),
            c_star,
            b.clone().unwrap_or_else(|| s.b.clone()),
            sigma.clone().unwrap_or_else(|| s.sigma.clone()),
        ),
    })
}

fn check_deviation(scn: &Scenario<'_>, dev: &Deviation) -> Result<()> {
    let d = scn.spec.dim();
    let bad = |what: &'static str, detail: String| Error::Inadmissible { what, step: 0, detail };
    match dev {
        Deviation::None => Ok(()),
        Deviation::Strategy { p, c } => {
            if p.len() != d {
                return Err(Error::Dimension { what: "p", expected: d, got: p.len() });
            }
            if !scn.spec.pi_contains(p, 1e-12) {
                return Err(bad("investment proportion", format!("{p:?} outside Π")));
            }
            if c.is_some_and(|c| !(c >= 0.0)) {
                return Err(bad("consumption rate", format!("{c:?} < 0")));
            }
            Ok(())
        }
        Deviation::Parameter { b, sigma } => {
            if let Some(b) = b {
                if b.len() != d {
                    return Err(Error::Dimension { what: "b", expected: d, got: b.len() });
                }
                if !scn.spec.drift_contains(b, 1e-12) {
                    return Err(bad("drift", format!("{b:?} outside 𝔹")));
                }
            }
            if let Some(sigma) = sigma {
                if scn.prefs.mode() == PreferenceMode::DriftOnly {
                    return Err(Error::invalid("volatility is known under drift-only uncertainty"));
                }
                if !scn.spec.covariance_contains(&(sigma * sigma.transpose()), 1e-9) {
                    return Err(bad("volatility", "σσᵀ outside Σ".into()));
                }
            }
            Ok(())
        }
    }
}

/// Summary of `D` over a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftSignSummary {
    pub min: f64,
    pub max: f64,
    pub fraction_nonnegative: f64,
    pub max_abs: f64,
}

/// `D` at every grid time for the controls implied by `dev`.
pub fn drift_sign_summary(scn: &Scenario<'_>, dev: &Deviation, times: &[f64]) -> Result<DriftSignSummary> {
    check_deviation(scn, dev)?;
    let mut vals = Vec::with_capacity(times.len());
    for &t in times {
        let (p, c, b, sigma) = controls_at(scn, dev, t)?;
        vals.push(scn.drift_at(t, Controls { p: &p, c, b: &b, sigma: &sigma })?);
    }
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let nonneg = vals.iter().filter(|v| **v >= 0.0).count();
    Ok(DriftSignSummary {
        min,
        max,
        fraction_nonnegative: nonneg as f64 / vals.len().max(1) as f64,
        max_abs: min.abs().max(max.abs()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartIncrement {
    pub s: f64,
    /// Estimate of `E[R_T − R_s]`.
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub label: String,
    pub mode: PreferenceMode,
    pub deviation: Deviation,
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub confidence: f64,
    pub r0: f64,
    /// Estimate of `E[R_T] − R_0`.
    pub mean_increment: f64,
    pub std_error: f64,
    pub z_score: f64,
    pub verdict: Verdict,
    /// Whether the increment differs from zero at the stated confidence.
    pub significant: bool,
    pub expected_sign: ExpectedSign,
    pub drift: DriftSignSummary,
    /// Verdict and significance agree with the pointwise drift sign.
    pub agrees_with_drift: bool,
    pub restart_increments: Vec<RestartIncrement>,
    /// Realized over predicted quadratic variation of `R` (path-averaged).
    pub qv_ratio: Option<f64>,
}

struct CriterionObserver<'a> {
    plan: &'a Plan,
    delta: f64,
    /// `X^δ` at the current grid point.
    x_pow: f64,
    consumption: f64,
    r_prev: f64,
    qv_realized: f64,
    qv_predicted: f64,
    at_restarts: Vec<f64>,
    full: Option<Vec<f64>>,
}

/// Per-step quantities shared by all paths.
struct Plan {
    scale: Vec<f64>,
    cons_weight: Vec<f64>,
    c: Vec<f64>,
    dt: Vec<f64>,
    /// `|δσᵀp + Z|²` per step.
    vol_sq: Vec<f64>,
    restart_idx: Vec<usize>,
}

impl PathObserver for CriterionObserver<'_> {
    type Output = (Vec<f64>, f64, f64, Option<Vec<f64>>);

    fn step(&mut self, k: usize, log_x: f64, _dw: &[f64]) {
        let plan = self.plan;
        let x_pow_prev = self.x_pow;
        let u_prev = x_pow_prev / self.delta * plan.scale[k];
        let c = plan.c[k];
        if c > 0.0 {
            self.consumption += c.powf(self.delta) * x_pow_prev / self.delta * plan.cons_weight[k] * plan.dt[k];
        }
        self.x_pow = (self.delta * log_x).exp();
        let r = self.x_pow / self.delta * plan.scale[k + 1] + self.consumption;
        let dr = r - self.r_prev;
        self.qv_realized += dr * dr;
        self.qv_predicted += u_prev * u_prev * plan.vol_sq[k] * plan.dt[k];
        self.r_prev = r;
        if let Ok(i) = plan.restart_idx.binary_search(&(k + 1)) {
            self.at_restarts[i] = r;
        }
        if let Some(full) = &mut self.full {
            full.push(r);
        }
    }

    fn finish(self) -> Self::Output {
        (self.at_restarts, self.qv_realized, self.qv_predicted, self.full)
    }
}

fn build_strategy(scn: &Scenario<'_>, dev: &Deviation, times: &[f64]) -> Result<StrategyPath> {
    let n = times.len() - 1;
    let (mut ps, mut cs, mut bs, mut ss) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &t in &times[..n] {
        let (p, c, b, s) = controls_at(scn, dev, t)?;
        ps.push(p);
        cs.push(c);
        bs.push(b);
        ss.push(s);
    }
    StrategyPath::new(times.to_vec(), ps, cs, bs, ss)
}

fn build_plan(scn: &Scenario<'_>, strat: &StrategyPath, restart_idx: Vec<usize>) -> Result<Plan> {
    let times = strat.times();
    let delta = scn.delta;
    let scale = times.iter().map(|&t| scn.prefs.log_scale(t).map(f64::exp)).collect::<Result<Vec<_>>>()?;
    let n = strat.n_steps();
    let mut vol_sq = Vec::with_capacity(n);
    for (k, &t) in times.iter().enumerate().take(n) {
        let p = &strat.p()[k];
        let sigma = &strat.sigma()[k];
        let z = scn.prefs.z(t);
        let v: f64 = (0..p.len())
            .map(|j| {
                let e: f64 = (0..p.len()).map(|i| sigma[(i, j)] * p[i]).sum();
                let w = delta * e + z.get(j).copied().unwrap_or(0.0);
                w * w
            })
            .sum();
        vol_sq.push(v);
    }
    Ok(Plan {
        scale,
        cons_weight: times.iter().map(|&t| scn.prefs.lambda(t)).collect(),
        c: strat.c().to_vec(),
        dt: times.windows(2).map(|w| w[1] - w[0]).collect(),
        vol_sq,
        restart_idx,
    })
}

/// Restart times `s ∈ {0, T/4, T/2, 3T/4}` as grid indices.
fn restart_indices(n_steps: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..4).map(|i| i * n_steps / 4).collect();
    idx.push(n_steps);
    idx.dedup();
    idx
}

/// Monte Carlo test of the martingale / super- / submartingale property of
/// `R` under a deviation, with the pointwise drift sign as primary evidence.
#[allow(clippy::too_many_arguments)]
pub fn run_martingale_test(
    scn: &Scenario<'_>,
    dev: &Deviation,
    n_paths: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
    confidence: f64,
) -> Result<MartingaleReport> {
    if !(confidence > 0.5 && confidence < 1.0) {
        return Err(Error::invalid("confidence must lie in (0.5, 1)"));
    }
    if n_paths < 2 {
        return Err(Error::invalid("n_paths must be at least 2"));
    }
    check_deviation(scn, dev)?;
    let times = StrategyPath::uniform_grid(horizon, dt)?;
    let strat = build_strategy(scn, dev, &times)?;
    let n = strat.n_steps();
    let restart_idx = restart_indices(n);
    let plan = build_plan(scn, &strat, restart_idx.clone())?;
    let drift = drift_sign_summary(scn, dev, &times[..n])?;
    let r0 = scn.prefs.u(scn.x0, 0.0)?;

    let out = observe_paths(scn.spec, scn.x0, &strat, n_paths, seed, dt, |_| {
        let mut at_restarts = vec![0.0; restart_idx.len()];
        at_restarts[0] = r0;
        CriterionObserver {
            plan: &plan,
            delta: scn.delta,
            x_pow: scn.x0.powf(scn.delta),
            consumption: 0.0,
            r_prev: r0,
            qv_realized: 0.0,
            qv_predicted: 0.0,
            at_restarts,
            full: None,
        }
    })?;

    let last = restart_idx.len() - 1;
    let increments: Vec<f64> = out.iter().map(|o| o.0[last] - r0).collect();
    let m = SampleMoments::of(&increments);
    let se = m.std_error();
    let z_score = if se > 0.0 { m.mean / se } else if m.mean == 0.0 { 0.0 } else { m.mean.signum() * f64::INFINITY };
    let expected_sign = dev.expected_sign();
    let q_two = normal_quantile(1.0 - (1.0 - confidence) / 2.0);
    let q_one = normal_quantile(confidence);
    let (verdict, significant) = match expected_sign {
        ExpectedSign::Zero => {
            let sig = z_score.abs() > q_two;
            (if sig { Verdict::Violation } else { Verdict::MartingaleConsistent }, sig)
        }
        ExpectedSign::NonPositive => (
            if z_score > q_one { Verdict::Violation } else { Verdict::SupermartingaleConsistent },
            z_score < -q_one,
        ),
        ExpectedSign::NonNegative => (
            if z_score < -q_one { Verdict::Violation } else { Verdict::SubmartingaleConsistent },
            z_score > q_one,
        ),
    };
    let tol = scn.tolerance.max(1e-10);
    let agrees_with_drift = match expected_sign {
        ExpectedSign::Zero => drift.max_abs <= tol && verdict == Verdict::MartingaleConsistent,
        ExpectedSign::NonPositive => {
            drift.max <= tol && verdict != Verdict::Violation && (drift.max >= -tol || significant)
        }
        ExpectedSign::NonNegative => {
            drift.min >= -tol && verdict != Verdict::Violation && (drift.min <= tol || significant)
        }
    };

    let restart_increments = restart_idx[..last]
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let inc: Vec<f64> = out.iter().map(|o| o.0[last] - o.0[i]).collect();
            let m = SampleMoments::of(&inc);
            RestartIncrement { s: times[k], mean: m.mean, std_error: m.std_error() }
        })
        .collect();

    let realized: Vec<f64> = out.iter().map(|o| o.1).collect();
    let predicted: Vec<f64> = out.iter().map(|o| o.2).collect();
    let pred_sum = pairwise_sum(&predicted);
    let qv_ratio = (pred_sum > 0.0).then(|| pairwise_sum(&realized) / pred_sum);

    Ok(MartingaleReport {
        label: scn.label.clone(),
        mode: scn.prefs.mode(),
        deviation: dev.clone(),
        n_paths,
        horizon,
        dt,
        seed,
        confidence,
        r0,
        mean_increment: m.mean,
        std_error: se,
        z_score,
        verdict,
        significant,
        expected_sign,
        drift,
        agrees_with_drift,
        restart_increments,
        qv_ratio,
    })
}

/// Full `R` trajectories on the grid for a few paths.
pub fn criterion_paths(
    scn: &Scenario<'_>,
    dev: &Deviation,
    n_paths: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    check_deviation(scn, dev)?;
    let times = StrategyPath::uniform_grid(horizon, dt)?;
    let strat = build_strategy(scn, dev, &times)?;
    let plan = build_plan(scn, &strat, Vec::new())?;
    let r0 = scn.prefs.u(scn.x0, 0.0)?;
    let out = observe_paths(scn.spec, scn.x0, &strat, n_paths, seed, dt, |_| CriterionObserver {
        plan: &plan,
        delta: scn.delta,
        x_pow: scn.x0.powf(scn.delta),
        consumption: 0.0,
        r_prev: r0,
        qv_realized: 0.0,
        qv_predicted: 0.0,
        at_restarts: Vec::new(),
        full: Some(vec![r0]),
    })?;
    Ok((times, out.into_iter().map(|o| o.3.unwrap()).collect()))
}

/// CSV with columns `path_id,t,R`.
pub fn write_r_csv<W: Write>(times: &[f64], paths: &[Vec<f64>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "t", "R"])?;
    for (id, path) in paths.iter().enumerate() {
        for (t, r) in times.iter().zip(path) {
            w.write_record([id.to_string(), t.to_string(), r.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignCheckReport {
    pub n_strategy: usize,
    pub strategy_violations: usize,
    pub max_strategy_drift: f64,
    pub n_parameter: usize,
    pub parameter_violations: usize,
    pub min_parameter_drift: f64,
    /// Largest `|D|` at the saddle over the check times.
    pub saddle_max_abs: f64,
}

impl SignCheckReport {
    pub fn passed(&self) -> bool {
        self.strategy_violations == 0 && self.parameter_violations == 0
    }
}

fn sample_box(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(&l, &h)| {
            let (l, h) = (l.max(-10.0), h.min(10.0));
            if h > l {
                rng.random_range(l..=h)
            } else {
                l
            }
        })
        .collect()
}

/// Random constant deviations: strategies `(p, c)` must give `D ≤ 0`,
/// parameters `(b, σ)` must give `D ≥ 0`, at every check time.
pub fn random_deviation_sign_check(scn: &Scenario<'_>, n_each: usize, seed: u64, times: &[f64]) -> Result<SignCheckReport> {
    let spec = scn.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = scn.tolerance.max(1e-12);
    let saddle_max_abs = drift_sign_summary(scn, &Deviation::None, times)?.max_abs;
    let mut report = SignCheckReport {
        n_strategy: n_each,
        strategy_violations: 0,
        max_strategy_drift: f64::NEG_INFINITY,
        n_parameter: n_each,
        parameter_violations: 0,
        min_parameter_drift: f64::INFINITY,
        saddle_max_abs,
    };
    for _ in 0..n_each {
        let p = sample_box(&mut rng, spec.pi_lo(), spec.pi_hi());
        let c = if rng.random_bool(0.5) { None } else { Some(rng.random_range(0.0..2.0)) };
        let s = drift_sign_summary(scn, &Deviation::Strategy { p, c }, times)?;
        report.max_strategy_drift = report.max_strategy_drift.max(s.max);
        if s.max > tol {
            report.strategy_violations += 1;
        }
    }
    let vertices = spec.cov_vertices();
    for _ in 0..n_each {
        let b = Some(sample_box(&mut rng, spec.b_lo(), spec.b_hi()));
        let sigma = match scn.prefs.mode() {
            PreferenceMode::DriftOnly => None,
            PreferenceMode::DriftVol => {
                // random point of the covariance polytope
                let w: Vec<f64> = (0..vertices.len()).map(|_| -rng.random_range(f64::EPSILON..1.0).ln()).collect();
                let total: f64 = w.iter().sum();
                let mut cov = DMatrix::zeros(spec.dim(), spec.dim());
                for (wi, v) in w.iter().zip(vertices) {
                    cov += v * (wi / total);
                }
                Some(psd_sqrt(&cov))
            }
        };
        let s = drift_sign_summary(scn, &Deviation::Parameter { b, sigma }, times)?;
        report.min_parameter_drift = report.min_parameter_drift.min(s.min);
        if s.min < -tol {
            report.parameter_violations += 1;
        }
    }
    Ok(report)
}
