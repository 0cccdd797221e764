//! Robust forward CRRA preference pairs `(U, U^c)`.
//!
//! Drift and volatility uncertainty: `U(x,t) = xᵟ/δ·e^{Y_t}` with
//!
//! ```text
//! Y_t = −Gt + (1−δ)·ln(e^{Y_0/(1−δ)} − ∫₀ᵗ e^{Gs/(1−δ)} λ_s^{1/(1−δ)} ds).
//! ```
//!
//! Drift uncertainty only: `U(x,t) = xᵟ/δ·e^{Y_t − g_t}` where `Y` solves the
//! infinite-horizon BSDE and
//!
//! ```text
//! g_t = ρ∫₀ᵗY_s ds − (1−δ)·ln(e^{−g_0/(1−δ)} − ∫₀ᵗ e^{(ρ∫₀ˢY_u du − Y_s)/(1−δ)} λ_s^{1/(1−δ)} ds).
//! ```
//!
//! In both cases `U^c(C,t) = Cᵟ/δ·λ_t`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::quad::adaptive_simpson;
use crate::{Error, Real, Result};

const QUAD_TOL: f64 = 1e-13;

/// Deterministic consumption weight `λ_t ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSpec<T: Real> {
    Zero,
    /// `λ_t = α·e^{−(rate_base + β)t}`.
    Exponential { alpha: T, beta: T, rate_base: T },
    /// Piecewise-linear through `(grid, values)`, constant beyond both ends.
    Tabulated { grid: Vec<T>, values: Vec<T> },
}

impl<T: Real> LambdaSpec<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            LambdaSpec::Zero => Ok(()),
            LambdaSpec::Exponential { alpha, beta, rate_base } => {
                if !(*alpha >= T::zero()) || !alpha.is_finite() {
                    return Err(Error::invalid("lambda: alpha must be finite and >= 0"));
                }
                if !(*beta > T::zero()) || !beta.is_finite() {
                    return Err(Error::invalid("lambda: beta must be finite and > 0"));
                }
                if !rate_base.is_finite() {
                    return Err(Error::NonIntegrable("lambda: rate_base must be finite".into()));
                }
                Ok(())
            }
            LambdaSpec::Tabulated { grid, values } => {
                if grid.is_empty() || grid.len() != values.len() {
                    return Err(Error::invalid("lambda table: grid and values must be non-empty and equally long"));
                }
                if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|t| !t.is_finite()) {
                    return Err(Error::invalid("lambda table: grid must be finite and strictly increasing"));
                }
                if values.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
                    return Err(Error::invalid("lambda table: values must be finite and >= 0"));
                }
                Ok(())
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            LambdaSpec::Zero => true,
            LambdaSpec::Exponential { alpha, .. } => *alpha == T::zero(),
            LambdaSpec::Tabulated { values, .. } => values.iter().all(|v| *v == T::zero()),
        }
    }

    pub fn value(&self, t: T) -> T {
        match self {
            LambdaSpec::Zero => T::zero(),
            LambdaSpec::Exponential { alpha, beta, rate_base } => *alpha * (-(*rate_base + *beta) * t).exp(),
            LambdaSpec::Tabulated { grid, values } => {
                let n = grid.len();
                if t <= grid[0] {
                    return values[0];
                }
                if t >= grid[n - 1] {
                    return values[n - 1];
                }
                let k = grid.partition_point(|&g| g <= t) - 1;
                let w = (t - grid[k]) / (grid[k + 1] - grid[k]);
                values[k] + w * (values[k + 1] - values[k])
            }
        }
    }

    /// Table nodes strictly inside `(a, b)`; kinks the quadrature must respect.
    fn breakpoints(&self, a: T, b: T) -> Vec<T> {
        match self {
            LambdaSpec::Tabulated { grid, .. } => grid.iter().cloned().filter(|&g| g > a && g < b).collect(),
            _ => Vec::new(),
        }
    }

    pub fn cast<U: Real>(&self) -> LambdaSpec<U> {
        let c = |x: T| U::from(x).unwrap();
        match self {
            LambdaSpec::Zero => LambdaSpec::Zero,
            LambdaSpec::Exponential { alpha, beta, rate_base } => {
                LambdaSpec::Exponential { alpha: c(*alpha), beta: c(*beta), rate_base: c(*rate_base) }
            }
            LambdaSpec::Tabulated { grid, values } => LambdaSpec::Tabulated {
                grid: grid.iter().map(|&x| c(x)).collect(),
                values: values.iter().map(|&x| c(x)).collect(),
            },
        }
    }
}

#[derive(serde::Deserialize)]
struct LambdaRow {
    t: f64,
    lambda: f64,
}

impl LambdaSpec<f64> {
    /// Reads a `t,lambda` table with a header row.
    pub fn from_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for row in rdr.deserialize() {
            let row: LambdaRow = row?;
            grid.push(row.t);
            values.push(row.lambda);
        }
        let spec = LambdaSpec::Tabulated { grid, values };
        spec.validate()?;
        Ok(spec)
    }
}

/// Outcome of an admissibility check on `λ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct ConditionReport<T: Real> {
    /// Strict inequality at every grid time of the checked horizon.
    pub holds: bool,
    /// Cap minus the largest integral value on the grid.
    pub margin: T,
    pub first_violation_time: Option<T>,
    /// Supremum of the integral over `[0, ∞)` (or an upper bound for it).
    pub analytic_sup: Option<T>,
    /// The strict sufficient condition `cap > analytic_sup`.
    pub sufficient_condition: Option<bool>,
    /// Whether the inequality holds at every finite time, when decidable.
    pub holds_for_all_time: Option<bool>,
}

fn check_delta<T: Real>(delta: T) -> Result<()> {
    if delta > T::zero() && delta < T::one() {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta must lie in (0,1), got {:?}", delta)))
    }
}

fn grid_times<T: Real>(horizon: T, n_grid: usize) -> Result<Vec<T>> {
    if !(horizon > T::zero()) || !horizon.is_finite() {
        return Err(Error::invalid("horizon must be positive and finite"));
    }
    if n_grid == 0 {
        return Err(Error::invalid("n_grid must be >= 1"));
    }
    let n = T::from(n_grid).unwrap();
    Ok((0..=n_grid).map(|k| horizon * T::from(k).unwrap() / n).collect())
}

/// Smallest `t ∈ (a, b]` with `f(t) ≥ cap`, assuming `f` non-decreasing and
/// `f(a) < cap ≤ f(b)`.
fn bisect_crossing<T: Real, F: Fn(T) -> T>(f: F, cap: T, mut a: T, mut b: T) -> T {
    let two = T::one() + T::one();
    for _ in 0..200 {
        let m = (a + b) / two;
        if m <= a || m >= b {
            break;
        }
        if f(m) >= cap {
            b = m;
        } else {
            a = m;
        }
    }
    b
}

/// Scans a grid for the first time the non-decreasing `integral` reaches `cap`.
fn scan_condition<T: Real, F: Fn(T) -> T>(integral: F, cap: T, horizon: T, n_grid: usize) -> Result<ConditionReport<T>> {
    let times = grid_times(horizon, n_grid)?;
    let mut sup = T::zero();
    let mut prev = T::zero();
    let mut first = None;
    for &t in &times {
        let v = integral(t);
        if v.is_nan() {
            return Err(Error::NonIntegrable(format!("integral is NaN at t = {:?}", t)));
        }
        sup = sup.max(v);
        if first.is_none() && v >= cap {
            first = Some(if t == T::zero() { t } else { bisect_crossing(&integral, cap, prev, t) });
        }
        prev = t;
    }
    Ok(ConditionReport {
        holds: first.is_none(),
        margin: cap - sup,
        first_violation_time: first,
        analytic_sup: None,
        sufficient_condition: None,
        holds_for_all_time: None,
    })
}

/// Closed-form solution `Y` of the drift/volatility-uncertainty preference ODE
/// `Y' = −(G + (1−δ)λ^{1/(1−δ)}e^{−Y/(1−δ)})`.
#[derive(Debug, Clone, PartialEq)]
pub struct YClosedForm<T: Real> {
    pub y0: T,
    pub g: T,
    pub lambda: LambdaSpec<T>,
    pub delta: T,
}

impl<T: Real> YClosedForm<T> {
    pub fn new(y0: T, g: T, lambda: LambdaSpec<T>, delta: T) -> Result<Self> {
        check_delta(delta)?;
        lambda.validate()?;
        if !y0.is_finite() || !g.is_finite() {
            return Err(Error::invalid("Y0 and G must be finite"));
        }
        Ok(Self { y0, g, lambda, delta })
    }

    /// The family `λ_t = e^{Y_0}e^{−(G+β)t}` whose optimal consumption starts at one.
    pub fn consumption_family(y0: T, g: T, beta: T, delta: T) -> Result<Self> {
        Self::new(y0, g, LambdaSpec::Exponential { alpha: y0.exp(), beta, rate_base: g }, delta)
    }

    fn q(&self) -> T {
        T::one() / (T::one() - self.delta)
    }

    /// `e^{Y_0/(1−δ)}`.
    pub fn cap(&self) -> T {
        (self.y0 * self.q()).exp()
    }

    /// `I(t) = ∫₀ᵗ e^{Gs/(1−δ)} λ_s^{1/(1−δ)} ds`.
    pub fn integral(&self, t: T) -> T {
        let q = self.q();
        match &self.lambda {
            LambdaSpec::Zero => T::zero(),
            LambdaSpec::Exponential { alpha, beta, rate_base } => {
                let kappa = (self.g - *rate_base - *beta) * q;
                let scale = alpha.powf(q);
                if kappa == T::zero() {
                    scale * t
                } else {
                    scale * (kappa * t).exp_m1() / kappa
                }
            }
            LambdaSpec::Tabulated { .. } => {
                let f = |s: T| (self.g * s * q).exp() * self.lambda.value(s).powf(q);
                let mut knots = vec![T::zero()];
                knots.extend(self.lambda.breakpoints(T::zero(), t));
                knots.push(t);
                let tol = T::from(QUAD_TOL).unwrap();
                knots.windows(2).fold(T::zero(), |acc, w| acc + adaptive_simpson(&f, w[0], w[1], tol))
            }
        }
    }

    pub fn check_condition_1(&self, horizon: T, n_grid: usize) -> Result<ConditionReport<T>> {
        let cap = self.cap();
        let mut report = scan_condition(|t| self.integral(t), cap, horizon, n_grid)?;
        match &self.lambda {
            LambdaSpec::Zero => {
                report.analytic_sup = Some(T::zero());
                report.sufficient_condition = Some(true);
                report.holds_for_all_time = Some(true);
            }
            LambdaSpec::Exponential { alpha, beta, rate_base } => {
                let q = self.q();
                let kappa = (self.g - *rate_base - *beta) * q;
                let sup = if *alpha == T::zero() {
                    T::zero()
                } else if kappa < T::zero() {
                    alpha.powf(q) / -kappa
                } else {
                    T::infinity()
                };
                report.analytic_sup = Some(sup);
                report.sufficient_condition = Some(cap > sup);
                // the supremum is approached but never attained
                report.holds_for_all_time = Some(cap >= sup || sup == T::zero());
            }
            LambdaSpec::Tabulated { .. } => {}
        }
        Ok(report)
    }

    /// `Y_t`; errors once the logarithm's argument is no longer positive.
    pub fn value(&self, t: T) -> Result<T> {
        if t == T::zero() {
            return Ok(self.y0);
        }
        if self.lambda.is_zero() {
            return Ok(self.y0 - self.g * t);
        }
        let arg = self.cap() - self.integral(t);
        if !(arg > T::zero()) {
            return Err(Error::ConditionViolated { which: 1, time: t.to_f64().unwrap_or(f64::NAN) });
        }
        Ok(-self.g * t + (T::one() - self.delta) * arg.ln())
    }

    /// Right-hand side of the ODE satisfied by `Y`.
    pub fn ode_rhs(&self, t: T, y: T) -> T {
        let q = self.q();
        -(self.g + (T::one() - self.delta) * self.lambda.value(t).powf(q) * (-y * q).exp())
    }

    /// Optimal consumption rate `c*_t = λ_t^{1/(1−δ)} e^{−Y_t/(1−δ)}`.
    pub fn consumption(&self, t: T) -> Result<T> {
        let lam = self.lambda.value(t);
        if lam == T::zero() {
            return Ok(T::zero());
        }
        let q = self.q();
        Ok(lam.powf(q) * (-self.value(t)? * q).exp())
    }
}

/// Closed-form `g` of the drift-uncertainty preference, driven by a tabulated
/// BSDE solution `Y` (piecewise-linear between nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct GClosedForm<T: Real> {
    pub g0: T,
    times: Vec<T>,
    ys: Vec<T>,
    pub rho: T,
    pub lambda: LambdaSpec<T>,
    pub delta: T,
    y_cum: Vec<T>,
    j_cum: Vec<T>,
}

impl<T: Real> GClosedForm<T> {
    pub fn new(g0: T, times: Vec<T>, ys: Vec<T>, rho: T, lambda: LambdaSpec<T>, delta: T) -> Result<Self> {
        check_delta(delta)?;
        lambda.validate()?;
        if !(rho > T::zero()) {
            return Err(Error::invalid("rho must be positive"));
        }
        if times.is_empty() || times.len() != ys.len() || times[0] != T::zero() {
            return Err(Error::invalid("Y path needs equally long times/values starting at t = 0"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("Y path times must be strictly increasing"));
        }
        if ys.iter().any(|y| !y.is_finite()) || !g0.is_finite() {
            return Err(Error::invalid("Y path and g0 must be finite"));
        }
        let two = T::one() + T::one();
        let mut y_cum = vec![T::zero()];
        for k in 1..times.len() {
            let prev = y_cum[k - 1];
            y_cum.push(prev + (times[k] - times[k - 1]) * (ys[k] + ys[k - 1]) / two);
        }
        let mut out = Self { g0, times, ys, rho, lambda, delta, y_cum, j_cum: Vec::new() };
        let mut j_cum = vec![T::zero()];
        for k in 1..out.times.len() {
            let seg = out.segment_integral(out.times[k - 1], out.times[k]);
            j_cum.push(j_cum[k - 1] + seg);
        }
        out.j_cum = j_cum;
        Ok(out)
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn y_values(&self) -> &[T] {
        &self.ys
    }

    pub fn horizon(&self) -> T {
        *self.times.last().unwrap()
    }

    fn q(&self) -> T {
        T::one() / (T::one() - self.delta)
    }

    fn locate(&self, t: T) -> usize {
        let n = self.times.len();
        if n == 1 {
            return 0;
        }
        (self.times.partition_point(|&s| s <= t).max(1) - 1).min(n - 2)
    }

    fn covered(&self, t: T) -> Result<()> {
        if t < T::zero() || t > self.horizon() {
            return Err(Error::PathTooShort {
                covered: self.horizon().to_f64().unwrap_or(f64::NAN),
                required: t.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(())
    }

    /// Linearly interpolated `Y_t`.
    pub fn y_at(&self, t: T) -> T {
        if self.times.len() == 1 {
            return self.ys[0];
        }
        let k = self.locate(t);
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.ys[k] + w * (self.ys[k + 1] - self.ys[k])
    }

    /// `∫₀ᵗ Y_s ds`, exact for the interpolant.
    pub fn y_integral(&self, t: T) -> T {
        if self.times.len() == 1 {
            return self.ys[0] * t;
        }
        let two = T::one() + T::one();
        let k = self.locate(t);
        self.y_cum[k] + (t - self.times[k]) * (self.ys[k] + self.y_at(t)) / two
    }

    fn integrand(&self, s: T) -> T {
        let q = self.q();
        let lam = self.lambda.value(s);
        if lam == T::zero() {
            return T::zero();
        }
        ((self.rho * self.y_integral(s) - self.y_at(s)) * q).exp() * lam.powf(q)
    }

    fn segment_integral(&self, a: T, b: T) -> T {
        if self.lambda.is_zero() || a == b {
            return T::zero();
        }
        let f = |s: T| self.integrand(s);
        let mut knots = vec![a];
        knots.extend(self.lambda.breakpoints(a, b));
        knots.push(b);
        let tol = T::from(QUAD_TOL).unwrap();
        knots.windows(2).fold(T::zero(), |acc, w| acc + adaptive_simpson(&f, w[0], w[1], tol))
    }

    /// `J(t) = ∫₀ᵗ e^{(ρ∫₀ˢY − Y_s)/(1−δ)} λ_s^{1/(1−δ)} ds`.
    pub fn integral(&self, t: T) -> Result<T> {
        self.covered(t)?;
        if self.lambda.is_zero() {
            return Ok(T::zero());
        }
        let k = self.locate(t);
        let base = if self.times.len() == 1 { T::zero() } else { self.j_cum[k] };
        let from = if self.times.len() == 1 { T::zero() } else { self.times[k] };
        Ok(base + self.segment_integral(from, t))
    }

    /// `e^{−g_0/(1−δ)}`.
    pub fn cap(&self) -> T {
        (-self.g0 * self.q()).exp()
    }

    pub fn check_condition_2(&self, horizon: T, n_grid: usize) -> Result<ConditionReport<T>> {
        self.covered(horizon)?;
        let cap = self.cap();
        let mut report = scan_condition(|t| self.integral(t).unwrap_or(T::nan()), cap, horizon, n_grid)?;
        match &self.lambda {
            LambdaSpec::Zero => {
                report.analytic_sup = Some(T::zero());
                report.sufficient_condition = Some(true);
                report.holds_for_all_time = Some(true);
            }
            LambdaSpec::Exponential { alpha, beta, rate_base } => {
                let c = self.ys.iter().fold(T::zero(), |m, y| m.max(y.abs()));
                // the bound needs the decay rate to dominate ρC
                if *rate_base >= self.rho * c {
                    let q = self.q();
                    let sup = (T::one() - self.delta) / *beta * alpha.powf(q) * (c * q).exp();
                    report.analytic_sup = Some(sup);
                    report.sufficient_condition = Some(cap > sup);
                }
            }
            LambdaSpec::Tabulated { .. } => {}
        }
        Ok(report)
    }

    /// `g_t`; errors once the logarithm's argument is no longer positive.
    pub fn value(&self, t: T) -> Result<T> {
        self.covered(t)?;
        if t == T::zero() {
            return Ok(self.g0);
        }
        let drift = self.rho * self.y_integral(t);
        if self.lambda.is_zero() {
            return Ok(drift + self.g0);
        }
        let arg = self.cap() - self.integral(t)?;
        if !(arg > T::zero()) {
            return Err(Error::ConditionViolated { which: 2, time: t.to_f64().unwrap_or(f64::NAN) });
        }
        Ok(drift - (T::one() - self.delta) * arg.ln())
    }

    /// Right-hand side of `g' = ρY_t + (1−δ)λ_t^{1/(1−δ)} e^{(g − Y_t)/(1−δ)}`.
    pub fn ode_rhs(&self, t: T, g: T) -> T {
        let q = self.q();
        let y = self.y_at(t);
        self.rho * y + (T::one() - self.delta) * self.lambda.value(t).powf(q) * ((g - y) * q).exp()
    }

    /// `c*_t = λ_t^{1/(1−δ)} e^{−Y_t/(1−δ)} e^{g_t/(1−δ)}`.
    pub fn consumption(&self, t: T) -> Result<T> {
        let lam = self.lambda.value(t);
        if lam == T::zero() {
            self.covered(t)?;
            return Ok(T::zero());
        }
        let q = self.q();
        Ok(lam.powf(q) * ((self.value(t)? - self.y_at(t)) * q).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceMode {
    DriftVol,
    DriftOnly,
}

#[derive(Debug, Clone)]
enum Kind<T: Real> {
    DriftVol(YClosedForm<T>),
    DriftOnly { g: GClosedForm<T>, z_times: Vec<T>, z: Vec<Vec<T>> },
}

/// Evaluators for `U`, `U^c`, optimal consumption and the volatility process `a`.
#[derive(Debug, Clone)]
pub struct PreferencePair<T: Real> {
    kind: Kind<T>,
    dim: usize,
}

impl<T: Real> PreferencePair<T> {
    /// Drift/volatility uncertainty; condition 1 is checked on `[0, horizon]`.
    pub fn drift_vol(y: YClosedForm<T>, dim: usize, horizon: T, n_grid: usize) -> Result<Self> {
        let report = y.check_condition_1(horizon, n_grid)?;
        if let Some(t) = report.first_violation_time {
            return Err(Error::ConditionViolated { which: 1, time: t.to_f64().unwrap_or(f64::NAN) });
        }
        Ok(Self { kind: Kind::DriftVol(y), dim })
    }

    /// Drift uncertainty only; `z` holds `Z` on `z_times` (held constant to the
    /// right of each node). Condition 2 is checked on `[0, horizon]`.
    pub fn drift_only(
        g: GClosedForm<T>,
        z_path: Option<(Vec<T>, Vec<Vec<T>>)>,
        horizon: T,
        n_grid: usize,
    ) -> Result<Self> {
        let (z_times, z) = z_path.ok_or(Error::MissingZ)?;
        if z_times.is_empty() || z_times.len() != z.len() {
            return Err(Error::invalid("Z path needs equally long, non-empty times and values"));
        }
        let dim = z[0].len();
        if z.iter().any(|row| row.len() != dim) {
            return Err(Error::invalid("Z path rows must share one dimension"));
        }
        let report = g.check_condition_2(horizon, n_grid)?;
        if let Some(t) = report.first_violation_time {
            return Err(Error::ConditionViolated { which: 2, time: t.to_f64().unwrap_or(f64::NAN) });
        }
        Ok(Self { kind: Kind::DriftOnly { g, z_times, z }, dim })
    }

    pub fn mode(&self) -> PreferenceMode {
        match self.kind {
            Kind::DriftVol(_) => PreferenceMode::DriftVol,
            Kind::DriftOnly { .. } => PreferenceMode::DriftOnly,
        }
    }

    pub fn delta(&self) -> T {
        match &self.kind {
            Kind::DriftVol(y) => y.delta,
            Kind::DriftOnly { g, .. } => g.delta,
        }
    }

    pub fn lambda(&self, t: T) -> T {
        match &self.kind {
            Kind::DriftVol(y) => y.lambda.value(t),
            Kind::DriftOnly { g, .. } => g.lambda.value(t),
        }
    }

    pub fn y(&self, t: T) -> Result<T> {
        match &self.kind {
            Kind::DriftVol(y) => y.value(t),
            Kind::DriftOnly { g, .. } => {
                g.covered(t)?;
                Ok(g.y_at(t))
            }
        }
    }

    /// `g_t` (identically zero under drift/volatility uncertainty).
    pub fn g(&self, t: T) -> Result<T> {
        match &self.kind {
            Kind::DriftVol(_) => Ok(T::zero()),
            Kind::DriftOnly { g, .. } => g.value(t),
        }
    }

    /// Exponent `Y_t − g_t` of the wealth utility.
    pub fn log_scale(&self, t: T) -> Result<T> {
        Ok(self.y(t)? - self.g(t)?)
    }

    pub fn u(&self, x: T, t: T) -> Result<T> {
        let d = self.delta();
        Ok(x.powf(d) / d * self.log_scale(t)?.exp())
    }

    /// `∂U/∂x`.
    pub fn u_x(&self, x: T, t: T) -> Result<T> {
        let d = self.delta();
        Ok(x.powf(d - T::one()) * self.log_scale(t)?.exp())
    }

    pub fn uc(&self, c: T, t: T) -> T {
        let d = self.delta();
        c.powf(d) / d * self.lambda(t)
    }

    pub fn c_star(&self, t: T) -> Result<T> {
        match &self.kind {
            Kind::DriftVol(y) => y.consumption(t),
            Kind::DriftOnly { g, .. } => g.consumption(t),
        }
    }

    /// `Z_t` (step interpolation); zero under drift/volatility uncertainty.
    pub fn z(&self, t: T) -> Vec<T> {
        match &self.kind {
            Kind::DriftVol(_) => vec![T::zero(); self.dim],
            Kind::DriftOnly { z_times, z, .. } => {
                let k = z_times.partition_point(|&s| s <= t).max(1) - 1;
                z[k].clone()
            }
        }
    }

    /// Volatility process `a(x,t) = U(x,t)·Z_t`.
    pub fn a(&self, x: T, t: T) -> Result<Vec<T>> {
        let u = self.u(x, t)?;
        Ok(self.z(t).into_iter().map(|z| u * z).collect())
    }
}

impl PreferencePair<f64> {
    /// Writes `t,Y,g,c_star,U_at_x,Uc_at_C` for the probe points `x`, `c`.
    pub fn write_csv<W: Write>(&self, times: &[f64], x: f64, c: f64, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "Y", "g", "c_star", "U_at_x", "Uc_at_C"])?;
        for &t in times {
            w.write_record(&[
                t.to_string(),
                self.y(t)?.to_string(),
                self.g(t)?.to_string(),
                self.c_star(t)?.to_string(),
                self.u(x, t)?.to_string(),
                self.uc(c, t).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
