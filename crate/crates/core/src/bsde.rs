//! Infinite-horizon BSDE
//!
//! ```text
//! dY_t = −(H(t, Z_t) + ½|Z_t|² − ρY_t) dt + Z_tᵀ dW_t,
//! ```
//!
//! truncated at a finite horizon `T` with `Y_T = 0`. Deterministic volatility
//! reduces it to a linear ODE (`Z ≡ 0`); volatility driven by a Markovian
//! factor is handled by least-squares regression Monte Carlo.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{is_diagonal, matrix_rows, matrix_rows_vec, spectral_norm, sym_eigen_extremes};
use crate::market::{MarketSpec, StrategyPath};
use crate::rng::NormalStream;
use crate::saddle::{h_value_diagonal, solve_saddle_h};
use crate::stats::pairwise_sum;
use crate::{Error, Result};

/// Condition number above which the regression basis is reduced.
pub const MAX_CONDITION: f64 = 1e10;
const CHECKPOINT: usize = 32;

/// One-dimensional factor `dV = κ(θ − V)dt + η dW¹` with
/// `σ(V) = base·(s_lo + (s_hi − s_lo)·logistic(V))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovFactor {
    pub kappa: f64,
    pub theta: f64,
    pub eta: f64,
    pub v0: f64,
    #[serde(with = "matrix_rows")]
    pub base: DMatrix<f64>,
    pub scale_lo: f64,
    pub scale_hi: f64,
}

impl MarkovFactor {
    pub fn scale(&self, v: f64) -> f64 {
        self.scale_lo + (self.scale_hi - self.scale_lo) / (1.0 + (-v).exp())
    }

    pub fn sigma(&self, v: f64) -> DMatrix<f64> {
        &self.base * self.scale(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaModel {
    Constant {
        #[serde(with = "matrix_rows")]
        sigma: DMatrix<f64>,
    },
    /// `sigmas[k]` applies on `[breaks[k−1], breaks[k])`, with `breaks[−1] = 0`
    /// and the last matrix used from the final break onwards.
    Piecewise {
        breaks: Vec<f64>,
        #[serde(with = "matrix_rows_vec")]
        sigmas: Vec<DMatrix<f64>>,
    },
    MarkovFactor(MarkovFactor),
}

fn check_invertible(m: &DMatrix<f64>, d: usize) -> Result<()> {
    if m.shape() != (d, d) {
        return Err(Error::Dimension { what: "sigma", expected: d, got: m.nrows() });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("sigma must be finite"));
    }
    let (lmin, lmax) = sym_eigen_extremes(&(m * m.transpose()));
    if !(lmin > 1e-24 * lmax) {
        return Err(Error::SingularVolatility);
    }
    Ok(())
}

impl SigmaModel {
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            SigmaModel::Constant { sigma } => check_invertible(sigma, d),
            SigmaModel::Piecewise { breaks, sigmas } => {
                if sigmas.len() != breaks.len() + 1 {
                    return Err(Error::invalid("piecewise sigma needs one more matrix than breaks"));
                }
                if breaks.iter().any(|b| !(*b > 0.0) || !b.is_finite()) || breaks.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::invalid("breaks must be positive, finite and strictly increasing"));
                }
                sigmas.iter().try_for_each(|m| check_invertible(m, d))
            }
            SigmaModel::MarkovFactor(f) => {
                check_invertible(&f.base, d)?;
                let finite = [f.kappa, f.theta, f.eta, f.v0, f.scale_lo, f.scale_hi].iter().all(|x| x.is_finite());
                if !finite || f.kappa < 0.0 || f.eta < 0.0 {
                    return Err(Error::invalid("factor parameters must be finite with kappa, eta >= 0"));
                }
                if !(f.scale_lo > 0.0) || f.scale_hi < f.scale_lo {
                    return Err(Error::invalid("factor scale bounds need 0 < scale_lo <= scale_hi"));
                }
                Ok(())
            }
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, SigmaModel::MarkovFactor(_))
    }

    /// `σ` at time `t` and factor level `v` (`v` is ignored by deterministic models).
    pub fn sigma_at(&self, t: f64, v: f64) -> DMatrix<f64> {
        match self {
            SigmaModel::Constant { sigma } => sigma.clone(),
            SigmaModel::Piecewise { breaks, sigmas } => sigmas[breaks.partition_point(|&b| b <= t)].clone(),
            SigmaModel::MarkovFactor(f) => f.sigma(v),
        }
    }

    /// Constant pieces `(start, end, σ)` covering `[0, ∞)`.
    fn pieces(&self) -> Vec<(f64, f64, &DMatrix<f64>)> {
        match self {
            SigmaModel::Constant { sigma } => vec![(0.0, f64::INFINITY, sigma)],
            SigmaModel::Piecewise { breaks, sigmas } => {
                let mut edges = vec![0.0];
                edges.extend(breaks);
                edges.push(f64::INFINITY);
                sigmas.iter().enumerate().map(|(k, m)| (edges[k], edges[k + 1], m)).collect()
            }
            SigmaModel::MarkovFactor(_) => Vec::new(),
        }
    }

    /// `sup ‖σ⁻¹‖₂` over the model's range.
    pub fn inverse_norm_bound(&self) -> Result<f64> {
        let inv_norm = |m: &DMatrix<f64>| -> Result<f64> {
            Ok(spectral_norm(&m.clone().try_inverse().ok_or(Error::SingularVolatility)?))
        };
        match self {
            SigmaModel::Constant { sigma } => inv_norm(sigma),
            SigmaModel::Piecewise { sigmas, .. } => sigmas.iter().try_fold(0.0f64, |acc, m| Ok(acc.max(inv_norm(m)?))),
            SigmaModel::MarkovFactor(f) => Ok(inv_norm(&f.base)? / f.scale_lo),
        }
    }
}

/// `H(t, z)` with a fast path for diagonal `σ`.
fn h_value(spec: &MarketSpec<f64>, delta: f64, t: f64, sigma: &DMatrix<f64>, z: &[f64]) -> Result<f64> {
    if is_diagonal(sigma) {
        let diag: Vec<f64> = (0..z.len()).map(|i| sigma[(i, i)]).collect();
        if diag.contains(&0.0) {
            return Err(Error::SingularVolatility);
        }
        Ok(h_value_diagonal(spec, delta, &diag, 1.0, z))
    } else {
        Ok(solve_saddle_h(spec, delta, t, sigma, z)?.value)
    }
}

/// The BSDE driver `F(t, y, z) = H(t, z) + ½|z|² − ρy`.
#[derive(Debug, Clone, Copy)]
pub struct Driver<'a> {
    spec: &'a MarketSpec<f64>,
    delta: f64,
    rho: f64,
}

impl<'a> Driver<'a> {
    pub fn new(spec: &'a MarketSpec<f64>, delta: f64, rho: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0,1), got {delta}")));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::invalid(format!("rho must be positive, got {rho}")));
        }
        Ok(Self { spec, delta, rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Saddle value `H(t, z)` for volatility `σ`.
    pub fn h(&self, t: f64, sigma: &DMatrix<f64>, z: &[f64]) -> Result<f64> {
        h_value(self.spec, self.delta, t, sigma, z)
    }

    pub fn eval(&self, t: f64, y: f64, z: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
        let zz: f64 = z.iter().map(|v| v * v).sum();
        Ok(self.h(t, sigma, z)? + 0.5 * zz - self.rho * y)
    }

    /// Constant `K` with `|F(t,y,z₁) − F(t,y,z₂)| ≤ K(1 + |z₁| + |z₂|)|z₁ − z₂|`
    /// and `|F(t,0,0)| ≤ K`.
    pub fn constant(&self, model: &SigmaModel) -> Result<f64> {
        let spec = self.spec;
        let r = spec.r();
        let drift_radius: f64 = (0..spec.dim())
            .map(|i| {
                let a = (spec.b_lo()[i] - r).abs().max((spec.b_hi()[i] - r).abs());
                a * a
            })
            .sum::<f64>()
            .sqrt();
        let m = model.inverse_norm_bound()? * drift_radius;
        let q = self.delta / (1.0 - self.delta);
        Ok((q * m).max(q + 0.5).max(0.5 * q * m * m + self.delta * r))
    }
}

/// `F(t, y, z)` for a volatility model; `v` is the factor level (ignored for
/// deterministic models).
#[allow(clippy::too_many_arguments)]
pub fn driver(
    t: f64,
    y: f64,
    z: &[f64],
    model: &SigmaModel,
    v: f64,
    spec: &MarketSpec<f64>,
    delta: f64,
    rho: f64,
) -> Result<f64> {
    model.validate(spec.dim())?;
    Driver::new(spec, delta, rho)?.eval(t, y, z, &model.sigma_at(t, v))
}

/// Regression of a quantity on normalised monomials of the factor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionSurface {
    pub v_mean: f64,
    pub v_scale: f64,
    pub y_coef: Vec<f64>,
    /// One coefficient vector per Brownian component.
    pub z_coef: Vec<Vec<f64>>,
}

fn basis_eval(xi: f64, out: &mut [f64]) {
    let mut acc = 1.0;
    for o in out.iter_mut() {
        *o = acc;
        acc *= xi;
    }
}

impl RegressionSurface {
    fn xi(&self, v: f64) -> f64 {
        if self.v_scale > 0.0 {
            (v - self.v_mean) / self.v_scale
        } else {
            0.0
        }
    }

    fn dot(coef: &[f64], xi: f64) -> f64 {
        coef.iter().rev().fold(0.0, |acc, c| acc * xi + c)
    }

    pub fn y_at(&self, v: f64) -> f64 {
        Self::dot(&self.y_coef, self.xi(v))
    }

    pub fn z_at(&self, v: f64) -> Vec<f64> {
        let xi = self.xi(v);
        self.z_coef.iter().map(|c| Self::dot(c, xi)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LsmcDiagnostics {
    pub n_paths: usize,
    pub n_basis: usize,
    pub seed: u64,
    /// Standard error of `Y_0` from the cross-path spread of `Y_{dt}`.
    pub y0_std_error: f64,
    /// Basis size actually used at each step.
    pub basis_used: Vec<usize>,
    pub max_condition: f64,
    /// Regression surfaces, one per step `t_0 … t_{M−1}`.
    pub surfaces: Vec<RegressionSurface>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BsdeSolution {
    pub horizon: f64,
    pub dt: f64,
    pub rho: f64,
    pub times: Vec<f64>,
    /// `Y` on the grid (cross-path mean for regression Monte Carlo).
    pub y: Vec<f64>,
    /// `Z` on the grid (cross-path mean for regression Monte Carlo).
    pub z: Vec<Vec<f64>>,
    /// `sup_t |H(t, 0)| / ρ`.
    pub sup_bound: f64,
    pub driver_constant: f64,
    /// `sup_bound · e^{−ρ(T−t)}`.
    pub tail_estimate: Vec<f64>,
    /// `Σ |Z_t|² dt` (path average).
    pub z_energy: f64,
    /// `Σ e^{−2ρt} |Z_t|² dt` (path average).
    pub z_energy_weighted: f64,
    /// Largest `|Y|` over the grid (and over all paths).
    pub max_abs_y: f64,
    pub lsmc: Option<LsmcDiagnostics>,
}

impl BsdeSolution {
    pub fn y0(&self) -> f64 {
        self.y[0]
    }

    /// `(sup|H(·,0)| + K)/ρ + tail` at grid index `k`.
    pub fn uniform_bound(&self, k: usize) -> f64 {
        self.sup_bound + self.driver_constant / self.rho + self.tail_estimate[k]
    }

    pub fn bound_holds(&self) -> bool {
        let pointwise = self.y.iter().enumerate().all(|(k, y)| y.abs() <= self.uniform_bound(k));
        let global = (0..self.times.len()).map(|k| self.uniform_bound(k)).fold(0.0, f64::max);
        pointwise && self.max_abs_y <= global
    }

    /// Writes `t,Y,Z_1..Z_d,tail_estimate`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.z.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string(), "Y".to_string()];
        header.extend((1..=d).map(|j| format!("Z_{j}")));
        header.push("tail_estimate".into());
        w.write_record(&header)?;
        for k in 0..self.times.len() {
            let mut row = vec![self.times[k].to_string(), self.y[k].to_string()];
            row.extend(self.z[k].iter().map(|z| z.to_string()));
            row.push(self.tail_estimate[k].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn tails(times: &[f64], sup_bound: f64, rho: f64) -> Vec<f64> {
    let t_end = *times.last().unwrap();
    times.iter().map(|t| sup_bound * (-rho * (t_end - t)).exp()).collect()
}

/// Deterministic (constant or piecewise-constant) volatility: `Z ≡ 0` and
/// `Y' = ρY − H(t, 0)`, `Y_T = 0`, integrated exactly step by step.
pub fn solve_bsde_deterministic_sigma(
    model: &SigmaModel,
    spec: &MarketSpec<f64>,
    delta: f64,
    rho: f64,
    horizon: f64,
    dt: f64,
) -> Result<BsdeSolution> {
    let drv = Driver::new(spec, delta, rho)?;
    model.validate(spec.dim())?;
    if !model.is_deterministic() {
        return Err(Error::invalid("deterministic solver needs a constant or piecewise sigma model"));
    }
    let times = StrategyPath::uniform_grid(horizon, dt)?;
    let d = spec.dim();
    let zero = vec![0.0; d];
    let pieces: Vec<(f64, f64, f64)> = model
        .pieces()
        .into_iter()
        .filter(|(a, _, _)| *a < horizon)
        .map(|(a, b, m)| Ok((a, b, drv.h(a, m, &zero)?)))
        .collect::<Result<_>>()?;
    let sup_bound = pieces.iter().map(|p| p.2.abs()).fold(0.0, f64::max) / rho;

    let n = times.len();
    let mut y = vec![0.0; n];
    for k in (0..n - 1).rev() {
        let (t0, t1) = (times[k], times[k + 1]);
        let mut source = 0.0;
        for &(a, b, h) in &pieces {
            let (lo, hi) = (a.max(t0), b.min(t1));
            if hi > lo {
                // ∫_lo^hi e^{−ρ(s−t0)} h ds
                source += h * (-rho * (lo - t0)).exp() * -(-rho * (hi - lo)).exp_m1() / rho;
            }
        }
        y[k] = (-rho * (t1 - t0)).exp() * y[k + 1] + source;
    }
    let max_abs_y = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(BsdeSolution {
        horizon,
        dt,
        rho,
        tail_estimate: tails(&times, sup_bound, rho),
        z: vec![zero; n],
        times,
        y,
        sup_bound,
        driver_constant: drv.constant(model)?,
        z_energy: 0.0,
        z_energy_weighted: 0.0,
        max_abs_y,
        lsmc: None,
    })
}

struct Regression {
    nb: usize,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    condition: f64,
}

/// Normal equations on the first `nb` basis columns, reducing `nb` until the
/// Gram matrix is well conditioned.
fn fit_basis(phi: &[f64], n_paths: usize, width: usize, mut nb: usize) -> Regression {
    loop {
        let mut gram = DMatrix::<f64>::zeros(nb, nb);
        for row in phi.chunks_exact(width) {
            for a in 0..nb {
                for b in 0..=a {
                    gram[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..nb {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        gram /= n_paths as f64;
        let (lmin, lmax) = sym_eigen_extremes(&gram);
        let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
        if nb == 1 || condition <= MAX_CONDITION {
            if let Some(chol) = gram.cholesky() {
                return Regression { nb, chol, condition };
            }
        }
        nb -= 1;
    }
}

impl Regression {
    fn solve(&self, phi: &[f64], width: usize, target: impl Fn(usize) -> f64) -> Vec<f64> {
        let n = phi.len() / width;
        let mut rhs = DVector::<f64>::zeros(self.nb);
        for (i, row) in phi.chunks_exact(width).enumerate() {
            let t = target(i);
            for a in 0..self.nb {
                rhs[a] += row[a] * t;
            }
        }
        rhs /= n as f64;
        self.chol.solve(&rhs).iter().cloned().collect()
    }
}

fn row_dot(row: &[f64], coef: &[f64]) -> f64 {
    coef.iter().zip(row).map(|(c, p)| c * p).sum()
}

/// Least-squares regression Monte Carlo for a Markov-factor volatility.
///
/// Backward recursion with `Y_T = 0`:
/// `Y_k = (Ê_k[Y_{k+1}] + (H(t_k, Z_k) + ½|Z_k|²)dt)/(1 + ρdt)` and
/// `Z_k = Ê_k[(Y_{k+1} − Ê_k[Y_{k+1}]) ΔW_k]/dt`, conditional expectations
/// being projections on monomials of the normalised factor.
#[allow(clippy::too_many_arguments)]
pub fn solve_bsde_lsmc(
    model: &SigmaModel,
    spec: &MarketSpec<f64>,
    delta: f64,
    rho: f64,
    horizon: f64,
    dt: f64,
    n_paths: usize,
    n_basis: usize,
    seed: u64,
) -> Result<BsdeSolution> {
    let drv = Driver::new(spec, delta, rho)?;
    model.validate(spec.dim())?;
    let SigmaModel::MarkovFactor(factor) = model else {
        return Err(Error::invalid("regression Monte Carlo needs a markov_factor sigma model"));
    };
    if n_basis < 2 {
        return Err(Error::invalid("n_basis must be at least 2"));
    }
    if n_paths < 2 {
        return Err(Error::invalid("n_paths must be at least 2"));
    }
    let times = StrategyPath::uniform_grid(horizon, dt)?;
    let d = spec.dim();
    let m_steps = times.len() - 1;
    let steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let advance = |v: f64, k: usize, w0: f64| v + factor.kappa * (factor.theta - v) * steps[k] + factor.eta * steps[k].sqrt() * w0;

    // forward pass: factor checkpoints every CHECKPOINT steps
    let n_seg = m_steps.div_ceil(CHECKPOINT);
    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = NormalStream::new(seed, path as u64);
            let mut dw = vec![0.0; d];
            let mut v = factor.v0;
            let mut cps = Vec::with_capacity(n_seg);
            for k in 0..m_steps {
                if k % CHECKPOINT == 0 {
                    cps.push(v);
                }
                rng.fill(&mut dw);
                v = advance(v, k, dw[0]);
            }
            cps
        })
        .collect();

    let base_diag: Option<Vec<f64>> = is_diagonal(&factor.base).then(|| (0..d).map(|i| factor.base[(i, i)]).collect());
    let h_of = |t: f64, v: f64, z: &[f64]| -> Result<f64> {
        match &base_diag {
            Some(diag) => Ok(h_value_diagonal(spec, delta, diag, factor.scale(v), z)),
            None => drv.h(t, &factor.sigma(v), z),
        }
    };

    let width = n_basis;
    let mut y_paths = vec![0.0; n_paths];
    let mut z_energy = vec![0.0; n_paths];
    let mut z_energy_w = vec![0.0; n_paths];
    let mut y_mean = vec![0.0; m_steps + 1];
    let mut z_mean = vec![vec![0.0; d]; m_steps + 1];
    let mut surfaces = Vec::with_capacity(m_steps);
    let mut basis_used = vec![0; m_steps];
    let mut max_condition: f64 = 1.0;
    let mut max_abs_y: f64 = 0.0;
    let mut y0_std_error = 0.0;
    let mut phi = vec![0.0; n_paths * width];
    let mut cond_y = vec![0.0; n_paths];
    let mut z_buf = vec![0.0; n_paths * d];

    for seg in (0..n_seg).rev() {
        let k0 = seg * CHECKPOINT;
        let k1 = (k0 + CHECKPOINT).min(m_steps);
        let len = k1 - k0;
        // re-simulate the segment: factor levels and increments per path
        let seg_data: Vec<(Vec<f64>, Vec<f64>)> = (0..n_paths)
            .into_par_iter()
            .map(|path| {
                let mut rng = NormalStream::new(seed, path as u64);
                rng.seek_block(k0 as u64, d);
                let mut v = per_path[path][seg];
                let mut vs = Vec::with_capacity(len);
                let mut ws = vec![0.0; len * d];
                for (j, k) in (k0..k1).enumerate() {
                    vs.push(v);
                    let dw = &mut ws[j * d..(j + 1) * d];
                    rng.fill(dw);
                    let sd = steps[k].sqrt();
                    let w0 = dw[0];
                    for x in dw.iter_mut() {
                        *x *= sd;
                    }
                    v = advance(v, k, w0);
                }
                (vs, ws)
            })
            .collect();

        for k in (k0..k1).rev() {
            let j = k - k0;
            let h = steps[k];
            let t = times[k];
            let vs: Vec<f64> = seg_data.iter().map(|(v, _)| v[j]).collect();
            let v_mean = pairwise_sum(&vs) / n_paths as f64;
            let dev: Vec<f64> = vs.iter().map(|v| (v - v_mean) * (v - v_mean)).collect();
            let v_scale = (pairwise_sum(&dev) / n_paths as f64).sqrt();
            let degenerate = !(v_scale > 1e-12 * (1.0 + v_mean.abs()));
            let v_scale = if degenerate { 0.0 } else { v_scale };
            for (i, v) in vs.iter().enumerate() {
                let xi = if degenerate { 0.0 } else { (v - v_mean) / v_scale };
                basis_eval(xi, &mut phi[i * width..(i + 1) * width]);
            }
            let reg = fit_basis(&phi, n_paths, width, if degenerate { 1 } else { n_basis });
            basis_used[k] = reg.nb;
            max_condition = max_condition.max(reg.condition);

            let y_coef = reg.solve(&phi, width, |i| y_paths[i]);
            for (i, row) in phi.chunks_exact(width).enumerate() {
                cond_y[i] = row_dot(row, &y_coef);
            }
            let mut z_coef = Vec::with_capacity(d);
            for comp in 0..d {
                let coef = reg.solve(&phi, width, |i| (y_paths[i] - cond_y[i]) * seg_data[i].1[j * d + comp] / h);
                for (i, row) in phi.chunks_exact(width).enumerate() {
                    z_buf[i * d + comp] = row_dot(row, &coef);
                }
                z_coef.push(coef);
            }
            if k == 0 {
                let resid: Vec<f64> = y_paths.iter().zip(&cond_y).map(|(y, c)| (y - c) * (y - c)).collect();
                let var = pairwise_sum(&resid) / (n_paths - 1) as f64;
                y0_std_error = (var / n_paths as f64).sqrt() / (1.0 + rho * h);
            }
            let weight = (-2.0 * rho * t).exp();
            for i in 0..n_paths {
                let z = &z_buf[i * d..(i + 1) * d];
                let zz: f64 = z.iter().map(|x| x * x).sum();
                let f = h_of(t, vs[i], z)? + 0.5 * zz;
                y_paths[i] = (cond_y[i] + f * h) / (1.0 + rho * h);
                z_energy[i] += zz * h;
                z_energy_w[i] += weight * zz * h;
                max_abs_y = max_abs_y.max(y_paths[i].abs());
            }
            y_mean[k] = pairwise_sum(&y_paths) / n_paths as f64;
            for comp in 0..d {
                let col: Vec<f64> = (0..n_paths).map(|i| z_buf[i * d + comp]).collect();
                z_mean[k][comp] = pairwise_sum(&col) / n_paths as f64;
            }
            surfaces.push(RegressionSurface { v_mean, v_scale, y_coef, z_coef });
        }
    }
    surfaces.reverse();
    if !y_paths.iter().all(|y| y.is_finite()) {
        return Err(Error::NoConvergence { solver: "bsde_lsmc", iterations: m_steps, residual: f64::NAN });
    }

    // a-priori bound: H(t, 0) over the factor's scale range
    let zero = vec![0.0; d];
    let mut sup_h: f64 = 0.0;
    for i in 0..=64 {
        let s = factor.scale_lo + (factor.scale_hi - factor.scale_lo) * i as f64 / 64.0;
        sup_h = sup_h.max(drv.h(0.0, &(&factor.base * s), &zero)?.abs());
    }
    let sup_bound = sup_h / rho;
    Ok(BsdeSolution {
        horizon,
        dt,
        rho,
        tail_estimate: tails(&times, sup_bound, rho),
        times,
        y: y_mean,
        z: z_mean,
        sup_bound,
        driver_constant: drv.constant(model)?,
        z_energy: pairwise_sum(&z_energy) / n_paths as f64,
        z_energy_weighted: pairwise_sum(&z_energy_w) / n_paths as f64,
        max_abs_y,
        lsmc: Some(LsmcDiagnostics {
            n_paths,
            n_basis,
            seed,
            y0_std_error,
            basis_used,
            max_condition,
            surfaces,
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriverEstimateReport {
    pub k_const: f64,
    pub n_samples: usize,
    pub lipschitz_violations: usize,
    pub growth_violations: usize,
    pub monotonicity_violations: usize,
    /// Largest observed `|ΔF| / ((1+|z₁|+|z₂|)|z₁−z₂|)`, to compare with `K`.
    pub max_lipschitz_ratio: f64,
    pub max_abs_f00: f64,
}

impl DriverEstimateReport {
    pub fn passed(&self) -> bool {
        self.lipschitz_violations == 0 && self.growth_violations == 0 && self.monotonicity_violations == 0
    }
}

/// Samples random `(t, y, z₁, z₂)` and checks the driver's growth,
/// Lipschitz-in-`z` and monotonicity-in-`y` estimates.
pub fn driver_estimates_check(
    model: &SigmaModel,
    spec: &MarketSpec<f64>,
    delta: f64,
    rho: f64,
    n_samples: usize,
    seed: u64,
) -> Result<DriverEstimateReport> {
    let drv = Driver::new(spec, delta, rho)?;
    model.validate(spec.dim())?;
    let k = drv.constant(model)?;
    let d = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normals = NormalStream::new(seed, 1);
    let mut report = DriverEstimateReport {
        k_const: k,
        n_samples,
        lipschitz_violations: 0,
        growth_violations: 0,
        monotonicity_violations: 0,
        max_lipschitz_ratio: 0.0,
        max_abs_f00: 0.0,
    };
    let mut z1 = vec![0.0; d];
    let mut z2 = vec![0.0; d];
    let zero = vec![0.0; d];
    for _ in 0..n_samples {
        let t = rng.random_range(0.0..20.0);
        let v = rng.random_range(-6.0..6.0);
        let sigma = model.sigma_at(t, v);
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        normals.fill(&mut z1);
        z1.iter_mut().for_each(|x| *x *= scale);
        let kind: f64 = rng.random();
        normals.fill(&mut z2);
        if kind < 0.05 {
            z2.copy_from_slice(&z1);
        } else if kind < 0.2 {
            for (a, b) in z2.iter_mut().zip(&z1) {
                *a = b + 1e-6 * *a;
            }
        } else {
            z2.iter_mut().for_each(|x| *x *= scale);
        }
        let y1 = rng.random_range(-10.0..10.0);
        let y2 = rng.random_range(-10.0..10.0);

        let f1 = drv.eval(t, y1, &z1, &sigma)?;
        let f2 = drv.eval(t, y1, &z2, &sigma)?;
        let n1 = z1.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n2 = z2.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dz = z1.iter().zip(&z2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let bound = k * (1.0 + n1 + n2) * dz;
        let diff = (f1 - f2).abs();
        if diff > bound * (1.0 + 1e-9) + 1e-12 {
            report.lipschitz_violations += 1;
        }
        if dz > 0.0 {
            report.max_lipschitz_ratio = report.max_lipschitz_ratio.max(diff / ((1.0 + n1 + n2) * dz));
        }

        let f00 = drv.eval(t, 0.0, &zero, &sigma)?;
        report.max_abs_f00 = report.max_abs_f00.max(f00.abs());
        if f00.abs() > k {
            report.growth_violations += 1;
        }

        let g2 = drv.eval(t, y2, &z1, &sigma)?;
        let lhs = (y1 - y2) * (f1 - g2);
        let rhs = -rho * (y1 - y2) * (y1 - y2);
        if (lhs - rhs).abs() > 1e-12 * (1.0 + (y1 - y2).abs() * (1.0 + f1.abs() + g2.abs())) {
            report.monotonicity_violations += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2() -> MarketSpec<f64> {
        MarketSpec::one_dim(0.2, (0.3, 0.8), (0.25, 0.25), (-0.5, 1.5)).unwrap()
    }

    fn constant(s: f64) -> SigmaModel {
        SigmaModel::Constant { sigma: DMatrix::from_element(1, 1, s) }
    }

    #[test]
    fn driver_examples() {
        let spec = fig2();
        let f = driver(0.0, 0.0, &[0.0], &constant(0.5), 0.0, &spec, 0.5, 0.1).unwrap();
        assert!((f - 0.12).abs() < 1e-15);
        let f = driver(0.0, 1.2, &[0.0], &constant(0.5), 0.0, &spec, 0.5, 0.1).unwrap();
        assert!(f.abs() < 1e-15);
    }

    #[test]
    fn constant_h_closed_form() {
        let sol = solve_bsde_deterministic_sigma(&constant(0.5), &fig2(), 0.5, 0.1, 50.0, 0.01).unwrap();
        assert!((sol.y0() - 1.2 * (1.0 - (-5.0f64).exp())).abs() < 1e-10);
        assert!(sol.z.iter().all(|z| z == &vec![0.0]));
        assert_eq!(*sol.y.last().unwrap(), 0.0);
        assert!((sol.sup_bound - 1.2).abs() < 1e-14);
        assert!(sol.bound_holds());
    }

    #[test]
    fn piecewise_closed_form() {
        // σ = 0.5 on [0,1) gives H = 0.12; σ = 0.25 afterwards gives H(0)
        let spec = fig2();
        let model = SigmaModel::Piecewise {
            breaks: vec![1.0],
            sigmas: vec![DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 0.25)],
        };
        let drv = Driver::new(&spec, 0.5, 0.1).unwrap();
        let h1 = 0.12;
        let h2 = drv.h(2.0, &DMatrix::from_element(1, 1, 0.25), &[0.0]).unwrap();
        let (rho, t_end) = (0.1f64, 5.0f64);
        let sol = solve_bsde_deterministic_sigma(&model, &spec, 0.5, rho, t_end, 0.03).unwrap();
        let exact = |t: f64| {
            if t >= 1.0 {
                h2 / rho * (1.0 - (-rho * (t_end - t)).exp())
            } else {
                let y1 = h2 / rho * (1.0 - (-rho * (t_end - 1.0)).exp());
                (-rho * (1.0 - t)).exp() * y1 + h1 / rho * (1.0 - (-rho * (1.0 - t)).exp())
            }
        };
        for (t, y) in sol.times.iter().zip(&sol.y) {
            assert!((y - exact(*t)).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn rejects_bad_models() {
        let spec = fig2();
        assert!(matches!(
            solve_bsde_deterministic_sigma(&constant(0.0), &spec, 0.5, 0.1, 1.0, 0.1),
            Err(Error::SingularVolatility)
        ));
        let factor = SigmaModel::MarkovFactor(MarkovFactor {
            kappa: 1.0,
            theta: 0.0,
            eta: 0.0,
            v0: 0.0,
            base: DMatrix::from_element(1, 1, 0.5),
            scale_lo: 0.5,
            scale_hi: 1.5,
        });
        assert!(solve_bsde_deterministic_sigma(&factor, &spec, 0.5, 0.1, 1.0, 0.1).is_err());
        assert!(solve_bsde_lsmc(&constant(0.5), &spec, 0.5, 0.1, 1.0, 0.1, 10, 2, 0).is_err());
        assert!(solve_bsde_lsmc(&factor, &spec, 0.5, 0.1, 1.0, 0.1, 10, 1, 0).is_err());
    }

    #[test]
    fn sigma_model_json_round_trip() {
        let model = SigmaModel::Piecewise {
            breaks: vec![1.0],
            sigmas: vec![DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 0.25)],
        };
        let text = serde_json::to_string(&model).unwrap();
        assert!(text.contains("\"kind\":\"piecewise\""));
        let back: SigmaModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn csv_layout() {
        let sol = solve_bsde_deterministic_sigma(&constant(0.5), &fig2(), 0.5, 0.1, 1.0, 0.5).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,Y,Z_1,tail_estimate");
        assert_eq!(text.lines().count(), 4);
    }
}
