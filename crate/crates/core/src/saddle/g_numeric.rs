//! Numerical saddle point of `G` for general `d`.
//!
//! The outer problem `max_{p∈Π} min_{b,Σ} G` is rewritten as the convex program
//!
//! ```text
//! max t  s.t.  t ≤ ½δ(δ−1)pᵀΣ_k p + δ Σ_i u_i + δr   for every vertex Σ_k
//!              u_i ≤ p_i (b_loⁱ − r),  u_i ≤ p_i (b_hiⁱ − r),  p ∈ Π
//! ```
//!
//! and solved with a primal log-barrier method. The barrier multipliers of the
//! first family give the worst-case covariance, those of the second give the
//! worst-case drift, and `m/τ` bounds the duality gap.

use nalgebra::{DMatrix, DVector};

use super::g::{eval_g, inner_min_g};
use super::{check_delta, SaddleSolutionG};
use crate::market::MarketSpec;
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 5_000;

const MU: f64 = 10.0;
const NEWTON_TOL: f64 = 1e-11;
const BANG_BANG_TOL: f64 = 1e-7;

#[derive(Clone, Copy)]
enum Con {
    Quad(usize),
    Lin { i: usize, slope: f64 },
    BoxLo { i: usize, bound: f64 },
    BoxHi { i: usize, bound: f64 },
}

struct Program {
    m: usize,
    a: f64,
    delta: f64,
    r: f64,
    quads: Vec<DMatrix<f64>>,
    cons: Vec<Con>,
}

impl Program {
    fn n(&self) -> usize {
        2 * self.m + 1
    }

    fn slack(&self, x: &DVector<f64>, c: Con) -> f64 {
        let m = self.m;
        match c {
            Con::Quad(k) => {
                let p = x.rows(0, m);
                let q = (p.transpose() * &self.quads[k] * p)[(0, 0)];
                self.a * q + self.delta * x.rows(m, m).sum() + self.delta * self.r - x[2 * m]
            }
            Con::Lin { i, slope } => x[i] * slope - x[m + i],
            Con::BoxLo { i, bound } => x[i] - bound,
            Con::BoxHi { i, bound } => bound - x[i],
        }
    }

    fn slack_grad(&self, x: &DVector<f64>, c: Con) -> DVector<f64> {
        let m = self.m;
        let mut g = DVector::zeros(self.n());
        match c {
            Con::Quad(k) => {
                let gp = &self.quads[k] * x.rows(0, m) * (2.0 * self.a);
                g.rows_mut(0, m).copy_from(&gp);
                g.rows_mut(m, m).fill(self.delta);
                g[2 * m] = -1.0;
            }
            Con::Lin { i, slope } => {
                g[i] = slope;
                g[m + i] = -1.0;
            }
            Con::BoxLo { i, .. } => g[i] = 1.0,
            Con::BoxHi { i, .. } => g[i] = -1.0,
        }
        g
    }

    fn barrier(&self, x: &DVector<f64>, tau: f64) -> Option<f64> {
        let mut acc = -tau * x[2 * self.m];
        for &c in &self.cons {
            let s = self.slack(x, c);
            if s <= 0.0 || !s.is_finite() {
                return None;
            }
            acc -= s.ln();
        }
        Some(acc)
    }

    fn newton_system(&self, x: &DVector<f64>, tau: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let m = self.m;
        let mut grad = DVector::zeros(n);
        grad[2 * m] = -tau;
        let mut hess = DMatrix::zeros(n, n);
        for &c in &self.cons {
            let s = self.slack(x, c);
            let gs = self.slack_grad(x, c);
            grad -= &gs / s;
            hess.ger(1.0 / (s * s), &gs, &gs, 1.0);
            if let Con::Quad(k) = c {
                let mut block = hess.view_mut((0, 0), (m, m));
                block -= &self.quads[k] * (2.0 * self.a / s);
            }
        }
        (grad, hess)
    }

    fn centre(&self, x: &mut DVector<f64>, tau: f64, budget: &mut usize) -> Result<()> {
        loop {
            if *budget == 0 {
                return Err(Error::NoConvergence { solver: "saddle_g_nd", iterations: 0, residual: f64::NAN });
            }
            *budget -= 1;
            let (grad, hess) = self.newton_system(x, tau);
            let step = solve_spd(hess, &grad);
            let lambda2 = -grad.dot(&step);
            if !lambda2.is_finite() {
                return Err(Error::NoConvergence { solver: "saddle_g_nd", iterations: 0, residual: f64::NAN });
            }
            if lambda2 * 0.5 <= NEWTON_TOL {
                return Ok(());
            }
            let f0 = self.barrier(x, tau).expect("iterate stays strictly feasible");
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                let trial = &*x + &step * alpha;
                if let Some(f) = self.barrier(&trial, tau) {
                    if f <= f0 - 0.25 * alpha * lambda2 {
                        // decrease below f64 resolution: as centred as representable
                        accepted = f < f0 - 4.0 * f64::EPSILON * f0.abs();
                        *x = trial;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // no further progress representable in f64
                return Ok(());
            }
        }
    }
}

fn solve_spd(mut hess: DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let n = hess.nrows();
    let scale = (0..n).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut reg = 1e-15 * scale;
    for i in 0..n {
        hess[(i, i)] += reg;
    }
    loop {
        if let Some(ch) = hess.clone().cholesky() {
            return -ch.solve(grad);
        }
        for i in 0..n {
            hess[(i, i)] += reg * 9.0;
        }
        reg *= 10.0;
    }
}

/// `max_{p∈Π} G(p; b, Σ)` by projected coordinate ascent; `None` when the
/// maximum is unbounded or ascent does not settle.
fn dual_bound(spec: &MarketSpec<f64>, delta: f64, b: &[f64], sigma: &DMatrix<f64>) -> Option<f64> {
    let d = spec.dim();
    let a = 0.5 * delta * (delta - 1.0);
    let mut p = vec![0.0; d];
    for _ in 0..20_000 {
        let mut change: f64 = 0.0;
        for i in 0..d {
            let cross: f64 = (0..d).filter(|&j| j != i).map(|j| sigma[(i, j)] * p[j]).sum();
            let lin = 2.0 * a * cross + delta * (b[i] - spec.r());
            let curv = a * sigma[(i, i)];
            let (lo, hi) = (spec.pi_lo()[i], spec.pi_hi()[i]);
            let next = if curv < 0.0 {
                (-lin / (2.0 * curv)).clamp(lo, hi)
            } else if lin > 0.0 {
                hi
            } else if lin < 0.0 {
                lo
            } else {
                p[i]
            };
            if !next.is_finite() {
                return None;
            }
            change = change.max((next - p[i]).abs());
            p[i] = next;
        }
        if change <= 1e-15 {
            return eval_g(spec, delta, &p, b, sigma).ok();
        }
    }
    None
}

/// Saddle point of `G` over `Π × (𝔹 × Σ)` for arbitrary dimension.
///
/// `residual` is an upper bound on `max_p G(·; b*, Σ*) − value` (barrier gap,
/// tightened by a direct check of the reported dual point when possible).
pub fn solve_saddle_g_nd(
    spec: &MarketSpec<f64>,
    delta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SaddleSolutionG<f64>> {
    check_delta(delta)?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let d = spec.dim();
    let r = spec.r();
    let free: Vec<usize> = (0..d).filter(|&i| spec.pi_lo()[i] < spec.pi_hi()[i]).collect();
    let proj_r = |i: usize| r.max(spec.b_lo()[i]).min(spec.b_hi()[i]);

    if free.is_empty() {
        return Ok(SaddleSolutionG {
            p_star: vec![0.0; d],
            b_star: (0..d).map(proj_r).collect(),
            sigma_star: spec.cov_vertices()[0].clone(),
            value: delta * r,
            iterations: 0,
            residual: 0.0,
        });
    }

    let m = free.len();
    let quads: Vec<DMatrix<f64>> = spec
        .cov_vertices()
        .iter()
        .map(|v| DMatrix::from_fn(m, m, |a, b| v[(free[a], free[b])]))
        .collect();
    let mut cons: Vec<Con> = (0..quads.len()).map(Con::Quad).collect();
    for (i, &fi) in free.iter().enumerate() {
        cons.push(Con::Lin { i, slope: spec.b_lo()[fi] - r });
        cons.push(Con::Lin { i, slope: spec.b_hi()[fi] - r });
        if spec.pi_lo()[fi].is_finite() {
            cons.push(Con::BoxLo { i, bound: spec.pi_lo()[fi] });
        }
        if spec.pi_hi()[fi].is_finite() {
            cons.push(Con::BoxHi { i, bound: spec.pi_hi()[fi] });
        }
    }
    let prog = Program { m, a: 0.5 * delta * (delta - 1.0), delta, r, quads, cons };

    // strictly feasible start near the origin
    let mut x = DVector::zeros(prog.n());
    for (i, &fi) in free.iter().enumerate() {
        let (lo, hi) = (spec.pi_lo()[fi], spec.pi_hi()[fi]);
        x[i] = if lo < 0.0 && hi > 0.0 {
            0.0
        } else if lo == 0.0 {
            0.5 * hi.min(1.0)
        } else {
            0.5 * lo.max(-1.0)
        };
        let s_lo = x[i] * (spec.b_lo()[fi] - r);
        let s_hi = x[i] * (spec.b_hi()[fi] - r);
        x[m + i] = s_lo.min(s_hi) - 1.0;
    }
    let t0 = (0..prog.quads.len())
        .map(|k| {
            let mut xs = x.clone();
            xs[2 * m] = 0.0;
            prog.slack(&xs, Con::Quad(k))
        })
        .fold(f64::INFINITY, f64::min);
    x[2 * m] = t0 - 1.0;

    let n_cons = prog.cons.len() as f64;
    let mut tau = 1.0;
    let mut budget = max_iter;
    loop {
        prog.centre(&mut x, tau, &mut budget).map_err(|_| Error::NoConvergence {
            solver: "saddle_g_nd",
            iterations: max_iter - budget,
            residual: n_cons / tau,
        })?;
        if n_cons / tau < tol {
            break;
        }
        tau *= MU;
    }
    let iterations = max_iter - budget;
    let gap = n_cons / tau;

    let mut p = vec![0.0; d];
    for (i, &fi) in free.iter().enumerate() {
        p[fi] = x[i];
    }
    // barrier iterates sit 1/τ away from kinks at zero; snap when it helps
    let base = inner_min_g(spec, delta, &p)?.value;
    let mut snapped = p.clone();
    for v in snapped.iter_mut() {
        if v.abs() <= 10.0 * gap.max(1e-12) {
            *v = 0.0;
        }
    }
    if snapped != p && inner_min_g(spec, delta, &snapped)?.value >= base - 1e-15 {
        p = snapped;
    }

    // dual point from the barrier multipliers
    let mut theta = vec![0.0; prog.quads.len()];
    let mut weights = vec![(0.0, 0.0); m];
    let mut lin_seen = vec![false; m];
    for &c in &prog.cons {
        let mult = 1.0 / (tau * prog.slack(&x, c));
        match c {
            Con::Quad(k) => theta[k] = mult,
            Con::Lin { i, .. } => {
                if lin_seen[i] {
                    weights[i].1 = mult;
                } else {
                    weights[i].0 = mult;
                    lin_seen[i] = true;
                }
            }
            _ => {}
        }
    }
    let theta_sum: f64 = theta.iter().sum();
    let mut sigma_star = DMatrix::zeros(d, d);
    for (w, v) in theta.iter().zip(spec.cov_vertices()) {
        sigma_star += v * (w / theta_sum);
    }
    if p.iter().all(|v| *v == 0.0) {
        // every Σ is a saddle component at p* = 0; report the largest-trace vertex
        sigma_star = spec
            .cov_vertices()
            .iter()
            .max_by(|a, b| a.trace().total_cmp(&b.trace()))
            .unwrap()
            .clone();
    }
    let mut b_star: Vec<f64> = (0..d).map(proj_r).collect();
    for (i, &fi) in free.iter().enumerate() {
        let (al, be) = weights[i];
        b_star[fi] = (al * spec.b_lo()[fi] + be * spec.b_hi()[fi]) / (al + be);
        if p[fi] > BANG_BANG_TOL {
            b_star[fi] = spec.b_lo()[fi];
        } else if p[fi] < -BANG_BANG_TOL {
            b_star[fi] = spec.b_hi()[fi];
        }
    }

    let value = inner_min_g(spec, delta, &p)?.value;
    let residual = match dual_bound(spec, delta, &b_star, &sigma_star) {
        Some(upper) => gap.max(upper - value).max(0.0),
        None => gap,
    };
    Ok(SaddleSolutionG { p_star: p, b_star, sigma_star, value, iterations, residual })
}
