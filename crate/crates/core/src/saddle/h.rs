//! Saddle point of `H(t, z; p, b) = ½δ(δ−1)|σᵀp|² + δpᵀ(b − r𝟙) + δpᵀσz + δr`.
//!
//! Writing `v(b) = (σ⁻¹(b − r𝟙) + z)/(1−δ)`, the inner maximum over `p` is
//! `ψ(b) = −½δ(1−δ)·dist²(σᵀΠ, v) + ½δ(1−δ)|v|² + δr`, attained at the
//! projection of `v` onto `σᵀΠ`. `ψ` is convex and C¹ in `b` with gradient
//! `δ p*(b)`, which makes the outer minimum a smooth box-constrained problem.

use nalgebra::{DMatrix, DVector};

use super::{check_delta, SaddleSolutionH, TIE_TOL};
use crate::linalg::{is_diagonal, spectral_norm, sym_eigen_extremes};
use crate::market::MarketSpec;
use crate::{Error, Real, Result};

const PROJ_TOL: f64 = 1e-13;
const OUTER_TOL: f64 = 1e-12;
const MAX_ITER: usize = 200_000;

fn check_dims<T: Real>(spec: &MarketSpec<T>, sigma_dim: (usize, usize), z: &[T]) -> Result<()> {
    let d = spec.dim();
    if sigma_dim != (d, d) {
        return Err(Error::Dimension { what: "sigma", expected: d, got: sigma_dim.0 });
    }
    if z.len() != d {
        return Err(Error::Dimension { what: "z", expected: d, got: z.len() });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("z must be finite"));
    }
    Ok(())
}

/// `H(t, z; p, b)` for a given volatility `σ` (rows: assets, columns: noises).
pub fn eval_h<T: Real>(spec: &MarketSpec<T>, delta: T, sigma: &DMatrix<T>, z: &[T], p: &[T], b: &[T]) -> Result<T> {
    check_dims(spec, sigma.shape(), z)?;
    let d = spec.dim();
    if p.len() != d || b.len() != d {
        return Err(Error::Dimension { what: "p/b", expected: d, got: p.len().min(b.len()) });
    }
    let half = T::from(0.5).unwrap();
    let r = spec.r();
    let mut quad = T::zero();
    let mut cross = T::zero();
    for j in 0..d {
        let w = (0..d).fold(T::zero(), |acc, i| acc + sigma[(i, j)] * p[i]);
        quad += w * w;
        cross += w * z[j];
    }
    let excess = p.iter().zip(b).fold(T::zero(), |acc, (&pi, &bi)| acc + pi * (bi - r));
    Ok(half * delta * (delta - T::one()) * quad + delta * excess + delta * cross + delta * r)
}

/// Closest point of `σᵀΠ` to a target, with its preimage in `Π`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub p: Vec<f64>,
    pub image: Vec<f64>,
    pub iterations: usize,
}

fn checked_inverse(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (lmin, lmax) = sym_eigen_extremes(&(sigma * sigma.transpose()));
    if !(lmin > 1e-24 * lmax.max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularVolatility);
    }
    sigma.clone().try_inverse().ok_or(Error::SingularVolatility)
}

fn clip(x: &mut DVector<f64>, lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn clipped(mut x: DVector<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    clip(&mut x, lo, hi);
    x
}

/// Accelerated projected gradient with adaptive restart for
/// `min_{x ∈ [lo, hi]} f(x)` with `L`-Lipschitz gradient. Stops once the
/// gradient mapping step `‖x − clip(x − ∇f/L)‖` is below `tol`.
fn fista<F>(grad: F, lip: f64, lo: &[f64], hi: &[f64], x0: DVector<f64>, tol: f64, solver: &'static str) -> Result<(DVector<f64>, usize)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let step = 1.0 / lip;
    let mut x = clipped(x0, lo, hi);
    let mut y = x.clone();
    let mut t = 1.0_f64;
    for k in 0..MAX_ITER {
        let gx = grad(&x)?;
        let mapped = clipped(&x - &gx * step, lo, hi);
        let res = (&x - &mapped).norm();
        if res <= tol {
            return Ok((x, k));
        }
        let gy = if k == 0 { gx } else { grad(&y)? };
        let next = clipped(&y - &gy * step, lo, hi);
        if (&y - &next).dot(&(&next - &x)) > 0.0 {
            t = 1.0;
            y = next.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &next + (&next - &x) * ((t - 1.0) / t_next);
            t = t_next;
        }
        x = next;
    }
    let gx = grad(&x)?;
    let res = (&x - clipped(&x - &gx * step, lo, hi)).norm();
    Err(Error::NoConvergence { solver, iterations: MAX_ITER, residual: res })
}

/// Projects `v` onto `σᵀΠ = {σᵀp : p ∈ [pi_lo, pi_hi]}`.
pub fn project_onto_sigma_pi(sigma: &DMatrix<f64>, pi_lo: &[f64], pi_hi: &[f64], v: &[f64], tol: f64) -> Result<Projection> {
    let d = v.len();
    if sigma.shape() != (d, d) || pi_lo.len() != d || pi_hi.len() != d {
        return Err(Error::Dimension { what: "projection", expected: d, got: sigma.nrows() });
    }
    let sig_t = sigma.transpose();
    if is_diagonal(sigma) {
        if (0..d).any(|i| sigma[(i, i)] == 0.0) {
            return Err(Error::SingularVolatility);
        }
        let p: Vec<f64> = (0..d).map(|i| (v[i] / sigma[(i, i)]).clamp(pi_lo[i], pi_hi[i])).collect();
        let image = (0..d).map(|i| sigma[(i, i)] * p[i]).collect();
        return Ok(Projection { p, image, iterations: 0 });
    }
    let inv = checked_inverse(sigma)?;
    let target = DVector::from_column_slice(v);
    let (_, lip) = sym_eigen_extremes(&(sigma * &sig_t));
    let x0 = inv.transpose() * &target;
    let (p, iterations) = fista(
        |p| Ok(sigma * (&sig_t * p - &target)),
        lip,
        pi_lo,
        pi_hi,
        x0,
        tol,
        "projection",
    )?;
    let image = (&sig_t * &p).iter().cloned().collect();
    Ok(Projection { p: p.iter().cloned().collect(), image, iterations })
}

/// Saddle of the `i`-th separable term: `(p*ⁱ, b*ⁱ, contribution to H − δr)`.
#[inline]
fn diagonal_coordinate<T: Real>(spec: &MarketSpec<T>, delta: T, i: usize, s: T, z: T) -> (T, T, T) {
    let (zero, one, half) = (T::zero(), T::one(), T::from(0.5).unwrap());
    let r = spec.r();
    let (lo, hi) = (spec.pi_lo()[i], spec.pi_hi()[i]);
    // best response p(b) is non-decreasing in b
    let p_of = |b: T| (((b - r) / (s * s) + z / s) / (one - delta)).max(lo).min(hi);
    let (b_lo, b_hi) = (spec.b_lo()[i], spec.b_hi()[i]);
    let p_at_lo = p_of(b_lo);
    let (b, p) = if p_at_lo >= zero {
        (b_lo, p_at_lo)
    } else {
        let p_at_hi = p_of(b_hi);
        if p_at_hi <= zero {
            (b_hi, p_at_hi)
        } else {
            ((r - s * z).max(b_lo).min(b_hi), zero)
        }
    };
    let v = half * delta * (delta - one) * s * s * p * p + delta * p * (b - r) + delta * p * s * z;
    (p, b, v)
}

/// Saddle value of `H` for diagonal `σ = diag(scale·base_diag)`, without allocation.
pub(crate) fn h_value_diagonal(spec: &MarketSpec<f64>, delta: f64, base_diag: &[f64], scale: f64, z: &[f64]) -> f64 {
    let mut value = delta * spec.r();
    for i in 0..z.len() {
        value += diagonal_coordinate(spec, delta, i, scale * base_diag[i], z[i]).2;
    }
    value
}

/// Exact saddle point when `σ` is diagonal; the problem separates per coordinate.
pub fn solve_saddle_h_diagonal<T: Real>(
    spec: &MarketSpec<T>,
    delta: T,
    t: T,
    sigma_diag: &[T],
    z: &[T],
) -> Result<SaddleSolutionH<T>> {
    check_delta(delta)?;
    let d = spec.dim();
    if sigma_diag.len() != d {
        return Err(Error::Dimension { what: "sigma", expected: d, got: sigma_diag.len() });
    }
    if sigma_diag.iter().any(|s| *s == T::zero() || !s.is_finite()) {
        return Err(Error::SingularVolatility);
    }
    check_dims(spec, (d, d), z)?;
    let mut p_star = Vec::with_capacity(d);
    let mut b_star = Vec::with_capacity(d);
    let mut tie_report = Vec::new();
    let mut value = delta * spec.r();
    for i in 0..d {
        let (p, b, v) = diagonal_coordinate(spec, delta, i, sigma_diag[i], z[i]);
        if p == T::zero() {
            tie_report.push(i);
        }
        value += v;
        p_star.push(p);
        b_star.push(b);
    }
    Ok(SaddleSolutionH { t, z: z.to_vec(), p_star, b_star, value, tie_report, iterations: 0 })
}

/// Saddle point for a general invertible `σ` by minimising `ψ(b)` over the
/// drift box, followed by a bang-bang polish of `b`.
pub fn solve_saddle_h_iterative(
    spec: &MarketSpec<f64>,
    delta: f64,
    t: f64,
    sigma: &DMatrix<f64>,
    z: &[f64],
) -> Result<SaddleSolutionH<f64>> {
    check_delta(delta)?;
    check_dims(spec, sigma.shape(), z)?;
    let d = spec.dim();
    let inv = checked_inverse(sigma)?;
    let r = spec.r();
    let zv = DVector::from_column_slice(z);
    let (pi_lo, pi_hi) = (spec.pi_lo(), spec.pi_hi());
    let inner_iters = std::cell::Cell::new(0usize);

    let best_response = |b: &DVector<f64>| -> Result<Projection> {
        let shifted = b.map(|x| x - r);
        let v = (&inv * shifted + &zv) / (1.0 - delta);
        let proj = project_onto_sigma_pi(sigma, pi_lo, pi_hi, v.as_slice(), PROJ_TOL)?;
        inner_iters.set(inner_iters.get() + proj.iterations);
        Ok(proj)
    };
    let psi = |b: &DVector<f64>| -> Result<(f64, Vec<f64>)> {
        let p = best_response(b)?.p;
        Ok((eval_h(spec, delta, sigma, z, &p, b.as_slice())?, p))
    };

    let norm_inv = spectral_norm(&inv);
    let lip = (delta * norm_inv * norm_inv / (1.0 - delta)).max(f64::MIN_POSITIVE);
    let b0 = DVector::from_fn(d, |i, _| 0.5 * (spec.b_lo()[i] + spec.b_hi()[i]));
    let (mut b, outer) = fista(
        |b| Ok(DVector::from_vec(best_response(b)?.p) * delta),
        lip,
        spec.b_lo(),
        spec.b_hi(),
        b0,
        OUTER_TOL,
        "saddle_h",
    )?;

    let (mut value, mut p) = psi(&b)?;
    for _ in 0..=d {
        let mut candidate = b.clone();
        for i in 0..d {
            if p[i] > TIE_TOL {
                candidate[i] = spec.b_lo()[i];
            } else if p[i] < -TIE_TOL {
                candidate[i] = spec.b_hi()[i];
            }
        }
        if candidate == b {
            break;
        }
        let (v_new, p_new) = psi(&candidate)?;
        if v_new <= value + 1e-13 * (1.0 + value.abs()) {
            b = candidate;
            value = v_new;
            p = p_new;
        } else {
            break;
        }
    }
    let tie_report = (0..d).filter(|&i| p[i].abs() <= TIE_TOL).collect();
    Ok(SaddleSolutionH {
        t,
        z: z.to_vec(),
        p_star: p,
        b_star: b.iter().cloned().collect(),
        value,
        tie_report,
        iterations: outer + inner_iters.get(),
    })
}

/// Saddle point of `H` at `(t, z)`; dispatches to the exact separable solution
/// for diagonal `σ`.
pub fn solve_saddle_h(
    spec: &MarketSpec<f64>,
    delta: f64,
    t: f64,
    sigma: &DMatrix<f64>,
    z: &[f64],
) -> Result<SaddleSolutionH<f64>> {
    check_dims(spec, sigma.shape(), z)?;
    if is_diagonal(sigma) {
        let diag: Vec<f64> = (0..spec.dim()).map(|i| sigma[(i, i)]).collect();
        solve_saddle_h_diagonal(spec, delta, t, &diag, z)
    } else {
        solve_saddle_h_iterative(spec, delta, t, sigma, z)
    }
}
