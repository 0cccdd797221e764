use nalgebra::DMatrix;

use super::{check_delta, dist_to_interval, SaddleSolutionG};
use crate::market::MarketSpec;
use crate::{Error, Real, Result};

pub(crate) fn quad_form<T: Real>(m: &DMatrix<T>, p: &[T]) -> T {
    let mut acc = T::zero();
    for i in 0..p.len() {
        for j in 0..p.len() {
            acc += p[i] * m[(i, j)] * p[j];
        }
    }
    acc
}

fn check_len<T>(what: &'static str, v: &[T], d: usize) -> Result<()> {
    if v.len() == d {
        Ok(())
    } else {
        Err(Error::Dimension { what, expected: d, got: v.len() })
    }
}

/// `G(p; b, Σ)`.
pub fn eval_g<T: Real>(spec: &MarketSpec<T>, delta: T, p: &[T], b: &[T], sigma: &DMatrix<T>) -> Result<T> {
    let d = spec.dim();
    check_len("p", p, d)?;
    check_len("b", b, d)?;
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::Dimension { what: "Sigma", expected: d, got: sigma.nrows() });
    }
    let half = T::from(0.5).unwrap();
    let r = spec.r();
    let excess = p.iter().zip(b).fold(T::zero(), |acc, (&pi, &bi)| acc + pi * (bi - r));
    Ok(half * delta * (delta - T::one()) * quad_form(sigma, p) + delta * excess + delta * r)
}

/// Inner minimum of `G(p; ·, ·)` over `𝔹 × Σ` for a fixed strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerMinG<T: Real> {
    pub b_min: Vec<T>,
    pub sigma_index: usize,
    pub sigma_min: DMatrix<T>,
    pub value: T,
    /// Coordinates with `pⁱ = 0`; `b_minⁱ` is then `r` projected onto `𝔹ⁱ`.
    pub ties: Vec<usize>,
}

pub fn inner_min_g<T: Real>(spec: &MarketSpec<T>, delta: T, p: &[T]) -> Result<InnerMinG<T>> {
    check_delta(delta)?;
    check_len("p", p, spec.dim())?;
    let mut ties = Vec::new();
    let b_min: Vec<T> = p
        .iter()
        .enumerate()
        .map(|(i, &pi)| {
            if pi < T::zero() {
                spec.b_hi()[i]
            } else if pi > T::zero() {
                spec.b_lo()[i]
            } else {
                ties.push(i);
                spec.r().max(spec.b_lo()[i]).min(spec.b_hi()[i])
            }
        })
        .collect();
    // (δ−1) < 0, so the minimising vertex maximises pᵀΣp
    let mut sigma_index = 0;
    let mut best = quad_form(&spec.cov_vertices()[0], p);
    for (k, m) in spec.cov_vertices().iter().enumerate().skip(1) {
        let q = quad_form(m, p);
        if q > best {
            best = q;
            sigma_index = k;
        }
    }
    let sigma_min = spec.cov_vertices()[sigma_index].clone();
    let value = eval_g(spec, delta, p, &b_min, &sigma_min)?;
    Ok(InnerMinG { b_min, sigma_index, sigma_min, value, ties })
}

/// Explicit one-dimensional saddle point with `Π = [p̲, p̄]`, `𝔹 = [b̲, b̄]`,
/// `Σ = [Σ̲, Σ̄]`.
pub fn solve_saddle_g_1d<T: Real>(spec: &MarketSpec<T>, delta: T) -> Result<SaddleSolutionG<T>> {
    check_delta(delta)?;
    if spec.dim() != 1 {
        return Err(Error::invalid(format!("closed-form saddle needs d = 1, got d = {}", spec.dim())));
    }
    let (zero, one, half) = (T::zero(), T::one(), T::from(0.5).unwrap());
    let r = spec.r();
    let (b_lo, b_hi) = (spec.b_lo()[0], spec.b_hi()[0]);
    let (p_lo, p_hi) = (spec.pi_lo()[0], spec.pi_hi()[0]);
    let sigma_bar = spec.cov_vertices().iter().map(|m| m[(0, 0)]).fold(T::neg_infinity(), T::max);
    let scale = (one - delta) * sigma_bar;

    let mut p_star = zero;
    if r <= b_lo {
        p_star += p_hi.min((b_lo - r) / scale);
    }
    if r >= b_hi {
        p_star += p_lo.max((b_hi - r) / scale);
    }
    let b_star = if r <= b_lo {
        b_lo
    } else if r >= b_hi {
        b_hi
    } else {
        r
    };
    let excess = b_star - r;
    let dist = dist_to_interval(p_lo, p_hi, excess / scale);
    let value = half * delta * (delta - one) * sigma_bar * dist * dist
        + half * delta / (one - delta) * excess * excess / sigma_bar
        + delta * r;
    Ok(SaddleSolutionG {
        p_star: vec![p_star],
        b_star: vec![b_star],
        sigma_star: DMatrix::from_element(1, 1, sigma_bar),
        value,
        iterations: 0,
        residual: zero,
    })
}
