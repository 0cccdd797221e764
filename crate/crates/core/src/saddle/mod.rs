//! Value functions `G` (drift and volatility uncertainty) and `H` (drift
//! uncertainty only) and their saddle points.
//!
//! `G(p; b, Σ) = ½δ(δ−1)pᵀΣp + δpᵀ(b − r𝟙) + δr` is concave in `p` and linear in
//! `(b, Σ)`, so for fixed `p` the inner minimum is attained componentwise in
//! `b` and at a vertex of the covariance set.

mod g;
mod g_numeric;
mod h;

use nalgebra::DMatrix;
use serde::{Serialize, Serializer};

use crate::Real;

pub use g::{eval_g, inner_min_g, solve_saddle_g_1d, InnerMinG};
pub use g_numeric::{solve_saddle_g_nd, DEFAULT_MAX_ITER, DEFAULT_TOL};
pub(crate) use h::h_value_diagonal;
pub use h::{
    eval_h, project_onto_sigma_pi, solve_saddle_h, solve_saddle_h_diagonal, solve_saddle_h_iterative, Projection,
};

/// Argument tolerance used when comparing saddle points.
pub const ARG_TOL: f64 = 1e-6;
/// Value tolerance used when comparing saddle values.
pub const VALUE_TOL: f64 = 1e-8;
/// `|p*ⁱ|` below this counts as a tie (non-unique worst-case drift).
pub const TIE_TOL: f64 = 1e-9;

fn serialize_matrix<T: Real + Serialize, S: Serializer>(m: &DMatrix<T>, s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<T>> = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect();
    rows.serialize(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct SaddleSolutionG<T: Real> {
    pub p_star: Vec<T>,
    pub b_star: Vec<T>,
    #[serde(rename = "Sigma_star", serialize_with = "serialize_matrix")]
    pub sigma_star: DMatrix<T>,
    pub value: T,
    pub iterations: usize,
    pub residual: T,
}

impl SaddleSolutionG<f64> {
    /// PSD square root of `Σ*` (the nonnegative root in one dimension).
    pub fn volatility(&self) -> DMatrix<f64> {
        crate::linalg::psd_sqrt(&self.sigma_star)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct SaddleSolutionH<T: Real> {
    pub t: T,
    pub z: Vec<T>,
    pub p_star: Vec<T>,
    pub b_star: Vec<T>,
    pub value: T,
    /// Coordinates with `p*ⁱ = 0`, where any `b̃ⁱ ∈ [b_loⁱ, b_hiⁱ]` is optimal.
    pub tie_report: Vec<usize>,
    pub iterations: usize,
}

pub(crate) fn check_delta<T: Real>(delta: T) -> crate::Result<()> {
    if delta > T::zero() && delta < T::one() {
        Ok(())
    } else {
        Err(crate::Error::invalid(format!("delta must lie in (0,1), got {:?}", delta)))
    }
}

/// Distance from `x` to the interval `[lo, hi]` (bounds may be infinite).
pub(crate) fn dist_to_interval<T: Real>(lo: T, hi: T, x: T) -> T {
    if x < lo {
        lo - x
    } else if x > hi {
        x - hi
    } else {
        T::zero()
    }
}
