//! Robust forward CRRA investment and consumption preferences.
//!
//! The crate computes the worst-case saddle points of the market value
//! functions `G` (drift and volatility uncertainty) and `H` (drift
//! uncertainty only), builds the forward preference pair `(U, U^c)` from
//! closed-form ODE solutions, solves the infinite-horizon BSDE that drives
//! the drift-only construction, simulates wealth exactly in log space, and
//! checks the martingale optimality principles on the criterion process.
//!
//! Closed-form layers are generic over the scalar type (`f32`/`f64`) through
//! [`Real`]; iterative solvers, Monte Carlo and the BSDE work in `f64`. The
//! aliases at the crate root name the concrete instantiations.

// `!(x > 0.0)` style checks are deliberate: they reject NaN along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod error;
pub mod market;
pub mod preferences;
pub mod quad;
pub mod rng;
pub mod saddle;
pub mod stats;
pub mod verify;

mod linalg;

use std::fmt::Debug;

pub use error::{Error, Result};

/// Scalar type used by the closed-form layers.
pub trait Real: num_traits::Float + num_traits::FloatConst + num_traits::NumAssign + Debug + Default + Send + Sync + 'static {}

impl<T> Real for T where
    T: num_traits::Float + num_traits::FloatConst + num_traits::NumAssign + Debug + Default + Send + Sync + 'static {}

pub type MarketSpecF64 = market::MarketSpec<f64>;
pub type MarketSpecF32 = market::MarketSpec<f32>;
pub type SaddleSolutionGF64 = saddle::SaddleSolutionG<f64>;
pub type SaddleSolutionGF32 = saddle::SaddleSolutionG<f32>;
pub type SaddleSolutionHF64 = saddle::SaddleSolutionH<f64>;
pub type LambdaSpecF64 = preferences::LambdaSpec<f64>;
pub type LambdaSpecF32 = preferences::LambdaSpec<f32>;
pub type YClosedFormF64 = preferences::YClosedForm<f64>;
pub type YClosedFormF32 = preferences::YClosedForm<f32>;
pub type GClosedFormF64 = preferences::GClosedForm<f64>;
pub type ConditionReportF64 = preferences::ConditionReport<f64>;
