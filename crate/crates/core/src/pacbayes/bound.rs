use serde::Serialize;

use super::kl::kl_inv;
use crate::error::{Error, Result};

/// `kl⁻¹(ê, (KL + φ)/(n - 1))`.
pub fn evaluate_bound(e_hat: f64, kl_qp: f64, phi: f64, n: usize, delta: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::input(format!("need n >= 2, got {n}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::input(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(e_hat.is_finite() && kl_qp.is_finite() && phi.is_finite()) {
        return Err(Error::numeric("non-finite bound input"));
    }
    Ok(kl_inv(e_hat, (kl_qp + phi) / (n - 1) as f64))
}

/// Outcome of a bound computation.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub method: String,
    /// Empirical 0-1 error of the posterior, `ê(Q, D_n)`.
    pub e_hat: f64,
    pub e_hat_se: f64,
    /// Empirical loss of the posterior, `ĕ(Q, D_n)`.
    pub loss: f64,
    pub kl: f64,
    pub phi: f64,
    pub delta: f64,
    pub n: usize,
    pub bound: f64,
    pub eps: f64,
    pub eps_index: i64,
    pub a: Option<f64>,
    pub a_index: Option<i64>,
    /// Bound at the continuous prior scales before snapping to the grid.
    pub pre_rounding_bound: Option<f64>,
    /// Bound at the starting point of an optimization.
    pub initial_bound: Option<f64>,
    pub mc_samples: usize,
    pub steps: Option<usize>,
    /// Optimizer steps between curvature recomputations.
    pub hessian_cadence: Option<usize>,
    pub notes: Vec<String>,
}
