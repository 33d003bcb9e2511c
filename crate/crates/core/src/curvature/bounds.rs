//! Right-hand sides of the trace and spectral inequalities relating
//! curvature to input and activation correlations.

use ndarray::Array1;

use crate::error::Result;
use crate::linalg::{kron_spectrum, spectral_norm, sym_eigvals, SymMatrix};
use crate::net::Mlp;

/// `‖w^j‖₂` for every layer.
pub fn layer_spectral_norms(mlp: &Mlp) -> Result<Vec<f64>> {
    mlp.weights().iter().map(|w| spectral_norm(w.view())).collect()
}

/// `2m·a^{2L}·tr(E[xxᵀ])·Π_j ‖w^j‖²·Σ_j ‖w^j‖⁻²`, bounding `tr(F)`.
pub fn fisher_trace_bound(mlp: &Mlp, input_trace: f64) -> Result<f64> {
    Ok(2.0 * mlp.classes() as f64 * layer_trace_bound_sum(mlp, input_trace)?)
}

fn layer_trace_bound_sum(mlp: &Mlp, input_trace: f64) -> Result<f64> {
    let norms = layer_spectral_norms(mlp)?;
    let a = mlp.activation().lipschitz();
    let prod: f64 = norms.iter().map(|s| s * s).product();
    let inv: f64 = norms.iter().map(|s| 1.0 / (s * s)).sum();
    Ok(a.powi(2 * mlp.depth() as i32) * input_trace * prod * inv)
}

/// `a^{2L}·tr(E[xxᵀ])·Π_{j≠k} ‖w^j‖²`, bounding
/// `tr E[∂z_i/∂w^k (∂z_i/∂w^k)ᵀ]` for any logit `i`. The sum over `k` is
/// the bound for the whole weight vector.
pub fn logit_jacobian_layer_trace_bound(mlp: &Mlp, input_trace: f64, k: usize) -> Result<f64> {
    let norms = layer_spectral_norms(mlp)?;
    let a = mlp.activation().lipschitz();
    let prod: f64 = norms.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, s)| s * s).product();
    Ok(a.powi(2 * mlp.depth() as i32) * input_trace * prod)
}

/// `a²‖w^{k-1}‖²·tr(E[h^{k-1} h^{k-1}ᵀ])`, bounding `tr(E[h^k h^kᵀ])`.
pub fn activation_trace_bound(mlp: &Mlp, k: usize, prev_trace: f64) -> Result<f64> {
    let s = spectral_norm(mlp.weights()[k - 1].view())?;
    let a = mlp.activation().lipschitz();
    Ok(a * a * s * s * prev_trace)
}

/// Sorted eigenvalue bound for `E[∂z_i/∂w^k (∂z_i/∂w^k)ᵀ]`:
/// `a^{2(L-k)}·Π_{j>k}‖w^j‖²` times `spec(I_{d_{k+1}}) ⊗ spec(E[h^k h^kᵀ])`.
pub fn block_correlation_bound_spectrum(mlp: &Mlp, k: usize, act_corr: &SymMatrix) -> Result<Array1<f64>> {
    let norms = layer_spectral_norms(mlp)?;
    let a = mlp.activation().lipschitz();
    let l = mlp.depth();
    let prod: f64 = norms[k + 1..].iter().map(|s| s * s).product();
    let factor = a.powi(2 * (l - k) as i32) * prod;
    let ones = Array1::ones(mlp.widths()[k + 1]);
    let spec = sym_eigvals(act_corr)?;
    Ok(kron_spectrum(ones.view(), spec.view()) * factor)
}
