//! Curvature of the bit-scaled cross-entropy: Fisher information, empirical
//! Fisher, Gauss-Newton, finite-difference Hessians and Kronecker-factored
//! block approximations.
//!
//! With `C = diag(p) - ppᵀ` and `J` the logit Jacobian of one sample,
//! `F = E[Jᵀ C J]` and the Gauss-Newton matrix of `ĕ` is `F / ln 2`.

mod bounds;
mod kfac;
mod matfree;

pub use bounds::{
    block_correlation_bound_spectrum, activation_trace_bound, logit_jacobian_layer_trace_bound, layer_spectral_norms, fisher_trace_bound,
};
pub use kfac::{kfac_blocks, kfac_eig, KfacEig};
pub use matfree::CurvatureMatvec;

use std::f64::consts::LN_2;

use ndarray::{s, Array1, Array2, ArrayView2};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{lanczos_topk, EigDecomp, SymMatrix, SymOperator};
use crate::net::Mlp;

const CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurvatureKind {
    Fim,
    EmpiricalFim,
    GaussNewton,
    ExactHessian,
}

impl CurvatureKind {
    pub fn name(self) -> &'static str {
        match self {
            CurvatureKind::Fim => "fim",
            CurvatureKind::EmpiricalFim => "empirical_fim",
            CurvatureKind::GaussNewton => "gauss_newton",
            CurvatureKind::ExactHessian => "exact_hessian",
        }
    }

    /// Multiplier applied to `E[Jᵀ C J]`.
    pub(crate) fn scale(self) -> f64 {
        match self {
            CurvatureKind::GaussNewton | CurvatureKind::ExactHessian => 1.0 / LN_2,
            _ => 1.0,
        }
    }
}

/// Size limits for materialized curvature.
#[derive(Debug, Clone, Copy)]
pub struct Caps {
    /// Largest `p` for which a dense `p × p` operator is built.
    pub dense: usize,
    /// Largest `p` for matrix-free products.
    pub matvec: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { dense: 3000, matvec: 20000 }
    }
}

impl Caps {
    pub fn check_dense(&self, p: usize) -> Result<()> {
        if p > self.dense {
            return Err(Error::Size(format!(
                "dense curvature needs p <= {}, network has p = {p}; use the Lanczos top-k path",
                self.dense
            )));
        }
        Ok(())
    }

    pub fn check_matvec(&self, p: usize) -> Result<()> {
        if p > self.matvec {
            return Err(Error::Size(format!(
                "matrix-free curvature needs p <= {}, network has p = {p}",
                self.matvec
            )));
        }
        Ok(())
    }
}

/// A curvature operator annotated with what it approximates.
#[derive(Debug, Clone)]
pub struct CurvatureOperator {
    pub kind: CurvatureKind,
    pub op: SymOperator,
    pub n: usize,
}

impl CurvatureOperator {
    pub fn p(&self) -> usize {
        self.op.dim()
    }

    pub fn representation(&self) -> &'static str {
        match self.op {
            SymOperator::Dense(_) => "dense",
            SymOperator::Kfac(_) => "kfac",
            SymOperator::LowRankIso(_) => "low_rank_iso",
        }
    }

    /// One-line JSON description of the operator.
    pub fn metadata_json(&self) -> String {
        serde_json::json!({
            "kind": self.kind.name(),
            "representation": self.representation(),
            "p": self.p(),
            "n": self.n,
        })
        .to_string()
    }
}

/// Dense `(scale / n) Σ_s Σ_y r_{s,y} r_{s,y}ᵀ`, where the rows for one
/// sample come from `rows(probs_s, label_s)` as output cotangents.
fn accumulate_dense<F>(mlp: &Mlp, x: ArrayView2<'_, f64>, labels: Option<&[usize]>, scale: f64, cotangents: F) -> Result<SymMatrix>
where
    F: Fn(&Array2<f64>, Option<&[usize]>) -> Vec<Array2<f64>>,
{
    let n = x.nrows();
    let p = mlp.num_params();
    let mut acc = Array2::<f64>::zeros((p, p));
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let trace = mlp.forward_batch(x.slice(s![start..end, ..]))?;
        let lab = labels.map(|l| &l[start..end]);
        for delta in cotangents(&trace.probs, lab) {
            let rows = mlp.per_sample_vjp(&trace, delta);
            ndarray::linalg::general_mat_mul(1.0, &rows.t(), &rows, 1.0, &mut acc);
        }
    }
    acc.mapv_inplace(|v| v * scale / n as f64);
    SymMatrix::from_upper(acc)
}

/// Output cotangents `sqrt(p_y)(e_y - p)` for each class `y`, whose outer
/// products sum to `diag(p) - ppᵀ`.
fn fisher_cotangents(probs: &Array2<f64>, _labels: Option<&[usize]>) -> Vec<Array2<f64>> {
    let (b, m) = probs.dim();
    (0..m)
        .map(|y| {
            let mut d = Array2::zeros((b, m));
            for sidx in 0..b {
                let sp = probs[[sidx, y]].sqrt();
                for c in 0..m {
                    let e = if c == y { 1.0 } else { 0.0 };
                    d[[sidx, c]] = sp * (e - probs[[sidx, c]]);
                }
            }
            d
        })
        .collect()
}

fn empirical_cotangents(probs: &Array2<f64>, labels: Option<&[usize]>) -> Vec<Array2<f64>> {
    let labels = labels.expect("labels required");
    let mut d = probs.clone();
    for (sidx, &y) in labels.iter().enumerate() {
        d[[sidx, y]] -= 1.0;
    }
    vec![d]
}

/// Fisher information `E_x Σ_y p(y|x) ∇log p(y|x) ∇log p(y|x)ᵀ`.
pub fn fim(mlp: &Mlp, x: ArrayView2<'_, f64>, caps: &Caps) -> Result<CurvatureOperator> {
    caps.check_dense(mlp.num_params())?;
    let m = accumulate_dense(mlp, x, None, 1.0, fisher_cotangents)?;
    Ok(CurvatureOperator { kind: CurvatureKind::Fim, op: SymOperator::Dense(m), n: x.nrows() })
}

/// Fisher information with `y` fixed to the observed label.
pub fn empirical_fim(mlp: &Mlp, data: &Dataset, caps: &Caps) -> Result<CurvatureOperator> {
    caps.check_dense(mlp.num_params())?;
    let m = accumulate_dense(mlp, data.inputs().view(), Some(data.labels()), 1.0, empirical_cotangents)?;
    Ok(CurvatureOperator { kind: CurvatureKind::EmpiricalFim, op: SymOperator::Dense(m), n: data.n() })
}

/// Gauss-Newton part of the Hessian of `ĕ`.
pub fn gauss_newton(mlp: &Mlp, x: ArrayView2<'_, f64>, caps: &Caps) -> Result<CurvatureOperator> {
    caps.check_dense(mlp.num_params())?;
    let m = accumulate_dense(mlp, x, None, 1.0 / LN_2, fisher_cotangents)?;
    Ok(CurvatureOperator { kind: CurvatureKind::GaussNewton, op: SymOperator::Dense(m), n: x.nrows() })
}

/// `E[Σ_i ∂z_i/∂w (∂z_i/∂w)ᵀ]`.
pub fn logit_jacobian_gram(mlp: &Mlp, x: ArrayView2<'_, f64>, caps: &Caps) -> Result<SymMatrix> {
    caps.check_dense(mlp.num_params())?;
    accumulate_dense(mlp, x, None, 1.0, |probs, _| {
        let (b, m) = probs.dim();
        (0..m)
            .map(|i| {
                let mut d = Array2::zeros((b, m));
                d.column_mut(i).fill(1.0);
                d
            })
            .collect()
    })
}

/// Central-difference Hessian of `ĕ` before symmetrization; column `j`
/// is `(∇ĕ(w + h e_j) - ∇ĕ(w - h e_j)) / 2h`.
pub fn hessian_fd_raw(mlp: &Mlp, data: &Dataset, step: f64) -> Result<Array2<f64>> {
    let p = mlp.num_params();
    let w = mlp.flat();
    let mut h = Array2::zeros((p, p));
    let mut probe = mlp.clone();
    let mut wv = w.to_vec();
    for j in 0..p {
        wv[j] = w[j] + step;
        probe.set_flat(&wv)?;
        let (_, gp) = probe.grad(data.inputs().view(), data.labels())?;
        wv[j] = w[j] - step;
        probe.set_flat(&wv)?;
        let (_, gm) = probe.grad(data.inputs().view(), data.labels())?;
        wv[j] = w[j];
        h.column_mut(j).assign(&((gp - gm) / (2.0 * step)));
    }
    Ok(h)
}

/// Symmetrized finite-difference Hessian of `ĕ`.
pub fn exact_hessian_small(mlp: &Mlp, data: &Dataset, caps: &Caps) -> Result<CurvatureOperator> {
    caps.check_dense(mlp.num_params())?;
    let h = hessian_fd_raw(mlp, data, 1e-5)?;
    let sym = (&h + &h.t()) * 0.5;
    Ok(CurvatureOperator {
        kind: CurvatureKind::ExactHessian,
        op: SymOperator::Dense(SymMatrix::from_upper(sym)?),
        n: data.n(),
    })
}

/// Top-`k` eigenpairs of the Fisher-type curvature by Lanczos on
/// matrix-free products.
pub fn curvature_topk(
    mlp: &Mlp,
    data: &Dataset,
    kind: CurvatureKind,
    k: usize,
    iters: usize,
    seed: u64,
    caps: &Caps,
) -> Result<EigDecomp> {
    caps.check_matvec(mlp.num_params())?;
    let mv = CurvatureMatvec::new(mlp, data, kind)?;
    lanczos_topk(mlp.num_params(), k, iters, seed, |x, y| mv.apply_into(x, y))
}

/// Eigenvalues with `|λ| < 1e-12·λ_1` set to zero.
pub fn floor_spectrum(eigvals: &Array1<f64>) -> Array1<f64> {
    let top = eigvals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    eigvals.mapv(|v| if v.abs() < 1e-12 * top { 0.0 } else { v })
}
