use ndarray::{s, Array2, ArrayView2};

use super::{loss_cotangent, Mlp};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

const CHUNK: usize = 256;

/// Second-moment matrices collected over a dataset.
#[derive(Debug, Clone)]
pub struct Correlations {
    /// `E[h^k h^kᵀ]` for `k = 0..=L`.
    pub act: Vec<SymMatrix>,
    /// `E[g^k g^kᵀ]` with `g^k` the gradient of `-log2 p(y|x)` with
    /// respect to `h^k`, for `k = 0..=L`.
    pub act_grad: Vec<SymMatrix>,
    /// `tr E[∂z_i/∂w^k (∂z_i/∂w^k)ᵀ]`, indexed `[i][k]`.
    pub logit_jac_trace: Vec<Vec<f64>>,
}

pub fn capture_correlations(mlp: &Mlp, data: &Dataset) -> Result<Correlations> {
    let n = data.n();
    let widths = mlp.widths();
    let l = mlp.depth();
    let mut act: Vec<Array2<f64>> = (0..=l).map(|k| Array2::zeros((widths[k], widths[k]))).collect();
    let mut act_grad = act.clone();
    let m = mlp.classes();
    let mut jac = vec![vec![0.0; l + 1]; m];

    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let x = data.inputs().slice(s![start..end, ..]);
        let trace = mlp.forward_batch(x)?;
        let (_, delta) = loss_cotangent(&trace, &data.labels()[start..end], false);
        let deltas = mlp.backward_deltas(&trace, delta);
        for k in 0..=l {
            act[k] += &trace.h[k].t().dot(&trace.h[k]);
            let g = deltas[k].dot(&mlp.weights()[k]);
            act_grad[k] += &g.t().dot(&g);
        }
        let hn: Vec<Vec<f64>> = trace
            .h
            .iter()
            .map(|h| h.rows().into_iter().map(|r| r.dot(&r)).collect())
            .collect();
        for (i, row) in jac.iter_mut().enumerate() {
            let mut e = Array2::zeros((end - start, m));
            e.column_mut(i).fill(1.0);
            let d = mlp.backward_deltas(&trace, e);
            for k in 0..=l {
                row[k] += d[k]
                    .rows()
                    .into_iter()
                    .zip(&hn[k])
                    .map(|(r, h2)| r.dot(&r) * h2)
                    .sum::<f64>();
            }
        }
    }

    let inv = 1.0 / n as f64;
    let finish = |v: Vec<Array2<f64>>| -> Result<Vec<SymMatrix>> {
        v.into_iter().map(|a| SymMatrix::from_upper(a * inv)).collect()
    };
    for row in jac.iter_mut() {
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Ok(Correlations {
        act: finish(act)?,
        act_grad: finish(act_grad)?,
        logit_jac_trace: jac,
    })
}

/// `E[∂z_i/∂w^k (∂z_i/∂w^k)ᵀ]` for one layer `k`, over the rows of `x`.
pub fn logit_jacobian_block_corr(mlp: &Mlp, x: ArrayView2<'_, f64>, i: usize, k: usize) -> Result<SymMatrix> {
    if i >= mlp.classes() || k > mlp.depth() {
        return Err(Error::input(format!("logit {i} / layer {k} out of range")));
    }
    let w = &mlp.weights()[k];
    let (dout, din) = w.dim();
    let mut acc = Array2::zeros((dout * din, dout * din));
    for start in (0..x.nrows()).step_by(CHUNK) {
        let end = (start + CHUNK).min(x.nrows());
        let trace = mlp.forward_batch(x.slice(s![start..end, ..]))?;
        let mut e = Array2::zeros((end - start, mlp.classes()));
        e.column_mut(i).fill(1.0);
        let d = mlp.backward_deltas(&trace, e);
        let mut rows = Array2::zeros((end - start, dout * din));
        for sidx in 0..end - start {
            let dv = d[k].row(sidx);
            let hv = trace.h[k].row(sidx);
            let mut r = rows.row_mut(sidx);
            for a in 0..dout {
                for b in 0..din {
                    r[a * din + b] = dv[a] * hv[b];
                }
            }
        }
        acc += &rows.t().dot(&rows);
    }
    SymMatrix::from_upper(acc / x.nrows() as f64)
}

/// `E[∂z_i/∂w (∂z_i/∂w)ᵀ]` over all weights.
pub fn logit_jacobian_corr(mlp: &Mlp, x: ArrayView2<'_, f64>, i: usize) -> Result<SymMatrix> {
    if i >= mlp.classes() {
        return Err(Error::input(format!("logit {i} out of range")));
    }
    let p = mlp.num_params();
    let mut acc = Array2::zeros((p, p));
    for start in (0..x.nrows()).step_by(CHUNK) {
        let end = (start + CHUNK).min(x.nrows());
        let trace = mlp.forward_batch(x.slice(s![start..end, ..]))?;
        let mut e = Array2::zeros((end - start, mlp.classes()));
        e.column_mut(i).fill(1.0);
        let rows = mlp.per_sample_vjp(&trace, e);
        acc += &rows.t().dot(&rows);
    }
    SymMatrix::from_upper(acc / x.nrows() as f64)
}
