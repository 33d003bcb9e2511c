use ndarray::{s, Array1, Array2, ArrayView1};

use super::{CurvatureKind, CurvatureOperator};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{sym_eig, EigDecomp, KronBlock, SymMatrix, SymOperator};
use crate::net::Mlp;

const CHUNK: usize = 512;

/// Per-layer Kronecker factors.
///
/// The input-side factor of layer `k` is `A_k = E[h^k h^kᵀ]`. The output
/// side starts from the expected logit curvature `E[diag(p) - ppᵀ]` (or
/// `E[(p - e_y)(p - e_y)ᵀ]` for the empirical Fisher) and is propagated
/// backwards with factorized expectations,
/// `B_k = (w^{k+1}ᵀ B_{k+1} w^{k+1}) ⊙ E[σ'(u^{k+1}) σ'(u^{k+1})ᵀ]`.
pub fn kfac_blocks(mlp: &Mlp, data: &Dataset, kind: CurvatureKind) -> Result<CurvatureOperator> {
    if kind == CurvatureKind::ExactHessian {
        return Err(Error::input("Kronecker factors approximate Fisher-type curvature only"));
    }
    let n = data.n();
    let l = mlp.depth();
    let w = mlp.widths();
    let m = mlp.classes();
    let mut a: Vec<Array2<f64>> = (0..=l).map(|k| Array2::zeros((w[k], w[k]))).collect();
    let mut dd: Vec<Array2<f64>> = (1..=l).map(|k| Array2::zeros((w[k], w[k]))).collect();
    let mut out = Array2::<f64>::zeros((m, m));
    let act = mlp.activation();

    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let trace = mlp.forward_batch(data.inputs().slice(s![start..end, ..]))?;
        for k in 0..=l {
            a[k] += &trace.h[k].t().dot(&trace.h[k]);
        }
        for k in 1..=l {
            let d = trace.u[k - 1].mapv(|v| act.deriv(v));
            dd[k - 1] += &d.t().dot(&d);
        }
        let p = &trace.probs;
        match kind {
            CurvatureKind::EmpiricalFim => {
                let mut g = p.clone();
                for (sidx, &y) in data.labels()[start..end].iter().enumerate() {
                    g[[sidx, y]] -= 1.0;
                }
                out += &g.t().dot(&g);
            }
            _ => {
                for row in p.rows() {
                    for i in 0..m {
                        out[[i, i]] += row[i];
                    }
                }
                out -= &p.t().dot(p);
            }
        }
    }

    let inv = 1.0 / n as f64;
    let mut pre = vec![Array2::zeros((0, 0)); l + 1];
    pre[l] = out * (inv * kind.scale());
    for k in (0..l).rev() {
        let wk = &mlp.weights()[k + 1];
        let back = wk.t().dot(&pre[k + 1]).dot(wk);
        pre[k] = back * &(&dd[k] * inv);
    }
    let blocks = a
        .into_iter()
        .zip(pre)
        .map(|(ak, bk)| {
            Ok(KronBlock {
                act: SymMatrix::from_upper(ak * inv)?,
                pre: SymMatrix::from_upper(bk)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CurvatureOperator { kind, op: SymOperator::Kfac(blocks), n })
}

/// Eigendecompositions of every Kronecker factor.
///
/// Within block `k` the eigenvector with coordinates `(i, j)` is
/// `u_i^{pre} ⊗ u_j^{act}` and sits at position `i·d_in + j` of the block,
/// so coordinates of a weight matrix `V` are `U_preᵀ V U_act`.
#[derive(Debug, Clone)]
pub struct KfacEig {
    pub blocks: Vec<(EigDecomp, EigDecomp)>,
}

impl KfacEig {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|(b, a)| b.len() * a.len()).sum()
    }

    /// Eigenvalues in coordinate order, clipped at zero.
    pub fn eigvals(&self) -> Array1<f64> {
        let mut v = Vec::with_capacity(self.dim());
        for (b, a) in &self.blocks {
            for &x in b.eigvals.iter() {
                for &y in a.eigvals.iter() {
                    v.push((x * y).max(0.0));
                }
            }
        }
        Array1::from(v)
    }

    /// Coordinates `Bᵀ v`.
    pub fn to_coords(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        self.map(v, true)
    }

    /// `B c`.
    pub fn from_coords(&self, c: ArrayView1<'_, f64>) -> Array1<f64> {
        self.map(c, false)
    }

    fn map(&self, v: ArrayView1<'_, f64>, forward: bool) -> Array1<f64> {
        let mut out = Array1::zeros(v.len());
        let mut off = 0;
        for (b, a) in &self.blocks {
            let (dout, din) = (b.len(), a.len());
            let len = dout * din;
            let x = v.slice(s![off..off + len]);
            let x = x.to_shape((dout, din)).expect("block shape");
            let y = if forward {
                b.eigvecs.t().dot(&x).dot(&a.eigvecs)
            } else {
                b.eigvecs.dot(&x).dot(&a.eigvecs.t())
            };
            for (dst, src) in out.slice_mut(s![off..off + len]).iter_mut().zip(y.iter()) {
                *dst = *src;
            }
            off += len;
        }
        out
    }
}

pub fn kfac_eig(op: &SymOperator) -> Result<KfacEig> {
    match op {
        SymOperator::Kfac(blocks) => {
            let blocks = blocks
                .iter()
                .map(|b| Ok((sym_eig(&b.pre)?, sym_eig(&b.act)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(KfacEig { blocks })
        }
        _ => Err(Error::input("expected a Kronecker-factored operator")),
    }
}
