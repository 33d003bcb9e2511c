use ndarray::{s, Array1, Array2, ArrayView1};

use super::CurvatureKind;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{ForwardTrace, Mlp};

const CHUNK: usize = 512;

/// Matrix-free products with a Fisher-type curvature, built from cached
/// forward passes and per-sample Jacobian-vector products.
pub struct CurvatureMatvec<'a> {
    mlp: &'a Mlp,
    kind: CurvatureKind,
    chunks: Vec<(ForwardTrace, Vec<usize>)>,
    n: usize,
}

impl<'a> CurvatureMatvec<'a> {
    pub fn new(mlp: &'a Mlp, data: &Dataset, kind: CurvatureKind) -> Result<Self> {
        if kind == CurvatureKind::ExactHessian {
            return Err(Error::input("exact Hessian has no matrix-free path"));
        }
        let n = data.n();
        let mut chunks = Vec::new();
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let trace = mlp.forward_batch(data.inputs().slice(s![start..end, ..]))?;
            chunks.push((trace, data.labels()[start..end].to_vec()));
        }
        Ok(CurvatureMatvec { mlp, kind, chunks, n })
    }

    pub fn dim(&self) -> usize {
        self.mlp.num_params()
    }

    pub fn apply(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.dim());
        self.apply_into(&v.to_vec(), out.as_slice_mut().expect("contiguous"));
        out
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (trace, labels) in &self.chunks {
            let dz = self.mlp.jvp(trace, x);
            let r = match self.kind {
                CurvatureKind::EmpiricalFim => {
                    let mut g = trace.probs.clone();
                    for (sidx, &lab) in labels.iter().enumerate() {
                        g[[sidx, lab]] -= 1.0;
                    }
                    let mut r = Array2::zeros(g.dim());
                    for sidx in 0..g.nrows() {
                        let c = g.row(sidx).dot(&dz.row(sidx));
                        r.row_mut(sidx).assign(&(&g.row(sidx) * c));
                    }
                    r
                }
                _ => {
                    let p = &trace.probs;
                    let mut r = p * &dz;
                    for sidx in 0..r.nrows() {
                        let c: f64 = r.row(sidx).sum();
                        let prow = p.row(sidx);
                        r.row_mut(sidx).zip_mut_with(&prow, |rv, &pv| *rv -= pv * c);
                    }
                    r
                }
            };
            let g = self.mlp.vjp(trace, r);
            for (dst, src) in y.iter_mut().zip(g.iter()) {
                *dst += src;
            }
        }
        let scale = self.kind.scale() / self.n as f64;
        y.iter_mut().for_each(|v| *v *= scale);
    }
}
