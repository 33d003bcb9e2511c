//! Dense and Krylov symmetric eigensolvers, Kronecker spectra and
//! structured symmetric operators.

mod eig;
mod kron;
mod lanczos;
mod operator;

pub use eig::{sym_eig, sym_eigvals};
pub use kron::{kron_dense, kron_spectrum};
pub use lanczos::lanczos_topk;
pub use operator::{sample_gaussian, sample_gaussian_with, GaussianSampler, KronBlock, LowRankIso, SymOperator};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Symmetric matrix with full storage.
///
/// Construction copies the upper triangle onto the lower one, so the two
/// halves agree exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: Array2<f64>,
}

impl SymMatrix {
    /// Builds from a square matrix whose upper triangle is authoritative.
    pub fn from_upper(mut a: Array2<f64>) -> Result<Self> {
        let (r, c) = a.dim();
        if r != c || r == 0 {
            return Err(Error::input(format!("expected a non-empty square matrix, got {r}x{c}")));
        }
        for i in 0..r {
            for j in i..r {
                let v = a[[i, j]];
                if !v.is_finite() {
                    return Err(Error::input(format!("non-finite entry at ({i}, {j})")));
                }
                a[[j, i]] = v;
            }
        }
        Ok(SymMatrix { data: a })
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix { data: Array2::eye(n) }
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix { data: Array2::zeros((n, n)) }
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        Self::from_upper(Array2::from_diag(&Array1::from(diag.to_vec())))
    }

    /// `scale * GᵀG` for a data matrix `G` with one observation per row.
    pub fn gram(g: ArrayView2<'_, f64>, scale: f64) -> Result<Self> {
        let mut m = g.t().dot(&g);
        m.mapv_inplace(|v| v * scale);
        Self::from_upper(m)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    pub fn trace(&self) -> f64 {
        self.data.diag().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn matvec(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        self.data.dot(&v)
    }

    pub fn scaled(&self, s: f64) -> Self {
        SymMatrix { data: &self.data * s }
    }

    /// Smallest eigenvalue is at least `-tol * max(1, |λ_max|)`.
    pub fn is_psd(&self, tol: f64) -> bool {
        match sym_eigvals(self) {
            Ok(ev) => {
                let top = ev.first().copied().unwrap_or(0.0).abs().max(1.0);
                ev.last().map_or(true, |&l| l >= -tol * top)
            }
            Err(_) => false,
        }
    }
}

/// Eigen-decomposition `A = U Λ Uᵀ` with eigenvalues in descending order
/// and eigenvectors stored as the columns of `eigvecs`.
#[derive(Debug, Clone)]
pub struct EigDecomp {
    pub eigvals: Array1<f64>,
    pub eigvecs: Array2<f64>,
}

impl EigDecomp {
    pub fn len(&self) -> usize {
        self.eigvals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigvals.is_empty()
    }

    /// `U Λ Uᵀ` (the retained part only, for truncated decompositions).
    pub fn reconstruct(&self) -> Array2<f64> {
        let mut scaled = self.eigvecs.clone();
        for (mut col, &l) in scaled.axis_iter_mut(Axis(1)).zip(self.eigvals.iter()) {
            col.mapv_inplace(|v| v * l);
        }
        scaled.dot(&self.eigvecs.t())
    }

    /// Leading `k` eigenpairs.
    pub fn top(&self, k: usize) -> EigDecomp {
        let k = k.min(self.len());
        EigDecomp {
            eigvals: self.eigvals.slice(ndarray::s![..k]).to_owned(),
            eigvecs: self.eigvecs.slice(ndarray::s![.., ..k]).to_owned(),
        }
    }
}

/// Largest singular value of a rectangular matrix, from the eigenvalues of
/// the smaller Gram matrix.
pub fn spectral_norm(w: ArrayView2<'_, f64>) -> Result<f64> {
    let gram = if w.nrows() <= w.ncols() { w.dot(&w.t()) } else { w.t().dot(&w) };
    let ev = sym_eigvals(&SymMatrix::from_upper(gram)?)?;
    Ok(ev[0].max(0.0).sqrt())
}

/// Maximum absolute entry of `UᵀU - I`.
pub fn orthonormality_defect(u: ArrayView2<'_, f64>) -> f64 {
    let g = u.t().dot(&u);
    let mut worst = 0.0_f64;
    for ((i, j), v) in g.indexed_iter() {
        let target = if i == j { 1.0 } else { 0.0 };
        worst = worst.max((v - target).abs());
    }
    worst
}

/// Orthonormal columns spanning the columns of `a` (two passes of modified
/// Gram-Schmidt). Columns that become numerically dependent are an error.
pub fn orthonormalize(mut a: Array2<f64>) -> Result<Array2<f64>> {
    let k = a.ncols();
    for j in 0..k {
        let before = a.column(j).dot(&a.column(j)).sqrt();
        for _ in 0..2 {
            for i in 0..j {
                let proj = a.column(i).dot(&a.column(j));
                let qi = a.column(i).to_owned();
                a.column_mut(j).scaled_add(-proj, &qi);
            }
        }
        let nrm = a.column(j).dot(&a.column(j)).sqrt();
        if !(nrm > 1e-10 * before.max(f64::MIN_POSITIVE)) {
            return Err(Error::numeric(format!("column {j} is linearly dependent on earlier ones")));
        }
        a.column_mut(j).mapv_inplace(|v| v / nrm);
    }
    Ok(a)
}

/// Uniformly random `k`-dimensional orthonormal basis of `ℝ^p`.
pub fn random_orthonormal(p: usize, k: usize, seed: u64) -> Result<Array2<f64>> {
    if k > p {
        return Err(Error::input(format!("cannot fit {k} orthonormal vectors in dimension {p}")));
    }
    let mut r = crate::rng::rng(seed);
    let mut a = Array2::zeros((p, k));
    a.mapv_inplace(|_: f64| crate::rng::normal(&mut r));
    orthonormalize(a)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
