use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::{kron_dense, kron_spectrum, orthonormality_defect, sym_eig, sym_eigvals, EigDecomp, SymMatrix};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const PSD_TOL: f64 = 1e-8;

/// One Kronecker-factored layer block.
///
/// The block acts on the row-major flattening of a `d_out × d_in` weight
/// matrix `W` as `pre ⊗ act`, that is `W ↦ pre · W · act`. `act` is the
/// input-side factor (activation correlation, `d_in × d_in`) and `pre` the
/// output-side preactivation factor (`d_out × d_out`).
#[derive(Debug, Clone)]
pub struct KronBlock {
    pub act: SymMatrix,
    pub pre: SymMatrix,
}

impl KronBlock {
    pub fn dim(&self) -> usize {
        self.act.dim() * self.pre.dim()
    }

    pub fn trace(&self) -> f64 {
        self.act.trace() * self.pre.trace()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        kron_dense(self.pre.view(), self.act.view())
    }

    pub fn eigvals(&self) -> Result<Array1<f64>> {
        let a = sym_eigvals(&self.act)?;
        let b = sym_eigvals(&self.pre)?;
        Ok(kron_spectrum(b.view(), a.view()))
    }

    fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        let (dout, din) = (self.pre.dim(), self.act.dim());
        let w = ndarray::ArrayView2::from_shape((dout, din), x).expect("block length");
        let r = self.pre.view().dot(&w).dot(&self.act.view());
        for (dst, src) in y.iter_mut().zip(r.iter()) {
            *dst = *src;
        }
    }
}

/// Top-`k` eigenpairs plus an isotropic value on the orthogonal complement:
/// `U Λ Uᵀ + iso (I − U Uᵀ)`.
#[derive(Debug, Clone)]
pub struct LowRankIso {
    basis: Array2<f64>,
    eigvals: Array1<f64>,
    iso: f64,
}

impl LowRankIso {
    pub fn new(basis: Array2<f64>, eigvals: Array1<f64>, iso: f64) -> Result<Self> {
        if basis.ncols() != eigvals.len() {
            return Err(Error::input("basis columns and eigenvalue count differ"));
        }
        if basis.ncols() > basis.nrows() {
            return Err(Error::input("more basis vectors than dimensions"));
        }
        if !iso.is_finite() || eigvals.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite eigenvalue"));
        }
        let defect = orthonormality_defect(basis.view());
        if defect > PSD_TOL {
            return Err(Error::input(format!("basis not orthonormal (defect {defect:.3e})")));
        }
        Ok(LowRankIso { basis, eigvals, iso })
    }

    pub fn from_eig(eig: &EigDecomp, iso: f64) -> Result<Self> {
        Self::new(eig.eigvecs.clone(), eig.eigvals.clone(), iso)
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    pub fn eigvals(&self) -> &Array1<f64> {
        &self.eigvals
    }

    pub fn iso(&self) -> f64 {
        self.iso
    }

    pub fn rank(&self) -> usize {
        self.eigvals.len()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }
}

/// Symmetric operator in one of the three supported representations.
#[derive(Debug, Clone)]
pub enum SymOperator {
    Dense(SymMatrix),
    /// Block-diagonal, one Kronecker block per layer, in layer order.
    Kfac(Vec<KronBlock>),
    LowRankIso(LowRankIso),
}

impl SymOperator {
    pub fn dim(&self) -> usize {
        match self {
            SymOperator::Dense(m) => m.dim(),
            SymOperator::Kfac(blocks) => blocks.iter().map(KronBlock::dim).sum(),
            SymOperator::LowRankIso(l) => l.dim(),
        }
    }

    pub fn identity(p: usize) -> Self {
        SymOperator::LowRankIso(LowRankIso {
            basis: Array2::zeros((p, 0)),
            eigvals: Array1::zeros(0),
            iso: 1.0,
        })
    }

    pub fn matvec(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = Array1::zeros(v.len());
        let x = v.to_vec();
        self.matvec_into(&x, out.as_slice_mut().expect("contiguous"));
        out
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        match self {
            SymOperator::Dense(m) => {
                let r = m.view().dot(&ArrayView1::from(x));
                y.copy_from_slice(r.as_slice().expect("contiguous"));
            }
            SymOperator::Kfac(blocks) => {
                let mut off = 0;
                for b in blocks {
                    let len = b.dim();
                    b.matvec_into(&x[off..off + len], &mut y[off..off + len]);
                    off += len;
                }
            }
            SymOperator::LowRankIso(l) => {
                let xv = ArrayView1::from(x);
                let c = l.basis.t().dot(&xv);
                let scaled = &c * &l.eigvals - &c * l.iso;
                let r = l.basis.dot(&scaled);
                for i in 0..y.len() {
                    y[i] = l.iso * x[i] + r[i];
                }
            }
        }
    }

    pub fn to_dense(&self) -> Result<SymMatrix> {
        match self {
            SymOperator::Dense(m) => Ok(m.clone()),
            SymOperator::Kfac(blocks) => {
                let p = self.dim();
                let mut out = Array2::zeros((p, p));
                let mut off = 0;
                for b in blocks {
                    let len = b.dim();
                    out.slice_mut(ndarray::s![off..off + len, off..off + len]).assign(&b.to_dense());
                    off += len;
                }
                SymMatrix::from_upper(out)
            }
            SymOperator::LowRankIso(l) => {
                let mut scaled = l.basis.clone();
                for (mut col, &v) in scaled.axis_iter_mut(Axis(1)).zip(l.eigvals.iter()) {
                    col.mapv_inplace(|x| x * (v - l.iso));
                }
                let mut out = scaled.dot(&l.basis.t());
                for i in 0..l.dim() {
                    out[[i, i]] += l.iso;
                }
                SymMatrix::from_upper(out)
            }
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            SymOperator::Dense(m) => m.trace(),
            SymOperator::Kfac(blocks) => blocks.iter().map(KronBlock::trace).sum(),
            SymOperator::LowRankIso(l) => l.eigvals.sum() + l.iso * (l.dim() - l.rank()) as f64,
        }
    }

    /// Full spectrum, descending.
    pub fn eigvals(&self) -> Result<Array1<f64>> {
        let mut all: Vec<f64> = match self {
            SymOperator::Dense(m) => return sym_eigvals(m),
            SymOperator::Kfac(blocks) => {
                let mut v = Vec::with_capacity(self.dim());
                for b in blocks {
                    v.extend(b.eigvals()?);
                }
                v
            }
            SymOperator::LowRankIso(l) => {
                let mut v = l.eigvals.to_vec();
                v.extend(std::iter::repeat(l.iso).take(l.dim() - l.rank()));
                v
            }
        };
        all.sort_by(|a, b| b.partial_cmp(a).expect("finite spectrum"));
        Ok(Array1::from(all))
    }

    /// `log det`, finite only for positive definite operators.
    pub fn logdet(&self) -> Result<f64> {
        let ev = self.eigvals()?;
        if ev.iter().any(|&l| l <= 0.0) {
            return Err(Error::domain("operator is singular"));
        }
        Ok(ev.iter().map(|l| l.ln()).sum())
    }
}

/// Draws one sample from `N(mean, cov)`.
pub fn sample_gaussian(mean: ArrayView1<'_, f64>, cov: &SymOperator, seed: u64) -> Result<Array1<f64>> {
    let sampler = GaussianSampler::new(cov)?;
    let mut r = rng::rng(seed);
    sampler.sample(mean, &mut r)
}

/// Draws one sample using an existing stream.
pub fn sample_gaussian_with(mean: ArrayView1<'_, f64>, cov: &SymOperator, rng: &mut Rng) -> Result<Array1<f64>> {
    GaussianSampler::new(cov)?.sample(mean, rng)
}

/// Precomputed square roots for repeated sampling from one covariance.
#[derive(Debug, Clone)]
pub enum GaussianSampler {
    /// Columns scaled by `sqrt(λ)`.
    Dense(Array2<f64>),
    /// Per block: (sqrt of pre factor, sqrt of act factor).
    Kfac(Vec<(Array2<f64>, Array2<f64>)>),
    LowRankIso { basis: Array2<f64>, sqrt_vals: Array1<f64>, sqrt_iso: f64 },
}

impl GaussianSampler {
    pub fn new(cov: &SymOperator) -> Result<Self> {
        match cov {
            SymOperator::Dense(m) => {
                let eg = sym_eig(m)?;
                let root = sqrt_columns(&eg)?;
                Ok(GaussianSampler::Dense(root))
            }
            SymOperator::Kfac(blocks) => {
                let mut roots = Vec::with_capacity(blocks.len());
                for b in blocks {
                    roots.push((sqrt_psd(&b.pre)?, sqrt_psd(&b.act)?));
                }
                Ok(GaussianSampler::Kfac(roots))
            }
            SymOperator::LowRankIso(l) => {
                if l.iso < 0.0 || l.eigvals.iter().any(|&v| v < 0.0) {
                    return Err(Error::input("covariance has a negative eigenvalue"));
                }
                Ok(GaussianSampler::LowRankIso {
                    basis: l.basis.clone(),
                    sqrt_vals: l.eigvals.mapv(f64::sqrt),
                    sqrt_iso: l.iso.sqrt(),
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GaussianSampler::Dense(r) => r.nrows(),
            GaussianSampler::Kfac(roots) => roots.iter().map(|(b, a)| b.nrows() * a.nrows()).sum(),
            GaussianSampler::LowRankIso { basis, .. } => basis.nrows(),
        }
    }

    pub fn sample(&self, mean: ArrayView1<'_, f64>, rng: &mut Rng) -> Result<Array1<f64>> {
        let p = self.dim();
        if mean.len() != p {
            return Err(Error::input(format!("mean has length {}, covariance {p}", mean.len())));
        }
        let mut r = Array1::zeros(p);
        rng::fill_normal(rng, r.as_slice_mut().expect("contiguous"));
        Ok(&mean + &self.transform(r.view()))
    }

    /// Maps a standard normal vector `r` to a sample offset `L r` with
    /// `L Lᵀ` equal to the covariance.
    pub fn transform(&self, r: ArrayView1<'_, f64>) -> Array1<f64> {
        match self {
            GaussianSampler::Dense(root) => root.dot(&r),
            GaussianSampler::Kfac(roots) => {
                let mut out = Array1::zeros(r.len());
                let mut off = 0;
                for (sb, sa) in roots {
                    let (dout, din) = (sb.nrows(), sa.nrows());
                    let len = dout * din;
                    let z = r.slice(ndarray::s![off..off + len]);
                    let z = z.to_shape((dout, din)).expect("block shape");
                    let x = sb.dot(&z).dot(sa);
                    out.slice_mut(ndarray::s![off..off + len])
                        .assign(&ArrayView1::from(x.as_slice().expect("standard layout")));
                    off += len;
                }
                out
            }
            GaussianSampler::LowRankIso { basis, sqrt_vals, sqrt_iso } => {
                let c = basis.t().dot(&r);
                let nu1 = basis.dot(&(&c * sqrt_vals));
                let nu2 = (&r - &basis.dot(&c)) * *sqrt_iso;
                nu1 + nu2
            }
        }
    }
}

fn check_psd(vals: &Array1<f64>) -> Result<()> {
    let top = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    if let Some(&low) = vals.iter().last() {
        if low < -PSD_TOL * top {
            return Err(Error::input(format!("covariance has negative eigenvalue {low:.3e}")));
        }
    }
    Ok(())
}

fn sqrt_columns(eg: &EigDecomp) -> Result<Array2<f64>> {
    check_psd(&eg.eigvals)?;
    let mut root = eg.eigvecs.clone();
    for (mut col, &l) in root.axis_iter_mut(Axis(1)).zip(eg.eigvals.iter()) {
        let s = l.max(0.0).sqrt();
        col.mapv_inplace(|x| x * s);
    }
    Ok(root)
}

/// Symmetric square root `U sqrt(Λ) Uᵀ`.
fn sqrt_psd(m: &SymMatrix) -> Result<Array2<f64>> {
    let eg = sym_eig(m)?;
    let root = sqrt_columns(&eg)?;
    Ok(root.dot(&eg.eigvecs.t()))
}
