//! Gaussian prior/posterior pairs whose covariances share one orthonormal
//! eigenbasis.
//!
//! A basis `B` (`p × k`, orthonormal columns) carries per-coordinate
//! variances; the orthogonal complement, if any, gets a single isotropic
//! variance. With `k = p` there is no complement.

use ndarray::{Array1, Array2, ArrayView1};

use crate::curvature::KfacEig;
use crate::error::{Error, Result};
use crate::linalg::{sym_eig, SymMatrix};
use crate::rng::{self, Rng};

#[derive(Debug, Clone)]
pub enum Basis {
    /// Standard basis of `ℝ^p`.
    Identity(usize),
    /// `p × k` orthonormal columns, `k ≤ p`.
    Dense(Array2<f64>),
    /// Full Kronecker-factored eigenbasis.
    Kron(KfacEig),
}

impl Basis {
    pub fn dim(&self) -> usize {
        match self {
            Basis::Identity(p) => *p,
            Basis::Dense(u) => u.nrows(),
            Basis::Kron(k) => k.dim(),
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            Basis::Identity(p) => *p,
            Basis::Dense(u) => u.ncols(),
            Basis::Kron(k) => k.dim(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.rank() == self.dim()
    }

    /// `Bᵀ v`.
    pub fn to_coords(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        match self {
            Basis::Identity(_) => v.to_owned(),
            Basis::Dense(u) => u.t().dot(&v),
            Basis::Kron(k) => k.to_coords(v),
        }
    }

    /// `B c`.
    pub fn from_coords(&self, c: ArrayView1<'_, f64>) -> Array1<f64> {
        match self {
            Basis::Identity(_) => c.to_owned(),
            Basis::Dense(u) => u.dot(&c),
            Basis::Kron(k) => k.from_coords(c),
        }
    }

    /// Explicit `p × k` matrix (tests and small problems only).
    pub fn to_matrix(&self) -> Array2<f64> {
        let (p, k) = (self.dim(), self.rank());
        let mut out = Array2::zeros((p, k));
        for j in 0..k {
            let mut e = Array1::zeros(k);
            e[j] = 1.0;
            out.column_mut(j).assign(&self.from_coords(e.view()));
        }
        out
    }
}

/// Prior covariance in the shared basis.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorCov {
    /// `ε⁻¹ I`.
    Iso { eps: f64 },
    /// `a F + ε⁻¹ I` with `F`'s eigenvalues given in basis coordinates;
    /// the complement of a partial basis gets `ε⁻¹`.
    FimPlusIso { a: f64, eps: f64, fim_eigvals: Array1<f64> },
}

impl PriorCov {
    pub fn eps(&self) -> f64 {
        match self {
            PriorCov::Iso { eps } | PriorCov::FimPlusIso { eps, .. } => *eps,
        }
    }

    /// Variances on the basis coordinates and on the complement.
    pub fn variances(&self, k: usize) -> (Array1<f64>, f64) {
        match self {
            PriorCov::Iso { eps } => (Array1::from_elem(k, 1.0 / eps), 1.0 / eps),
            PriorCov::FimPlusIso { a, eps, fim_eigvals } => {
                (fim_eigvals.mapv(|l| a * l.max(0.0) + 1.0 / eps), 1.0 / eps)
            }
        }
    }
}

/// Prior `N(w₀, Σ_p)` and posterior `N(w, Σ_q)`.
#[derive(Debug, Clone)]
pub struct GaussianPair {
    pub prior_mean: Array1<f64>,
    pub prior: PriorCov,
    pub post_mean: Array1<f64>,
    pub basis: Basis,
    /// Posterior variances on the basis coordinates.
    pub post_vars: Array1<f64>,
    /// Posterior variance on the complement (ignored for complete bases).
    pub post_complement: f64,
}

/// Partial derivatives of the KL divergence.
#[derive(Debug, Clone)]
pub struct KlGrad {
    pub post_mean: Array1<f64>,
    pub post_vars: Array1<f64>,
    pub post_complement: f64,
    pub prior_vars: Array1<f64>,
    pub prior_complement: f64,
}

impl GaussianPair {
    pub fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        let k = self.basis.rank();
        if self.post_mean.len() != p || self.basis.dim() != p {
            return Err(Error::input("mean and basis dimensions disagree"));
        }
        if self.post_vars.len() != k {
            return Err(Error::input("need one posterior variance per basis vector"));
        }
        if let PriorCov::FimPlusIso { fim_eigvals, a, .. } = &self.prior {
            if fim_eigvals.len() != k {
                return Err(Error::input("need one prior eigenvalue per basis vector"));
            }
            if *a < 0.0 {
                return Err(Error::input("prior scale a must be nonnegative"));
            }
        }
        let eps = self.prior.eps();
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::domain(format!("prior precision must be positive, got {eps}")));
        }
        if self.post_vars.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::domain("posterior covariance is singular"));
        }
        if !self.basis.is_complete() && !(self.post_complement > 0.0) {
            return Err(Error::domain("posterior complement variance is not positive"));
        }
        Ok(())
    }

    /// `KL(Q‖P)` and its gradient with respect to the posterior mean, the
    /// posterior variances and the prior variances.
    pub fn kl_with_grad(&self) -> Result<(f64, KlGrad)> {
        self.validate()?;
        let p = self.dim();
        let k = self.basis.rank();
        let rest = (p - k) as f64;
        let delta = &self.post_mean - &self.prior_mean;
        let c = self.basis.to_coords(delta.view());
        let (pi, pi_c) = self.prior.variances(k);
        let v = &self.post_vars;
        let v_c = self.post_complement;

        let mut sum = 0.0;
        let mut g_v = Array1::zeros(k);
        let mut g_pi = Array1::zeros(k);
        for i in 0..k {
            let (vi, pii, ci) = (v[i], pi[i], c[i]);
            sum += vi / pii + ci * ci / pii + pii.ln() - vi.ln() - 1.0;
            g_v[i] = 0.5 * (1.0 / pii - 1.0 / vi);
            g_pi[i] = 0.5 * (1.0 / pii - (vi + ci * ci) / (pii * pii));
        }
        let g_mean_coords = &c / &pi;
        let (mut g_vc, mut g_pic) = (0.0, 0.0);
        let mut g_mean = self.basis.from_coords(g_mean_coords.view());
        if k < p {
            let resid = &delta - &self.basis.from_coords(c.view());
            let r2 = resid.dot(&resid);
            sum += rest * (v_c / pi_c + pi_c.ln() - v_c.ln() - 1.0) + r2 / pi_c;
            g_vc = 0.5 * rest * (1.0 / pi_c - 1.0 / v_c);
            g_pic = 0.5 * (rest / pi_c - (rest * v_c + r2) / (pi_c * pi_c));
            g_mean = g_mean + resid / pi_c;
        }
        let kl = (0.5 * sum).max(0.0);
        Ok((
            kl,
            KlGrad {
                post_mean: g_mean,
                post_vars: g_v,
                post_complement: g_vc,
                prior_vars: g_pi,
                prior_complement: g_pic,
            },
        ))
    }

    pub fn kl(&self) -> Result<f64> {
        Ok(self.kl_with_grad()?.0)
    }

    /// Dense posterior covariance `B diag(v) Bᵀ + v_c (I - BBᵀ)`.
    pub fn posterior_cov_dense(&self) -> Result<SymMatrix> {
        cov_dense(&self.basis, &self.post_vars, self.post_complement)
    }

    pub fn prior_cov_dense(&self) -> Result<SymMatrix> {
        let (pi, pi_c) = self.prior.variances(self.basis.rank());
        cov_dense(&self.basis, &pi, pi_c)
    }

    /// Posterior sampler drawing `w + B(√v ⊙ Bᵀr) + √v_c (r - BBᵀr)`.
    pub fn posterior_sampler(&self) -> PosteriorSampler<'_> {
        PosteriorSampler {
            basis: &self.basis,
            mean: &self.post_mean,
            sd: self.post_vars.mapv(f64::sqrt),
            sd_c: self.post_complement.max(0.0).sqrt(),
        }
    }
}

fn cov_dense(basis: &Basis, vars: &Array1<f64>, comp: f64) -> Result<SymMatrix> {
    let comp = if basis.is_complete() { 0.0 } else { comp };
    let u = basis.to_matrix();
    let mut scaled = u.clone();
    for (mut col, &v) in scaled.columns_mut().into_iter().zip(vars.iter()) {
        col.mapv_inplace(|x| x * (v - comp));
    }
    let mut m = scaled.dot(&u.t());
    for i in 0..m.nrows() {
        m[[i, i]] += comp;
    }
    SymMatrix::from_upper(m)
}

/// Draws posterior weights, optionally returning the standard normal
/// coordinates used so reparameterized gradients can be formed.
pub struct PosteriorSampler<'a> {
    basis: &'a Basis,
    mean: &'a Array1<f64>,
    sd: Array1<f64>,
    sd_c: f64,
}

/// One reparameterized draw.
pub struct Draw {
    pub weights: Array1<f64>,
    /// Standard normal coordinates in the basis.
    pub z: Array1<f64>,
    /// Complement part `r - BBᵀr` of the standard normal vector.
    pub resid: Option<Array1<f64>>,
}

impl PosteriorSampler<'_> {
    pub fn draw(&self, rng: &mut Rng) -> Draw {
        let p = self.basis.dim();
        if self.basis.is_complete() {
            let z = Array1::from(rng::normal_vec(rng, p));
            let off = self.basis.from_coords((&z * &self.sd).view());
            Draw { weights: self.mean + &off, z, resid: None }
        } else {
            let r = Array1::from(rng::normal_vec(rng, p));
            let z = self.basis.to_coords(r.view());
            let resid = &r - &self.basis.from_coords(z.view());
            let off = self.basis.from_coords((&z * &self.sd).view()) + &resid * self.sd_c;
            Draw { weights: self.mean + &off, z, resid: Some(resid) }
        }
    }

    pub fn sample(&self, seed: u64) -> Array1<f64> {
        self.draw(&mut rng::rng(seed)).weights
    }
}

/// `KL(N(μ_q, Σ_q) ‖ N(μ_p, Σ_p))` by explicit eigendecomposition of
/// `Σ_p` and `Σ_q`.
pub fn gaussian_kl_dense(mu_q: ArrayView1<'_, f64>, cov_q: &SymMatrix, mu_p: ArrayView1<'_, f64>, cov_p: &SymMatrix) -> Result<f64> {
    let p = mu_q.len();
    let ep = sym_eig(cov_p)?;
    let eq = sym_eig(cov_q)?;
    if ep.eigvals.iter().chain(eq.eigvals.iter()).any(|&l| l <= 0.0) {
        return Err(Error::domain("covariance is singular"));
    }
    // Σ_p⁻¹ = U diag(1/λ) Uᵀ
    let mut inv_cols = ep.eigvecs.clone();
    for (mut col, &l) in inv_cols.columns_mut().into_iter().zip(ep.eigvals.iter()) {
        col.mapv_inplace(|x| x / l);
    }
    let prec = inv_cols.dot(&ep.eigvecs.t());
    let tr: f64 = (&prec * &cov_q.view()).sum();
    let d = &mu_q - &mu_p;
    let maha = d.dot(&prec.dot(&d));
    let logdet_p: f64 = ep.eigvals.iter().map(|l| l.ln()).sum();
    let logdet_q: f64 = eq.eigvals.iter().map(|l| l.ln()).sum();
    Ok(0.5 * (tr - p as f64 + maha + logdet_p - logdet_q))
}
