//! Sloppiness statistics of curvature spectra and eigen-subspace geometry.

use std::fmt::{self, Write as _};

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::orthonormality_defect;

/// Eigenvalue threshold `ε / (2(n-1))` separating stiff from sloppy
/// directions.
pub fn stiffness_threshold(n: usize, eps: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::input(format!("need n >= 2, got {n}")));
    }
    if !(eps > 0.0) {
        return Err(Error::input(format!("need eps > 0, got {eps}")));
    }
    Ok(eps / (2.0 * (n - 1) as f64))
}

/// Number of eigenvalues with `|λ| ≥ ε / (2(n-1))`.
pub fn effective_dim(eigvals: &[f64], n: usize, eps: f64) -> Result<usize> {
    let tau = stiffness_threshold(n, eps)?;
    Ok(eigvals.iter().filter(|l| l.abs() >= tau).count())
}

fn require_nonnegative(eigvals: &[f64]) -> Result<()> {
    if let Some(l) = eigvals.iter().find(|&&l| l < 0.0) {
        return Err(Error::domain(format!("spectrum has negative eigenvalue {l}")));
    }
    Ok(())
}

/// `Σ_{stiff i} 1 + ln(2(n-1)λ_i/ε + 1)`.
pub fn strength(eigvals: &[f64], n: usize, eps: f64) -> Result<f64> {
    let tau = stiffness_threshold(n, eps)?;
    require_nonnegative(eigvals)?;
    let scale = 2.0 * (n - 1) as f64 / eps;
    Ok(eigvals
        .iter()
        .filter(|&&l| l >= tau)
        .map(|&l| 1.0 + (scale * l + 1.0).ln())
        .sum())
}

/// Sloppy factor at a 1-based index, or `Infinite` when nothing beyond `r`
/// constrains the decay rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SloppyFactor {
    Finite(f64),
    Infinite,
}

impl SloppyFactor {
    pub fn value(self) -> f64 {
        match self {
            SloppyFactor::Finite(c) => c,
            SloppyFactor::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for SloppyFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SloppyFactor::Finite(c) => write!(f, "{c:?}"),
            SloppyFactor::Infinite => f.write_str("inf"),
        }
    }
}

/// Largest `c ≥ 0` with `λ_i ≤ λ_r e^{-c(i-r)}` for all `i ≥ r`, computed
/// as the minimum of `ln(λ_r/λ_i)/(i-r)` over positive tail entries.
pub fn sloppy_factor(eigvals: &[f64], r: usize) -> Result<SloppyFactor> {
    let p = eigvals.len();
    if r == 0 || r > p {
        return Err(Error::input(format!("index r = {r} outside 1..={p}")));
    }
    require_nonnegative(eigvals)?;
    let lr = eigvals[r - 1];
    if lr == 0.0 {
        return Ok(SloppyFactor::Infinite);
    }
    let mut best = f64::INFINITY;
    for (off, &li) in eigvals[r..].iter().enumerate() {
        if li > 0.0 {
            let c = (lr / li).ln() / (off + 1) as f64;
            best = best.min(c);
        }
    }
    if best.is_infinite() {
        Ok(SloppyFactor::Infinite)
    } else {
        Ok(SloppyFactor::Finite(best.max(0.0)))
    }
}

/// `(s + 2/c + ε‖w - w₀‖²) / (4(n-1))`.
pub fn loose_bound_estimate(s: f64, c: f64, eps: f64, dist_sq: f64, n: usize) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::domain(format!("sloppy factor must be positive, got {c}")));
    }
    if n < 2 {
        return Err(Error::input(format!("need n >= 2, got {n}")));
    }
    Ok((s + 2.0 / c + eps * dist_sq) / (4.0 * (n - 1) as f64))
}

fn check_orthonormal(u: ArrayView2<'_, f64>, name: &str) -> Result<()> {
    let d = orthonormality_defect(u);
    if d > 1e-8 {
        return Err(Error::input(format!("{name} is not orthonormal (defect {d:.3e})")));
    }
    Ok(())
}

/// `‖U₁ᵀU₂‖²_F / k`.
pub fn subspace_overlap(u1: ArrayView2<'_, f64>, u2: ArrayView2<'_, f64>) -> Result<f64> {
    if u1.dim() != u2.dim() || u1.ncols() == 0 {
        return Err(Error::input("bases must have the same non-empty shape"));
    }
    check_orthonormal(u1, "first basis")?;
    check_orthonormal(u2, "second basis")?;
    let g = u1.t().dot(&u2);
    Ok(g.iter().map(|v| v * v).sum::<f64>() / u1.ncols() as f64)
}

/// `‖U_kᵀΔw‖² / ‖Δw‖²`.
pub fn projection_ratio(delta: ArrayView1<'_, f64>, u: ArrayView2<'_, f64>) -> Result<f64> {
    let nn = delta.dot(&delta);
    if nn == 0.0 {
        return Err(Error::input("weight change is zero"));
    }
    if u.nrows() != delta.len() {
        return Err(Error::input("basis and weight change have different lengths"));
    }
    let c = u.t().dot(&delta);
    Ok(c.dot(&c) / nn)
}

/// Descending spectrum with its sloppiness statistics at a prior scale.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub eigvals: Array1<f64>,
    pub n: usize,
    pub eps: f64,
    pub p_eff: usize,
    pub strength: f64,
    pub sloppy: SloppyFactor,
}

impl SpectrumReport {
    /// Negative eigenvalues are accepted for the count only; strength and
    /// sloppy factor are then reported on the clipped spectrum.
    pub fn new(eigvals: Array1<f64>, n: usize, eps: f64) -> Result<Self> {
        let v = eigvals.to_vec();
        let p_eff = effective_dim(&v, n, eps)?;
        let clipped: Vec<f64> = v.iter().map(|l| l.max(0.0)).collect();
        let strength = strength(&clipped, n, eps)?;
        let sloppy = if p_eff == 0 {
            SloppyFactor::Infinite
        } else {
            sloppy_factor(&clipped, p_eff)?
        };
        Ok(SpectrumReport { eigvals, n, eps, p_eff, strength, sloppy })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,eigenvalue\n");
        for (i, v) in self.eigvals.iter().enumerate() {
            writeln!(s, "{},{v:?}", i + 1).unwrap();
        }
        writeln!(
            s,
            "# n={}, eps={:?}, p_eff={}, strength={:?}, sloppy={}",
            self.n, self.eps, self.p_eff, self.strength, self.sloppy
        )
        .unwrap();
        s
    }
}
