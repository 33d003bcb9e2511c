//! Discrete grids for prior scales and the union-bound penalty paid for
//! choosing a grid point after seeing the data.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridRule {
    /// `scale_j = c·exp(j/b)`.
    Exponential,
    /// `scale_j = exp(b·j)/c`.
    LogLinear,
}

impl GridRule {
    pub fn name(self) -> &'static str {
        match self {
            GridRule::Exponential => "exponential",
            GridRule::LogLinear => "log_linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "exponential" => Ok(GridRule::Exponential),
            "log_linear" => Ok(GridRule::LogLinear),
            other => Err(Error::input(format!("unknown grid rule '{other}'"))),
        }
    }
}

/// Integer-indexed grid of positive scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorGrid {
    pub b: f64,
    pub c: f64,
    pub rule: GridRule,
    /// Admit negative indices (penalty uses `2Σ|j|`) or only `j ≥ 1`.
    pub signed: bool,
}

impl PriorGrid {
    pub fn new(b: f64, c: f64, rule: GridRule, signed: bool) -> Result<Self> {
        if !(b > 0.0 && c > 0.0) {
            return Err(Error::input(format!("grid constants must be positive, got b={b}, c={c}")));
        }
        Ok(PriorGrid { b, c, rule, signed })
    }

    /// Unsigned grid for the analytic posterior: `b = 0.1, c = 0.05`.
    pub fn analytic_default() -> Self {
        PriorGrid { b: 0.1, c: 0.05, rule: GridRule::LogLinear, signed: false }
    }

    /// Signed grid for optimized posteriors: `b = 0.01, c = 0.1`.
    pub fn optimized_default() -> Self {
        PriorGrid { b: 0.01, c: 0.1, rule: GridRule::LogLinear, signed: true }
    }

    pub fn scale(&self, j: i64) -> f64 {
        let j = j as f64;
        match self.rule {
            GridRule::Exponential => self.c * (j / self.b).exp(),
            GridRule::LogLinear => (self.b * j).exp() / self.c,
        }
    }

    /// Continuous index of a scale.
    pub fn index_f(&self, scale: f64) -> f64 {
        match self.rule {
            GridRule::Exponential => self.b * (scale / self.c).ln(),
            GridRule::LogLinear => (self.c * scale).ln() / self.b,
        }
    }

    fn admissible(&self, j: i64) -> bool {
        if self.signed {
            true
        } else {
            j >= 1
        }
    }

    /// Index of a scale that lies on the grid.
    pub fn index_of(&self, scale: f64) -> Result<i64> {
        if !(scale > 0.0) {
            return Err(Error::domain(format!("scale must be positive, got {scale}")));
        }
        let jf = self.index_f(scale);
        let j = jf.round();
        if (jf - j).abs() > 1e-6 || !self.admissible(j as i64) {
            return Err(Error::domain(format!("scale {scale} is not on the grid")));
        }
        Ok(j as i64)
    }

    /// Nearest admissible index.
    pub fn nearest_index(&self, scale: f64) -> i64 {
        let j = self.index_f(scale).round() as i64;
        if self.signed {
            j
        } else {
            j.max(1)
        }
    }

    /// Indices adjacent to a continuous scale, nearest first.
    pub fn neighbours(&self, scale: f64) -> [i64; 2] {
        let jf = self.index_f(scale);
        let (lo, hi) = (jf.floor() as i64, jf.ceil() as i64);
        let pair = if jf - (lo as f64) <= (hi as f64) - jf { [lo, hi] } else { [hi, lo] };
        if self.signed {
            pair
        } else {
            [pair[0].max(1), pair[1].max(1)]
        }
    }
}

/// `ln(π² n / (6δ))`.
pub fn confidence_term(n: usize, delta: f64) -> f64 {
    (PI * PI * n as f64 / (6.0 * delta)).ln()
}

/// Union-bound penalty for `m'` scales chosen at integer indices `j_i`,
/// each scale drawn from its own grid:
/// `2m' ln(Σ j_i) + ln(π²n/(6δ))` on unsigned grids and
/// `2m' ln(2Σ|j_i|) + ln(π²n/(6δ))` when any grid is signed.
pub fn prior_penalty(grids: &[PriorGrid], indices: &[i64], n: usize, delta: f64) -> Result<f64> {
    if grids.len() != indices.len() || grids.is_empty() {
        return Err(Error::input("need one index per grid"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::input(format!("delta must lie in (0, 1), got {delta}")));
    }
    for (g, &j) in grids.iter().zip(indices) {
        if !g.admissible(j) {
            return Err(Error::domain(format!("index {j} is not on the grid")));
        }
    }
    let signed = grids.iter().any(|g| g.signed);
    let sum: i64 = indices.iter().map(|j| j.abs()).sum();
    let base = if signed { 2 * sum } else { sum };
    if base == 0 {
        return Err(Error::domain("the all-zero index is not covered by the union bound"));
    }
    let m = grids.len() as f64;
    Ok(2.0 * m * (base as f64).ln() + confidence_term(n, delta))
}

/// Penalty at a continuous index, used inside gradient-based optimization;
/// returns the value and its derivative with respect to each index.
pub fn smooth_penalty(signed: bool, indices: &[f64], n: usize, delta: f64) -> (f64, Vec<f64>) {
    let m = indices.len() as f64;
    let sum: f64 = indices.iter().map(|j| j.abs()).sum::<f64>().max(1.0);
    let base = if signed { 2.0 * sum } else { sum };
    let value = 2.0 * m * base.ln() + confidence_term(n, delta);
    let grads = indices
        .iter()
        .map(|&j| if sum <= 1.0 { 0.0 } else { 2.0 * m * j.signum() / sum })
        .collect();
    (value, grads)
}
