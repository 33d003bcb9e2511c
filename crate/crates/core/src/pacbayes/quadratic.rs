//! Posterior variances under a quadratic model of the loss, found by
//! L-BFGS, and the inverse-variance regression used to compare optimized
//! posteriors with the closed form.

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::condition::ArmijoCondition;
use argmin::solver::linesearch::BacktrackingLineSearch;
use argmin::solver::quasinewton::LBFGS;
use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// Objective over log standard deviations `ξ` (`v = e^{2ξ}`) for a loss
/// modelled as `ĕ(w) + ½ Σ λ_i v_i` and an isotropic prior of precision
/// `ε` sharing the curvature eigenbasis.
#[derive(Debug, Clone, Copy)]
pub enum QuadObjective {
    /// `½Σλ_i v_i + KL/(2(n-1))`, whose minimizer is
    /// `1/v_i = 2(n-1)λ_i + ε`.
    Loose,
    /// `ĕ(w) + ½Σλ_i v_i + sqrt((KL + φ)/(2(n-1)))`, with `kl_const` the
    /// part of the KL that does not depend on the variances.
    Sqrt { base_loss: f64, kl_const: f64, phi: f64 },
}

struct Problem<'a> {
    lambda: ArrayView1<'a, f64>,
    n1: f64,
    eps: f64,
    objective: QuadObjective,
}

impl Problem<'_> {
    /// Variance-dependent part of the KL.
    fn kl_var(&self, xi: &[f64]) -> f64 {
        xi.iter()
            .map(|&x| 0.5 * (self.eps * variance(x).0 - 1.0 - self.eps.ln() - 2.0 * x))
            .sum()
    }

    fn value(&self, xi: &[f64]) -> f64 {
        let curv: f64 = xi.iter().zip(self.lambda).map(|(&x, &l)| 0.5 * l * variance(x).0).sum();
        match self.objective {
            // Scaled by 2(n-1), which leaves the minimizer unchanged.
            QuadObjective::Loose => 2.0 * self.n1 * curv + self.kl_var(xi),
            QuadObjective::Sqrt { base_loss, kl_const, phi } => {
                let kl = kl_const + self.kl_var(xi);
                base_loss + curv + ((kl + phi).max(0.0) / (2.0 * self.n1)).sqrt()
            }
        }
    }

    fn grad(&self, xi: &[f64]) -> Vec<f64> {
        let scale = match self.objective {
            QuadObjective::Loose => None,
            QuadObjective::Sqrt { kl_const, phi, .. } => {
                let kl = kl_const + self.kl_var(xi);
                Some(1.0 / (2.0 * (2.0 * self.n1 * (kl + phi).max(1e-300)).sqrt()))
            }
        };
        xi.iter()
            .zip(self.lambda)
            .map(|(&x, &l)| {
                let dv = variance(x).1;
                let dkl = 0.5 * self.eps * dv - 1.0;
                match scale {
                    None => self.n1 * l * dv + dkl,
                    Some(s) => 0.5 * l * dv + s * dkl,
                }
            })
            .collect()
    }
}

/// Above this log standard deviation the variance continues as a
/// quadratic, so trial points of the line search stay finite.
const XI_LIMIT: f64 = 40.0;

/// `v(ξ) = e^{2ξ}` with a C² quadratic continuation past `XI_LIMIT`, and
/// its derivative.
fn variance(x: f64) -> (f64, f64) {
    if x <= XI_LIMIT {
        let v = (2.0 * x).exp();
        (v, 2.0 * v)
    } else {
        let e = (2.0 * XI_LIMIT).exp();
        let t = x - XI_LIMIT;
        (e * (1.0 + 2.0 * t + 2.0 * t * t), e * (2.0 + 4.0 * t))
    }
}

impl CostFunction for Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.value(p))
    }
}

impl Gradient for Problem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.grad(p))
    }
}

/// Minimizes the objective over the variances, starting from the prior
/// variance `1/ε` in every direction. Returns the variances.
pub fn optimize_quadratic_posterior(lambda: ArrayView1<'_, f64>, n: usize, eps: f64, objective: QuadObjective) -> Result<Array1<f64>> {
    if n < 2 || !(eps > 0.0) {
        return Err(Error::input("need n >= 2 and eps > 0"));
    }
    if lambda.iter().any(|&l| l < 0.0 || !l.is_finite()) {
        return Err(Error::domain("curvature eigenvalues must be finite and nonnegative"));
    }
    let problem = Problem { lambda, n1: (n - 1) as f64, eps, objective };
    let init = vec![-0.5 * eps.ln(); lambda.len()];
    let ls = BacktrackingLineSearch::new(ArmijoCondition::new(1e-4).map_err(|e| Error::numeric(e.to_string()))?);
    let solver = LBFGS::new(ls, 10)
        .with_tolerance_grad(1e-13)
        .and_then(|s| s.with_tolerance_cost(f64::EPSILON))
        .map_err(|e| Error::numeric(e.to_string()))?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.param(init).max_iters(2000))
        .run()
        .map_err(|e| Error::numeric(format!("L-BFGS failed: {e}")))?;
    let best = res
        .state()
        .get_best_param()
        .cloned()
        .ok_or_else(|| Error::numeric("L-BFGS returned no iterate"))?;
    Ok(best.into_iter().map(|x| variance(x).0).collect())
}

/// Least-squares fit of `1/v_i = slope·λ_i + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseVarianceFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl InverseVarianceFit {
    /// Sample count implied by `slope = 2(n' - 1)`.
    pub fn n_eff(&self) -> f64 {
        self.slope / 2.0 + 1.0
    }

    /// Prior precision implied by the intercept.
    pub fn eps_eff(&self) -> f64 {
        self.intercept
    }
}

pub fn fit_inverse_variance(lambda: ArrayView1<'_, f64>, vars: ArrayView1<'_, f64>) -> Result<InverseVarianceFit> {
    if lambda.len() != vars.len() || lambda.len() < 2 {
        return Err(Error::input("need at least two matching points"));
    }
    let y: Vec<f64> = vars.iter().map(|v| 1.0 / v).collect();
    let k = y.len() as f64;
    let mx = lambda.sum() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = lambda.iter().zip(&y).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lambda.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("curvature eigenvalues are all equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lambda.iter().zip(&y).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(InverseVarianceFit { slope, intercept, r2 })
}
