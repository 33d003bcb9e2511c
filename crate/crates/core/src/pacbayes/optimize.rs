//! Gradient-based optimization of the PAC-Bayes surrogate
//! `ĕ(Q) + sqrt((KL(Q‖P) + φ)/(2(n-1)))` over the posterior mean, the
//! posterior variances in a fixed or recomputed eigenbasis, and the prior
//! scales.
//!
//! Positivity is kept by optimizing logarithms: posterior variances are
//! `e^{2ξ}`, the prior variance `ε⁻¹ = e^{2ρ}` and, with a Fisher prior,
//! `a = e^{2ρ₁}`.

use std::fmt::Write as _;

use ndarray::{Array1, ArrayView1};

use super::bound::{evaluate_bound, BoundReport};
use super::gaussian::{Basis, GaussianPair, PriorCov};
use super::grid::{prior_penalty, smooth_penalty, GridRule, PriorGrid};
use super::mc::{mc_posterior_error, McEstimate, DEFAULT_MC_SAMPLES};
use crate::curvature::{kfac_blocks, kfac_eig, CurvatureKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::Mlp;
use crate::rng;
use crate::train::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptMethod {
    /// Posterior eigenbasis fixed to the Fisher at initialization.
    FimInit,
    /// Posterior eigenbasis tracks the curvature at the current mean.
    HessianTracking,
    /// Fisher-shaped prior `aF + ε⁻¹I`, posterior basis of the Fisher at
    /// initialization.
    FimPrior,
    /// Diagonal posterior in the standard basis.
    Diagonal,
}

impl OptMethod {
    pub fn name(self) -> &'static str {
        match self {
            OptMethod::FimInit => "2",
            OptMethod::HessianTracking => "3",
            OptMethod::FimPrior => "4",
            OptMethod::Diagonal => "diag",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeConfig {
    pub steps: usize,
    pub lr_mean: f64,
    pub lr_cov: f64,
    pub batch_size: usize,
    pub mc_per_step: usize,
    pub grid: PriorGrid,
    pub delta: f64,
    pub final_samples: usize,
    pub seed: u64,
    /// Steps between curvature recomputations when the basis tracks the
    /// current mean; `None` picks 1 for `p ≤ 3000` and 10 above.
    pub cadence: Option<usize>,
    /// Training rows used for curvature recomputation.
    pub curvature_rows: usize,
    pub log_every: usize,
    /// Initial `ln ε⁻¹`.
    pub init_log_prior_var: f64,
    /// Initial `ln a`.
    pub init_log_a: f64,
    /// Initial posterior variances are the prior-shaped values divided by
    /// this.
    pub init_var_divisor: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            steps: 2000,
            lr_mean: 1e-4,
            lr_cov: 1e-2,
            batch_size: 500,
            mc_per_step: 1,
            grid: PriorGrid::optimized_default(),
            delta: 0.025,
            final_samples: DEFAULT_MC_SAMPLES,
            seed: 0,
            cadence: None,
            curvature_rows: 5000,
            log_every: 10,
            init_log_prior_var: -6.0,
            init_log_a: -1.0,
            init_var_divisor: 10.0,
        }
    }
}

/// Inputs of a bound optimization.
pub struct OptimizeProblem<'a> {
    /// Trained network; its weights are the initial posterior mean.
    pub trained: &'a Mlp,
    /// Prior mean (the initialization).
    pub w0: ArrayView1<'a, f64>,
    pub train: &'a Dataset,
    /// Samples used for the Fisher at initialization.
    pub fim_data: &'a Dataset,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub step: usize,
    pub surrogate: f64,
    pub e_hat: f64,
    pub kl: f64,
    pub eps: f64,
    pub a: Option<f64>,
}

pub fn trace_csv(rows: &[TraceRow], with_a: bool) -> String {
    let mut s = String::from(if with_a { "step,surrogate,e_hat,kl,eps,a\n" } else { "step,surrogate,e_hat,kl,eps\n" });
    for r in rows {
        write!(s, "{},{:?},{:?},{:?},{:?}", r.step, r.surrogate, r.e_hat, r.kl, r.eps).unwrap();
        if with_a {
            write!(s, ",{:?}", r.a.unwrap_or(f64::NAN)).unwrap();
        }
        s.push('\n');
    }
    s
}

pub struct OptimizeOutcome {
    pub report: BoundReport,
    pub trace: Vec<TraceRow>,
    pub pair: GaussianPair,
    /// Network at the final posterior mean.
    pub mean: Mlp,
}

fn dindex_dlog(grid: &PriorGrid) -> f64 {
    match grid.rule {
        GridRule::Exponential => grid.b,
        GridRule::LogLinear => 1.0 / grid.b,
    }
}

struct State {
    w: Vec<f64>,
    xi: Vec<f64>,
    rho: f64,
    rho1: f64,
}

struct Setup<'a, 'b> {
    method: OptMethod,
    problem: &'a OptimizeProblem<'b>,
    cfg: &'a OptimizeConfig,
    basis: Basis,
    fim_eigvals: Array1<f64>,
}

impl Setup<'_, '_> {
    fn prior(&self, s: &State) -> PriorCov {
        let eps = (-2.0 * s.rho).exp();
        match self.method {
            OptMethod::FimPrior => PriorCov::FimPlusIso { a: (2.0 * s.rho1).exp(), eps, fim_eigvals: self.fim_eigvals.clone() },
            _ => PriorCov::Iso { eps },
        }
    }

    fn pair(&self, s: &State) -> GaussianPair {
        GaussianPair {
            prior_mean: self.problem.w0.to_owned(),
            prior: self.prior(s),
            post_mean: Array1::from(s.w.clone()),
            basis: self.basis.clone(),
            post_vars: s.xi.iter().map(|x| (2.0 * x).exp()).collect(),
            post_complement: 0.0,
        }
    }

    fn recompute_basis(&mut self, w: &[f64]) -> Result<()> {
        let net = self.problem.trained.with_flat(w)?;
        self.basis = curvature_basis(&net, self.problem.train, self.cfg.curvature_rows)?.0;
        Ok(())
    }

    fn uses_a(&self) -> bool {
        self.method == OptMethod::FimPrior
    }
}

fn curvature_basis(net: &Mlp, data: &Dataset, rows: usize) -> Result<(Basis, Array1<f64>)> {
    let sub;
    let d = if rows > 0 && rows < data.n() {
        let idx: Vec<usize> = (0..rows).collect();
        sub = data.subset(&idx)?;
        &sub
    } else {
        data
    };
    let op = kfac_blocks(net, d, CurvatureKind::GaussNewton)?;
    let eig = kfac_eig(&op.op)?;
    let vals = eig.eigvals();
    Ok((Basis::Kron(eig), vals))
}

/// Runs the optimization and evaluates the final bound with the prior
/// scales snapped to the grid.
pub fn optimize_bound(method: OptMethod, problem: &OptimizeProblem<'_>, cfg: &OptimizeConfig) -> Result<OptimizeOutcome> {
    let template = problem.trained;
    let p = template.num_params();
    let n = problem.train.n();
    if problem.w0.len() != p {
        return Err(Error::input("initial weights have the wrong length"));
    }
    if n < 2 || cfg.batch_size == 0 || cfg.mc_per_step == 0 {
        return Err(Error::input("need n >= 2, a positive batch size and at least one draw per step"));
    }
    let w_init = template.flat().to_vec();

    let (basis, fim_eigvals, init_curv) = match method {
        OptMethod::FimInit | OptMethod::FimPrior => {
            let net0 = template.with_flat(problem.w0.as_slice().ok_or_else(|| Error::input("w0 must be contiguous"))?)?;
            let (b, v) = curvature_basis(&net0, problem.fim_data, 0)?;
            (b, v.clone(), v)
        }
        OptMethod::HessianTracking => {
            let (b, v) = curvature_basis(template, problem.train, cfg.curvature_rows)?;
            (b, Array1::zeros(p), v)
        }
        OptMethod::Diagonal => (Basis::Identity(p), Array1::zeros(p), Array1::zeros(p)),
    };
    let cadence = match method {
        OptMethod::HessianTracking => Some(cfg.cadence.unwrap_or(if p <= 3000 { 1 } else { 10 }).max(1)),
        _ => None,
    };

    let prior_var0 = cfg.init_log_prior_var.exp();
    let a0 = cfg.init_log_a.exp();
    let xi: Vec<f64> = init_curv
        .iter()
        .map(|&l| {
            let scale = if method == OptMethod::FimPrior { a0 * l } else { l };
            0.5 * ((scale + prior_var0) / cfg.init_var_divisor).ln()
        })
        .collect();
    let mut state = State { w: w_init, xi, rho: 0.5 * cfg.init_log_prior_var, rho1: 0.5 * cfg.init_log_a };
    let mut setup = Setup { method, problem, cfg, basis, fim_eigvals };

    let initial = snap_and_evaluate(&setup, &state, rng::sub_seed(cfg.seed, 1 << 40))?;

    let mut opt_w = Adam::new(p);
    let mut opt_xi = Adam::new(p);
    let mut opt_rho = Adam::new(2);
    let mut r = rng::rng(cfg.seed);
    let mut trace = Vec::new();
    let n1 = (n - 1) as f64;
    let grid = cfg.grid;
    let dj = dindex_dlog(&grid);

    for step in 0..cfg.steps {
        if let Some(c) = cadence {
            if step > 0 && step % c == 0 {
                setup.recompute_basis(&state.w)?;
            }
        }
        let batch: Vec<usize> = (0..cfg.batch_size.min(n)).map(|_| rand::Rng::random_range(&mut r, 0..n)).collect();
        let x = problem.train.inputs().select(ndarray::Axis(0), &batch);
        let y: Vec<usize> = batch.iter().map(|&i| problem.train.labels()[i]).collect();

        let pair = setup.pair(&state);
        let sampler = pair.posterior_sampler();
        let mut loss = 0.0;
        let mut g_w = Array1::<f64>::zeros(p);
        let mut g_xi = Array1::<f64>::zeros(p);
        let sd = pair.post_vars.mapv(f64::sqrt);
        for _ in 0..cfg.mc_per_step {
            let draw = sampler.draw(&mut r);
            let net = template.with_flat(draw.weights.as_slice().unwrap())?;
            let (l, g) = net.grad(x.view(), &y).map_err(|e| diverged(step, e))?;
            loss += l;
            let gc = setup.basis.to_coords(g.view());
            g_xi += &(&gc * &sd * &draw.z);
            g_w += &g;
        }
        let k = cfg.mc_per_step as f64;
        loss /= k;
        g_w /= k;
        g_xi /= k;

        let (kl, klg) = pair.kl_with_grad()?;
        let eps = pair.prior.eps();
        let mut idx = vec![grid.index_f(eps)];
        if setup.uses_a() {
            idx.push(grid.index_f((2.0 * state.rho1).exp()));
        }
        let (phi, dphi) = smooth_penalty(grid.signed, &idx, n, cfg.delta);
        let budget = (kl + phi).max(1e-300);
        let surrogate = loss + (budget / (2.0 * n1)).sqrt();
        if !surrogate.is_finite() {
            return Err(Error::numeric(format!("surrogate became non-finite at step {step}")));
        }
        let q = 1.0 / (2.0 * (2.0 * n1 * budget).sqrt());

        let gw = &g_w + &(&klg.post_mean * q);
        let gxi = &g_xi + &(&klg.post_vars * &pair.post_vars * (2.0 * q));
        let e2rho = (2.0 * state.rho).exp();
        let sum_pi: f64 = klg.prior_vars.sum();
        let grho = q * ((sum_pi + klg.prior_complement) * 2.0 * e2rho + dphi[0] * (-2.0 * dj));
        let grho1 = if setup.uses_a() {
            let a = (2.0 * state.rho1).exp();
            let s: f64 = klg.prior_vars.iter().zip(setup.fim_eigvals.iter()).map(|(g, l)| g * 2.0 * a * l.max(0.0)).sum();
            q * (s + dphi[1] * 2.0 * dj)
        } else {
            0.0
        };

        if step % cfg.log_every.max(1) == 0 {
            trace.push(TraceRow {
                step,
                surrogate,
                e_hat: loss,
                kl,
                eps,
                a: setup.uses_a().then(|| (2.0 * state.rho1).exp()),
            });
        }

        opt_w.step(&mut state.w, gw.view(), cfg.lr_mean);
        opt_xi.step(&mut state.xi, gxi.view(), cfg.lr_cov);
        let mut rr = [state.rho, state.rho1];
        opt_rho.step(&mut rr, Array1::from(vec![grho, grho1]).view(), cfg.lr_cov);
        state.rho = rr[0];
        if setup.uses_a() {
            state.rho1 = rr[1];
        }
        if state.w.iter().chain(&state.xi).any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("parameters became non-finite at step {step}")));
        }
    }

    let fin = snap_and_evaluate(&setup, &state, rng::sub_seed(cfg.seed, 1 << 41))?;
    let mean = template.with_flat(&state.w)?;
    let pair = fin.pair;
    let mut notes = vec!["surrogate optimized with the loss of Q; final bound uses the 0-1 error of Q".to_string()];
    if let Some(c) = cadence {
        notes.push(format!("curvature basis recomputed every {c} steps"));
    }
    let report = BoundReport {
        method: method.name().to_string(),
        e_hat: fin.est.error,
        e_hat_se: fin.est.error_se,
        loss: fin.est.loss,
        kl: fin.kl,
        phi: fin.phi,
        delta: cfg.delta,
        n,
        bound: fin.bound,
        eps: fin.eps,
        eps_index: fin.j_eps,
        a: fin.a,
        a_index: fin.j_a,
        pre_rounding_bound: Some(fin.pre_rounding),
        initial_bound: Some(initial.bound),
        mc_samples: cfg.final_samples,
        steps: Some(cfg.steps),
        hessian_cadence: cadence,
        notes,
    };
    Ok(OptimizeOutcome { report, trace, pair, mean })
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::Numeric(m) => Error::numeric(format!("optimization diverged at step {step}: {m}")),
        other => other,
    }
}

struct Snapped {
    pair: GaussianPair,
    est: McEstimate,
    kl: f64,
    phi: f64,
    bound: f64,
    eps: f64,
    j_eps: i64,
    a: Option<f64>,
    j_a: Option<i64>,
    pre_rounding: f64,
}

/// Estimates `ê(Q)` once, then picks the adjacent grid point(s) for the
/// prior scales with the smallest bound.
fn snap_and_evaluate(setup: &Setup<'_, '_>, state: &State, seed: u64) -> Result<Snapped> {
    let cfg = setup.cfg;
    let n = setup.problem.train.n();
    let grid = cfg.grid;
    let pair = setup.pair(state);
    let est = mc_posterior_error(&pair, setup.problem.trained, setup.problem.train, cfg.final_samples, seed)?;

    let eps_c = pair.prior.eps();
    let a_c = (2.0 * state.rho1).exp();
    let mut idx = vec![grid.index_f(eps_c)];
    if setup.uses_a() {
        idx.push(grid.index_f(a_c));
    }
    let (phi_c, _) = smooth_penalty(grid.signed, &idx, n, cfg.delta);
    let pre_rounding = evaluate_bound(est.error, pair.kl()?, phi_c, n, cfg.delta)?;

    let eps_opts = grid.neighbours(eps_c);
    let a_opts: Vec<Option<i64>> = if setup.uses_a() {
        grid.neighbours(a_c).iter().map(|&j| Some(j)).collect()
    } else {
        vec![None]
    };
    let mut best: Option<Snapped> = None;
    for &je in &eps_opts {
        for &ja in &a_opts {
            let eps = grid.scale(je);
            let mut cand = pair.clone();
            cand.prior = match (&pair.prior, ja) {
                (PriorCov::FimPlusIso { fim_eigvals, .. }, Some(ja)) => {
                    PriorCov::FimPlusIso { a: grid.scale(ja), eps, fim_eigvals: fim_eigvals.clone() }
                }
                _ => PriorCov::Iso { eps },
            };
            let mut grids = vec![grid];
            let mut js = vec![je];
            if let Some(ja) = ja {
                grids.push(grid);
                js.push(ja);
            }
            let phi = match prior_penalty(&grids, &js, n, cfg.delta) {
                Ok(v) => v,
                Err(Error::Domain(_)) => continue,
                Err(e) => return Err(e),
            };
            let kl = cand.kl()?;
            let bound = evaluate_bound(est.error, kl, phi, n, cfg.delta)?;
            if best.as_ref().map_or(true, |b| bound < b.bound) {
                best = Some(Snapped {
                    pair: cand,
                    est,
                    kl,
                    phi,
                    bound,
                    eps,
                    j_eps: je,
                    a: ja.map(|j| grid.scale(j)),
                    j_a: ja,
                    pre_rounding,
                });
            }
        }
    }
    best.ok_or_else(|| Error::domain("no admissible grid point next to the optimized scales"))
}
