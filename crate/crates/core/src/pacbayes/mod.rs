//! PAC-Bayes machinery: binary kl and its inverse, Gaussian KL with
//! structured covariances, Monte-Carlo posterior evaluation, prior-scale
//! penalties, the closed-form curvature posterior and gradient-based bound
//! optimization.

mod bound;
mod gaussian;
mod grid;
mod kl;
mod mc;
mod method1;
mod optimize;
mod quadratic;

pub use bound::{evaluate_bound, BoundReport};
pub use gaussian::{gaussian_kl_dense, Basis, Draw, GaussianPair, KlGrad, PosteriorSampler, PriorCov};
pub use grid::{confidence_term, prior_penalty, smooth_penalty, GridRule, PriorGrid};
pub use kl::{bernoulli_kl, kl_inv, pinsker_bound};
pub use mc::{mc_posterior_error, McEstimate, DEFAULT_MC_SAMPLES};
pub use method1::{analytic_posterior, grid_rows_csv, grid_search_bound, CurvatureBasis, GridRow, GridSearchConfig, PosteriorRule};
pub use optimize::{optimize_bound, trace_csv, OptMethod, OptimizeConfig, OptimizeOutcome, OptimizeProblem, TraceRow};
pub use quadratic::{fit_inverse_variance, optimize_quadratic_posterior, InverseVarianceFit, QuadObjective};
