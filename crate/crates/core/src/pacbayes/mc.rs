//! Monte-Carlo estimates of the error and loss of a posterior.

use rayon::prelude::*;

use super::gaussian::GaussianPair;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::Mlp;
use crate::rng;

/// Number of posterior draws used for final evaluations.
pub const DEFAULT_MC_SAMPLES: usize = 150;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    /// Mean 0-1 error `ê(Q)`.
    pub error: f64,
    /// Mean loss `ĕ(Q)`.
    pub loss: f64,
    /// Standard errors of the two means.
    pub error_se: f64,
    pub loss_se: f64,
    pub samples: usize,
}

/// Averages `ê` and `ĕ` over `n_samples` posterior draws; draw `i` uses the
/// stream `seed + i`, so the result does not depend on thread count.
pub fn mc_posterior_error(pair: &GaussianPair, template: &Mlp, data: &Dataset, n_samples: usize, seed: u64) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::input("need at least one posterior sample"));
    }
    if template.num_params() != pair.dim() {
        return Err(Error::input("network and posterior dimensions disagree"));
    }
    let sampler = pair.posterior_sampler();
    let per: Vec<Result<(f64, f64)>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let w = sampler.sample(rng::sub_seed(seed, i));
            let net = template.with_flat(w.as_slice().expect("contiguous"))?;
            let (l, e) = net.loss_and_error(data)?;
            Ok((e, l))
        })
        .collect();
    let per: Vec<(f64, f64)> = per.into_iter().collect::<Result<_>>()?;
    let k = per.len() as f64;
    let (se, sl): (f64, f64) = per.iter().fold((0.0, 0.0), |(a, b), (e, l)| (a + e, b + l));
    let (me, ml) = (se / k, sl / k);
    let var = |f: &dyn Fn(&(f64, f64)) -> f64, m: f64| -> f64 {
        if per.len() < 2 {
            return 0.0;
        }
        per.iter().map(|x| (f(x) - m).powi(2)).sum::<f64>() / (k - 1.0)
    };
    let ve = var(&|x| x.0, me);
    let vl = var(&|x| x.1, ml);
    Ok(McEstimate {
        error: me,
        loss: ml,
        error_se: (ve / k).sqrt(),
        loss_se: (vl / k).sqrt(),
        samples: n_samples,
    })
}
