//! Binary relative entropy and its upper inverse.

fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// `kl(q‖p) = q ln(q/p) + (1-q) ln((1-q)/(1-p))`, with `0 ln 0 = 0` and
/// `+∞` when `p ∈ {0, 1}` cannot explain `q`.
pub fn bernoulli_kl(q: f64, p: f64) -> f64 {
    if (p == 0.0 && q > 0.0) || (p == 1.0 && q < 1.0) {
        return f64::INFINITY;
    }
    (xlogy_ratio(q, p) + xlogy_ratio(1.0 - q, 1.0 - p)).max(0.0)
}

/// `sup{p ∈ [q, 1] : kl(q‖p) ≤ budget}` by bisection until the bracket
/// stops shrinking in floating point.
pub fn kl_inv(q: f64, budget: f64) -> f64 {
    let q = q.clamp(0.0, 1.0);
    if !(budget > 0.0) {
        return q;
    }
    if bernoulli_kl(q, 1.0) <= budget {
        return 1.0;
    }
    let (mut lo, mut hi) = (q, 1.0);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if bernoulli_kl(q, mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `q + sqrt(budget/2)`, the Pinsker relaxation of `kl_inv`.
pub fn pinsker_bound(q: f64, budget: f64) -> f64 {
    q + (budget / 2.0).sqrt()
}
