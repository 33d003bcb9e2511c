use ndarray::{Array1, Array2};

use super::{axpy, dot, norm, sym_eig, EigDecomp, SymMatrix};
use crate::error::{Error, Result};
use crate::rng;

const MAX_RESTARTS: u64 = 3;

/// Leading `k` eigenpairs of a symmetric operator of dimension `p`, given
/// only through the product `apply(x, y)` which writes `A x` into `y`.
///
/// Runs `m` Lanczos steps with full reorthogonalization (two passes of
/// classical Gram-Schmidt against the whole basis). On an invariant
/// subspace with fewer than `k` vectors the iteration continues from a fresh
/// random vector; after three such restarts it gives up.
pub fn lanczos_topk<F>(p: usize, k: usize, m: usize, seed: u64, mut apply: F) -> Result<EigDecomp>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if k == 0 || k > p {
        return Err(Error::input(format!("need 1 <= k <= p, got k={k}, p={p}")));
    }
    let m = m.clamp(k, p);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alpha: Vec<f64> = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);
    let mut q = start_vector(p, seed, &basis)?;
    let mut w = vec![0.0; p];
    let mut anorm = 0.0_f64;
    let mut restarts = 0;

    for j in 0..m {
        apply(&q, &mut w);
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("operator produced a non-finite vector"));
        }
        let a = dot(&w, &q);
        axpy(-a, &q, &mut w);
        if let (Some(prev), Some(&b)) = (basis.last(), beta.last()) {
            axpy(-b, prev, &mut w);
        }
        basis.push(q);
        alpha.push(a);
        reorthogonalize(&mut w, &basis);

        let b = norm(&w);
        anorm = anorm.max(a.abs() + b);
        if j + 1 == m {
            break;
        }
        if b <= 1e-10 * anorm.max(f64::MIN_POSITIVE) {
            if basis.len() >= k {
                break;
            }
            restarts += 1;
            if restarts > MAX_RESTARTS {
                return Err(Error::numeric(format!(
                    "Lanczos broke down {restarts} times before reaching {k} vectors"
                )));
            }
            beta.push(0.0);
            q = start_vector(p, rng::sub_seed(seed, restarts), &basis)?;
        } else {
            beta.push(b);
            q = w.iter().map(|x| x / b).collect();
        }
    }

    let s = basis.len();
    let mut t = Array2::zeros((s, s));
    for i in 0..s {
        t[[i, i]] = alpha[i];
        if i + 1 < s {
            t[[i, i + 1]] = beta[i];
        }
    }
    let small = sym_eig(&SymMatrix::from_upper(t)?)?.top(k);

    let mut vecs = Array2::zeros((p, small.len()));
    for (i, qi) in basis.iter().enumerate() {
        for c in 0..small.len() {
            let coef = small.eigvecs[[i, c]];
            let mut col = vecs.column_mut(c);
            for (r, &x) in qi.iter().enumerate() {
                col[r] += coef * x;
            }
        }
    }
    for mut col in vecs.columns_mut() {
        let big = col.iter().fold(0.0_f64, |acc, x: &f64| acc.max(x.abs()));
        let lead = col.iter().find(|x: &&f64| x.abs() > 1e-8 * big).copied().unwrap_or(0.0);
        let nrm = col.dot(&col).sqrt();
        let s = if lead < 0.0 { -1.0 / nrm } else { 1.0 / nrm };
        col.mapv_inplace(|x| x * s);
    }
    Ok(EigDecomp {
        eigvals: Array1::from(small.eigvals.to_vec()),
        eigvecs: vecs,
    })
}

fn reorthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for qi in basis {
            let c = dot(w, qi);
            axpy(-c, qi, w);
        }
    }
}

fn start_vector(p: usize, seed: u64, basis: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut r = rng::rng(seed);
    let mut v = rng::normal_vec(&mut r, p);
    reorthogonalize(&mut v, basis);
    let n = norm(&v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::numeric("could not draw a Lanczos start vector"));
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}
