use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// All pairwise products `a_i * b_j`, sorted descending.
pub fn kron_spectrum(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        for &y in b {
            out.push(x * y);
        }
    }
    out.sort_by(|x, y| y.partial_cmp(x).expect("finite spectrum"));
    Array1::from(out)
}

/// Dense Kronecker product `A ⊗ B`.
pub fn kron_dense(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let s = a[[i, j]];
            if s == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = s * b[[k, l]];
                }
            }
        }
    }
    out
}
