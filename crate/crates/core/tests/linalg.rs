use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use sloppy_core::linalg::*;
use sloppy_core::rng;

fn random_sym(n: usize, seed: u64) -> SymMatrix {
    let mut r = rng::rng(seed);
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            a[[i, j]] = rng::normal(&mut r);
        }
    }
    SymMatrix::from_upper(a).unwrap()
}

fn random_psd(n: usize, spectrum: &[f64], seed: u64) -> SymMatrix {
    let q = random_orthonormal(n, n, seed).unwrap();
    let d = Array2::from_diag(&Array1::from(spectrum.to_vec()));
    SymMatrix::from_upper(q.dot(&d).dot(&q.t())).unwrap()
}

fn max_abs_diff(a: &Array2<f64>, b: ndarray::ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn identity_eigvals() {
    let e = sym_eig(&SymMatrix::identity(3)).unwrap();
    assert_eq!(e.eigvals.to_vec(), vec![1.0, 1.0, 1.0]);
}

#[test]
fn diagonal_eig_is_signed_permutation() {
    let e = sym_eig(&SymMatrix::from_diag(&[3.0, 1.0, 2.0]).unwrap()).unwrap();
    assert_eq!(e.eigvals.to_vec(), vec![3.0, 2.0, 1.0]);
    let expect = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
    assert!(max_abs_diff(&e.eigvecs.mapv(f64::abs), expect.view()) < 1e-14);
}

#[test]
fn random_8x8_reconstruction() {
    let a = random_sym(8, 11);
    let e = sym_eig(&a).unwrap();
    assert!(max_abs_diff(&e.reconstruct(), a.view()) <= 1e-10);
    assert!((e.eigvals.sum() - a.trace()).abs() <= 1e-8 * a.trace().abs().max(1.0));
}

#[test]
fn rejects_non_finite() {
    let mut a = Array2::zeros((2, 2));
    a[[0, 1]] = f64::NAN;
    assert!(SymMatrix::from_upper(a).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eig_invariants(n in 1usize..14, seed in 0u64..10_000) {
        let a = random_sym(n, seed);
        let e = sym_eig(&a).unwrap();
        for w in e.eigvals.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!(orthonormality_defect(e.eigvecs.view()) <= 1e-8);
        prop_assert!(max_abs_diff(&e.reconstruct(), a.view()) <= 1e-8 * a.max_abs().max(1.0));
        prop_assert!((e.eigvals.sum() - a.trace()).abs() <= 1e-8 * a.max_abs().max(1.0) * n as f64);
        let v = sym_eigvals(&a).unwrap();
        for (x, y) in v.iter().zip(e.eigvals.iter()) {
            prop_assert!((x - y).abs() <= 1e-10 * a.max_abs().max(1.0));
        }
    }

    #[test]
    fn kron_spectrum_matches_dense(a in prop::collection::vec(0.0f64..5.0, 1..5), b in prop::collection::vec(0.0f64..5.0, 1..6)) {
        let mut a = a;
        let mut b = b;
        a.sort_by(|x, y| y.partial_cmp(x).unwrap());
        b.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let da = Array2::from_diag(&Array1::from(a.clone()));
        let db = Array2::from_diag(&Array1::from(b.clone()));
        let dense = sym_eigvals(&SymMatrix::from_upper(kron_dense(da.view(), db.view())).unwrap()).unwrap();
        let ks = kron_spectrum(Array1::from(a).view(), Array1::from(b).view());
        prop_assert_eq!(ks.len(), dense.len());
        for (x, y) in ks.iter().zip(dense.iter()) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }
}

#[test]
fn kron_spectrum_small_cases() {
    assert_eq!(kron_spectrum(array![2.0].view(), array![3.0].view()).to_vec(), vec![6.0]);
    assert_eq!(kron_spectrum(array![2.0, 1.0].view(), array![3.0, 1.0].view()).to_vec(), vec![6.0, 3.0, 2.0, 1.0]);
}

#[test]
fn kron_spectrum_of_rotated_factors() {
    let a = random_psd(4, &[3.0, 2.0, 0.5, 0.1], 1);
    let b = random_psd(5, &[4.0, 1.0, 1.0, 0.3, 0.0], 2);
    let dense = sym_eigvals(&SymMatrix::from_upper(kron_dense(a.view(), b.view())).unwrap()).unwrap();
    let ks = kron_spectrum(sym_eigvals(&a).unwrap().view(), sym_eigvals(&b).unwrap().view());
    for (x, y) in ks.iter().zip(dense.iter()) {
        assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
    }
}

fn dense_apply(a: &SymMatrix) -> impl FnMut(&[f64], &mut [f64]) + '_ {
    move |x, y| {
        let r = a.matvec(ndarray::ArrayView1::from(x));
        y.copy_from_slice(r.as_slice().unwrap());
    }
}

#[test]
fn lanczos_diagonal() {
    let a = SymMatrix::from_diag(&[10.0, 1.0, 0.1]).unwrap();
    let e = lanczos_topk(3, 1, 3, 0, dense_apply(&a)).unwrap();
    assert!((e.eigvals[0] - 10.0).abs() < 1e-10);
}

#[test]
fn lanczos_full_spectrum_20() {
    let spec: Vec<f64> = (0..20).map(|i| 1.0 + (i as f64).powi(2) * 0.1).collect();
    let a = random_psd(20, &spec, 3);
    let dense = sym_eigvals(&a).unwrap();
    let e = lanczos_topk(20, 20, 20, 1, dense_apply(&a)).unwrap();
    for (x, y) in e.eigvals.iter().zip(dense.iter()) {
        assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-12), "{x} vs {y}");
    }
}

#[test]
fn lanczos_geometric_top5() {
    let spec: Vec<f64> = (0..50).map(|i| (-0.3 * i as f64).exp()).collect();
    let a = random_psd(50, &spec, 4);
    let dense = sym_eigvals(&a).unwrap();
    let e = lanczos_topk(50, 5, 50, 2, dense_apply(&a)).unwrap();
    for (x, y) in e.eigvals.iter().zip(dense.iter()) {
        assert!((x - y).abs() <= 1e-6 * y.abs(), "{x} vs {y}");
    }
}

#[test]
fn lanczos_agrees_with_dense_up_to_200() {
    for (n, seed) in [(30usize, 5u64), (120, 6), (200, 7)] {
        let spec: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let a = random_psd(n, &spec, seed);
        let dense = sym_eigvals(&a).unwrap();
        let e = lanczos_topk(n, 8, n, seed, dense_apply(&a)).unwrap();
        for (x, y) in e.eigvals.iter().zip(dense.iter()) {
            assert!((x - y).abs() <= 1e-6 * y.abs(), "n={n}: {x} vs {y}");
        }
        assert!(orthonormality_defect(e.eigvecs.view()) < 1e-8);
    }
}

fn empirical_cov(samples: &[Array1<f64>]) -> Array2<f64> {
    let p = samples[0].len();
    let n = samples.len() as f64;
    let mut m = Array1::<f64>::zeros(p);
    for s in samples {
        m += s;
    }
    m /= n;
    let mut c = Array2::<f64>::zeros((p, p));
    for s in samples {
        let d = s - &m;
        for i in 0..p {
            for j in 0..p {
                c[[i, j]] += d[i] * d[j];
            }
        }
    }
    c / n
}

fn draw_many(cov: &SymOperator, n: usize, seed: u64) -> Vec<Array1<f64>> {
    let s = GaussianSampler::new(cov).unwrap();
    let mut r = rng::rng(seed);
    let mean = Array1::zeros(cov.dim());
    (0..n).map(|_| s.sample(mean.view(), &mut r).unwrap()).collect()
}

fn assert_cov_close(emp: &Array2<f64>, want: &Array2<f64>, rel: f64) {
    let scale = want.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for (e, w) in emp.iter().zip(want.iter()) {
        assert!((e - w).abs() <= rel * scale, "empirical {e} vs {w}");
    }
}

#[test]
fn zero_covariance_returns_mean() {
    let mean = array![1.0, -2.0, 3.5];
    let cov = SymOperator::Dense(SymMatrix::zeros(3));
    assert_eq!(sample_gaussian(mean.view(), &cov, 9).unwrap(), mean);
}

#[test]
fn sampling_is_deterministic() {
    let mean = array![0.0, 0.0];
    let cov = SymOperator::Dense(SymMatrix::from_diag(&[1.0, 4.0]).unwrap());
    assert_eq!(sample_gaussian(mean.view(), &cov, 3).unwrap(), sample_gaussian(mean.view(), &cov, 3).unwrap());
}

#[test]
fn diagonal_covariance_monte_carlo() {
    let cov = SymOperator::Dense(SymMatrix::from_diag(&[1.0, 4.0]).unwrap());
    let c = empirical_cov(&draw_many(&cov, 100_000, 1));
    assert!((c[[0, 0]] - 1.0).abs() < 0.05);
    assert!((c[[1, 1]] - 4.0).abs() < 0.2);
}

#[test]
fn kfac_covariance_monte_carlo() {
    let act = SymMatrix::from_upper(array![[2.0, 0.5], [0.0, 1.0]]).unwrap();
    let pre = SymMatrix::from_upper(array![[1.0, -0.3], [0.0, 0.5]]).unwrap();
    let block = KronBlock { act, pre };
    let want = block.to_dense();
    let cov = SymOperator::Kfac(vec![block]);
    assert!(max_abs_diff(&cov.to_dense().unwrap().into_inner(), want.view()) < 1e-15);
    let c = empirical_cov(&draw_many(&cov, 100_000, 2));
    assert_cov_close(&c, &want, 0.05);
}

#[test]
fn low_rank_iso_covariance_monte_carlo() {
    let u = random_orthonormal(5, 2, 8).unwrap();
    let l = LowRankIso::new(u.clone(), array![3.0, 1.5], 0.2).unwrap();
    let proj: Array2<f64> = u.dot(&u.t());
    let want: Array2<f64> = u.dot(&Array2::from_diag(&array![3.0, 1.5])).dot(&u.t()) + (Array2::<f64>::eye(5) - &proj) * 0.2;
    let cov = SymOperator::LowRankIso(l);
    assert!(max_abs_diff(&cov.to_dense().unwrap().into_inner(), want.view()) < 1e-12);
    let c = empirical_cov(&draw_many(&cov, 100_000, 3));
    assert_cov_close(&c, &want, 0.05);
}

#[test]
fn negative_covariance_rejected() {
    let u = random_orthonormal(3, 1, 0).unwrap();
    assert!(LowRankIso::new(u, array![-1.0], 1.0).and_then(|l| GaussianSampler::new(&SymOperator::LowRankIso(l))).is_err());
    let bad = SymOperator::Dense(SymMatrix::from_diag(&[1.0, -1.0]).unwrap());
    assert!(GaussianSampler::new(&bad).is_err());
}

#[test]
fn kfac_matvec_matches_dense() {
    let blocks = vec![
        KronBlock { act: random_psd(3, &[2.0, 1.0, 0.5], 1), pre: random_psd(2, &[1.0, 0.2], 2) },
        KronBlock { act: random_psd(2, &[1.0, 0.1], 3), pre: random_psd(4, &[3.0, 2.0, 1.0, 0.0], 4) },
    ];
    let op = SymOperator::Kfac(blocks);
    let dense = op.to_dense().unwrap();
    let v = Array1::from_iter((0..op.dim()).map(|i| (i as f64).sin()));
    let a = op.matvec(v.view());
    let b = dense.matvec(v.view());
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!((op.trace() - dense.trace()).abs() < 1e-12);
}

#[test]
fn identity_operator_matvec() {
    let v = array![1.0, -2.0, 0.5];
    assert_eq!(SymOperator::identity(3).matvec(v.view()), v);
}

#[test]
fn random_orthonormal_is_orthonormal() {
    let q = random_orthonormal(40, 7, 1).unwrap();
    assert!(orthonormality_defect(q.view()) < 1e-12);
    assert!(random_orthonormal(3, 4, 1).is_err());
}
