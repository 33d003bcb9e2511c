use ndarray::{Array1, Array2};
use proptest::prelude::*;
use sloppy_core::curvature::{kfac_blocks, kfac_eig, CurvatureKind};
use sloppy_core::data::Dataset;
use sloppy_core::linalg::{random_orthonormal, SymMatrix};
use sloppy_core::net::{Activation, Mlp};
use sloppy_core::pacbayes::*;
use sloppy_core::{rng, Error};

/// Binary KL written with `ln_1p` for the second term.
fn kl_reference(q: f64, p: f64) -> f64 {
    let a = if q == 0.0 { 0.0 } else { q * (q / p).ln() };
    let b = if q == 1.0 { 0.0 } else { (1.0 - q) * ((p - q) / (1.0 - p)).ln_1p() };
    a + b
}

fn random_data(n: usize, d: usize, m: usize, seed: u64) -> Dataset {
    let mut r = rng::rng(seed);
    let x = Array2::from_shape_fn((n, d), |_| rng::normal(&mut r));
    let y = (0..n).map(|i| (i * 7 + 3) % m).collect();
    Dataset::new(x, y, m).unwrap()
}

fn dense_cov(u: &Array2<f64>, vars: &Array1<f64>, comp: f64) -> SymMatrix {
    let p = u.nrows();
    let mut m = Array2::<f64>::eye(p) * comp;
    for (j, &v) in vars.iter().enumerate() {
        let col = u.column(j);
        for a in 0..p {
            for b in 0..p {
                m[[a, b]] += (v - comp) * col[a] * col[b];
            }
        }
    }
    SymMatrix::from_upper(m).unwrap()
}

fn positive(len: usize, seed: u64, lo: f64, hi: f64) -> Array1<f64> {
    let mut r = rng::rng(seed);
    Array1::from_iter((0..len).map(|_| lo + (hi - lo) * rng::normal(&mut r).abs().min(3.0) / 3.0))
}

fn bases() -> Vec<(&'static str, Basis)> {
    let mlp = Mlp::init(&[4, 3, 2], Activation::Tanh, 1).unwrap();
    let data = random_data(30, 4, 2, 1);
    let kfac = kfac_eig(&kfac_blocks(&mlp, &data, CurvatureKind::GaussNewton).unwrap().op).unwrap();
    assert_eq!(kfac.dim(), 18);
    vec![
        ("identity", Basis::Identity(18)),
        ("dense-full", Basis::Dense(random_orthonormal(18, 18, 2).unwrap())),
        ("dense-partial", Basis::Dense(random_orthonormal(18, 5, 3).unwrap())),
        ("kron", Basis::Kron(kfac)),
    ]
}

#[test]
fn structured_kl_matches_dense_everywhere() {
    for (name, basis) in bases() {
        let p = basis.dim();
        let k = basis.rank();
        let u = basis.to_matrix();
        let priors = [
            PriorCov::Iso { eps: 3.0 },
            PriorCov::FimPlusIso { a: 0.7, eps: 5.0, fim_eigvals: positive(k, 4, 0.0, 4.0) },
        ];
        for prior in priors {
            let pair = GaussianPair {
                prior_mean: positive(p, 5, -1.0, 1.0),
                prior: prior.clone(),
                post_mean: positive(p, 6, -1.0, 1.0),
                basis: basis.clone(),
                post_vars: positive(k, 7, 0.01, 2.0),
                post_complement: 0.15,
            };
            let (pi, pi_c) = prior.variances(k);
            let comp = if k < p { 0.15 } else { 0.0 };
            let cq = dense_cov(&u, &pair.post_vars, comp);
            let cp = dense_cov(&u, &pi, if k < p { pi_c } else { 0.0 });
            let want = gaussian_kl_dense(pair.post_mean.view(), &cq, pair.prior_mean.view(), &cp).unwrap();
            let got = pair.kl().unwrap();
            assert!((got - want).abs() < 1e-8 * want.max(1.0), "{name}: {got} vs {want}");
        }
    }
}

#[test]
fn diagonal_kl_reduces_to_coordinatewise_terms() {
    let p = 50;
    let w0 = positive(p, 1, -1.0, 1.0);
    let w = positive(p, 2, -1.0, 1.0);
    let v = positive(p, 3, 0.01, 1.0);
    let eps = 2.5;
    let pair = GaussianPair {
        prior_mean: w0.clone(),
        prior: PriorCov::Iso { eps },
        post_mean: w.clone(),
        basis: Basis::Identity(p),
        post_vars: v.clone(),
        post_complement: 0.0,
    };
    let mut want = 0.0;
    for i in 0..p {
        let d = w[i] - w0[i];
        want += 0.5 * (eps * v[i] + eps * d * d - 1.0 - (eps * v[i]).ln());
    }
    assert!((pair.kl().unwrap() - want).abs() < 1e-10);
    let dense = gaussian_kl_dense(
        w.view(),
        &SymMatrix::from_diag(v.as_slice().unwrap()).unwrap(),
        w0.view(),
        &SymMatrix::from_diag(&vec![1.0 / eps; p]).unwrap(),
    )
    .unwrap();
    assert!((dense - want).abs() < 1e-8);
}

#[test]
fn kl_closed_forms() {
    let one = |mq: f64, vq: f64, mp: f64, vp: f64| {
        gaussian_kl_dense(
            Array1::from(vec![mq]).view(),
            &SymMatrix::from_diag(&[vq]).unwrap(),
            Array1::from(vec![mp]).view(),
            &SymMatrix::from_diag(&[vp]).unwrap(),
        )
        .unwrap()
    };
    assert!((one(0.0, 1.0, 1.0, 2.0) - 0.5 * 2f64.ln()).abs() < 1e-12);
    assert!(one(0.3, 1.7, 0.3, 1.7).abs() < 1e-12);
    let pair = GaussianPair {
        prior_mean: Array1::zeros(4),
        prior: PriorCov::Iso { eps: 2.0 },
        post_mean: Array1::zeros(4),
        basis: Basis::Identity(4),
        post_vars: Array1::from_elem(4, 0.5),
        post_complement: 0.0,
    };
    assert!(pair.kl().unwrap().abs() < 1e-14);
    let bad = GaussianPair { post_vars: Array1::from(vec![0.5, 0.0, 0.5, 0.5]), ..pair.clone() };
    assert!(matches!(bad.kl(), Err(Error::Domain(_))));
}

#[test]
fn kl_gradient_matches_finite_differences() {
    let p = 12;
    let basis = Basis::Dense(random_orthonormal(p, 5, 9).unwrap());
    let base = GaussianPair {
        prior_mean: positive(p, 10, -1.0, 1.0),
        prior: PriorCov::FimPlusIso { a: 0.4, eps: 3.0, fim_eigvals: positive(5, 11, 0.0, 2.0) },
        post_mean: positive(p, 12, -1.0, 1.0),
        basis,
        post_vars: positive(5, 13, 0.05, 1.0),
        post_complement: 0.2,
    };
    let (_, g) = base.kl_with_grad().unwrap();
    let h = 1e-6;
    for i in 0..p {
        let mut a = base.clone();
        let mut b = base.clone();
        a.post_mean[i] += h;
        b.post_mean[i] -= h;
        let fd = (a.kl().unwrap() - b.kl().unwrap()) / (2.0 * h);
        assert!((fd - g.post_mean[i]).abs() < 1e-6);
    }
    for i in 0..5 {
        let mut a = base.clone();
        let mut b = base.clone();
        a.post_vars[i] += h;
        b.post_vars[i] -= h;
        let fd = (a.kl().unwrap() - b.kl().unwrap()) / (2.0 * h);
        assert!((fd - g.post_vars[i]).abs() < 1e-6);
    }
    let mut a = base.clone();
    let mut b = base.clone();
    a.post_complement += h;
    b.post_complement -= h;
    let fd = (a.kl().unwrap() - b.kl().unwrap()) / (2.0 * h);
    assert!((fd - g.post_complement).abs() < 1e-6);

    // Prior variances through the Iso parameterization: dπ/dε = -1/ε².
    let iso = GaussianPair { prior: PriorCov::Iso { eps: 3.0 }, ..base.clone() };
    let (_, gi) = iso.kl_with_grad().unwrap();
    let analytic = (gi.prior_vars.sum() + gi.prior_complement) * (-1.0 / 9.0);
    let up = GaussianPair { prior: PriorCov::Iso { eps: 3.0 + h }, ..base.clone() };
    let dn = GaussianPair { prior: PriorCov::Iso { eps: 3.0 - h }, ..base };
    let fd = (up.kl().unwrap() - dn.kl().unwrap()) / (2.0 * h);
    assert!((fd - analytic).abs() < 1e-6);
}

#[test]
fn kl_inverse_closed_forms() {
    assert_eq!(kl_inv(0.3, 0.0), 0.3);
    for c in [0.01, 0.5, 3.0] {
        assert!((kl_inv(0.0, c) - (1.0 - (-c as f64).exp())).abs() < 1e-10);
    }
    assert!((bernoulli_kl(0.0, 0.5) - 0.693147).abs() < 1e-6);
    assert!((bernoulli_kl(0.1, 0.3) - kl_reference(0.1, 0.3)).abs() < 1e-15);
    assert!(kl_inv(0.5, 1e6) > 1.0 - 1e-12);
}

#[test]
fn kl_inverse_is_tight() {
    for (q, c) in [(0.05, 0.01), (0.3, 0.2), (0.0, 1e-4), (0.9, 0.001)] {
        let r = kl_inv(q, c);
        assert!(bernoulli_kl(q, r) <= c);
        if r < 1.0 - 2e-10 {
            assert!(bernoulli_kl(q, r + 2e-10) > c);
        }
    }
}

#[test]
fn penalty_arithmetic() {
    let phi = confidence_term(55_000, 0.025);
    let direct = (std::f64::consts::PI.powi(2) * 55_000.0 / 0.15).ln();
    assert!((phi - direct).abs() < 1e-12);
    assert!((phi - 15.102).abs() < 1e-3);

    let g = PriorGrid::new(0.1, 0.05, GridRule::Exponential, false).unwrap();
    let eps = g.scale(1);
    assert!((prior_penalty(&[g], &[g.index_of(eps).unwrap()], 55_000, 0.025).unwrap() - phi).abs() < 1e-12);

    let g2 = PriorGrid::optimized_default();
    let direct = 2.0 * 2.0 * (2.0 * (37.0 + 12.0) as f64).ln() + (std::f64::consts::PI.powi(2) * 1000.0 / (6.0 * 0.025)).ln();
    let got = prior_penalty(&[g2, g2], &[37, -12], 1000, 0.025).unwrap();
    assert!((got - direct).abs() < 1e-12);
    assert!(prior_penalty(&[PriorGrid::analytic_default()], &[0], 10, 0.1).is_err());
    assert!(prior_penalty(&[g2], &[3], 10, 1.5).is_err());
}

#[test]
fn union_bound_weights_sum_below_delta() {
    let delta = 0.025;
    let n = 1000;
    for signed in [false, true] {
        let g = PriorGrid { b: 0.1, c: 0.05, rule: GridRule::LogLinear, signed };
        let range: Vec<i64> = if signed { (-20_000..=20_000).filter(|&j| j != 0).collect() } else { (1..=20_000).collect() };
        let total: f64 = range.iter().map(|&j| (-prior_penalty(&[g], &[j], n, delta).unwrap()).exp()).sum();
        assert!(total <= delta / n as f64 * 1.0000001, "{total}");
    }
}

#[test]
fn smooth_penalty_agrees_on_grid() {
    let g = PriorGrid::optimized_default();
    for j in [3i64, -40, 250] {
        let (v, grad) = smooth_penalty(true, &[j as f64], 500, 0.025);
        assert!((v - prior_penalty(&[g], &[j], 500, 0.025).unwrap()).abs() < 1e-12);
        let (vp, _) = smooth_penalty(true, &[j as f64 + 1e-6], 500, 0.025);
        assert!(((vp - v) / 1e-6 - grad[0]).abs() < 1e-4);
    }
}

#[test]
fn grid_rules_invert() {
    for rule in [GridRule::Exponential, GridRule::LogLinear] {
        let g = PriorGrid::new(0.3, 0.2, rule, true).unwrap();
        for j in [-5i64, 1, 12] {
            assert_eq!(g.index_of(g.scale(j)).unwrap(), j);
        }
        let mid = (g.scale(4) * g.scale(5)).sqrt() * 1.001;
        let n = g.neighbours(mid);
        assert!(n.contains(&4) && n.contains(&5));
        assert_eq!(GridRule::parse(rule.name()).unwrap(), rule);
    }
    let analytic = PriorGrid::analytic_default();
    assert!((analytic.scale(1) - 22.103).abs() < 1e-3);
    assert_eq!(analytic.nearest_index(1e-9), 1);
}

#[test]
fn bound_composition() {
    assert_eq!(evaluate_bound(0.2, 0.0, 0.0, 100, 0.025).unwrap(), 0.2);
    let b = evaluate_bound(0.0, 2f64.ln(), 0.0, 2, 0.025).unwrap();
    assert!((b - 0.5).abs() < 1e-10);
    let (q, kl, phi, n) = (0.07, 120.0, 15.0, 5000);
    assert_eq!(evaluate_bound(q, kl, phi, n, 0.025).unwrap(), kl_inv(q, (kl + phi) / 4999.0));
    assert!(evaluate_bound(0.1, 1.0, 1.0, 1, 0.025).is_err());
    assert!(evaluate_bound(0.1, f64::NAN, 1.0, 10, 0.025).is_err());
}

#[test]
fn analytic_posterior_arithmetic() {
    let (v, comp) = analytic_posterior(Array1::from(vec![0.0, 1e-3]).view(), 55_000, 101.3).unwrap();
    assert!((1.0 / v[0] - 101.3).abs() < 1e-9);
    assert!((1.0 / v[1] - 211.298).abs() < 1e-9);
    assert!((comp - 1.0 / 101.3).abs() < 1e-15);
    assert!(matches!(analytic_posterior(Array1::from(vec![1.0, -0.5]).view(), 10, 1.0), Err(Error::Domain(_))));
}

/// `½Σλ_i v_i + KL/(2(n-1))` for a posterior diagonal in the curvature
/// basis with mean at the prior mean.
fn loose_surrogate(lambda: &[f64], v: &[f64], n: usize, eps: f64) -> f64 {
    let curv: f64 = lambda.iter().zip(v).map(|(l, v)| 0.5 * l * v).sum();
    let kl: f64 = v.iter().map(|v| 0.5 * (eps * v - 1.0 - (eps * v).ln())).sum();
    curv + kl / (2.0 * (n - 1) as f64)
}

#[test]
fn analytic_posterior_minimizes_surrogate() {
    let (n, eps) = (5000, 10.0);
    let lambda: Vec<f64> = (0..30).map(|i| 10f64.powf(-(i as f64) / 4.0)).collect();
    let (v, _) = analytic_posterior(Array1::from(lambda.clone()).view(), n, eps).unwrap();
    let v = v.to_vec();
    let best = loose_surrogate(&lambda, &v, n, eps);
    for i in 0..v.len() {
        for f in [0.9, 1.1] {
            let mut w = v.clone();
            // scale the precision by f
            w[i] = v[i] / f;
            assert!(loose_surrogate(&lambda, &w, n, eps) > best);
        }
    }
}

#[test]
fn numerical_posterior_recovers_closed_form() {
    let (n, eps) = (5000, 10.0);
    let lambda = positive(50, 20, 0.0, 1.0).mapv(|x| x * x * x);
    let v = optimize_quadratic_posterior(lambda.view(), n, eps, QuadObjective::Loose).unwrap();
    let (want, _) = analytic_posterior(lambda.view(), n, eps).unwrap();
    for (a, b) in v.iter().zip(want.iter()) {
        assert!((a / b - 1.0).abs() < 1e-6, "{a} vs {b}");
    }
    let fit = fit_inverse_variance(lambda.view(), v.view()).unwrap();
    assert!((fit.n_eff() / n as f64 - 1.0).abs() < 1e-4);
    assert!((fit.eps_eff() / eps - 1.0).abs() < 1e-4);
    assert!(fit.r2 > 0.999_999);
}

#[test]
fn zero_posterior_covariance_is_deterministic() {
    let mlp = Mlp::init(&[4, 6, 3], Activation::Relu, 3).unwrap();
    let data = random_data(80, 4, 3, 3);
    let p = mlp.num_params();
    let pair = GaussianPair {
        prior_mean: Array1::zeros(p),
        prior: PriorCov::Iso { eps: 1.0 },
        post_mean: mlp.flat().to_owned(),
        basis: Basis::Identity(p),
        post_vars: Array1::zeros(p),
        post_complement: 0.0,
    };
    let est = mc_posterior_error(&pair, &mlp, &data, 7, 0).unwrap();
    let (l, e) = mlp.loss_and_error(&data).unwrap();
    assert!((est.error - e).abs() < 1e-15 && (est.loss - l).abs() < 1e-12);
    assert_eq!(est.error_se, 0.0);
    assert_eq!(DEFAULT_MC_SAMPLES, 150);
}

#[test]
fn monte_carlo_estimate_is_stable_and_deterministic() {
    let mlp = Mlp::init(&[4, 6, 3], Activation::Relu, 4).unwrap();
    let data = random_data(200, 4, 3, 4);
    let p = mlp.num_params();
    let pair = GaussianPair {
        prior_mean: Array1::zeros(p),
        prior: PriorCov::Iso { eps: 1.0 },
        post_mean: mlp.flat().to_owned(),
        basis: Basis::Identity(p),
        post_vars: Array1::from_elem(p, 0.05),
        post_complement: 0.0,
    };
    let a = mc_posterior_error(&pair, &mlp, &data, 150, 11).unwrap();
    let b = mc_posterior_error(&pair, &mlp, &data, 300, 11).unwrap();
    assert!((a.error - b.error).abs() <= 3.0 * a.error_se.max(b.error_se));
    assert_eq!(a, mc_posterior_error(&pair, &mlp, &data, 150, 11).unwrap());
    assert!(mc_posterior_error(&pair, &mlp, &data, 0, 11).is_err());
}

#[test]
fn sampler_covariance_matches_partial_basis() {
    let p = 6;
    let u = random_orthonormal(p, 2, 30).unwrap();
    let pair = GaussianPair {
        prior_mean: Array1::zeros(p),
        prior: PriorCov::Iso { eps: 1.0 },
        post_mean: Array1::zeros(p),
        basis: Basis::Dense(u.clone()),
        post_vars: Array1::from(vec![4.0, 0.25]),
        post_complement: 1.5,
    };
    let s = pair.posterior_sampler();
    let draws = 100_000;
    let mut cov = Array2::<f64>::zeros((p, p));
    let mut r = rng::rng(31);
    for _ in 0..draws {
        let w = s.draw(&mut r).weights;
        for a in 0..p {
            for b in 0..p {
                cov[[a, b]] += w[a] * w[b];
            }
        }
    }
    cov /= draws as f64;
    let want = dense_cov(&u, &pair.post_vars, 1.5).into_inner();
    let scale = want.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for (g, w) in cov.iter().zip(want.iter()) {
        assert!((g - w).abs() < 0.05 * scale);
    }
}

#[test]
fn degenerate_grid_search_returns_prior() {
    let mlp = Mlp::init(&[3, 4, 2], Activation::Relu, 5).unwrap();
    let data = random_data(300, 3, 2, 5);
    let w0 = mlp.flat().to_owned();
    let p = mlp.num_params();
    let curv = CurvatureBasis { basis: Basis::Identity(p), eigvals: Array1::zeros(p) };
    let cfg = GridSearchConfig { j_min: 1, j_max: 20, n_samples: 40, candidates: 3, ..Default::default() };
    let (rep, rows, pair) = grid_search_bound(&mlp, w0.view(), Some(&curv), PosteriorRule::Analytic, &data, &cfg).unwrap();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.kl.abs() < 1e-9));
    assert!(rep.kl.abs() < 1e-9);
    let want = kl_inv(rep.e_hat, rep.phi / (data.n() - 1) as f64);
    assert!((rep.bound - want).abs() < 1e-12);
    assert!(rep.bound >= rep.e_hat);
    assert_eq!(pair.prior.eps(), rep.eps);
    let best = rows.iter().filter_map(|r| r.bound).fold(f64::INFINITY, f64::min);
    assert_eq!(best, rep.bound);
    let csv = grid_rows_csv(&rows);
    assert_eq!(csv.lines().count(), 21);
}

fn tiny_problem() -> (Mlp, Mlp, Dataset) {
    let teacher = Mlp::init(&[5, 6, 3], Activation::Relu, 40).unwrap();
    let mut r = rng::rng(41);
    let x = Array2::from_shape_fn((600, 5), |_| rng::normal(&mut r));
    let y = sloppy_core::data::teacher_label(x.view(), &teacher).unwrap();
    let data = Dataset::new(x, y, 3).unwrap();
    let init = Mlp::init(&[5, 8, 3], Activation::Relu, 42).unwrap();
    let mut trained = init.clone();
    let cfg = sloppy_core::train::TrainConfig { epochs: 60, batch_size: 100, lr_start: 1e-2, lr_end: 1e-4, ..Default::default() };
    sloppy_core::train::train(&mut trained, &data, None, &cfg).unwrap();
    (init, trained, data)
}

#[test]
fn optimizer_improves_on_its_starting_point() {
    let (init, trained, data) = tiny_problem();
    let w0 = init.flat().to_owned();
    let problem = OptimizeProblem { trained: &trained, w0: w0.view(), train: &data, fim_data: &data };
    for method in [OptMethod::FimInit, OptMethod::FimPrior, OptMethod::Diagonal, OptMethod::HessianTracking] {
        let cfg = OptimizeConfig { steps: 300, batch_size: 100, final_samples: 60, lr_mean: 1e-3, log_every: 50, ..Default::default() };
        let out = optimize_bound(method, &problem, &cfg).unwrap();
        let r = &out.report;
        assert!(r.bound <= r.initial_bound.unwrap(), "{}: {} > {}", method.name(), r.bound, r.initial_bound.unwrap());
        assert!(r.bound >= r.e_hat && r.bound <= 1.0);
        assert_eq!(r.method, method.name());
        assert_eq!(r.a.is_some(), method == OptMethod::FimPrior);
        assert_eq!(r.eps, cfg.grid.scale(r.eps_index));
        assert!(!out.trace.is_empty());
        let csv = trace_csv(&out.trace, r.a.is_some());
        let header = if r.a.is_some() { "step,surrogate,e_hat,kl,eps,a" } else { "step,surrogate,e_hat,kl,eps" };
        assert_eq!(csv.lines().next().unwrap(), header);
        if method == OptMethod::HessianTracking {
            assert_eq!(r.hessian_cadence, Some(1));
        }
        let recomputed = out.pair.kl().unwrap();
        assert!((recomputed - r.kl).abs() < 1e-8 * r.kl.max(1.0));
    }
}

#[test]
fn tracked_posterior_follows_inverse_variance_law() {
    use sloppy_core::pipeline::{make_teacher_student, train_student, TeacherStudentConfig};
    let ts = make_teacher_student(&TeacherStudentConfig {
        d: 50,
        c: 0.3,
        n_train: 20_000,
        n_val: 5000,
        teacher_hidden: 20,
        ..Default::default()
    })
    .unwrap();
    let tc = sloppy_core::train::TrainConfig { epochs: 50, lr_start: 3e-3, lr_end: 3e-5, ..Default::default() };
    let st = train_student(&[50, 32, 10], Activation::Relu, &ts.train, None, &tc, 7).unwrap();
    let w0 = st.w0();
    let problem = OptimizeProblem { trained: &st.trained, w0: w0.view(), train: &ts.train, fim_data: &ts.val };
    let cfg = OptimizeConfig { steps: 20_000, final_samples: 20, cadence: Some(10), ..Default::default() };
    let out = optimize_bound(OptMethod::HessianTracking, &problem, &cfg).unwrap();
    assert_eq!(out.report.hessian_cadence, Some(10));
    let Basis::Kron(k) = &out.pair.basis else { panic!("expected a Kronecker basis") };
    let lam = k.eigvals();
    let keep: Vec<usize> = (0..lam.len()).filter(|&i| lam[i] > 1e-8).collect();
    let l = Array1::from_iter(keep.iter().map(|&i| lam[i]));
    let v = Array1::from_iter(keep.iter().map(|&i| out.pair.post_vars[i]));
    let fit = fit_inverse_variance(l.view(), v.view()).unwrap();
    assert!(fit.r2 >= 0.9, "{fit:?}");
    assert!(fit.slope > 0.0 && fit.n_eff() < 20_000.0);
}

proptest! {
    #[test]
    fn kl_inverse_round_trip(q in 0.0f64..0.95, c in 1e-6f64..2.0) {
        let r = kl_inv(q, c);
        // Near 1 the spacing of f64 values limits how finely kl can be hit.
        prop_assume!(r < 1.0 - 1e-6);
        prop_assert!((bernoulli_kl(q, r) - c).abs() < 1e-9);
    }

    #[test]
    fn pinsker_dominates(q in 0.0f64..1.0, c in 0.0f64..3.0) {
        prop_assert!(kl_inv(q, c) <= pinsker_bound(q, c) + 1e-10);
    }

    #[test]
    fn bound_at_least_empirical(q in 0.0f64..1.0, kl in 0.0f64..1e4, phi in 0.0f64..50.0, n in 2usize..100_000) {
        let b = evaluate_bound(q, kl, phi, n, 0.025).unwrap();
        prop_assert!(b >= q);
        if kl + phi == 0.0 {
            prop_assert_eq!(b, q);
        } else {
            prop_assert!(b > q || q == 1.0);
        }
    }

    #[test]
    fn bernoulli_kl_nonnegative(q in 0.0f64..1.0, p in 0.001f64..0.999) {
        let k = bernoulli_kl(q, p);
        prop_assert!(k >= 0.0);
        prop_assert!((k - kl_reference(q, p)).abs() < 1e-12 * k.max(1.0));
    }
}
