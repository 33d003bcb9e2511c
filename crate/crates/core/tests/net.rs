use ndarray::{array, Array1, Array2, ArrayView1};
use proptest::prelude::*;
use sloppy_core::curvature::{activation_trace_bound, logit_jacobian_layer_trace_bound};
use sloppy_core::data::Dataset;
use sloppy_core::net::*;
use sloppy_core::rng;

fn random_data(n: usize, d: usize, m: usize, seed: u64) -> Dataset {
    let mut r = rng::rng(seed);
    let x = Array2::from_shape_fn((n, d), |_| rng::normal(&mut r));
    let y = (0..n).map(|i| (i * 7 + seed as usize) % m).collect();
    Dataset::new(x, y, m).unwrap()
}

/// Straight-line evaluation with explicit loops.
fn direct_logits(mlp: &Mlp, x: ArrayView1<'_, f64>) -> Vec<f64> {
    let mut h: Vec<f64> = x.to_vec();
    let l = mlp.depth();
    for (k, w) in mlp.weights().iter().enumerate() {
        let mut u = vec![0.0; w.nrows()];
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                u[i] += w[[i, j]] * h[j];
            }
        }
        h = if k < l { u.iter().map(|&v| mlp.activation().apply(v)).collect() } else { u };
    }
    h
}

#[test]
fn zero_network_is_uniform() {
    let mlp = Mlp::zeros(&[3, 4, 5], Activation::Relu).unwrap();
    let t = mlp.forward(array![1.0, -2.0, 0.5].view()).unwrap();
    assert!(t.logits().iter().all(|&z| z == 0.0));
    assert!(t.probs.iter().all(|&p| (p - 0.2).abs() < 1e-15));
}

#[test]
fn identity_single_layer() {
    let mlp = Mlp::new(vec![Array2::eye(3)], Activation::Tanh).unwrap();
    let x = array![0.3, -1.0, 2.0];
    assert_eq!(mlp.forward(x.view()).unwrap().logits().row(0), x);
}

#[test]
fn logits_match_direct_evaluation() {
    for act in [Activation::Relu, Activation::Tanh, Activation::LeakyRelu(0.1)] {
        let mlp = Mlp::init(&[4, 6, 5, 3], act, 3).unwrap();
        let data = random_data(10, 4, 3, 1);
        let z = mlp.logits(data.inputs().view()).unwrap();
        for (i, row) in data.inputs().rows().into_iter().enumerate() {
            let want = direct_logits(&mlp, row);
            for (a, b) in z.row(i).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn probabilities_sum_to_one() {
    let mlp = Mlp::init(&[5, 8, 7], Activation::Tanh, 2).unwrap();
    let t = mlp.forward_batch(random_data(20, 5, 7, 2).inputs().view()).unwrap();
    for row in t.probs.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn uniform_two_class_loss_is_one_bit() {
    let mlp = Mlp::zeros(&[2, 2], Activation::Relu).unwrap();
    let data = Dataset::new(array![[1.0, 2.0], [3.0, -1.0]], vec![0, 1], 2).unwrap();
    let (loss, err) = mlp.loss_and_error(&data).unwrap();
    assert!((loss - 1.0).abs() < 1e-15);
    assert_eq!(err, 0.5);
}

#[test]
fn confident_correct_prediction_has_vanishing_loss() {
    let mlp = Mlp::new(vec![array![[50.0, 0.0], [0.0, 0.0]]], Activation::Relu).unwrap();
    let data = Dataset::new(array![[1.0, 0.0]], vec![0], 2).unwrap();
    let (loss, err) = mlp.loss_and_error(&data).unwrap();
    assert!(loss < 1e-20);
    assert_eq!(err, 0.0);
}

#[test]
fn loss_matches_per_sample_recomputation() {
    let mlp = Mlp::init(&[6, 10, 4], Activation::Relu, 5).unwrap();
    let data = random_data(100, 6, 4, 5);
    let (loss, err) = mlp.loss_and_error(&data).unwrap();
    let mut l = 0.0;
    let mut e = 0.0;
    for (i, row) in data.inputs().rows().into_iter().enumerate() {
        let z = Array1::from(direct_logits(&mlp, row));
        let mx = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        let y = data.labels()[i];
        l += (lse - z[y]) / std::f64::consts::LN_2;
        let mut best = 0;
        for c in 1..z.len() {
            if z[c] > z[best] {
                best = c;
            }
        }
        e += (best != y) as u8 as f64;
    }
    assert!((loss - l / 100.0).abs() < 1e-12);
    assert!((err - e / 100.0).abs() < 1e-15);
    assert!(err <= loss);
}

#[test]
fn argmax_ties_pick_smallest_index() {
    assert_eq!(argmax(array![1.0, 3.0, 3.0, 0.0].view()), 1);
}

fn fd_grad_check(mlp: &Mlp, data: &Dataset, probes: usize, seed: u64) {
    let (_, g) = mlp.grad(data.inputs().view(), data.labels()).unwrap();
    let w = mlp.flat();
    let loss_at = |v: &Array1<f64>| mlp.with_flat(v.as_slice().unwrap()).unwrap().loss_and_error(data).unwrap().0;
    let mut r = rng::rng(seed);
    let p = w.len();
    let h = 1e-5;
    for t in 0..probes {
        let i = if probes >= p { t % p } else { rand::Rng::random_range(&mut r, 0..p) };
        let mut a = w.clone();
        a[i] += h;
        let mut b = w.clone();
        b[i] -= h;
        let fd = (loss_at(&a) - loss_at(&b)) / (2.0 * h);
        let scale = fd.abs().max(g[i].abs()).max(1e-3);
        assert!((fd - g[i]).abs() <= 1e-4 * scale, "coord {i}: fd {fd} vs {}", g[i]);
    }
}

#[test]
fn gradient_matches_finite_differences_tanh() {
    let mlp = Mlp::init(&[3, 4, 2], Activation::Tanh, 1).unwrap();
    fd_grad_check(&mlp, &random_data(15, 3, 2, 3), 100, 0);
    let big = Mlp::init(&[6, 12, 9, 4], Activation::Tanh, 2).unwrap();
    fd_grad_check(&big, &random_data(40, 6, 4, 4), 150, 1);
}

#[test]
fn gradient_matches_finite_differences_relu() {
    // With Gaussian inputs no preactivation sits within the FD step of a kink.
    let mlp = Mlp::init(&[5, 8, 3], Activation::Relu, 7).unwrap();
    let data = random_data(20, 5, 3, 9);
    let t = mlp.forward_batch(data.inputs().view()).unwrap();
    let min_abs = t.u.iter().take(mlp.depth()).flat_map(|u| u.iter()).fold(f64::INFINITY, |m, v| m.min(v.abs()));
    assert!(min_abs > 1e-3);
    fd_grad_check(&mlp, &data, 104, 2);
    let leaky = Mlp::init(&[5, 8, 3], Activation::LeakyRelu(0.2), 7).unwrap();
    fd_grad_check(&leaky, &data, 104, 3);
}

#[test]
fn symmetric_configuration_has_zero_gradient() {
    let hidden = Mlp::init(&[3, 4, 2], Activation::Tanh, 4).unwrap();
    let mut w = hidden.weights().to_vec();
    let top = w[1].row(0).to_owned();
    w[1].row_mut(1).assign(&top);
    let mlp = Mlp::new(w, Activation::Tanh).unwrap();
    let x = array![[0.5, -1.0, 2.0], [0.5, -1.0, 2.0], [-0.3, 0.7, 0.1], [-0.3, 0.7, 0.1]];
    let (_, g) = mlp.grad(x.view(), &[0, 1, 0, 1]).unwrap();
    assert!(g.iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn per_sample_gradients_average_to_batch() {
    let mlp = Mlp::init(&[4, 7, 3], Activation::Relu, 8).unwrap();
    let data = random_data(30, 4, 3, 8);
    let (_, g) = mlp.grad(data.inputs().view(), data.labels()).unwrap();
    let ps = mlp.per_sample_grads(data.inputs().view(), data.labels()).unwrap();
    let mean = ps.mean_axis(ndarray::Axis(0)).unwrap();
    for (a, b) in mean.iter().zip(g.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn jvp_and_vjp_are_adjoint() {
    let mlp = Mlp::init(&[4, 6, 3], Activation::Tanh, 9).unwrap();
    let data = random_data(5, 4, 3, 1);
    let t = mlp.forward_batch(data.inputs().view()).unwrap();
    let v: Vec<f64> = (0..mlp.num_params()).map(|i| (i as f64 * 0.37).cos()).collect();
    let u = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 3 + j) as f64).sin());
    let jv = mlp.jvp(&t, &v);
    let jtu = mlp.vjp(&t, u.clone());
    let lhs: f64 = jv.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
    let rhs: f64 = jtu.iter().zip(&v).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
}

#[test]
fn linear_logit_jacobian_is_input_row() {
    let mlp = Mlp::init(&[3, 4], Activation::Relu, 2).unwrap();
    let x = array![0.5, -1.5, 2.0];
    let j = mlp.logit_jacobian(x.view(), 2).unwrap();
    let j = j.into_shape_with_order((4, 3)).unwrap();
    for r in 0..4 {
        for c in 0..3 {
            let want = if r == 2 { x[c] } else { 0.0 };
            assert_eq!(j[[r, c]], want);
        }
    }
}

#[test]
fn logit_jacobian_matches_finite_differences() {
    let mlp = Mlp::init(&[3, 5, 4], Activation::Tanh, 6).unwrap();
    let x = array![0.2, -0.7, 1.1];
    let full = mlp.logit_jacobian_full(x.view()).unwrap();
    let w = mlp.flat();
    let h = 1e-5;
    for i in 0..w.len() {
        let mut a = w.clone();
        a[i] += h;
        let mut b = w.clone();
        b[i] -= h;
        let za = mlp.with_flat(a.as_slice().unwrap()).unwrap().forward(x.view()).unwrap().logits().row(0).to_owned();
        let zb = mlp.with_flat(b.as_slice().unwrap()).unwrap().forward(x.view()).unwrap().logits().row(0).to_owned();
        for c in 0..4 {
            let fd = (za[c] - zb[c]) / (2.0 * h);
            assert!((fd - full[[c, i]]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
    }
    for c in 0..4 {
        assert_eq!(mlp.logit_jacobian(x.view(), c).unwrap(), full.row(c));
    }
}

#[test]
fn activation_conventions() {
    assert_eq!(Activation::Relu.deriv(0.0), 0.0);
    assert_eq!(Activation::LeakyRelu(0.1).deriv(0.0), 0.1);
    assert_eq!(Activation::Relu.lipschitz(), 1.0);
    assert_eq!(Activation::Tanh.lipschitz(), 1.0);
    assert_eq!(Activation::LeakyRelu(2.5).lipschitz(), 2.5);
    assert_eq!(Activation::LeakyRelu(0.3).lipschitz(), 1.0);
    for a in [Activation::Relu, Activation::Tanh, Activation::LeakyRelu(0.05)] {
        assert_eq!(Activation::parse(&a.name()).unwrap(), a);
    }
    assert!(Activation::parse("sigmoid").is_err());
}

#[test]
fn gradient_step_decreases_convex_loss() {
    let mlp = Mlp::init(&[4, 3], Activation::Relu, 3).unwrap();
    let data = random_data(50, 4, 3, 3);
    let (l0, g) = mlp.grad(data.inputs().view(), data.labels()).unwrap();
    let w = &mlp.flat() - &(&g * 1e-2);
    let (l1, _) = mlp.with_flat(w.as_slice().unwrap()).unwrap().loss_and_error(&data).unwrap();
    assert!(l1 < l0);
}

#[test]
fn input_correlation_is_first_captured_layer() {
    let mlp = Mlp::init(&[4, 6, 3], Activation::Relu, 1).unwrap();
    let data = random_data(40, 4, 3, 2);
    let c = capture_correlations(&mlp, &data).unwrap();
    let x = data.inputs();
    let want = x.t().dot(x) / 40.0;
    for (a, b) in c.act[0].view().iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    for m in c.act.iter().chain(&c.act_grad) {
        assert!(m.is_psd(1e-8));
    }
}

#[test]
fn logit_jacobian_traces_agree_with_blocks() {
    let mlp = Mlp::init(&[3, 5, 4], Activation::Tanh, 11).unwrap();
    let data = random_data(25, 3, 4, 11);
    let c = capture_correlations(&mlp, &data).unwrap();
    for i in 0..4 {
        let mut total = 0.0;
        for k in 0..=mlp.depth() {
            let block = logit_jacobian_block_corr(&mlp, data.inputs().view(), i, k).unwrap();
            assert!((block.trace() - c.logit_jac_trace[i][k]).abs() < 1e-10);
            total += block.trace();
        }
        let whole = logit_jacobian_corr(&mlp, data.inputs().view(), i).unwrap();
        assert!((whole.trace() - total).abs() < 1e-10);
        assert!(whole.is_psd(1e-8));
    }
}

fn random_net(seed: u64, tanh: bool) -> (Mlp, Dataset) {
    let mut r = rng::rng(seed);
    let depth = rand::Rng::random_range(&mut r, 1..=3usize);
    let d = rand::Rng::random_range(&mut r, 2..=16usize);
    let m = rand::Rng::random_range(&mut r, 2..=6usize);
    let mut widths = vec![d];
    for _ in 0..depth {
        widths.push(rand::Rng::random_range(&mut r, 2..=24usize));
    }
    widths.push(m);
    let act = if tanh { Activation::Tanh } else { Activation::Relu };
    let mlp = Mlp::init(&widths, act, seed).unwrap();
    (mlp, random_data(60, d, m, seed))
}

#[test]
fn activation_trace_bound_holds_layerwise() {
    for seed in 0..100 {
        let (mlp, data) = random_net(seed, seed % 2 == 1);
        let c = capture_correlations(&mlp, &data).unwrap();
        for k in 1..=mlp.depth() {
            let rhs = activation_trace_bound(&mlp, k, c.act[k - 1].trace()).unwrap();
            assert!(c.act[k].trace() <= rhs * (1.0 + 1e-12), "seed {seed} layer {k}");
        }
    }
}

#[test]
fn logit_jacobian_trace_bound_holds() {
    for seed in 0..100 {
        let (mlp, data) = random_net(1000 + seed, seed % 2 == 0);
        let c = capture_correlations(&mlp, &data).unwrap();
        let tx = c.act[0].trace();
        for i in 0..mlp.classes() {
            let mut total = 0.0;
            let mut total_rhs = 0.0;
            for k in 0..=mlp.depth() {
                let rhs = logit_jacobian_layer_trace_bound(&mlp, tx, k).unwrap();
                assert!(c.logit_jac_trace[i][k] <= rhs * (1.0 + 1e-12), "seed {seed} logit {i} layer {k}");
                total += c.logit_jac_trace[i][k];
                total_rhs += rhs;
            }
            assert!(total <= total_rhs * (1.0 + 1e-12));
        }
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let mlp = Mlp::init(&[3, 4, 2], Activation::LeakyRelu(0.01), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.txt");
    write_checkpoint(&mlp, &path).unwrap();
    let back = read_checkpoint(&path).unwrap();
    assert_eq!(back.activation(), mlp.activation());
    assert_eq!(back.flat(), mlp.flat());
    assert!(parse_checkpoint("garbage").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flat_round_trip(seed in 0u64..1000, h in 1usize..6) {
        let mlp = Mlp::init(&[3, h, 2], Activation::Relu, seed).unwrap();
        let back = mlp.with_flat(mlp.flat().as_slice().unwrap()).unwrap();
        prop_assert_eq!(back.flat(), mlp.flat());
        prop_assert_eq!(mlp.num_params(), 3 * h + 2 * h);
    }

    #[test]
    fn error_never_exceeds_loss(seed in 0u64..1000) {
        let mlp = Mlp::init(&[4, 5, 3], Activation::Relu, seed).unwrap();
        let (l, e) = mlp.loss_and_error(&random_data(30, 4, 3, seed)).unwrap();
        prop_assert!(e <= l);
        prop_assert!((0.0..=1.0).contains(&e));
    }
}
