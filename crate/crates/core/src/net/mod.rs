//! Bias-free fully-connected networks with explicit forward and backward
//! passes.
//!
//! Layer `k` maps `h^k` (width `d_k`) to the preactivation
//! `u^{k+1} = w^k h^k` with `w^k` of shape `d_{k+1} × d_k`; hidden layers
//! apply the activation, the last preactivation is the logit vector `z`.
//! Batched quantities store one sample per row. Flattened weights list the
//! layers in order, each in row-major order.

mod capture;
mod checkpoint;

pub use capture::{capture_correlations, logit_jacobian_block_corr, logit_jacobian_corr, Correlations};
pub use checkpoint::{checkpoint_string, parse_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_HEADER};

use std::f64::consts::LN_2;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Relu => u.max(0.0),
            Activation::LeakyRelu(a) => {
                if u > 0.0 {
                    u
                } else {
                    a * u
                }
            }
            Activation::Tanh => u.tanh(),
        }
    }

    /// Derivative, with the left branch taken at the ReLU kink.
    pub fn deriv(self, u: f64) -> f64 {
        match self {
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if u > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
        }
    }

    /// Bound `a` on `|σ'|`.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Relu | Activation::Tanh => 1.0,
            Activation::LeakyRelu(a) => a.abs().max(1.0),
        }
    }

    pub fn name(self) -> String {
        match self {
            Activation::Relu => "relu".to_string(),
            Activation::LeakyRelu(a) => format!("leaky_relu({a})"),
            Activation::Tanh => "tanh".to_string(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "relu" => return Ok(Activation::Relu),
            "tanh" => return Ok(Activation::Tanh),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("leaky_relu(").and_then(|r| r.strip_suffix(')')) {
            let a: f64 = rest
                .trim()
                .parse()
                .map_err(|_| Error::input(format!("bad leaky_relu slope '{rest}'")))?;
            return Ok(Activation::LeakyRelu(a));
        }
        Err(Error::input(format!("unknown activation '{s}'")))
    }
}

/// Cached forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `h[k]` is `h^k` for `k = 0..=L`; `h[0]` is the input.
    pub h: Vec<Array2<f64>>,
    /// `u[k]` is the preactivation `u^{k+1}`; the last entry is `z`.
    pub u: Vec<Array2<f64>>,
    pub probs: Array2<f64>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Array2<f64> {
        self.u.last().expect("at least one layer")
    }

    pub fn n(&self) -> usize {
        self.probs.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Array2<f64>>,
    activation: Activation,
}

impl Mlp {
    pub fn new(weights: Vec<Array2<f64>>, activation: Activation) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::input("network needs at least one layer"));
        }
        let mut widths = vec![weights[0].ncols()];
        for (k, w) in weights.iter().enumerate() {
            if w.ncols() != *widths.last().unwrap() {
                return Err(Error::input(format!(
                    "layer {k} expects input width {}, previous layer gives {}",
                    w.ncols(),
                    widths.last().unwrap()
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("layer {k} has a non-finite weight")));
            }
            widths.push(w.nrows());
        }
        if widths.iter().any(|&d| d == 0) {
            return Err(Error::input("layer widths must be positive"));
        }
        Ok(Mlp { widths, weights, activation })
    }

    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::input("need at least input and output widths"));
        }
        let weights = widths.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect();
        Self::new(weights, activation)
    }

    /// Gaussian initialization with standard deviation `1/sqrt(d_k)` for
    /// layer `k`.
    pub fn init(widths: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(widths, activation)?;
        let mut r = rng::rng(seed);
        for w in net.weights.iter_mut() {
            let sd = 1.0 / (w.ncols() as f64).sqrt();
            for v in w.iter_mut() {
                *v = sd * rng::normal(&mut r);
            }
        }
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    /// Start offset of each layer in the flattened weight vector.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.weights.len() + 1);
        let mut acc = 0;
        off.push(0);
        for w in &self.weights {
            acc += w.len();
            off.push(acc);
        }
        off
    }

    pub fn flat(&self) -> Array1<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for w in &self.weights {
            v.extend(w.iter());
        }
        Array1::from(v)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::input(format!(
                "weight vector has length {}, network has {} weights",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for w in self.weights.iter_mut() {
            for (dst, src) in w.iter_mut().zip(&flat[off..]) {
                *dst = *src;
            }
            off += w.len();
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Mlp> {
        let mut net = self.clone();
        net.set_flat(flat)?;
        Ok(net)
    }

    /// Splits a flat vector into per-layer matrix views.
    pub fn split_flat<'a>(&self, flat: &'a [f64]) -> Vec<ArrayView2<'a, f64>> {
        let off = self.layer_offsets();
        self.weights
            .iter()
            .enumerate()
            .map(|(k, w)| ArrayView2::from_shape(w.dim(), &flat[off[k]..off[k + 1]]).expect("layer shape"))
            .collect()
    }

    fn check_inputs(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::input(format!(
                "input has dimension {}, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits only, without caching intermediates.
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_inputs(&x)?;
        let mut h = x.to_owned();
        for (k, w) in self.weights.iter().enumerate() {
            let mut u = h.dot(&w.t());
            if k + 1 < self.weights.len() {
                let act = self.activation;
                u.mapv_inplace(|v| act.apply(v));
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("non-finite value at layer {}", k + 1)));
            }
            h = u;
        }
        Ok(h)
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<ForwardTrace> {
        self.forward_batch(x.insert_axis(Axis(0)))
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
        self.check_inputs(&x)?;
        let mut h = vec![x.to_owned()];
        let mut u = Vec::with_capacity(self.weights.len());
        for (k, w) in self.weights.iter().enumerate() {
            let pre = h[k].dot(&w.t());
            if pre.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("non-finite value at layer {}", k + 1)));
            }
            if k + 1 < self.weights.len() {
                let act = self.activation;
                h.push(pre.mapv(|v| act.apply(v)));
            }
            u.push(pre);
        }
        let probs = softmax_rows(u.last().unwrap().view());
        Ok(ForwardTrace { h, u, probs })
    }

    /// Backpropagates output-side row vectors through a cached trace.
    ///
    /// Row `s` of `delta_out` is a cotangent for the logits of sample `s`.
    /// Entry `k` of the result holds the cotangents of `u^{k+1}`.
    pub fn backward_deltas(&self, trace: &ForwardTrace, delta_out: Array2<f64>) -> Vec<Array2<f64>> {
        let l = self.depth();
        let mut deltas = vec![Array2::zeros((0, 0)); l + 1];
        deltas[l] = delta_out;
        for k in (1..=l).rev() {
            let mut g = deltas[k].dot(&self.weights[k]);
            let act = self.activation;
            Zip::from(&mut g).and(&trace.u[k - 1]).for_each(|gv, &uv| *gv *= act.deriv(uv));
            deltas[k - 1] = g;
        }
        deltas
    }

    /// Summed weight gradient `Σ_s δ_s ∂z_s/∂w` for output cotangents `δ`.
    pub fn vjp(&self, trace: &ForwardTrace, delta_out: Array2<f64>) -> Array1<f64> {
        let deltas = self.backward_deltas(trace, delta_out);
        let mut out = Vec::with_capacity(self.num_params());
        for k in 0..self.weights.len() {
            let gk = deltas[k].t().dot(&trace.h[k]);
            out.extend(gk.iter());
        }
        Array1::from(out)
    }

    /// Logit directional derivatives `∂z_s/∂w · v` for every sample.
    pub fn jvp(&self, trace: &ForwardTrace, v: &[f64]) -> Array2<f64> {
        let dirs = self.split_flat(v);
        let mut du = trace.h[0].dot(&dirs[0].t());
        for k in 1..self.weights.len() {
            let act = self.activation;
            let mut dh = du;
            Zip::from(&mut dh).and(&trace.u[k - 1]).for_each(|d, &uv| *d *= act.deriv(uv));
            du = trace.h[k].dot(&dirs[k].t()) + dh.dot(&self.weights[k].t());
        }
        du
    }

    /// Per-sample flattened gradients from per-sample output cotangents,
    /// one row per sample.
    pub fn per_sample_vjp(&self, trace: &ForwardTrace, delta_out: Array2<f64>) -> Array2<f64> {
        let n = trace.n();
        let deltas = self.backward_deltas(trace, delta_out);
        let off = self.layer_offsets();
        let mut out = Array2::zeros((n, self.num_params()));
        for s in 0..n {
            let mut row = out.row_mut(s);
            for k in 0..self.weights.len() {
                let d = deltas[k].row(s);
                let h = trace.h[k].row(s);
                let din = h.len();
                let mut seg = row.slice_mut(s![off[k]..off[k + 1]]);
                for (i, &di) in d.iter().enumerate() {
                    if di == 0.0 {
                        continue;
                    }
                    for j in 0..din {
                        seg[i * din + j] = di * h[j];
                    }
                }
            }
        }
        out
    }

    /// `(ĕ, ê)` on a dataset: cross-entropy in bits and the 0-1 error.
    pub fn loss_and_error(&self, data: &Dataset) -> Result<(f64, f64)> {
        let z = self.logits(data.inputs().view())?;
        Ok(loss_error_from_logits(z.view(), data.labels()))
    }

    /// Loss `ĕ` and its gradient over a batch.
    pub fn grad(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Array1<f64>)> {
        let trace = self.forward_batch(x)?;
        let (loss, delta) = loss_cotangent(&trace, labels, true);
        Ok((loss, self.vjp(&trace, delta)))
    }

    /// Per-sample gradients of `-log2 p(y_s|x_s)`, one row per sample.
    /// Their mean equals the batch gradient.
    pub fn per_sample_grads(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Array2<f64>> {
        let trace = self.forward_batch(x)?;
        let (_, delta) = loss_cotangent(&trace, labels, false);
        Ok(self.per_sample_vjp(&trace, delta))
    }

    /// Gradient of logit `i` with respect to the weights at one input.
    pub fn logit_jacobian(&self, x: ArrayView1<'_, f64>, i: usize) -> Result<Array1<f64>> {
        if i >= self.classes() {
            return Err(Error::input(format!("logit index {i} out of range")));
        }
        let trace = self.forward(x)?;
        let mut delta = Array2::zeros((1, self.classes()));
        delta[[0, i]] = 1.0;
        Ok(self.vjp(&trace, delta))
    }

    /// Full logit Jacobian `∂z/∂w` at one input, shape `m × p`.
    pub fn logit_jacobian_full(&self, x: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        let m = self.classes();
        let rows = x.insert_axis(Axis(0)).broadcast((m, x.len())).expect("broadcast").to_owned();
        let trace = self.forward_batch(rows.view())?;
        Ok(self.per_sample_vjp(&trace, Array2::eye(m)))
    }
}

/// Predicted class with ties resolved toward the smallest index.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn softmax_rows(z: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut p = z.to_owned();
    for mut row in p.rows_mut() {
        let mx = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - mx).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

/// `-log2 p(y|x)` from a logit row.
pub fn neg_log2_prob(z: ArrayView1<'_, f64>, y: usize) -> f64 {
    let mx = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
    (lse - z[y]) / LN_2
}

pub fn loss_error_from_logits(z: ArrayView2<'_, f64>, labels: &[usize]) -> (f64, f64) {
    let n = z.nrows();
    let mut loss = 0.0;
    let mut wrong = 0usize;
    for (row, &y) in z.rows().into_iter().zip(labels) {
        loss += neg_log2_prob(row, y);
        if argmax(row) != y {
            wrong += 1;
        }
    }
    (loss / n as f64, wrong as f64 / n as f64)
}

/// Mean loss over the batch and the logit cotangents `(p - e_y)/ln 2`,
/// divided by `n` when `mean` is set.
fn loss_cotangent(trace: &ForwardTrace, labels: &[usize], mean: bool) -> (f64, Array2<f64>) {
    let n = trace.n();
    let (loss, _) = loss_error_from_logits(trace.logits().view(), labels);
    let scale = if mean { 1.0 / (n as f64 * LN_2) } else { 1.0 / LN_2 };
    let mut delta = trace.probs.clone();
    for (s, &y) in labels.iter().enumerate() {
        delta[[s, y]] -= 1.0;
    }
    delta.mapv_inplace(|v| v * scale);
    (loss, delta)
}
