//! Small fixed-architecture function approximators with hand-written
//! backpropagation, plus an Adam optimizer.
//!
//! Three architectures are supported, all producing a single logit:
//!
//! * [`Architecture::TanhMlp`]: `in -> 64 -> 64 -> 1` with tanh hidden units
//!   (policy and value networks),
//! * [`Architecture::Linear`]: a single affine layer (linear label predictor),
//! * [`Architecture::ReluMlp`]: `in -> 64 -> 64 -> 1` with rectified-linear
//!   hidden units (high-capacity label predictor).
//!
//! Parameters live in one flat `Vec<f64>`; layer `l` stores its weight matrix
//! (row-major, `out x in`) followed by its bias. Gradients use the same layout,
//! which keeps the optimizer and the checkpoint format trivial.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HIDDEN: usize = 64;
const CHECKPOINT_MAGIC: &str = "ltfair-checkpoint v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    TanhMlp,
    Linear,
    ReluMlp,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::TanhMlp => "tanh_mlp",
            Architecture::Linear => "linear",
            Architecture::ReluMlp => "relu_mlp",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh_mlp" => Some(Architecture::TanhMlp),
            "linear" => Some(Architecture::Linear),
            "relu_mlp" => Some(Architecture::ReluMlp),
            _ => None,
        }
    }

    fn layer_sizes(self, input: usize) -> Vec<usize> {
        match self {
            Architecture::Linear => vec![input, 1],
            Architecture::TanhMlp | Architecture::ReluMlp => vec![input, HIDDEN, HIDDEN, 1],
        }
    }

    /// Pseudo-dimension used by the error bound: `p + 1` for the linear
    /// predictor and `W * L * ln W` (constant 1) for the networks.
    pub fn pseudo_dimension(self, input: usize) -> f64 {
        match self {
            Architecture::Linear => input as f64 + 1.0,
            Architecture::TanhMlp | Architecture::ReluMlp => {
                let sizes = self.layer_sizes(input);
                let w: usize = sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
                let layers = (sizes.len() - 1) as f64;
                let w = w as f64;
                w * layers * w.ln()
            }
        }
    }
}

/// How to initialise a freshly built network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Orthogonal weights with the given gains, zero biases.
    Orthogonal {
        hidden_gain: f64,
        output_gain: f64,
    },
    /// Uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    FanInUniform,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(z))`, stable for large `|z|`.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// A multilayer perceptron with a scalar logit output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations retained by [`Mlp::forward_batch`] for the backward pass.
#[derive(Debug, Default, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `acts[l]` holds the (post-activation) input of layer `l`; the last
    /// entry holds the logits.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().map(|v| &v[..self.batch]).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, input: usize, init: Init, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch, input);
        match init {
            Init::Zeros => {}
            Init::Orthogonal {
                hidden_gain,
                output_gain,
            } => {
                let n_layers = net.sizes.len() - 1;
                for l in 0..n_layers {
                    let (rows, cols) = (net.sizes[l + 1], net.sizes[l]);
                    let gain = if l + 1 == n_layers {
                        output_gain
                    } else {
                        hidden_gain
                    };
                    let w = orthogonal(rows, cols, gain, rng);
                    let off = net.layer_offset(l);
                    net.params[off..off + rows * cols].copy_from_slice(&w);
                }
            }
            Init::FanInUniform => {
                for l in 0..net.sizes.len() - 1 {
                    let (rows, cols) = (net.sizes[l + 1], net.sizes[l]);
                    let bound = 1.0 / (cols as f64).sqrt();
                    let off = net.layer_offset(l);
                    for p in &mut net.params[off..off + rows * cols + rows] {
                        *p = rng.random_range(-bound..bound);
                    }
                }
            }
        }
        net
    }

    pub fn zeros(arch: Architecture, input: usize) -> Self {
        let sizes = arch.layer_sizes(input);
        let n: usize = sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        Self {
            arch,
            sizes,
            params: vec![0.0; n],
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.sizes[..=layer]
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum::<usize>()
    }

    fn activate(&self, v: f64) -> f64 {
        match self.arch {
            Architecture::TanhMlp => v.tanh(),
            Architecture::ReluMlp => v.max(0.0),
            Architecture::Linear => v,
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::Config(format!(
                "input dimension {} does not match network input {}",
                len,
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logit for one input vector.
    pub fn logit(&self, input: &[f64]) -> Result<f64> {
        self.check_input(input.len())?;
        Ok(self.logit_unchecked(input))
    }

    pub(crate) fn logit_unchecked(&self, input: &[f64]) -> f64 {
        let n_layers = self.sizes.len() - 1;
        let mut cur: Vec<f64> = input.to_vec();
        let mut next = Vec::with_capacity(HIDDEN);
        for l in 0..n_layers {
            let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
            let off = self.layer_offset(l);
            let w = &self.params[off..off + rows * cols];
            let b = &self.params[off + rows * cols..off + rows * cols + rows];
            next.clear();
            for r in 0..rows {
                let z = dot(&w[r * cols..(r + 1) * cols], &cur) + b[r];
                next.push(if l + 1 == n_layers {
                    z
                } else {
                    self.activate(z)
                });
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    /// Probability `sigmoid(logit)`.
    pub fn prob(&self, input: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(input)?))
    }

    /// Forward pass over `batch` row-major inputs; logits are available via
    /// [`ForwardCache::logits`].
    pub fn forward_batch(
        &self,
        inputs: &[f64],
        batch: usize,
        cache: &mut ForwardCache,
    ) -> Result<()> {
        if inputs.len() != batch * self.input_dim() {
            return Err(Error::Config(format!(
                "batch input has {} values, expected {} x {}",
                inputs.len(),
                batch,
                self.input_dim()
            )));
        }
        let n_layers = self.sizes.len() - 1;
        cache.batch = batch;
        cache.acts.resize_with(n_layers + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(inputs);
        for l in 0..n_layers {
            let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
            let off = self.layer_offset(l);
            let w = &self.params[off..off + rows * cols];
            let b = &self.params[off + rows * cols..off + rows * cols + rows];
            let (head, tail) = cache.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            out.clear();
            out.resize(batch * rows, 0.0);
            let last = l + 1 == n_layers;
            for s in 0..batch {
                let x = &input[s * cols..(s + 1) * cols];
                let o = &mut out[s * rows..(s + 1) * rows];
                for r in 0..rows {
                    let z = dot(&w[r * cols..(r + 1) * cols], x) + b[r];
                    o[r] = if last { z } else { self.activate(z) };
                }
            }
        }
        Ok(())
    }

    /// Accumulates `sum_s dlogits[s] * d logit_s / d theta` into `grad`.
    pub fn backward_batch(&self, cache: &mut ForwardCache, dlogits: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        debug_assert_eq!(dlogits.len(), cache.batch);
        let batch = cache.batch;
        let n_layers = self.sizes.len() - 1;
        cache.delta.clear();
        cache.delta.extend_from_slice(dlogits);
        for l in (0..n_layers).rev() {
            let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
            let off = self.layer_offset(l);
            let input = &cache.acts[l];
            {
                let (gw, gb) = grad[off..off + rows * cols + rows].split_at_mut(rows * cols);
                for s in 0..batch {
                    let x = &input[s * cols..(s + 1) * cols];
                    let d = &cache.delta[s * rows..(s + 1) * rows];
                    for r in 0..rows {
                        if d[r] != 0.0 {
                            axpy(d[r], x, &mut gw[r * cols..(r + 1) * cols]);
                            gb[r] += d[r];
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + rows * cols];
            cache.delta_prev.clear();
            cache.delta_prev.resize(batch * cols, 0.0);
            for s in 0..batch {
                let d = &cache.delta[s * rows..(s + 1) * rows];
                let dp = &mut cache.delta_prev[s * cols..(s + 1) * cols];
                for r in 0..rows {
                    if d[r] != 0.0 {
                        axpy(d[r], &w[r * cols..(r + 1) * cols], dp);
                    }
                }
                let a = &input[s * cols..(s + 1) * cols];
                match self.arch {
                    Architecture::TanhMlp => {
                        for (g, &ai) in dp.iter_mut().zip(a) {
                            *g *= 1.0 - ai * ai;
                        }
                    }
                    Architecture::ReluMlp => {
                        for (g, &ai) in dp.iter_mut().zip(a) {
                            if ai <= 0.0 {
                                *g = 0.0;
                            }
                        }
                    }
                    Architecture::Linear => {}
                }
            }
            std::mem::swap(&mut cache.delta, &mut cache.delta_prev);
        }
    }

    /// Gradient of `loss(logits)` where `dloss` maps logits to per-sample
    /// derivatives; returns the gradient and the loss value.
    pub fn grad<F>(&self, inputs: &[f64], batch: usize, dloss: F) -> Result<(f64, Vec<f64>)>
    where
        F: FnOnce(&[f64]) -> (f64, Vec<f64>),
    {
        let mut cache = ForwardCache::default();
        self.forward_batch(inputs, batch, &mut cache)?;
        let (loss, dl) = dloss(cache.logits());
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {loss}")));
        }
        let mut g = vec![0.0; self.params.len()];
        self.backward_batch(&mut cache, &dl, &mut g);
        Ok((loss, g))
    }

    pub fn to_checkpoint(&self) -> String {
        let hidden: Vec<String> = self.sizes[1..self.sizes.len() - 1]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut out = format!(
            "{CHECKPOINT_MAGIC} arch={} input={} hidden={} params={}\n",
            self.arch.name(),
            self.input_dim(),
            if hidden.is_empty() {
                "-".to_string()
            } else {
                hidden.join(",")
            },
            self.params.len()
        );
        for p in &self.params {
            let _ = writeln!(out, "{p:e}");
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))?;
        let rest = header
            .strip_prefix(CHECKPOINT_MAGIC)
            .ok_or_else(|| Error::Checkpoint(format!("bad header {header:?}")))?;
        let mut arch = None;
        let mut input = None;
        let mut count = None;
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("arch", v)) => arch = Architecture::from_name(v),
                Some(("input", v)) => input = v.parse::<usize>().ok(),
                Some(("params", v)) => count = v.parse::<usize>().ok(),
                _ => {}
            }
        }
        let (arch, input, count) = match (arch, input, count) {
            (Some(a), Some(i), Some(c)) => (a, i, c),
            _ => return Err(Error::Checkpoint(format!("incomplete header {header:?}"))),
        };
        let mut net = Mlp::zeros(arch, input);
        if net.param_count() != count {
            return Err(Error::Checkpoint(format!(
                "header declares {count} params, architecture needs {}",
                net.param_count()
            )));
        }
        let mut n = 0;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            if n >= count {
                return Err(Error::Checkpoint("too many parameter lines".into()));
            }
            net.params[n] = line
                .trim()
                .parse()
                .map_err(|e| Error::Checkpoint(format!("line {}: {e}", n + 2)))?;
            n += 1;
        }
        if n != count {
            return Err(Error::Checkpoint(format!(
                "expected {count} params, found {n}"
            )));
        }
        Ok(net)
    }
}

/// `rows x cols` matrix with orthonormal rows (or columns), scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    // Gram-Schmidt on the taller orientation, then transpose back if needed.
    let (n, m) = if rows >= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    // m orthonormal vectors of length n
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    while basis.len() < m {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let proj = dot(&v, b);
            axpy(-proj, b, &mut v);
        }
        let norm = dot(&v, &v).sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut w = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            w[r * cols + c] = gain
                * if rows >= cols {
                    basis[c][r]
                } else {
                    basis[r][c]
                };
        }
    }
    w
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Config(
                "optimizer state and parameter shapes differ".into(),
            ));
        }
        if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient {bad}")));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = self.lr / bc1;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= step * self.m[i] / ((self.v[i] / bc2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Rescales `grads` in place so its Euclidean norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = dot(grads, grads).sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_gives_half() {
        for arch in [
            Architecture::TanhMlp,
            Architecture::Linear,
            Architecture::ReluMlp,
        ] {
            let net = Mlp::zeros(arch, 7);
            assert_eq!(net.prob(&[0.3; 7]).unwrap(), 0.5);
        }
    }

    #[test]
    fn linear_matches_closed_form() {
        let mut net = Mlp::zeros(Architecture::Linear, 3);
        net.params_mut().copy_from_slice(&[0.5, -1.0, 2.0, 0.25]);
        let x = [1.0, 2.0, -0.5];
        let z: f64 = 0.5 - 2.0 - 1.0 + 0.25;
        assert!((net.prob(&x).unwrap() - 1.0 / (1.0 + (-z).exp())).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let net = Mlp::zeros(Architecture::TanhMlp, 4);
        assert!(matches!(net.logit(&[1.0; 5]), Err(Error::Config(_))));
    }

    #[test]
    fn random_params_give_finite_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for arch in [
            Architecture::TanhMlp,
            Architecture::ReluMlp,
            Architecture::Linear,
        ] {
            let net = Mlp::new(arch, 10, Init::FanInUniform, &mut rng);
            for _ in 0..50 {
                let x: Vec<f64> = (0..10).map(|_| rng.random_range(-10.0..10.0)).collect();
                let p = net.prob(&x).unwrap();
                assert!(p.is_finite() && (0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::new(
            Architecture::TanhMlp,
            5,
            Init::Orthogonal {
                hidden_gain: 2f64.sqrt(),
                output_gain: 1.0,
            },
            &mut rng,
        );
        let xs: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut cache = ForwardCache::default();
        net.forward_batch(&xs, 3, &mut cache).unwrap();
        for s in 0..3 {
            let single = net.logit(&xs[s * 5..(s + 1) * 5]).unwrap();
            assert!((single - cache.logits()[s]).abs() < 1e-14);
        }
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = orthogonal(4, 10, 1.0, &mut rng);
        for i in 0..4 {
            for j in 0..4 {
                let d = dot(&w[i * 10..(i + 1) * 10], &w[j * 10..(j + 1) * 10]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(Architecture::TanhMlp, 3, Init::FanInUniform, &mut rng);
        let (_, g) = net.grad(&[0.1, 0.2, 0.3], 1, |_| (4.0, vec![0.0])).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_loss_on_linear_layer() {
        // loss = 0.5 * (w.x + b - t)^2  => dw = (pred - t) x, db = pred - t
        let mut net = Mlp::zeros(Architecture::Linear, 2);
        net.params_mut().copy_from_slice(&[0.3, -0.7, 0.1]);
        let x = [2.0, 1.0];
        let t = 1.5;
        let (_, g) = net
            .grad(&x, 1, |z| {
                let r = z[0] - t;
                (0.5 * r * r, vec![r])
            })
            .unwrap();
        let pred = 0.3 * 2.0 - 0.7 + 0.1;
        let r = pred - t;
        assert!((g[0] - r * 2.0).abs() < 1e-14);
        assert!((g[1] - r).abs() < 1e-14);
        assert!((g[2] - r).abs() < 1e-14);
    }

    #[test]
    fn non_finite_loss_is_numerical_error() {
        let net = Mlp::zeros(Architecture::Linear, 1);
        let r = net.grad(&[1.0], 1, |_| (f64::NAN, vec![0.0]));
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0, 3.5];
        let before = p.clone();
        let mut opt = Adam::new(3, 0.1);
        for _ in 0..5 {
            opt.step(&mut p, &[0.0; 3]).unwrap();
        }
        for (a, b) in p.iter().zip(&before) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_descends_half_square() {
        let mut theta = vec![1.0];
        let mut opt = Adam::new(1, 0.01);
        let g = [theta[0]];
        opt.step(&mut theta, &g).unwrap();
        assert!(0.5 * theta[0] * theta[0] < 0.5);
    }

    #[test]
    fn adam_converges_on_convex_quadratic() {
        // f = 0.5 * (3 x^2 + y^2 + x y)
        let grad = |p: &[f64]| vec![3.0 * p[0] + 0.5 * p[1], p[1] + 0.5 * p[0]];
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..200 {
            let g = grad(&p);
            opt.step(&mut p, &g).unwrap();
        }
        let g = grad(&p);
        assert!((g[0] * g[0] + g[1] * g[1]).sqrt() < 1e-3, "grad {g:?}");
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![0.0];
        let mut opt = Adam::new(1, 0.1);
        assert!(matches!(
            opt.step(&mut p, &[f64::INFINITY]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for arch in [
            Architecture::TanhMlp,
            Architecture::Linear,
            Architecture::ReluMlp,
        ] {
            let net = Mlp::new(arch, 6, Init::FanInUniform, &mut rng);
            let back = Mlp::from_checkpoint(&net.to_checkpoint()).unwrap();
            assert_eq!(net, back);
        }
    }

    #[test]
    fn checkpoint_rejects_truncation() {
        let net = Mlp::zeros(Architecture::Linear, 3);
        let text = net.to_checkpoint();
        let cut: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(Mlp::from_checkpoint(&cut).is_err());
    }
}
