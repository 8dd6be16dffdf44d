//! Multilayer-perceptron engine with nested differentiation.
//!
//! The network is a plain affine-tanh stack with a linear scalar output.
//! Besides the value, the engine propagates first derivatives with respect to
//! every input and diagonal second derivatives with respect to the state
//! inputs ("jets"), exactly and analytically, layer by layer. A reverse pass
//! over that propagation yields the parameter gradient of any scalar loss
//! built from jet fields, which is what residual-penalty training needs.
//!
//! Inputs are affinely normalized to `[-1, 1]` per dimension using bounds
//! stored in the parameters; jet derivatives are chain-ruled back to physical
//! units, so callers never see the normalized scale.
//!
//! Batched gradients are reduced over fixed-size chunks in index order, so
//! results are bit-identical for any worker count.

use rand::distributions::{Distribution, Uniform};
use rayon::prelude::*;
use thiserror::Error;

use crate::rng;

pub mod checkpoint;

/// Fixed batch chunk for parallel reductions; part of the determinism
/// contract, do not make configurable.
const PARALLEL_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    BadShape(String),
    #[error("non-finite gradient contribution at loss term {term_index}")]
    NonFiniteGradient { term_index: usize },
    #[error("non-finite gradient after reduction")]
    NonFiniteSum,
}

/// Hidden-layer activation tag. Only `tanh` is supported; the tag exists so
/// checkpoints are self-describing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    w: usize,
    b: usize,
}

fn layer_offsets(layer_sizes: &[usize]) -> Vec<LayerOffsets> {
    let mut offsets = Vec::with_capacity(layer_sizes.len() - 1);
    let mut cursor = 0;
    for l in 0..layer_sizes.len() - 1 {
        let (n_in, n_out) = (layer_sizes[l], layer_sizes[l + 1]);
        offsets.push(LayerOffsets { w: cursor, b: cursor + n_in * n_out });
        cursor += n_in * n_out + n_out;
    }
    offsets
}

/// Learnable state of the predictor: layer shapes, a flat parameter vector
/// (layer-major, weights row-major then biases), the activation tag, and the
/// input-normalization bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    state_dim: usize,
    input_lo: Vec<f64>,
    input_hi: Vec<f64>,
    theta: Vec<f64>,
    activation: Activation,
}

impl MlpParams {
    /// Builds parameters from a flat vector. The flat order is layer-major
    /// with each layer's weights row-major followed by its biases.
    pub fn from_flat(layer_sizes: Vec<usize>, theta: Vec<f64>) -> Result<Self, NetError> {
        if layer_sizes.len() < 2 {
            return Err(NetError::BadShape("need at least input and output layers".into()));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(NetError::BadShape("zero-size layer".into()));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(NetError::BadShape("output layer must have size 1".into()));
        }
        let expected: usize = layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if theta.len() != expected {
            return Err(NetError::BadShape(format!(
                "flat parameter vector has length {}, expected {}",
                theta.len(),
                expected
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(NetError::BadShape("non-finite parameter entry".into()));
        }
        let d_in = layer_sizes[0];
        Ok(Self {
            state_dim: d_in.saturating_sub(1).max(1).min(d_in),
            layer_sizes,
            input_lo: vec![-1.0; d_in],
            input_hi: vec![1.0; d_in],
            theta,
            activation: Activation::Tanh,
        })
    }

    /// Sets the physical input bounds used for normalization. Defaults to
    /// `[-1, 1]` per input (the identity map).
    pub fn with_input_bounds(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, NetError> {
        if lo.len() != self.d_in() || hi.len() != self.d_in() {
            return Err(NetError::BadShape("normalization bounds must match input size".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(NetError::BadShape("normalization bounds must be finite and ordered".into()));
        }
        self.input_lo = lo;
        self.input_hi = hi;
        Ok(self)
    }

    /// Declares how many leading inputs are state dimensions (the rest being
    /// time and, optionally, the drift parameter). Defaults to `d_in - 1`.
    pub fn with_state_dim(mut self, state_dim: usize) -> Result<Self, NetError> {
        if state_dim == 0 || state_dim + 1 > self.d_in() {
            return Err(NetError::BadShape(format!(
                "state_dim {} incompatible with input size {}",
                state_dim,
                self.d_in()
            )));
        }
        self.state_dim = state_dim;
        Ok(self)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn d_in(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_lo(&self) -> &[f64] {
        &self.input_lo
    }

    pub fn input_hi(&self) -> &[f64] {
        &self.input_hi
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn layer_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn layer(&self, offsets: &[LayerOffsets], l: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let o = offsets[l];
        (&self.theta[o.w..o.w + n_in * n_out], &self.theta[o.b..o.b + n_out])
    }

    /// True when `input` lies inside the normalization bounds (no
    /// extrapolation).
    pub fn input_in_bounds(&self, input: &[f64]) -> bool {
        input.len() == self.d_in()
            && input
                .iter()
                .zip(self.input_lo.iter().zip(&self.input_hi))
                .all(|(x, (lo, hi))| x >= lo && x <= hi)
    }

    fn normalize_into(&self, input: &[f64], z: &mut [f64]) {
        for i in 0..input.len() {
            let scale = 2.0 / (self.input_hi[i] - self.input_lo[i]);
            z[i] = scale * (input[i] - self.input_lo[i]) - 1.0;
        }
    }

    fn input_scale(&self, i: usize) -> f64 {
        2.0 / (self.input_hi[i] - self.input_lo[i])
    }
}

/// Glorot-uniform initialization: weights uniform on `[-L, L]` with
/// `L = sqrt(6 / (fan_in + fan_out))`, biases zero. Deterministic per seed;
/// draw order is layer-major, row-major.
pub fn init_glorot(layer_sizes: &[usize], seed: u64) -> Result<MlpParams, NetError> {
    if layer_sizes.len() < 2 {
        return Err(NetError::BadShape("need at least input and output layers".into()));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(NetError::BadShape("zero-size layer".into()));
    }
    let mut stream = rng::stream(seed);
    let mut theta = Vec::new();
    for w in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        theta.extend((0..fan_in * fan_out).map(|_| dist.sample(&mut stream)));
        theta.extend(std::iter::repeat(0.0).take(fan_out));
    }
    MlpParams::from_flat(layer_sizes.to_vec(), theta)
}

/// Network output and its exact input derivatives at one point: the value,
/// the gradient with respect to every input (states, time, and lambda when
/// present), and the diagonal second derivatives with respect to the state
/// inputs. All in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct NetJet {
    pub value: f64,
    pub input_grad: Vec<f64>,
    pub input_hess_diag: Vec<f64>,
}

impl NetJet {
    fn zeros(d_in: usize, n_hess: usize) -> Self {
        Self { value: 0.0, input_grad: vec![0.0; d_in], input_hess_diag: vec![0.0; n_hess] }
    }

    fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.input_grad.iter().all(|v| v.is_finite())
            && self.input_hess_diag.iter().all(|v| v.is_finite())
    }
}

/// Adjoint of a scalar loss with respect to the jet fields.
#[derive(Debug, Clone)]
pub struct JetCotangent {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl JetCotangent {
    pub fn zeros(d_in: usize, n_hess: usize) -> Self {
        Self { value: 0.0, grad: vec![0.0; d_in], hess: vec![0.0; n_hess] }
    }

    fn clear(&mut self) {
        self.value = 0.0;
        self.grad.iter_mut().for_each(|v| *v = 0.0);
        self.hess.iter_mut().for_each(|v| *v = 0.0);
    }

    fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad.iter().all(|v| v.is_finite())
            && self.hess.iter().all(|v| v.is_finite())
    }
}

/// A per-point scalar loss expressed over the network jet at its input.
pub trait JetLoss: Sync + Send {
    /// The network input this term is evaluated at.
    fn input(&self) -> &[f64];
    /// Loss value given the jet at [`JetLoss::input`].
    fn loss(&self, jet: &NetJet) -> f64;
    /// Writes the derivative of the loss with respect to each jet field.
    fn cotangent_into(&self, jet: &NetJet, cot: &mut JetCotangent);
}

/// Scratch space for jet propagation through one network. `pre[l]` holds the
/// affine outputs of layer `l` and `act[l]` the inputs to layer `l`, each as
/// per-unit channel blocks `[value, d/d input_0 .., d2/d state_0^2 ..]`.
struct JetWorkspace {
    channels: usize,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    adj_pre: Vec<f64>,
    adj_act: Vec<f64>,
}

impl JetWorkspace {
    fn new(params: &MlpParams) -> Self {
        let channels = 1 + params.d_in() + params.state_dim();
        let layers = params.layer_count();
        let mut pre = Vec::with_capacity(layers);
        let mut act = Vec::with_capacity(layers);
        let mut max_units = 0;
        for l in 0..layers {
            act.push(vec![0.0; params.layer_sizes[l] * channels]);
            pre.push(vec![0.0; params.layer_sizes[l + 1] * channels]);
            max_units = max_units.max(params.layer_sizes[l]).max(params.layer_sizes[l + 1]);
        }
        Self {
            channels,
            pre,
            act,
            adj_pre: vec![0.0; max_units * channels],
            adj_act: vec![0.0; max_units * channels],
        }
    }
}

/// Channel-block affine map: value channel gets the bias, every channel gets
/// the weight contraction. Accumulation order over inputs is ascending, which
/// keeps the value channel bit-identical to [`forward`].
fn affine_block(w: &[f64], b: &[f64], input: &[f64], out: &mut [f64], c: usize) {
    let n_in = input.len() / c;
    let n_out = b.len();
    for j in 0..n_out {
        let y = &mut out[j * c..(j + 1) * c];
        y.fill(0.0);
        y[0] = b[j];
        let row = &w[j * n_in..(j + 1) * n_in];
        for (n, &wv) in row.iter().enumerate() {
            let a = &input[n * c..(n + 1) * c];
            for t in 0..c {
                y[t] += wv * a[t];
            }
        }
    }
}

/// Monomorphized twin of [`affine_block`]. The fixed-size accumulator lives
/// in registers and the channel lanes vectorize; each lane keeps the same
/// ascending-input accumulation chain as the dynamic version, so results are
/// bit-identical.
fn affine_block_c<const C: usize>(w: &[f64], b: &[f64], input: &[f64], out: &mut [f64]) {
    let n_in = input.len() / C;
    for (j, (y, &bj)) in out.chunks_exact_mut(C).zip(b).enumerate() {
        let mut acc = [0.0f64; C];
        acc[0] = bj;
        let row = &w[j * n_in..(j + 1) * n_in];
        for (a, &wv) in input.chunks_exact(C).zip(row) {
            for t in 0..C {
                acc[t] += wv * a[t];
            }
        }
        y.copy_from_slice(&acc);
    }
}

/// tanh activation on a channel block. With `a = tanh(y)`, `p = 1 - a^2` and
/// `q = -2 a p`, first derivatives scale by `p` and diagonal second
/// derivatives pick up the curvature term `q (dy/dx_k)^2`.
fn activate_block(pre: &[f64], act: &mut [f64], c: usize, d_in: usize, n_hess: usize) {
    let units = pre.len() / c;
    for j in 0..units {
        let y = &pre[j * c..(j + 1) * c];
        let out = &mut act[j * c..(j + 1) * c];
        let a = y[0].tanh();
        let p = 1.0 - a * a;
        let q = -2.0 * a * p;
        out[0] = a;
        for i in 0..d_in {
            out[1 + i] = p * y[1 + i];
        }
        for k in 0..n_hess {
            let ch = 1 + d_in + k;
            out[ch] = q * y[1 + k] * y[1 + k] + p * y[ch];
        }
    }
}

/// Monomorphized twin of [`activate_block`].
fn activate_block_c<const C: usize>(pre: &[f64], act: &mut [f64], d_in: usize, n_hess: usize) {
    for (y, out) in pre.chunks_exact(C).zip(act.chunks_exact_mut(C)) {
        let a = y[0].tanh();
        let p = 1.0 - a * a;
        let q = -2.0 * a * p;
        out[0] = a;
        for i in 0..d_in {
            out[1 + i] = p * y[1 + i];
        }
        for k in 0..n_hess {
            let ch = 1 + d_in + k;
            out[ch] = q * y[1 + k] * y[1 + k] + p * y[ch];
        }
    }
}

fn forward_jet_ws(
    params: &MlpParams,
    offsets: &[LayerOffsets],
    input: &[f64],
    ws: &mut JetWorkspace,
    jet: &mut NetJet,
) -> Result<(), NetError> {
    let d_in = params.d_in();
    if input.len() != d_in {
        return Err(NetError::BadShape(format!(
            "input has length {}, expected {}",
            input.len(),
            d_in
        )));
    }
    let c = ws.channels;
    let n_hess = params.state_dim();
    // Seed the input block: value channel carries the normalized input, the
    // n-th gradient channel the normalization scale (the chain-rule factor to
    // physical units), second-derivative channels zero.
    let seed = &mut ws.act[0];
    seed.fill(0.0);
    for n in 0..d_in {
        let scale = params.input_scale(n);
        seed[n * c] = scale * (input[n] - params.input_lo[n]) - 1.0;
        seed[n * c + 1 + n] = scale;
    }
    let layers = params.layer_count();
    for l in 0..layers {
        let (w, b) = params.layer(offsets, l);
        affine_block(w, b, &ws.act[l], &mut ws.pre[l], c);
        if l + 1 < layers {
            activate_block(&ws.pre[l], &mut ws.act[l + 1], c, d_in, n_hess);
        }
    }
    let out = &ws.pre[layers - 1];
    jet.value = out[0];
    jet.input_grad.resize(d_in, 0.0);
    jet.input_grad.copy_from_slice(&out[1..1 + d_in]);
    jet.input_hess_diag.resize(n_hess, 0.0);
    jet.input_hess_diag.copy_from_slice(&out[1 + d_in..1 + d_in + n_hess]);
    Ok(())
}

/// Reverse pass over the jet propagation: accumulates
/// `d <cot, jet> / d theta` into `grad` (flat layout, unscaled).
fn pullback_ws(
    params: &MlpParams,
    offsets: &[LayerOffsets],
    ws: &mut JetWorkspace,
    cot: &JetCotangent,
    grad: &mut [f64],
) {
    let c = ws.channels;
    let d_in = params.d_in();
    let n_hess = params.state_dim();
    let layers = params.layer_count();
    ws.adj_pre[0] = cot.value;
    ws.adj_pre[1..1 + d_in].copy_from_slice(&cot.grad);
    ws.adj_pre[1 + d_in..1 + d_in + n_hess].copy_from_slice(&cot.hess);
    for l in (0..layers).rev() {
        let (n_in, n_out) = (params.layer_sizes[l], params.layer_sizes[l + 1]);
        let o = offsets[l];
        let w = &params.theta[o.w..o.w + n_in * n_out];
        ws.adj_act[..n_in * c].fill(0.0);
        for j in 0..n_out {
            let yadj = &ws.adj_pre[j * c..(j + 1) * c];
            grad[o.b + j] += yadj[0];
            let row = &w[j * n_in..(j + 1) * n_in];
            let wgrad = &mut grad[o.w + j * n_in..o.w + (j + 1) * n_in];
            let acts = &ws.act[l];
            for n in 0..n_in {
                let a = &acts[n * c..(n + 1) * c];
                let mut acc = 0.0;
                for t in 0..c {
                    acc += yadj[t] * a[t];
                }
                wgrad[n] += acc;
                let wv = row[n];
                let aa = &mut ws.adj_act[n * c..(n + 1) * c];
                for t in 0..c {
                    aa[t] += wv * yadj[t];
                }
            }
        }
        if l == 0 {
            break;
        }
        // Reverse of activate_block: from the adjoint over act[l] to the
        // adjoint over pre[l-1]. p and q as in the forward pass; q'(a) =
        // 6a^2 - 2 and p'(a) = -2a close the chain through the unit value.
        let pre = &ws.pre[l - 1];
        let acts = &ws.act[l];
        for j in 0..n_in {
            let y = &pre[j * c..(j + 1) * c];
            let abar_in = &ws.adj_act[j * c..(j + 1) * c];
            let a = acts[j * c];
            let p = 1.0 - a * a;
            let q = -2.0 * a * p;
            let ybar = &mut ws.adj_pre[j * c..(j + 1) * c];
            let mut pbar = 0.0;
            let mut qbar = 0.0;
            for i in 0..d_in {
                ybar[1 + i] = abar_in[1 + i] * p;
                pbar += abar_in[1 + i] * y[1 + i];
            }
            for k in 0..n_hess {
                let ch = 1 + d_in + k;
                ybar[ch] = abar_in[ch] * p;
                pbar += abar_in[ch] * y[ch];
                qbar += abar_in[ch] * y[1 + k] * y[1 + k];
                ybar[1 + k] += abar_in[ch] * q * 2.0 * y[1 + k];
            }
            let abar = abar_in[0] + pbar * (-2.0 * a) + qbar * (6.0 * a * a - 2.0);
            ybar[0] = abar * p;
        }
    }
}

/// Monomorphized twin of [`forward_jet_ws`].
fn forward_jet_ws_c<const C: usize>(
    params: &MlpParams,
    offsets: &[LayerOffsets],
    input: &[f64],
    ws: &mut JetWorkspace,
    jet: &mut NetJet,
) -> Result<(), NetError> {
    let d_in = params.d_in();
    if input.len() != d_in {
        return Err(NetError::BadShape(format!(
            "input has length {}, expected {}",
            input.len(),
            d_in
        )));
    }
    debug_assert_eq!(ws.channels, C);
    let n_hess = params.state_dim();
    let seed = &mut ws.act[0];
    seed.fill(0.0);
    for n in 0..d_in {
        let scale = params.input_scale(n);
        seed[n * C] = scale * (input[n] - params.input_lo[n]) - 1.0;
        seed[n * C + 1 + n] = scale;
    }
    let layers = params.layer_count();
    for l in 0..layers {
        let (w, b) = params.layer(offsets, l);
        affine_block_c::<C>(w, b, &ws.act[l], &mut ws.pre[l]);
        if l + 1 < layers {
            activate_block_c::<C>(&ws.pre[l], &mut ws.act[l + 1], d_in, n_hess);
        }
    }
    let out = &ws.pre[layers - 1];
    jet.value = out[0];
    jet.input_grad.resize(d_in, 0.0);
    jet.input_grad.copy_from_slice(&out[1..1 + d_in]);
    jet.input_hess_diag.resize(n_hess, 0.0);
    jet.input_hess_diag.copy_from_slice(&out[1 + d_in..1 + d_in + n_hess]);
    Ok(())
}

/// Monomorphized twin of [`pullback_ws`].
fn pullback_ws_c<const C: usize>(
    params: &MlpParams,
    offsets: &[LayerOffsets],
    ws: &mut JetWorkspace,
    cot: &JetCotangent,
    grad: &mut [f64],
) {
    let d_in = params.d_in();
    let n_hess = params.state_dim();
    let layers = params.layer_count();
    ws.adj_pre[0] = cot.value;
    ws.adj_pre[1..1 + d_in].copy_from_slice(&cot.grad);
    ws.adj_pre[1 + d_in..1 + d_in + n_hess].copy_from_slice(&cot.hess);
    for l in (0..layers).rev() {
        let (n_in, n_out) = (params.layer_sizes[l], params.layer_sizes[l + 1]);
        let o = offsets[l];
        let w = &params.theta[o.w..o.w + n_in * n_out];
        ws.adj_act[..n_in * C].fill(0.0);
        let acts = &ws.act[l];
        for j in 0..n_out {
            let mut yadj = [0.0f64; C];
            yadj.copy_from_slice(&ws.adj_pre[j * C..(j + 1) * C]);
            grad[o.b + j] += yadj[0];
            let row = &w[j * n_in..(j + 1) * n_in];
            let wgrad = &mut grad[o.w + j * n_in..o.w + (j + 1) * n_in];
            for (n, (a, aa)) in
                acts.chunks_exact(C).zip(ws.adj_act.chunks_exact_mut(C)).enumerate()
            {
                let mut dot = 0.0;
                for t in 0..C {
                    dot += yadj[t] * a[t];
                }
                wgrad[n] += dot;
                let wv = row[n];
                for t in 0..C {
                    aa[t] += wv * yadj[t];
                }
            }
        }
        if l == 0 {
            break;
        }
        let pre = &ws.pre[l - 1];
        for j in 0..n_in {
            let y = &pre[j * C..(j + 1) * C];
            let abar_in = &ws.adj_act[j * C..(j + 1) * C];
            let a = ws.act[l][j * C];
            let p = 1.0 - a * a;
            let q = -2.0 * a * p;
            let ybar = &mut ws.adj_pre[j * C..(j + 1) * C];
            let mut pbar = 0.0;
            let mut qbar = 0.0;
            for i in 0..d_in {
                ybar[1 + i] = abar_in[1 + i] * p;
                pbar += abar_in[1 + i] * y[1 + i];
            }
            for k in 0..n_hess {
                let ch = 1 + d_in + k;
                ybar[ch] = abar_in[ch] * p;
                pbar += abar_in[ch] * y[ch];
                qbar += abar_in[ch] * y[1 + k] * y[1 + k];
                ybar[1 + k] += abar_in[ch] * q * 2.0 * y[1 + k];
            }
            let abar = abar_in[0] + pbar * (-2.0 * a) + qbar * (6.0 * a * a - 2.0);
            ybar[0] = abar * p;
        }
    }
}

/// Chunk body of [`loss_param_gradient`], monomorphized per channel count.
fn jet_chunk<const C: usize, L: JetLoss>(
    params: &MlpParams,
    offsets: &[LayerOffsets],
    terms: &[L],
    start: usize,
    end: usize,
) -> Result<(f64, Vec<f64>), NetError> {
    let mut ws = JetWorkspace::new(params);
    let mut jet = NetJet::zeros(params.d_in(), params.state_dim());
    let mut cot = JetCotangent::zeros(params.d_in(), params.state_dim());
    let mut grad = vec![0.0; params.param_count()];
    let mut loss_sum = 0.0;
    for (term_index, term) in terms[start..end].iter().enumerate().map(|(k, t)| (start + k, t)) {
        forward_jet_ws_c::<C>(params, offsets, term.input(), &mut ws, &mut jet)?;
        if !jet.is_finite() {
            return Err(NetError::NonFiniteGradient { term_index });
        }
        let value = term.loss(&jet);
        if !value.is_finite() {
            return Err(NetError::NonFiniteGradient { term_index });
        }
        loss_sum += value;
        cot.clear();
        term.cotangent_into(&jet, &mut cot);
        if !cot.is_finite() {
            return Err(NetError::NonFiniteGradient { term_index });
        }
        pullback_ws_c::<C>(params, offsets, &mut ws, &cot, &mut grad);
    }
    Ok((loss_sum, grad))
}

/// Dynamic-channel fallback of [`jet_chunk`] for networks wider than the
/// monomorphized set.
fn jet_chunk_dyn<L: JetLoss>(
    params: &MlpParams,
    offsets: &[LayerOffsets],
    terms: &[L],
    start: usize,
    end: usize,
) -> Result<(f64, Vec<f64>), NetError> {
    let mut ws = JetWorkspace::new(params);
    let mut jet = NetJet::zeros(params.d_in(), params.state_dim());
    let mut cot = JetCotangent::zeros(params.d_in(), params.state_dim());
    let mut grad = vec![0.0; params.param_count()];
    let mut loss_sum = 0.0;
    for (term_index, term) in terms[start..end].iter().enumerate().map(|(k, t)| (start + k, t)) {
        forward_jet_ws(params, offsets, term.input(), &mut ws, &mut jet)?;
        if !jet.is_finite() {
            return Err(NetError::NonFiniteGradient { term_index });
        }
        let value = term.loss(&jet);
        if !value.is_finite() {
            return Err(NetError::NonFiniteGradient { term_index });
        }
        loss_sum += value;
        cot.clear();
        term.cotangent_into(&jet, &mut cot);
        if !cot.is_finite() {
            return Err(NetError::NonFiniteGradient { term_index });
        }
        pullback_ws(params, offsets, &mut ws, &cot, &mut grad);
    }
    Ok((loss_sum, grad))
}

macro_rules! dispatch_channels {
    ($channels:expr, $fallback:expr, $generic:ident, ($($args:expr),*)) => {
        match $channels {
            3 => $generic::<3, _>($($args),*),
            4 => $generic::<4, _>($($args),*),
            5 => $generic::<5, _>($($args),*),
            6 => $generic::<6, _>($($args),*),
            7 => $generic::<7, _>($($args),*),
            8 => $generic::<8, _>($($args),*),
            9 => $generic::<9, _>($($args),*),
            10 => $generic::<10, _>($($args),*),
            11 => $generic::<11, _>($($args),*),
            12 => $generic::<12, _>($($args),*),
            _ => $fallback,
        }
    };
}

/// Evaluates the network at one input. Pure affine-tanh composition over the
/// normalized input.
pub fn forward(params: &MlpParams, input: &[f64]) -> Result<f64, NetError> {
    let d_in = params.d_in();
    if input.len() != d_in {
        return Err(NetError::BadShape(format!(
            "input has length {}, expected {}",
            input.len(),
            d_in
        )));
    }
    let offsets = layer_offsets(&params.layer_sizes);
    let mut a = vec![0.0; d_in];
    params.normalize_into(input, &mut a);
    let mut next = Vec::new();
    let layers = params.layer_count();
    for l in 0..layers {
        let (w, b) = params.layer(&offsets, l);
        let n_in = params.layer_sizes[l];
        let n_out = params.layer_sizes[l + 1];
        next.resize(n_out, 0.0);
        for j in 0..n_out {
            let row = &w[j * n_in..(j + 1) * n_in];
            let mut acc = b[j];
            for (n, &wv) in row.iter().enumerate() {
                acc += wv * a[n];
            }
            next[j] = if l + 1 < layers { acc.tanh() } else { acc };
        }
        std::mem::swap(&mut a, &mut next);
    }
    Ok(a[0])
}

/// Evaluates the network together with its exact input derivatives. The
/// value agrees bit-for-bit with [`forward`].
pub fn forward_jet(params: &MlpParams, input: &[f64]) -> Result<NetJet, NetError> {
    let offsets = layer_offsets(&params.layer_sizes);
    let mut ws = JetWorkspace::new(params);
    let mut jet = NetJet::zeros(params.d_in(), params.state_dim());
    forward_jet_ws(params, &offsets, input, &mut ws, &mut jet)?;
    Ok(jet)
}

/// Gradient with respect to every weight and bias of the mean of the given
/// jet losses. Returns `(mean loss, flat gradient)`; the flat order is
/// layer-major, weights row-major then biases.
pub fn loss_param_gradient<L: JetLoss>(
    params: &MlpParams,
    terms: &[L],
) -> Result<(f64, Vec<f64>), NetError> {
    if terms.is_empty() {
        return Ok((0.0, vec![0.0; params.param_count()]));
    }
    let offsets = layer_offsets(&params.layer_sizes);
    let channels = 1 + params.d_in() + params.state_dim();
    let n_chunks = terms.len().div_ceil(PARALLEL_CHUNK);
    let partials: Result<Vec<(f64, Vec<f64>)>, NetError> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let start = ci * PARALLEL_CHUNK;
            let end = (start + PARALLEL_CHUNK).min(terms.len());
            dispatch_channels!(
                channels,
                jet_chunk_dyn(params, &offsets, terms, start, end),
                jet_chunk,
                (params, &offsets, terms, start, end)
            )
        })
        .collect();
    let partials = partials?;
    let scale = 1.0 / terms.len() as f64;
    let mut grad = vec![0.0; params.param_count()];
    let mut loss = 0.0;
    for (part_loss, part_grad) in &partials {
        loss += part_loss;
        for (g, p) in grad.iter_mut().zip(part_grad) {
            *g += p;
        }
    }
    loss *= scale;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(NetError::NonFiniteSum);
    }
    Ok((loss, grad))
}

/// One regression observation for the data/initial/boundary loss groups.
#[derive(Debug, Clone)]
pub struct FitPoint {
    pub input: Vec<f64>,
    pub target: f64,
}

/// Mean squared error over fit points and its parameter gradient, computed
/// by classic value-only backpropagation. This is the plain-backprop route;
/// the jet engine must agree with it on value-only losses.
pub fn squared_error_gradient(
    params: &MlpParams,
    points: &[FitPoint],
) -> Result<(f64, Vec<f64>), NetError> {
    if points.is_empty() {
        return Ok((0.0, vec![0.0; params.param_count()]));
    }
    let offsets = layer_offsets(&params.layer_sizes);
    let layers = params.layer_count();
    let n_chunks = points.len().div_ceil(PARALLEL_CHUNK);
    let partials: Result<Vec<(f64, Vec<f64>)>, NetError> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let start = ci * PARALLEL_CHUNK;
            let end = (start + PARALLEL_CHUNK).min(points.len());
            let mut act: Vec<Vec<f64>> =
                (0..layers).map(|l| vec![0.0; params.layer_sizes[l]]).collect();
            let mut out = vec![0.0; 1];
            let mut delta = vec![0.0; params.layer_sizes.iter().copied().max().unwrap()];
            let mut delta_prev = delta.clone();
            let mut grad = vec![0.0; params.param_count()];
            let mut loss_sum = 0.0;
            for (term_index, point) in
                points[start..end].iter().enumerate().map(|(k, p)| (start + k, p))
            {
                if point.input.len() != params.d_in() {
                    return Err(NetError::BadShape(format!(
                        "input has length {}, expected {}",
                        point.input.len(),
                        params.d_in()
                    )));
                }
                params.normalize_into(&point.input, &mut act[0]);
                for l in 0..layers {
                    let (w, b) = params.layer(&offsets, l);
                    let n_in = params.layer_sizes[l];
                    let n_out = params.layer_sizes[l + 1];
                    let is_last = l + 1 == layers;
                    let (head, tail) = act.split_at_mut(l + 1);
                    let input = &head[l];
                    let output: &mut [f64] = if is_last { &mut out } else { &mut tail[0] };
                    for j in 0..n_out {
                        let row = &w[j * n_in..(j + 1) * n_in];
                        let mut acc = b[j];
                        for (n, &wv) in row.iter().enumerate() {
                            acc += wv * input[n];
                        }
                        output[j] = if is_last { acc } else { acc.tanh() };
                    }
                }
                let residual = out[0] - point.target;
                if !residual.is_finite() {
                    return Err(NetError::NonFiniteGradient { term_index });
                }
                loss_sum += residual * residual;
                delta[0] = 2.0 * residual;
                for l in (0..layers).rev() {
                    let (n_in, n_out) = (params.layer_sizes[l], params.layer_sizes[l + 1]);
                    let o = offsets[l];
                    let w = &params.theta[o.w..o.w + n_in * n_out];
                    delta_prev[..n_in].fill(0.0);
                    for j in 0..n_out {
                        let dj = delta[j];
                        grad[o.b + j] += dj;
                        let row = &w[j * n_in..(j + 1) * n_in];
                        let wgrad = &mut grad[o.w + j * n_in..o.w + (j + 1) * n_in];
                        for n in 0..n_in {
                            wgrad[n] += dj * act[l][n];
                            delta_prev[n] += row[n] * dj;
                        }
                    }
                    if l > 0 {
                        for n in 0..n_in {
                            let a = act[l][n];
                            delta_prev[n] *= 1.0 - a * a;
                        }
                    }
                    std::mem::swap(&mut delta, &mut delta_prev);
                }
            }
            Ok((loss_sum, grad))
        })
        .collect();
    let partials = partials?;
    let scale = 1.0 / points.len() as f64;
    let mut grad = vec![0.0; params.param_count()];
    let mut loss = 0.0;
    for (part_loss, part_grad) in &partials {
        loss += part_loss;
        for (g, p) in grad.iter_mut().zip(part_grad) {
            *g += p;
        }
    }
    loss *= scale;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(NetError::NonFiniteSum);
    }
    Ok((loss, grad))
}
