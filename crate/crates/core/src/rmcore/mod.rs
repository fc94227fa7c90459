//! The trainable reward network.
//!
//! A tanh MLP body maps the concatenated input `[x; y]` to a hidden state
//! `h(x, y) ∈ R^H`, and a bias-free linear head produces the reward
//! `r = W_pᵀ h`. All parameters live in one flat vector (body layers in
//! order, weights row-major then bias, head last) so optimizers, finite
//! differences and checkpoints can treat them uniformly.

mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
    POLICY_MAGIC, RM_MAGIC,
};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::goldworld::GoldWorld;
use crate::numkit::{dot, norm};
use crate::seeds;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model dims: {0}")]
    InvalidDims(String),
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },
    #[error("degenerate state: {0}")]
    DegenerateState(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// Input width and body layer widths; the last width is `H`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl ModelDims {
    /// The default body: two tanh layers of width 64.
    pub fn default_for(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 64],
        }
    }

    pub fn hidden_dim(&self) -> usize {
        *self.hidden.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 {
            return Err(ModelError::InvalidDims("input_dim must be positive".into()));
        }
        if self.hidden.is_empty() {
            return Err(ModelError::InvalidDims("need at least one hidden layer".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(ModelError::InvalidDims("hidden widths must be positive".into()));
        }
        if self.hidden_dim() < 2 {
            return Err(ModelError::InvalidDims(format!(
                "final hidden width H must be >= 2, got {}",
                self.hidden_dim()
            )));
        }
        Ok(())
    }

    fn layer_shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let ins = std::iter::once(self.input_dim).chain(self.hidden.iter().copied());
        ins.zip(self.hidden.iter().copied())
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().map(|(i, o)| o * i + o).sum::<usize>() + self.hidden_dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSpan {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

fn spans(dims: &ModelDims) -> (Vec<LayerSpan>, usize) {
    let mut offset = 0;
    let mut out = Vec::with_capacity(dims.hidden.len());
    for (fan_in, fan_out) in dims.layer_shapes() {
        let weights = offset;
        let bias = weights + fan_in * fan_out;
        offset = bias + fan_out;
        out.push(LayerSpan {
            fan_in,
            fan_out,
            weights,
            bias,
        });
    }
    (out, offset)
}

/// Parameters of the reward network.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModelParams {
    dims: ModelDims,
    layers: Vec<LayerSpan>,
    head_offset: usize,
    values: Vec<f64>,
}

impl RewardModelParams {
    /// All-zero parameters.
    pub fn zeros(dims: ModelDims) -> Result<Self, ModelError> {
        dims.validate()?;
        let (layers, head_offset) = spans(&dims);
        let n = dims.param_count();
        Ok(Self {
            dims,
            layers,
            head_offset,
            values: vec![0.0; n],
        })
    }

    /// Wraps a flat parameter vector laid out as described in the module docs.
    pub fn from_flat(dims: ModelDims, values: Vec<f64>) -> Result<Self, ModelError> {
        let mut p = Self::zeros(dims)?;
        if values.len() != p.values.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                p.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { layer: usize::MAX });
        }
        p.values = values;
        Ok(p)
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_weights(&self, l: usize) -> &[f64] {
        let s = self.layers[l];
        &self.values[s.weights..s.bias]
    }

    pub fn layer_weights_mut(&mut self, l: usize) -> &mut [f64] {
        let s = self.layers[l];
        &mut self.values[s.weights..s.bias]
    }

    pub fn layer_bias(&self, l: usize) -> &[f64] {
        let s = self.layers[l];
        &self.values[s.bias..s.bias + s.fan_out]
    }

    pub fn layer_bias_mut(&mut self, l: usize) -> &mut [f64] {
        let s = self.layers[l];
        &mut self.values[s.bias..s.bias + s.fan_out]
    }

    /// Projection head `W_p`.
    pub fn head(&self) -> &[f64] {
        &self.values[self.head_offset..]
    }

    pub fn head_mut(&mut self) -> &mut [f64] {
        &mut self.values[self.head_offset..]
    }

    /// Index range of the head inside [`values`](Self::values).
    pub fn head_range(&self) -> std::ops::Range<usize> {
        self.head_offset..self.values.len()
    }
}

/// Draws fresh parameters: body weights `N(0, 1/fan_in)` with zero biases,
/// head entries i.i.d. `N(0, 1/(H+1))`.
pub fn init_reward_model(dims: ModelDims, seed: u64) -> Result<RewardModelParams, ModelError> {
    let mut p = RewardModelParams::zeros(dims)?;
    let mut body_rng = seeds::stream(seed, "rm.body");
    for l in 0..p.n_layers() {
        let scale = 1.0 / (p.layers[l].fan_in as f64).sqrt();
        for w in p.layer_weights_mut(l) {
            *w = scale * body_rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut head_rng = seeds::stream(seed, "rm.head");
    let scale = 1.0 / ((p.dims.hidden_dim() + 1) as f64).sqrt();
    for w in p.head_mut() {
        *w = scale * head_rng.sample::<f64, _>(StandardNormal);
    }
    Ok(p)
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    /// Pre-activation of every body layer.
    pub pre: Vec<Vec<f64>>,
    /// `tanh` of every body layer; the last one is `h`.
    pub act: Vec<Vec<f64>>,
    pub reward: f64,
}

impl ForwardTrace {
    pub fn hidden(&self) -> &[f64] {
        self.act.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Runs the network on the concatenated input `z = [x; y]`.
pub fn forward_joint(params: &RewardModelParams, z: &[f64]) -> Result<ForwardTrace, ModelError> {
    if z.len() != params.dims.input_dim {
        return Err(ModelError::DimMismatch {
            expected: params.dims.input_dim,
            got: z.len(),
        });
    }
    let mut pre = Vec::with_capacity(params.n_layers());
    let mut act: Vec<Vec<f64>> = Vec::with_capacity(params.n_layers());
    for (l, span) in params.layers.iter().enumerate() {
        let input = if l == 0 { z } else { act[l - 1].as_slice() };
        let w = params.layer_weights(l);
        let b = params.layer_bias(l);
        let z_l: Vec<f64> = (0..span.fan_out)
            .map(|o| dot(&w[o * span.fan_in..(o + 1) * span.fan_in], input) + b[o])
            .collect();
        if z_l.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { layer: l });
        }
        act.push(z_l.iter().map(|v| v.tanh()).collect());
        pre.push(z_l);
    }
    let reward = dot(params.head(), act.last().expect("at least one layer"));
    if !reward.is_finite() {
        return Err(ModelError::NonFinite {
            layer: params.n_layers(),
        });
    }
    Ok(ForwardTrace {
        input: z.to_vec(),
        pre,
        act,
        reward,
    })
}

/// Runs the network on `(x, y)`.
pub fn forward(params: &RewardModelParams, x: &[f64], y: &[f64]) -> Result<ForwardTrace, ModelError> {
    let mut z = Vec::with_capacity(x.len() + y.len());
    z.extend_from_slice(x);
    z.extend_from_slice(y);
    forward_joint(params, &z)
}

/// `r = ‖W_p‖ · ‖h‖ · cos ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardDecomposition {
    pub head_norm: f64,
    pub hidden_norm: f64,
    pub cos_psi: f64,
}

impl RewardDecomposition {
    pub fn product(&self) -> f64 {
        self.head_norm * self.hidden_norm * self.cos_psi
    }
}

/// Splits a reward into head norm, hidden norm and the angle between them.
pub fn decompose(params: &RewardModelParams, trace: &ForwardTrace) -> Result<RewardDecomposition, ModelError> {
    let h = trace.hidden();
    if h.len() != params.head().len() {
        return Err(ModelError::ShapeMismatch("trace does not match params".into()));
    }
    let head_norm = norm(params.head());
    let hidden_norm = norm(h);
    if hidden_norm == 0.0 {
        return Err(ModelError::DegenerateState("zero hidden norm, cos ψ undefined"));
    }
    if head_norm == 0.0 {
        return Err(ModelError::DegenerateState("zero head norm, cos ψ undefined"));
    }
    let cos_psi = trace.reward / (head_norm * hidden_norm);
    Ok(RewardDecomposition {
        head_norm,
        hidden_norm,
        cos_psi,
    })
}

/// Gradient accumulator with the same layout as [`RewardModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub values: Vec<f64>,
}

impl ParamGradients {
    pub fn zeros_like(params: &RewardModelParams) -> Self {
        Self {
            values: vec![0.0; params.values.len()],
        }
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|g| *g = 0.0);
    }
}

fn check_trace(params: &RewardModelParams, trace: &ForwardTrace) -> Result<(), ModelError> {
    let fresh = trace.input.len() == params.dims.input_dim
        && trace.act.len() == params.n_layers()
        && trace.pre.len() == params.n_layers()
        && trace
            .act
            .iter()
            .zip(&params.layers)
            .all(|(a, s)| a.len() == s.fan_out);
    if fresh {
        Ok(())
    } else {
        Err(ModelError::ShapeMismatch("trace was not produced by these params".into()))
    }
}

/// Adds `d_r · ∂r/∂θ` into `grads`.
pub fn backward_into(
    params: &RewardModelParams,
    trace: &ForwardTrace,
    d_r: f64,
    grads: &mut ParamGradients,
) -> Result<(), ModelError> {
    check_trace(params, trace)?;
    if grads.values.len() != params.values.len() {
        return Err(ModelError::ShapeMismatch("gradient buffer size".into()));
    }
    if d_r == 0.0 {
        return Ok(());
    }
    let h = trace.hidden();
    for (g, hv) in grads.values[params.head_range()].iter_mut().zip(h) {
        *g += d_r * hv;
    }
    let mut d_act: Vec<f64> = params.head().iter().map(|w| d_r * w).collect();
    for l in (0..params.n_layers()).rev() {
        let span = params.layers[l];
        let d_pre: Vec<f64> = d_act
            .iter()
            .zip(&trace.act[l])
            .map(|(d, a)| d * (1.0 - a * a))
            .collect();
        let input: &[f64] = if l == 0 { &trace.input } else { &trace.act[l - 1] };
        {
            let gw = &mut grads.values[span.weights..span.bias];
            for (o, dp) in d_pre.iter().enumerate() {
                if *dp == 0.0 {
                    continue;
                }
                let row = &mut gw[o * span.fan_in..(o + 1) * span.fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += dp * x;
                }
            }
        }
        for (g, dp) in grads.values[span.bias..span.bias + span.fan_out].iter_mut().zip(&d_pre) {
            *g += dp;
        }
        if l > 0 {
            let w = params.layer_weights(l);
            let mut next = vec![0.0; span.fan_in];
            for (o, dp) in d_pre.iter().enumerate() {
                let row = &w[o * span.fan_in..(o + 1) * span.fan_in];
                for (n, wv) in next.iter_mut().zip(row) {
                    *n += dp * wv;
                }
            }
            d_act = next;
        }
    }
    Ok(())
}

/// Gradient of `d_r · r` with respect to every parameter.
pub fn backward(params: &RewardModelParams, trace: &ForwardTrace, d_r: f64) -> Result<ParamGradients, ModelError> {
    let mut g = ParamGradients::zeros_like(params);
    backward_into(params, trace, d_r, &mut g)?;
    Ok(g)
}

/// Anything that assigns a scalar score to a `(prompt, response)` pair.
pub trait Scorer: Sync {
    fn score(&self, x: &[f64], y: &[f64]) -> Result<f64, ModelError>;
}

impl Scorer for RewardModelParams {
    fn score(&self, x: &[f64], y: &[f64]) -> Result<f64, ModelError> {
        forward(self, x, y).map(|t| t.reward)
    }
}

/// Scores responses with the world's gold reward `r*`.
impl Scorer for GoldWorld {
    fn score(&self, x: &[f64], y: &[f64]) -> Result<f64, ModelError> {
        self.gold_score(x, y).map_err(|_| ModelError::DimMismatch {
            expected: self.config.input_dim(),
            got: x.len() + y.len(),
        })
    }
}

/// Flips the sign of another scorer.
pub struct Negated<'a, S: Scorer + ?Sized>(pub &'a S);

impl<S: Scorer + ?Sized> Scorer for Negated<'_, S> {
    fn score(&self, x: &[f64], y: &[f64]) -> Result<f64, ModelError> {
        self.0.score(x, y).map(|s| -s)
    }
}
