//! Temporal transformer encoder over per-joint token sequences.
//!
//! Attention is computed independently for each joint across frames: joint j
//! at frame t attends to joint j at the other frames, never to other joints.
//! Projection weights are shared across joints. Activations flow in
//! joint-major layout [λ, γ, d_model] so each joint's γ-length token matrix
//! is one batch entry.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::xavier_uniform;
use crate::seeds;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{flops, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Finite stand-in for -inf in attention masks; exp underflows to exactly 0.
pub const MASK_VALUE: f64 = -1e30;

/// Flop-counter tag for attention score products (q·kᵀ).
pub const ATTN_SCORE_TAG: &str = "attn_scores";

/// Encoder hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    /// Window length γ used for batch classification.
    pub window: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { num_layers: 6, heads: 8, d_model: 128, d_ff: 256, dropout: 0.3, window: 20 }
    }
}

impl EncoderConfig {
    /// Per-head key/query (and value) feature size.
    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config("d_model must be even for positional encoding".into()));
        }
        if self.num_layers == 0 || self.heads == 0 || self.d_ff == 0 || self.window == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Per-head projection weights (no biases).
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub wq: Arc<Tensor>,
    pub wk: Arc<Tensor>,
    pub wv: Arc<Tensor>,
}

/// One encoder layer: H attention heads, output projection, feed-forward,
/// and two layer-norm gain/bias pairs.
#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub heads: Vec<HeadParams>,
    pub out_w: Arc<Tensor>,
    pub out_b: Arc<Tensor>,
    pub ffn1_w: Arc<Tensor>,
    pub ffn1_b: Arc<Tensor>,
    pub ffn2_w: Arc<Tensor>,
    pub ffn2_b: Arc<Tensor>,
    pub ln1_gain: Arc<Tensor>,
    pub ln1_bias: Arc<Tensor>,
    pub ln2_gain: Arc<Tensor>,
    pub ln2_bias: Arc<Tensor>,
}

impl EncoderLayerParams {
    pub fn init(cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let (d, dk, dff) = (cfg.d_model, cfg.d_k(), cfg.d_ff);
        EncoderLayerParams {
            heads: (0..cfg.heads)
                .map(|_| HeadParams {
                    wq: Arc::new(xavier_uniform(d, dk, rng)),
                    wk: Arc::new(xavier_uniform(d, dk, rng)),
                    wv: Arc::new(xavier_uniform(d, dk, rng)),
                })
                .collect(),
            out_w: Arc::new(xavier_uniform(cfg.heads * dk, d, rng)),
            out_b: Arc::new(Tensor::zeros(&[d])),
            ffn1_w: Arc::new(xavier_uniform(d, dff, rng)),
            ffn1_b: Arc::new(Tensor::zeros(&[dff])),
            ffn2_w: Arc::new(xavier_uniform(dff, d, rng)),
            ffn2_b: Arc::new(Tensor::zeros(&[d])),
            ln1_gain: Arc::new(Tensor::ones(&[d])),
            ln1_bias: Arc::new(Tensor::zeros(&[d])),
            ln2_gain: Arc::new(Tensor::ones(&[d])),
            ln2_bias: Arc::new(Tensor::zeros(&[d])),
        }
    }

    pub fn to_vars(&self, tape: &mut Tape, grad: bool) -> EncoderLayerVars {
        EncoderLayerVars {
            heads: self
                .heads
                .iter()
                .map(|h| HeadVars {
                    wq: tape.leaf_arc(Arc::clone(&h.wq), grad),
                    wk: tape.leaf_arc(Arc::clone(&h.wk), grad),
                    wv: tape.leaf_arc(Arc::clone(&h.wv), grad),
                })
                .collect(),
            out_w: tape.leaf_arc(Arc::clone(&self.out_w), grad),
            out_b: tape.leaf_arc(Arc::clone(&self.out_b), grad),
            ffn1_w: tape.leaf_arc(Arc::clone(&self.ffn1_w), grad),
            ffn1_b: tape.leaf_arc(Arc::clone(&self.ffn1_b), grad),
            ffn2_w: tape.leaf_arc(Arc::clone(&self.ffn2_w), grad),
            ffn2_b: tape.leaf_arc(Arc::clone(&self.ffn2_b), grad),
            ln1_gain: tape.leaf_arc(Arc::clone(&self.ln1_gain), grad),
            ln1_bias: tape.leaf_arc(Arc::clone(&self.ln1_bias), grad),
            ln2_gain: tape.leaf_arc(Arc::clone(&self.ln2_gain), grad),
            ln2_bias: tape.leaf_arc(Arc::clone(&self.ln2_bias), grad),
        }
    }
}

pub struct HeadVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

pub struct EncoderLayerVars {
    pub heads: Vec<HeadVars>,
    pub out_w: Var,
    pub out_b: Var,
    pub ffn1_w: Var,
    pub ffn1_b: Var,
    pub ffn2_w: Var,
    pub ffn2_b: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

/// Fully connected classification head over the pooled feature vector.
#[derive(Debug, Clone)]
pub struct ClassifierParams {
    pub weight: Arc<Tensor>,
    pub bias: Arc<Tensor>,
}

impl ClassifierParams {
    pub fn init(d_model: usize, classes: usize, rng: &mut impl Rng) -> Self {
        ClassifierParams {
            weight: Arc::new(xavier_uniform(d_model, classes, rng)),
            bias: Arc::new(Tensor::zeros(&[classes])),
        }
    }

    pub fn class_count(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn to_vars(&self, tape: &mut Tape, grad: bool) -> ClassifierVars {
        ClassifierVars {
            weight: tape.leaf_arc(Arc::clone(&self.weight), grad),
            bias: tape.leaf_arc(Arc::clone(&self.bias), grad),
        }
    }
}

pub struct ClassifierVars {
    pub weight: Var,
    pub bias: Var,
}

/// Sinusoidal positional encoding: PE[t, 2i] = sin(t / 10000^(2i/d)),
/// PE[t, 2i+1] = cos of the same argument.
pub fn positional_encoding(gamma: usize, d_model: usize) -> Result<Tensor> {
    if d_model % 2 != 0 {
        return Err(Error::Config(format!("positional encoding needs even d_model, got {d_model}")));
    }
    let phases: Vec<usize> = (0..gamma).collect();
    Ok(positional_rows(&phases, d_model))
}

/// Positional-encoding rows for explicit phase indices (used by the
/// streaming path, where phases recycle modulo the window length).
pub fn positional_rows(phases: &[usize], d_model: usize) -> Tensor {
    let mut data = Vec::with_capacity(phases.len() * d_model);
    for &t in phases {
        for i in 0..d_model / 2 {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            let arg = t as f64 * rate;
            data.push(arg.sin());
            data.push(arg.cos());
        }
    }
    Tensor::new(&[phases.len(), d_model], data).expect("pe shape")
}

/// Additive causal mask: position i may attend to j ≤ i.
pub fn causal_mask(gamma: usize) -> Tensor {
    Tensor::from_fn(&[gamma, gamma], |idx| if idx[1] > idx[0] { MASK_VALUE } else { 0.0 })
}

/// Scaled dot-product attention for one head over [λ, γ, d_model] tokens.
/// `mask` is an optional additive [γ, γ] matrix applied to the scores.
pub fn attention_head(
    tape: &mut Tape,
    x: Var,
    head: &HeadVars,
    mask: Option<Var>,
) -> Result<Var> {
    let q = tape.matmul(x, head.wq)?;
    let k = tape.matmul(x, head.wk)?;
    let v = tape.matmul(x, head.wv)?;
    let d_k = tape.value(q).shape()[2];
    let kt = tape.permute(k, &[0, 2, 1])?;
    let scores = {
        let _tag = flops::scope(ATTN_SCORE_TAG);
        tape.matmul(q, kt)?
    };
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    let masked = match mask {
        Some(m) => tape.add(scaled, m)?,
        None => scaled,
    };
    let weights = tape.softmax(masked, 2)?;
    tape.matmul(weights, v)
}

/// Concatenate all heads and apply the output projection.
pub fn multi_head_attention(
    tape: &mut Tape,
    x: Var,
    layer: &EncoderLayerVars,
    mask: Option<Var>,
) -> Result<Var> {
    let heads = layer
        .heads
        .iter()
        .map(|h| attention_head(tape, x, h, mask))
        .collect::<Result<Vec<_>>>()?;
    let cat = tape.concat(&heads, 2)?;
    tape.linear(cat, layer.out_w, layer.out_b)
}

fn layer_norm_affine(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let normed = tape.layer_norm(x, LAYER_NORM_EPS)?;
    let scaled = tape.mul(normed, gain)?;
    tape.add(scaled, bias)
}

/// One encoder layer with post-norm residuals:
/// x₁ = LN(x + mhAtt(x)); out = LN(x₁ + FFN(x₁)).
pub fn encoder_layer(
    tape: &mut Tape,
    x: Var,
    layer: &EncoderLayerVars,
    dropout: f64,
    mask: Option<Var>,
    train: bool,
    seed: u64,
) -> Result<Var> {
    let attn = multi_head_attention(tape, x, layer, mask)?;
    let attn = tape.dropout(attn, dropout, train, seeds::mix(seed, 1))?;
    let sum1 = tape.add(x, attn)?;
    let x1 = layer_norm_affine(tape, sum1, layer.ln1_gain, layer.ln1_bias)?;

    let h = tape.linear(x1, layer.ffn1_w, layer.ffn1_b)?;
    let h = tape.relu(h)?;
    let ff = tape.linear(h, layer.ffn2_w, layer.ffn2_b)?;
    let ff = tape.dropout(ff, dropout, train, seeds::mix(seed, 2))?;
    let sum2 = tape.add(x1, ff)?;
    layer_norm_affine(tape, sum2, layer.ln2_gain, layer.ln2_bias)
}

/// Full encoder over joint-major features [λ, γ, d_model]: adds PE rows for
/// the given phases once before layer 1, then applies every layer in order.
#[allow(clippy::too_many_arguments)]
pub fn encode(
    tape: &mut Tape,
    x: Var,
    layers: &[EncoderLayerVars],
    cfg: &EncoderConfig,
    phases: &[usize],
    mask: Option<Var>,
    train: bool,
    seed: u64,
) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 3 || shape[2] != cfg.d_model {
        return Err(Error::shape(
            "encode",
            format!("expected [lambda, gamma, {}], got {shape:?}", cfg.d_model),
        ));
    }
    if phases.len() != shape[1] {
        return Err(Error::shape(
            "encode",
            format!("{} phases for {} frames", phases.len(), shape[1]),
        ));
    }
    let pe = tape.constant(positional_rows(phases, cfg.d_model));
    let mut h = tape.add(x, pe)?;
    for (i, layer) in layers.iter().enumerate() {
        h = encoder_layer(tape, h, layer, cfg.dropout, mask, train, seeds::mix(seed, 100 + i as u64))?;
    }
    Ok(h)
}

/// Average pooling: mean over nodes (λ), then mean over frames (γ).
pub fn global_pool(tape: &mut Tape, x: Var) -> Result<Var> {
    let over_nodes = tape.mean(x, 0)?;
    tape.mean(over_nodes, 0)
}

/// Map pooled features to (logits, probabilities) over the label vocabulary.
pub fn classify(tape: &mut Tape, pooled: Var, head: &ClassifierVars) -> Result<(Var, Var)> {
    let d = tape.value(pooled).numel();
    let row = tape.reshape(pooled, &[1, d])?;
    let logits = tape.linear(row, head.weight, head.bias)?;
    let c = tape.value(logits).numel();
    let logits = tape.reshape(logits, &[c])?;
    let probs = tape.softmax(logits, 0)?;
    Ok((logits, probs))
}
