//! Continual single-output attention with a rolling key/value memory.
//!
//! The streaming counterpart of the batch encoder: one skeleton frame enters
//! per step, only that frame's q/k/v projections are computed, and attention
//! runs against the n cached key/value tokens of previous steps. Layers
//! cascade: layer ℓ's memory holds the projections of layer ℓ−1's single
//! outputs. Inference-only; training always uses the batch path.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::encoder::{
    positional_rows, ClassifierParams, EncoderConfig, EncoderLayerParams, ATTN_SCORE_TAG,
    LAYER_NORM_EPS,
};
use crate::error::{Error, Result};
use crate::model::GestureModel;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{flops, Tensor};

/// FIFO ring of the last n key/value token pairs for one (layer, head) slot.
#[derive(Debug, Clone)]
pub struct KvMemory {
    capacity: usize,
    keys: VecDeque<Tensor>,
    values: VecDeque<Tensor>,
}

impl KvMemory {
    pub fn new(capacity: usize) -> Self {
        KvMemory {
            capacity,
            keys: VecDeque::with_capacity(capacity + 1),
            values: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn clear(&mut self) {
        self.keys.clear();
        self.values.clear();
    }

    /// Oldest-first key tokens.
    pub fn keys(&self) -> impl Iterator<Item = &Tensor> {
        self.keys.iter()
    }

    /// Oldest-first value tokens.
    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.values.iter()
    }

    /// Append the newest pair, evicting the oldest beyond capacity.
    pub fn push(&mut self, k: Tensor, v: Tensor) {
        self.keys.push_back(k);
        self.values.push_back(v);
        while self.keys.len() > self.capacity {
            self.keys.pop_front();
            self.values.pop_front();
        }
    }
}

/// Stack [λ, d] token matrices into [λ, m, d], tokens along the middle axis.
pub(crate) fn stack_tokens(tokens: &[&Tensor]) -> Tensor {
    let m = tokens.len();
    let (lambda, d) = (tokens[0].shape()[0], tokens[0].shape()[1]);
    let mut data = vec![0.0f64; lambda * m * d];
    for (i, t) in tokens.iter().enumerate() {
        debug_assert_eq!(t.shape(), [lambda, d]);
        for j in 0..lambda {
            let src = &t.data()[j * d..(j + 1) * d];
            let dst = j * m * d + i * d;
            data[dst..dst + d].copy_from_slice(src);
        }
    }
    Tensor::new(&[lambda, m, d], data).expect("stack shape")
}

/// Continual single-output scaled dot-product attention for one head:
/// per joint, scores = q_t·(k_t ∥ K_Mem)ᵀ/√d_k and the output is the
/// score-weighted sum over (v_t ∥ V_Mem). Afterwards (k_t, v_t) is cached
/// and the oldest entry evicted once the memory exceeds capacity.
pub fn co_so_att_step(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mem: &mut KvMemory,
) -> Result<Tensor> {
    if q.rank() != 2 || q.shape() != k.shape() || q.shape()[0] != v.shape()[0] || v.rank() != 2 {
        return Err(Error::shape(
            "co_so_att_step",
            format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    let (lambda, d_k) = (q.shape()[0], q.shape()[1]);
    let d_v = v.shape()[1];

    // Token order: current first, then memory oldest -> newest.
    let mut k_tokens: Vec<&Tensor> = vec![k];
    k_tokens.extend(mem.keys());
    let mut v_tokens: Vec<&Tensor> = vec![v];
    v_tokens.extend(mem.values());
    let k_all = stack_tokens(&k_tokens);
    let v_all = stack_tokens(&v_tokens);

    let mut tape = Tape::new(false);
    let qv = tape.leaf(q.clone().reshape(&[lambda, 1, d_k])?, false);
    let kv = tape.leaf(k_all, false);
    let vv = tape.leaf(v_all, false);
    let kt = tape.permute(kv, &[0, 2, 1])?;
    let scores = {
        let _tag = flops::scope(ATTN_SCORE_TAG);
        tape.matmul(qv, kt)?
    };
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    let weights = tape.softmax(scaled, 2)?;
    let out = tape.matmul(weights, vv)?;
    debug_assert_eq!(tape.value(out).shape(), &[lambda, 1, d_v][..]);
    let result = tape.value(out).clone().reshape(&[lambda, d_v])?;

    mem.push(k.clone(), v.clone());
    Ok(result)
}

/// Streaming state: one KV memory per (layer, head), the ring of the last n
/// pooled outputs for classification, and the recycling phase counter.
#[derive(Debug, Clone)]
pub struct ContinualEncoderState {
    capacity: usize,
    layers: Vec<Vec<KvMemory>>,
    pooled: VecDeque<Tensor>,
    step: usize,
}

impl ContinualEncoderState {
    /// `capacity` is the memory length n (the temporal receptive field is
    /// the current token plus n cached tokens).
    pub fn new(num_layers: usize, heads: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 || num_layers == 0 || heads == 0 {
            return Err(Error::Config("continual state sizes must be positive".into()));
        }
        Ok(ContinualEncoderState {
            capacity,
            layers: (0..num_layers)
                .map(|_| (0..heads).map(|_| KvMemory::new(capacity)).collect())
                .collect(),
            pooled: VecDeque::with_capacity(capacity + 1),
            step: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Steps consumed since the last reset.
    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Positional phase the next token will receive.
    pub fn next_phase(&self) -> usize {
        self.step % self.capacity
    }

    pub fn pooled_len(&self) -> usize {
        self.pooled.len()
    }

    /// Empty every buffer and zero the phase counter.
    pub fn reset(&mut self) {
        for layer in &mut self.layers {
            for mem in layer {
                mem.clear();
            }
        }
        self.pooled.clear();
        self.step = 0;
    }

    pub fn memory(&self, layer: usize, head: usize) -> &KvMemory {
        &self.layers[layer][head]
    }
}

/// Advance the continual encoder by one frame of spatial features [λ, d_model].
/// Returns the encoded token; the pooled mean over joints enters the
/// classification ring as a side effect.
pub fn continual_encoder_step(
    frame_features: &Tensor,
    state: &mut ContinualEncoderState,
    layers: &[EncoderLayerParams],
    cfg: &EncoderConfig,
) -> Result<Tensor> {
    if layers.len() != state.layers.len() {
        return Err(Error::shape(
            "continual_encoder_step",
            format!("{} layers vs state built for {}", layers.len(), state.layers.len()),
        ));
    }
    if frame_features.rank() != 2 || frame_features.shape()[1] != cfg.d_model {
        return Err(Error::shape(
            "continual_encoder_step",
            format!("expected [lambda, {}], got {:?}", cfg.d_model, frame_features.shape()),
        ));
    }
    let lambda = frame_features.shape()[0];
    let d = cfg.d_model;
    let d_k = cfg.d_k();
    let phase = state.next_phase();
    let pe = positional_rows(&[phase], d).reshape(&[d])?;

    let mut token = {
        let mut tape = Tape::new(false);
        let x = tape.leaf(frame_features.clone(), false);
        let p = tape.constant(pe);
        let sum = tape.add(x, p)?;
        tape.value(sum).clone()
    };

    for (l, layer) in layers.iter().enumerate() {
        // Project the incoming token per head and attend against the cache.
        let mut head_outputs = Vec::with_capacity(layer.heads.len());
        for (h, head) in layer.heads.iter().enumerate() {
            let (q, k, v) = {
                let mut tape = Tape::new(false);
                let x = tape.leaf(token.clone(), false);
                let wq = tape.leaf_arc(Arc::clone(&head.wq), false);
                let wk = tape.leaf_arc(Arc::clone(&head.wk), false);
                let wv = tape.leaf_arc(Arc::clone(&head.wv), false);
                let q = tape.matmul(x, wq)?;
                let k = tape.matmul(x, wk)?;
                let v = tape.matmul(x, wv)?;
                (tape.value(q).clone(), tape.value(k).clone(), tape.value(v).clone())
            };
            head_outputs.push(co_so_att_step(&q, &k, &v, &mut state.layers[l][h])?);
        }
        // Concat heads, project, then residual + norm + feed-forward on the
        // single token, exactly as in the batch layer.
        let mut tape = Tape::new(false);
        let x = tape.leaf(token, false);
        let heads: Vec<Var> = head_outputs
            .into_iter()
            .map(|t| {
                let v = tape.leaf(t.reshape(&[lambda, 1, d_k])?, false);
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        let cat3 = tape.concat(&heads, 2)?;
        let cat = tape.reshape(cat3, &[lambda, layer.heads.len() * d_k])?;
        let out_w = tape.leaf_arc(Arc::clone(&layer.out_w), false);
        let out_b = tape.leaf_arc(Arc::clone(&layer.out_b), false);
        let attn = tape.linear(cat, out_w, out_b)?;
        let sum1 = tape.add(x, attn)?;
        let ln1 = tape.layer_norm(sum1, LAYER_NORM_EPS)?;
        let g1 = tape.leaf_arc(Arc::clone(&layer.ln1_gain), false);
        let b1 = tape.leaf_arc(Arc::clone(&layer.ln1_bias), false);
        let scaled = tape.mul(ln1, g1)?;
        let x1 = tape.add(scaled, b1)?;

        let w1 = tape.leaf_arc(Arc::clone(&layer.ffn1_w), false);
        let fb1 = tape.leaf_arc(Arc::clone(&layer.ffn1_b), false);
        let h1 = tape.linear(x1, w1, fb1)?;
        let h1 = tape.relu(h1)?;
        let w2 = tape.leaf_arc(Arc::clone(&layer.ffn2_w), false);
        let fb2 = tape.leaf_arc(Arc::clone(&layer.ffn2_b), false);
        let ff = tape.linear(h1, w2, fb2)?;
        let sum2 = tape.add(x1, ff)?;
        let ln2 = tape.layer_norm(sum2, LAYER_NORM_EPS)?;
        let g2 = tape.leaf_arc(Arc::clone(&layer.ln2_gain), false);
        let b2 = tape.leaf_arc(Arc::clone(&layer.ln2_bias), false);
        let scaled2 = tape.mul(ln2, g2)?;
        let out = tape.add(scaled2, b2)?;
        token = tape.value(out).clone();
    }

    // Pool over joints into the classification ring.
    let pooled = {
        let mut tape = Tape::new(false);
        let x = tape.leaf(token.clone(), false);
        let m = tape.mean(x, 0)?;
        tape.value(m).clone()
    };
    state.pooled.push_back(pooled);
    while state.pooled.len() > state.capacity {
        state.pooled.pop_front();
    }
    state.step += 1;
    Ok(token)
}

/// Classify from the pooled ring: softmax(FC(mean of buffered vectors)).
/// Read-only; repeated calls between steps return the same distribution.
pub fn continual_classify_step(
    state: &ContinualEncoderState,
    head: &ClassifierParams,
) -> Result<Vec<f64>> {
    if state.pooled.is_empty() {
        return Err(Error::State("no encoded steps buffered for classification".into()));
    }
    let d = state.pooled[0].numel();
    let mut mean = vec![0.0f64; d];
    for p in &state.pooled {
        for (acc, v) in mean.iter_mut().zip(p.data()) {
            *acc += v;
        }
    }
    let count = state.pooled.len() as f64;
    for v in mean.iter_mut() {
        *v /= count;
    }
    let mut tape = Tape::new(false);
    let f = tape.leaf(Tensor::new(&[d], mean)?, false);
    let vars = head.to_vars(&mut tape, false);
    let (_, probs) = crate::encoder::classify(&mut tape, f, &vars)?;
    Ok(tape.value(probs).data().to_vec())
}

/// Reset every buffer; the next step behaves like a fresh state's first step.
pub fn reset_state(state: &mut ContinualEncoderState) {
    state.reset();
}

/// A model bound to one stream: feeds raw frames through the graph
/// convolution and the continual encoder. Single-consumer.
pub struct ContinualSession<'m> {
    model: &'m GestureModel,
    state: ContinualEncoderState,
}

impl<'m> ContinualSession<'m> {
    /// `memory` is the KV capacity n; defaults follow the online window size.
    pub fn new(model: &'m GestureModel, memory: usize) -> Result<Self> {
        let cfg = &model.config.encoder;
        Ok(ContinualSession {
            model,
            state: ContinualEncoderState::new(cfg.num_layers, cfg.heads, memory)?,
        })
    }

    pub fn state(&self) -> &ContinualEncoderState {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state.reset();
    }

    /// Consume one [λ, 3] frame; returns the encoded token.
    pub fn step_frame(&mut self, frame: &Tensor) -> Result<Tensor> {
        let features = self.model.frame_features(frame)?;
        continual_encoder_step(
            &features,
            &mut self.state,
            &self.model.params.encoder,
            &self.model.config.encoder,
        )
    }

    /// Probabilities over the vocabulary from the pooled ring.
    pub fn classify(&self) -> Result<Vec<f64>> {
        continual_classify_step(&self.state, &self.model.params.classifier)
    }
}
