//! Reference implementations shared by the integration suites.
//!
//! The streaming oracle here deliberately keeps no key/value cache: it holds
//! raw token histories per layer and recomputes every projection at every
//! step. It is the correctness reference the cached continual path is
//! measured against.

use std::collections::VecDeque;
use std::sync::Arc;

use gestrec_core::encoder::{
    positional_rows, ClassifierParams, EncoderConfig, EncoderLayerParams, LAYER_NORM_EPS,
};
use gestrec_core::tensor::tape::Tape;
use gestrec_core::Tensor;

/// Stack [λ, d] matrices into [λ, m, d] along a new middle axis.
pub fn stack_tokens(tokens: &[&Tensor]) -> Tensor {
    let m = tokens.len();
    let (lambda, d) = (tokens[0].shape()[0], tokens[0].shape()[1]);
    let mut data = vec![0.0f64; lambda * m * d];
    for (i, t) in tokens.iter().enumerate() {
        for j in 0..lambda {
            let src = &t.data()[j * d..(j + 1) * d];
            let dst = j * m * d + i * d;
            data[dst..dst + d].copy_from_slice(src);
        }
    }
    Tensor::new(&[lambda, m, d], data).expect("stack shape")
}

/// Cache-free streaming reference: per layer it buffers the raw input tokens
/// of the receptive field (current + n previous) and re-projects all of them
/// from scratch at every step.
pub struct StreamingOracle {
    layers: Vec<EncoderLayerParams>,
    cfg: EncoderConfig,
    capacity: usize,
    hist: Vec<VecDeque<Tensor>>,
    pooled: VecDeque<Tensor>,
    step: usize,
}

impl StreamingOracle {
    pub fn new(layers: &[EncoderLayerParams], cfg: &EncoderConfig, capacity: usize) -> Self {
        StreamingOracle {
            layers: layers.to_vec(),
            cfg: cfg.clone(),
            capacity,
            hist: (0..layers.len()).map(|_| VecDeque::new()).collect(),
            pooled: VecDeque::new(),
            step: 0,
        }
    }

    pub fn step(&mut self, frame_features: &Tensor) -> Tensor {
        let d = self.cfg.d_model;
        let d_k = self.cfg.d_k();
        let lambda = frame_features.shape()[0];
        let phase = self.step % self.capacity;

        let mut token = {
            let mut tape = Tape::new(false);
            let x = tape.leaf(frame_features.clone(), false);
            let pe = tape.constant(positional_rows(&[phase], d).reshape(&[d]).unwrap());
            let sum = tape.add(x, pe).unwrap();
            tape.value(sum).clone()
        };

        for (l, layer) in self.layers.iter().enumerate() {
            self.hist[l].push_back(token.clone());
            while self.hist[l].len() > self.capacity + 1 {
                self.hist[l].pop_front();
            }
            // Token order mirrors the cached path: current first, then the
            // memory oldest -> newest.
            let len = self.hist[l].len();
            let mut ordered: Vec<&Tensor> = vec![&self.hist[l][len - 1]];
            for i in 0..len - 1 {
                ordered.push(&self.hist[l][i]);
            }
            let stacked = stack_tokens(&ordered);

            let mut tape = Tape::new(false);
            let x = tape.leaf(token.clone(), false);
            let all = tape.leaf(stacked, false);
            let mut heads = Vec::with_capacity(layer.heads.len());
            for h in &layer.heads {
                let wq = tape.leaf_arc(Arc::clone(&h.wq), false);
                let wk = tape.leaf_arc(Arc::clone(&h.wk), false);
                let wv = tape.leaf_arc(Arc::clone(&h.wv), false);
                let q = tape.matmul(x, wq).unwrap();
                let q3 = tape.reshape(q, &[lambda, 1, d_k]).unwrap();
                // Fresh projections of the whole receptive field.
                let k = tape.matmul(all, wk).unwrap();
                let v = tape.matmul(all, wv).unwrap();
                let kt = tape.permute(k, &[0, 2, 1]).unwrap();
                let scores = tape.matmul(q3, kt).unwrap();
                let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt()).unwrap();
                let w = tape.softmax(scaled, 2).unwrap();
                let y = tape.matmul(w, v).unwrap();
                heads.push(y);
            }
            let cat3 = tape.concat(&heads, 2).unwrap();
            let cat = tape.reshape(cat3, &[lambda, layer.heads.len() * d_k]).unwrap();
            let ow = tape.leaf_arc(Arc::clone(&layer.out_w), false);
            let ob = tape.leaf_arc(Arc::clone(&layer.out_b), false);
            let attn = tape.linear(cat, ow, ob).unwrap();
            let sum1 = tape.add(x, attn).unwrap();
            let ln1 = tape.layer_norm(sum1, LAYER_NORM_EPS).unwrap();
            let g1 = tape.leaf_arc(Arc::clone(&layer.ln1_gain), false);
            let b1 = tape.leaf_arc(Arc::clone(&layer.ln1_bias), false);
            let s1 = tape.mul(ln1, g1).unwrap();
            let x1 = tape.add(s1, b1).unwrap();
            let w1 = tape.leaf_arc(Arc::clone(&layer.ffn1_w), false);
            let fb1 = tape.leaf_arc(Arc::clone(&layer.ffn1_b), false);
            let h1 = tape.linear(x1, w1, fb1).unwrap();
            let h1 = tape.relu(h1).unwrap();
            let w2 = tape.leaf_arc(Arc::clone(&layer.ffn2_w), false);
            let fb2 = tape.leaf_arc(Arc::clone(&layer.ffn2_b), false);
            let ff = tape.linear(h1, w2, fb2).unwrap();
            let sum2 = tape.add(x1, ff).unwrap();
            let ln2 = tape.layer_norm(sum2, LAYER_NORM_EPS).unwrap();
            let g2 = tape.leaf_arc(Arc::clone(&layer.ln2_gain), false);
            let b2 = tape.leaf_arc(Arc::clone(&layer.ln2_bias), false);
            let s2 = tape.mul(ln2, g2).unwrap();
            let out = tape.add(s2, b2).unwrap();
            token = tape.value(out).clone();
        }

        let pooled = {
            let mut tape = Tape::new(false);
            let x = tape.leaf(token.clone(), false);
            let m = tape.mean(x, 0).unwrap();
            tape.value(m).clone()
        };
        self.pooled.push_back(pooled);
        while self.pooled.len() > self.capacity {
            self.pooled.pop_front();
        }
        self.step += 1;
        token
    }

    pub fn classify(&self, head: &ClassifierParams) -> Vec<f64> {
        let d = self.pooled[0].numel();
        let mut mean = vec![0.0f64; d];
        for p in &self.pooled {
            for (acc, v) in mean.iter_mut().zip(p.data()) {
                *acc += v;
            }
        }
        for v in mean.iter_mut() {
            *v /= self.pooled.len() as f64;
        }
        let mut tape = Tape::new(false);
        let f = tape.leaf(Tensor::new(&[d], mean).unwrap(), false);
        let vars = head.to_vars(&mut tape, false);
        let (_, probs) = gestrec_core::encoder::classify(&mut tape, f, &vars).unwrap();
        tape.value(probs).data().to_vec()
    }
}
