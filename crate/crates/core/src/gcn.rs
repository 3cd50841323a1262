//! Spatial graph convolution over the hand skeleton, applied per frame.
//!
//! One layer computes `act( Σ_k ((A_k ∘ M_k) · X[t]) · W_k )` for every
//! frame t independently: A_k are the normalized partition matrices, M_k the
//! learnable edge-importance masks, W_k the per-partition weights.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::skel::AdjacencyStack;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Xavier-uniform sample for a (fan_in, fan_out) weight matrix.
pub(crate) fn xavier_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::rand_uniform(&[fan_in, fan_out], -limit, limit, rng)
}

/// Parameters of one graph-convolution layer.
#[derive(Debug, Clone)]
pub struct SgcnLayerParams {
    /// K_a weight matrices of shape [f_in, f_out], shared across frames.
    pub weights: Vec<Arc<Tensor>>,
    /// K_a edge-importance masks of shape [λ, λ], initialized to ones.
    pub masks: Vec<Arc<Tensor>>,
    /// Apply ReLU to the layer output.
    pub relu: bool,
}

impl SgcnLayerParams {
    pub fn init(
        kernel_count: usize,
        lambda: usize,
        f_in: usize,
        f_out: usize,
        relu: bool,
        rng: &mut impl Rng,
    ) -> Self {
        SgcnLayerParams {
            weights: (0..kernel_count).map(|_| Arc::new(xavier_uniform(f_in, f_out, rng))).collect(),
            masks: (0..kernel_count).map(|_| Arc::new(Tensor::ones(&[lambda, lambda]))).collect(),
            relu,
        }
    }

    pub fn to_vars(&self, tape: &mut Tape, grad: bool) -> SgcnLayerVars {
        SgcnLayerVars {
            weights: self.weights.iter().map(|w| tape.leaf_arc(Arc::clone(w), grad)).collect(),
            masks: self.masks.iter().map(|m| tape.leaf_arc(Arc::clone(m), grad)).collect(),
            relu: self.relu,
        }
    }
}

/// Tape handles for one layer's parameters.
pub struct SgcnLayerVars {
    pub weights: Vec<Var>,
    pub masks: Vec<Var>,
    pub relu: bool,
}

/// Ordered stack of graph-convolution layers.
#[derive(Debug, Clone)]
pub struct SgcnParams {
    pub layers: Vec<SgcnLayerParams>,
}

impl SgcnParams {
    /// `features` chains layer sizes, e.g. [3, 64, 128]. The last layer is
    /// linear so the encoder sees unsquashed features.
    pub fn init(
        features: &[usize],
        kernel_count: usize,
        lambda: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if features.len() < 2 {
            return Err(Error::Config("sgcn needs at least one layer".into()));
        }
        let last = features.len() - 2;
        let layers = features
            .windows(2)
            .enumerate()
            .map(|(i, w)| SgcnLayerParams::init(kernel_count, lambda, w[0], w[1], i != last, rng))
            .collect();
        Ok(SgcnParams { layers })
    }

    pub fn to_vars(&self, tape: &mut Tape, grad: bool) -> Vec<SgcnLayerVars> {
        self.layers.iter().map(|l| l.to_vars(tape, grad)).collect()
    }

    pub fn output_features(&self) -> usize {
        self.layers.last().expect("non-empty stack").weights[0].shape()[1]
    }
}

/// One layer over a [γ, λ, f_in] input; frames are processed independently.
pub fn sgcn_layer_forward(
    tape: &mut Tape,
    x: Var,
    adj: &AdjacencyStack,
    layer: &SgcnLayerVars,
) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 3 || shape[1] != adj.joint_count() {
        return Err(Error::shape(
            "sgcn_layer_forward",
            format!("expected [gamma, {}, f], got {shape:?}", adj.joint_count()),
        ));
    }
    if layer.weights.len() != adj.kernel_count() || layer.masks.len() != adj.kernel_count() {
        return Err(Error::shape(
            "sgcn_layer_forward",
            format!(
                "{} weights / {} masks for {} partitions",
                layer.weights.len(),
                layer.masks.len(),
                adj.kernel_count()
            ),
        ));
    }
    let mut acc: Option<Var> = None;
    for (k, a_k) in adj.matrices().iter().enumerate() {
        let a = tape.constant(a_k.clone());
        let masked = tape.mul(a, layer.masks[k])?;
        let gathered = tape.matmul(masked, x)?; // [λ,λ]·[γ,λ,f] -> [γ,λ,f]
        let projected = tape.matmul(gathered, layer.weights[k])?; // -> [γ,λ,f_out]
        acc = Some(match acc {
            None => projected,
            Some(prev) => tape.add(prev, projected)?,
        });
    }
    let summed = acc.expect("kernel_count >= 1");
    if layer.relu {
        tape.relu(summed)
    } else {
        Ok(summed)
    }
}

/// Full stack: layers applied in order, no temporal mixing.
pub fn sgcn_forward(
    tape: &mut Tape,
    x: Var,
    adj: &AdjacencyStack,
    layers: &[SgcnLayerVars],
) -> Result<Var> {
    let mut h = x;
    for layer in layers {
        h = sgcn_layer_forward(tape, h, adj, layer)?;
    }
    Ok(h)
}
