//! Full recognition model: graph convolution stack, temporal encoder,
//! classifier head, parameter registry and checkpoint I/O.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    classify, encode, global_pool, ClassifierParams, EncoderConfig, EncoderLayerParams,
    EncoderLayerVars,
};
use crate::error::{Error, Result};
use crate::gcn::{sgcn_forward, SgcnLayerVars, SgcnParams};
use crate::skel::{
    build_topology, AdjacencyStack, HandTopology, PartitionStrategy, SkeletonFrame,
    TopologyConfig, COORDS,
};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::LabelVocab;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild the model structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub topology: TopologyConfig,
    pub partition: PartitionStrategy,
    /// Add the identity to every partition during normalization.
    pub identity_per_partition: bool,
    /// Reference joint positions for spatial-configuration partitioning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_frame: Option<Vec<[f64; COORDS]>>,
    /// Chained feature sizes of the graph-convolution stack, e.g. [3, 64, 128].
    pub sgcn_features: Vec<usize>,
    pub encoder: EncoderConfig,
    /// Ordered class names, no-gesture sentinel last.
    pub classes: Vec<String>,
}

impl ModelConfig {
    /// Paper-scale defaults over the stock 20-joint hand.
    pub fn default_with_classes(classes: Vec<String>) -> Self {
        ModelConfig {
            topology: HandTopology::default_hand().to_config(),
            partition: PartitionStrategy::Distance { max_hop: 2 },
            identity_per_partition: true,
            reference_frame: None,
            sgcn_features: vec![COORDS, 64, 128],
            encoder: EncoderConfig::default(),
            classes,
        }
    }

    /// Compact variant for desk-scale training runs.
    pub fn compact_with_classes(classes: Vec<String>) -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                num_layers: 2,
                heads: 4,
                d_model: 32,
                d_ff: 64,
                dropout: 0.3,
                window: 20,
            },
            sgcn_features: vec![COORDS, 16, 32],
            ..Self::default_with_classes(classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.sgcn_features.first() != Some(&COORDS) {
            return Err(Error::Config(format!(
                "sgcn_features must start at {COORDS}, got {:?}",
                self.sgcn_features
            )));
        }
        if self.sgcn_features.last() != Some(&self.encoder.d_model) {
            return Err(Error::Config(format!(
                "sgcn output {:?} must match d_model {}",
                self.sgcn_features.last(),
                self.encoder.d_model
            )));
        }
        Ok(())
    }
}

/// All trainable tensors.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub sgcn: SgcnParams,
    pub encoder: Vec<EncoderLayerParams>,
    pub classifier: ClassifierParams,
}

/// What regularization and init treat a parameter as.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Mask,
    Norm,
}

/// Tape handles for every parameter.
pub struct ModelVars {
    pub sgcn: Vec<SgcnLayerVars>,
    pub encoder: Vec<EncoderLayerVars>,
    pub classifier: crate::encoder::ClassifierVars,
}

impl ModelVars {
    /// Parameter handles in the same order as [`ModelParams::named`].
    pub fn flat(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for layer in &self.sgcn {
            out.extend(layer.weights.iter().copied());
            out.extend(layer.masks.iter().copied());
        }
        for layer in &self.encoder {
            for h in &layer.heads {
                out.extend([h.wq, h.wk, h.wv]);
            }
            out.extend([
                layer.out_w, layer.out_b, layer.ffn1_w, layer.ffn1_b, layer.ffn2_w, layer.ffn2_b,
                layer.ln1_gain, layer.ln1_bias, layer.ln2_gain, layer.ln2_bias,
            ]);
        }
        out.extend([self.classifier.weight, self.classifier.bias]);
        out
    }
}

impl ModelParams {
    fn init(config: &ModelConfig, kernel_count: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lambda = config.topology.joint_count;
        let sgcn = SgcnParams::init(&config.sgcn_features, kernel_count, lambda, &mut rng)?;
        let encoder = (0..config.encoder.num_layers)
            .map(|_| EncoderLayerParams::init(&config.encoder, &mut rng))
            .collect();
        let classifier =
            ClassifierParams::init(config.encoder.d_model, config.classes.len(), &mut rng);
        Ok(ModelParams { sgcn, encoder, classifier })
    }

    pub fn to_vars(&self, tape: &mut Tape, grad: bool) -> ModelVars {
        self.to_vars_with(tape, |t, _, arc| t.leaf_arc(Arc::clone(arc), grad))
    }

    /// Build tape handles with a custom leaf function; `index` follows the
    /// [`named`](Self::named) registry order. Lets callers substitute a
    /// single parameter (e.g. for finite-difference checks).
    pub fn to_vars_with(
        &self,
        tape: &mut Tape,
        mut leaf: impl FnMut(&mut Tape, usize, &Arc<Tensor>) -> Var,
    ) -> ModelVars {
        let mut idx = 0usize;
        let mut next = |tape: &mut Tape, t: &Arc<Tensor>| {
            let v = leaf(tape, idx, t);
            idx += 1;
            v
        };
        let sgcn = self
            .sgcn
            .layers
            .iter()
            .map(|l| crate::gcn::SgcnLayerVars {
                weights: l.weights.iter().map(|w| next(tape, w)).collect(),
                masks: l.masks.iter().map(|m| next(tape, m)).collect(),
                relu: l.relu,
            })
            .collect();
        let encoder = self
            .encoder
            .iter()
            .map(|l| EncoderLayerVars {
                heads: l
                    .heads
                    .iter()
                    .map(|h| crate::encoder::HeadVars {
                        wq: next(tape, &h.wq),
                        wk: next(tape, &h.wk),
                        wv: next(tape, &h.wv),
                    })
                    .collect(),
                out_w: next(tape, &l.out_w),
                out_b: next(tape, &l.out_b),
                ffn1_w: next(tape, &l.ffn1_w),
                ffn1_b: next(tape, &l.ffn1_b),
                ffn2_w: next(tape, &l.ffn2_w),
                ffn2_b: next(tape, &l.ffn2_b),
                ln1_gain: next(tape, &l.ln1_gain),
                ln1_bias: next(tape, &l.ln1_bias),
                ln2_gain: next(tape, &l.ln2_gain),
                ln2_bias: next(tape, &l.ln2_bias),
            })
            .collect();
        let classifier = crate::encoder::ClassifierVars {
            weight: next(tape, &self.classifier.weight),
            bias: next(tape, &self.classifier.bias),
        };
        ModelVars { sgcn, encoder, classifier }
    }

    /// Checkpoint-contract parameter names, in registry order.
    pub fn named(&self) -> Vec<(String, ParamKind, Arc<Tensor>)> {
        let mut out = Vec::new();
        for (i, layer) in self.sgcn.layers.iter().enumerate() {
            for (k, w) in layer.weights.iter().enumerate() {
                out.push((format!("sgcn.layer{i}.W{k}"), ParamKind::Weight, Arc::clone(w)));
            }
            for (k, m) in layer.masks.iter().enumerate() {
                out.push((format!("sgcn.layer{i}.M{k}"), ParamKind::Mask, Arc::clone(m)));
            }
        }
        for (i, layer) in self.encoder.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                out.push((format!("tge.layer{i}.head{h}.WQ"), ParamKind::Weight, Arc::clone(&head.wq)));
                out.push((format!("tge.layer{i}.head{h}.WK"), ParamKind::Weight, Arc::clone(&head.wk)));
                out.push((format!("tge.layer{i}.head{h}.WV"), ParamKind::Weight, Arc::clone(&head.wv)));
            }
            out.push((format!("tge.layer{i}.out_proj.weight"), ParamKind::Weight, Arc::clone(&layer.out_w)));
            out.push((format!("tge.layer{i}.out_proj.bias"), ParamKind::Bias, Arc::clone(&layer.out_b)));
            out.push((format!("tge.layer{i}.ffn1.weight"), ParamKind::Weight, Arc::clone(&layer.ffn1_w)));
            out.push((format!("tge.layer{i}.ffn1.bias"), ParamKind::Bias, Arc::clone(&layer.ffn1_b)));
            out.push((format!("tge.layer{i}.ffn2.weight"), ParamKind::Weight, Arc::clone(&layer.ffn2_w)));
            out.push((format!("tge.layer{i}.ffn2.bias"), ParamKind::Bias, Arc::clone(&layer.ffn2_b)));
            out.push((format!("tge.layer{i}.ln1.gain"), ParamKind::Norm, Arc::clone(&layer.ln1_gain)));
            out.push((format!("tge.layer{i}.ln1.bias"), ParamKind::Norm, Arc::clone(&layer.ln1_bias)));
            out.push((format!("tge.layer{i}.ln2.gain"), ParamKind::Norm, Arc::clone(&layer.ln2_gain)));
            out.push((format!("tge.layer{i}.ln2.bias"), ParamKind::Norm, Arc::clone(&layer.ln2_bias)));
        }
        out.push(("head.fc.weight".into(), ParamKind::Weight, Arc::clone(&self.classifier.weight)));
        out.push(("head.fc.bias".into(), ParamKind::Bias, Arc::clone(&self.classifier.bias)));
        out
    }

    /// Mutable slots in the same order as [`named`](Self::named).
    pub fn slots_mut(&mut self) -> Vec<(String, ParamKind, &mut Arc<Tensor>)> {
        let mut out: Vec<(String, ParamKind, &mut Arc<Tensor>)> = Vec::new();
        for (i, layer) in self.sgcn.layers.iter_mut().enumerate() {
            for (k, w) in layer.weights.iter_mut().enumerate() {
                out.push((format!("sgcn.layer{i}.W{k}"), ParamKind::Weight, w));
            }
            for (k, m) in layer.masks.iter_mut().enumerate() {
                out.push((format!("sgcn.layer{i}.M{k}"), ParamKind::Mask, m));
            }
        }
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            for (h, head) in layer.heads.iter_mut().enumerate() {
                out.push((format!("tge.layer{i}.head{h}.WQ"), ParamKind::Weight, &mut head.wq));
                out.push((format!("tge.layer{i}.head{h}.WK"), ParamKind::Weight, &mut head.wk));
                out.push((format!("tge.layer{i}.head{h}.WV"), ParamKind::Weight, &mut head.wv));
            }
            out.push((format!("tge.layer{i}.out_proj.weight"), ParamKind::Weight, &mut layer.out_w));
            out.push((format!("tge.layer{i}.out_proj.bias"), ParamKind::Bias, &mut layer.out_b));
            out.push((format!("tge.layer{i}.ffn1.weight"), ParamKind::Weight, &mut layer.ffn1_w));
            out.push((format!("tge.layer{i}.ffn1.bias"), ParamKind::Bias, &mut layer.ffn1_b));
            out.push((format!("tge.layer{i}.ffn2.weight"), ParamKind::Weight, &mut layer.ffn2_w));
            out.push((format!("tge.layer{i}.ffn2.bias"), ParamKind::Bias, &mut layer.ffn2_b));
            out.push((format!("tge.layer{i}.ln1.gain"), ParamKind::Norm, &mut layer.ln1_gain));
            out.push((format!("tge.layer{i}.ln1.bias"), ParamKind::Norm, &mut layer.ln1_bias));
            out.push((format!("tge.layer{i}.ln2.gain"), ParamKind::Norm, &mut layer.ln2_gain));
            out.push((format!("tge.layer{i}.ln2.bias"), ParamKind::Norm, &mut layer.ln2_bias));
        }
        out.push(("head.fc.weight".into(), ParamKind::Weight, &mut self.classifier.weight));
        out.push(("head.fc.bias".into(), ParamKind::Bias, &mut self.classifier.bias));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, _, t)| t.numel()).sum()
    }
}

/// Assembled model: config, derived graph structures, parameters.
#[derive(Debug, Clone)]
pub struct GestureModel {
    pub config: ModelConfig,
    pub topology: HandTopology,
    pub adjacency: AdjacencyStack,
    pub params: ModelParams,
    vocab: LabelVocab,
}

impl GestureModel {
    /// Xavier-initialized model, deterministic per seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = LabelVocab::new(config.classes.clone())?;
        let topology = build_topology(&config.topology)?;
        let reference = match &config.reference_frame {
            Some(rows) => Some(SkeletonFrame::from_rows(rows)),
            None => None,
        };
        let adjacency = AdjacencyStack::build(
            &topology,
            config.partition,
            reference.as_ref(),
            config.identity_per_partition,
        )?;
        let params = ModelParams::init(&config, adjacency.kernel_count(), seed)?;
        Ok(GestureModel { config, topology, adjacency, params, vocab })
    }

    pub fn vocab(&self) -> &LabelVocab {
        &self.vocab
    }

    pub fn vars(&self, tape: &mut Tape, grad: bool) -> ModelVars {
        self.params.to_vars(tape, grad)
    }

    /// Batch forward over one [γ, λ, 3] window on an existing tape.
    /// Returns (logits, probabilities).
    pub fn forward_window(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        window: Var,
        train: bool,
        seed: u64,
    ) -> Result<(Var, Var)> {
        let shape = tape.value(window).shape().to_vec();
        if shape.len() != 3 || shape[1] != self.topology.joint_count() || shape[2] != COORDS {
            return Err(Error::shape(
                "forward_window",
                format!(
                    "expected [gamma, {}, {COORDS}], got {shape:?}",
                    self.topology.joint_count()
                ),
            ));
        }
        let spatial = sgcn_forward(tape, window, &self.adjacency, &vars.sgcn)?;
        let joint_major = tape.permute(spatial, &[1, 0, 2])?;
        let phases: Vec<usize> = (0..shape[0]).collect();
        let encoded = encode(
            tape,
            joint_major,
            &vars.encoder,
            &self.config.encoder,
            &phases,
            None,
            train,
            seed,
        )?;
        let pooled = global_pool(tape, encoded)?;
        classify(tape, pooled, &vars.classifier)
    }

    /// Inference-only window classification: probabilities over the vocabulary.
    pub fn classify_window(&self, window: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new(false);
        let vars = self.vars(&mut tape, false);
        let w = tape.leaf(window.clone(), false);
        let (_, probs) = self.forward_window(&mut tape, &vars, w, false, 0)?;
        Ok(tape.value(probs).data().to_vec())
    }

    /// Graph-convolution features of a single [λ, 3] frame -> [λ, d_model].
    pub fn frame_features(&self, frame: &Tensor) -> Result<Tensor> {
        let lambda = self.topology.joint_count();
        if frame.shape() != [lambda, COORDS] {
            return Err(Error::shape(
                "frame_features",
                format!("expected [{lambda}, {COORDS}], got {:?}", frame.shape()),
            ));
        }
        let mut tape = Tape::new(false);
        let vars = self.vars(&mut tape, false);
        let input = frame.clone().reshape(&[1, lambda, COORDS])?;
        let x = tape.leaf(input, false);
        let out = sgcn_forward(&mut tape, x, &self.adjacency, &vars.sgcn)?;
        let d = self.config.encoder.d_model;
        tape.value(out).clone().reshape(&[lambda, d])
    }

    // ── checkpoint I/O ─────────────────────────────────────────────────

    pub fn save(&self, path: &Path, dtype: CheckpointDtype) -> Result<()> {
        let tensors: BTreeMap<String, TensorRecord> = self
            .params
            .named()
            .into_iter()
            .map(|(name, _, t)| {
                let record = match dtype {
                    CheckpointDtype::F64 => TensorRecord {
                        shape: t.shape().to_vec(),
                        data: TensorData::F64(t.data().to_vec()),
                    },
                    CheckpointDtype::F32 => TensorRecord {
                        shape: t.shape().to_vec(),
                        data: TensorData::F32(t.data().iter().map(|&v| v as f32).collect()),
                    },
                };
                (name, record)
            })
            .collect();
        let file = CheckpointFile {
            format_version: CHECKPOINT_FORMAT_VERSION,
            dtype: dtype.name().to_string(),
            config: self.config.clone(),
            tensors,
        };
        let json = serde_json::to_string(&file)
            .map_err(|e| Error::Parse { path: path.display().to_string(), msg: e.to_string() })?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: CheckpointFile = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.display().to_string(), msg: e.to_string() })?;
        if file.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Parse {
                path: path.display().to_string(),
                msg: format!("unsupported checkpoint format version {}", file.format_version),
            });
        }
        let mut model = GestureModel::init(file.config, 0)?;
        let mut tensors = file.tensors;
        for (name, _, slot) in model.params.slots_mut() {
            let record = tensors.remove(&name).ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                msg: format!("checkpoint is missing tensor {name:?}"),
            })?;
            let data = match record.data {
                TensorData::F64(v) => v,
                TensorData::F32(v) => v.into_iter().map(|x| x as f64).collect(),
            };
            let tensor = Tensor::new(&record.shape, data).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                msg: format!("tensor {name:?}: {e}"),
            })?;
            if tensor.shape() != slot.shape() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    msg: format!(
                        "tensor {name:?} has shape {:?}, expected {:?}",
                        tensor.shape(),
                        slot.shape()
                    ),
                });
            }
            *slot = Arc::new(tensor);
        }
        if let Some(name) = tensors.keys().next() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                msg: format!("unexpected tensor {name:?} in checkpoint"),
            });
        }
        Ok(model)
    }
}

/// Checkpoint storage precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointDtype {
    F64,
    F32,
}

impl CheckpointDtype {
    fn name(self) -> &'static str {
        match self {
            CheckpointDtype::F64 => "f64",
            CheckpointDtype::F32 => "f32",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    dtype: String,
    config: ModelConfig,
    tensors: BTreeMap<String, TensorRecord>,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    data: TensorData,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TensorData {
    F64(Vec<f64>),
    F32(Vec<f32>),
}
