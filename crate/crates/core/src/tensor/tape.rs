//! Define-by-run tape with reverse-mode differentiation.
//!
//! Every primitive checks shapes, guards against non-finite output, and
//! (when the tape was built with gradients enabled and an input requires
//! them) records a closure that maps the output gradient to input gradients.
//! `backward` walks the tape once in reverse.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{flops, row_major_strides, split3, Tensor};
use crate::error::{Error, Result};

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Arc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    needs_grad: bool,
    is_grad_leaf: bool,
}

/// Recorded computation. Topologically ordered by construction.
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

/// Gradients of a scalar with respect to every grad-enabled leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn guard(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_all_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Tape {
    /// `grad` enables recording of backward closures.
    pub fn new(grad: bool) -> Self {
        Tape { nodes: Vec::new(), grad_enabled: grad }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf value. `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.leaf_arc(Arc::new(t), requires_grad)
    }

    /// Insert a shared leaf without copying its data.
    pub fn leaf_arc(&mut self, t: Arc<Tensor>, requires_grad: bool) -> Var {
        let rg = requires_grad && self.grad_enabled;
        self.nodes.push(Node {
            value: t,
            parents: Vec::new(),
            backward: None,
            needs_grad: rg,
            is_grad_leaf: rg,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value_arc(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes[v.0].value)
    }

    fn arc(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes[v.0].value)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn wants_grad(&self, vars: &[Var]) -> bool {
        self.grad_enabled && vars.iter().any(|v| self.needs(*v))
    }

    fn push(
        &mut self,
        value: Tensor,
        parents: Vec<usize>,
        needs: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            parents,
            backward,
            needs_grad: needs,
            is_grad_leaf: false,
        });
        Var(self.nodes.len() - 1)
    }

    // ── primitives ─────────────────────────────────────────────────────

    /// Matrix product. Supports [m,k]·[k,n], batched [B,m,k]·[B,k,n], and
    /// broadcast forms [B,m,k]·[k,n] and [m,k]·[B,k,n].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.arc(a), self.arc(b));
        let out = guard("matmul", matmul_forward(&ta, &tb)?)?;
        let needs = self.wants_grad(&[a, b]);
        let bw: Option<BackwardFn> = if needs {
            let (na, nb) = (self.needs(a), self.needs(b));
            Some(Box::new(move |g| matmul_backward(g, &ta, &tb, na, nb)))
        } else {
            None
        };
        Ok(self.push(out, vec![a.0, b.0], needs, bw))
    }

    /// Element-wise sum; `b` may be a suffix-shaped broadcast of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.arc(a), self.arc(b));
        check_broadcast("add", ta.shape(), tb.shape())?;
        let bn = tb.numel();
        let mut data = ta.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += tb.data()[i % bn];
        }
        let out = guard("add", Tensor::new(ta.shape(), data)?)?;
        let needs = self.wants_grad(&[a, b]);
        let bw: Option<BackwardFn> = if needs {
            let (na, nb) = (self.needs(a), self.needs(b));
            let b_shape = tb.shape().to_vec();
            Some(Box::new(move |g| {
                let da = na.then(|| g.clone());
                let db = nb.then(|| reduce_to_suffix(g, &b_shape));
                vec![da, db]
            }))
        } else {
            None
        };
        Ok(self.push(out, vec![a.0, b.0], needs, bw))
    }

    /// Element-wise product; `b` may be a suffix-shaped broadcast of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.arc(a), self.arc(b));
        check_broadcast("mul", ta.shape(), tb.shape())?;
        let bn = tb.numel();
        let mut data = ta.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v *= tb.data()[i % bn];
        }
        let out = guard("mul", Tensor::new(ta.shape(), data)?)?;
        let needs = self.wants_grad(&[a, b]);
        let bw: Option<BackwardFn> = if needs {
            let (na, nb) = (self.needs(a), self.needs(b));
            Some(Box::new(move |g| {
                let bn = tb.numel();
                let da = na.then(|| {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, gv)| gv * tb.data()[i % bn])
                        .collect();
                    Tensor::new(g.shape(), data).expect("mul backward shape")
                });
                let db = nb.then(|| {
                    let mut acc = vec![0.0; bn];
                    for (i, gv) in g.data().iter().enumerate() {
                        acc[i % bn] += gv * ta.data()[i];
                    }
                    Tensor::new(tb.shape(), acc).expect("mul backward shape")
                });
                vec![da, db]
            }))
        } else {
            None
        };
        Ok(self.push(out, vec![a.0, b.0], needs, bw))
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ta = self.arc(a);
        let data = ta.data().iter().map(|v| v * s).collect();
        let out = guard("scale", Tensor::new(ta.shape(), data)?)?;
        let needs = self.wants_grad(&[a]);
        let bw: Option<BackwardFn> = if needs {
            Some(Box::new(move |g| {
                let data = g.data().iter().map(|v| v * s).collect();
                vec![Some(Tensor::new(g.shape(), data).expect("scale backward"))]
            }))
        } else {
            None
        };
        Ok(self.push(out, vec![a.0], needs, bw))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ta = self.arc(a);
        let data = ta.data().iter().map(|v| v.max(0.0)).collect();
        let out = guard("relu", Tensor::new(ta.shape(), data)?)?;
        let needs = self.wants_grad(&[a]);
        let bw: Option<BackwardFn> = if needs {
            Some(Box::new(move |g| {
                let data = g
                    .data()
                    .iter()
                    .zip(ta.data())
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect();
                vec![Some(Tensor::new(g.shape(), data).expect("relu backward"))]
            }))
        } else {
            None
        };
        Ok(self.push(out, vec![a.0], needs, bw))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let ta = self.arc(a);
        let data = ta.data().iter().map(|v| v.abs()).collect();
        let out = guard("abs", Tensor::new(ta.shape(), data)?)?;
        let needs = self.wants_grad(&[a]);
        let bw: Option<BackwardFn> = if needs {
            Some(Box::new(move |g| {
                let data = g
                    .data()
                    .iter()
                    .zip(ta.data())
                    .map(|(gv, x)| gv * sign(*x))
                    .collect();
                vec![Some(Tensor::new(g.shape(), data).expect("abs backward"))]
            }))
        } else {
            None
        };
        Ok(self.push(out, vec![a.0], needs, bw))
    }

    /// Numerically stable softmax along `axis` (max subtraction per lane).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.arc(a);
        if axis >= ta.rank() {
            return Err(Error::shape("softmax", format!("axis {axis} out of range")));
        }
        let (outer, len, inner) = split3(ta.shape(), axis);
        if len == 0 {
            return Err(Error::shape("softmax", "empty axis"));
        }
        let mut data = ta.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(data[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (data[base + j * inner] - max).exp();
                    data[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    data[base + j * inner] /= sum;
                }
            }
        }
        let out = guard("softmax", Tensor::new(ta.shape(), data)?)?;
        let needs = self.wants_grad(&[a]);
        let probs = Arc::new(out.clone());
        let bw: Option<BackwardFn> = if needs {
            let probs = Arc::clone(&probs);
            Some(Box::new(move |g| {
                let (outer, len, inner) = split3(probs.shape(), axis);
                let p = probs.data();
                let mut dx = vec![0.0; p.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = 0.0;
                        for j in 0..len {
                            let k = base + j * inner;
                            dot += g.data()[k] * p[k];
                        }
                        for j in 0..len {
                            let k = base + j * inner;
                            dx[k] = p[k] * (g.data()[k] - dot);
                        }
                    }
                }
                vec![Some(Tensor::new(probs.shape(), dx).expect("softmax backward"))]
            }))
        } else {
            None
        };
        self.nodes.push(Node {
            value: probs,
            parents: vec![a.0],
            backward: bw,
            needs_grad: needs,
            is_grad_leaf: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Layer normalization over the last axis: (x − μ) / √(σ² + eps).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let ta = self.arc(a);
        if ta.rank() == 0 {
            return Err(Error::shape("layer_norm", "rank-0 input"));
        }
        let len = *ta.shape().last().unwrap();
        let lanes = ta.numel() / len;
        let mut data = ta.data().to_vec();
        let mut inv_std = Vec::with_capacity(lanes);
        for l in 0..lanes {
            let lane = &mut data[l * len..(l + 1) * len];
            let mean = lane.iter().sum::<f64>() / len as f64;
            let var = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for v in lane.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let out = guard("layer_norm", Tensor::new(ta.shape(), data)?)?;
        let needs = self.wants_grad(&[a]);
        let normalized = Arc::new(out);
        let bw: Option<BackwardFn> = if needs {
            let normalized = Arc::clone(&normalized);
            Some(Box::new(move |g| {
                let xhat = normalized.data();
                let mut dx = vec![0.0; xhat.len()];
                for l in 0..inv_std.len() {
                    let s = l * len;
                    let gl = &g.data()[s..s + len];
                    let xl = &xhat[s..s + len];
                    let m1 = gl.iter().sum::<f64>() / len as f64;
                    let m2 = gl.iter().zip(xl).map(|(gv, xv)| gv * xv).sum::<f64>() / len as f64;
                    for j in 0..len {
                        dx[s + j] = inv_std[l] * (gl[j] - m1 - xl[j] * m2);
                    }
                }
                vec![Some(Tensor::new(normalized.shape(), dx).expect("layer_norm backward"))]
            }))
        } else {
            None
        };
        self.nodes.push(Node {
            value: normalized,
            parents: vec![a.0],
            backward: bw,
            needs_grad: needs,
            is_grad_leaf: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Arithmetic mean along `axis`; the axis is removed from the shape.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.arc(a);
        if axis >= ta.rank() {
            return Err(Error::shape("mean", format!("axis {axis} out of range")));
        }
        let (outer, len, inner) = split3(ta.shape(), axis);
        let mut out_shape: Vec<usize> =
            ta.shape().iter().enumerate().filter(|(i, _)| *i != axis).map(|(_, &s)| s).collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += ta.data()[o * len * inner + j * inner + i];
                }
            }
        }
        for v in data.iter_mut() {
            *v /= len as f64;
        }
        let out = guard("mean", Tensor::new(&out_shape, data)?)?;
        let needs = self.wants_grad(&[a]);
        let in_shape = ta.shape().to_vec();
        let bw: Option<BackwardFn> = if needs {
            Some(Box::new(move |g| {
                let (outer, len, inner) = split3(&in_shape, axis);
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            dx[o * len * inner + j * inner + i] =
                                g.data()[o * inner + i] / len as f64;
                        }
                    }
                }
                vec![Some(Tensor::new(&in_shape, dx).expect("mean backward"))]
            }))
        } else {
            None
        };
        Ok(self.push(out, vec![a.0], needs, bw))
    }

    /// Sum of all elements, as a rank-1 scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let ta = self.arc(a);
        let out = guard("sum_all", Tensor::scalar(ta.data().iter().sum()))?;
        let needs = self.wants_grad(&[a]);
        let shape = ta.shape().to_vec();
        let bw: Option<BackwardFn> = if needs {
            Some(Box::new(move |g| {
                vec![Some(Tensor::full(&shape, g.data()[0]))]
            }))
        } else {
            None
        };
        Ok(self.push(out, vec![a.0], needs, bw))
    }

    /// Concatenate along `axis`. All other extents must match.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let tensors: Vec<Arc<Tensor>> = parts.iter().map(|v| self.arc(*v)).collect();
        let rank = tensors[0].rank();
        if axis >= rank {
            return Err(Error::shape("concat", format!("axis {axis} out of range")));
        }
        let mut out_shape = tensors[0].shape().to_vec();
        for t in &tensors[1..] {
            if t.rank() != rank {
                return Err(Error::shape("concat", "rank mismatch"));
            }
            for d in 0..rank {
                if d != axis && t.shape()[d] != out_shape[d] {
                    return Err(Error::shape("concat", "extent mismatch off the concat axis"));
                }
            }
            out_shape[axis] += t.shape()[axis];
        }
        let (outer, _, inner) = split3(&out_shape, axis);
        let out_numel: usize = out_shape.iter().product();
        let mut data = vec![0.0; out_numel];
        let out_row = out_shape[axis] * inner;
        let mut offset = 0;
        let mut part_lens = Vec::with_capacity(tensors.len());
        for t in &tensors {
            let chunk = t.shape()[axis] * inner;
            for o in 0..outer {
                let src = &t.data()[o * chunk..(o + 1) * chunk];
                data[o * out_row + offset..o * out_row + offset + chunk].copy_from_slice(src);
            }
            part_lens.push(chunk);
            offset += chunk;
        }
        let out = guard("concat", Tensor::new(&out_shape, data)?)?;
        let needs = self.wants_grad(parts);
        let needs_each: Vec<bool> = parts.iter().map(|v| self.needs(*v)).collect();
        let shapes: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape().to_vec()).collect();
        let bw: Option<BackwardFn> = if needs {
            Some(Box::new(move |g| {
                let mut grads = Vec::with_capacity(shapes.len());
                let mut offset = 0;
                for (p, shape) in shapes.iter().enumerate() {
                    let chunk = part_lens[p];
                    if needs_each[p] {
                        let mut dx = vec![0.0; outer * chunk];
                        for o in 0..outer {
                            dx[o * chunk..(o + 1) * chunk].copy_from_slice(
                                &g.data()[o * out_row + offset..o * out_row + offset + chunk],
                            );
                        }
                        grads.push(Some(Tensor::new(shape, dx).expect("concat backward")));
                    } else {
                        grads.push(None);
                    }
                    offset += chunk;
                }
                grads
            }))
        } else {
            None
        };
        Ok(self.push(out, parts.iter().map(|v| v.0).collect(), needs, bw))
    }

    /// Reorder axes: output dim d takes input dim `axes[d]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let ta = self.arc(a);
        let rank = ta.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&d| d >= rank || std::mem::replace(&mut seen[d], true)) {
            return Err(Error::shape("permute", format!("invalid axes {axes:?} for rank {rank}")));
        }
        let out = guard("permute", permute_forward(&ta, axes))?;
        let needs = self.wants_grad(&[a]);
        let axes_owned = axes.to_vec();
        let bw: Option<BackwardFn> = if needs {
            Some(Box::new(move |g| {
                let mut inverse = vec![0usize; axes_owned.len()];
                for (d, &src) in axes_owned.iter().enumerate() {
                    inverse[src] = d;
                }
                vec![Some(permute_forward(g, &inverse))]
            }))
        } else {
            None
        };
        Ok(self.push(out, vec![a.0], needs, bw))
    }

    /// Same data, different shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.arc(a);
        let out = ta.as_ref().clone().reshape(shape)?;
        let needs = self.wants_grad(&[a]);
        let in_shape = ta.shape().to_vec();
        let bw: Option<BackwardFn> = if needs {
            Some(Box::new(move |g| {
                vec![Some(g.clone().reshape(&in_shape).expect("reshape backward"))]
            }))
        } else {
            None
        };
        Ok(self.push(out, vec![a.0], needs, bw))
    }

    /// Inverted dropout: keeps each element with probability 1−p and scales
    /// kept elements by 1/(1−p). Identity when `train` is false or p = 0.
    pub fn dropout(&mut self, a: Var, p: f64, train: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let ta = self.arc(a);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..ta.numel())
            .map(|_| if rng.gen::<f64>() >= p { 1.0 / keep } else { 0.0 })
            .collect();
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = guard("dropout", Tensor::new(ta.shape(), data)?)?;
        let needs = self.wants_grad(&[a]);
        let bw: Option<BackwardFn> = if needs {
            let shape = ta.shape().to_vec();
            Some(Box::new(move |g| {
                let data = g.data().iter().zip(&mask).map(|(gv, m)| gv * m).collect();
                vec![Some(Tensor::new(&shape, data).expect("dropout backward"))]
            }))
        } else {
            None
        };
        Ok(self.push(out, vec![a.0], needs, bw))
    }

    /// Cross entropy of a rank-1 logit vector against a class index,
    /// computed as logsumexp(x) − x[class].
    pub fn cross_entropy(&mut self, logits: Var, class: usize) -> Result<Var> {
        let ta = self.arc(logits);
        if ta.rank() != 1 {
            return Err(Error::shape("cross_entropy", "logits must be rank-1"));
        }
        let c = ta.numel();
        if class >= c {
            return Err(Error::Label(format!("class {class} out of range for {c} logits")));
        }
        let max = ta.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + ta.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let out = guard("cross_entropy", Tensor::scalar(lse - ta.data()[class]))?;
        let needs = self.wants_grad(&[logits]);
        let bw: Option<BackwardFn> = if needs {
            Some(Box::new(move |g| {
                let g0 = g.data()[0];
                let max = ta.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = ta.data().iter().map(|v| (v - max).exp()).sum();
                let mut dx: Vec<f64> =
                    ta.data().iter().map(|v| g0 * (v - max).exp() / sum).collect();
                dx[class] -= g0;
                vec![Some(Tensor::new(ta.shape(), dx).expect("cross_entropy backward"))]
            }))
        } else {
            None
        };
        Ok(self.push(out, vec![logits.0], needs, bw))
    }

    /// x·W + b.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let prod = self.matmul(x, w)?;
        self.add(prod, b)
    }

    // ── reverse pass ───────────────────────────────────────────────────

    /// Propagate ∂loss/∂node for every grad-enabled leaf. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(Error::shape("backward", "loss must be scalar"));
        }
        let mut pending: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut result: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        pending[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = pending[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            if let Some(bw) = &node.backward {
                let parent_grads = bw(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (slot, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !pg.is_all_finite() {
                        return Err(Error::NonFinite { op: "backward" });
                    }
                    accumulate(&mut pending[*slot], pg);
                }
            }
            if node.is_grad_leaf {
                result[id] = Some(g);
            }
        }
        Ok(Gradients { grads: result })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            debug_assert_eq!(acc.shape(), g.shape());
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if b.len() > a.len() || a[a.len() - b.len()..] != *b {
        return Err(Error::shape(
            op,
            format!("shape {b:?} is not a suffix broadcast of {a:?}"),
        ));
    }
    Ok(())
}

/// Sum `g` over its leading dims so the result has `suffix` shape.
fn reduce_to_suffix(g: &Tensor, suffix: &[usize]) -> Tensor {
    let bn: usize = suffix.iter().product();
    if bn == g.numel() {
        return Tensor::new(suffix, g.data().to_vec()).expect("reduce_to_suffix");
    }
    let mut acc = vec![0.0; bn];
    for (i, v) in g.data().iter().enumerate() {
        acc[i % bn] += v;
    }
    Tensor::new(suffix, acc).expect("reduce_to_suffix")
}

fn permute_forward(t: &Tensor, axes: &[usize]) -> Tensor {
    let in_strides = row_major_strides(t.shape());
    let out_shape: Vec<usize> = axes.iter().map(|&d| t.shape()[d]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&d| in_strides[d]).collect();
    let mut data = Vec::with_capacity(t.numel());
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    for _ in 0..t.numel() {
        let src: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        data.push(t.data()[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, data).expect("permute shape")
}

// ── matmul kernels ──────────────────────────────────────────────────────

/// C[m,n] (+)= A·B with explicit strides; counts m·k·n multiply-adds.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(m * n <= c.len());
    flops::record((m * k * n) as u64);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mm = |m: usize, k: usize, n: usize, av: &[f64], bv: &[f64], cv: &mut [f64]| {
        gemm(m, k, n, av, k as isize, 1, bv, n as isize, 1, 0.0, cv);
    };
    match (a.rank(), b.rank()) {
        (2, 2) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let (k2, n) = (b.shape()[0], b.shape()[1]);
            if k != k2 {
                return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            let mut out = Tensor::zeros(&[m, n]);
            mm(m, k, n, a.data(), b.data(), out.data_mut());
            Ok(out)
        }
        (3, 3) => {
            let (ba, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let (bb, k2, n) = (b.shape()[0], b.shape()[1], b.shape()[2]);
            if ba != bb || k != k2 {
                return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            let mut out = Tensor::zeros(&[ba, m, n]);
            for i in 0..ba {
                mm(
                    m,
                    k,
                    n,
                    &a.data()[i * m * k..(i + 1) * m * k],
                    &b.data()[i * k * n..(i + 1) * k * n],
                    &mut out.data_mut()[i * m * n..(i + 1) * m * n],
                );
            }
            Ok(out)
        }
        (3, 2) => {
            let (ba, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let (k2, n) = (b.shape()[0], b.shape()[1]);
            if k != k2 {
                return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            // Shared right operand: one tall product over the flattened batch.
            let mut out = Tensor::zeros(&[ba, m, n]);
            mm(ba * m, k, n, a.data(), b.data(), out.data_mut());
            Ok(out)
        }
        (2, 3) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let (bb, k2, n) = (b.shape()[0], b.shape()[1], b.shape()[2]);
            if k != k2 {
                return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            let mut out = Tensor::zeros(&[bb, m, n]);
            for i in 0..bb {
                mm(
                    m,
                    k,
                    n,
                    a.data(),
                    &b.data()[i * k * n..(i + 1) * k * n],
                    &mut out.data_mut()[i * m * n..(i + 1) * m * n],
                );
            }
            Ok(out)
        }
        _ => Err(Error::shape(
            "matmul",
            format!("unsupported ranks {} x {}", a.rank(), b.rank()),
        )),
    }
}

fn matmul_backward(g: &Tensor, a: &Tensor, b: &Tensor, na: bool, nb: bool) -> Vec<Option<Tensor>> {
    match (a.rank(), b.rank()) {
        (2, 2) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let da = na.then(|| {
                let mut da = Tensor::zeros(&[m, k]);
                gemm(m, n, k, g.data(), n as isize, 1, b.data(), 1, n as isize, 0.0, da.data_mut());
                da
            });
            let db = nb.then(|| {
                let mut db = Tensor::zeros(&[k, n]);
                gemm(k, m, n, a.data(), 1, k as isize, g.data(), n as isize, 1, 0.0, db.data_mut());
                db
            });
            vec![da, db]
        }
        (3, 3) => {
            let (ba, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let n = b.shape()[2];
            let da = na.then(|| {
                let mut da = Tensor::zeros(&[ba, m, k]);
                for i in 0..ba {
                    gemm(
                        m,
                        n,
                        k,
                        &g.data()[i * m * n..(i + 1) * m * n],
                        n as isize,
                        1,
                        &b.data()[i * k * n..(i + 1) * k * n],
                        1,
                        n as isize,
                        0.0,
                        &mut da.data_mut()[i * m * k..(i + 1) * m * k],
                    );
                }
                da
            });
            let db = nb.then(|| {
                let mut db = Tensor::zeros(&[ba, k, n]);
                for i in 0..ba {
                    gemm(
                        k,
                        m,
                        n,
                        &a.data()[i * m * k..(i + 1) * m * k],
                        1,
                        k as isize,
                        &g.data()[i * m * n..(i + 1) * m * n],
                        n as isize,
                        1,
                        0.0,
                        &mut db.data_mut()[i * k * n..(i + 1) * k * n],
                    );
                }
                db
            });
            vec![da, db]
        }
        (3, 2) => {
            let (ba, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let n = b.shape()[1];
            let da = na.then(|| {
                let mut da = Tensor::zeros(&[ba, m, k]);
                gemm(
                    ba * m,
                    n,
                    k,
                    g.data(),
                    n as isize,
                    1,
                    b.data(),
                    1,
                    n as isize,
                    0.0,
                    da.data_mut(),
                );
                da
            });
            let db = nb.then(|| {
                let mut db = Tensor::zeros(&[k, n]);
                gemm(
                    k,
                    ba * m,
                    n,
                    a.data(),
                    1,
                    k as isize,
                    g.data(),
                    n as isize,
                    1,
                    0.0,
                    db.data_mut(),
                );
                db
            });
            vec![da, db]
        }
        (2, 3) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let (bb, n) = (b.shape()[0], b.shape()[2]);
            let da = na.then(|| {
                let mut da = Tensor::zeros(&[m, k]);
                for i in 0..bb {
                    gemm(
                        m,
                        n,
                        k,
                        &g.data()[i * m * n..(i + 1) * m * n],
                        n as isize,
                        1,
                        &b.data()[i * k * n..(i + 1) * k * n],
                        1,
                        n as isize,
                        1.0,
                        da.data_mut(),
                    );
                }
                da
            });
            let db = nb.then(|| {
                let mut db = Tensor::zeros(&[bb, k, n]);
                for i in 0..bb {
                    gemm(
                        k,
                        m,
                        n,
                        a.data(),
                        1,
                        k as isize,
                        &g.data()[i * m * n..(i + 1) * m * n],
                        n as isize,
                        1,
                        0.0,
                        &mut db.data_mut()[i * k * n..(i + 1) * k * n],
                    );
                }
                db
            });
            vec![da, db]
        }
        _ => unreachable!("matmul_backward on checked shapes"),
    }
}
