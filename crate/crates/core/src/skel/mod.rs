//! Skeleton data model: hand-graph topology, adjacency construction,
//! sequence preprocessing and augmentation.

mod augment;
mod preprocess;
mod topology;

pub use augment::{
    add_noise, random_moving, segment_sequences, sliding_window_augment, RandomMovingParams,
};
pub use preprocess::normalize_sequence;
pub use topology::{
    build_topology, normalize_adjacency, partition_graph, AdjacencyStack, HandTopology,
    PartitionStrategy, TopologyConfig,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Coordinates per joint.
pub const COORDS: usize = 3;

/// One time-slice of a skeleton stream: a λ×3 joint position matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFrame {
    joints: Tensor,
}

impl SkeletonFrame {
    pub fn new(joints: Tensor) -> Result<Self> {
        if joints.rank() != 2 || joints.shape()[1] != COORDS {
            return Err(Error::shape(
                "skeleton_frame",
                format!("expected [lambda, {COORDS}], got {:?}", joints.shape()),
            ));
        }
        if !joints.is_all_finite() {
            return Err(Error::NonFinite { op: "skeleton_frame" });
        }
        Ok(SkeletonFrame { joints })
    }

    pub fn from_rows(rows: &[[f64; COORDS]]) -> Self {
        let data = rows.iter().flatten().copied().collect();
        SkeletonFrame { joints: Tensor::new(&[rows.len(), COORDS], data).expect("frame shape") }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.shape()[0]
    }

    pub fn joints(&self) -> &Tensor {
        &self.joints
    }

    pub fn joint(&self, i: usize) -> [f64; COORDS] {
        let d = self.joints.data();
        [d[i * COORDS], d[i * COORDS + 1], d[i * COORDS + 2]]
    }

    /// Map every joint position through `f`.
    pub fn map_joints(&self, mut f: impl FnMut([f64; COORDS]) -> [f64; COORDS]) -> SkeletonFrame {
        let lambda = self.joint_count();
        let mut data = Vec::with_capacity(lambda * COORDS);
        for i in 0..lambda {
            data.extend_from_slice(&f(self.joint(i)));
        }
        SkeletonFrame { joints: Tensor::new(&[lambda, COORDS], data).expect("frame shape") }
    }
}

/// A labeled time span within a sequence; `end` is inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// Time-ordered skeleton frames with optional per-frame labels and
/// non-overlapping gesture annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    frames: Vec<SkeletonFrame>,
    labels: Option<Vec<String>>,
    annotations: Vec<Annotation>,
}

impl SkeletonSequence {
    pub fn new(
        frames: Vec<SkeletonFrame>,
        labels: Option<Vec<String>>,
        mut annotations: Vec<Annotation>,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Data("sequence must contain at least one frame".into()));
        }
        let lambda = frames[0].joint_count();
        if frames.iter().any(|f| f.joint_count() != lambda) {
            return Err(Error::Data("inconsistent joint count across frames".into()));
        }
        if let Some(l) = &labels {
            if l.len() != frames.len() {
                return Err(Error::Data(format!(
                    "{} labels for {} frames",
                    l.len(),
                    frames.len()
                )));
            }
        }
        annotations.sort_by_key(|a| a.start);
        for a in &annotations {
            if a.start > a.end || a.end >= frames.len() {
                return Err(Error::Data(format!(
                    "annotation [{}, {}] out of range for {} frames",
                    a.start,
                    a.end,
                    frames.len()
                )));
            }
        }
        for pair in annotations.windows(2) {
            if pair[1].start <= pair[0].end {
                return Err(Error::Data(format!(
                    "overlapping annotations [{}, {}] and [{}, {}]",
                    pair[0].start, pair[0].end, pair[1].start, pair[1].end
                )));
            }
        }
        Ok(SkeletonSequence { frames, labels, annotations })
    }

    pub fn unannotated(frames: Vec<SkeletonFrame>) -> Result<Self> {
        Self::new(frames, None, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.frames[0].joint_count()
    }

    pub fn frames(&self) -> &[SkeletonFrame] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &SkeletonFrame {
        &self.frames[t]
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    /// Copy of the frame range [start, end] without labels or annotations.
    pub fn slice(&self, start: usize, end: usize) -> SkeletonSequence {
        SkeletonSequence {
            frames: self.frames[start..=end].to_vec(),
            labels: None,
            annotations: Vec::new(),
        }
    }

    /// Stack all frames into one [γ, λ, 3] tensor.
    pub fn to_tensor(&self) -> Tensor {
        let gamma = self.len();
        let lambda = self.joint_count();
        let mut data = Vec::with_capacity(gamma * lambda * COORDS);
        for f in &self.frames {
            data.extend_from_slice(f.joints().data());
        }
        Tensor::new(&[gamma, lambda, COORDS], data).expect("sequence tensor")
    }

    /// Rebuild a sequence from a [γ, λ, 3] tensor.
    pub fn from_tensor(t: &Tensor) -> Result<SkeletonSequence> {
        if t.rank() != 3 || t.shape()[2] != COORDS {
            return Err(Error::shape(
                "from_tensor",
                format!("expected [gamma, lambda, {COORDS}], got {:?}", t.shape()),
            ));
        }
        let (gamma, lambda) = (t.shape()[0], t.shape()[1]);
        let frames = (0..gamma)
            .map(|g| {
                let chunk = t.data()[g * lambda * COORDS..(g + 1) * lambda * COORDS].to_vec();
                SkeletonFrame::new(Tensor::new(&[lambda, COORDS], chunk)?)
            })
            .collect::<Result<Vec<_>>>()?;
        SkeletonSequence::unannotated(frames)
    }

    pub fn with_annotations(mut self, annotations: Vec<Annotation>) -> Result<Self> {
        Self::new(std::mem::take(&mut self.frames), self.labels.take(), annotations)
    }
}
