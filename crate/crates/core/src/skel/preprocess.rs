//! Translation and scale invariance for raw skeleton sequences.

use super::{HandTopology, SkeletonSequence};
use crate::error::{Error, Result};

const MIN_BONE_LENGTH: f64 = 1e-9;

/// Translate so the wrist joint of frame 0 sits at the origin and scale so
/// the mean bone length (over topology edges) of frame 0 equals 1. The same
/// offset and scale are applied to every frame, which keeps the transform
/// causal for streaming input.
pub fn normalize_sequence(
    seq: &SkeletonSequence,
    topology: &HandTopology,
) -> Result<SkeletonSequence> {
    if seq.joint_count() != topology.joint_count() {
        return Err(Error::shape(
            "normalize_sequence",
            format!("{} joints vs topology {}", seq.joint_count(), topology.joint_count()),
        ));
    }
    let first = seq.frame(0);
    let origin = first.joint(topology.wrist_index());
    let mut total = 0.0;
    for &(i, j) in topology.edges() {
        let (a, b) = (first.joint(i), first.joint(j));
        total +=
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    }
    let mean_bone = total / topology.edges().len() as f64;
    if mean_bone < MIN_BONE_LENGTH {
        return Err(Error::DegenerateSkeleton(mean_bone));
    }
    let inv = 1.0 / mean_bone;
    let frames = seq
        .frames()
        .iter()
        .map(|f| {
            f.map_joints(|p| {
                [(p[0] - origin[0]) * inv, (p[1] - origin[1]) * inv, (p[2] - origin[2]) * inv]
            })
        })
        .collect();
    SkeletonSequence::new(
        frames,
        seq.labels().map(|l| l.to_vec()),
        seq.annotations().to_vec(),
    )
}
