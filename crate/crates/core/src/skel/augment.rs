//! Training-set augmentation and sequence segmentation.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Annotation, SkeletonSequence};
use crate::error::Result;

/// No-gesture fragments shorter than this are dropped as annotation jitter.
const MIN_FRAGMENT_LEN: usize = 5;

/// Magnitudes for the moving-camera affine augmentation.
#[derive(Debug, Clone, Copy)]
pub struct RandomMovingParams {
    pub max_rotation: f64,
    pub max_scale_delta: f64,
    pub max_translation: f64,
}

impl Default for RandomMovingParams {
    fn default() -> Self {
        RandomMovingParams { max_rotation: 0.3, max_scale_delta: 0.2, max_translation: 0.1 }
    }
}

fn symmetric(rng: &mut impl Rng, magnitude: f64) -> f64 {
    if magnitude == 0.0 {
        0.0
    } else {
        rng.gen_range(-magnitude..magnitude)
    }
}

fn rotation_matrix(ax: f64, ay: f64, az: f64) -> [[f64; 3]; 3] {
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    // Rz · Ry · Rx
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

/// Random affine "moving camera" augmentation: start and end
/// rotation/scale/translation are sampled once and linearly interpolated
/// across frames, then applied per frame.
pub fn random_moving(
    seq: &SkeletonSequence,
    params: &RandomMovingParams,
    rng: &mut impl Rng,
) -> SkeletonSequence {
    let start_rot = [
        symmetric(rng, params.max_rotation),
        symmetric(rng, params.max_rotation),
        symmetric(rng, params.max_rotation),
    ];
    let end_rot = [
        symmetric(rng, params.max_rotation),
        symmetric(rng, params.max_rotation),
        symmetric(rng, params.max_rotation),
    ];
    let start_scale = 1.0 + symmetric(rng, params.max_scale_delta);
    let end_scale = 1.0 + symmetric(rng, params.max_scale_delta);
    let start_tr = [
        symmetric(rng, params.max_translation),
        symmetric(rng, params.max_translation),
        symmetric(rng, params.max_translation),
    ];
    let end_tr = [
        symmetric(rng, params.max_translation),
        symmetric(rng, params.max_translation),
        symmetric(rng, params.max_translation),
    ];
    let gamma = seq.len();
    let frames = seq
        .frames()
        .iter()
        .enumerate()
        .map(|(t, frame)| {
            let alpha = if gamma > 1 { t as f64 / (gamma - 1) as f64 } else { 0.0 };
            let lerp = |a: f64, b: f64| a + (b - a) * alpha;
            let rot = rotation_matrix(
                lerp(start_rot[0], end_rot[0]),
                lerp(start_rot[1], end_rot[1]),
                lerp(start_rot[2], end_rot[2]),
            );
            let scale = lerp(start_scale, end_scale);
            let tr = [
                lerp(start_tr[0], end_tr[0]),
                lerp(start_tr[1], end_tr[1]),
                lerp(start_tr[2], end_tr[2]),
            ];
            frame.map_joints(|p| {
                let mut out = [0.0f64; 3];
                for (r, o) in rot.iter().zip(out.iter_mut()) {
                    *o = scale * (r[0] * p[0] + r[1] * p[1] + r[2] * p[2]);
                }
                [out[0] + tr[0], out[1] + tr[1], out[2] + tr[2]]
            })
        })
        .collect();
    SkeletonSequence::new(frames, seq.labels().map(|l| l.to_vec()), seq.annotations().to_vec())
        .expect("augmentation preserves sequence validity")
}

/// Add i.i.d. Gaussian noise to every coordinate.
pub fn add_noise(seq: &SkeletonSequence, sigma: f64, rng: &mut impl Rng) -> SkeletonSequence {
    if sigma == 0.0 {
        return seq.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma must be non-negative");
    let frames = seq
        .frames()
        .iter()
        .map(|f| {
            f.map_joints(|p| {
                [
                    p[0] + normal.sample(rng),
                    p[1] + normal.sample(rng),
                    p[2] + normal.sample(rng),
                ]
            })
        })
        .collect();
    SkeletonSequence::new(frames, seq.labels().map(|l| l.to_vec()), seq.annotations().to_vec())
        .expect("augmentation preserves sequence validity")
}

/// Cut an annotated sequence into fixed windows. A window inherits a gesture
/// label iff at least `min_overlap` of its frames lie inside one annotation;
/// otherwise it gets `no_gesture_label`.
pub fn sliding_window_augment(
    seq: &SkeletonSequence,
    window: usize,
    stride: usize,
    min_overlap: f64,
    no_gesture_label: &str,
) -> Vec<(SkeletonSequence, String)> {
    assert!(window >= 1 && stride >= 1, "window and stride must be >= 1");
    assert!(min_overlap > 0.0 && min_overlap <= 1.0, "min_overlap must be in (0, 1]");
    let gamma = seq.len();
    if gamma < window {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= gamma {
        let last = start + window - 1;
        let mut best: Option<(&Annotation, usize)> = None;
        for a in seq.annotations() {
            let lo = start.max(a.start);
            let hi = last.min(a.end);
            if hi >= lo {
                let overlap = hi - lo + 1;
                if best.map_or(true, |(_, b)| overlap > b) {
                    best = Some((a, overlap));
                }
            }
        }
        let label = match best {
            Some((a, overlap)) if overlap as f64 / window as f64 >= min_overlap => a.label.clone(),
            _ => no_gesture_label.to_string(),
        };
        out.push((seq.slice(start, last), label));
        start += stride;
    }
    out
}

/// Split an annotated sequence into labeled gesture segments and the maximal
/// inter-annotation gaps (no-gesture fragments shorter than 5 frames are
/// dropped).
pub fn segment_sequences(
    seq: &SkeletonSequence,
) -> Result<(Vec<(SkeletonSequence, String)>, Vec<SkeletonSequence>)> {
    let mut segments = Vec::new();
    let mut fragments = Vec::new();
    let mut cursor = 0usize;
    for a in seq.annotations() {
        segments.push((seq.slice(a.start, a.end), a.label.clone()));
        if a.start > cursor && a.start - cursor >= MIN_FRAGMENT_LEN {
            fragments.push(seq.slice(cursor, a.start - 1));
        }
        cursor = a.end + 1;
    }
    if cursor < seq.len() && seq.len() - cursor >= MIN_FRAGMENT_LEN {
        fragments.push(seq.slice(cursor, seq.len() - 1));
    }
    Ok((segments, fragments))
}
