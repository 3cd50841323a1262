//! Deterministic synthetic gesture-stream generator.
//!
//! Streams alternate idle gaps (rest pose with jitter, easing back to the
//! origin after displacing gestures) with parametric gesture trajectories
//! applied to a 20-joint rest pose. Annotations are exact by construction,
//! which makes the generated data usable as a metric oracle.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, SequenceRecord, Split};
use crate::error::{Error, Result};
use crate::skel::{Annotation, SkeletonFrame, SkeletonSequence};
use crate::vocab::NO_GESTURE;

/// Parametric gesture shapes. Static poses hold a curled-finger
/// configuration; the dynamic shapes translate the whole hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GesturePrototype {
    StaticPose(usize),
    CircleCw,
    CircleCcw,
    SwipeLeft,
    SwipeRight,
    Cross,
}

impl GesturePrototype {
    pub fn label(&self) -> String {
        match self {
            GesturePrototype::StaticPose(k) => format!("static_pose_{k}"),
            GesturePrototype::CircleCw => "circle_cw".into(),
            GesturePrototype::CircleCcw => "circle_ccw".into(),
            GesturePrototype::SwipeLeft => "swipe_left".into(),
            GesturePrototype::SwipeRight => "swipe_right".into(),
            GesturePrototype::Cross => "cross".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub prototypes: Vec<GesturePrototype>,
    pub train_streams: usize,
    pub val_streams: usize,
    pub test_streams: usize,
    /// Inclusive range of gestures per stream.
    pub gestures_per_stream: (usize, usize),
    /// Inclusive range of idle-gap lengths in frames.
    pub idle_gap: (usize, usize),
    /// Inclusive range of gesture durations in frames.
    pub gesture_duration: (usize, usize),
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            prototypes: vec![
                GesturePrototype::CircleCw,
                GesturePrototype::CircleCcw,
                GesturePrototype::SwipeLeft,
                GesturePrototype::SwipeRight,
                GesturePrototype::Cross,
            ],
            train_streams: 48,
            val_streams: 12,
            test_streams: 20,
            gestures_per_stream: (3, 5),
            idle_gap: (25, 45),
            gesture_duration: (24, 36),
            jitter_sigma: 0.001,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prototypes.len() < 2 {
            return Err(Error::Config("need at least two gesture prototypes".into()));
        }
        let mut labels: Vec<String> = self.prototypes.iter().map(|p| p.label()).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.prototypes.len() {
            return Err(Error::Config("duplicate gesture prototypes".into()));
        }
        for (lo, hi) in [self.gestures_per_stream, self.idle_gap, self.gesture_duration] {
            if lo == 0 || hi < lo {
                return Err(Error::Config(format!("invalid range ({lo}, {hi})")));
            }
        }
        if self.jitter_sigma < 0.0 {
            return Err(Error::Config("jitter_sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Class names in prototype order, sentinel last.
    pub fn class_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.prototypes.iter().map(|p| p.label()).collect();
        names.push(NO_GESTURE.to_string());
        names
    }
}

/// Rest coordinates for the stock 20-joint hand, wrist at the origin.
pub fn rest_pose() -> [[f64; 3]; 20] {
    [
        [0.00, 0.00, 0.00],  // wrist
        [0.00, 0.30, 0.00],  // palm
        [-0.20, 0.38, 0.02], // thumb
        [-0.30, 0.46, 0.04],
        [-0.38, 0.52, 0.06],
        [-0.10, 0.45, 0.00], // index
        [-0.12, 0.58, 0.00],
        [-0.13, 0.70, 0.00],
        [-0.14, 0.80, 0.00],
        [0.00, 0.46, 0.00], // middle
        [0.00, 0.60, 0.00],
        [0.00, 0.73, 0.00],
        [0.00, 0.84, 0.00],
        [0.10, 0.45, 0.00], // ring
        [0.12, 0.58, 0.00],
        [0.13, 0.69, 0.00],
        [0.14, 0.79, 0.00],
        [0.20, 0.42, 0.00], // little
        [0.24, 0.52, 0.00],
        [0.27, 0.60, 0.00],
    ]
}

const FINGER_CHAINS: [&[usize]; 5] =
    [&[2, 3, 4], &[5, 6, 7, 8], &[9, 10, 11, 12], &[13, 14, 15, 16], &[17, 18, 19]];

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Whole-hand translation of a gesture at progress s ∈ [0, 1].
fn trajectory_offset(proto: GesturePrototype, s: f64) -> [f64; 3] {
    const R: f64 = 0.5;
    const SWIPE: f64 = 0.8;
    match proto {
        GesturePrototype::StaticPose(_) => [0.0, 0.0, 0.0],
        GesturePrototype::CircleCw => {
            let a = 2.0 * std::f64::consts::PI * s;
            [R * a.sin(), -R * (1.0 - a.cos()), 0.0]
        }
        GesturePrototype::CircleCcw => {
            let a = 2.0 * std::f64::consts::PI * s;
            [R * a.sin(), R * (1.0 - a.cos()), 0.0]
        }
        GesturePrototype::SwipeLeft => [-SWIPE * smoothstep(s), 0.0, 0.0],
        GesturePrototype::SwipeRight => [SWIPE * smoothstep(s), 0.0, 0.0],
        GesturePrototype::Cross => {
            // Piecewise-linear X shape through fixed waypoints.
            let pts = [
                [0.0, 0.0, 0.0],
                [0.5, -0.5, 0.0],
                [0.5, 0.0, 0.0],
                [0.0, -0.5, 0.0],
            ];
            let seg = (s * 3.0).min(2.999);
            let i = seg.floor() as usize;
            let w = seg - i as f64;
            [
                pts[i][0] * (1.0 - w) + pts[i + 1][0] * w,
                pts[i][1] * (1.0 - w) + pts[i + 1][1] * w,
                pts[i][2] * (1.0 - w) + pts[i + 1][2] * w,
            ]
        }
    }
}

/// Hand pose for a prototype: static poses curl one finger chain toward the
/// palm, dynamic gestures keep the rest pose.
fn base_pose(proto: GesturePrototype) -> [[f64; 3]; 20] {
    let mut pose = rest_pose();
    if let GesturePrototype::StaticPose(k) = proto {
        let palm = pose[1];
        for &j in FINGER_CHAINS[k % 5] {
            for c in 0..3 {
                pose[j][c] = palm[c] + 0.35 * (pose[j][c] - palm[c]);
            }
        }
    }
    pose
}

struct StreamBuilder<'c> {
    cfg: &'c SyntheticConfig,
    rng: ChaCha8Rng,
    frames: Vec<SkeletonFrame>,
    annotations: Vec<Annotation>,
    /// Residual hand displacement left by the previous gesture.
    offset: [f64; 3],
}

impl<'c> StreamBuilder<'c> {
    fn push_frame(&mut self, pose: &[[f64; 3]; 20], extra: [f64; 3]) {
        let sigma = self.cfg.jitter_sigma;
        let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("sigma validated");
        let rows: Vec<[f64; 3]> = pose
            .iter()
            .map(|p| {
                let mut row = [0.0f64; 3];
                for c in 0..3 {
                    let jitter = if sigma > 0.0 { noise.sample(&mut self.rng) } else { 0.0 };
                    row[c] = p[c] + extra[c] + jitter;
                }
                row
            })
            .collect();
        self.frames.push(SkeletonFrame::from_rows(&rows));
    }

    /// Idle gap: ease the residual offset back to zero, then hold.
    fn idle(&mut self, len: usize) {
        let pose = rest_pose();
        let ease = ((len as f64) * 0.6).ceil() as usize;
        let start = self.offset;
        for i in 0..len {
            let w = if i < ease { 1.0 - smoothstep((i + 1) as f64 / ease as f64) } else { 0.0 };
            self.push_frame(&pose, [start[0] * w, start[1] * w, start[2] * w]);
        }
        self.offset = [0.0, 0.0, 0.0];
    }

    fn gesture(&mut self, proto: GesturePrototype, len: usize) {
        let pose = base_pose(proto);
        let start = self.frames.len();
        let mut last = [0.0f64; 3];
        for i in 0..len {
            let s = if len > 1 { i as f64 / (len - 1) as f64 } else { 0.0 };
            last = trajectory_offset(proto, s);
            self.push_frame(&pose, last);
        }
        self.offset = last;
        self.annotations.push(Annotation {
            label: proto.label(),
            start,
            end: self.frames.len() - 1,
        });
    }
}

/// Build one annotated stream. Deterministic per (config, stream seed).
fn gen_stream(cfg: &SyntheticConfig, stream_seed: u64) -> Result<SkeletonSequence> {
    let mut b = StreamBuilder {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(stream_seed),
        frames: Vec::new(),
        annotations: Vec::new(),
        offset: [0.0, 0.0, 0.0],
    };
    let count =
        b.rng.gen_range(cfg.gestures_per_stream.0..=cfg.gestures_per_stream.1);
    let gap = b.rng.gen_range(cfg.idle_gap.0..=cfg.idle_gap.1);
    b.idle(gap);
    for _ in 0..count {
        let proto = cfg.prototypes[b.rng.gen_range(0..cfg.prototypes.len())];
        let len = b.rng.gen_range(cfg.gesture_duration.0..=cfg.gesture_duration.1);
        b.gesture(proto, len);
        let gap = b.rng.gen_range(cfg.idle_gap.0..=cfg.idle_gap.1);
        b.idle(gap);
    }
    SkeletonSequence::new(b.frames, None, b.annotations)
}

/// Generate every split in memory: (manifest-to-be records, sequences).
pub fn gen_synthetic(
    cfg: &SyntheticConfig,
) -> Result<(DatasetManifest, Vec<(SequenceRecord, SkeletonSequence)>)> {
    cfg.validate()?;
    let mut items = Vec::new();
    let splits = [
        (Split::Train, "train", cfg.train_streams, 1u64),
        (Split::Val, "val", cfg.val_streams, 2),
        (Split::Test, "test", cfg.test_streams, 3),
    ];
    for (split, tag, count, salt) in splits {
        for i in 0..count {
            let id = format!("{tag}_{i:03}");
            let seq = gen_stream(cfg, crate::seeds::mix_path(cfg.seed, &[salt, i as u64]))?;
            let record = SequenceRecord {
                id: id.clone(),
                path: format!("sequences/{id}.json"),
                split,
            };
            items.push((record, seq));
        }
    }
    let manifest = DatasetManifest {
        classes: cfg.class_names(),
        lambda: 20,
        records: items.iter().map(|(r, _)| r.clone()).collect(),
    };
    Ok((manifest, items))
}

/// Generate and write a dataset directory: manifest.json + sequences/.
pub fn write_synthetic(cfg: &SyntheticConfig, dir: &std::path::Path) -> Result<DatasetManifest> {
    let (manifest, items) = gen_synthetic(cfg)?;
    let seq_dir = dir.join("sequences");
    std::fs::create_dir_all(&seq_dir).map_err(|e| Error::io(seq_dir.display().to_string(), e))?;
    for (record, seq) in &items {
        super::save_canonical(&dir.join(&record.path), &record.id, seq)?;
    }
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
