//! Stream-to-sample preparation: normalization, gesture segmentation,
//! sliding-window extraction, resampling and augmentation.
//!
//! Streams are normalized once, anchored at their first frame, so the same
//! transform works causally online; training windows are cut from the
//! normalized streams and inherit that anchoring.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::resample_window;
use crate::error::Result;
use crate::seeds;
use crate::skel::{
    add_noise, normalize_sequence, random_moving, segment_sequences, sliding_window_augment,
    HandTopology, RandomMovingParams, SkeletonSequence,
};
use crate::train::TrainSample;
use crate::vocab::LabelVocab;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Fixed sample length γ.
    pub window: usize,
    /// Stride of the sliding-window pass over whole streams.
    pub window_stride: usize,
    /// Fraction of a window that must lie inside one annotation to inherit
    /// its label.
    pub min_overlap: f64,
    /// Augmented copies (random moving + noise) of each gesture segment.
    pub augment_copies: usize,
    pub max_rotation: f64,
    pub max_scale_delta: f64,
    pub max_translation: f64,
    pub noise_sigma: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let moving = RandomMovingParams::default();
        PipelineConfig {
            window: 20,
            window_stride: 5,
            min_overlap: 0.5,
            augment_copies: 1,
            max_rotation: moving.max_rotation,
            max_scale_delta: moving.max_scale_delta,
            max_translation: moving.max_translation,
            noise_sigma: 0.001,
        }
    }
}

impl PipelineConfig {
    fn moving(&self) -> RandomMovingParams {
        RandomMovingParams {
            max_rotation: self.max_rotation,
            max_scale_delta: self.max_scale_delta,
            max_translation: self.max_translation,
        }
    }
}

/// Normalize a raw stream for recognition (whole-stream anchor).
pub fn normalize_stream(
    stream: &SkeletonSequence,
    topology: &HandTopology,
) -> Result<SkeletonSequence> {
    normalize_sequence(stream, topology)
}

/// Fixed-length labeled samples from annotated streams:
/// gesture segments and no-gesture fragments resampled to γ, sliding windows
/// over the whole stream, plus augmented copies of the segments.
pub fn samples_from_streams(
    streams: &[(String, SkeletonSequence)],
    vocab: &LabelVocab,
    topology: &HandTopology,
    cfg: &PipelineConfig,
    seed: u64,
    with_augmentation: bool,
) -> Result<Vec<TrainSample>> {
    let mut out = Vec::new();
    let no_gesture = vocab.no_gesture_name().to_string();
    for (stream_idx, (_, raw)) in streams.iter().enumerate() {
        let stream = normalize_sequence(raw, topology)?;
        let (segments, fragments) = segment_sequences(&stream)?;

        let push = |seq: &SkeletonSequence, label: &str, out: &mut Vec<TrainSample>| -> Result<()> {
            let window = resample_window(seq, cfg.window)?;
            out.push(TrainSample { window: window.to_tensor(), label: vocab.id(label)? });
            Ok(())
        };

        for (segment, label) in &segments {
            push(segment, label, &mut out)?;
        }
        for fragment in &fragments {
            push(fragment, &no_gesture, &mut out)?;
        }
        for (window, label) in sliding_window_augment(
            &stream,
            cfg.window,
            cfg.window_stride,
            cfg.min_overlap,
            &no_gesture,
        ) {
            out.push(TrainSample { window: window.to_tensor(), label: vocab.id(&label)? });
        }
        if with_augmentation {
            for copy in 0..cfg.augment_copies {
                for (seg_idx, (segment, label)) in segments.iter().enumerate() {
                    let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix_path(
                        seed,
                        &[stream_idx as u64, copy as u64, seg_idx as u64],
                    ));
                    let moved = random_moving(segment, &cfg.moving(), &mut rng);
                    let noisy = add_noise(&moved, cfg.noise_sigma, &mut rng);
                    push(&noisy, label, &mut out)?;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic::{gen_synthetic, SyntheticConfig};

    #[test]
    fn samples_have_window_shape_and_known_labels() {
        let synth = SyntheticConfig {
            train_streams: 2,
            val_streams: 0,
            test_streams: 0,
            ..SyntheticConfig::default()
        };
        let (manifest, items) = gen_synthetic(&synth).unwrap();
        let vocab = manifest.vocab().unwrap();
        let topology = HandTopology::default_hand();
        let streams: Vec<(String, SkeletonSequence)> =
            items.into_iter().map(|(r, s)| (r.id, s)).collect();
        let cfg = PipelineConfig::default();
        let samples =
            samples_from_streams(&streams, &vocab, &topology, &cfg, 7, true).unwrap();
        assert!(!samples.is_empty());
        for s in &samples {
            assert_eq!(s.window.shape(), &[20, 20, 3]);
            assert!(s.label < vocab.len());
        }
        // Both gesture and no-gesture samples must be present.
        assert!(samples.iter().any(|s| s.label == vocab.no_gesture()));
        assert!(samples.iter().any(|s| s.label != vocab.no_gesture()));
        // Deterministic per seed.
        let again = samples_from_streams(&streams, &vocab, &topology, &cfg, 7, true).unwrap();
        assert_eq!(samples.len(), again.len());
        for (a, b) in samples.iter().zip(&again) {
            assert_eq!(a.window, b.window);
            assert_eq!(a.label, b.label);
        }
    }
}
