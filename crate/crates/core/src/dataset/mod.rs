//! Canonical dataset format, manifests, and temporal resampling.
//!
//! A dataset directory holds a `manifest.json` plus one canonical JSON file
//! per sequence. The canonical schema is
//! `{"id", "joints", "frames": [[[x,y,z] * λ], ...], "annotations"}`.

pub mod shrec21;
pub mod synthetic;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skel::{Annotation, SkeletonFrame, SkeletonSequence, COORDS};
use crate::tensor::Tensor;
use crate::vocab::LabelVocab;

#[derive(Serialize, Deserialize)]
struct CanonicalFile {
    id: String,
    joints: usize,
    frames: Vec<Vec<[f64; COORDS]>>,
    #[serde(default)]
    annotations: Vec<Annotation>,
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), msg: msg.into() }
}

/// Write a sequence in the canonical JSON schema.
pub fn save_canonical(path: &Path, id: &str, seq: &SkeletonSequence) -> Result<()> {
    let frames = seq
        .frames()
        .iter()
        .map(|f| (0..f.joint_count()).map(|j| f.joint(j)).collect())
        .collect();
    let file = CanonicalFile {
        id: id.to_string(),
        joints: seq.joint_count(),
        frames,
        annotations: seq.annotations().to_vec(),
    };
    let json = serde_json::to_string(&file).map_err(|e| parse_err(path, e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load and validate a canonical sequence file.
pub fn load_canonical(path: &Path) -> Result<(String, SkeletonSequence)> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: CanonicalFile =
        serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))?;
    if file.frames.is_empty() {
        return Err(parse_err(path, "sequence has no frames"));
    }
    let mut frames = Vec::with_capacity(file.frames.len());
    for (i, rows) in file.frames.iter().enumerate() {
        if rows.len() != file.joints {
            return Err(parse_err(
                path,
                format!("frame {i} has {} joints, header says {}", rows.len(), file.joints),
            ));
        }
        let frame = SkeletonFrame::from_rows(rows);
        if !frame.joints().is_all_finite() {
            return Err(parse_err(path, format!("frame {i} contains non-finite values")));
        }
        frames.push(frame);
    }
    let seq = SkeletonSequence::new(frames, None, file.annotations)
        .map_err(|e| parse_err(path, e.to_string()))?;
    Ok((file.id, seq))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    /// Path relative to the manifest's directory.
    pub path: String,
    pub split: Split,
}

/// Dataset index: ordered label vocabulary (sentinel last), joint count, and
/// one record per sequence file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub lambda: usize,
    pub records: Vec<SequenceRecord>,
}

impl DatasetManifest {
    pub fn vocab(&self) -> Result<LabelVocab> {
        LabelVocab::new(self.classes.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| parse_err(path, e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))?;
        manifest.vocab()?;
        Ok(manifest)
    }

    /// Load every sequence of a split (or all), validating the joint count.
    pub fn load_split(
        &self,
        base_dir: &Path,
        split: Option<Split>,
    ) -> Result<Vec<(String, SkeletonSequence)>> {
        let mut out = Vec::new();
        for r in &self.records {
            if let Some(s) = split {
                if r.split != s {
                    continue;
                }
            }
            let path: PathBuf = base_dir.join(&r.path);
            let (id, seq) = load_canonical(&path)?;
            if seq.joint_count() != self.lambda {
                return Err(parse_err(
                    &path,
                    format!("{} joints, manifest says {}", seq.joint_count(), self.lambda),
                ));
            }
            out.push((id, seq));
        }
        Ok(out)
    }
}

/// Uniform linear interpolation along time to exactly `gamma_target` frames.
pub fn resample_window(seq: &SkeletonSequence, gamma_target: usize) -> Result<SkeletonSequence> {
    if gamma_target == 0 {
        return Err(Error::Config("resample target must be >= 1".into()));
    }
    let gamma = seq.len();
    if gamma == gamma_target {
        return Ok(SkeletonSequence::unannotated(seq.frames().to_vec())?);
    }
    let lambda = seq.joint_count();
    let mut frames = Vec::with_capacity(gamma_target);
    for i in 0..gamma_target {
        let pos = if gamma_target == 1 {
            0.0
        } else {
            i as f64 * (gamma - 1) as f64 / (gamma_target - 1) as f64
        };
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(gamma - 1);
        let w = pos - lo as f64;
        let (a, b) = (seq.frame(lo), seq.frame(hi));
        let mut data = Vec::with_capacity(lambda * COORDS);
        for (x, y) in a.joints().data().iter().zip(b.joints().data()) {
            data.push(x * (1.0 - w) + y * w);
        }
        frames.push(SkeletonFrame::new(Tensor::new(&[lambda, COORDS], data)?)?);
    }
    SkeletonSequence::unannotated(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave_sequence(gamma: usize) -> SkeletonSequence {
        let frames = (0..gamma)
            .map(|t| {
                SkeletonFrame::from_rows(&[
                    [t as f64, 0.0, 1.0],
                    [2.0 * t as f64, 1.0, 0.0],
                ])
            })
            .collect();
        SkeletonSequence::unannotated(frames).unwrap()
    }

    #[test]
    fn canonical_roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.json");
        let seq = wave_sequence(5)
            .with_annotations(vec![Annotation { label: "circle".into(), start: 1, end: 3 }])
            .unwrap();
        save_canonical(&path, "seq-1", &seq).unwrap();
        let (id, loaded) = load_canonical(&path).unwrap();
        assert_eq!(id, "seq-1");
        assert_eq!(loaded.to_tensor(), seq.to_tensor());
        assert_eq!(loaded.annotations(), seq.annotations());
    }

    #[test]
    fn single_frame_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.json");
        save_canonical(&path, "one", &wave_sequence(1)).unwrap();
        let (_, seq) = load_canonical(&path).unwrap();
        assert_eq!(seq.len(), 1);
    }

    #[test]
    fn out_of_range_annotation_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let json = r#"{"id":"x","joints":1,"frames":[[[0,0,0]],[[1,1,1]]],
                      "annotations":[{"label":"a","start":0,"end":2}]}"#;
        std::fs::write(&path, json).unwrap();
        assert!(matches!(load_canonical(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn joint_count_mismatch_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let json = r#"{"id":"x","joints":2,"frames":[[[0,0,0]]],"annotations":[]}"#;
        std::fs::write(&path, json).unwrap();
        assert!(matches!(load_canonical(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn resample_identity_when_lengths_match() {
        let seq = wave_sequence(7);
        let out = resample_window(&seq, 7).unwrap();
        assert_eq!(out.to_tensor(), seq.to_tensor());
    }

    #[test]
    fn resample_constant_stays_constant() {
        let frames = vec![SkeletonFrame::from_rows(&[[1.0, 2.0, 3.0]]); 4];
        let seq = SkeletonSequence::unannotated(frames).unwrap();
        let out = resample_window(&seq, 9).unwrap();
        assert_eq!(out.len(), 9);
        for f in out.frames() {
            assert_eq!(f.joint(0), [1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn resample_linear_trajectory_is_exact() {
        // Joint positions linear in t: resampling 10 -> 5 must interpolate
        // exactly onto the line.
        let seq = wave_sequence(10);
        let out = resample_window(&seq, 5).unwrap();
        for (i, f) in out.frames().iter().enumerate() {
            let t = i as f64 * 9.0 / 4.0;
            assert!((f.joint(0)[0] - t).abs() < 1e-12);
            assert!((f.joint(1)[0] - 2.0 * t).abs() < 1e-12);
        }
    }

    #[test]
    fn manifest_roundtrip_and_split_loading() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sequences")).unwrap();
        save_canonical(&dir.path().join("sequences/a.json"), "a", &wave_sequence(3)).unwrap();
        save_canonical(&dir.path().join("sequences/b.json"), "b", &wave_sequence(4)).unwrap();
        let manifest = DatasetManifest {
            classes: vec!["circle".into(), "no_gesture".into()],
            lambda: 2,
            records: vec![
                SequenceRecord { id: "a".into(), path: "sequences/a.json".into(), split: Split::Train },
                SequenceRecord { id: "b".into(), path: "sequences/b.json".into(), split: Split::Test },
            ],
        };
        let mpath = dir.path().join("manifest.json");
        manifest.save(&mpath).unwrap();
        let loaded = DatasetManifest::load(&mpath).unwrap();
        assert_eq!(loaded.classes, manifest.classes);
        let train = loaded.load_split(dir.path(), Some(Split::Train)).unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(train[0].0, "a");
        let all = loaded.load_split(dir.path(), None).unwrap();
        assert_eq!(all.len(), 2);
    }
}
