//! Importer for the raw SHREC'21 track release into the canonical format.
//!
//! Expected raw layout (one adapter isolates these assumptions):
//!
//! ```text
//! <raw>/training_set/annotations.txt   lines: <seq_id>;<label>;<start>;<end>
//! <raw>/training_set/<seq_id>.txt      one frame per line: 20 joints x 3
//! <raw>/test_set/...                   floats, split on ';', ',' or spaces
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{save_canonical, DatasetManifest, SequenceRecord, Split};
use crate::error::{Error, Result};
use crate::skel::{Annotation, SkeletonFrame, SkeletonSequence};
use crate::vocab::NO_GESTURE;

pub const SHREC21_JOINTS: usize = 20;

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), msg: msg.into() }
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ';' || c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Parse one raw sequence file: one frame per line, 60 floats.
pub fn parse_sequence_file(path: &Path) -> Result<Vec<SkeletonFrame>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut frames = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line);
        if fields.len() != SHREC21_JOINTS * 3 {
            return Err(parse_err(
                path,
                format!(
                    "line {}: expected {} values, found {}",
                    lineno + 1,
                    SHREC21_JOINTS * 3,
                    fields.len()
                ),
            ));
        }
        let mut rows = [[0.0f64; 3]; SHREC21_JOINTS];
        for (i, field) in fields.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(path, format!("line {}: bad float {field:?}", lineno + 1))
            })?;
            rows[i / 3][i % 3] = v;
        }
        frames.push(SkeletonFrame::from_rows(&rows));
    }
    if frames.is_empty() {
        return Err(parse_err(path, "no frames"));
    }
    Ok(frames)
}

/// Parse an annotations file into per-sequence annotation lists.
pub fn parse_annotations(path: &Path) -> Result<BTreeMap<String, Vec<Annotation>>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out: BTreeMap<String, Vec<Annotation>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line);
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                format!("line {}: expected id;label;start;end", lineno + 1),
            ));
        }
        let parse_idx = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| {
                parse_err(path, format!("line {}: bad frame index {s:?}", lineno + 1))
            })
        };
        out.entry(fields[0].to_string()).or_default().push(Annotation {
            label: fields[1].to_string(),
            start: parse_idx(fields[2])?,
            end: parse_idx(fields[3])?,
        });
    }
    Ok(out)
}

/// Convert a raw release directory into a canonical dataset at `out_dir`.
/// The training_set/test_set membership becomes the train/test split tag.
pub fn import_shrec21(raw_dir: &Path, out_dir: &Path) -> Result<DatasetManifest> {
    let seq_dir = out_dir.join("sequences");
    std::fs::create_dir_all(&seq_dir).map_err(|e| Error::io(seq_dir.display().to_string(), e))?;
    let mut classes: Vec<String> = Vec::new();
    let mut records = Vec::new();
    for (subdir, split) in [("training_set", Split::Train), ("test_set", Split::Test)] {
        let split_dir = raw_dir.join(subdir);
        if !split_dir.is_dir() {
            return Err(Error::Data(format!(
                "raw release is missing the {subdir}/ directory under {}",
                raw_dir.display()
            )));
        }
        let annotations = parse_annotations(&split_dir.join("annotations.txt"))?;
        if annotations.is_empty() {
            return Err(Error::Data(format!("{subdir}/annotations.txt lists no sequences")));
        }
        for (seq_id, anns) in annotations {
            let raw_path = split_dir.join(format!("{seq_id}.txt"));
            let frames = parse_sequence_file(&raw_path)?;
            let seq = SkeletonSequence::new(frames, None, anns.clone())
                .map_err(|e| parse_err(&raw_path, e.to_string()))?;
            for a in anns {
                if !classes.contains(&a.label) {
                    classes.push(a.label);
                }
            }
            let id = format!("{subdir}_{seq_id}");
            let rel = format!("sequences/{id}.json");
            save_canonical(&out_dir.join(&rel), &id, &seq)?;
            records.push(SequenceRecord { id, path: rel, split });
        }
    }
    classes.sort();
    classes.push(NO_GESTURE.to_string());
    let manifest = DatasetManifest { classes, lambda: SHREC21_JOINTS, records };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
