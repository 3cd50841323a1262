//! Event-level and frame-level evaluation: detection rate, false-positive
//! rate, and Jaccard index over predicted vs ground-truth gestures.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::online::{FrameLabels, GestureEvent};
use crate::vocab::LabelVocab;

/// Per-class true-positive / false-positive / miss counts plus the matched
/// (prediction, ground truth) index pairs.
#[derive(Debug, Clone, Default)]
pub struct MatchResult {
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub missed: Vec<usize>,
    pub matches: Vec<(usize, usize)>,
}

impl MatchResult {
    pub fn new(class_count: usize) -> Self {
        MatchResult {
            tp: vec![0; class_count],
            fp: vec![0; class_count],
            missed: vec![0; class_count],
            matches: Vec::new(),
        }
    }

    /// Pool counts from another sequence (match indices are not carried over).
    pub fn absorb(&mut self, other: &MatchResult) {
        for (a, b) in self.tp.iter_mut().zip(&other.tp) {
            *a += b;
        }
        for (a, b) in self.fp.iter_mut().zip(&other.fp) {
            *a += b;
        }
        for (a, b) in self.missed.iter_mut().zip(&other.missed) {
            *a += b;
        }
    }

    pub fn totals(&self) -> (usize, usize, usize) {
        (
            self.tp.iter().sum(),
            self.fp.iter().sum(),
            self.missed.iter().sum(),
        )
    }
}

fn check_sorted_disjoint(events: &[GestureEvent], which: &str) -> Result<()> {
    for e in events {
        if e.start > e.end {
            return Err(Error::Input(format!("{which} event [{}, {}] is inverted", e.start, e.end)));
        }
    }
    for pair in events.windows(2) {
        if pair[1].start <= pair[0].end {
            return Err(Error::Input(format!(
                "{which} events [{}, {}] and [{}, {}] overlap or are unsorted",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            )));
        }
    }
    Ok(())
}

/// Temporal intersection-over-union of two inclusive frame spans.
pub fn interval_iou(a: &GestureEvent, b: &GestureEvent) -> f64 {
    let inter_lo = a.start.max(b.start);
    let inter_hi = a.end.min(b.end);
    if inter_hi < inter_lo {
        return 0.0;
    }
    let inter = (inter_hi - inter_lo + 1) as f64;
    let union = (a.duration() + b.duration()) as f64 - inter;
    inter / union
}

/// Greedy matching in time order: each prediction takes the earliest
/// unmatched ground-truth event of the same class with IoU ≥ threshold.
/// Unmatched predictions count as false positives, unmatched ground truth
/// as misses. Both lists must be sorted and non-overlapping.
pub fn match_events(
    predicted: &[GestureEvent],
    ground_truth: &[GestureEvent],
    class_count: usize,
    iou_threshold: f64,
) -> Result<MatchResult> {
    check_sorted_disjoint(predicted, "predicted")?;
    check_sorted_disjoint(ground_truth, "ground-truth")?;
    let mut result = MatchResult::new(class_count);
    let mut taken = vec![false; ground_truth.len()];
    for (pi, p) in predicted.iter().enumerate() {
        if p.class >= class_count {
            return Err(Error::Input(format!("event class {} out of range", p.class)));
        }
        let hit = ground_truth.iter().enumerate().position(|(gi, g)| {
            !taken[gi] && g.class == p.class && interval_iou(p, g) >= iou_threshold
        });
        match hit {
            Some(gi) => {
                taken[gi] = true;
                result.tp[p.class] += 1;
                result.matches.push((pi, gi));
            }
            None => result.fp[p.class] += 1,
        }
    }
    for (gi, g) in ground_truth.iter().enumerate() {
        if g.class >= class_count {
            return Err(Error::Input(format!("event class {} out of range", g.class)));
        }
        if !taken[gi] {
            result.missed[g.class] += 1;
        }
    }
    Ok(result)
}

/// TP / (TP + FN); absent when there are no ground-truth events.
pub fn detection_rate(m: &MatchResult) -> Option<f64> {
    let (tp, _, missed) = m.totals();
    rate(tp, tp + missed)
}

/// FP / (TP + FN); absent when there are no ground-truth events.
pub fn false_positive_rate(m: &MatchResult) -> Option<f64> {
    let (tp, fp, missed) = m.totals();
    rate(fp, tp + missed)
}

fn rate(num: usize, denom: usize) -> Option<f64> {
    if denom == 0 {
        None
    } else {
        Some(num as f64 / denom as f64)
    }
}

/// Per-(sequence, label) Jaccard terms: for every non-sentinel class present
/// in either labeling, |frames labeled l in both| / |frames labeled l in
/// either|.
pub fn jaccard_pairs(
    predicted: &FrameLabels,
    ground_truth: &FrameLabels,
    no_gesture: usize,
) -> Result<Vec<(usize, f64)>> {
    if predicted.len() != ground_truth.len() {
        return Err(Error::Input(format!(
            "label length mismatch: {} vs {}",
            predicted.len(),
            ground_truth.len()
        )));
    }
    let mut classes: Vec<usize> = predicted
        .as_slice()
        .iter()
        .chain(ground_truth.as_slice())
        .copied()
        .filter(|&c| c != no_gesture)
        .collect();
    classes.sort_unstable();
    classes.dedup();
    let mut out = Vec::with_capacity(classes.len());
    for c in classes {
        let mut both = 0usize;
        let mut either = 0usize;
        for (p, g) in predicted.as_slice().iter().zip(ground_truth.as_slice()) {
            let in_p = *p == c;
            let in_g = *g == c;
            if in_p && in_g {
                both += 1;
            }
            if in_p || in_g {
                either += 1;
            }
        }
        out.push((c, both as f64 / either as f64));
    }
    Ok(out)
}

/// Mean of Jaccard terms pooled over sequences; absent with no terms.
pub fn jaccard_index(pairs: &[(usize, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        None
    } else {
        Some(pairs.iter().map(|(_, j)| j).sum::<f64>() / pairs.len() as f64)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    pub tp: usize,
    pub fp: usize,
    pub missed: usize,
    pub detection_rate: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub jaccard_index: Option<f64>,
}

/// Overall (pooled) and per-class metrics.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub detection_rate: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub jaccard_index: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    pub fn build(
        matches: &MatchResult,
        jaccard_terms: &[(usize, f64)],
        vocab: &LabelVocab,
    ) -> MetricsReport {
        let per_class = (0..vocab.gesture_count())
            .map(|c| {
                let gt = matches.tp[c] + matches.missed[c];
                let class_terms: Vec<(usize, f64)> =
                    jaccard_terms.iter().filter(|(cls, _)| *cls == c).copied().collect();
                ClassMetrics {
                    class: vocab.name(c).to_string(),
                    tp: matches.tp[c],
                    fp: matches.fp[c],
                    missed: matches.missed[c],
                    detection_rate: rate(matches.tp[c], gt),
                    false_positive_rate: rate(matches.fp[c], gt),
                    jaccard_index: jaccard_index(&class_terms),
                }
            })
            .collect();
        MetricsReport {
            detection_rate: detection_rate(matches),
            false_positive_rate: false_positive_rate(matches),
            jaccard_index: jaccard_index(jaccard_terms),
            per_class,
        }
    }
}

impl std::fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let fmt_opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "  -   ".to_string(),
        };
        writeln!(f, "{:<16} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}", "class", "tp", "fp", "miss", "det", "fp_rate", "jaccard")?;
        for c in &self.per_class {
            writeln!(
                f,
                "{:<16} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
                c.class,
                c.tp,
                c.fp,
                c.missed,
                fmt_opt(c.detection_rate),
                fmt_opt(c.false_positive_rate),
                fmt_opt(c.jaccard_index),
            )?;
        }
        writeln!(
            f,
            "{:<16} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
            "overall",
            self.per_class.iter().map(|c| c.tp).sum::<usize>(),
            self.per_class.iter().map(|c| c.fp).sum::<usize>(),
            self.per_class.iter().map(|c| c.missed).sum::<usize>(),
            fmt_opt(self.detection_rate),
            fmt_opt(self.false_positive_rate),
            fmt_opt(self.jaccard_index),
        )
    }
}
