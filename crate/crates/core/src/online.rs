//! Online recognition: sliding-window classification over a stream,
//! per-class probability thresholds, causal per-frame labeling, and
//! gesture-event extraction.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::continual::ContinualSession;
use crate::dataset::resample_window;
use crate::error::{Error, Result};
use crate::model::GestureModel;
use crate::skel::SkeletonSequence;
use crate::tensor::Tensor;
use crate::train::TrainSample;
use crate::vocab::LabelVocab;

/// Per-class minimum confidence below which a window verdict is demoted to
/// no-gesture. The sentinel class has no threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    alpha: Vec<Option<f64>>,
    default_threshold: f64,
}

impl ThresholdTable {
    pub fn new(alpha: Vec<Option<f64>>, default_threshold: f64) -> Result<Self> {
        for v in alpha.iter().flatten().chain([&default_threshold]) {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Config(format!("threshold {v} outside [0, 1]")));
            }
        }
        Ok(ThresholdTable { alpha, default_threshold })
    }

    /// Uniform table (every class falls back to the default).
    pub fn uniform(classes: usize, default_threshold: f64) -> Result<Self> {
        Self::new(vec![None; classes], default_threshold)
    }

    pub fn threshold(&self, class: usize) -> f64 {
        self.alpha.get(class).copied().flatten().unwrap_or(self.default_threshold)
    }

    pub fn default_threshold(&self) -> f64 {
        self.default_threshold
    }

    pub fn set(&mut self, class: usize, value: Option<f64>) {
        if class < self.alpha.len() {
            self.alpha[class] = value;
        }
    }

    pub fn class_count(&self) -> usize {
        self.alpha.len()
    }
}

/// α(C) from per-window predictions: the mean predicted probability of C
/// over validation windows of true class C that the model classifies
/// correctly. Classes with no correct window fall back to the default.
pub fn thresholds_from_predictions(
    predictions: &[(usize, Vec<f64>)],
    vocab: &LabelVocab,
    default_threshold: f64,
) -> Result<ThresholdTable> {
    if predictions.is_empty() {
        return Err(Error::Data("empty validation set for threshold learning".into()));
    }
    let mut sums = vec![0.0f64; vocab.len()];
    let mut counts = vec![0usize; vocab.len()];
    for (label, probs) in predictions {
        if probs.len() != vocab.len() {
            return Err(Error::Input(format!(
                "prediction width {} vs vocabulary {}",
                probs.len(),
                vocab.len()
            )));
        }
        let argmax = argmax(probs);
        if argmax == *label && *label != vocab.no_gesture() {
            sums[*label] += probs[*label];
            counts[*label] += 1;
        }
    }
    let alpha = (0..vocab.len())
        .map(|c| {
            if c == vocab.no_gesture() || counts[c] == 0 {
                None
            } else {
                Some(sums[c] / counts[c] as f64)
            }
        })
        .collect();
    ThresholdTable::new(alpha, default_threshold)
}

/// Run the model over labeled validation windows and average the confidence
/// of correct predictions per class.
pub fn learn_thresholds(
    model: &GestureModel,
    validation: &[TrainSample],
    default_threshold: f64,
) -> Result<ThresholdTable> {
    if validation.is_empty() {
        return Err(Error::Data("empty validation set for threshold learning".into()));
    }
    let predictions = validation
        .iter()
        .map(|s| Ok((s.label, model.classify_window(&s.window)?)))
        .collect::<Result<Vec<_>>>()?;
    thresholds_from_predictions(&predictions, model.vocab(), default_threshold)
}

fn argmax(probs: &[f64]) -> usize {
    probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
        .expect("non-empty probabilities")
        .0
}

/// Per-frame class labels aligned with a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels(pub Vec<usize>);

impl FrameLabels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Expand annotations into per-frame labels (ground truth for metrics).
    pub fn from_annotations(seq: &SkeletonSequence, vocab: &LabelVocab) -> Result<FrameLabels> {
        let mut labels = vec![vocab.no_gesture(); seq.len()];
        for a in seq.annotations() {
            let id = vocab.id(&a.label)?;
            for l in labels.iter_mut().take(a.end + 1).skip(a.start) {
                *l = id;
            }
        }
        Ok(FrameLabels(labels))
    }
}

/// A labeled [start, end] span (inclusive) of one gesture class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureEvent {
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

impl GestureEvent {
    pub fn duration(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Classification source for the sliding-window protocol. Implementations
/// consume frames one at a time; `window_probs` is queried at verdict steps.
pub trait StreamEngine {
    fn reset(&mut self) -> Result<()>;
    fn push(&mut self, frame: &Tensor) -> Result<()>;
    fn window_probs(&mut self) -> Result<Vec<f64>>;
}

impl<T: StreamEngine + ?Sized> StreamEngine for &mut T {
    fn reset(&mut self) -> Result<()> {
        (**self).reset()
    }
    fn push(&mut self, frame: &Tensor) -> Result<()> {
        (**self).push(frame)
    }
    fn window_probs(&mut self) -> Result<Vec<f64>> {
        (**self).window_probs()
    }
}

/// Windowed-batch engine: buffers the trailing W frames and classifies them
/// through the offline path (resampling to the training window if needed).
pub struct BatchEngine<'m> {
    model: &'m GestureModel,
    window: usize,
    buf: VecDeque<Tensor>,
}

impl<'m> BatchEngine<'m> {
    pub fn new(model: &'m GestureModel, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        Ok(BatchEngine { model, window, buf: VecDeque::with_capacity(window + 1) })
    }
}

impl StreamEngine for BatchEngine<'_> {
    fn reset(&mut self) -> Result<()> {
        self.buf.clear();
        Ok(())
    }

    fn push(&mut self, frame: &Tensor) -> Result<()> {
        self.buf.push_back(frame.clone());
        while self.buf.len() > self.window {
            self.buf.pop_front();
        }
        Ok(())
    }

    fn window_probs(&mut self) -> Result<Vec<f64>> {
        if self.buf.len() < self.window {
            return Err(Error::State(format!(
                "only {} of {} window frames buffered",
                self.buf.len(),
                self.window
            )));
        }
        let lambda = self.model.topology.joint_count();
        let mut data = Vec::with_capacity(self.window * lambda * 3);
        for f in &self.buf {
            data.extend_from_slice(f.data());
        }
        let mut window = Tensor::new(&[self.window, lambda, 3], data)?;
        let gamma = self.model.config.encoder.window;
        if self.window != gamma {
            let seq = SkeletonSequence::from_tensor(&window)?;
            window = resample_window(&seq, gamma)?.to_tensor();
        }
        self.model.classify_window(&window)
    }
}

/// Continual engine: constant work per frame via the KV-cached encoder.
pub struct ContinualEngine<'m> {
    session: ContinualSession<'m>,
}

impl<'m> ContinualEngine<'m> {
    /// `memory` is the KV capacity n; by default callers align it with the
    /// online window size.
    pub fn new(model: &'m GestureModel, memory: usize) -> Result<Self> {
        Ok(ContinualEngine { session: ContinualSession::new(model, memory)? })
    }
}

impl StreamEngine for ContinualEngine<'_> {
    fn reset(&mut self) -> Result<()> {
        self.session.reset();
        Ok(())
    }

    fn push(&mut self, frame: &Tensor) -> Result<()> {
        self.session.step_frame(frame)?;
        Ok(())
    }

    fn window_probs(&mut self) -> Result<Vec<f64>> {
        self.session.classify()
    }
}

/// Online protocol settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub window: usize,
    pub stride: usize,
    pub min_duration: usize,
    pub merge_gap: usize,
    pub default_threshold: f64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig { window: 20, stride: 5, min_duration: 5, merge_gap: 5, default_threshold: 0.5 }
    }
}

/// Sliding-window recognition over a stream of [λ, 3] frames.
///
/// At each step t = W, W+stride, ... the engine classifies the trailing
/// window [t−W, t); the thresholded verdict labels the stride's new frames
/// [t−stride, t). Frames before the first verdict and after the last stay
/// no-gesture, so every label depends only on frames at or before it.
pub fn stream_recognize<E: StreamEngine>(
    engine: E,
    thresholds: &ThresholdTable,
    frames: &[Tensor],
    no_gesture: usize,
    window: usize,
    stride: usize,
) -> Result<FrameLabels> {
    let mut recognizer = StreamRecognizer::new(engine, thresholds, no_gesture, window, stride)?;
    let mut labels = Vec::with_capacity(frames.len());
    for frame in frames {
        if let Some(chunk) = recognizer.push(frame)? {
            debug_assert_eq!(chunk.start, labels.len());
            labels.extend(chunk.labels);
        }
    }
    let tail = recognizer.finish();
    debug_assert_eq!(tail.start, labels.len());
    labels.extend(tail.labels);
    Ok(FrameLabels(labels))
}

/// A chunk of freshly finalized labels starting at frame `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledChunk {
    pub start: usize,
    pub labels: Vec<usize>,
}

/// Incremental form of [`stream_recognize`]: feed frames one at a time and
/// receive labels as soon as a verdict finalizes them.
pub struct StreamRecognizer<'t, E: StreamEngine> {
    engine: E,
    thresholds: &'t ThresholdTable,
    no_gesture: usize,
    window: usize,
    stride: usize,
    pushed: usize,
    labeled: usize,
}

impl<'t, E: StreamEngine> StreamRecognizer<'t, E> {
    pub fn new(
        mut engine: E,
        thresholds: &'t ThresholdTable,
        no_gesture: usize,
        window: usize,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 || window < stride {
            return Err(Error::Config(format!(
                "need stride >= 1 and window >= stride, got window {window}, stride {stride}"
            )));
        }
        engine.reset()?;
        Ok(StreamRecognizer {
            engine,
            thresholds,
            no_gesture,
            window,
            stride,
            pushed: 0,
            labeled: 0,
        })
    }

    /// Feed one frame; returns finalized labels when a verdict fires.
    pub fn push(&mut self, frame: &Tensor) -> Result<Option<LabeledChunk>> {
        self.engine.push(frame)?;
        self.pushed += 1;
        let t = self.pushed;
        if t < self.window || (t - self.window) % self.stride != 0 {
            return Ok(None);
        }
        let probs = self.engine.window_probs()?;
        let best = argmax(&probs);
        let verdict = if best == self.no_gesture || probs[best] < self.thresholds.threshold(best)
        {
            self.no_gesture
        } else {
            best
        };
        let mut chunk = LabeledChunk { start: self.labeled, labels: Vec::new() };
        // Frames no verdict covered stay no-gesture; the verdict labels only
        // the stride's new frames [t - stride, t).
        while self.labeled < t - self.stride {
            chunk.labels.push(self.no_gesture);
            self.labeled += 1;
        }
        while self.labeled < t {
            chunk.labels.push(verdict);
            self.labeled += 1;
        }
        Ok(Some(chunk))
    }

    /// End of input: all remaining buffered frames are labeled no-gesture.
    pub fn finish(mut self) -> LabeledChunk {
        let mut chunk = LabeledChunk { start: self.labeled, labels: Vec::new() };
        while self.labeled < self.pushed {
            chunk.labels.push(self.no_gesture);
            self.labeled += 1;
        }
        chunk
    }
}

/// Turn per-frame labels into events: maximal runs of one non-sentinel class
/// become events, same-class events separated by at most `merge_gap`
/// no-gesture frames merge, and events shorter than `min_duration` drop.
pub fn extract_events(
    labels: &FrameLabels,
    no_gesture: usize,
    min_duration: usize,
    merge_gap: usize,
) -> Vec<GestureEvent> {
    assert!(min_duration >= 1, "min_duration must be >= 1");
    let frames = labels.as_slice();
    let mut runs: Vec<GestureEvent> = Vec::new();
    let mut current: Option<GestureEvent> = None;
    for (i, &label) in frames.iter().enumerate() {
        match current.as_mut() {
            Some(run) if label == run.class && i == run.end + 1 => run.end = i,
            _ => {
                if label != no_gesture {
                    if let Some(run) = current.take() {
                        runs.push(run);
                    }
                    current = Some(GestureEvent { class: label, start: i, end: i });
                } else if let Some(run) = current.take() {
                    runs.push(run);
                }
            }
        }
    }
    if let Some(run) = current.take() {
        runs.push(run);
    }
    // Merge same-class neighbors split only by a short no-gesture gap.
    let mut merged: Vec<GestureEvent> = Vec::new();
    for run in runs {
        match merged.last_mut() {
            Some(prev) if prev.class == run.class && run.start - prev.end - 1 <= merge_gap => {
                prev.end = run.end;
            }
            _ => merged.push(run),
        }
    }
    merged.retain(|e| e.duration() >= min_duration);
    merged
}
