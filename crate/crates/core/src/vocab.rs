//! Label vocabulary: ordered class names with the no-gesture sentinel last.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Canonical name of the no-gesture sentinel class.
pub const NO_GESTURE: &str = "no_gesture";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocab {
    names: Vec<String>,
}

impl LabelVocab {
    /// `names` must be unique and end with the no-gesture sentinel.
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Config("vocabulary needs at least one gesture class".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(Error::Config(format!("duplicate class name {n:?}")));
            }
        }
        Ok(LabelVocab { names })
    }

    /// Gesture class names plus the canonical sentinel.
    pub fn with_gestures(gestures: &[&str]) -> Result<Self> {
        let mut names: Vec<String> = gestures.iter().map(|s| s.to_string()).collect();
        names.push(NO_GESTURE.to_string());
        Self::new(names)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total classes including the sentinel (the classifier's output width).
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn gesture_count(&self) -> usize {
        self.names.len() - 1
    }

    pub fn no_gesture(&self) -> usize {
        self.names.len() - 1
    }

    pub fn no_gesture_name(&self) -> &str {
        &self.names[self.no_gesture()]
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Label(format!("unknown class {name:?}")))
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentinel_is_last() {
        let v = LabelVocab::with_gestures(&["circle", "swipe"]).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.gesture_count(), 2);
        assert_eq!(v.no_gesture(), 2);
        assert_eq!(v.name(2), NO_GESTURE);
        assert_eq!(v.id("swipe").unwrap(), 1);
        assert!(v.id("missing").is_err());
    }

    #[test]
    fn duplicates_rejected() {
        assert!(LabelVocab::with_gestures(&["a", "a"]).is_err());
    }
}
