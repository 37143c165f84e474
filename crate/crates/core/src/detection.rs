//! Verdict types shared by every detector backend.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Cwe;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Vulnerable,
    NotVulnerable,
    /// The detector produced no usable answer (prompt detectors only).
    Unknown,
}

impl Verdict {
    pub fn is_vulnerable(self) -> bool {
        self == Verdict::Vulnerable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub verdict: Verdict,
    pub score: f64,
    pub cwe: Option<Cwe>,
    pub explanation: Option<String>,
    #[serde(with = "duration_micros")]
    pub elapsed: Duration,
}

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("completion backend failed: {0}")]
    Backend(String),
    #[error("{0}")]
    Other(String),
}

/// Anything that can judge a (context, block) pair.
pub trait Detector: Send + Sync {
    fn id(&self) -> String;
    fn threshold(&self) -> f64;
    fn detect_with_threshold(&self, context: &str, block: &str, threshold: f64) -> Result<Detection, DetectError>;

    fn detect(&self, context: &str, block: &str) -> Result<Detection, DetectError> {
        self.detect_with_threshold(context, block, self.threshold())
    }
}

pub fn check_threshold(t: f64) -> Result<f64, DetectError> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(DetectError::Threshold(t))
    }
}

mod duration_micros {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_micros() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_micros(u64::deserialize(d)?))
    }
}

/// Key for a (context, block) pair in a recorded-score file.
pub fn detection_key(context: &str, block: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(context.as_bytes());
    h.update([0u8]);
    h.update(block.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedScore {
    pub key: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cwe: Option<Cwe>,
}

/// Replays previously recorded detector scores, keyed by [`detection_key`].
#[derive(Debug, Clone)]
pub struct RecordedDetector {
    scores: std::collections::HashMap<String, RecordedScore>,
    threshold: f64,
}

impl RecordedDetector {
    pub fn new(scores: impl IntoIterator<Item = RecordedScore>, threshold: f64) -> Result<Self, DetectError> {
        let scores = scores.into_iter().map(|s| (s.key.clone(), s)).collect();
        Ok(RecordedDetector { scores, threshold: check_threshold(threshold)? })
    }

    pub fn load(path: &std::path::Path, threshold: f64) -> Result<Self, DetectError> {
        let records: Vec<RecordedScore> = crate::jsonl::read_strict(path).map_err(|e| DetectError::Other(e.to_string()))?;
        Self::new(records, threshold)
    }
}

impl Detector for RecordedDetector {
    fn id(&self) -> String {
        format!("recorded:{}", self.scores.len())
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn detect_with_threshold(&self, context: &str, block: &str, threshold: f64) -> Result<Detection, DetectError> {
        let threshold = check_threshold(threshold)?;
        let key = detection_key(context, block);
        let rec = self.scores.get(&key).ok_or_else(|| DetectError::Other(format!("no recorded score for key {key}")))?;
        let verdict = if rec.score >= threshold { Verdict::Vulnerable } else { Verdict::NotVulnerable };
        Ok(Detection {
            verdict,
            score: rec.score,
            cwe: verdict.is_vulnerable().then(|| rec.cwe.clone()).flatten(),
            explanation: None,
            elapsed: Duration::ZERO,
        })
    }
}
