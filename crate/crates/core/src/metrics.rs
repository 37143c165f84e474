//! Classification metrics, threshold sweeps and scenario-level reduction
//! rates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::VulnLabel;
use crate::detection::Verdict;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("thresholds must be sorted ascending and lie in [0, 1]")]
    Thresholds,
    #[error("{0} has no valid scenarios")]
    NoValidScenarios(&'static str),
    #[error("baseline has no vulnerable scenarios; reduction rate is undefined")]
    NoBaselineVulnerabilities,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (p, a) in pairs {
            c.record(p, a);
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// A ratio whose denominator may be zero; in that case `value` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub zero_denominator: bool,
}

impl Ratio {
    pub fn of(num: u64, den: u64) -> Self {
        if den == 0 {
            Ratio { value: 0.0, zero_denominator: true }
        } else {
            Ratio { value: num as f64 / den as f64, zero_denominator: false }
        }
    }
}

pub fn precision(c: &ConfusionCounts) -> Ratio {
    Ratio::of(c.tp, c.tp + c.fp)
}

pub fn recall(c: &ConfusionCounts) -> Ratio {
    Ratio::of(c.tp, c.tp + c.fn_)
}

pub fn positive_rate(c: &ConfusionCounts) -> Ratio {
    Ratio::of(c.tp + c.fp, c.total())
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub recall: f64,
    pub positive_rate: f64,
    pub precision: f64,
}

/// Recall and positive rate at each threshold, where an example is positive
/// when `score >= threshold`.
pub fn sweep(scored: &[(f64, bool)], thresholds: &[f64]) -> Result<Vec<SweepPoint>, MetricsError> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) || thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(MetricsError::Thresholds);
    }
    // Sorted scores make each point two binary searches.
    let mut pos: Vec<f64> = scored.iter().filter(|s| s.1).map(|s| s.0).collect();
    let mut neg: Vec<f64> = scored.iter().filter(|s| !s.1).map(|s| s.0).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let at_least = |xs: &[f64], t: f64| (xs.len() - xs.partition_point(|&s| s < t)) as u64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let tp = at_least(&pos, t);
            let fp = at_least(&neg, t);
            let c = ConfusionCounts { tp, fp, fn_: pos.len() as u64 - tp, tn: neg.len() as u64 - fp };
            SweepPoint {
                threshold: t,
                recall: recall(&c).value,
                positive_rate: positive_rate(&c).value,
                precision: precision(&c).value,
            }
        })
        .collect())
}

/// `0.00, 0.01, ..., 1.00`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=100).map(|i| f64::from(i) / 100.0).collect()
}

/// Smallest threshold whose positive rate does not exceed `target`.
/// Falls back to 1.0 when even that exceeds the target.
pub fn threshold_for_positive_rate(scores: &[f64], target: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let allowed = (target.clamp(0.0, 1.0) * sorted.len() as f64).floor() as usize;
    let mut best = sorted[0].next_up().min(1.0);
    for (k, &s) in sorted.iter().enumerate() {
        // Scores equal to s sit at the end of their run when k+1 is the count.
        let count = k + 1;
        if count > allowed {
            break;
        }
        if sorted.get(k + 1) != Some(&s) {
            best = s;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioCounts {
    pub valid_scenarios: u64,
    pub vulnerable_scenarios: u64,
}

impl ScenarioCounts {
    pub fn vulnerable_fraction(&self) -> Option<f64> {
        (self.valid_scenarios > 0).then(|| self.vulnerable_scenarios as f64 / self.valid_scenarios as f64)
    }
}

/// `1 - (after.vuln/after.valid) / (before.vuln/before.valid)` on unrounded
/// ratios.
pub fn reduction_rate(before: ScenarioCounts, after: ScenarioCounts) -> Result<f64, MetricsError> {
    let b = before.vulnerable_fraction().ok_or(MetricsError::NoValidScenarios("baseline"))?;
    let a = after.vulnerable_fraction().ok_or(MetricsError::NoValidScenarios("filtered run"))?;
    if before.vulnerable_scenarios == 0 {
        return Err(MetricsError::NoBaselineVulnerabilities);
    }
    Ok(1.0 - a / b)
}

/// One scored example for evaluation.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub verdict: Verdict,
    pub score: f64,
    pub label: VulnLabel,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CweBreakdown {
    pub support: u64,
    pub detected: u64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: u64,
    pub counts: ConfusionCounts,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: f64,
    pub positive_rate: f64,
    /// Unknown verdicts count as negatives above but are reported here.
    pub unknown_verdicts: u64,
    pub unknown_rate: f64,
    pub sweep: Vec<SweepPoint>,
    pub per_cwe: BTreeMap<String, CweBreakdown>,
    pub config: serde_json::Value,
}

pub fn evaluate(predictions: &[Prediction], thresholds: &[f64], config: serde_json::Value) -> Result<EvalReport, MetricsError> {
    let counts = ConfusionCounts::from_pairs(predictions.iter().map(|p| (p.verdict.is_vulnerable(), p.label.is_vulnerable())));
    let unknown = predictions.iter().filter(|p| p.verdict == Verdict::Unknown).count() as u64;
    let mut per_cwe: BTreeMap<String, CweBreakdown> = BTreeMap::new();
    for p in predictions {
        if let Some(cwe) = p.label.cwe() {
            let e = per_cwe.entry(cwe.to_string()).or_default();
            e.support += 1;
            e.detected += u64::from(p.verdict.is_vulnerable());
        }
    }
    for e in per_cwe.values_mut() {
        e.recall = Ratio::of(e.detected, e.support).value;
    }
    let scored: Vec<(f64, bool)> = predictions.iter().map(|p| (p.score, p.label.is_vulnerable())).collect();
    let p = precision(&counts);
    let r = recall(&counts);
    Ok(EvalReport {
        examples: predictions.len() as u64,
        counts,
        precision: p,
        recall: r,
        f1: f1(p.value, r.value),
        positive_rate: positive_rate(&counts).value,
        unknown_verdicts: unknown,
        unknown_rate: Ratio::of(unknown, predictions.len() as u64).value,
        sweep: sweep(&scored, thresholds)?,
        per_cwe,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ratio_examples() {
        let c = ConfusionCounts { tp: 10, ..Default::default() };
        assert_eq!(precision(&c).value, 1.0);
        let r = recall(&ConfusionCounts::default());
        assert_eq!(r, Ratio { value: 0.0, zero_denominator: true });
        let c = ConfusionCounts { tp: 63, fn_: 37, ..Default::default() };
        assert!(close(recall(&c).value, 0.63, 1e-12));
    }

    #[test]
    fn f1_examples() {
        assert!(close(f1(0.5887, 0.6300), 0.6087, 0.0002));
        assert_eq!(f1(1.0, 1.0), 1.0);
        assert!(close(f1(0.9565, 0.9741), 0.9653, 0.0002));
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn sweep_examples() {
        let s = [(0.9, true), (0.1, false)];
        let pts = sweep(&s, &[0.0, 0.5, 0.95]).unwrap();
        assert_eq!(pts[0].positive_rate, 1.0);
        assert_eq!((pts[1].recall, pts[1].positive_rate), (1.0, 0.5));
        assert_eq!((pts[2].recall, pts[2].positive_rate), (0.0, 0.0));
        assert_eq!(sweep(&s, &[0.5, 0.1]), Err(MetricsError::Thresholds));
    }

    #[test]
    fn reduction_examples() {
        let rr = |b: (u64, u64), a: (u64, u64)| {
            reduction_rate(
                ScenarioCounts { valid_scenarios: b.0, vulnerable_scenarios: b.1 },
                ScenarioCounts { valid_scenarios: a.0, vulnerable_scenarios: a.1 },
            )
        };
        assert!(close(rr((7, 7), (7, 2)).unwrap(), 0.7143, 5e-5));
        assert!(close(rr((25, 25), (19, 5)).unwrap(), 0.7368, 5e-5));
        assert!(close(rr((27, 21), (24, 2)).unwrap(), 0.8929, 5e-5));
        assert_eq!(rr((5, 0), (5, 0)), Err(MetricsError::NoBaselineVulnerabilities));
        assert!(rr((5, 1), (0, 0)).is_err());
    }

    #[test]
    fn positive_rate_threshold() {
        let scores: Vec<f64> = (0..100).map(|i| f64::from(i) / 100.0).collect();
        let t = threshold_for_positive_rate(&scores, 0.05);
        assert_eq!(t, 0.95);
        assert_eq!(scores.iter().filter(|&&s| s >= t).count(), 5);
        let t = threshold_for_positive_rate(&[0.3, 0.3, 0.3], 0.5);
        assert!(t > 0.3);
    }

    #[test]
    fn evaluate_counts_unknown_separately() {
        let cwe = crate::corpus::Cwe::new("CWE-79").unwrap();
        let preds = vec![
            Prediction { verdict: Verdict::Vulnerable, score: 1.0, label: VulnLabel::vulnerable(cwe.clone()) },
            Prediction { verdict: Verdict::Unknown, score: 0.0, label: VulnLabel::vulnerable(cwe) },
            Prediction { verdict: Verdict::NotVulnerable, score: 0.0, label: VulnLabel::Clean },
        ];
        let r = evaluate(&preds, &default_thresholds(), serde_json::Value::Null).unwrap();
        assert_eq!(r.counts, ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 1 });
        assert_eq!(r.unknown_verdicts, 1);
        assert_eq!(r.per_cwe["CWE-79"].support, 2);
        assert_eq!(r.per_cwe["CWE-79"].recall, 0.5);
    }

    proptest! {
        #[test]
        fn sweep_is_monotone(scored in proptest::collection::vec((0.0f64..=1.0, prop::bool::ANY), 0..200)) {
            let pts = sweep(&scored, &default_thresholds()).unwrap();
            for w in pts.windows(2) {
                prop_assert!(w[1].recall <= w[0].recall);
                prop_assert!(w[1].positive_rate <= w[0].positive_rate);
            }
        }

        #[test]
        fn matches_brute_force(pairs in proptest::collection::vec((prop::bool::ANY, prop::bool::ANY), 0..1000)) {
            let c = ConfusionCounts::from_pairs(pairs.iter().copied());
            let tp = pairs.iter().filter(|(p, a)| *p && *a).count() as f64;
            let pp = pairs.iter().filter(|(p, _)| *p).count() as f64;
            let ap = pairs.iter().filter(|(_, a)| *a).count() as f64;
            let bp = if pp == 0.0 { 0.0 } else { tp / pp };
            let br = if ap == 0.0 { 0.0 } else { tp / ap };
            let bf = if tp == 0.0 { 0.0 } else { 2.0 * tp / (pp + ap) };
            prop_assert!(close(precision(&c).value, bp, 1e-12));
            prop_assert!(close(recall(&c).value, br, 1e-12));
            prop_assert!(close(f1(bp, br), bf, 1e-12));
        }

        #[test]
        fn positive_rate_target_respected(scores in proptest::collection::vec(0.0f64..1.0, 1..300), target in 0.0f64..1.0) {
            let t = threshold_for_positive_rate(&scores, target);
            let rate = scores.iter().filter(|&&s| s >= t).count() as f64 / scores.len() as f64;
            prop_assert!(rate <= target + 1e-12);
        }
    }
}
