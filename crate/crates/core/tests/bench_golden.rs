use std::path::PathBuf;

use editvuln_core::completion::{ReplayBackend, RetryPolicy};
use editvuln_core::detection::RecordedDetector;
use editvuln_core::scenario::{builtin_oracles, load_scenarios, run_experiment, ExperimentConfig, ExperimentReport};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/bench").join(name)
}

fn run(with_detector: bool) -> ExperimentReport {
    let registry = builtin_oracles();
    let scenarios = load_scenarios(&data("scenarios.jsonl"), &registry).unwrap();
    let backend = ReplayBackend::load(&data("replay.jsonl")).unwrap();
    let detector = RecordedDetector::load(&data("detector_scores.jsonl"), 0.5).unwrap();
    let config = ExperimentConfig { retry: RetryPolicy::immediate(), ..Default::default() };
    let det: Option<&dyn editvuln_core::detection::Detector> = with_detector.then_some(&detector as _);
    run_experiment(&scenarios, &registry, &backend, det, &config).unwrap()
}

#[test]
fn replay_matches_golden_report() {
    let golden: ExperimentReport =
        serde_json::from_str(&std::fs::read_to_string(data("golden_report.json")).unwrap()).unwrap();
    assert_eq!(run(true), golden);
}

#[test]
fn filtering_never_adds_vulnerabilities() {
    let report = run(true);
    for row in &report.scenarios {
        assert!(row.surviving_vulnerable <= row.vulnerable_completions, "{}", row.id);
        assert!(row.surviving_completions <= row.valid_completions, "{}", row.id);
    }
}

#[test]
fn baseline_arm_ignores_detector() {
    let with = run(true);
    let without = run(false);
    assert_eq!(with.without_detector, without.without_detector);
    assert!(without.with_detector.is_none() && without.reduction_rate.is_none());
    assert!(without.scenarios.iter().all(|r| r.filtered_completions == 0));
}
