use std::path::PathBuf;

use editvuln_core::classifier::{train, TrainConfig};
use editvuln_core::corpus::{assemble_corpus, dedup_train_against_test, ingest_findings, split_by_repo, SplitRatios};
use editvuln_core::splitter::synthesize;

fn demo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/demo").join(rel)
}

#[test]
fn demo_corpus_ingests_and_splits() {
    let report = ingest_findings(&demo("findings.jsonl")).unwrap();
    assert_eq!(report.records.len(), 6);
    assert_eq!(report.errors.len(), 1, "the truncated last line is reported");
    let assembly = assemble_corpus(&demo("sources"), report.records).unwrap();
    assert_eq!(assembly.files.len(), 5);
    assert!(assembly.orphan_findings.is_empty());

    let synthesis = synthesize(&assembly.files, 7);
    assert_eq!(synthesis.stats.skipped_findings, 0);
    assert!(synthesis.stats.vulnerable_triplets >= 6);
    assert!(synthesis.stats.clean_triplets > synthesis.stats.vulnerable_triplets);
    for t in synthesis.triplets.iter().filter(|t| t.label.is_vulnerable()) {
        assert!(!t.context.is_empty() && !t.block.is_empty());
    }
    assert_eq!(synthesis.triplets, synthesize(&assembly.files, 7).triplets);
}

#[test]
fn demo_corpus_trains() {
    let report = ingest_findings(&demo("findings.jsonl")).unwrap();
    let files = assemble_corpus(&demo("sources"), report.records).unwrap().files;
    let triplets = synthesize(&files, 7).triplets;
    let split = dedup_train_against_test(split_by_repo(triplets.clone(), SplitRatios::default(), 0));
    assert!(split.train.len() + split.validation.len() + split.test.len() <= triplets.len());
    let config = TrainConfig { epochs: 3, feature_dim: 1 << 12, ..Default::default() };
    let outcome = train(&triplets, &config).unwrap();
    assert_eq!(outcome.loss_history.len(), 3);
    assert!(outcome.params.is_finite());
}
