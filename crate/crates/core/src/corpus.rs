//! Analyzer findings, triplet datasets and repository-level splits.
//!
//! Findings and triplets are stored one JSON object per line. Unknown fields
//! are ignored on read so converters may attach extra metadata.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::hash::{unit_interval, StableHasher};
use crate::jsonl::{self, JsonlError, LineError};
use crate::language::LanguageId;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("invalid split ratios {0:?}: must be non-negative and sum to 1")]
    Ratios([f64; 3]),
    #[error("cannot walk {path}: {message}")]
    Walk { path: PathBuf, message: String },
    #[error("invalid triplet record: {0}")]
    Triplet(String),
}

/// A CWE identifier such as `CWE-89`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Cwe(String);

impl Cwe {
    pub fn new(s: impl Into<String>) -> Result<Self, String> {
        let s = s.into();
        match s.strip_prefix("CWE-") {
            Some(digits) if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) => Ok(Cwe(s)),
            _ => Err(format!("`{s}` is not a CWE id (expected CWE-<digits>)")),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn number(&self) -> u32 {
        self.0[4..].parse().unwrap_or(u32::MAX)
    }
}

impl TryFrom<String> for Cwe {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Cwe::new(s)
    }
}

impl From<Cwe> for String {
    fn from(c: Cwe) -> Self {
        c.0
    }
}

impl fmt::Display for Cwe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One static-analyzer detection. Lines and columns are 1-based; columns count
/// Unicode scalar values and `end_col` is exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingRecord {
    pub repo: String,
    pub path: String,
    pub rule_id: String,
    pub cwe: Cwe,
    pub title: String,
    pub message: String,
    pub start_line: u32,
    pub start_col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

impl FindingRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.start_line == 0 || self.start_col == 0 || self.end_line == 0 || self.end_col == 0 {
            return Err("line and column numbers are 1-based".into());
        }
        if (self.start_line, self.start_col) > (self.end_line, self.end_col) {
            return Err(format!(
                "span start {}:{} is after end {}:{}",
                self.start_line, self.start_col, self.end_line, self.end_col
            ));
        }
        Ok(())
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let record: FindingRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        record.validate()?;
        Ok(record)
    }
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub records: Vec<FindingRecord>,
    pub errors: Vec<LineError>,
}

/// Parses a findings file. An unreadable file is fatal; malformed lines are
/// skipped and reported.
pub fn ingest_findings(path: &Path) -> Result<IngestReport, CorpusError> {
    let (records, errors) = jsonl::read_lenient(path, FindingRecord::parse_line)?;
    Ok(IngestReport { records, errors })
}

pub fn write_findings(path: &Path, records: &[FindingRecord]) -> Result<(), CorpusError> {
    Ok(jsonl::write(path, records)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Clean,
    Vulnerable,
}

/// Triplet label. A CWE is carried exactly when the example is vulnerable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum VulnLabel {
    Clean,
    Vulnerable { cwe: Cwe, rule_id: Option<String> },
}

impl VulnLabel {
    pub fn vulnerable(cwe: Cwe) -> Self {
        VulnLabel::Vulnerable { cwe, rule_id: None }
    }

    pub fn kind(&self) -> LabelKind {
        match self {
            VulnLabel::Clean => LabelKind::Clean,
            VulnLabel::Vulnerable { .. } => LabelKind::Vulnerable,
        }
    }

    pub fn is_vulnerable(&self) -> bool {
        matches!(self, VulnLabel::Vulnerable { .. })
    }

    pub fn cwe(&self) -> Option<&Cwe> {
        match self {
            VulnLabel::Clean => None,
            VulnLabel::Vulnerable { cwe, .. } => Some(cwe),
        }
    }
}

/// The `(context, block, label)` unit: code before an edit-time split point,
/// the remainder of the scope, and what that remainder contains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingTriplet {
    pub context: String,
    pub block: String,
    pub label: VulnLabel,
    pub repo: String,
    pub language: LanguageId,
}

impl TrainingTriplet {
    /// Whitespace-collapsed `context + block`, the key used for leakage checks.
    pub fn normalized_text(&self) -> String {
        normalize_text(&format!("{}{}", self.context, self.block))
    }
}

pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// On-disk shape of a triplet.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TripletRecord {
    context: String,
    block: String,
    label_kind: LabelKind,
    cwe: Option<Cwe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rule_id: Option<String>,
    repo: String,
    language: LanguageId,
}

impl From<&TrainingTriplet> for TripletRecord {
    fn from(t: &TrainingTriplet) -> Self {
        let (cwe, rule_id) = match &t.label {
            VulnLabel::Clean => (None, None),
            VulnLabel::Vulnerable { cwe, rule_id } => (Some(cwe.clone()), rule_id.clone()),
        };
        TripletRecord {
            context: t.context.clone(),
            block: t.block.clone(),
            label_kind: t.label.kind(),
            cwe,
            rule_id,
            repo: t.repo.clone(),
            language: t.language,
        }
    }
}

impl TryFrom<TripletRecord> for TrainingTriplet {
    type Error = String;

    fn try_from(r: TripletRecord) -> Result<Self, Self::Error> {
        if r.context.is_empty() && r.block.is_empty() {
            return Err("context and block are both empty".into());
        }
        let label = match (r.label_kind, r.cwe) {
            (LabelKind::Clean, None) => VulnLabel::Clean,
            (LabelKind::Vulnerable, Some(cwe)) => VulnLabel::Vulnerable { cwe, rule_id: r.rule_id },
            (LabelKind::Clean, Some(_)) => return Err("clean triplet carries a cwe".into()),
            (LabelKind::Vulnerable, None) => return Err("vulnerable triplet without a cwe".into()),
        };
        Ok(TrainingTriplet { context: r.context, block: r.block, label, repo: r.repo, language: r.language })
    }
}

impl TrainingTriplet {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&TripletRecord::from(self)).expect("triplet serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, String> {
        let record: TripletRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        TrainingTriplet::try_from(record)
    }
}

pub fn write_triplets(path: &Path, triplets: &[TrainingTriplet]) -> Result<(), CorpusError> {
    Ok(jsonl::write(path, triplets.iter().map(TripletRecord::from))?)
}

pub fn read_triplets(path: &Path) -> Result<Vec<TrainingTriplet>, CorpusError> {
    let (triplets, errors) = jsonl::read_lenient(path, TrainingTriplet::from_json_line)?;
    if let Some(e) = errors.first() {
        return Err(CorpusError::Triplet(format!("{}:{}: {}", path.display(), e.line, e.message)));
    }
    Ok(triplets)
}

/// A source file plus the findings located in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub repo: String,
    pub path: String,
    pub language: LanguageId,
    pub text: String,
    #[serde(default)]
    pub findings: Vec<FindingRecord>,
}

/// Outcome of attaching findings to the files under a sources root laid out
/// as `<root>/<repo>/<path>`.
#[derive(Debug, Default)]
pub struct CorpusAssembly {
    pub files: Vec<SourceFile>,
    /// Findings whose `(repo, path)` has no matching supported source file.
    pub orphan_findings: Vec<FindingRecord>,
}

pub fn assemble_corpus(sources_root: &Path, findings: Vec<FindingRecord>) -> Result<CorpusAssembly, CorpusError> {
    let mut files: BTreeMap<(String, String), SourceFile> = BTreeMap::new();
    for entry in walkdir::WalkDir::new(sources_root).sort_by_file_name() {
        let entry = entry.map_err(|e| CorpusError::Walk { path: sources_root.to_path_buf(), message: e.to_string() })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(sources_root).expect("walk stays under root");
        let mut parts = rel.components();
        let Some(repo) = parts.next() else { continue };
        let repo = repo.as_os_str().to_string_lossy().into_owned();
        let path = parts.as_path().to_string_lossy().replace('\\', "/");
        if path.is_empty() {
            continue;
        }
        let Some(language) = entry.path().extension().and_then(|e| LanguageId::from_extension(&e.to_string_lossy()))
        else {
            continue;
        };
        let text = std::fs::read_to_string(entry.path()).map_err(|source| JsonlError::Read {
            path: entry.path().to_path_buf(),
            source,
        })?;
        files.insert((repo.clone(), path.clone()), SourceFile { repo, path, language, text, findings: Vec::new() });
    }
    let mut orphan_findings = Vec::new();
    for finding in findings {
        match files.get_mut(&(finding.repo.clone(), finding.path.clone())) {
            Some(file) => file.findings.push(finding),
            None => orphan_findings.push(finding),
        }
    }
    Ok(CorpusAssembly { files: files.into_values().collect(), orphan_findings })
}

pub fn write_sources(path: &Path, files: &[SourceFile]) -> Result<(), CorpusError> {
    Ok(jsonl::write(path, files)?)
}

pub fn read_sources(path: &Path) -> Result<Vec<SourceFile>, CorpusError> {
    Ok(jsonl::read_strict(path)?)
}

/// Train / validation / test proportions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    train: f64,
    validation: f64,
    test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self, CorpusError> {
        let parts = [train, validation, test];
        let valid = parts.iter().all(|r| r.is_finite() && *r >= 0.0) && (parts.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if valid {
            Ok(SplitRatios { train, validation, test })
        } else {
            Err(CorpusError::Ratios(parts))
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.85, validation: 0.05, test: 0.10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

/// Pure function of `(seed, repo)`: the repo's position in [0,1) is compared
/// against the cumulative ratio thresholds.
pub fn assign_partition(repo: &str, seed: u64, ratios: SplitRatios) -> Partition {
    let u = unit_interval(StableHasher::new().write_u64(seed).write_str(repo).finish());
    if u < ratios.train {
        Partition::Train
    } else if u < ratios.train + ratios.validation {
        Partition::Validation
    } else {
        Partition::Test
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<TrainingTriplet>,
    pub validation: Vec<TrainingTriplet>,
    pub test: Vec<TrainingTriplet>,
}

pub fn split_by_repo(triplets: Vec<TrainingTriplet>, ratios: SplitRatios, seed: u64) -> DatasetSplit {
    let mut split = DatasetSplit::default();
    for t in triplets {
        match assign_partition(&t.repo, seed, ratios) {
            Partition::Train => split.train.push(t),
            Partition::Validation => split.validation.push(t),
            Partition::Test => split.test.push(t),
        }
    }
    split
}

/// Drops train examples whose normalized text equals some test example's.
/// Validation is left alone.
pub fn dedup_train_against_test(split: DatasetSplit) -> DatasetSplit {
    let test_texts: HashSet<String> = split.test.iter().map(TrainingTriplet::normalized_text).collect();
    let DatasetSplit { train, validation, test } = split;
    let train = train.into_iter().filter(|t| !test_texts.contains(&t.normalized_text())).collect();
    DatasetSplit { train, validation, test }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn finding_line(cwe: &str) -> String {
        format!(
            r#"{{"repo":"r","path":"a.js","rule_id":"js/sql-injection","cwe":"{cwe}","title":"SQL Injection","message":"m","start_line":3,"start_col":5,"end_line":3,"end_col":20}}"#
        )
    }

    fn triplet(repo: &str, context: &str, block: &str) -> TrainingTriplet {
        TrainingTriplet {
            context: context.into(),
            block: block.into(),
            label: VulnLabel::Clean,
            repo: repo.into(),
            language: LanguageId::JavaScript,
        }
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_empty_file() {
        let f = write_tmp("");
        let report = ingest_findings(f.path()).unwrap();
        assert!(report.records.is_empty());
        assert!(report.errors.is_empty());
    }

    #[test]
    fn ingest_one_record() {
        let f = write_tmp(&(finding_line("CWE-89") + "\n"));
        let report = ingest_findings(f.path()).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.records[0].cwe.as_str(), "CWE-89");
    }

    #[test]
    fn ingest_missing_start_line_is_reported() {
        let line = finding_line("CWE-89").replace(r#""start_line":3,"#, "");
        let f = write_tmp(&line);
        let report = ingest_findings(f.path()).unwrap();
        assert!(report.records.is_empty());
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].line, 1);
    }

    #[test]
    fn ingest_rejects_bad_cwe_and_reversed_span() {
        let bad_cwe = finding_line("89");
        let reversed = finding_line("CWE-89").replace(r#""end_line":3"#, r#""end_line":2"#);
        let f = write_tmp(&format!("{bad_cwe}\n{reversed}\n{}\n", finding_line("CWE-22")));
        let report = ingest_findings(f.path()).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.errors.iter().map(|e| e.line).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn ingest_missing_file_is_fatal() {
        assert!(ingest_findings(Path::new("/nonexistent/findings.jsonl")).is_err());
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let line = finding_line("CWE-89").replace('}', r#","severity":"high"}"#);
        assert!(FindingRecord::parse_line(&line).is_ok());
    }

    #[test]
    fn findings_round_trip_bytes() {
        let input = format!("{}\n{}\n", finding_line("CWE-89"), finding_line("CWE-798"));
        let f = write_tmp(&input);
        let report = ingest_findings(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_findings(out.path(), &report.records).unwrap();
        assert_eq!(std::fs::read_to_string(out.path()).unwrap(), input);
    }

    #[test]
    fn triplet_record_enforces_label_invariant() {
        let bad = r#"{"context":"a","block":"b","label_kind":"vulnerable","cwe":null,"repo":"r","language":"python"}"#;
        assert!(TrainingTriplet::from_json_line(bad).is_err());
        let good = r#"{"context":"a","block":"b","label_kind":"vulnerable","cwe":"CWE-22","repo":"r","language":"python"}"#;
        let t = TrainingTriplet::from_json_line(good).unwrap();
        assert_eq!(t.label.cwe().unwrap().as_str(), "CWE-22");
        assert_eq!(TrainingTriplet::from_json_line(&t.to_json_line()).unwrap(), t);
    }

    #[test]
    fn ratios_must_sum_to_one() {
        assert!(SplitRatios::new(0.85, 0.05, 0.10).is_ok());
        assert!(SplitRatios::new(0.8, 0.05, 0.10).is_err());
        assert!(SplitRatios::new(1.1, -0.1, 0.0).is_err());
    }

    #[test]
    fn single_repo_lands_in_one_partition() {
        let ts: Vec<_> = (0..20).map(|i| triplet("only", &format!("c{i}"), "b")).collect();
        let split = split_by_repo(ts, SplitRatios::default(), 3);
        let nonempty = [&split.train, &split.validation, &split.test].iter().filter(|p| !p.is_empty()).count();
        assert_eq!(nonempty, 1);
    }

    #[test]
    fn empty_split() {
        assert_eq!(split_by_repo(Vec::new(), SplitRatios::default(), 0), DatasetSplit::default());
    }

    #[test]
    fn thousand_repos_near_target_sizes() {
        // Counts frozen from running the hash assignment for seed 42.
        let mut counts = [0usize; 3];
        for i in 0..1000 {
            match assign_partition(&format!("repo-{i}"), 42, SplitRatios::default()) {
                Partition::Train => counts[0] += 1,
                Partition::Validation => counts[1] += 1,
                Partition::Test => counts[2] += 1,
            }
        }
        assert_eq!(counts.iter().sum::<usize>(), 1000);
        for (count, target) in counts.iter().zip([850.0, 50.0, 100.0]) {
            assert!((*count as f64 - target).abs() <= 0.05 * 1000.0, "{counts:?}");
        }
    }

    #[test]
    fn dedup_removes_exact_match() {
        let t = triplet("a", "x = 1", "; y");
        let split = DatasetSplit { train: vec![t.clone()], validation: vec![], test: vec![t] };
        assert!(dedup_train_against_test(split).train.is_empty());
    }

    #[test]
    fn dedup_keeps_disjoint() {
        let split = DatasetSplit {
            train: vec![triplet("a", "x", "1")],
            validation: vec![triplet("v", "x", "1")],
            test: vec![triplet("b", "y", "2")],
        };
        assert_eq!(dedup_train_against_test(split.clone()), split);
    }

    #[test]
    fn dedup_ignores_whitespace_runs() {
        // "a =  b(\n  c)" and "a = b( c)" both collapse to "a = b( c)".
        let split = DatasetSplit {
            train: vec![triplet("a", "a =  b(", "\n  c)")],
            validation: vec![],
            test: vec![triplet("b", "a = b(", " c)")],
        };
        assert!(dedup_train_against_test(split).train.is_empty());
    }
}
