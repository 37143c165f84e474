//! Edit-time triplet synthesis: find complete scopes in source files, then cut
//! each scope at a random character so that the code before the cut becomes
//! context and the rest becomes the block. For vulnerable scopes the cut is
//! always placed at or before the first flagged character.

mod brace;
mod indent;
pub mod lexer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use brace::BraceScopeExtractor;
pub use indent::IndentScopeExtractor;
pub use lexer::Family;

use crate::corpus::{Cwe, FindingRecord, SourceFile, TrainingTriplet, VulnLabel};
use crate::hash::StableHasher;
use crate::language::LanguageId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitterError {
    #[error("no scope extractor for language {0}")]
    UnsupportedLanguage(LanguageId),
    #[error("scope of {0} characters cannot be split (need at least 2)")]
    ScopeTooShort(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScopeKind {
    Statement,
    Method,
    Declaration,
    Clause,
}

/// A flagged character range, relative to the scope start, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VulnSpan {
    pub start: usize,
    pub end: usize,
    pub cwe: Cwe,
    pub rule_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scope {
    pub text: String,
    pub kind: ScopeKind,
    /// Char index of the first character within the source file.
    pub start_offset: usize,
    pub vuln_spans: Vec<VulnSpan>,
}

impl Scope {
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// The span that governs splitting and labeling: earliest start, ties
    /// broken by the order spans were attached.
    pub fn earliest_span(&self) -> Option<&VulnSpan> {
        self.vuln_spans.iter().min_by_key(|s| s.start)
    }
}

/// Inclusive char range found by an extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawScope {
    pub start: usize,
    pub end: usize,
    pub kind: ScopeKind,
}

/// Finds complete scopes in (possibly incomplete) source text. Implement this
/// to plug in a full grammar parser.
pub trait ScopeExtractor: Send + Sync {
    fn extract_raw(&self, chars: &[char]) -> Vec<RawScope>;

    fn extract(&self, source: &str) -> Vec<Scope> {
        let chars: Vec<char> = source.chars().collect();
        let mut raw = self.extract_raw(&chars);
        raw.sort_by_key(|s| (s.start, std::cmp::Reverse(s.end), s.kind as u8));
        raw.dedup_by_key(|s| (s.start, s.end));
        raw.into_iter()
            .filter(|s| s.start <= s.end && s.end < chars.len())
            .map(|s| Scope {
                text: chars[s.start..=s.end].iter().collect(),
                kind: s.kind,
                start_offset: s.start,
                vuln_spans: Vec::new(),
            })
            .collect()
    }
}

pub fn family_for(language: LanguageId) -> Result<Family, SplitterError> {
    match language {
        LanguageId::JavaScript | LanguageId::Go | LanguageId::Java | LanguageId::Cpp | LanguageId::CSharp => {
            Ok(Family::Brace)
        }
        LanguageId::Python => Ok(Family::Indent),
        LanguageId::Ruby => Err(SplitterError::UnsupportedLanguage(language)),
    }
}

pub fn extractor_for(language: LanguageId) -> Result<&'static dyn ScopeExtractor, SplitterError> {
    Ok(match family_for(language)? {
        Family::Brace => &BraceScopeExtractor,
        Family::Indent => &IndentScopeExtractor,
    })
}

/// Complete scopes in `source`, outermost first at each position. Text with
/// no complete scope yields an empty list.
pub fn extract_scopes(source: &str, language: LanguageId) -> Result<Vec<Scope>, SplitterError> {
    let extractor = extractor_for(language)?;
    let scopes = extractor.extract(source);
    if scopes.is_empty() && !source.trim().is_empty() {
        tracing::debug!(%language, "no complete scope found");
    }
    Ok(scopes)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub scope: Scope,
    pub split_index: usize,
    pub label: VulnLabel,
}

impl SplitPlan {
    /// `(context, block)` halves of the scope text.
    pub fn halves(&self) -> (String, String) {
        let byte = self.scope.text.char_indices().nth(self.split_index).map_or(self.scope.text.len(), |(b, _)| b);
        let (context, block) = self.scope.text.split_at(byte);
        (context.to_string(), block.to_string())
    }
}

/// Picks a split with `pick(lo, hi)` returning an index in `lo..=hi`.
/// Vulnerable scopes draw from `[1, s]` with `s` the earliest flagged offset
/// clamped to at least 1; clean scopes from `[1, len - 1]`.
pub fn plan_split_with(scope: Scope, pick: impl FnOnce(usize, usize) -> usize) -> Result<SplitPlan, SplitterError> {
    let len = scope.char_len();
    if len < 2 {
        return Err(SplitterError::ScopeTooShort(len));
    }
    let (hi, label) = match scope.earliest_span() {
        Some(span) => (
            span.start.clamp(1, len - 1),
            VulnLabel::Vulnerable { cwe: span.cwe.clone(), rule_id: span.rule_id.clone() },
        ),
        None => (len - 1, VulnLabel::Clean),
    };
    let split_index = pick(1, hi);
    debug_assert!((1..=hi).contains(&split_index), "picked {split_index} outside 1..={hi}");
    Ok(SplitPlan { scope, split_index, label })
}

pub fn plan_split<R: Rng + ?Sized>(scope: Scope, rng: &mut R) -> Result<SplitPlan, SplitterError> {
    plan_split_with(scope, |lo, hi| rng.gen_range(lo..=hi))
}

/// Char offset of a 1-based line/column; columns count Unicode scalar values.
/// `col` may point one past the end of its line (exclusive span ends).
pub fn line_col_to_offset(line_starts: &[usize], line_lens: &[usize], line: u32, col: u32) -> Option<usize> {
    let li = (line as usize).checked_sub(1)?;
    let ci = (col as usize).checked_sub(1)?;
    if ci > *line_lens.get(li)? {
        return None;
    }
    Some(line_starts[li] + ci)
}

fn line_table(text: &str) -> (Vec<usize>, Vec<usize>) {
    let mut starts = vec![0];
    let mut lens = Vec::new();
    let mut current = 0;
    for (i, c) in text.chars().enumerate() {
        if c == '\n' {
            lens.push(current);
            starts.push(i + 1);
            current = 0;
        } else {
            current += 1;
        }
    }
    lens.push(current);
    (starts, lens)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SynthesisStats {
    pub files: usize,
    pub scopes: usize,
    pub clean_triplets: usize,
    pub vulnerable_triplets: usize,
    /// Findings whose span is invalid or not inside any complete scope.
    pub skipped_findings: usize,
    /// Scopes partially overlapping a finding; their label would be ambiguous.
    pub straddling_scopes: usize,
    /// Vulnerable scopes whose flagged code starts at offset 0, leaving no
    /// room for a non-empty context.
    pub unsplittable_scopes: usize,
    pub short_scopes: usize,
    pub unsupported_files: usize,
}

impl SynthesisStats {
    fn absorb(&mut self, other: &SynthesisStats) {
        self.files += other.files;
        self.scopes += other.scopes;
        self.clean_triplets += other.clean_triplets;
        self.vulnerable_triplets += other.vulnerable_triplets;
        self.skipped_findings += other.skipped_findings;
        self.straddling_scopes += other.straddling_scopes;
        self.unsplittable_scopes += other.unsplittable_scopes;
        self.short_scopes += other.short_scopes;
        self.unsupported_files += other.unsupported_files;
    }
}

#[derive(Debug, Clone, Default)]
pub struct Synthesis {
    pub triplets: Vec<TrainingTriplet>,
    pub stats: SynthesisStats,
}

/// Seed for a file's rng stream, so results do not depend on scheduling.
pub fn file_seed(seed: u64, repo: &str, path: &str) -> u64 {
    StableHasher::new().write_u64(seed).write_str(repo).write_str(path).finish()
}

/// One triplet per usable scope across all files. Files are processed in
/// parallel; output order follows input order.
pub fn synthesize(files: &[SourceFile], seed: u64) -> Synthesis {
    let per_file: Vec<Synthesis> = files.par_iter().map(|f| synthesize_file(f, seed)).collect();
    let mut out = Synthesis::default();
    for part in per_file {
        out.stats.absorb(&part.stats);
        out.triplets.extend(part.triplets);
    }
    out
}

pub fn synthesize_file(file: &SourceFile, seed: u64) -> Synthesis {
    let mut stats = SynthesisStats { files: 1, ..Default::default() };
    let scopes = match extract_scopes(&file.text, file.language) {
        Ok(s) => s,
        Err(e) => {
            tracing::warn!(repo = %file.repo, path = %file.path, "{e}");
            stats.unsupported_files = 1;
            stats.skipped_findings = file.findings.len();
            return Synthesis { triplets: Vec::new(), stats };
        }
    };
    stats.scopes = scopes.len();

    let (starts, lens) = line_table(&file.text);
    let spans: Vec<Option<(usize, usize, &FindingRecord)>> = file
        .findings
        .iter()
        .map(|f| {
            let a = line_col_to_offset(&starts, &lens, f.start_line, f.start_col)?;
            let b = line_col_to_offset(&starts, &lens, f.end_line, f.end_col)?;
            Some((a, b.max(a), f))
        })
        .collect();

    let mut covered = vec![false; spans.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(file_seed(seed, &file.repo, &file.path));
    let mut triplets = Vec::new();

    for mut scope in scopes {
        let s = scope.start_offset;
        let e = s + scope.char_len();
        let mut straddles = false;
        for (k, span) in spans.iter().enumerate() {
            let Some((a, b, finding)) = span else { continue };
            let (a, b) = (*a, *b);
            let inside = s <= a && a < e && b <= e;
            let overlaps = a < e && b > s;
            if inside {
                covered[k] = true;
                scope.vuln_spans.push(VulnSpan {
                    start: a - s,
                    end: b - s,
                    cwe: finding.cwe.clone(),
                    rule_id: Some(finding.rule_id.clone()),
                });
            } else if overlaps {
                straddles = true;
            }
        }
        if straddles {
            stats.straddling_scopes += 1;
            continue;
        }
        if scope.earliest_span().is_some_and(|sp| sp.start == 0) {
            stats.unsplittable_scopes += 1;
            continue;
        }
        let plan = match plan_split(scope, &mut rng) {
            Ok(p) => p,
            Err(_) => {
                stats.short_scopes += 1;
                continue;
            }
        };
        let (context, block) = plan.halves();
        if plan.label.is_vulnerable() {
            stats.vulnerable_triplets += 1;
        } else {
            stats.clean_triplets += 1;
        }
        triplets.push(TrainingTriplet {
            context,
            block,
            label: plan.label,
            repo: file.repo.clone(),
            language: file.language,
        });
    }
    stats.skipped_findings = covered.iter().filter(|c| !**c).count();
    Synthesis { triplets, stats }
}
