//! Zero- and few-shot prompt construction and Yes/No verdict parsing.

use std::path::Path;
use std::sync::{Arc, LazyLock};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::completion::{complete, CompletionBackend, CompletionRequest, RetryPolicy};
use crate::corpus::Cwe;
use crate::detection::{DetectError, Detection, Detector, Verdict};
use crate::jsonl;
use crate::language::LanguageId;

pub const CODE_SNIPPET_LINE: &str = "Code snippet";
pub const CODEX_ANSWER_LINE: &str = "Answer (Yes/No, explanation):";
pub const TEXT_ANSWER_LINE: &str = "Answer (Yes/No):";
pub const CODEX_MINING_STEM: &str = "We run CodeQL security queries in order to ";
pub const TEXT_MINING_QUESTION: &str = "What would you accomplish by running CodeQL security queries?";
pub const OUTPUT_CODE_ONLY: &str = "Output the code only, do not include text:";

pub const CODEX_PHRASES: [&str; 4] = [
    "identify potential security vulnerabilities",
    "find potential security issues",
    "find security vulnerabilities",
    "detect security vulnerabilities",
];

pub const TEXT_PHRASES: [&str; 4] = [
    "identify potential security vulnerabilities",
    "spot any security weaknesses",
    "detect any security risks",
    "determine any security issues",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptStyle {
    CodexZero,
    TextZero,
    CodexFew,
    TextFew,
}

impl PromptStyle {
    pub const ALL: [PromptStyle; 4] = [Self::CodexZero, Self::TextZero, Self::CodexFew, Self::TextFew];

    pub fn is_codex(self) -> bool {
        matches!(self, Self::CodexZero | Self::CodexFew)
    }

    pub fn default_k(self) -> usize {
        match self {
            Self::CodexZero | Self::TextZero => 0,
            Self::CodexFew => 8,
            Self::TextFew => 6,
        }
    }

    pub fn default_phrase(self) -> &'static str {
        if self.is_codex() {
            CODEX_PHRASES[2]
        } else {
            TEXT_PHRASES[2]
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::CodexZero => "codex-zero",
            Self::TextZero => "text-zero",
            Self::CodexFew => "codex-few",
            Self::TextFew => "text-few",
        }
    }
}

impl std::str::FromStr for PromptStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptStyle::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s) || format!("{p:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown prompt style `{s}`"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("example bank has {available} {language} entries, {needed} requested")]
    InsufficientExamples { language: LanguageId, needed: usize, available: usize },
    #[error("example bank line {line}: {message}")]
    Bank { line: usize, message: String },
    #[error("cannot read example bank: {0}")]
    Io(String),
}

fn block(style: PromptStyle, phrase: &str, language: LanguageId, snippet: &str) -> String {
    if style.is_codex() {
        let c = language.comment_marker();
        format!("{c} {phrase}\n{c} {CODE_SNIPPET_LINE}\n{snippet}\n{c} {CODEX_ANSWER_LINE}")
    } else {
        format!("{phrase}\n{snippet}\n{TEXT_ANSWER_LINE}")
    }
}

pub fn build_zero_shot(style: PromptStyle, phrase: &str, language: LanguageId, snippet: &str) -> String {
    block(style, phrase, language, snippet)
}

// ---------------------------------------------------------------------------
// Example bank

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleLabel {
    Vulnerable,
    Clean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleEntry {
    pub language: LanguageId,
    pub label: ExampleLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cwe: Option<Cwe>,
    pub snippet: String,
    #[serde(default)]
    pub provenance: String,
}

impl ExampleEntry {
    fn validate(&self) -> Result<(), String> {
        match (self.label, &self.cwe) {
            (ExampleLabel::Vulnerable, None) => Err("vulnerable entry without cwe".into()),
            (ExampleLabel::Clean, Some(_)) => Err("clean entry must not carry a cwe".into()),
            _ => Ok(()),
        }
    }

    pub fn answer(&self) -> &'static str {
        match self.label {
            ExampleLabel::Vulnerable => "Yes",
            ExampleLabel::Clean => "No",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExampleBank {
    entries: Vec<ExampleEntry>,
}

impl ExampleBank {
    pub fn new(entries: Vec<ExampleEntry>) -> Result<Self, PromptError> {
        for (i, e) in entries.iter().enumerate() {
            e.validate().map_err(|message| PromptError::Bank { line: i + 1, message })?;
        }
        Ok(ExampleBank { entries })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let (entries, errors) = jsonl::read_lenient(path, |line| {
            let e: ExampleEntry = serde_json::from_str(line).map_err(|e| e.to_string())?;
            e.validate()?;
            Ok(e)
        })
        .map_err(|e| PromptError::Io(e.to_string()))?;
        if let Some(err) = errors.into_iter().next() {
            return Err(PromptError::Bank { line: err.line, message: err.message });
        }
        Ok(ExampleBank { entries })
    }

    pub fn entries(&self) -> &[ExampleEntry] {
        &self.entries
    }

    pub fn for_language(&self, language: LanguageId) -> impl Iterator<Item = &ExampleEntry> {
        self.entries.iter().filter(move |e| e.language == language)
    }

    /// `k` entries alternating vulnerable and clean (vulnerable first), each
    /// label's candidates shuffled by `seed`. Once one label runs out the
    /// other fills the remainder.
    pub fn select(&self, language: LanguageId, k: usize, seed: u64) -> Result<Vec<&ExampleEntry>, PromptError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vuln: Vec<&ExampleEntry> = self.for_language(language).filter(|e| e.label == ExampleLabel::Vulnerable).collect();
        let mut clean: Vec<&ExampleEntry> = self.for_language(language).filter(|e| e.label == ExampleLabel::Clean).collect();
        let available = vuln.len() + clean.len();
        if available < k {
            return Err(PromptError::InsufficientExamples { language, needed: k, available });
        }
        vuln.shuffle(&mut rng);
        clean.shuffle(&mut rng);
        let (mut v, mut c) = (vuln.into_iter(), clean.into_iter());
        let mut out = Vec::with_capacity(k);
        let mut want_vuln = true;
        while out.len() < k {
            let next = if want_vuln { v.next().or_else(|| c.next()) } else { c.next().or_else(|| v.next()) };
            out.push(next.expect("enough examples checked above"));
            want_vuln = !want_vuln;
        }
        Ok(out)
    }
}

pub fn build_few_shot(
    style: PromptStyle,
    phrase: &str,
    language: LanguageId,
    snippet: &str,
    bank: &ExampleBank,
    k: usize,
    seed: u64,
) -> Result<String, PromptError> {
    let mut parts: Vec<String> = bank
        .select(language, k, seed)?
        .into_iter()
        .map(|e| format!("{} {}", block(style, phrase, language, &e.snippet), e.answer()))
        .collect();
    parts.push(block(style, phrase, language, snippet));
    Ok(parts.join("\n\n"))
}

// ---------------------------------------------------------------------------
// Verdicts

static YES_NO: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(yes|no)\b").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedVerdict {
    pub verdict: Verdict,
    pub raw_response: String,
}

/// Earliest whole-word "yes" or "no", case-insensitive.
pub fn parse_verdict(response: &str) -> ParsedVerdict {
    let verdict = match YES_NO.captures(response) {
        Some(c) if c[1].eq_ignore_ascii_case("yes") => Verdict::Vulnerable,
        Some(_) => Verdict::NotVulnerable,
        None => Verdict::Unknown,
    };
    ParsedVerdict { verdict, raw_response: response.to_string() }
}

// ---------------------------------------------------------------------------
// Example generation and phrase mining

pub fn cwe_name(cwe: &Cwe) -> Option<&'static str> {
    Some(match cwe.number() {
        20 => "Incomplete URL Substring Sanitization",
        22 => "Path Injection",
        79 => "Cross-site Scripting",
        89 => "SQL Injection",
        94 => "Code Injection",
        209 => "Stack Trace Exposure",
        312 => "Clear Text Logging",
        327 => "Weak Cryptographic Algorithm",
        601 => "URL Redirection",
        798 => "Hardcoded Credentials",
        916 => "Insufficient Password Hash",
        _ => return None,
    })
}

/// One vulnerable-example request per CWE, then one clean-example request.
pub fn generate_example_requests(language: LanguageId, cwes: &[Cwe]) -> Vec<String> {
    let lang = language.display_name();
    let mut out: Vec<String> = cwes
        .iter()
        .map(|cwe| {
            let name = cwe_name(cwe).map_or_else(|| cwe.to_string(), str::to_string);
            format!("Provide an example in {lang} of a code snippet that contains {name} security vulnerability. {OUTPUT_CODE_ONLY}")
        })
        .collect();
    out.push(format!("Provide an example in {lang} of a code snippet. {OUTPUT_CODE_ONLY}"));
    out
}

/// Prompt that asks a model to describe the detection task in its own words.
pub fn phrase_mining_prompt(style: PromptStyle, language: LanguageId) -> String {
    if style.is_codex() {
        format!("{} {CODEX_MINING_STEM}", language.comment_marker())
    } else {
        TEXT_MINING_QUESTION.to_string()
    }
}

// ---------------------------------------------------------------------------
// Prompt-based detector

/// Asks a completion backend the Yes/No question for `context + block`.
pub struct PromptDetector {
    pub style: PromptStyle,
    pub phrase: String,
    pub language: LanguageId,
    pub bank: ExampleBank,
    pub k: usize,
    pub seed: u64,
    pub backend: Arc<dyn CompletionBackend>,
    pub retry: RetryPolicy,
}

impl PromptDetector {
    pub fn prompt(&self, snippet: &str) -> Result<String, PromptError> {
        if self.k == 0 {
            Ok(build_zero_shot(self.style, &self.phrase, self.language, snippet))
        } else {
            build_few_shot(self.style, &self.phrase, self.language, snippet, &self.bank, self.k, self.seed)
        }
    }
}

impl Detector for PromptDetector {
    fn id(&self) -> String {
        format!("{}:{}", self.style.as_str(), self.backend.id())
    }

    fn threshold(&self) -> f64 {
        0.5
    }

    fn detect_with_threshold(&self, context: &str, block: &str, threshold: f64) -> Result<Detection, DetectError> {
        crate::detection::check_threshold(threshold)?;
        let started = Instant::now();
        let prompt = self.prompt(&format!("{context}{block}")).map_err(|e| DetectError::Other(e.to_string()))?;
        let request = CompletionRequest { temperature: 0.0, n: 1, ..CompletionRequest::new(prompt) };
        let result = complete(&request, self.backend.as_ref(), &self.retry).map_err(|e| DetectError::Backend(e.to_string()))?;
        let parsed = parse_verdict(&result.texts[0]);
        let score = if parsed.verdict == Verdict::Vulnerable { 1.0 } else { 0.0 };
        let verdict = match parsed.verdict {
            Verdict::Unknown => Verdict::Unknown,
            _ if score >= threshold => Verdict::Vulnerable,
            _ => Verdict::NotVulnerable,
        };
        Ok(Detection { verdict, score, cwe: None, explanation: Some(parsed.raw_response), elapsed: started.elapsed() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::completion::ScriptedBackend;

    fn entry(label: ExampleLabel, snippet: &str) -> ExampleEntry {
        ExampleEntry {
            language: LanguageId::Python,
            label,
            cwe: (label == ExampleLabel::Vulnerable).then(|| Cwe::new("CWE-89").unwrap()),
            snippet: snippet.into(),
            provenance: "test".into(),
        }
    }

    fn bank() -> ExampleBank {
        let mut es = Vec::new();
        for i in 0..5 {
            es.push(entry(ExampleLabel::Vulnerable, &format!("v{i}")));
            es.push(entry(ExampleLabel::Clean, &format!("c{i}")));
        }
        ExampleBank::new(es).unwrap()
    }

    #[test]
    fn zero_shot_layouts() {
        assert_eq!(
            build_zero_shot(PromptStyle::CodexZero, "find security vulnerabilities", LanguageId::Python, "x = 1"),
            "# find security vulnerabilities\n# Code snippet\nx = 1\n# Answer (Yes/No, explanation):"
        );
        assert_eq!(
            build_zero_shot(PromptStyle::TextZero, "detect any security risks", LanguageId::Go, "x = 1"),
            "detect any security risks\nx = 1\nAnswer (Yes/No):"
        );
        assert_eq!(build_zero_shot(PromptStyle::TextZero, "p", LanguageId::Go, ""), "p\n\nAnswer (Yes/No):");
    }

    #[test]
    fn few_shot_degenerate_and_single() {
        let b = bank();
        let zero = build_zero_shot(PromptStyle::CodexFew, "p", LanguageId::Python, "s");
        assert_eq!(build_few_shot(PromptStyle::CodexFew, "p", LanguageId::Python, "s", &b, 0, 1).unwrap(), zero);
        let one = build_few_shot(PromptStyle::CodexFew, "p", LanguageId::Python, "s", &b, 1, 1).unwrap();
        let (example, target) = one.split_once("\n\n").unwrap();
        assert!(example.ends_with("# Answer (Yes/No, explanation): Yes"));
        assert_eq!(target, zero);
    }

    #[test]
    fn selection_alternates_and_is_seeded() {
        let b = bank();
        let picked = b.select(LanguageId::Python, 6, 3).unwrap();
        let labels: Vec<_> = picked.iter().map(|e| e.label).collect();
        assert_eq!(labels, [ExampleLabel::Vulnerable, ExampleLabel::Clean].repeat(3));
        assert_eq!(picked, b.select(LanguageId::Python, 6, 3).unwrap());
        let err = b.select(LanguageId::Python, 11, 3).unwrap_err();
        assert!(err.to_string().contains("10 python entries, 11 requested"), "{err}");
        assert!(b.select(LanguageId::Java, 1, 0).is_err());
    }

    #[test]
    fn default_k() {
        assert_eq!(PromptStyle::CodexFew.default_k(), 8);
        assert_eq!(PromptStyle::TextFew.default_k(), 6);
        assert_eq!(PromptStyle::CodexZero.default_k(), 0);
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("Yes, this is a SQL injection").verdict, Verdict::Vulnerable);
        assert_eq!(parse_verdict(" no").verdict, Verdict::NotVulnerable);
        assert_eq!(parse_verdict("cannot determine").verdict, Verdict::Unknown);
        assert_eq!(parse_verdict("Nothing here, yesterday").verdict, Verdict::Unknown);
        assert_eq!(parse_verdict("NO. Well, yes").verdict, Verdict::NotVulnerable);
    }

    #[test]
    fn answered_examples_parse_back() {
        for style in PromptStyle::ALL {
            for e in bank().entries() {
                let answered = format!("{} {}", block(style, "p", e.language, &e.snippet), e.answer());
                let tail = answered.rsplit_once(':').unwrap().1;
                let want = if e.label == ExampleLabel::Vulnerable { Verdict::Vulnerable } else { Verdict::NotVulnerable };
                assert_eq!(parse_verdict(tail).verdict, want);
            }
        }
    }

    #[test]
    fn example_requests() {
        let reqs = generate_example_requests(LanguageId::JavaScript, &[Cwe::new("CWE-89").unwrap()]);
        assert_eq!(reqs.len(), 2);
        assert!(reqs[0].contains("SQL Injection security vulnerability"));
        assert!(reqs.iter().all(|r| r.ends_with(OUTPUT_CODE_ONLY)));
        assert_eq!(generate_example_requests(LanguageId::Python, &[]).len(), 1);
    }

    #[test]
    fn bank_rejects_inconsistent_labels() {
        let mut e = entry(ExampleLabel::Clean, "x");
        e.cwe = Some(Cwe::new("CWE-1").unwrap());
        assert!(ExampleBank::new(vec![e]).is_err());
    }

    #[test]
    fn prompt_detector_keeps_unknown() {
        let d = PromptDetector {
            style: PromptStyle::TextZero,
            phrase: TEXT_PHRASES[2].into(),
            language: LanguageId::Python,
            bank: ExampleBank::default(),
            k: 0,
            seed: 0,
            backend: Arc::new(ScriptedBackend::new([
                crate::completion::ScriptStep::Respond(vec!["Yes.".into()]),
                crate::completion::ScriptStep::Respond(vec!["unsure".into()]),
            ])),
            retry: RetryPolicy::immediate(),
        };
        assert_eq!(d.detect("a", "b").unwrap().verdict, Verdict::Vulnerable);
        assert_eq!(d.detect("a", "b").unwrap().verdict, Verdict::Unknown);
    }
}
