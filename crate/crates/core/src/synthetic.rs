//! Deterministic generators for tests, benches and demos.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Cwe, FindingRecord, SourceFile, TrainingTriplet, VulnLabel};
use crate::language::LanguageId;

/// Call that marks every vulnerable example of [`separable_corpus`].
pub const PLANTED_CALL: &str = "unsafeEvalSink";

const IDENTS: &[&str] = &[
    "user", "items", "total", "config", "result", "count", "index", "buffer", "name", "value", "handler", "cache",
    "request", "response", "payload", "options", "entry", "record", "status", "limit", "offset", "path", "key",
    "token", "session", "query", "row", "list", "map", "next",
];
const CALLS: &[&str] = &[
    "render", "format", "parseInt", "validate", "normalize", "push", "fetchData", "send", "log", "update", "merge",
    "compute", "lookup", "serialize", "resolve",
];

fn ident(rng: &mut ChaCha8Rng) -> &'static str {
    IDENTS.choose(rng).expect("non-empty")
}

fn call(rng: &mut ChaCha8Rng) -> &'static str {
    CALLS.choose(rng).expect("non-empty")
}

fn code_line(rng: &mut ChaCha8Rng) -> String {
    let (a, b, c) = (ident(rng), ident(rng), ident(rng));
    match rng.gen_range(0..7) {
        0 => format!("const {a} = {}({b});", call(rng)),
        1 => format!("let {a} = {b}.{c};"),
        2 => format!("if ({a} > {}) {{ {}({b}); }}", rng.gen_range(0..100), call(rng)),
        3 => format!("{a}.{}({b}, {c});", call(rng)),
        4 => format!("for (const {a} of {b}) {{ {c}.push({a}); }}"),
        5 => format!("return {a} + {b};"),
        _ => format!("{a} = [{}, {}];", rng.gen_range(0..10), rng.gen_range(0..10)),
    }
}

fn lines(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Vec<String> {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| code_line(rng)).collect()
}

/// `n` triplets, about `positive_rate` of them vulnerable. Vulnerable blocks
/// contain a [`PLANTED_CALL`] line; clean ones never do.
pub fn separable_corpus(n: usize, positive_rate: f64, seed: u64) -> Vec<TrainingTriplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cwe = Cwe::new("CWE-94").expect("valid cwe");
    (0..n)
        .map(|i| {
            let vulnerable = rng.gen_bool(positive_rate.clamp(0.0, 1.0));
            let context = lines(&mut rng, 1, 6).join("\n") + "\n";
            let mut block = lines(&mut rng, 1, 5);
            if vulnerable {
                let at = rng.gen_range(0..=block.len());
                block.insert(at, format!("{PLANTED_CALL}({});", ident(&mut rng)));
            }
            TrainingTriplet {
                context,
                block: block.join("\n"),
                label: if vulnerable { VulnLabel::vulnerable(cwe.clone()) } else { VulnLabel::Clean },
                repo: format!("synthetic/repo-{:03}", i % 400),
                language: LanguageId::JavaScript,
            }
        })
        .collect()
}

struct FileBuilder {
    lines: Vec<String>,
    findings: Vec<(u32, u32, u32)>,
}

impl FileBuilder {
    fn push(&mut self, line: String) {
        self.lines.push(line);
    }

    /// Adds a line and records a finding over `needle` within it.
    fn push_finding(&mut self, line: String, needle: &str) {
        let byte = line.find(needle).expect("needle in line");
        let col = line[..byte].chars().count() as u32 + 1;
        let end = col + needle.chars().count() as u32;
        self.lines.push(line);
        self.findings.push((self.lines.len() as u32, col, end));
    }
}

fn js_file(rng: &mut ChaCha8Rng, functions: usize) -> FileBuilder {
    let mut f = FileBuilder { lines: vec!["'use strict';".into(), String::new()], findings: Vec::new() };
    for i in 0..functions {
        let (a, b) = (ident(rng), ident(rng));
        f.push(format!("function handler{i}(req, res) {{"));
        f.push(format!("  const {a} = req.query.{b};"));
        f.push(format!("  if ({a}) {{"));
        if rng.gen_bool(0.5) {
            let sink = format!("db.query(\"SELECT * FROM t WHERE id = \" + {a})");
            f.push_finding(format!("    {sink};"), &sink);
        } else {
            f.push(format!("    db.query(\"SELECT * FROM t WHERE id = ?\", [{a}]);"));
        }
        f.push("  } else {".into());
        f.push(format!("    {}({b});", call(rng)));
        f.push("  }".into());
        f.push(format!("  return res.send({a});"));
        f.push("}".into());
        f.push(String::new());
    }
    f
}

fn py_file(rng: &mut ChaCha8Rng, functions: usize) -> FileBuilder {
    let mut f = FileBuilder { lines: vec!["import sqlite3".into(), String::new()], findings: Vec::new() };
    for i in 0..functions {
        let (a, b) = (ident(rng), ident(rng));
        f.push(format!("def handler_{i}(request, cursor):"));
        f.push(format!("    {a} = request.args.get(\"{b}\")"));
        f.push(format!("    if {a}:"));
        if rng.gen_bool(0.5) {
            let sink = format!("cursor.execute(\"SELECT * FROM t WHERE id = \" + {a})");
            f.push_finding(format!("        {sink}"), &sink);
        } else {
            f.push(format!("        cursor.execute(\"SELECT * FROM t WHERE id = ?\", ({a},))"));
        }
        f.push("    else:".into());
        f.push(format!("        {}({b})", call(rng)));
        f.push(format!("    return {a}"));
        f.push(String::new());
    }
    f
}

/// JavaScript and Python files with SQL-injection findings at known spans.
pub fn synthetic_sources(n_files: usize, seed: u64) -> Vec<SourceFile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cwe = Cwe::new("CWE-89").expect("valid cwe");
    (0..n_files)
        .map(|i| {
            let repo = format!("synthetic/repo-{:03}", i % 97);
            let functions = rng.gen_range(1..=4);
            let (language, path, builder, rule) = if i % 3 == 2 {
                (LanguageId::Python, format!("app/module_{i}.py"), py_file(&mut rng, functions), "py/sql-injection")
            } else {
                (LanguageId::JavaScript, format!("src/module_{i}.js"), js_file(&mut rng, functions), "js/sql-injection")
            };
            let findings = builder
                .findings
                .iter()
                .map(|&(line, start_col, end_col)| FindingRecord {
                    repo: repo.clone(),
                    path: path.clone(),
                    rule_id: rule.into(),
                    cwe: cwe.clone(),
                    title: "Database query built from user-controlled sources".into(),
                    message: "This query depends on a user-provided value.".into(),
                    start_line: line,
                    start_col,
                    end_line: line,
                    end_col,
                })
                .collect();
            SourceFile { repo, path, language, text: builder.lines.join("\n") + "\n", findings }
        })
        .collect()
}

/// A JavaScript snippet of exactly `n_lines` lines.
pub fn snippet_of_lines(n_lines: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_lines).map(|_| code_line(&mut rng)).collect::<Vec<_>>().join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitter::synthesize;

    #[test]
    fn corpus_is_separable_by_construction() {
        let data = separable_corpus(2000, 0.05, 1);
        let vuln = data.iter().filter(|t| t.label.is_vulnerable()).count();
        assert!((60..=140).contains(&vuln), "{vuln}");
        for t in &data {
            assert_eq!(t.block.contains(PLANTED_CALL), t.label.is_vulnerable());
            assert!(!t.context.contains(PLANTED_CALL));
        }
        assert_eq!(data, separable_corpus(2000, 0.05, 1));
    }

    #[test]
    fn findings_point_at_sinks() {
        for file in synthetic_sources(30, 5) {
            let lines: Vec<&str> = file.text.lines().collect();
            for f in &file.findings {
                let line: Vec<char> = lines[f.start_line as usize - 1].chars().collect();
                let text: String = line[f.start_col as usize - 1..f.end_col as usize - 1].iter().collect();
                assert!(text.starts_with("db.query(") || text.starts_with("cursor.execute("), "{text}");
                assert!(text.ends_with(')'));
            }
        }
    }

    #[test]
    fn sources_synthesize_both_labels() {
        let s = synthesize(&synthetic_sources(60, 9), 3);
        assert!(s.stats.vulnerable_triplets > 0);
        assert!(s.stats.clean_triplets > 0);
        assert_eq!(s.stats.skipped_findings, 0);
    }

    #[test]
    fn snippet_line_count() {
        assert_eq!(snippet_of_lines(200, 0).lines().count(), 200);
    }
}
