//! Scope finder for indentation-delimited languages.
//!
//! Works on logical lines (physical lines joined across open brackets,
//! backslash continuations and multi-line strings). A logical line ending in
//! `:` whose first word is a compound keyword opens a block that runs while
//! following non-blank lines are indented deeper.

use std::sync::LazyLock;

use regex::Regex;

use super::lexer::{lex, CharClass, Family, Lexed};
use super::{RawScope, ScopeExtractor, ScopeKind};

static ASSIGNMENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[A-Za-z_][\w.]*(?:\s*,\s*[A-Za-z_][\w.]*)*\s*(?::[^=]+)?=[^=]").expect("valid regex")
});

#[derive(Debug, Default, Clone, Copy)]
pub struct IndentScopeExtractor;

#[derive(Debug)]
struct LogicalLine {
    /// First non-whitespace, non-comment character; `None` for blank lines.
    first: Option<usize>,
    /// Last non-whitespace, non-comment character.
    last: usize,
    indent: usize,
}

impl ScopeExtractor for IndentScopeExtractor {
    fn extract_raw(&self, chars: &[char]) -> Vec<RawScope> {
        let lexed = lex(chars, Family::Indent);
        let lines = logical_lines(chars, &lexed);
        let mut scopes = Vec::new();
        for (idx, line) in lines.iter().enumerate() {
            let Some(first) = line.first else { continue };
            let text: String = chars[first..=line.last].iter().collect();
            let keyword = leading_keyword(&text);
            if chars[line.last] == ':' && lexed.is_code(line.last) {
                let Some(kind) = keyword.and_then(block_kind) else { continue };
                let Some(end) = block_end(&lines, idx) else { continue };
                let start = if kind == ScopeKind::Method || text.starts_with("class") {
                    decorated_start(&lines, chars, idx).unwrap_or(first)
                } else {
                    first
                };
                scopes.push(RawScope { start, end, kind });
            } else if keyword.is_none() && ASSIGNMENT.is_match(&text) {
                scopes.push(RawScope { start: first, end: line.last, kind: ScopeKind::Declaration });
            }
        }
        scopes
    }
}

fn leading_keyword(text: &str) -> Option<&str> {
    let word: &str = text.split(|c: char| !(c.is_alphanumeric() || c == '_')).next().unwrap_or("");
    let word = if word == "async" {
        text["async".len()..].trim_start().split(|c: char| !(c.is_alphanumeric() || c == '_')).next().unwrap_or("")
    } else {
        word
    };
    block_kind(word).map(|_| word)
}

fn block_kind(keyword: &str) -> Option<ScopeKind> {
    Some(match keyword {
        "def" => ScopeKind::Method,
        "class" => ScopeKind::Declaration,
        "if" | "for" | "while" | "with" | "try" | "match" => ScopeKind::Statement,
        "elif" | "else" | "except" | "finally" | "case" => ScopeKind::Clause,
        _ => return None,
    })
}

fn logical_lines(chars: &[char], lexed: &Lexed) -> Vec<LogicalLine> {
    let mut out = Vec::new();
    let mut line_start = 0;
    let mut depth: isize = 0;
    let mut i = 0;
    let n = chars.len();
    while i <= n {
        let at_end = i == n;
        let c = if at_end { '\n' } else { chars[i] };
        if !at_end && lexed.is_code(i) {
            match c {
                '(' | '[' | '{' => depth += 1,
                ')' | ']' | '}' => depth = (depth - 1).max(0),
                _ => {}
            }
        }
        let is_break = at_end
            || (c == '\n' && lexed.is_code(i) && depth == 0 && !(i > 0 && chars[i - 1] == '\\' && lexed.is_code(i - 1)));
        if is_break {
            let content =
                |j: &usize| lexed.classes[*j] != CharClass::Comment && !chars[*j].is_whitespace();
            let first = (line_start..i).find(content);
            let last = (line_start..i).rev().find(content).unwrap_or(line_start);
            let indent = first.map(|f| f - line_start).unwrap_or(0);
            out.push(LogicalLine { first, last, indent });
            line_start = i + 1;
        }
        i += 1;
    }
    out
}

/// Last content character of the block opened by `lines[header]`, or `None`
/// when the block has no body yet.
fn block_end(lines: &[LogicalLine], header: usize) -> Option<usize> {
    let indent = lines[header].indent;
    let mut end = None;
    for line in &lines[header + 1..] {
        if line.first.is_none() {
            continue;
        }
        if line.indent <= indent {
            break;
        }
        end = Some(line.last);
    }
    end
}

fn decorated_start(lines: &[LogicalLine], chars: &[char], header: usize) -> Option<usize> {
    let indent = lines[header].indent;
    let mut start = None;
    for line in lines[..header].iter().rev() {
        match line.first {
            Some(f) if line.indent == indent && chars[f] == '@' => start = Some(f),
            _ => break,
        }
    }
    start
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(src: &str) -> Vec<(String, ScopeKind)> {
        let chars: Vec<char> = src.chars().collect();
        let mut scopes = IndentScopeExtractor.extract_raw(&chars);
        scopes.sort_by_key(|s| (s.start, std::cmp::Reverse(s.end)));
        scopes.into_iter().map(|s| (chars[s.start..=s.end].iter().collect(), s.kind)).collect()
    }

    #[test]
    fn header_without_body_is_incomplete() {
        assert!(raw("def f(x):\n").is_empty());
    }

    #[test]
    fn decorators_belong_to_method() {
        let got = raw("@app.route('/x')\ndef view():\n    return 1\n");
        assert_eq!(got[0].0, "@app.route('/x')\ndef view():\n    return 1");
        assert_eq!(got[0].1, ScopeKind::Method);
    }

    #[test]
    fn bracket_continuation_joins_lines() {
        let got = raw("query = (\n    'a' +\n    b)\n");
        assert_eq!(got, vec![("query = (\n    'a' +\n    b)".to_string(), ScopeKind::Declaration)]);
    }

    #[test]
    fn clauses_and_nested() {
        let got = raw("try:\n    x = 1\nexcept E:\n    pass\n");
        let kinds: Vec<_> = got.iter().map(|g| g.1).collect();
        assert_eq!(kinds, vec![ScopeKind::Statement, ScopeKind::Declaration, ScopeKind::Clause]);
    }
}
