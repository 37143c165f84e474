//! Scope finder for brace-delimited languages.
//!
//! Every matched `{ ... }` pair becomes a candidate scope. Its header is found
//! by walking backwards to the previous statement boundary, and the header's
//! leading keyword decides the scope kind. Declarations terminated by `;` (or
//! by a non-continued line) are emitted as well. Unmatched braces, which are
//! the norm while typing, are ignored.

use std::sync::LazyLock;

use regex::Regex;

use super::lexer::{lex, CharClass, Family, Lexed};
use super::{RawScope, ScopeExtractor, ScopeKind};

/// Characters that, ending a line, mean the statement continues on the next.
const CONTINUATION: &[char] = &['(', ',', '=', '+', '-', '*', '/', '.', '&', '|', '?', ':', '<', '>', '[', '!'];

const MODIFIERS: &[&str] = &[
    "public", "private", "protected", "internal", "static", "final", "abstract", "virtual", "override", "async",
    "sealed", "readonly", "inline", "extern", "partial",
];
const STATEMENT_WORDS: &[&str] = &[
    "if", "for", "while", "do", "switch", "try", "with", "foreach", "unsafe", "lock", "using", "synchronized",
    "select", "go", "defer", "return", "export", "checked",
];
const CLAUSE_WORDS: &[&str] = &["else", "catch", "finally", "case", "default"];
const METHOD_WORDS: &[&str] = &["function", "func", "fn", "constructor", "get", "set"];
const DECLARATION_WORDS: &[&str] =
    &["class", "interface", "struct", "enum", "namespace", "type", "trait", "impl", "record", "module", "union"];

static DECLARATION_STATEMENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)^(?:
            (?:export\s+)?(?:const|let|var|val)\s
          | [A-Za-z_]\w*(?:\s*,\s*[A-Za-z_]\w*)*\s*:=
          | (?:final\s+|static\s+|private\s+|public\s+|protected\s+|readonly\s+)*
            [A-Za-z_][\w.:]*(?:<[^;=]*>)?(?:\[\])*[*&]?\s+[*&]?[A-Za-z_]\w*\s*=[^=]
        )",
    )
    .expect("valid regex")
});

#[derive(Debug, Default, Clone, Copy)]
pub struct BraceScopeExtractor;

impl ScopeExtractor for BraceScopeExtractor {
    fn extract_raw(&self, chars: &[char]) -> Vec<RawScope> {
        let lexed = lex(chars, Family::Brace);
        let mut scopes = block_scopes(chars, &lexed);
        scopes.extend(declaration_statements(chars, &lexed));
        scopes
    }
}

fn is_ws(c: char) -> bool {
    c.is_whitespace()
}

/// Last non-whitespace, non-comment character on the line ending just before
/// `newline`.
fn line_tail(chars: &[char], lexed: &Lexed, newline: usize) -> Option<char> {
    let mut j = newline;
    while j > 0 {
        j -= 1;
        let c = chars[j];
        if c == '\n' {
            return None;
        }
        if lexed.classes[j] != CharClass::Comment && !is_ws(c) {
            return Some(c);
        }
    }
    None
}

fn continues(chars: &[char], lexed: &Lexed, newline: usize) -> bool {
    line_tail(chars, lexed, newline).is_some_and(|c| CONTINUATION.contains(&c))
}

fn block_scopes(chars: &[char], lexed: &Lexed) -> Vec<RawScope> {
    let mut stack = Vec::new();
    let mut pairs = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        if !lexed.is_code(i) {
            continue;
        }
        match c {
            '{' => stack.push(i),
            '}' => {
                if let Some(open) = stack.pop() {
                    pairs.push((open, i));
                }
            }
            _ => {}
        }
    }

    let mut scopes = Vec::new();
    for (open, close) in pairs {
        let Some((start, unclosed)) = header_start(chars, lexed, open) else { continue };
        let header: String = chars[start..open].iter().collect();
        let Some(kind) = classify_header(&header) else { continue };
        let Some(mut end) = close_trailing(chars, lexed, close, unclosed) else { continue };
        // Trailing `;` on the same line belongs to the construct.
        let mut k = end + 1;
        while k < chars.len() && (chars[k] == ' ' || chars[k] == '\t') {
            k += 1;
        }
        if k < chars.len() && chars[k] == ';' && lexed.is_code(k) {
            end = k;
        }
        scopes.push(RawScope { start, end, kind });
    }
    scopes
}

/// Walks back from an opening brace to the start of its header. Returns the
/// header start and how many `(`/`[` in the header are left unclosed (the
/// brace is an argument, e.g. `new Client({`).
fn header_start(chars: &[char], lexed: &Lexed, open: usize) -> Option<(usize, usize)> {
    let mut depth: isize = 0;
    let mut min_depth: isize = 0;
    let mut seen_content = false;
    let mut stop = 0;
    let mut i = open;
    while i > 0 {
        i -= 1;
        let c = chars[i];
        if !lexed.is_code(i) {
            if lexed.classes[i] == CharClass::Str {
                seen_content = true;
            }
            continue;
        }
        match c {
            ')' | ']' => depth += 1,
            '(' | '[' => {
                depth -= 1;
                min_depth = min_depth.min(depth);
            }
            ';' | '{' | '}' if depth <= 0 => {
                stop = i + 1;
                break;
            }
            ',' if depth == 0 => {
                stop = i + 1;
                break;
            }
            '\n' if depth == 0 && seen_content && !continues(chars, lexed, i) => {
                stop = i + 1;
                break;
            }
            _ => {}
        }
        if !is_ws(c) {
            seen_content = true;
        }
    }
    let start = (stop..open).find(|&j| lexed.is_code(j) && !is_ws(chars[j]) || lexed.classes[j] == CharClass::Str)?;
    Some((start, (-min_depth) as usize))
}

/// Extends a scope past its closing brace until `unclosed` brackets from the
/// header are closed. `None` when the input ends first.
fn close_trailing(chars: &[char], lexed: &Lexed, close: usize, unclosed: usize) -> Option<usize> {
    if unclosed == 0 {
        return Some(close);
    }
    let mut depth = unclosed as isize;
    for (j, &c) in chars.iter().enumerate().skip(close + 1) {
        if !lexed.is_code(j) {
            continue;
        }
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(j);
                }
                if depth < 0 {
                    return None;
                }
            }
            _ => {}
        }
    }
    None
}

fn words(header: &str) -> impl Iterator<Item = &str> {
    header.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '$')).filter(|w| !w.is_empty())
}

fn has_assignment(header: &str) -> bool {
    let b = header.as_bytes();
    b.iter().enumerate().any(|(i, &c)| {
        c == b'='
            && !matches!(b.get(i + 1), Some(b'=') | Some(b'>'))
            && !matches!(i.checked_sub(1).map(|p| b[p]), Some(b'=' | b'!' | b'<' | b'>'))
    })
}

pub(super) fn classify_header(header: &str) -> Option<ScopeKind> {
    let trimmed = header.trim();
    if trimmed.is_empty() {
        return None;
    }
    let mut first = None;
    for w in words(trimmed) {
        if !MODIFIERS.contains(&w) {
            first = Some(w);
            break;
        }
    }
    let first = first.unwrap_or("");
    if trimmed.starts_with("export") || STATEMENT_WORDS.contains(&first) {
        return Some(ScopeKind::Statement);
    }
    if CLAUSE_WORDS.contains(&first) {
        return Some(ScopeKind::Clause);
    }
    if METHOD_WORDS.contains(&first) || trimmed.ends_with("=>") {
        return Some(ScopeKind::Method);
    }
    if DECLARATION_WORDS.contains(&first) {
        return Some(ScopeKind::Declaration);
    }
    if has_assignment(trimmed) || trimmed.starts_with("const ") || trimmed.starts_with("let ") {
        let is_fn = trimmed.contains("=>") || words(trimmed).any(|w| w == "function");
        return Some(if is_fn { ScopeKind::Method } else { ScopeKind::Declaration });
    }
    if trimmed.ends_with(')') || words(trimmed).any(|w| w == "throws") {
        return Some(ScopeKind::Method);
    }
    Some(ScopeKind::Statement)
}

/// Declarations not ending in a brace block: `const q = "..." + id;`,
/// `token := os.Getenv("T")`, `String url = base + path;`.
fn declaration_statements(chars: &[char], lexed: &Lexed) -> Vec<RawScope> {
    let mut scopes = Vec::new();
    let mut paren_depth: isize = 0;
    let mut saved = Vec::new();
    let mut seg_start = 0;

    let emit = |from: usize, to_inclusive: Option<usize>, scopes: &mut Vec<RawScope>| {
        let Some(to) = to_inclusive else { return };
        let Some(start) = (from..=to).find(|&j| lexed.is_code(j) && !is_ws(chars[j])) else { return };
        let Some(end) = (start..=to).rev().find(|&j| lexed.classes[j] != CharClass::Comment && !is_ws(chars[j]))
        else {
            return;
        };
        let text: String = chars[start..=end].iter().collect();
        let first = words(&text).next().unwrap_or("");
        if STATEMENT_WORDS.contains(&first) && first != "export" || CLAUSE_WORDS.contains(&first) {
            return;
        }
        if DECLARATION_STATEMENT.is_match(&text) {
            scopes.push(RawScope { start, end, kind: ScopeKind::Declaration });
        }
    };

    for (i, &c) in chars.iter().enumerate() {
        if !lexed.is_code(i) {
            continue;
        }
        match c {
            '(' | '[' => paren_depth += 1,
            ')' | ']' => paren_depth = (paren_depth - 1).max(0),
            '{' => {
                // The segment before a brace is a block header, not a statement.
                saved.push(paren_depth);
                paren_depth = 0;
                seg_start = i + 1;
            }
            '}' => {
                emit(seg_start, i.checked_sub(1), &mut scopes);
                paren_depth = saved.pop().unwrap_or(0);
                seg_start = i + 1;
            }
            ';' if paren_depth == 0 => {
                emit(seg_start, Some(i), &mut scopes);
                seg_start = i + 1;
            }
            '\n' if paren_depth == 0 && !continues(chars, lexed, i) => {
                let has_code = (seg_start..i).any(|j| lexed.is_code(j) && !is_ws(chars[j]));
                if has_code && next_line_starts_fresh(chars, lexed, i) {
                    emit(seg_start, i.checked_sub(1), &mut scopes);
                    seg_start = i + 1;
                }
            }
            _ => {}
        }
    }
    scopes
}

/// A line starting with `.`, an operator or `?`/`:` continues the previous one.
fn next_line_starts_fresh(chars: &[char], lexed: &Lexed, newline: usize) -> bool {
    for (j, &c) in chars.iter().enumerate().skip(newline + 1) {
        if c == '\n' {
            return true;
        }
        if is_ws(c) || lexed.classes[j] == CharClass::Comment {
            continue;
        }
        return !matches!(c, '.' | '+' | '-' | '*' | '/' | '?' | ':' | '&' | '|' | ')' | ']' | '=');
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_kinds() {
        assert_eq!(classify_header("if (x > 0) "), Some(ScopeKind::Statement));
        assert_eq!(classify_header("export default "), Some(ScopeKind::Statement));
        assert_eq!(classify_header("} else"), Some(ScopeKind::Clause));
        assert_eq!(classify_header("catch (e) "), Some(ScopeKind::Clause));
        assert_eq!(classify_header("function login(user) "), Some(ScopeKind::Method));
        assert_eq!(classify_header("async function f() "), Some(ScopeKind::Method));
        assert_eq!(classify_header("public void run() throws IOException "), Some(ScopeKind::Method));
        assert_eq!(classify_header("func (s *Server) Handle(w http.ResponseWriter) "), Some(ScopeKind::Method));
        assert_eq!(classify_header("(req, res) => "), Some(ScopeKind::Method));
        assert_eq!(classify_header("const handler = async (req) => "), Some(ScopeKind::Method));
        assert_eq!(classify_header("class UserStore extends Base "), Some(ScopeKind::Declaration));
        assert_eq!(classify_header("const client = new pg.Client("), Some(ScopeKind::Declaration));
        assert_eq!(classify_header("   "), None);
    }

    #[test]
    fn declaration_pattern() {
        for ok in ["const q = 1;", "let x", "token := os.Getenv(\"T\")", "String url = a + b;", "int n = 3;"] {
            assert!(DECLARATION_STATEMENT.is_match(ok), "{ok}");
        }
        for no in ["db.query(q);", "x == y", "return x;", "a.b = c"] {
            assert!(!DECLARATION_STATEMENT.is_match(no), "{no}");
        }
    }
}
