//! Character classification for incomplete source text.
//!
//! Only enough lexing to tell structural code apart from string literals and
//! comments. Unterminated literals are tolerated: single-line strings stop at
//! the end of their line, block comments and multi-line strings run to EOF.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharClass {
    Code,
    Str,
    Comment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// C-like syntax: `//` and `/* */` comments, `"`, `'` and backtick strings.
    Brace,
    /// `#` comments, single and triple-quoted strings.
    Indent,
}

#[derive(Debug, Clone)]
pub struct Lexed {
    pub classes: Vec<CharClass>,
    /// A string literal or block comment was still open at end of input or
    /// at the end of its line.
    pub unterminated: bool,
}

impl Lexed {
    pub fn is_code(&self, i: usize) -> bool {
        self.classes[i] == CharClass::Code
    }
}

pub fn lex(chars: &[char], family: Family) -> Lexed {
    match family {
        Family::Brace => lex_brace(chars),
        Family::Indent => lex_indent(chars),
    }
}

fn lex_brace(chars: &[char]) -> Lexed {
    let n = chars.len();
    let mut classes = vec![CharClass::Code; n];
    let mut unterminated = false;
    let mut i = 0;
    while i < n {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        if c == '/' && next == Some('/') {
            while i < n && chars[i] != '\n' {
                classes[i] = CharClass::Comment;
                i += 1;
            }
        } else if c == '/' && next == Some('*') {
            classes[i] = CharClass::Comment;
            classes[i + 1] = CharClass::Comment;
            i += 2;
            let mut closed = false;
            while i < n {
                classes[i] = CharClass::Comment;
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    classes[i + 1] = CharClass::Comment;
                    i += 2;
                    closed = true;
                    break;
                }
                i += 1;
            }
            unterminated |= !closed;
        } else if c == '"' || c == '\'' || c == '`' {
            let multiline = c == '`';
            classes[i] = CharClass::Str;
            i += 1;
            let mut closed = false;
            while i < n {
                let d = chars[i];
                if d == '\n' && !multiline {
                    break;
                }
                classes[i] = CharClass::Str;
                if d == '\\' && i + 1 < n {
                    classes[i + 1] = CharClass::Str;
                    i += 2;
                    continue;
                }
                i += 1;
                if d == c {
                    closed = true;
                    break;
                }
            }
            unterminated |= !closed;
        } else {
            i += 1;
        }
    }
    Lexed { classes, unterminated }
}

fn lex_indent(chars: &[char]) -> Lexed {
    let n = chars.len();
    let mut classes = vec![CharClass::Code; n];
    let mut unterminated = false;
    let mut i = 0;
    while i < n {
        let c = chars[i];
        if c == '#' {
            while i < n && chars[i] != '\n' {
                classes[i] = CharClass::Comment;
                i += 1;
            }
        } else if c == '"' || c == '\'' {
            let triple = chars.get(i + 1) == Some(&c) && chars.get(i + 2) == Some(&c);
            let open_len = if triple { 3 } else { 1 };
            classes[i..i + open_len].fill(CharClass::Str);
            i += open_len;
            let mut closed = false;
            while i < n {
                let d = chars[i];
                if d == '\n' && !triple {
                    break;
                }
                classes[i] = CharClass::Str;
                if d == '\\' && i + 1 < n {
                    classes[i + 1] = CharClass::Str;
                    i += 2;
                    continue;
                }
                if d == c && (!triple || (chars.get(i + 1) == Some(&c) && chars.get(i + 2) == Some(&c))) {
                    if triple {
                        classes[i + 1] = CharClass::Str;
                        classes[i + 2] = CharClass::Str;
                        i += 3;
                    } else {
                        i += 1;
                    }
                    closed = true;
                    break;
                }
                i += 1;
            }
            unterminated |= !closed;
        } else {
            i += 1;
        }
    }
    Lexed { classes, unterminated }
}

/// True when every bracket closes in order and no literal or comment is left
/// open. Used as the cheap "could an analyzer parse this" check.
pub fn balanced_delimiters(text: &str, family: Family) -> bool {
    let chars: Vec<char> = text.chars().collect();
    let lexed = lex(&chars, family);
    if lexed.unterminated {
        return false;
    }
    let mut stack = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        if !lexed.is_code(i) {
            continue;
        }
        match c {
            '(' | '[' | '{' => stack.push(c),
            ')' | ']' | '}' => {
                let want = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                if stack.pop() != Some(want) {
                    return false;
                }
            }
            _ => {}
        }
    }
    stack.is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(s: &str, family: Family) -> String {
        let chars: Vec<char> = s.chars().collect();
        lex(&chars, family)
            .classes
            .iter()
            .map(|c| match c {
                CharClass::Code => 'c',
                CharClass::Str => 's',
                CharClass::Comment => '#',
            })
            .collect()
    }

    #[test]
    fn brace_strings_and_comments() {
        assert_eq!(classes(r#"a"{"b//x"#, Family::Brace), "csssc###");
        assert_eq!(classes("a/*}*/b", Family::Brace), "c#####c");
        assert_eq!(classes(r#"'\''x"#, Family::Brace), "ssssc");
    }

    #[test]
    fn python_triple_quotes_span_lines() {
        assert_eq!(classes("x='''a\n'''#c", Family::Indent), "ccssssssss##");
    }

    #[test]
    fn unterminated_string_stops_at_newline() {
        let chars: Vec<char> = "a = \"oops\nb".chars().collect();
        let lexed = lex(&chars, Family::Brace);
        assert!(lexed.unterminated);
        assert!(lexed.is_code(chars.len() - 1));
    }

    #[test]
    fn balance_check() {
        assert!(balanced_delimiters("f(a, [1, 2], { b: '}' })", Family::Brace));
        assert!(!balanced_delimiters("f(a, { b: 1 )", Family::Brace));
        assert!(!balanced_delimiters("f({ b: 1 }", Family::Brace));
        assert!(!balanced_delimiters("x = 'abc", Family::Brace));
        assert!(balanced_delimiters("def f(x):\n    return [x]  # ]", Family::Indent));
    }
}
