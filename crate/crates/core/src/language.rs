use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Source languages covered by the training corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageId {
    JavaScript,
    Python,
    Go,
    Java,
    Cpp,
    CSharp,
    Ruby,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown language `{0}`")]
pub struct UnknownLanguage(pub String);

impl LanguageId {
    pub const ALL: [LanguageId; 7] = [
        LanguageId::JavaScript,
        LanguageId::Python,
        LanguageId::Go,
        LanguageId::Java,
        LanguageId::Cpp,
        LanguageId::CSharp,
        LanguageId::Ruby,
    ];

    /// Lowercase identifier used in files and on the wire.
    pub fn as_str(self) -> &'static str {
        match self {
            LanguageId::JavaScript => "javascript",
            LanguageId::Python => "python",
            LanguageId::Go => "go",
            LanguageId::Java => "java",
            LanguageId::Cpp => "cpp",
            LanguageId::CSharp => "csharp",
            LanguageId::Ruby => "ruby",
        }
    }

    /// Human-facing name, as used inside natural-language prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            LanguageId::JavaScript => "JavaScript",
            LanguageId::Python => "Python",
            LanguageId::Go => "Go",
            LanguageId::Java => "Java",
            LanguageId::Cpp => "C++",
            LanguageId::CSharp => "C#",
            LanguageId::Ruby => "Ruby",
        }
    }

    /// Line comment marker.
    pub fn comment_marker(self) -> &'static str {
        match self {
            LanguageId::Python | LanguageId::Ruby => "#",
            _ => "//",
        }
    }

    pub fn from_extension(ext: &str) -> Option<Self> {
        Some(match ext {
            "js" | "mjs" | "cjs" | "jsx" | "ts" | "tsx" => LanguageId::JavaScript,
            "py" => LanguageId::Python,
            "go" => LanguageId::Go,
            "java" => LanguageId::Java,
            "cc" | "cpp" | "cxx" | "hpp" | "h" | "c" => LanguageId::Cpp,
            "cs" => LanguageId::CSharp,
            "rb" => LanguageId::Ruby,
            _ => return None,
        })
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LanguageId {
    type Err = UnknownLanguage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Ok(match lower.as_str() {
            "javascript" | "js" => LanguageId::JavaScript,
            "python" | "py" => LanguageId::Python,
            "go" | "golang" => LanguageId::Go,
            "java" => LanguageId::Java,
            "cpp" | "c++" => LanguageId::Cpp,
            "csharp" | "c#" | "cs" => LanguageId::CSharp,
            "ruby" | "rb" => LanguageId::Ruby,
            _ => return Err(UnknownLanguage(s.to_string())),
        })
    }
}
