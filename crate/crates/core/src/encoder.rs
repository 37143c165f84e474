//! Tokenization and model input layout.
//!
//! Classifier input: `[BOS] context [SEP] block [EOS]`.
//! Decoder input: `[BOS] context block [CLS]`, trained to predict `[VULN]` or
//! `[NOTVULN]` as the next token.
//!
//! Ids `0..8` are reserved for special tokens, followed by explicitly listed
//! tokens, followed by `hash_buckets` ids for the hashing trick. With zero
//! buckets, unlisted units map to `[UNK]`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::VulnLabel;
use crate::hash::StableHasher;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const SEP: u32 = 3;
pub const EOS: u32 = 4;
pub const CLS: u32 = 5;
pub const VULN: u32 = 6;
pub const NOTVULN: u32 = 7;

pub const SPECIAL_TOKENS: [(&str, u32); 8] = [
    ("[PAD]", PAD),
    ("[UNK]", UNK),
    ("[BOS]", BOS),
    ("[SEP]", SEP),
    ("[EOS]", EOS),
    ("[CLS]", CLS),
    ("[VULN]", VULN),
    ("[NOTVULN]", NOTVULN),
];
const N_SPECIAL: u32 = SPECIAL_TOKENS.len() as u32;

pub const DEFAULT_MAX_SEQUENCE_LENGTH: usize = 512;
pub const DEFAULT_HASH_BUCKETS: u32 = 1 << 18;
const VOCAB_MAGIC: &str = "editvuln-vocab";
pub const VOCAB_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("cannot access vocabulary file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("vocabulary line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unsupported vocabulary version {found} (expected {VOCAB_FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("max_sequence_length must be at least 3")]
    TooShort,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyWire", into = "VocabularyWire")]
pub struct Vocabulary {
    token_ids: HashMap<String, u32>,
    tokens: Vec<String>,
    hash_buckets: u32,
    max_sequence_length: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyWire {
    version: u32,
    max_sequence_length: usize,
    hash_buckets: u32,
    tokens: Vec<String>,
}

impl From<Vocabulary> for VocabularyWire {
    fn from(v: Vocabulary) -> Self {
        VocabularyWire {
            version: VOCAB_FORMAT_VERSION,
            max_sequence_length: v.max_sequence_length,
            hash_buckets: v.hash_buckets,
            tokens: v.tokens,
        }
    }
}

impl TryFrom<VocabularyWire> for Vocabulary {
    type Error = VocabError;
    fn try_from(w: VocabularyWire) -> Result<Self, Self::Error> {
        if w.version != VOCAB_FORMAT_VERSION {
            return Err(VocabError::Version { found: w.version });
        }
        Vocabulary::new(w.tokens, w.hash_buckets, w.max_sequence_length)
    }
}

impl Vocabulary {
    pub fn new(
        tokens: impl IntoIterator<Item = impl Into<String>>,
        hash_buckets: u32,
        max_sequence_length: usize,
    ) -> Result<Self, VocabError> {
        if max_sequence_length < 3 {
            return Err(VocabError::TooShort);
        }
        let mut token_ids = HashMap::new();
        let mut list = Vec::new();
        for t in tokens {
            let t = t.into();
            if !token_ids.contains_key(&t) {
                token_ids.insert(t.clone(), N_SPECIAL + list.len() as u32);
                list.push(t);
            }
        }
        Ok(Vocabulary { token_ids, tokens: list, hash_buckets, max_sequence_length })
    }

    /// Pure hashing-trick vocabulary.
    pub fn hashed(hash_buckets: u32, max_sequence_length: usize) -> Result<Self, VocabError> {
        Self::new(std::iter::empty::<String>(), hash_buckets, max_sequence_length)
    }

    pub fn size(&self) -> usize {
        N_SPECIAL as usize + self.tokens.len() + self.hash_buckets as usize
    }

    pub fn max_sequence_length(&self) -> usize {
        self.max_sequence_length
    }

    pub fn hash_buckets(&self) -> u32 {
        self.hash_buckets
    }

    pub fn id(&self, unit: &str) -> u32 {
        if let Some(&id) = self.token_ids.get(unit) {
            return id;
        }
        if self.hash_buckets == 0 {
            return UNK;
        }
        let bucket = StableHasher::new().write_str(unit).finish() % u64::from(self.hash_buckets);
        N_SPECIAL + self.tokens.len() as u32 + bucket as u32
    }

    /// Token text for an id. Hashed ids have no inverse and render as
    /// `[HASH:<bucket>]`.
    pub fn token(&self, id: u32) -> String {
        if let Some((name, _)) = SPECIAL_TOKENS.iter().find(|(_, sid)| *sid == id) {
            return (*name).to_string();
        }
        let idx = (id - N_SPECIAL) as usize;
        match self.tokens.get(idx) {
            Some(t) => t.clone(),
            None => format!("[HASH:{}]", idx - self.tokens.len()),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{VOCAB_MAGIC} {VOCAB_FORMAT_VERSION}\nmax_sequence_length {}\nhash_buckets {}\n",
            self.max_sequence_length, self.hash_buckets
        );
        for (name, id) in SPECIAL_TOKENS {
            let _ = writeln!(out, "special {name} {id}");
        }
        let _ = writeln!(out, "tokens {}", self.tokens.len());
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{}", N_SPECIAL as usize + i);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        let fmt_err = |line: usize, message: &str| VocabError::Format { line, message: message.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut field = |key: &str| -> Result<(usize, String), VocabError> {
            let (n, l) = lines.next().ok_or_else(|| fmt_err(0, "unexpected end of file"))?;
            let rest = l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')).ok_or_else(|| fmt_err(n, key))?;
            Ok((n, rest.to_string()))
        };
        let (n, version) = field(VOCAB_MAGIC)?;
        let version: u32 = version.parse().map_err(|_| fmt_err(n, "bad version"))?;
        if version != VOCAB_FORMAT_VERSION {
            return Err(VocabError::Version { found: version });
        }
        let (n, max_len) = field("max_sequence_length")?;
        let max_len: usize = max_len.parse().map_err(|_| fmt_err(n, "bad max_sequence_length"))?;
        let (n, buckets) = field("hash_buckets")?;
        let buckets: u32 = buckets.parse().map_err(|_| fmt_err(n, "bad hash_buckets"))?;
        for (name, id) in SPECIAL_TOKENS {
            let (n, rest) = field("special")?;
            if rest != format!("{name} {id}") {
                return Err(fmt_err(n, &format!("expected special {name} {id}")));
            }
        }
        let (n, count) = field("tokens")?;
        let count: usize = count.parse().map_err(|_| fmt_err(n, "bad token count"))?;
        let mut tokens = Vec::with_capacity(count);
        for (n, l) in lines.by_ref().take(count) {
            let (tok, id) = l.split_once('\t').ok_or_else(|| fmt_err(n, "expected <token>\\t<id>"))?;
            let id: usize = id.parse().map_err(|_| fmt_err(n, "bad id"))?;
            if id != N_SPECIAL as usize + tokens.len() {
                return Err(fmt_err(n, "token ids must be consecutive"));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() != count {
            return Err(fmt_err(0, "fewer tokens than declared"));
        }
        Vocabulary::new(tokens, buckets, max_len)
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        std::fs::write(path, self.to_text())
            .map_err(|source| VocabError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| VocabError::Io { path: path.display().to_string(), source })?;
        Self::from_text(&text)
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::hashed(DEFAULT_HASH_BUCKETS, DEFAULT_MAX_SEQUENCE_LENGTH).expect("valid defaults")
    }
}

/// Splits text into identifier/number runs and single punctuation characters.
pub fn split_units(text: &str) -> Vec<&str> {
    let mut units = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        let is_word = c.is_alphanumeric() || c == '_' || c == '$';
        if is_word {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            units.push(&text[s..i]);
        }
        if !c.is_whitespace() {
            units.push(&text[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = word_start {
        units.push(&text[s..]);
    }
    units
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    split_units(text).into_iter().map(|u| vocab.id(u)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<u32>,
    pub n_context: usize,
    pub n_block: usize,
}

impl EncodedSequence {
    pub fn context_ids(&self) -> &[u32] {
        &self.ids[1..1 + self.n_context]
    }

    pub fn block_ids(&self) -> &[u32] {
        let start = 2 + self.n_context;
        &self.ids[start..start + self.n_block]
    }
}

/// Fits context and block into `budget` tokens: context is trimmed from the
/// left first, then the block from the right.
fn fit(mut context: Vec<u32>, mut block: Vec<u32>, budget: usize) -> (Vec<u32>, Vec<u32>) {
    if block.len() >= budget {
        block.truncate(budget);
        return (Vec::new(), block);
    }
    let keep = budget - block.len();
    if context.len() > keep {
        context.drain(..context.len() - keep);
    }
    (context, block)
}

pub fn encode_classifier(context: &str, block: &str, vocab: &Vocabulary) -> EncodedSequence {
    let (ctx, blk) = fit(tokenize(context, vocab), tokenize(block, vocab), vocab.max_sequence_length - 3);
    let mut ids = Vec::with_capacity(ctx.len() + blk.len() + 3);
    ids.push(BOS);
    ids.extend_from_slice(&ctx);
    ids.push(SEP);
    ids.extend_from_slice(&blk);
    ids.push(EOS);
    EncodedSequence { ids, n_context: ctx.len(), n_block: blk.len() }
}

/// Decoder prompt ids. One slot is left free for the target token.
pub fn encode_decoder(context: &str, block: &str, vocab: &Vocabulary) -> Vec<u32> {
    let (ctx, blk) = fit(tokenize(context, vocab), tokenize(block, vocab), vocab.max_sequence_length - 3);
    let mut ids = Vec::with_capacity(ctx.len() + blk.len() + 2);
    ids.push(BOS);
    ids.extend_from_slice(&ctx);
    ids.extend_from_slice(&blk);
    ids.push(CLS);
    ids
}

pub fn decoder_target(label: &VulnLabel) -> u32 {
    if label.is_vulnerable() {
        VULN
    } else {
        NOTVULN
    }
}
