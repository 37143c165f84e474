//! Linear detector over hashed token features.
//!
//! Features come from the classifier encoding: context unigrams, block
//! unigrams and block bigrams, each hashed into `feature_dim` slots and
//! L2-normalised. Training is mini-batch SGD on BCE with the 50/50
//! oversampling schedule from [`make_epoch`].

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Cwe, TrainingTriplet};
use crate::detection::{check_threshold, DetectError, Detection, Detector, Verdict};
use crate::encoder::{encode_classifier, EncodedSequence, Vocabulary};
use crate::hash::StableHasher;

pub const MODEL_FORMAT: &str = "editvuln-linear";
pub const MODEL_VERSION: u32 = 1;

/// Sorted, de-duplicated `(slot, value)` pairs.
pub type Features = Vec<(u32, f64)>;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("vulnerable pool is empty; oversampling is undefined")]
    EmptyVulnerablePool,
    #[error("non-vulnerable pool is empty")]
    EmptyCleanPool,
    #[error("invalid train config field `{field}`: {message}")]
    Config { field: &'static str, message: String },
    #[error("cannot access model file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("model format {found} v{version} is not supported (expected {MODEL_FORMAT} v{MODEL_VERSION})")]
    Version { found: String, version: u32 },
    #[error("model contains non-finite parameters")]
    NonFinite,
}

// ---------------------------------------------------------------------------
// Oversampling

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EpochCursor {
    pub position: usize,
    pub epoch: u64,
}

/// All vulnerable examples plus the next `|V|` non-vulnerable ones, taken
/// cyclically from the cursor.
pub fn make_epoch<'a, T>(
    vulnerable: &'a [T],
    clean: &'a [T],
    cursor: EpochCursor,
) -> Result<(Vec<&'a T>, EpochCursor), ClassifierError> {
    if vulnerable.is_empty() {
        return Err(ClassifierError::EmptyVulnerablePool);
    }
    if clean.is_empty() {
        return Err(ClassifierError::EmptyCleanPool);
    }
    let n = clean.len();
    let start = cursor.position % n;
    let mut epoch: Vec<&T> = vulnerable.iter().collect();
    epoch.extend((0..vulnerable.len()).map(|k| &clean[(start + k) % n]));
    let next = EpochCursor { position: (start + vulnerable.len()) % n, epoch: cursor.epoch + 1 };
    Ok((epoch, next))
}

// ---------------------------------------------------------------------------
// Features

const TAG_CONTEXT: u64 = 1;
const TAG_BLOCK: u64 = 2;
const TAG_BLOCK_BIGRAM: u64 = 3;

fn slot(dim: u32, tag: u64, a: u32, b: u32) -> u32 {
    let h = StableHasher::new().write_u64(tag).write_u64(u64::from(a)).write_u64(u64::from(b)).finish();
    (h % u64::from(dim)) as u32
}

pub fn featurize(enc: &EncodedSequence, dim: u32) -> Features {
    let mut slots = BTreeSet::new();
    for &id in enc.context_ids() {
        slots.insert(slot(dim, TAG_CONTEXT, id, 0));
    }
    let block = enc.block_ids();
    for &id in block {
        slots.insert(slot(dim, TAG_BLOCK, id, 0));
    }
    for w in block.windows(2) {
        slots.insert(slot(dim, TAG_BLOCK_BIGRAM, w[0], w[1]));
    }
    if slots.is_empty() {
        return Vec::new();
    }
    let v = 1.0 / (slots.len() as f64).sqrt();
    slots.into_iter().map(|s| (s, v)).collect()
}

// ---------------------------------------------------------------------------
// Parameters

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearHead {
    pub fn zeros(dim: u32) -> Self {
        LinearHead { weights: vec![0.0; dim as usize], bias: 0.0 }
    }

    pub fn response(&self, x: &[(u32, f64)]) -> f64 {
        self.bias + x.iter().map(|&(i, v)| self.weights[i as usize] * v).sum::<f64>()
    }

    pub fn probability(&self, x: &[(u32, f64)]) -> f64 {
        sigmoid(self.response(x))
    }

    /// BCE loss of this head on one example.
    pub fn loss(&self, x: &[(u32, f64)], y: f64) -> f64 {
        bce_from_logit(self.response(x), y)
    }

    /// Analytic BCE gradient: `(p - y) * x` for weights, `p - y` for bias.
    pub fn gradient(&self, x: &[(u32, f64)], y: f64) -> (Features, f64) {
        let g = self.probability(x) - y;
        (x.iter().map(|&(i, v)| (i, g * v)).collect(), g)
    }

    fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-y ln σ(z) - (1-y) ln(1-σ(z))`, computed without overflow.
pub fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub vocabulary: Vocabulary,
    pub feature_dim: u32,
    pub head: LinearHead,
    /// Optional one-vs-clean heads used to attribute a CWE to a positive.
    pub cwe_heads: Vec<(Cwe, LinearHead)>,
    pub threshold: f64,
}

impl ModelParams {
    pub fn zeros(vocabulary: Vocabulary, feature_dim: u32, threshold: f64) -> Self {
        ModelParams { vocabulary, feature_dim, head: LinearHead::zeros(feature_dim), cwe_heads: Vec::new(), threshold }
    }

    pub fn features(&self, context: &str, block: &str) -> Features {
        featurize(&encode_classifier(context, block, &self.vocabulary), self.feature_dim)
    }

    pub fn score(&self, context: &str, block: &str) -> f64 {
        self.head.probability(&self.features(context, block))
    }

    pub fn detect(&self, context: &str, block: &str, threshold: f64) -> Detection {
        let started = Instant::now();
        let x = self.features(context, block);
        let score = self.head.probability(&x);
        let verdict = if score >= threshold { Verdict::Vulnerable } else { Verdict::NotVulnerable };
        let cwe = if verdict.is_vulnerable() {
            self.cwe_heads
                .iter()
                .map(|(cwe, h)| (cwe, h.response(&x)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(cwe, _)| cwe.clone())
        } else {
            None
        };
        Detection { verdict, score, cwe, explanation: None, elapsed: started.elapsed() }
    }

    pub fn is_finite(&self) -> bool {
        self.head.is_finite() && self.cwe_heads.iter().all(|(_, h)| h.is_finite())
    }

    /// Short content hash identifying these weights.
    pub fn fingerprint(&self) -> String {
        let mut h = StableHasher::new();
        h.write_u64(u64::from(self.feature_dim)).write_u64(self.head.bias.to_bits());
        for (i, w) in self.head.weights.iter().enumerate() {
            if *w != 0.0 {
                h.write_u64(i as u64).write_u64(w.to_bits());
            }
        }
        for (cwe, head) in &self.cwe_heads {
            h.write_str(cwe.as_str()).write_u64(head.bias.to_bits());
            for w in &head.weights {
                h.write_u64(w.to_bits());
            }
        }
        format!("linear-v{MODEL_VERSION}-{:016x}", h.finish())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ClassifierError::Format(e.to_string()))?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        std::fs::write(path, self.to_json())
            .map_err(|source| ClassifierError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ClassifierError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

impl Detector for ModelParams {
    fn id(&self) -> String {
        self.fingerprint()
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn detect_with_threshold(&self, context: &str, block: &str, threshold: f64) -> Result<Detection, DetectError> {
        Ok(ModelParams::detect(self, context, block, check_threshold(threshold)?))
    }
}

#[derive(Serialize, Deserialize)]
struct HeadFile {
    bias: f64,
    /// Non-zero weights only.
    weights: Vec<(u32, f64)>,
}

#[derive(Serialize, Deserialize)]
struct CweHeadFile {
    cwe: Cwe,
    #[serde(flatten)]
    head: HeadFile,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    feature_dim: u32,
    threshold: f64,
    vocabulary: Vocabulary,
    head: HeadFile,
    #[serde(default)]
    cwe_heads: Vec<CweHeadFile>,
}

impl From<&LinearHead> for HeadFile {
    fn from(h: &LinearHead) -> Self {
        HeadFile {
            bias: h.bias,
            weights: h.weights.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(i, w)| (i as u32, *w)).collect(),
        }
    }
}

impl HeadFile {
    fn into_head(self, dim: u32) -> Result<LinearHead, ClassifierError> {
        let mut head = LinearHead::zeros(dim);
        head.bias = self.bias;
        for (i, w) in self.weights {
            *head
                .weights
                .get_mut(i as usize)
                .ok_or_else(|| ClassifierError::Format(format!("weight index {i} exceeds feature_dim {dim}")))? = w;
        }
        Ok(head)
    }
}

impl From<&ModelParams> for ModelFile {
    fn from(p: &ModelParams) -> Self {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            feature_dim: p.feature_dim,
            threshold: p.threshold,
            vocabulary: p.vocabulary.clone(),
            head: HeadFile::from(&p.head),
            cwe_heads: p.cwe_heads.iter().map(|(cwe, h)| CweHeadFile { cwe: cwe.clone(), head: h.into() }).collect(),
        }
    }
}

impl TryFrom<ModelFile> for ModelParams {
    type Error = ClassifierError;
    fn try_from(f: ModelFile) -> Result<Self, Self::Error> {
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(ClassifierError::Version { found: f.format, version: f.version });
        }
        if f.feature_dim == 0 {
            return Err(ClassifierError::Format("feature_dim must be positive".into()));
        }
        let dim = f.feature_dim;
        let params = ModelParams {
            vocabulary: f.vocabulary,
            feature_dim: dim,
            head: f.head.into_head(dim)?,
            cwe_heads: f
                .cwe_heads
                .into_iter()
                .map(|c| Ok((c.cwe, c.head.into_head(dim)?)))
                .collect::<Result<_, ClassifierError>>()?,
            threshold: f.threshold,
        };
        if !params.is_finite() || !params.threshold.is_finite() {
            return Err(ClassifierError::NonFinite);
        }
        Ok(params)
    }
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub threshold: f64,
    pub batch_size: usize,
    pub feature_dim: u32,
    pub hash_buckets: u32,
    pub max_sequence_length: usize,
    pub per_cwe_heads: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.5,
            seed: 0,
            threshold: 0.5,
            batch_size: 32,
            feature_dim: 1 << 18,
            hash_buckets: crate::encoder::DEFAULT_HASH_BUCKETS,
            max_sequence_length: crate::encoder::DEFAULT_MAX_SEQUENCE_LENGTH,
            per_cwe_heads: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |field, message: &str| Err(ClassifierError::Config { field, message: message.to_string() });
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be a positive finite number");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold", "must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim", "must be positive");
        }
        if self.max_sequence_length < 3 {
            return bad("max_sequence_length", "must be at least 3");
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<Vocabulary, ClassifierError> {
        Vocabulary::hashed(self.hash_buckets, self.max_sequence_length)
            .map_err(|e| ClassifierError::Config { field: "max_sequence_length", message: e.to_string() })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Class-balanced BCE over the full training set after each epoch.
    pub loss_history: Vec<f64>,
}

pub fn train(triplets: &[TrainingTriplet], config: &TrainConfig) -> Result<TrainOutcome, ClassifierError> {
    config.validate()?;
    let vocabulary = config.vocabulary()?;
    let mut params = ModelParams::zeros(vocabulary, config.feature_dim, config.threshold);
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut positive_cwes = Vec::new();
    for t in triplets {
        let x = params.features(&t.context, &t.block);
        match t.label.cwe() {
            Some(cwe) => {
                positives.push(x);
                positive_cwes.push(cwe.clone());
            }
            None => negatives.push(x),
        }
    }
    let pos: Vec<&Features> = positives.iter().collect();
    let neg: Vec<&Features> = negatives.iter().collect();
    let loss_history = fit_head(&mut params.head, &pos, &neg, config, config.seed)?;

    if config.per_cwe_heads {
        let cwes: BTreeSet<&Cwe> = positive_cwes.iter().collect();
        for cwe in cwes {
            let pos: Vec<&Features> =
                positives.iter().zip(&positive_cwes).filter(|(_, c)| *c == cwe).map(|(x, _)| x).collect();
            let seed = StableHasher::new().write_u64(config.seed).write_str(cwe.as_str()).finish();
            let mut head = LinearHead::zeros(config.feature_dim);
            fit_head(&mut head, &pos, &neg, config, seed)?;
            params.cwe_heads.push((cwe.clone(), head));
        }
    }
    if !params.is_finite() {
        return Err(ClassifierError::NonFinite);
    }
    Ok(TrainOutcome { params, loss_history })
}

fn balanced_loss(head: &LinearHead, pos: &[&Features], neg: &[&Features]) -> f64 {
    let mean = |xs: &[&Features], y: f64| xs.iter().map(|x| head.loss(x, y)).sum::<f64>() / xs.len() as f64;
    0.5 * (mean(pos, 1.0) + mean(neg, 0.0))
}

fn fit_head(
    head: &mut LinearHead,
    pos: &[&Features],
    neg: &[&Features],
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>, ClassifierError> {
    let labelled_pos: Vec<(&Features, f64)> = pos.iter().map(|x| (*x, 1.0)).collect();
    let labelled_neg: Vec<(&Features, f64)> = neg.iter().map(|x| (*x, 0.0)).collect();
    // Surface pool errors even when no epochs are requested.
    make_epoch(&labelled_pos, &labelled_neg, EpochCursor::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cursor = EpochCursor::default();
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (mut epoch, next) = make_epoch(&labelled_pos, &labelled_neg, cursor)?;
        cursor = next;
        epoch.shuffle(&mut rng);
        for batch in epoch.chunks(config.batch_size) {
            let step = config.learning_rate / batch.len() as f64;
            let grads: Vec<(Features, f64)> = batch.iter().map(|(x, y)| head.gradient(x, *y)).collect();
            for (gw, gb) in grads {
                for (i, g) in gw {
                    head.weights[i as usize] -= step * g;
                }
                head.bias -= step * gb;
            }
        }
        history.push(balanced_loss(head, pos, neg));
    }
    Ok(history)
}

// ---------------------------------------------------------------------------
// Gradient check

/// Largest relative gap between the analytic BCE gradient and a central
/// finite difference, over the bias, every active weight and a handful of
/// inactive ones. Relative error uses `max(|a|, |n|, 1e-6)` as denominator.
pub fn finite_difference_check(head: &LinearHead, x: &[(u32, f64)], y: f64, step: f64) -> f64 {
    let (analytic, analytic_bias) = head.gradient(x, y);
    let mut probe = head.clone();
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);

    let numeric = |probe: &mut LinearHead, set: &dyn Fn(&mut LinearHead, f64)| {
        set(probe, step);
        let up = probe.loss(x, y);
        set(probe, -2.0 * step);
        let down = probe.loss(x, y);
        set(probe, step);
        (up - down) / (2.0 * step)
    };

    let mut worst = rel(analytic_bias, numeric(&mut probe, &|h, d| h.bias += d));
    for &(i, a) in &analytic {
        let n = numeric(&mut probe, &|h, d| h.weights[i as usize] += d);
        worst = worst.max(rel(a, n));
    }
    let dim = head.weights.len();
    for k in 0..8usize.min(dim) {
        let i = (k * 7919 + 13) % dim;
        if analytic.iter().any(|&(j, _)| j as usize == i) {
            continue;
        }
        let n = numeric(&mut probe, &|h, d| h.weights[i] += d);
        worst = worst.max(rel(0.0, n));
    }
    worst
}
