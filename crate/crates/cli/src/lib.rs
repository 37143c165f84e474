//! Command implementations behind the `editvuln` binary.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use chrono::{DateTime, SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use editvuln_core::classifier::{train, ClassifierError, ModelParams, TrainConfig};
use editvuln_core::completion::{CompletionBackend, HttpBackend, RecordingBackend, ReplayBackend};
use editvuln_core::corpus::{
    assemble_corpus, dedup_train_against_test, ingest_findings, read_sources, read_triplets, split_by_repo,
    write_sources, write_triplets, DatasetSplit, SplitRatios, TrainingTriplet,
};
use editvuln_core::detection::{Detector, RecordedDetector};
use editvuln_core::metrics::{default_thresholds, evaluate, sweep, threshold_for_positive_rate, Prediction};
use editvuln_core::scenario::{builtin_oracles, load_scenarios, run_experiment, ExperimentConfig};
use editvuln_core::service::{DetectionService, ServiceConfig};
use editvuln_core::splitter::synthesize;

pub const EXIT_OPERATIONAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "editvuln", version, about = "Vulnerability detection for incomplete code snippets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Overrides every seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with [train], [calibration] and [service] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Decision threshold override.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attach analyzer findings to source files.
    Ingest {
        #[arg(long)]
        findings: PathBuf,
        #[arg(long)]
        sources: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split scopes into (context, block, label) triplets.
    Synthesize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the linear classifier on the train partition of a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a dataset and write an evaluation report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recall, precision and positive rate across thresholds.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        /// Comma-separated thresholds; defaults to 0.00..=1.00 in steps of 0.01.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run scenarios through a completion backend with and without filtering.
    Bench(BenchArgs),
    /// Serve the detection API.
    Serve {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Manifest location; defaults to `serve.manifest.json`.
        #[arg(long, default_value = "serve")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Which repository partition of the dataset to use.
    #[arg(long, value_enum, default_value = "all")]
    pub partition: PartitionArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionArg {
    All,
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Replay log to answer completions from; without it the HTTP backend is
    /// configured from EDITVULN_COMPLETION_* variables.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Append every live response to this replay log.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long, conflicts_with = "detector_scores")]
    pub model: Option<PathBuf>,
    /// Recorded detector scores keyed by (prompt, completion).
    #[arg(long)]
    pub detector_scores: Option<PathBuf>,
    #[arg(long = "n-completions", default_value_t = 25)]
    pub n_completions: u32,
    /// Per-completion outcome log.
    #[arg(long)]
    pub outcome_log: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub calibration: Option<Calibration>,
    pub service: ServiceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    /// Pick the threshold that flags this fraction of validation examples.
    pub target_positive_rate: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Operational(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Operational(_) => EXIT_OPERATIONAL,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::Config { .. } => CliError::Usage(e.to_string()),
            other => CliError::Operational(other.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_at: String,
    pub finished_at: String,
    pub tool_version: String,
    pub status: String,
    pub error: Option<String>,
    /// Command-specific counters.
    pub summary: serde_json::Value,
}

/// `<out>.manifest.json` next to the primary output.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

struct Run {
    command: &'static str,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    summary: serde_json::Value,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Run {
            command,
            config: serde_json::Value::Null,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
        }
    }
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn load_config(cli: &Cli) -> Result<CliConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            toml::from_str::<CliConfig>(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?
        }
        None => CliConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(t) = cli.threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(usage(format!("--threshold {t} must lie in [0, 1]")));
        }
        cfg.train.threshold = t;
    }
    cfg.train.validate()?;
    if let Some(c) = &cfg.calibration {
        if !(c.target_positive_rate > 0.0 && c.target_positive_rate < 1.0) {
            return Err(usage("invalid value for `calibration.target_positive_rate`: must lie in (0, 1)"));
        }
    }
    Ok(cfg)
}

/// Runs one command and writes its manifest, including on failure.
pub fn run(cli: Cli) -> Result<RunManifest, CliError> {
    let started = Utc::now();
    let mut run = Run::new(command_name(&cli.command));
    let out = primary_output(&cli.command);
    let result = load_config(&cli).and_then(|cfg| dispatch(&cli, cfg, &mut run));
    let manifest = RunManifest {
        command: run.command.to_string(),
        config: run.config,
        seed: run.seed,
        inputs: run.inputs,
        outputs: run.outputs,
        started_at: timestamp(started),
        finished_at: timestamp(Utc::now()),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        status: if result.is_ok() { "ok" } else { "error" }.to_string(),
        error: result.as_ref().err().map(ToString::to_string),
        summary: run.summary,
    };
    let path = manifest_path(&out);
    let written = std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")
        .with_context(|| format!("cannot write manifest {}", path.display()));
    result?;
    written?;
    Ok(manifest)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest { .. } => "ingest",
        Command::Synthesize { .. } => "synthesize",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Sweep { .. } => "sweep",
        Command::Bench(_) => "bench",
        Command::Serve { .. } => "serve",
    }
}

fn primary_output(c: &Command) -> PathBuf {
    match c {
        Command::Ingest { out, .. }
        | Command::Synthesize { out, .. }
        | Command::Train { out, .. }
        | Command::Eval { out, .. }
        | Command::Sweep { out, .. }
        | Command::Serve { out, .. } => out.clone(),
        Command::Bench(b) => b.out.clone(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn ensure_exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{} does not exist", path.display())))
    }
}

fn partition(triplets: Vec<TrainingTriplet>, which: PartitionArg, seed: u64) -> Vec<TrainingTriplet> {
    if which == PartitionArg::All {
        return triplets;
    }
    let DatasetSplit { train, validation, test } = split_by_repo(triplets, SplitRatios::default(), seed);
    match which {
        PartitionArg::Train => train,
        PartitionArg::Validation => validation,
        _ => test,
    }
}

fn dispatch(cli: &Cli, cfg: CliConfig, run: &mut Run) -> Result<(), CliError> {
    let seed = cfg.train.seed;
    match &cli.command {
        Command::Ingest { findings, sources, out } => {
            ensure_exists(findings)?;
            ensure_exists(sources)?;
            run.inputs = vec![findings.clone(), sources.clone()];
            let report = ingest_findings(findings).map_err(anyhow::Error::from)?;
            for e in &report.errors {
                tracing::warn!(line = e.line, "skipping malformed finding: {}", e.message);
            }
            let records = report.records.len();
            let assembly = assemble_corpus(sources, report.records).map_err(anyhow::Error::from)?;
            write_sources(out, &assembly.files).map_err(anyhow::Error::from)?;
            run.outputs.push(out.clone());
            run.summary = serde_json::json!({
                "findings": records,
                "malformed_lines": report.errors.iter().map(|e| e.line).collect::<Vec<_>>(),
                "files": assembly.files.len(),
                "orphan_findings": assembly.orphan_findings.len(),
            });
        }
        Command::Synthesize { input, out } => {
            ensure_exists(input)?;
            run.inputs.push(input.clone());
            run.seed = Some(seed);
            let files = read_sources(input).map_err(anyhow::Error::from)?;
            let synthesis = synthesize(&files, seed);
            write_triplets(out, &synthesis.triplets).map_err(anyhow::Error::from)?;
            run.outputs.push(out.clone());
            run.summary = serde_json::to_value(&synthesis.stats).map_err(anyhow::Error::from)?;
        }
        Command::Train { dataset, out } => {
            ensure_exists(dataset)?;
            run.inputs.push(dataset.clone());
            run.seed = Some(seed);
            run.config = serde_json::json!({ "train": cfg.train, "calibration": cfg.calibration });
            let triplets = read_triplets(dataset).map_err(anyhow::Error::from)?;
            let split = dedup_train_against_test(split_by_repo(triplets, SplitRatios::default(), seed));
            let outcome = train(&split.train, &cfg.train)?;
            let mut params = outcome.params;
            if let Some(cal) = &cfg.calibration {
                let scores: Vec<f64> = split.validation.iter().map(|t| params.score(&t.context, &t.block)).collect();
                if scores.is_empty() {
                    return Err(anyhow!("validation partition is empty; cannot calibrate").into());
                }
                params.threshold = threshold_for_positive_rate(&scores, cal.target_positive_rate);
            }
            params.save(out)?;
            run.outputs.push(out.clone());
            run.summary = serde_json::json!({
                "train": split.train.len(),
                "validation": split.validation.len(),
                "test": split.test.len(),
                "loss_history": outcome.loss_history,
                "threshold": params.threshold,
                "model_version": params.fingerprint(),
            });
        }
        Command::Eval { model, data, out } => {
            let (params, triplets) = load_model_and_data(model, data, seed, run)?;
            let threshold = cli.threshold.unwrap_or(params.threshold);
            let predictions: Vec<Prediction> = triplets
                .iter()
                .map(|t| {
                    let d = params.detect(&t.context, &t.block, threshold);
                    Prediction { verdict: d.verdict, score: d.score, label: t.label.clone() }
                })
                .collect();
            let config = serde_json::json!({
                "model": params.fingerprint(),
                "dataset": data.dataset,
                "partition": data.partition,
                "threshold": threshold,
            });
            run.config = config.clone();
            let report = evaluate(&predictions, &default_thresholds(), config).map_err(anyhow::Error::from)?;
            write_json(out, &report)?;
            run.outputs.push(out.clone());
            run.summary = serde_json::json!({ "examples": report.examples, "f1": report.f1 });
        }
        Command::Sweep { model, data, thresholds, out } => {
            let (params, triplets) = load_model_and_data(model, data, seed, run)?;
            let scored: Vec<(f64, bool)> =
                triplets.iter().map(|t| (params.score(&t.context, &t.block), t.label.is_vulnerable())).collect();
            let thresholds = thresholds.clone().unwrap_or_else(default_thresholds);
            let points = sweep(&scored, &thresholds).map_err(|e| usage(e.to_string()))?;
            write_json(out, &points)?;
            run.outputs.push(out.clone());
            run.summary = serde_json::json!({ "examples": scored.len(), "points": points.len() });
        }
        Command::Bench(args) => bench(args, cli.threshold, run)?,
        Command::Serve { model, .. } => {
            let mut service_cfg = cfg.service.clone();
            service_cfg.apply_env(|k| std::env::var(k).ok()).map_err(|e| usage(e.to_string()))?;
            if let Some(m) = model {
                service_cfg.model_path = Some(m.clone());
            }
            if let Some(t) = cli.threshold {
                service_cfg.default_threshold = Some(t);
            }
            service_cfg.validate().map_err(|e| usage(e.to_string()))?;
            run.config = serde_json::to_value(&service_cfg).map_err(anyhow::Error::from)?;
            let params = match &service_cfg.model_path {
                Some(p) => {
                    run.inputs.push(p.clone());
                    Some(ModelParams::load(p)?)
                }
                None => None,
            };
            let service = Arc::new(DetectionService::new(service_cfg, params));
            let rt = tokio::runtime::Runtime::new().map_err(anyhow::Error::from)?;
            rt.block_on(editvuln_core::service::serve(service)).map_err(anyhow::Error::from)?;
        }
    }
    Ok(())
}

fn load_model_and_data(
    model: &Path,
    data: &DatasetArgs,
    seed: u64,
    run: &mut Run,
) -> Result<(ModelParams, Vec<TrainingTriplet>), CliError> {
    ensure_exists(model)?;
    ensure_exists(&data.dataset)?;
    run.inputs = vec![model.to_path_buf(), data.dataset.clone()];
    run.seed = (data.partition != PartitionArg::All).then_some(seed);
    let params = ModelParams::load(model)?;
    let triplets = partition(read_triplets(&data.dataset).map_err(anyhow::Error::from)?, data.partition, seed);
    if triplets.is_empty() {
        return Err(anyhow!("no examples in the selected partition").into());
    }
    Ok((params, triplets))
}

fn bench(args: &BenchArgs, threshold: Option<f64>, run: &mut Run) -> Result<(), CliError> {
    ensure_exists(&args.scenarios)?;
    if args.n_completions == 0 {
        return Err(usage("--n-completions must be positive"));
    }
    run.inputs.push(args.scenarios.clone());
    let registry = builtin_oracles();
    let scenarios = load_scenarios(&args.scenarios, &registry).map_err(anyhow::Error::from)?;

    let base: Arc<dyn CompletionBackend> = match &args.replay {
        Some(p) => {
            ensure_exists(p)?;
            run.inputs.push(p.clone());
            Arc::new(ReplayBackend::load(p).map_err(anyhow::Error::from)?)
        }
        None => Arc::new(HttpBackend::from_env().map_err(|e| usage(e.to_string()))?),
    };
    let backend: Arc<dyn CompletionBackend> = match &args.record {
        Some(p) => {
            run.outputs.push(p.clone());
            Arc::new(RecordingBackend::create(base, p).map_err(anyhow::Error::from)?)
        }
        None => base,
    };

    let detector: Option<Box<dyn Detector>> = match (&args.model, &args.detector_scores) {
        (Some(m), _) => {
            ensure_exists(m)?;
            run.inputs.push(m.clone());
            Some(Box::new(ModelParams::load(m)?))
        }
        (None, Some(d)) => {
            ensure_exists(d)?;
            run.inputs.push(d.clone());
            let t = threshold.unwrap_or(0.5);
            Some(Box::new(RecordedDetector::load(d, t).map_err(|e| anyhow!(e.to_string()))?))
        }
        (None, None) => None,
    };

    let config = ExperimentConfig {
        n: args.n_completions,
        threshold,
        outcome_log: args.outcome_log.clone(),
        ..Default::default()
    };
    run.config = serde_json::json!({
        "n": config.n,
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
        "threshold": threshold,
    });
    if let Some(p) = &args.outcome_log {
        run.outputs.push(p.clone());
    }
    let report = run_experiment(&scenarios, &registry, backend.as_ref(), detector.as_deref(), &config)
        .map_err(anyhow::Error::from)?;
    write_json(&args.out, &report)?;
    run.outputs.push(args.out.clone());
    run.summary = serde_json::json!({
        "without_detector": report.without_detector,
        "with_detector": report.with_detector,
        "reduction_rate": report.reduction_rate,
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(manifest_path(Path::new("out/model.json")), PathBuf::from("out/model.json.manifest.json"));
        assert_eq!(manifest_path(Path::new("serve")), PathBuf::from("serve.manifest.json"));
    }

    #[test]
    fn config_sections_parse() {
        let cfg: CliConfig = toml::from_str(
            "[train]\nepochs = 3\n\n[calibration]\ntarget_positive_rate = 0.01\n\n[service]\nblock_window_lines = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.calibration.unwrap().target_positive_rate, 0.01);
        assert_eq!(cfg.service.block_window_lines, 5);
        assert!(toml::from_str::<CliConfig>("[train]\nepochz = 3\n").is_err());
    }

    #[test]
    fn invalid_train_config_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "[train]\nlearning_rate = -1.0\n").unwrap();
        let cli = Cli::parse_from([
            "editvuln",
            "--config",
            cfg.to_str().unwrap(),
            "train",
            "--dataset",
            "x.jsonl",
            "--out",
            dir.path().join("m.json").to_str().unwrap(),
        ]);
        let err = run(cli).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert!(dir.path().join("m.json.manifest.json").exists());
    }
}
