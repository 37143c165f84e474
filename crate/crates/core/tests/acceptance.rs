//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashSet;
use std::path::PathBuf;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use editvuln_core::classifier::{finite_difference_check, make_epoch, train, EpochCursor, LinearHead, ModelParams, TrainConfig};
use editvuln_core::completion::{ReplayBackend, RetryPolicy};
use editvuln_core::corpus::{split_by_repo, SplitRatios, TrainingTriplet};
use editvuln_core::detection::{Detector, RecordedDetector};
use editvuln_core::encoder::Vocabulary;
use editvuln_core::language::LanguageId;
use editvuln_core::metrics::{f1, reduction_rate, sweep, default_thresholds, ConfusionCounts, ScenarioCounts};
use editvuln_core::prompting::{build_few_shot, build_zero_shot, ExampleBank, PromptStyle};
use editvuln_core::scenario::{builtin_oracles, load_scenarios, run_experiment, ExperimentConfig, ExperimentReport};
use editvuln_core::service::{DetectRequest, DetectionService, ServiceConfig};
use editvuln_core::splitter::{extract_scopes, synthesize, synthesize_file};
use editvuln_core::synthetic::{separable_corpus, snippet_of_lines, synthetic_sources};

const F1_TOLERANCE: f64 = 0.0006;
const REDUCTION_TOLERANCE_PP: f64 = 0.6;
const OVERSAMPLING_BUDGET_SECS: f64 = 5.0;
const MIN_SYNTHESIZED_TRIPLETS: usize = 10_000;
const GRADIENT_TOLERANCE: f64 = 1e-4;
const GRADIENT_EXAMPLES: usize = 100;
const LEARNING_MIN_F1: f64 = 0.99;
const LEARNING_BUDGET_SECS: f64 = 60.0;
const LEARNING_MIN_RECALL: f64 = 0.9;
const LATENCY_P95_MS: f64 = 50.0;
const LATENCY_REQUESTS: usize = 1000;

type Outcome = Result<String, String>;

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

/// (row, precision %, recall %, printed F1 %)
const PUBLISHED_ROWS: [(&str, f64, f64, f64); 30] = [
    ("PR dataset / fine-tuned transformer", 58.87, 63.00, 60.87),
    ("PR dataset / fine-tuned code LM", 69.56, 48.00, 56.80),
    ("PR dataset / CodexZero", 11.08, 98.00, 19.90),
    ("PR dataset / TextZero", 46.99, 78.00, 58.65),
    ("PR dataset / CodexFew", 23.91, 95.00, 37.70),
    ("PR dataset / TextFew", 49.01, 75.00, 59.29),
    ("CWE119 / VulDeePecker", 82.00, 91.70, 86.6),
    ("CWE119 / CodeBERT", 95.27, 95.15, 95.21),
    ("CWE119 / GPT-2 Base", 93.35, 93.56, 93.45),
    ("CWE119 / GPT2-Large", 95.74, 95.28, 95.51),
    ("CWE119 / Codex", 97.45, 93.31, 95.33),
    ("CWE119 / fine-tuned transformer", 96.74, 95.62, 96.18),
    ("CWE399 / VulDeePecker", 95.30, 94.60, 86.6),
    ("CWE399 / CodeBERT", 94.25, 95.29, 94.76),
    ("CWE399 / GPT-2 Base", 92.97, 94.99, 93.96),
    ("CWE399 / GPT2-Large", 96.79, 96.90, 96.84),
    ("CWE399 / Codex", 96.69, 97.04, 96.87),
    ("CWE399 / fine-tuned transformer", 95.65, 97.41, 96.53),
    ("SeVC / BERTBase", 88.73, 87.95, 88.34),
    ("SeVC / GPT-2 Base", 86.88, 87.47, 88.34),
    ("SeVC / Codex", 82.26, 84.34, 83.29),
    ("SeVC / fine-tuned transformer", 95.56, 97.14, 96.35),
    ("ReVeal / Chakraborty", 30.91, 60.91, 41.25),
    ("ReVeal / Codex", 45.04, 29.80, 35.87),
    ("ReVeal / CodeBERT", 48.95, 35.35, 41.06),
    ("ReVeal / fine-tuned transformer", 41.00, 61.00, 49.29),
    ("FFmpeg+Qemu / Chakraborty", 56.85, 74.61, 64.42),
    ("FFmpeg+Qemu / Codex", 63.22, 55.64, 59.19),
    ("FFmpeg+Qemu / CodeBERT", 62.94, 58.70, 60.74),
    ("FFmpeg+Qemu / fine-tuned transformer", 57.34, 78.06, 66.11),
];

fn metric_fidelity() -> Outcome {
    let mut misses = Vec::new();
    for (row, p, r, printed) in PUBLISHED_ROWS {
        let ours = f1(p / 100.0, r / 100.0);
        let gap = (ours - printed / 100.0).abs();
        if gap > F1_TOLERANCE {
            misses.push(format!("{row}: {:.3} vs printed {printed}", ours * 100.0));
        }
    }
    let summary = format!("{}/{} rows within {F1_TOLERANCE}", PUBLISHED_ROWS.len() - misses.len(), PUBLISHED_ROWS.len());
    if misses.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; {}", misses.join("; ")))
    }
}

fn reduction_fidelity() -> Outcome {
    // (before valid, before vulnerable, after valid, after vulnerable, printed %)
    let rows = [(7, 7, 7, 2, 71.00), (25, 25, 19, 5, 74.00), (26, 24, 20, 7, 61.96), (27, 21, 24, 2, 89.74)];
    let mut parts = Vec::new();
    let mut ok = true;
    for (bv, bx, av, ax, printed) in rows {
        let rate = reduction_rate(
            ScenarioCounts { valid_scenarios: bv, vulnerable_scenarios: bx },
            ScenarioCounts { valid_scenarios: av, vulnerable_scenarios: ax },
        )
        .map_err(|e| e.to_string())?
            * 100.0;
        ok &= (rate - printed).abs() <= REDUCTION_TOLERANCE_PP;
        parts.push(format!("{rate:.2} vs {printed:.2}"));
    }
    let msg = parts.join(", ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn prompt_goldens() -> Outcome {
    let bank = ExampleBank::load(&data("prompts/golden_bank.jsonl")).map_err(|e| e.to_string())?;
    let targets: std::collections::BTreeMap<String, String> =
        serde_json::from_str(&std::fs::read_to_string(data("prompts/golden/targets.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let mut compared = 0;
    for style in PromptStyle::ALL {
        for lang in [LanguageId::JavaScript, LanguageId::Python, LanguageId::Java] {
            let target = &targets[lang.as_str()];
            let zero = build_zero_shot(style, style.default_phrase(), lang, target);
            let few = build_few_shot(style, style.default_phrase(), lang, target, &bank, 2, 11).map_err(|e| e.to_string())?;
            for (kind, got) in [("zero", zero), ("few", few)] {
                let name = format!("prompts/golden/{}.{kind}.{lang}.txt", style.as_str());
                let want = std::fs::read_to_string(data(&name)).map_err(|e| format!("{name}: {e}"))?;
                if got != want {
                    return Err(format!("{name} differs"));
                }
                compared += 1;
            }
        }
    }
    let literals = [
        ("prompts/golden/mining.codex.python.txt", "# We run CodeQL security queries in order to"),
        ("prompts/golden/codex-zero.zero.python.txt", "Answer (Yes/No, explanation):"),
        ("prompts/golden/example-requests.python.txt", "Output the code only, do not include text:"),
    ];
    for (file, literal) in literals {
        let text = std::fs::read_to_string(data(file)).map_err(|e| e.to_string())?;
        if !text.contains(literal) {
            return Err(format!("{file} lacks `{literal}`"));
        }
    }
    Ok(format!("{compared} prompts byte-identical"))
}

fn oversampling_law() -> Outcome {
    let started = Instant::now();
    let mut runner = TestRunner::new(Config { cases: 256, failure_persistence: None, ..Config::default() });
    let result = runner.run(&(1usize..=50, 1usize..=500, 0usize..1000), |(nv, nn, start)| {
        let v: Vec<usize> = (0..nv).collect();
        let n: Vec<usize> = (nv..nv + nn).collect();
        let mut cursor = EpochCursor { position: start % nn, epoch: 0 };
        let mut seen = HashSet::new();
        for _ in 0..nn.div_ceil(nv) {
            let (epoch, next) = make_epoch(&v, &n, cursor).unwrap();
            let vulnerable = epoch.iter().filter(|x| ***x < nv).count();
            prop_assert_eq!(vulnerable, nv);
            prop_assert_eq!(epoch.len() - vulnerable, nv);
            seen.extend(epoch.iter().filter(|x| ***x >= nv).map(|x| **x));
            cursor = next;
        }
        prop_assert_eq!(seen.len(), nn);
        Ok(())
    });
    let secs = started.elapsed().as_secs_f64();
    match result {
        Err(e) => Err(e.to_string()),
        Ok(()) if secs >= OVERSAMPLING_BUDGET_SECS => Err(format!("took {secs:.2}s")),
        Ok(()) => Ok(format!("256 cases in {secs:.2}s")),
    }
}

fn split_before_vulnerability() -> Outcome {
    let files = synthetic_sources(1200, 42);
    let synthesis = synthesize(&files, 7);
    let total = synthesis.triplets.len();
    if total < MIN_SYNTHESIZED_TRIPLETS {
        return Err(format!("only {total} triplets"));
    }
    let mut vulnerable = 0;
    for file in &files {
        let chars: Vec<char> = file.text.chars().collect();
        let mut line_starts = vec![0];
        line_starts.extend(chars.iter().enumerate().filter(|(_, c)| **c == '\n').map(|(i, _)| i + 1));
        let spans: Vec<(usize, usize)> = file
            .findings
            .iter()
            .map(|f| {
                (
                    line_starts[f.start_line as usize - 1] + f.start_col as usize - 1,
                    line_starts[f.end_line as usize - 1] + f.end_col as usize - 1,
                )
            })
            .collect();
        let scopes = extract_scopes(&file.text, file.language).map_err(|e| e.to_string())?;
        for t in synthesize_file(file, 7).triplets {
            let whole = format!("{}{}", t.context, t.block);
            let ctx_len = t.context.chars().count();
            let candidates: Vec<_> = scopes.iter().filter(|s| s.text == whole).collect();
            if candidates.is_empty() {
                return Err(format!("{}: context+block is not a scope", file.path));
            }
            if !t.label.is_vulnerable() {
                continue;
            }
            vulnerable += 1;
            let contained = candidates.iter().any(|s| {
                let (lo, hi) = (s.start_offset, s.start_offset + s.text.chars().count());
                let inside: Vec<&(usize, usize)> = spans.iter().filter(|(a, b)| lo <= *a && *b <= hi).collect();
                !inside.is_empty() && inside.iter().all(|(a, _)| a - lo >= ctx_len)
            });
            if !contained {
                return Err(format!("{}: vulnerable span leaks into context", file.path));
            }
        }
    }
    let bytes = |ts: &[TrainingTriplet]| ts.iter().map(TrainingTriplet::to_json_line).collect::<Vec<_>>().join("\n");
    if bytes(&synthesis.triplets) != bytes(&synthesize(&files, 7).triplets) {
        return Err("same seed produced different corpus bytes".into());
    }
    Ok(format!("{total} triplets, {vulnerable} vulnerable, all spans in block; reruns identical"))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 1u32 << 12;
    let params = ModelParams::zeros(Vocabulary::hashed(1 << 12, 512).map_err(|e| e.to_string())?, dim, 0.5);
    let head = LinearHead { weights: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(), bias: rng.gen_range(-1.0..1.0) };
    let mut worst: f64 = 0.0;
    for t in separable_corpus(GRADIENT_EXAMPLES, 0.5, 9) {
        let x = params.features(&t.context, &t.block);
        let y = if t.label.is_vulnerable() { 1.0 } else { 0.0 };
        worst = worst.max(finite_difference_check(&head, &x, y, 1e-5));
    }
    if worst <= GRADIENT_TOLERANCE {
        Ok(format!("max relative error {worst:.2e} over {GRADIENT_EXAMPLES} examples"))
    } else {
        Err(format!("max relative error {worst:.2e}"))
    }
}

fn learning(model_out: &mut Option<ModelParams>) -> Outcome {
    let started = Instant::now();
    let split = split_by_repo(separable_corpus(20_000, 0.05, 2024), SplitRatios::default(), 2024);
    let config = TrainConfig::default();
    let outcome = train(&split.train, &config).map_err(|e| e.to_string())?;
    let params = outcome.params;
    let scored: Vec<(f64, bool)> =
        split.test.iter().map(|t| (params.score(&t.context, &t.block), t.label.is_vulnerable())).collect();
    let counts = ConfusionCounts::from_pairs(scored.iter().map(|&(s, y)| (s >= config.threshold, y)));
    let p = editvuln_core::metrics::precision(&counts).value;
    let r = editvuln_core::metrics::recall(&counts).value;
    let held_out_f1 = f1(p, r);
    let secs = started.elapsed().as_secs_f64();
    let points = sweep(&scored, &default_thresholds()).map_err(|e| e.to_string())?;
    let monotone = points
        .windows(2)
        .all(|w| w[1].recall <= w[0].recall && w[1].positive_rate <= w[0].positive_rate);
    let high_recall = points.iter().any(|p| p.recall >= LEARNING_MIN_RECALL);
    *model_out = Some(params);
    let msg = format!(
        "held-out F1 {held_out_f1:.4} on {} examples in {secs:.1}s; sweep monotone={monotone}, recall>={LEARNING_MIN_RECALL} point={high_recall}",
        split.test.len()
    );
    if held_out_f1 >= LEARNING_MIN_F1 && secs < LEARNING_BUDGET_SECS && monotone && high_recall {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn oracle_equivalence() -> Outcome {
    let registry = builtin_oracles();
    let scenarios = load_scenarios(&data("bench/scenarios.jsonl"), &registry).map_err(|e| e.to_string())?;
    let backend = ReplayBackend::load(&data("bench/replay.jsonl")).map_err(|e| e.to_string())?;
    let detector = RecordedDetector::load(&data("bench/detector_scores.jsonl"), 0.5).map_err(|e| e.to_string())?;
    let config = ExperimentConfig { retry: RetryPolicy::immediate(), ..Default::default() };
    let report = run_experiment(&scenarios, &registry, &backend, Some(&detector as &dyn Detector), &config)
        .map_err(|e| e.to_string())?;
    let golden: ExperimentReport =
        serde_json::from_str(&std::fs::read_to_string(data("bench/golden_report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    if report != golden {
        return Err("report differs from golden".into());
    }
    if let Some(row) = report.scenarios.iter().find(|r| r.surviving_vulnerable > r.vulnerable_completions) {
        return Err(format!("{}: filtering increased vulnerable completions", row.id));
    }
    let with = report.with_detector.unwrap_or_default();
    Ok(format!(
        "{} scenarios; valid/vulnerable {}/{} -> {}/{}; reduction {:.2}%",
        report.scenarios.len(),
        report.without_detector.valid_scenarios,
        report.without_detector.vulnerable_scenarios,
        with.valid_scenarios,
        with.vulnerable_scenarios,
        report.reduction_rate.unwrap_or(f64::NAN) * 100.0
    ))
}

fn latency(model: Option<ModelParams>) -> Outcome {
    let model = model.ok_or("no trained model available")?;
    let service = DetectionService::new(ServiceConfig::default(), Some(model));
    for i in 0..LATENCY_REQUESTS {
        let snippet = snippet_of_lines(1 + i % 200, i as u64);
        service.handle_detect(&DetectRequest::snippet(LanguageId::JavaScript, snippet)).map_err(|e| e.to_string())?;
    }
    let health = service.handle_health();
    let msg = format!("p50 {:.3} ms, p95 {:.3} ms over {} requests", health.p50_ms, health.p95_ms, health.request_count);
    if health.p95_ms < LATENCY_P95_MS {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() {
    let mut model = None;
    let results: Vec<(&str, Outcome)> = vec![
        ("metric-fidelity", metric_fidelity()),
        ("reduction-rate-fidelity", reduction_fidelity()),
        ("prompt-goldens", prompt_goldens()),
        ("oversampling-law", oversampling_law()),
        ("split-before-vulnerability", split_before_vulnerability()),
        ("gradient-check", gradient_check()),
        ("desk-scale-learning", learning(&mut model)),
        ("oracle-equivalence", oracle_equivalence()),
        ("latency", latency(model)),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(msg) => println!("PASS {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
