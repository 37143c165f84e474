use std::collections::BTreeMap;
use std::path::PathBuf;

use editvuln_core::corpus::Cwe;
use editvuln_core::language::LanguageId;
use editvuln_core::prompting::{
    build_few_shot, build_zero_shot, generate_example_requests, phrase_mining_prompt, ExampleBank, PromptStyle,
};

const LANGUAGES: [LanguageId; 3] = [LanguageId::JavaScript, LanguageId::Python, LanguageId::Java];

fn prompts(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/prompts").join(name)
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(prompts("golden").join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn targets() -> BTreeMap<String, String> {
    serde_json::from_str(&golden("targets.json")).unwrap()
}

#[test]
fn zero_and_few_shot_match_goldens() {
    let bank = ExampleBank::load(&prompts("golden_bank.jsonl")).unwrap();
    let targets = targets();
    for style in PromptStyle::ALL {
        for lang in LANGUAGES {
            let target = &targets[lang.as_str()];
            let zero = build_zero_shot(style, style.default_phrase(), lang, target);
            assert_eq!(zero, golden(&format!("{}.zero.{lang}.txt", style.as_str())), "{style:?} {lang}");
            for seed in [0, 1, 99] {
                let few = build_few_shot(style, style.default_phrase(), lang, target, &bank, 2, seed).unwrap();
                assert_eq!(few, golden(&format!("{}.few.{lang}.txt", style.as_str())), "{style:?} {lang}");
            }
        }
    }
}

#[test]
fn goldens_embed_literal_strings() {
    assert!(golden("codex-zero.zero.python.txt").ends_with("# Answer (Yes/No, explanation):"));
    assert!(golden("text-zero.zero.java.txt").ends_with("\nAnswer (Yes/No):"));
    assert_eq!(golden("mining.codex.python.txt"), "# We run CodeQL security queries in order to ");
    assert!(golden("example-requests.java.txt").contains("Output the code only, do not include text:"));
}

#[test]
fn helper_prompts_match_goldens() {
    let cwes: Vec<Cwe> = ["CWE-89", "CWE-22", "CWE-798"].iter().map(|c| Cwe::new(*c).unwrap()).collect();
    for lang in LANGUAGES {
        assert_eq!(phrase_mining_prompt(PromptStyle::CodexZero, lang), golden(&format!("mining.codex.{lang}.txt")));
        let joined = generate_example_requests(lang, &cwes).join("\n") + "\n";
        assert_eq!(joined, golden(&format!("example-requests.{lang}.txt")));
    }
    assert_eq!(phrase_mining_prompt(PromptStyle::TextFew, LanguageId::Go), golden("mining.text.txt"));
}

#[test]
fn shipped_bank_supports_default_k() {
    let bank = ExampleBank::load(&prompts("bank.jsonl")).unwrap();
    for lang in LANGUAGES {
        assert!(bank.for_language(lang).count() >= 8);
        for style in [PromptStyle::CodexFew, PromptStyle::TextFew] {
            let picked = bank.select(lang, style.default_k(), 3).unwrap();
            let vulnerable = picked.iter().filter(|e| e.cwe.is_some()).count();
            assert_eq!(vulnerable * 2, picked.len());
        }
    }
}
