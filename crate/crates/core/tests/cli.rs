use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mathml_enrich::corpus::SyntheticSpec;
use mathml_enrich::decoder::translations_from_jsonl;
use mathml_enrich::rules::RuleSet;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mathml-enrich"))
        .args(args)
        .env_remove("MATHML_ENRICH_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Dir(tempfile::TempDir);

impl Dir {
    fn new() -> Self {
        Dir(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }
}

fn record(id: &str, presentation: &str, content: &str) -> String {
    serde_json::json!({ "id": id, "presentation": presentation, "content": content }).to_string()
        + "\n"
}

fn train(dir: &Dir, corpus: &Path) -> String {
    ok(&[
        "train",
        "--corpus",
        s(corpus),
        "--rules",
        s(&dir.path("rules.jsonl")),
        "--model",
        s(&dir.path("model.json")),
    ])
}

fn translate(dir: &Dir, corpus: &Path, out: &str, extra: &[&str]) -> String {
    let (rules, model, out) = (
        dir.path("rules.jsonl"),
        dir.path("model.json"),
        dir.path(out),
    );
    let mut args = vec![
        "translate",
        "--corpus",
        s(corpus),
        "--rules",
        s(&rules),
        "--model",
        s(&model),
    ];
    args.extend(["--out", s(&out)]);
    args.extend(extra);
    ok(&args);
    fs::read_to_string(out).unwrap()
}

#[test]
fn singleton_corpus_trains_one_rule_and_translates_exactly() {
    let dir = Dir::new();
    let corpus = dir.write("c.jsonl", &record("w", "<mi>w</mi>", "<ci>w</ci>"));
    let summary = train(&dir, &corpus);
    assert!(summary.contains("translation rules: 1\n"), "{summary}");
    assert!(summary.contains("ambiguous identifiers: 0\n"), "{summary}");
    let rules = RuleSet::from_jsonl(&fs::read_to_string(dir.path("rules.jsonl")).unwrap()).unwrap();
    assert_eq!(rules.translation_rules().len(), 1);

    let out = translations_from_jsonl(&translate(&dir, &corpus, "out.jsonl", &[])).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].content.as_ref().unwrap().serialize(), "<ci>w</ci>");
    assert_eq!(out[0].score, 1.0);
}

#[test]
fn sigma_corpus_has_one_ambiguous_name() {
    let dir = Dir::new();
    let mut lines = String::new();
    for (i, reading) in [
        "Weierstrass Sigma",
        "σ",
        "Divisor Sigma",
        "σ",
        "Weierstrass Sigma",
        "σ",
    ]
    .iter()
    .enumerate()
    {
        lines += &record(
            &format!("s{i}"),
            "<mrow><mi>σ</mi><mo>&#x2061;</mo><mrow><mo>(</mo><mi>z</mi><mo>)</mo></mrow></mrow>",
            &format!("<apply><ci>{reading}</ci><ci>z</ci></apply>"),
        );
    }
    let corpus = dir.write("c.jsonl", &lines);
    let summary = train(&dir, &corpus);
    assert!(summary.contains("ambiguous identifiers: 1\n"), "{summary}");
    let rules = RuleSet::from_jsonl(&fs::read_to_string(dir.path("rules.jsonl")).unwrap()).unwrap();
    let sigma = rules
        .translation_rules()
        .iter()
        .filter(|r| r.lhs.to_string() == "mi[σ]")
        .count();
    assert!(sigma >= 2, "{sigma}");
}

#[test]
fn missing_corpus_exits_nonzero() {
    let dir = Dir::new();
    let out = bin(&[
        "train",
        "--corpus",
        s(&dir.path("absent.jsonl")),
        "--rules",
        s(&dir.path("r")),
        "--model",
        s(&dir.path("m")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("corpus not found"), "{err}");
    assert!(!dir.path("r").exists());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(bin(&["train", "--folds", "many"]).status.code(), Some(2));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn no_disambig_matches_default_without_ambiguity() {
    let dir = Dir::new();
    let mut lines = String::new();
    lines += &record(
        "a",
        "<mrow><mi>x</mi><mo>+</mo><mn>1</mn></mrow>",
        "<apply><plus/><ci>x</ci><cn>1</cn></apply>",
    );
    lines += &record(
        "b",
        "<msub><mi>a</mi><mi>i</mi></msub>",
        "<apply><selector/><ci>a</ci><ci>i</ci></apply>",
    );
    let corpus = dir.write("c.jsonl", &lines);
    train(&dir, &corpus);
    let guided = translate(&dir, &corpus, "a.jsonl", &[]);
    let plain = translate(&dir, &corpus, "b.jsonl", &["--no-disambig"]);
    assert_eq!(guided, plain);
}

#[test]
fn unseen_identifiers_fall_back_to_identity() {
    let dir = Dir::new();
    let training = dir.write(
        "c.jsonl",
        &record(
            "a",
            "<mrow><mi>x</mi><mo>+</mo><mn>1</mn></mrow>",
            "<apply><plus/><ci>x</ci><cn>1</cn></apply>",
        ),
    );
    train(&dir, &training);
    let mut lines = record("u1", "<mi>q</mi>", "<ci>q</ci>");
    lines += &record(
        "u2",
        "<mrow><mi>k</mi><mo>+</mo><mn>7</mn></mrow>",
        "<apply><plus/><ci>k</ci><cn>7</cn></apply>",
    );
    lines += &record(
        "u3",
        "<mfrac><mi>k</mi><mi>q</mi></mfrac>",
        "<apply><divide/><ci>k</ci><ci>q</ci></apply>",
    );
    let unseen = dir.write("u.jsonl", &lines);
    let out = translations_from_jsonl(&translate(&dir, &unseen, "out.jsonl", &[])).unwrap();
    assert!(out.iter().all(|t| !t.failed));
    let text: Vec<String> = out
        .iter()
        .map(|t| t.content.as_ref().unwrap().serialize())
        .collect();
    assert_eq!(text[0], "<ci>q</ci>");
    assert_eq!(text[1], "<apply><plus/><ci>k</ci><cn>7</cn></apply>");
    assert_eq!(text[2], "<apply><ci>mfrac</ci><ci>k</ci><ci>q</ci></apply>");
}

fn translations(lines: &[(&str, &str)]) -> String {
    lines
        .iter()
        .map(|(id, c)| {
            serde_json::json!({ "id": id, "content": c, "score": 1.0, "failed": false }).to_string()
                + "\n"
        })
        .collect()
}

fn evaluate(dir: &Dir, corpus: &Path, outputs: &Path) -> Output {
    bin(&[
        "evaluate",
        "--corpus",
        s(corpus),
        "--translations",
        s(outputs),
        "--report",
        s(&dir.path("report.json")),
    ])
}

#[test]
fn evaluate_scores_and_rejects_mismatched_ids() {
    let dir = Dir::new();
    let mut lines = record("a", "<mi>w</mi>", "<ci>w</ci>");
    lines += &record("b", "<mi>v</mi>", "<ci>v</ci>");
    let corpus = dir.write("c.jsonl", &lines);

    let perfect = dir.write(
        "p.jsonl",
        &translations(&[("a", "<ci>w</ci>"), ("b", "<ci>v</ci>")]),
    );
    let out = evaluate(&dir, &corpus, &perfect);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean TEDR: 0.000000"));

    let half = dir.write(
        "h.jsonl",
        &translations(&[("a", "<ci>w</ci>"), ("b", "<ci>x</ci>")]),
    );
    let out = evaluate(&dir, &corpus, &half);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean TEDR: 0.500000"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path("report.json")).unwrap()).unwrap();
    assert_eq!(report["mean_tedr"], 0.5);
    assert!(report["config"].is_object());

    let wrong = dir.write(
        "w.jsonl",
        &translations(&[("a", "<ci>w</ci>"), ("z", "<ci>v</ci>")]),
    );
    let out = evaluate(&dir, &corpus, &wrong);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("IdMismatch"));
}

fn small_spec(dir: &Dir, per_identifier: usize, single_candidate: bool) -> PathBuf {
    let mut spec = SyntheticSpec::bundled();
    spec.examples_per_identifier = per_identifier;
    if single_candidate {
        for ident in &mut spec.identifiers {
            ident.candidates.truncate(1);
        }
    }
    dir.write("spec.json", &serde_json::to_string(&spec).unwrap())
}

fn crossval(dir: &Dir, corpus: &Path, report: &str) -> (String, String) {
    let report = dir.path(report);
    let table = ok(&[
        "crossval",
        "--corpus",
        s(corpus),
        "--folds",
        "3",
        "--seed",
        "4",
        "--report",
        s(&report),
    ]);
    (table, fs::read_to_string(report).unwrap())
}

#[test]
fn crossval_is_deterministic_and_orders_systems() {
    let dir = Dir::new();
    let spec = small_spec(&dir, 60, false);
    let corpus = dir.path("c.jsonl");
    ok(&[
        "gen-synthetic",
        "--synthetic-spec",
        s(&spec),
        "--out",
        s(&corpus),
        "--seed",
        "2",
    ]);
    let first = crossval(&dir, &corpus, "r1.json");
    let second = crossval(&dir, &corpus, "r1.json");
    assert_eq!(first.0, second.0);
    assert_eq!(first.1, second.1);
    let report: serde_json::Value = serde_json::from_str(&first.1).unwrap();
    let mean = |i: usize| report["systems"][i]["mean"].as_f64().unwrap();
    assert_eq!(report["systems"][0]["system"], "most_frequent");
    assert_eq!(report["systems"][2]["system"], "with_text");
    assert!(mean(2) > mean(0), "{}", first.0);
}

#[test]
fn single_candidate_corpus_scores_one() {
    let dir = Dir::new();
    let spec = small_spec(&dir, 10, true);
    let corpus = dir.path("c.jsonl");
    ok(&[
        "gen-synthetic",
        "--synthetic-spec",
        s(&spec),
        "--out",
        s(&corpus),
    ]);
    let (_, report) = crossval(&dir, &corpus, "r.json");
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    for system in report["systems"].as_array().unwrap() {
        assert_eq!(system["mean"], 1.0, "{system}");
    }
}

#[test]
fn seed_variable_overrides_flag() {
    let dir = Dir::new();
    let spec = small_spec(&dir, 5, false);
    let run = |out: &str, seed: &str, env: Option<&str>| {
        let out = dir.path(out);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mathml-enrich"));
        cmd.args([
            "gen-synthetic",
            "--synthetic-spec",
            s(&spec),
            "--out",
            s(&out),
            "--seed",
            seed,
        ]);
        match env {
            Some(v) => cmd.env("MATHML_ENRICH_SEED", v),
            None => cmd.env_remove("MATHML_ENRICH_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        fs::read_to_string(out).unwrap()
    };
    assert_eq!(run("a", "1", Some("9")), run("b", "9", None));
    assert_ne!(run("c", "1", None), run("d", "9", None));
}
