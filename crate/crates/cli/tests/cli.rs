use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn palr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_palr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run palr")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = palr(dir, args);
    assert!(
        out.status.success(),
        "palr {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, users: usize) -> PathBuf {
    let data = dir.join("data");
    ok(dir, &["synth", "--out", data.to_str().unwrap(), "--users", &users.to_string(), "--items", "150"]);
    data
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn report<'a>(file: &'a Value, slice: &str) -> &'a Value {
    file["reports"].as_array().unwrap().iter().find(|r| r["slice"] == slice).unwrap()
}

#[test]
fn echo_pipeline_matches_retrieval_only() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 200);
    for model in ["bprmf", "cooc", "popularity"] {
        let run = format!("run-{model}");
        let args = ["--run-dir", &run, "--data-dir", data.to_str().unwrap(), "--model", model, "--epochs", "5"];
        let mut pipeline = vec!["pipeline", "--llm", "mock-echo"];
        pipeline.extend(args);
        ok(tmp.path(), &pipeline);
        ok(tmp.path(), &["--run-dir", &run, "eval", "--retrieval-only"]);
        let a = json(tmp.path().join(&run).join("metrics.json"));
        let b = json(tmp.path().join(&run).join("metrics_retrieval.json"));
        for slice in ["all", "sampled", "unsampled"] {
            let (ra, rb) = (report(&a, slice), report(&b, slice));
            for field in ["hr", "ndcg", "ceiling", "users"] {
                assert_eq!(ra[field], rb[field], "{model} {slice} {field}");
            }
        }
    }
}

#[test]
fn scripted_target_first_reaches_ceiling() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 150);
    let d = data.to_str().unwrap();
    ok(tmp.path(), &["--run-dir", "r", "--data-dir", d, "ingest"]);
    ok(tmp.path(), &["--run-dir", "r", "split"]);
    ok(tmp.path(), &["--run-dir", "r", "--model", "cooc", "train"]);

    // The script names each user's held-out item.
    let split = json(tmp.path().join("r/split.json"));
    let movies = std::fs::read_to_string(data.join("movies.dat")).unwrap();
    let title = |id: &str| {
        movies
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{id}::")).map(|rest| rest.split("::").next().unwrap().to_owned()))
            .unwrap()
    };
    let mut script = serde_json::Map::new();
    for row in split["users"].as_array().unwrap() {
        let test = row["test"].as_str().unwrap();
        script.insert(row["user"].as_str().unwrap().to_owned(), Value::String(format!("\"{}\"", title(test))));
    }
    let script_path = tmp.path().join("script.json");
    std::fs::write(&script_path, Value::Object(script).to_string()).unwrap();

    let llm = format!("mock-scripted:{}", script_path.display());
    ok(tmp.path(), &["--run-dir", "r", "--llm", &llm, "rank"]);
    ok(tmp.path(), &["--run-dir", "r", "eval"]);
    let m = json(tmp.path().join("r/metrics.json"));
    let all = report(&m, "all");
    assert_eq!(all["hr"]["10"], all["ceiling"]);
    assert!(all["ceiling"].as_f64().unwrap() > 0.0);
}

#[test]
fn eval_without_rank_names_the_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 60);
    ok(tmp.path(), &["--run-dir", "r", "--data-dir", data.to_str().unwrap(), "ingest"]);
    ok(tmp.path(), &["--run-dir", "r", "split"]);
    let out = palr(tmp.path(), &["--run-dir", "r", "eval"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ranked.jsonl") && err.contains("palr rank"), "{err}");

    let out = palr(tmp.path(), &["--run-dir", "empty", "rank"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("palr ingest"));
}

#[test]
fn gen_instructions_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 120);
    let mut corpora = Vec::new();
    for run in ["a", "b"] {
        ok(tmp.path(), &["--run-dir", run, "--data-dir", data.to_str().unwrap(), "ingest"]);
        ok(tmp.path(), &["--run-dir", run, "split"]);
        ok(tmp.path(), &["--run-dir", run, "gen-instructions", "--fraction", "0.2", "--seed", "7"]);
        corpora.push(std::fs::read(tmp.path().join(run).join("corpus.jsonl")).unwrap());
    }
    assert!(!corpora[0].is_empty());
    assert_eq!(corpora[0], corpora[1]);

    ok(tmp.path(), &["--run-dir", "a", "gen-instructions", "--fraction", "0.2", "--seed", "8"]);
    let other = std::fs::read(tmp.path().join("a/corpus.jsonl")).unwrap();
    assert_ne!(other, corpora[0]);

    let first = String::from_utf8(corpora[0].clone()).unwrap();
    let rec: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    for key in ["task", "instruction", "input", "output", "user", "meta"] {
        assert!(rec.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn ingest_is_deterministic_and_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 80);
    let a = ok(tmp.path(), &["--run-dir", "a", "--data-dir", data.to_str().unwrap(), "ingest"]);
    let b = ok(tmp.path(), &["--run-dir", "b", "--data-dir", data.to_str().unwrap(), "ingest"]);
    let hash = |s: &str| s.lines().find(|l| l.starts_with("snapshot sha256")).unwrap().to_owned();
    assert_eq!(hash(&a), hash(&b));
    assert!(a.starts_with("80 users / "));

    let manifest = json(tmp.path().join("a/manifest.json"));
    let stage = &manifest["stages"]["ingest"];
    assert_eq!(stage["config_hash"].as_str().unwrap().len(), 64);
    assert!(stage["outputs"]["snapshot.json"].is_string());
    assert_eq!(stage["config"]["dataset"]["core_k"], 5);
}

#[test]
fn bad_input_path_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = palr(tmp.path(), &["--run-dir", "r", "--data-dir", "does/not/exist", "ingest"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does/not/exist"));

    let out = palr(tmp.path(), &["--run-dir", "r", "--llm", "gpt-9", "ingest"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--llm"));
}

#[test]
fn imported_candidates_and_amazon_csv() {
    let tmp = tempfile::tempdir().unwrap();
    // Every user rates the same six products, a day apart.
    let mut csv = String::new();
    for u in 0..8 {
        for (n, item) in ["P1", "P2", "P3", "P4", "P5", "P6"].iter().enumerate() {
            csv.push_str(&format!("U{u},{item},5.0,{}\n", 1_000_000 + n * 86_400 + u));
        }
    }
    std::fs::write(tmp.path().join("reviews.csv"), csv).unwrap();
    let meta = r#"{"asin": "P1", "title": "Mixed Chicks Leave-In Conditioner", "categories": [["Beauty", "Hair Care"]]}"#;
    std::fs::write(tmp.path().join("meta.json"), meta).unwrap();
    let cands: String = (0..8).map(|u| format!("U{u}\tP6,P2\n")).collect();
    std::fs::write(tmp.path().join("cands.tsv"), cands).unwrap();

    let out = ok(
        tmp.path(),
        &["--run-dir", "r", "--dataset", "amazon", "--reviews", "reviews.csv", "--meta", "meta.json", "ingest"],
    );
    assert!(out.starts_with("8 users / 6 items / 48 interactions"), "{out}");
    ok(tmp.path(), &["--run-dir", "r", "--fraction", "1", "split"]);
    ok(tmp.path(), &["--run-dir", "r", "--model", "imported", "--candidates", "cands.tsv", "train"]);
    ok(tmp.path(), &["--run-dir", "r", "--llm", "mock-echo", "rank"]);
    ok(tmp.path(), &["--run-dir", "r", "eval"]);
    let m = json(tmp.path().join("r/metrics.json"));
    let all = report(&m, "all");
    // P6 is everyone's test item and the first candidate.
    assert_eq!(all["hr"]["1"], 1.0);
    assert_eq!(all["ceiling"], 1.0);
    let traces = std::fs::read_to_string(tmp.path().join("r/traces.jsonl")).unwrap();
    assert!(traces.contains("User has purchased the following products"));
    assert!(traces.contains("P1 (Mixed Chicks Leave-In Conditioner)"));
}

#[test]
fn profiles_feed_the_ranking_prompt() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 40);
    ok(tmp.path(), &["--run-dir", "r", "--data-dir", data.to_str().unwrap(), "ingest"]);
    ok(tmp.path(), &["--run-dir", "r", "split"]);
    ok(tmp.path(), &["--run-dir", "r", "--model", "popularity", "train"]);
    let split = json(tmp.path().join("r/split.json"));
    let script: serde_json::Map<String, Value> = split["users"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["user"].as_str().unwrap().to_owned(), Value::String("war films, 1970s drama".into())))
        .collect();
    std::fs::write(tmp.path().join("s.json"), Value::Object(script).to_string()).unwrap();
    let llm = format!("mock-scripted:{}", tmp.path().join("s.json").display());
    ok(tmp.path(), &["--run-dir", "r", "--llm", &llm, "profile"]);
    let profiles = std::fs::read_to_string(tmp.path().join("r/profiles.jsonl")).unwrap();
    assert!(profiles.contains("\"keywords\":[\"war films\",\"1970s drama\"]"), "{profiles}");
    ok(tmp.path(), &["--run-dir", "r", "--llm", &llm, "--with-profile", "rank"]);
    let traces = std::fs::read_to_string(tmp.path().join("r/traces.jsonl")).unwrap();
    assert!(traces.contains("The user's preferences are \\\"war films\\\", \\\"1970s drama\\\"."));

    // Echo cannot summarize a profile: every user fails, so the stage fails.
    let out = palr(tmp.path(), &["--run-dir", "r", "--llm", "mock-echo", "profile"]);
    assert!(!out.status.success());
}
