use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biasmap::synthetic::{planted_corpus, PlantedConfig};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn biasmap(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biasmap"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Fixture config with `extra` appended and the corpus path made absolute.
fn config_with(dir: &Path, extra: &str) -> PathBuf {
    let text = std::fs::read_to_string(fixture("planted.toml")).unwrap();
    let corpus = fixture("planted.jsonl");
    let text = text.replace("path = \"planted.jsonl\"", &format!("path = {:?}", corpus.to_str().unwrap()));
    let path = dir.join("config.toml");
    std::fs::write(&path, format!("{text}\n{extra}")).unwrap();
    path
}

#[test]
fn bundled_fixture_matches_generator() {
    let (corpus, _) = planted_corpus(&PlantedConfig::default());
    let mut buf = Vec::new();
    corpus.write_jsonl(&mut buf).unwrap();
    assert_eq!(std::fs::read(fixture("planted.jsonl")).unwrap(), buf);
}

#[test]
fn missing_upstream_artifact_exits_2_and_names_it() {
    let out = tempfile::tempdir().unwrap();
    let cfg = fixture("planted.toml");
    assert!(biasmap(&["ingest"], &cfg, out.path()).status.success());
    let o = biasmap(&["mine-topics"], &cfg, out.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("article_vectors.tsv"), "{}", stderr(&o));
}

#[test]
fn missing_config_exits_2() {
    let out = tempfile::tempdir().unwrap();
    let o = biasmap(&["ingest"], &out.path().join("absent.toml"), out.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[mining]\nk = 6\nclusters = 4\n").unwrap();
    let o = biasmap(&["ingest"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("clusters"), "{}", stderr(&o));
}

#[test]
fn invalid_config_value_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with(dir.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("mu = 0.5", "mu = 1.5");
    std::fs::write(&cfg, text).unwrap();
    assert_eq!(biasmap(&["ingest"], &cfg, dir.path()).status.code(), Some(3));
}

#[test]
fn usage_errors_exit_3_and_help_exits_0() {
    let run = |args: &[&str]| Command::new(env!("CARGO_BIN_EXE_biasmap")).args(args).output().unwrap();
    assert_eq!(run(&["no-such-stage"]).status.code(), Some(3));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn offline_generator_writes_prompts_then_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with(dir.path(), "");
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("sample_size = 50", "sample_size = 50\ngenerator = \"offline\"\nprompt_dir = \"llm\"");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    for stage in ["ingest", "embed-corpus"] {
        assert!(biasmap(&[stage], &cfg, &out).status.success());
    }
    let o = biasmap(&["mine-topics"], &cfg, &out);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let prompts: Vec<_> = std::fs::read_dir(out.join("llm"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".prompt"))
        .collect();
    assert_eq!(prompts.len(), 6, "{prompts:?}");
    let text = std::fs::read_to_string(out.join("llm").join(&prompts[0])).unwrap();
    assert!(text.contains("Left Indicator:") && text.contains("Bias: "));
}

fn stamp(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn full_pipeline_reports_and_guards_config_hash() {
    let out = tempfile::tempdir().unwrap();
    let cfg = fixture("planted.toml");
    let o = biasmap(&["run-all"], &cfg, out.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap()).unwrap();
    let hash = report["config_hash"].as_str().unwrap();
    assert_eq!(stamp(&out.path().join("embeddings.txt")), format!("# config={hash}"));
    assert_eq!(report["corpus"]["articles"], 600);
    let runs = report["runs"].as_array().unwrap();
    assert!(!runs.is_empty());
    for run in runs {
        let f1 = run["report"]["f1_macro"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f1));
    }
    for name in ["frontier.tsv", "retrieval.jsonl", "train_loss.tsv", "scorer.ckpt", "topics.jsonl"] {
        assert!(out.path().join(name).exists(), "{name}");
    }

    // a different seed changes the hash; evaluate refuses stale inputs unless told otherwise
    let o = biasmap(&["evaluate", "--seed", "42"], &cfg, out.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = biasmap(&["evaluate", "--seed", "42", "--allow-mixed-hash"], &cfg, out.path());
    assert!(o.status.success(), "{}", stderr(&o));
}
