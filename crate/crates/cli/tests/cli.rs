use std::path::Path;
use std::process::{Command, Output};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures");

fn skillcot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skillcot"))
        .args(args)
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn corpus(dir: &Path) {
    std::fs::copy(
        Path::new(FIXTURES).join("toy_corpus.jsonl"),
        dir.join("toy_corpus.jsonl"),
    )
    .unwrap();
}

#[test]
fn help_succeeds_and_usage_errors_are_validation() {
    let dir = tempfile::tempdir().unwrap();
    let help = skillcot(dir.path(), &["--help"]);
    assert!(help.status.success());
    assert!(String::from_utf8_lossy(&help.stdout).contains("partition-experts"));

    let bad = skillcot(dir.path(), &["split"]);
    assert_eq!(bad.status.code(), Some(1));
    let err = stderr(&bad);
    assert!(err.starts_with("error[validation]:"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let ratio = skillcot(dir.path(), &["split", "x.jsonl", "--ratio", "0:3"]);
    assert_eq!(ratio.status.code(), Some(1));
}

#[test]
fn malformed_and_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.jsonl"), "{\"id\": \"a\"}\n").unwrap();
    let bad = skillcot(dir.path(), &["split", "bad.jsonl"]);
    assert_eq!(bad.status.code(), Some(1), "{}", stderr(&bad));
    assert!(stderr(&bad).contains("line 1"), "{}", stderr(&bad));

    let missing = skillcot(dir.path(), &["split", "nope.jsonl"]);
    assert_eq!(missing.status.code(), Some(3), "{}", stderr(&missing));
    assert!(stderr(&missing).starts_with("error[internal]:"));
}

#[test]
fn unreachable_llm_endpoint_is_a_transport_error() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    std::fs::write(
        dir.path().join("remote.toml"),
        "[llm.endpoint]\nurl = \"http://127.0.0.1:9/v1/chat/completions\"\nmax_retries = 0\ntimeout_secs = 2.0\n",
    )
    .unwrap();
    let out = skillcot(
        dir.path(),
        &[
            "extract-skills",
            "toy_corpus.jsonl",
            "--config",
            "remote.toml",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("error[transport]:"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    std::fs::write(dir.path().join("c.toml"), "sede = 3\n").unwrap();
    let out = skillcot(
        dir.path(),
        &["split", "toy_corpus.jsonl", "--config", "c.toml"],
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn split_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let out = skillcot(
        dir.path(),
        &[
            "split",
            "toy_corpus.jsonl",
            "--ratio",
            "2:1",
            "--seed",
            "4",
            "--out",
            "o",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let o = dir.path().join("o");
    assert_eq!(
        std::fs::read_to_string(o.join("train.jsonl"))
            .unwrap()
            .lines()
            .count(),
        20
    );
    assert_eq!(
        std::fs::read_to_string(o.join("test.jsonl"))
            .unwrap()
            .lines()
            .count(),
        10
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(o.join("split.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([4]));
    assert_eq!(manifest["started_at"], "2023-11-14T22:13:20Z");
    assert!(manifest["outputs"]["train.jsonl"].as_str().unwrap().len() == 64);
}

#[test]
fn eval_specialization_and_projection_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("e.toml"),
        "[experiment]\nn_experts = 5\n[experiment.synthetic]\ntrain_per_skill = 20\ntest_per_skill = 20\n[experiment.model]\nepochs = 30\nlearning_rate = 0.5\n",
    )
    .unwrap();
    let out = skillcot(
        dir.path(),
        &[
            "eval-specialization",
            "e.toml",
            "--seeds",
            "1,2",
            "--ablation",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let spec = std::fs::read_to_string(dir.path().join("specialization.csv")).unwrap();
    assert_eq!(
        spec.lines().next().unwrap(),
        "dataset,seed,routed_accuracy,shared_accuracy"
    );
    assert_eq!(spec.lines().count(), 5);
    let abl = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(abl.lines().count(), 5);

    let lines: String = (0..4)
        .map(|i| {
            format!(
                "{{\"label\": \"p{i}\", \"embedding\": [{}, {}, {}]}}\n",
                i,
                i * i,
                1 - i
            )
        })
        .collect();
    std::fs::write(dir.path().join("emb.jsonl"), lines).unwrap();
    let out = skillcot(dir.path(), &["export-projection", "emb.jsonl"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("projection.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "x,y,label");
    assert_eq!(csv.lines().count(), 5);
    let out = skillcot(
        dir.path(),
        &["export-projection", "emb.jsonl", "--method", "umap"],
    );
    assert_eq!(out.status.code(), Some(1));
}
