use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn causaldann(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causaldann"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    let cfg = r#"{
        "recipe": "synthetic",
        "method": ["baseline", "dann_ipw"],
        "folds": 2,
        "seeds": [0],
        "train": {"lr_init": 0.005, "epochs": 3},
        "dann": {"warmup_epochs": 1},
        "ipw": {"clip": 0.01},
        "synthetic": {"n_pairs": 120, "extra_controls": [0, 40], "paired_groups": 1}
    }"#;
    fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn validate_config_prints_resolved_defaults() {
    let out = causaldann(&["validate-config", "--recipe", "synthetic", "--method", "dann"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["method"][0], "dann");
    assert_eq!(v["folds"], 5);
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"recipe": "synthetic", "train": {"learning_rate": 1}}"#).unwrap();
    let out = causaldann(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.learning_rate"));

    let out = causaldann(&["run", "--recipe", "synthetic", "--method", "xgboost"]);
    assert_eq!(out.status.code(), Some(2));
    let out = causaldann(&["run", "--recipe", "synthetic", "--folds", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = causaldann(&["run"]);
    assert_eq!(out.status.code(), Some(2), "neither recipe nor dataset");
}

#[test]
fn pipeline_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out_dir = dir.path().join("out");
    let out = causaldann(&["run", "--dataset", missing.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("generate"));
}

#[test]
fn staged_commands_reuse_the_stored_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    let out_s = out_dir.to_str().unwrap();
    let gen = causaldann(&["generate", "--config", &cfg, "--out", out_s]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    assert!(String::from_utf8_lossy(&gen.stdout).contains("120 pairs"));
    for stage in ["train", "estimate"] {
        let o = causaldann(&[stage, "--out", out_s]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let rep = causaldann(&["report", "--out", out_s]);
    assert!(rep.status.success());
    let table = String::from_utf8_lossy(&rep.stdout).to_string();
    assert!(table.contains("baseline") && table.contains("dann_ipw"));
    assert_eq!(table, fs::read_to_string(out_dir.join("report.txt")).unwrap());
    assert!(out_dir.join("seed-0/propensity.json").exists());
}

#[test]
fn flags_override_config_and_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let o = causaldann(&[
            "run",
            "--config",
            &cfg,
            "--out",
            out_dir.to_str().unwrap(),
            "--seeds",
            "4,7",
            "--method",
            "baseline",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        reports.push(fs::read(out_dir.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let v: serde_json::Value = serde_json::from_slice(&reports[0]).unwrap();
    assert_eq!(v["seeds"], serde_json::json!([4, 7]));
    assert_eq!(v["methods"].as_array().unwrap().len(), 1);
}

#[test]
fn mock_fixture_flag_drives_llm_recipes() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("mock.json");
    fs::write(
        &fixture,
        r#"{"rules": [{"contains": "classify it into one of the following", "reply": {"choices": ["YTA", "NTA"]}}],
            "default": {"text": "rewritten: same words"}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let cache = dir.path().join("cache");
    let o = causaldann(&[
        "generate",
        "--recipe",
        "aita_anger",
        "--mock-llm",
        fixture.to_str().unwrap(),
        "--cache",
        cache.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let corpus = fs::read_to_string(out_dir.join("corpus.jsonl")).unwrap();
    assert!(corpus.contains("rewritten: same words"));
    assert!(fs::read_dir(&cache).unwrap().count() > 0);
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let out = causaldann(&["validate-config", "--config", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        n += 1;
    }
    assert!(n >= 3);
}
