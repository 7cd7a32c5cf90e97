use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn wfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfa-extract"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = wfa(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn toy_pipeline(out_dir: &Path, extra: &[&str]) -> Output {
    let config = data("toy.toml");
    let mut args = vec![
        "--config",
        config.to_str().unwrap(),
        "pipeline",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    wfa(&args)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// (stage, file name) → sha256 for every output in a manifest.
fn output_hashes(manifest: &Value) -> BTreeMap<(String, String), String> {
    let mut out = BTreeMap::new();
    for stage in manifest["stages"].as_array().unwrap() {
        for file in stage["outputs"].as_array().unwrap() {
            let name = Path::new(file["path"].as_str().unwrap()).file_name().unwrap();
            out.insert(
                (stage["name"].as_str().unwrap().to_owned(), name.to_string_lossy().into_owned()),
                file["sha256"].as_str().unwrap().to_owned(),
            );
        }
    }
    out
}

#[test]
fn toy_pipeline_produces_model_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = toy_pipeline(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["model.json", "report.json", "manifest.json", "traces.jsonl", "augmented.tsv"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let report = read_json(&dir.path().join("report.json"));
    let cr = report["consistency_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&cr));
    assert_eq!(report["n_total"], 80);

    let manifest = read_json(&dir.path().join("manifest.json"));
    let stages: Vec<&str> = manifest["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    assert_eq!(stages, ["augment", "teach", "extract", "eval", "inspect"]);
    assert_eq!(manifest["seed"], 2022);
    assert_eq!(manifest["model_format"], "wfa-extract/1");
    assert!(manifest["inputs"]["embeddings"]["sha256"].as_str().unwrap().len() == 64);
    // the augmented corpus holds the originals plus two generated copies
    assert_eq!(manifest["stages"][0]["summary"]["augmented"], 3 * 240);

    let model = read_json(&dir.path().join("model.json"));
    assert_eq!(model["k"], 8);
    assert_eq!(model["m"], 2);
    assert_eq!(model["fill_strategy"], "empirical");
}

#[test]
fn missing_embeddings_fails_in_augment_and_cleans_up() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-embeddings.txt");
    let out_dir = dir.path().join("run");
    let out = toy_pipeline(&out_dir, &["--embeddings", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage `augment`"), "{stderr}");
    assert!(!out_dir.join("manifest.json").exists());
    assert!(!out_dir.join("augmented.tsv").exists());
}

#[test]
fn late_failure_removes_earlier_outputs() {
    let dir = tempfile::tempdir().unwrap();
    // far more clusters than the toy corpus has distinct outputs
    let out = toy_pipeline(dir.path(), &["--k", "100000"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage `extract`"), "{stderr}");
    let left: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert!(left.is_empty(), "partial outputs left behind: {left:?}");
}

#[test]
fn identical_config_gives_identical_hashes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(toy_pipeline(d.path(), &[]).status.success());
    }
    let ha = output_hashes(&read_json(&a.path().join("manifest.json")));
    let hb = output_hashes(&read_json(&b.path().join("manifest.json")));
    assert_eq!(ha.len(), 7);
    assert_eq!(ha, hb);
    assert_eq!(
        fs::read(a.path().join("model.json")).unwrap(),
        fs::read(b.path().join("model.json")).unwrap()
    );

    let c = tempfile::tempdir().unwrap();
    assert!(toy_pipeline(c.path(), &["--seed", "7"]).status.success());
    let hc = output_hashes(&read_json(&c.path().join("manifest.json")));
    assert_ne!(ha[&("extract".into(), "model.json".into())], hc[&("extract".into(), "model.json".into())]);
}

#[test]
fn stages_run_standalone_on_pipeline_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(toy_pipeline(dir.path(), &[]).status.success());
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    let redo = dir.path().join("standalone");
    fs::create_dir(&redo).unwrap();
    let r = |name: &str| redo.join(name).to_str().unwrap().to_owned();

    ok(&[
        "--seed", "2022", "augment", "--corpus", data("train.tsv").to_str().unwrap(), "--embeddings",
        data("embeddings.txt").to_str().unwrap(), "--epochs", "2", "--synonyms", "3", "--dropout", "0.1",
        "--out", &r("augmented.tsv"),
    ]);
    ok(&[
        "--seed", "2022", "teach", "--teacher", "random", "--hidden-states", "6", "--corpus",
        &r("augmented.tsv"), "--out", &r("traces.jsonl"), "--save-teacher", &r("teacher.json"),
    ]);
    ok(&[
        "teach", "--teacher", &r("teacher.json"), "--corpus", data("test.tsv").to_str().unwrap(), "--out",
        &r("test_traces.jsonl"),
    ]);
    ok(&[
        "--seed", "2022", "extract", "--traces", &r("traces.jsonl"), "--clusters", "8", "--beta", "0.3",
        "--fill", "empirical", "--out", &r("model.json"),
    ]);
    ok(&["eval", "--model", &r("model.json"), "--traces", &r("test_traces.jsonl"), "--report", &r("report.json")]);

    for name in ["augmented.tsv", "teacher.json", "traces.jsonl", "test_traces.jsonl", "model.json", "report.json"] {
        assert_eq!(fs::read(p(name)).unwrap(), fs::read(r(name)).unwrap(), "{name} differs");
    }

    let text = ok(&["inspect", "--model", &p("model.json")]);
    assert!(text.contains("missing rows by token frequency decile"), "{text}");
    let json: Value = serde_json::from_str(&ok(&["inspect", "--model", &p("model.json"), "--json"])).unwrap();
    assert_eq!(json["clusters"].as_array().unwrap().len(), 9);
}

#[test]
fn compare_table_shares_one_set_of_counts() {
    let dir = tempfile::tempdir().unwrap();
    assert!(toy_pipeline(dir.path(), &[]).status.success());
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();

    ok(&[
        "compare", "--traces", &p("traces.jsonl"), "--test-traces", &p("test_traces.jsonl"), "--clusters", "8",
        "--out", &p("compare.json"),
    ]);
    let table = read_json(&dir.path().join("compare.json"));
    let cells = table["table"]["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 6);
    for c in cells {
        assert!((0.0..=1.0).contains(&c["consistency_rate"].as_f64().unwrap()));
    }

    // context-off uniform and empirical models built separately still come
    // from the same counts as the table
    let mut digests = Vec::new();
    for fill in ["uniform", "empirical"] {
        let model = p(&format!("{fill}.json"));
        let summary: Value = serde_json::from_str(&ok(&[
            "extract", "--traces", &p("traces.jsonl"), "--clusters", "8", "--alpha", "0", "--fill", fill,
            "--out", &model,
        ]))
        .unwrap();
        digests.push(summary["counts_sha256"].as_str().unwrap().to_owned());
    }
    assert_eq!(digests[0], digests[1]);
    assert_eq!(digests[0], table["counts_sha256"].as_str().unwrap());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[pipeline]\ncorpus = \"x.tsv\"\nclusters = 4\n").unwrap();
    let out = wfa(&["--config", cfg.to_str().unwrap(), "pipeline"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("clusters"));
}

#[test]
fn bad_trace_file_reports_record() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("t.jsonl");
    fs::write(
        &traces,
        "{\"tokens\":[\"a\"],\"label\":0,\"outputs\":[[0.5,0.5]]}\n{\"tokens\":[\"a\",\"b\"],\"label\":0,\"outputs\":[[0.5,0.5]]}\n",
    )
    .unwrap();
    let model = dir.path().join("m.json");
    let out = wfa(&["extract", "--traces", traces.to_str().unwrap(), "--clusters", "1", "--out", model.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("record 1"), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!model.exists());
}
