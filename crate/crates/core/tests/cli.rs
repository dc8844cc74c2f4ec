use std::path::Path;
use std::process::{Command, Output};

fn lehgr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lehgr"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    lehgr(dir, args).status.code().unwrap()
}

const SCENE: &str = r#"{"recording":"wave","n_frames":40,
    "scripts":[{"source_id":0,"class_id":1,"start":4,"end":30,"amplitude":0.1,"period":20}]}"#;

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &[]), 1);
    assert_eq!(code(d, &["track", "--bogus"]), 1);
    assert_eq!(code(d, &["frobnicate"]), 1);
    assert_eq!(code(d, &["--help"]), 0);
    assert_eq!(code(d, &["--version"]), 0);
    let out = lehgr(d, &["track"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--input"));

    std::fs::write(d.join("bad.json"), r#"{"tracker":{"weights":{"gate":-1}}}"#).unwrap();
    std::fs::write(d.join("typo.json"), r#"{"trackr":{}}"#).unwrap();
    std::fs::write(d.join("empty.jsonl"), "").unwrap();
    for cfg in ["bad.json", "typo.json", "missing.json"] {
        assert_eq!(code(d, &["--config", cfg, "track", "--input", "empty.jsonl", "--out", "t.jsonl"]), 1, "{cfg}");
    }
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let line = r#"{"frame":0,"ts_ms":0,"image":[640,480],"hands":[{"box":[0.5,0.5,0.2,0.2],"kpts":[[0.5,0.6],[0.45,0.4],[0.48,0.4],[0.52,0.4],[0.55,0.4]],"conf":0.9}]}"#;
    std::fs::write(d.join("twice.jsonl"), format!("{line}\n{line}\n")).unwrap();
    std::fs::write(d.join("garbage.jsonl"), "{not json\n").unwrap();
    std::fs::write(d.join("short.jsonl"), line.replace(",[0.55,0.4]", "")).unwrap();
    for input in ["twice.jsonl", "garbage.jsonl", "short.jsonl", "absent.jsonl"] {
        assert_eq!(code(d, &["track", "--input", input, "--out", "t.jsonl"]), 2, "{input}");
    }
    std::fs::write(d.join("scene.json"), r#"{"n_frames":10,"scripts":[{"source_id":0,"start":5,"end":20}]}"#).unwrap();
    assert_eq!(code(d, &["simulate", "--scene", "scene.json", "--out", "sim"]), 2);
    assert_eq!(code(d, &["dataset", "inspect", "--input", "scene.json"]), 2);
}

#[test]
fn chain_writes_declared_formats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("scene.json"), SCENE).unwrap();
    assert_eq!(code(d, &["simulate", "--scene", "scene.json", "--out", "sim"]), 0);
    let ann = std::fs::read_to_string(d.join("sim/wave.annotations.json")).unwrap();
    assert!(ann.contains("\"phi_s\": 4"));
    assert_eq!(std::fs::read_to_string(d.join("sim/wave.jsonl")).unwrap().lines().count(), 40);

    assert_eq!(code(d, &["track", "--input", "sim/wave.jsonl", "--out", "sim/wave.traces.jsonl"]), 0);
    let first = std::fs::read_to_string(d.join("sim/wave.traces.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(first.lines().nth(4).unwrap()).unwrap();
    assert_eq!(first["frame"], 4);
    assert_eq!(first["events"]["created"], serde_json::json!([0]));
    assert_eq!(first["traces"][0]["misses"], 0);

    assert_eq!(code(d, &["featurize", "--input", "sim/wave.traces.jsonl", "--out", "f.csv", "--mode", "box"]), 0);
    let csv = std::fs::read_to_string(d.join("f.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "trace_id,frame,cx,cy,w,h");

    assert_eq!(code(d, &["dataset", "build", "--input", "sim", "--out", "all.lds"]), 0);
    let inspect = lehgr(d, &["dataset", "inspect", "--input", "all.lds"]);
    assert_eq!(inspect.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&inspect.stdout).contains("left-wave"));
    // a single recording cannot be split
    assert_eq!(code(d, &["dataset", "build", "--input", "sim", "--out", "a.lds", "--test-out", "b.lds"]), 2);
    // box models need box datasets
    assert_eq!(code(d, &["train", "--data", "all.lds", "--out", "m.lhm", "--mode", "box", "--epochs", "1"]), 1);
    assert_eq!(code(d, &["train", "--data", "all.lds", "--out", "m.lhm", "--epochs", "1", "--hidden", "4"]), 0);

    let eval = lehgr(d, &["eval", "--model", "m.lhm", "--data", "all.lds", "--csv", "cm.csv"]);
    assert_eq!(eval.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("false-pos"));
    assert!(std::fs::read_to_string(d.join("cm.csv")).unwrap().starts_with("# lehgr-confusion v1"));

    assert_eq!(code(d, &["dataset", "build", "--input", "sim", "--out", "box.lds", "--mode", "box"]), 0);
    assert_eq!(code(d, &["eval", "--model", "m.lhm", "--data", "box.lds"]), 2);

    assert_eq!(code(d, &["infer", "--model", "m.lhm", "--input", "sim/wave.jsonl", "--out", "ev.jsonl"]), 0);
    for l in std::fs::read_to_string(d.join("ev.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v["class_id"].as_u64().unwrap() > 0);
    }
}

#[test]
fn config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("scene.json"), SCENE).unwrap();
    std::fs::write(d.join("cfg.json"), r#"{"augmentation":{"t_min":5,"delta_t":3,"t_obj":6}}"#).unwrap();
    assert_eq!(code(d, &["simulate", "--scene", "scene.json", "--out", "sim"]), 0);
    assert_eq!(code(d, &["--config", "cfg.json", "dataset", "build", "--input", "sim", "--out", "x.lds"]), 0);
    let summary = String::from_utf8(lehgr(d, &["dataset", "inspect", "--input", "x.lds"]).stdout).unwrap();
    assert!(summary.starts_with("mode motion  t_obj 6 "), "{summary}");
}
