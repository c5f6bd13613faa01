use std::path::Path;
use std::process::{Command, Output};

use ckg_core::rank::mr_rows_from_csv;

const SMALL: &str = r#"{
  "seed": 3,
  "city": { "roads": 6, "days": 1 },
  "embed": { "train": { "dim": 8, "rel_dim": 8, "epochs": 3 } },
  "sweeps": {
    "families": ["ComplEx", "TransE"],
    "buffers": ["near"],
    "link_orders": [0, 6],
    "past_windows": [10],
    "temporal_links": ["-"],
    "train": { "dim": 8, "rel_dim": 8, "epochs": 3 }
  },
  "forecast": { "model": { "epochs": 1, "hidden": 4 }, "seeds": [0] }
}"#;

fn ckg(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("config.json");
    std::fs::write(&config, SMALL).unwrap();
    Command::new(env!("CARGO_BIN_EXE_ckg"))
        .arg("--config")
        .arg(&config)
        .args(args)
        .env("CKG_OUT", dir.join("out"))
        .output()
        .expect("binary runs")
}

#[test]
fn eval_mr_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["synth", "eval-mr"] {
        let out = ckg(dir.path(), &["--stage", stage]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = std::fs::read_to_string(dir.path().join("out/mr/spatial.csv")).unwrap();
    let rows = mr_rows_from_csv(&text).unwrap();
    let cells: Vec<(&str, &str, &str)> =
        rows.iter().map(|r| (r.model.as_str(), r.buffer_cfg.as_str(), r.link_cfg.as_str())).collect();
    assert_eq!(
        cells,
        [
            ("ComplEx", "Buffer[10-100]", "Link[-]"),
            ("ComplEx", "Buffer[10-100]", "Link[6]"),
            ("TransE", "Buffer[10-100]", "Link[-]"),
            ("TransE", "Buffer[10-100]", "Link[6]"),
        ]
    );
    assert!(rows.iter().all(|r| r.side == "both" && r.mr >= 1.0));
    assert!(text.starts_with("model,buffer_cfg,link_cfg,side,MR"));
}

#[test]
fn integrate_without_embeddings_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["synth", "build-kg"] {
        assert!(ckg(dir.path(), &["--stage", stage]).status.success());
    }
    let out = ckg(dir.path(), &["--stage", "integrate"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error=MissingEmbedding code=3"), "{err}");
}

#[test]
fn missing_upstream_artifact_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = ckg(dir.path(), &["--stage", "build-kg"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn unknown_stage_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ckg(dir.path(), &["--stage", "train-everything"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_are_idempotent_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let city = dir.path().join("out/city.json");
    assert!(ckg(dir.path(), &["--stage", "synth"]).status.success());
    let first = std::fs::read(&city).unwrap();
    assert!(ckg(dir.path(), &["--stage", "synth", "--jobs", "1"]).status.success());
    assert_eq!(std::fs::read(&city).unwrap(), first);
    assert!(ckg(dir.path(), &["--stage", "synth", "--seed", "99"]).status.success());
    assert_ne!(std::fs::read(&city).unwrap(), first);
}
