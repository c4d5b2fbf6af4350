use std::path::Path;
use std::process::{Command, Output};

use boxedit::denoiser::ModelConfig;
use boxedit::scene::{ClipRecord, ClipRules, DatasetConfig, SceneGenConfig, Split};
use serde_json::{json, Value};

fn boxedit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boxedit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_json(path: &Path, v: &Value) -> String {
    std::fs::write(path, v.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn small_dataset_config(dir: &Path) -> String {
    let cfg = DatasetConfig {
        scene: SceneGenConfig {
            height: 32,
            width: 64,
            num_frames: 4,
            ..SceneGenConfig::default()
        },
        rules: ClipRules {
            clip_len: 2,
            ..ClipRules::default()
        },
        train_clips: 3,
        inpaint_clips: 1,
        val_clips: 2,
        max_scenes: 400,
    };
    write_json(&dir.join("data.json"), &serde_json::to_value(cfg).unwrap())
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_dataset_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ra = stdout_json(&boxedit(&["gen-data", "--config", &cfg, "--seed", "4", "--out", a.to_str().unwrap()]));
    let rb = stdout_json(&boxedit(&["gen-data", "--config", &cfg, "--seed", "4", "--out", b.to_str().unwrap()]));
    assert_eq!(ra["clips_sha256"], rb["clips_sha256"]);
    assert_eq!(ra["clips"], json!(6));
    let rc = stdout_json(&boxedit(&["gen-data", "--config", &cfg, "--seed", "5", "--out", b.to_str().unwrap()]));
    assert_ne!(ra["clips_sha256"], rc["clips_sha256"]);
}

#[test]
fn malformed_inputs_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_json(&dir.path().join("spec.json"), &json!({"task": "delete", "scene_id": "s", "object_id": 1, "preset": "forward"}));
    let out = boxedit(&["edit", "--spec", &spec]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("preset"), "{err}");
    assert!(err.contains("EditSpec schema"), "{err}");

    let bad = write_json(&dir.path().join("bad.json"), &json!({"train_clips": 2, "colour": "red"}));
    let out = boxedit(&["gen-data", "--config", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    assert_eq!(boxedit(&["edit"]).status.code(), Some(2));
    assert_eq!(boxedit(&["teleport"]).status.code(), Some(2));
}

#[test]
fn delete_edit_and_pose_render() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = small_dataset_config(dir.path());
    stdout_json(&boxedit(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()]));

    let clips: Vec<ClipRecord> = std::fs::read_to_string(data.join("clips.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let rec = clips.iter().find(|c| c.split == Split::Val).unwrap();

    let run = write_json(
        &dir.path().join("run.json"),
        &json!({"dataset": data, "model": ModelConfig::tiny(), "steps": 2}),
    );
    let spec = write_json(
        &dir.path().join("spec.json"),
        &json!({"task": "delete", "scene_id": rec.scene_id, "object_id": rec.object_id, "start": rec.start}),
    );
    let out_dir = dir.path().join("edit");
    let report = stdout_json(&boxedit(&[
        "edit", "--config", &run, "--spec", &spec, "--seed", "1", "--out", out_dir.to_str().unwrap(),
    ]));
    assert_eq!(report["frames"], json!(2));
    assert!(out_dir.join("frame_000.png").is_file());
    assert!(out_dir.join("frame_001.png").is_file());
    assert!(out_dir.join("report.json").is_file());

    let missing = write_json(
        &dir.path().join("missing.json"),
        &json!({"task": "delete", "scene_id": "nope", "object_id": 0}),
    );
    let out = boxedit(&["edit", "--config", &run, "--spec", &missing]);
    assert_eq!(out.status.code(), Some(2));

    let pose_cfg = write_json(
        &dir.path().join("pose.json"),
        &json!({"dataset": data, "scene_id": rec.scene_id, "object_id": rec.object_id, "frame": rec.start, "mode": "edges"}),
    );
    let png = dir.path().join("pose.png");
    let r = stdout_json(&boxedit(&["render-pose", "--config", &pose_cfg, "--out", png.to_str().unwrap()]));
    assert!(r["nonzero"].as_u64().unwrap() > 0);
    assert!(png.is_file());
}
