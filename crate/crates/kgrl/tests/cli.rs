use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn kgrl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgrl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const GRID: &str = r#"{
  "env": {"grid": "unlock"},
  "actor": "kgrl",
  "knowledge": ["pickup_key", "open_door", "reach_goal"],
  "ppo": {"n_envs": 4, "n_steps": 32, "minibatch": 64, "epochs": 1},
  "seeds": [0, 1],
  "total_steps": 256,
  "eval": {"every": 256, "episodes": 3},
  "out_dir": "runs/unlock"
}"#;

#[test]
fn train_eval_trace_and_compose() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("unlock.json"), GRID).unwrap();

    let stdout = ok(kgrl(&["train", "--config", "unlock.json"], d));
    assert_eq!(stdout.lines().count(), 2, "{stdout}");
    assert!(stdout.starts_with("seed 0: 256 env steps"));
    let run = d.join("runs/unlock/seed-1");
    assert!(run.join("run.json").exists());

    let eval = ok(kgrl(
        &[
            "eval",
            "runs/unlock/seed-0",
            "--episodes",
            "3",
            "--drop",
            "open_door",
            "inner",
        ],
        d,
    ));
    let report: serde_json::Value = serde_json::from_str(eval.trim()).unwrap();
    assert_eq!(report["env"], "unlock");
    assert_eq!(report["episodes"], 3);
    assert_eq!(report["digest"].as_str().unwrap().len(), 64);

    let pack = "runs/unlock/seed-0/packs/unlock_inner.pack.json";
    let alone = ok(kgrl(
        &["eval", pack, "--env", "unlock", "--episodes", "2", "--greedy"],
        d,
    ));
    assert!(alone.contains("\"dropped\":[]"));

    let trace = ok(kgrl(&["trace", "runs/unlock/seed-0", "--out", "tr"], d));
    assert!(trace.contains("dominant-component switches"));
    let csv = fs::read_to_string(d.join("tr/trace.csv")).unwrap();
    assert!(csv.starts_with("step,component,raw,weight,chosen,action,reward,event"));

    let composed = ok(kgrl(
        &[
            "compose",
            "--config",
            "unlock.json",
            "--seed",
            "4",
            "--out",
            "runs/reuse",
            "--freeze-keys",
            "--knowledge",
            pack,
            "reach_goal",
        ],
        d,
    ));
    assert!(composed.starts_with("seed 4:"));
    let ck: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("runs/reuse/seed-4/actor.json")).unwrap()).unwrap();
    assert_eq!(ck["knowledge"].as_array().unwrap().len(), 2);

    let wrong = kgrl(&["transfer", "runs/unlock/seed-0", "--env", "reach"], d);
    assert!(!wrong.status.success());
    assert!(String::from_utf8_lossy(&wrong.stderr).contains("action spaces differ"));
}

#[test]
fn bad_configs_name_the_field() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(
        d.join("bad.json"),
        GRID.replace("\"epochs\": 1", "\"epochs\": \"many\""),
    )
    .unwrap();
    let out = kgrl(&["train", "--config", "bad.json"], d);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json") && err.contains("ppo.epochs"), "{err}");

    let out = kgrl(&["eval", "missing-run"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
