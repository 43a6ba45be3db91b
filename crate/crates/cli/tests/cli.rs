use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reachgrasp")).current_dir(dir).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path, name: &str) {
    let o = run(dir, &["synth", "--seed", "5", "--users", "2", "--trials", "4", "--out", name]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn help_lists_every_global_flag_with_units() {
    let t = tempfile::tempdir().unwrap();
    let h = stdout(&run(t.path(), &["--help"]));
    for flag in ["--seed", "--out", "--config", "--threads", "--force", "--check"] {
        assert!(h.contains(flag), "{flag} missing from:\n{h}");
    }
    let h = stdout(&run(t.path(), &["synth", "--help"]));
    assert!(h.contains("(m)") && h.contains("(s)") && h.contains("(count)"), "{h}");
    let h = stdout(&run(t.path(), &["fit-mjt", "--help"]));
    assert!(h.contains("--onset-threshold") && h.contains("(m/s)"), "{h}");
}

#[test]
fn stochastic_commands_need_a_seed() {
    let t = tempfile::tempdir().unwrap();
    let o = run(t.path(), &["synth", "--out", "ds"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--seed"), "{}", stderr(&o));
    assert!(!t.path().join("ds").exists());
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "ds");
    let before = fs::read(t.path().join("ds/manifest.json")).unwrap();
    let o = run(t.path(), &["synth", "--seed", "6", "--users", "2", "--trials", "4", "--out", "ds"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--force"));
    assert_eq!(fs::read(t.path().join("ds/manifest.json")).unwrap(), before);

    let o = run(t.path(), &["synth", "--seed", "6", "--users", "2", "--trials", "4", "--out", "ds", "--force"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_ne!(fs::read(t.path().join("ds/manifest.json")).unwrap(), before);
    let leftovers: Vec<_> = fs::read_dir(t.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers, vec![std::ffi::OsString::from("ds")]);
}

#[test]
fn synth_records_seed_and_config_hash() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "ds");
    let run_json: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.path().join("ds/run.json")).unwrap()).unwrap();
    assert_eq!(run_json["seed"], 5);
    assert_eq!(run_json["config_hash"].as_str().unwrap().len(), 64);
    let o = run(t.path(), &["inspect", "ds"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(summary["manifest"].as_str().unwrap().starts_with("verified: 8 trials, seed 5"));
}

#[test]
fn same_seed_same_dataset() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "a");
    synth(t.path(), "b");
    let name = "u02_t003.trial.json";
    assert_eq!(fs::read(t.path().join("a").join(name)).unwrap(), fs::read(t.path().join("b").join(name)).unwrap());
}

#[test]
fn inspect_rejects_a_tampered_dataset() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "ds");
    fs::remove_file(t.path().join("ds/u01_t002.trial.json")).unwrap();
    let o = run(t.path(), &["inspect", "ds"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("manifest"), "{}", stderr(&o));
}

#[test]
fn features_and_fits_as_csv() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "ds");
    let o = run(t.path(), &["features", "ds/u01_t001.trial.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header[..7], ["trial_id", "user_id", "object", "size", "task", "frame", "t"]);
    assert_eq!(header.len(), 7 + 27);
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == header.len()));

    let o = run(t.path(), &["fit-mjt", "ds/u01_t001.trial.json", "--stride", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("window_end_s,xf_x,xf_y,xf_z,tf_remaining,residual_rms,converged\n"));
    assert!(text.lines().count() >= 3, "{text}");
}

#[test]
fn report_names_the_missing_model() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "ds");
    let o = run(t.path(), &["--seed", "5", "train-posture", "--data", "ds", "--model", "linear", "--out", "m"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(t.path().join("m/model.json").is_file() && t.path().join("m/split.json").is_file());
    let o = run(t.path(), &["--seed", "5", "evaluate", "--data", "ds", "--model", "m", "--out", "ev"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = run(t.path(), &["--seed", "5", "report", "--eval", "ev", "--require", "reach/LSTM", "--out", "rep"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("reach/LSTM"), "{}", stderr(&o));
    assert!(!t.path().join("rep").exists());

    fs::remove_file(t.path().join("ev/posture_LINEAR.csv")).unwrap();
    let o = run(t.path(), &["--seed", "5", "report", "--eval", "ev", "--out", "rep"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("posture/LINEAR"), "{}", stderr(&o));
}

#[test]
fn evaluate_rejects_a_missing_model_directory() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "ds");
    let o = run(t.path(), &["--seed", "5", "evaluate", "--data", "ds", "--model", "nowhere", "--out", "ev"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));
}

#[test]
fn report_summary_carries_the_seed() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "ds");
    let o = run(t.path(), &["--seed", "5", "train-reach", "--data", "ds", "--model", "mjt", "--out", "m"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(t.path(), &["--seed", "5", "evaluate", "--data", "ds", "--model", "m", "--subset", "all", "--out", "ev"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(t.path(), &["--seed", "5", "--check", "report", "--eval", "ev", "--require", "reach/MJT", "--out", "rep"]);
    let lines = stdout(&o);
    assert!(lines.contains("PASS buckets_partition_span"), "{lines}");
    let summary = fs::read_to_string(t.path().join("rep/summary.txt")).unwrap();
    assert!(summary.contains("seed: 5\n"), "{summary}");
    assert!(t.path().join("rep/distance_m.svg").is_file());
}

#[test]
fn classify_writes_accuracy_and_confusions() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "ds");
    let o = run(t.path(), &["--seed", "5", "classify", "--data", "ds", "--classifier", "tree", "--cv", "louo", "--window=-1..-4", "--out", "cl"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let acc = fs::read_to_string(t.path().join("cl/accuracy.csv")).unwrap();
    assert!(acc.starts_with("name,n,object,size,task,overall\ntree/louo,32,"), "{acc}");
    for target in ["object", "size", "task"] {
        assert!(t.path().join(format!("cl/confusion_tree_louo_{target}.csv")).is_file());
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("c.json"), r#"{"seed": 1, "synth": {"users": 3}}"#).unwrap();
    let o = run(t.path(), &["--config", "c.json", "synth", "--out", "ds"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("users"), "{}", stderr(&o));
}
