use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn kinetrace(args: &[&str]) -> Output {
    kinetrace_env(args, &[])
}

fn kinetrace_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kinetrace"));
    cmd.args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("KINETRACE_") {
            cmd.env_remove(k);
        }
    }
    cmd.envs(env.iter().copied());
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic subject with `seed` written to `root/id`.
fn synth_subject(root: &Path, id: &str, seed: u64) -> PathBuf {
    let cfg = root.join(format!("{id}.toml"));
    fs::write(
        &cfg,
        format!("subject_id = \"{id}\"\nn_channels = 4\nn_trials = 12\nmapping = \"nonlinear\"\nseed = {seed}\n"),
    )
    .unwrap();
    let dir = root.join(id);
    let o = kinetrace(&["synth", "--config", s(&cfg), "--out", s(&dir)]);
    assert_eq!(code(&o), 0, "{o:?}");
    dir
}

fn write_config(root: &Path, name: &str, body: &str) -> PathBuf {
    let path = root.join(name);
    fs::write(&path, body).unwrap();
    path
}

const FAST: &str = "[preprocess]\nrereference = false\nprefilter_hz = [0.5, 20.0]\nkinematics_lowpass_hz = 5.0\n[train]\nmax_epochs = 3\n";

#[test]
fn validate_reports_problems_per_file() {
    let tmp = TempDir::new().unwrap();
    let dir = synth_subject(tmp.path(), "S01", 1);
    let ok = kinetrace(&["validate", s(&dir)]);
    assert_eq!(code(&ok), 0);
    assert!(stdout(&ok).contains(": ok"));

    let eeg = dir.join("eeg.f32");
    let mut bytes = fs::read(&eeg).unwrap();
    bytes[10] ^= 0xff;
    fs::write(&eeg, bytes).unwrap();
    let bad = kinetrace(&["validate", s(&dir)]);
    assert_ne!(code(&bad), 0);
    assert!(stdout(&bad).contains("eeg.f32"), "{}", stdout(&bad));

    let dir2 = synth_subject(tmp.path(), "S02", 2);
    let manifest = dir2.join("manifest.json");
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    let end0 = json["trials"][0]["end_sample"].as_u64().unwrap();
    json["trials"][1]["onset_sample"] = serde_json::json!(end0 - 5);
    fs::write(&manifest, serde_json::to_string(&json).unwrap()).unwrap();
    let overlap = kinetrace(&["validate", s(&dir2)]);
    assert_eq!(code(&overlap), 2);
    assert!(stdout(&overlap).contains("trial 1"), "{}", stdout(&overlap));

    let missing = kinetrace(&["validate", s(&tmp.path().join("nope"))]);
    assert_eq!(code(&missing), 4);
}

#[test]
fn synth_is_reproducible_and_valid() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let da = synth_subject(a.path(), "S01", 5);
    let db = synth_subject(b.path(), "S01", 5);
    for f in ["manifest.json", "eeg.f32", "kin.f32", "ground_truth.json"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
    }
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(da.join("ground_truth.json")).unwrap()).unwrap();
    assert_eq!(truth["mapping"], "nonlinear");
    assert_eq!(code(&kinetrace(&["validate", s(&da)])), 0);
}

#[test]
fn train_writes_reloadable_deterministic_model() {
    let tmp = TempDir::new().unwrap();
    let subj = synth_subject(tmp.path(), "S01", 3);
    let cfg = write_config(tmp.path(), "run.toml", &format!("subjects = [\"S01\"]\nlags = [{{ lag_far_ms = 150, lag_near_ms = 0 }}]\n{FAST}"));
    let run = |out: &str, decoder: &str| {
        let out = tmp.path().join(out);
        let o = kinetrace(&["train", "--config", s(&cfg), "--out", s(&out), "--decoder", decoder]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a", "mlr");
    let b = run("b", "mlr");
    assert_eq!(fs::read(a.join("model.ktm")).unwrap(), fs::read(b.join("model.ktm")).unwrap());
    assert_eq!(fs::read(a.join("pcc.csv")).unwrap(), fs::read(b.join("pcc.csv")).unwrap());
    assert!(!a.join("train_report.csv").exists());
    let effective = fs::read_to_string(a.join("effective_config.toml")).unwrap();
    assert!(effective.contains("mlr") && effective.contains(s(&subj)));

    let traj = tmp.path().join("traj.csv");
    let o = kinetrace(&["export", "--model", s(&a.join("model.ktm")), "--subject", s(&subj), "--trial", "4", "--out", s(&traj)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&traj).unwrap();
    assert!(text.starts_with("time_s,meas_x,meas_y,meas_z,pred_x,pred_y,pred_z\n"));
    assert_eq!(text.lines().count(), 1 + 60);
    let bad_trial = kinetrace(&["export", "--model", s(&a.join("model.ktm")), "--subject", s(&subj), "--trial", "40", "--out", s(&traj)]);
    assert_eq!(code(&bad_trial), 2);

    let mlp = run("mlp", "mlp");
    let curve = fs::read_to_string(mlp.join("train_report.csv")).unwrap();
    assert!(curve.lines().count() >= 2);
}

#[test]
fn train_error_exit_codes() {
    let tmp = TempDir::new().unwrap();
    synth_subject(tmp.path(), "S01", 3);
    let out = tmp.path().join("out");
    let missing = write_config(tmp.path(), "missing.toml", "subjects = [\"S09\"]\n");
    assert_eq!(code(&kinetrace(&["train", "--config", s(&missing), "--out", s(&out)])), 4);
    let unknown = write_config(tmp.path(), "unknown.toml", "subjects = [\"S01\"]\nepochs = 3\n");
    assert_eq!(code(&kinetrace(&["train", "--config", s(&unknown), "--out", s(&out)])), 2);
    assert!(!out.exists());

    let diverge = write_config(
        tmp.path(),
        "diverge.toml",
        &format!("subjects = [\"S01\"]\ndecoders = [\"mlp\"]\nlags = [{{ lag_far_ms = 150, lag_near_ms = 0 }}]\n{FAST}adam = {{ learning_rate = 1e200 }}\n"),
    );
    let o = kinetrace(&["train", "--config", s(&diverge), "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));
}

#[test]
fn environment_overrides_file_and_flags_override_environment() {
    let tmp = TempDir::new().unwrap();
    synth_subject(tmp.path(), "S01", 3);
    let cfg = write_config(tmp.path(), "run.toml", &format!("subjects = [\"S01\"]\nseed = 1\n{FAST}"));
    let out = tmp.path().join("o");
    let o = kinetrace_env(&["train", "--config", s(&cfg), "--out", s(&out), "--lag-ms", "150"], &[("KINETRACE_SEED", "7")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let effective = fs::read_to_string(out.join("effective_config.toml")).unwrap();
    assert!(effective.contains("seed = 7"), "{effective}");
    let o = kinetrace_env(&["train", "--config", s(&cfg), "--out", s(&out), "--lag-ms", "150", "--seed", "8"], &[("KINETRACE_SEED", "7")]);
    assert_eq!(code(&o), 0);
    assert!(fs::read_to_string(out.join("effective_config.toml")).unwrap().contains("seed = 8"));
}

#[test]
fn one_cell_sweep_matches_train() {
    let tmp = TempDir::new().unwrap();
    synth_subject(tmp.path(), "S01", 4);
    let cfg = write_config(
        tmp.path(),
        "run.toml",
        &format!("subjects = [\"S01\"]\ndecoders = [\"mlp\"]\nlags = [{{ lag_far_ms = 200, lag_near_ms = 100 }}]\n{FAST}"),
    );
    let t = tmp.path().join("train");
    let w = tmp.path().join("sweep");
    assert_eq!(code(&kinetrace(&["train", "--config", s(&cfg), "--out", s(&t)])), 0);
    assert_eq!(code(&kinetrace(&["sweep", "--config", s(&cfg), "--out", s(&w), "--jobs", "2"])), 0);
    assert_eq!(fs::read_to_string(t.join("pcc.csv")).unwrap(), fs::read_to_string(w.join("sweep.csv")).unwrap());
}

#[test]
fn resumed_sweep_matches_uninterrupted() {
    let tmp = TempDir::new().unwrap();
    synth_subject(tmp.path(), "S01", 1);
    synth_subject(tmp.path(), "S02", 2);
    let cfg = write_config(
        tmp.path(),
        "run.toml",
        &format!(
            "subjects = [\"S01\", \"S02\"]\nbands = [\"none\", \"FB2\"]\ndecoders = [\"mlr\", \"mlp\"]\n\
             lags = [{{ lag_far_ms = 100, lag_near_ms = 0 }}, {{ lag_far_ms = 150, lag_near_ms = 50 }}]\n{FAST}"
        ),
    );
    let full = tmp.path().join("full");
    let o = kinetrace(&["sweep", "--config", s(&cfg), "--out", s(&full), "--jobs", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let expected = fs::read_to_string(full.join("sweep.csv")).unwrap();
    assert_eq!(expected.lines().count(), 1 + 16 * 3 + 8 * 3);

    // Keep five finished cells plus a torn sixth line, as after a crash.
    let resumed = tmp.path().join("resumed");
    fs::create_dir_all(&resumed).unwrap();
    let ledger = fs::read_to_string(full.join("ledger.jsonl")).unwrap();
    let mut partial: String = ledger.lines().take(5).map(|l| format!("{l}\n")).collect();
    partial.push_str(&ledger.lines().nth(5).unwrap()[..20]);
    fs::write(resumed.join("ledger.jsonl"), partial).unwrap();
    let o = kinetrace(&["sweep", "--config", s(&cfg), "--out", s(&resumed), "--jobs", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(resumed.join("sweep.csv")).unwrap(), expected);
    assert_eq!(fs::read_to_string(resumed.join("ledger.jsonl")).unwrap().lines().count(), 16);

    // A finished sweep reruns without new work.
    let o = kinetrace(&["sweep", "--config", s(&cfg), "--out", s(&resumed)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(resumed.join("ledger.jsonl")).unwrap().lines().count(), 16);
    assert_eq!(fs::read_to_string(resumed.join("sweep.csv")).unwrap(), expected);
}

#[test]
fn loso_tests_each_subject_once() {
    let tmp = TempDir::new().unwrap();
    for (i, id) in ["S01", "S02", "S03"].iter().enumerate() {
        synth_subject(tmp.path(), id, i as u64);
    }
    let cfg = write_config(
        tmp.path(),
        "run.toml",
        &format!("subjects = [\"S01\", \"S02\", \"S03\"]\nlags = [{{ lag_far_ms = 100, lag_near_ms = 0 }}]\nbands = [\"none\"]\n{FAST}"),
    );
    let out = tmp.path().join("loso");
    let o = kinetrace(&["loso", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    for id in ["S01", "S02", "S03"] {
        assert_eq!(csv.lines().filter(|l| l.contains(&format!(",{id},"))).count(), 3, "{csv}");
    }
    assert!(fs::read_to_string(out.join("effective_config.toml")).unwrap().contains("loso = true"));

    let held = tmp.path().join("held");
    let o = kinetrace(&["train", "--config", s(&cfg), "--out", s(&held), "--held-out", "S02"]);
    assert_eq!(code(&o), 2, "held_out without loso is rejected");
    let loso_cfg = write_config(tmp.path(), "loso.toml", &format!("loso = true\n{}", fs::read_to_string(&cfg).unwrap()));
    let o = kinetrace(&["train", "--config", s(&loso_cfg), "--out", s(&held), "--held-out", "S02"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pcc = fs::read_to_string(held.join("pcc.csv")).unwrap();
    let from_sweep: Vec<&str> = csv.lines().filter(|l| l.contains(",S02,")).collect();
    let from_train: Vec<&str> = pcc.lines().filter(|l| l.contains(",S02,")).collect();
    assert_eq!(from_sweep, from_train);
}
