//! End-to-end command contract tests against the compiled binary:
//! exit codes, emitted files, and input immutability.

use std::path::Path;
use std::process::Command;

fn vlrisk() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vlrisk"))
}

fn write_config(dir: &Path, patients: usize, epochs: usize) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        format!(
            "{{\"cohort\": {{\"n_patients\": {patients}, \"max_visits\": 4}}, \
              \"train\": {{\"epochs\": {epochs}, \"rl_epochs\": 1, \"batch_size\": 16}}}}"
        ),
    )
    .unwrap();
    path
}

#[test]
fn generate_writes_one_line_per_patient() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 40, 1);
    let out = dir.path().join("cohort.jsonl");
    let status = vlrisk()
        .args(["generate", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .args(["--seed", "7"])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 40);
}

#[test]
fn unknown_subcommand_exits_two_with_usage() {
    let out = vlrisk().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "{stderr}");
}

#[test]
fn missing_config_file_exits_two() {
    let out = vlrisk()
        .args(["generate", "--config", "/nonexistent/cfg.json", "--out", "/tmp/x.jsonl"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupted_gradient_hook_exits_one() {
    let out = vlrisk()
        .args(["gradcheck", "--seed", "3", "--model-coords", "4", "--corrupt-gradient"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn gradcheck_passes_clean() {
    let out = vlrisk()
        .args(["gradcheck", "--seed", "3", "--model-coords", "4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradcheck: PASS"));
}

#[test]
fn train_then_eval_produces_artifacts_and_leaves_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 60, 1);
    let cohort = dir.path().join("cohort.jsonl");
    assert!(vlrisk()
        .args(["generate", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&cohort)
        .status()
        .unwrap()
        .success());
    let cohort_bytes = std::fs::read(&cohort).unwrap();

    let train_out = dir.path().join("run");
    assert!(vlrisk()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--cohort"])
        .arg(&cohort)
        .args(["--out"])
        .arg(&train_out)
        .status()
        .unwrap()
        .success());
    for artifact in ["metrics.csv", "checkpoint.bin", "checkpoint.json", "graph.json"] {
        assert!(train_out.join(artifact).exists(), "missing {artifact}");
    }
    let metrics = std::fs::read_to_string(train_out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,split,loss_total"));
    assert_eq!(std::fs::read(&cohort).unwrap(), cohort_bytes, "train mutated its input");

    let eval_out = dir.path().join("eval");
    assert!(vlrisk()
        .args(["eval", "--config"])
        .arg(&cfg)
        .args(["--cohort"])
        .arg(&cohort)
        .args(["--checkpoint"])
        .arg(train_out.join("checkpoint"))
        .args(["--out"])
        .arg(&eval_out)
        .status()
        .unwrap()
        .success());
    let preds = std::fs::read_to_string(eval_out.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 60);
    let first: serde_json::Value = serde_json::from_str(preds.lines().next().unwrap()).unwrap();
    for key in ["patient_id", "proba", "s", "actions", "review_flag"] {
        assert!(first.get(key).is_some(), "prediction rows need `{key}`");
    }
    assert!(eval_out.join("metrics.csv").exists());
    assert!(eval_out.join("reliability.csv").exists());
    assert_eq!(std::fs::read(&cohort).unwrap(), cohort_bytes, "eval mutated its input");
}

#[test]
fn checkpoint_round_trips_bitwise() {
    use vlrisk_cli::io::checkpoint::{load_checkpoint, save_checkpoint};
    use vlrisk_core::cohort::{generate_cohort, CohortConfig};
    use vlrisk_core::config::TrainConfig;
    use vlrisk_core::training::train;

    let cohort = generate_cohort(&CohortConfig {
        n_patients: 60,
        max_visits: 3,
        seed: 5,
        ..CohortConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        rl_epochs: 1,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let outcome = train(&cohort, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("checkpoint");
    save_checkpoint(&stem, &outcome).unwrap();
    let loaded = load_checkpoint(&stem).unwrap();

    // every parameter and momentum copy identical to the bit
    let before: Vec<_> = outcome
        .model
        .parameters()
        .into_iter()
        .chain(outcome.model.momentum_parameters())
        .collect();
    let after: Vec<_> = loaded
        .model
        .parameters()
        .into_iter()
        .chain(loaded.model.momentum_parameters())
        .collect();
    assert_eq!(before.len(), after.len());
    for ((na, ta), (nb, tb)) in before.iter().zip(&after) {
        assert_eq!(na, nb);
        let (va, vb) = (ta.to_vec(), tb.to_vec());
        assert!(
            va.iter().zip(&vb).all(|(x, y)| x.to_bits() == y.to_bits()),
            "parameter {na} drifted through the checkpoint"
        );
    }
    assert_eq!(loaded.model.head.temperature, outcome.model.head.temperature);
    assert_eq!(loaded.model.review_threshold, outcome.model.review_threshold);
    assert_eq!(loaded.baseline, outcome.baseline);
    assert_eq!(loaded.rng, outcome.rng);
    assert_eq!(loaded.epoch, outcome.epochs_done);
    // optimizer state arrays round-trip too
    let (steps, arrays) = outcome.optimizer.state_arrays(&outcome.model.parameters());
    assert_eq!(loaded.optimizer_steps, steps);
    for (name, values) in arrays {
        let stored = loaded.optimizer_state.get(&name).unwrap();
        assert!(values.iter().zip(stored).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
