//! End-to-end runs of the `resan` binary: train on a tiny synthetic set,
//! evaluate the checkpoint, trace a sentence, compare sampler speed, and
//! run the gradient suite.

use std::path::Path;
use std::process::Command;

fn resan() -> Command {
    Command::new(env!("CARGO_BIN_EXE_resan"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("binary runs");
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(
        out.status.success(),
        "command failed\nstdout:\n{stdout}\nstderr:\n{stderr}"
    );
    stdout
}

#[test]
fn full_workflow_on_tiny_synthetic_task() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        r#"{
            "hidden": 8,
            "train_count": 200,
            "dev_count": 50,
            "test_count": 50,
            "train": {
                "gamma": 5e-5, "lambda": 0.01, "keep_prob": 1.0,
                "patience": 2, "min_improvement": 1e-3,
                "rho": 0.95, "eps_opt": 1e-6,
                "batch_size": 16, "seed": 3,
                "use_baseline": false, "samples_per_item": 1,
                "max_epochs": 2, "penalty_both_vectors": true,
                "early_stop_accuracy": null
            }
        }"#,
    )
    .unwrap();

    let stdout = run_ok(
        resan()
            .args(["train", "--task", "synthetic", "--seed", "3", "--out"])
            .arg(&out)
            .arg("--config")
            .arg(&config_path),
    );
    assert!(stdout.contains("epoch"), "{stdout}");
    for file in [
        "checkpoint.json",
        "metrics.jsonl",
        "run_config.json",
        "synthetic_test.jsonl",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(metrics.contains("mean_selection_fraction_head"));
    let snapshot = std::fs::read_to_string(out.join("run_config.json")).unwrap();
    assert!(snapshot.contains("\"seed\": 3"));
    assert!(snapshot.contains("config.json"));

    let eval_out = run_ok(
        resan()
            .args(["eval", "--select-mode", "force-all", "--checkpoint"])
            .arg(out.join("checkpoint.json"))
            .arg("--data")
            .arg(out.join("synthetic_test.jsonl")),
    );
    assert!(eval_out.contains("accuracy="), "{eval_out}");
    assert!(eval_out.contains("examples=50"), "{eval_out}");

    let trace_path = dir.path().join("trace.jsonl");
    let trace_out = run_ok(
        resan()
            .args(["trace", "--sentence", "key w01 w02 w03 val0", "--checkpoint"])
            .arg(out.join("checkpoint.json"))
            .arg("--out")
            .arg(&trace_path),
    );
    assert!(trace_out.contains("tokens=5"), "{trace_out}");
    let trace_text = std::fs::read_to_string(&trace_path).unwrap();
    assert!(trace_text.contains("\"attention\""));
    assert!(trace_text.contains("\"gate_mean\""));
}

#[test]
fn bench_sampling_prints_a_table() {
    let stdout = run_ok(resan().args([
        "bench-sampling",
        "--n",
        "16,32",
        "--repeats",
        "3",
        "--dim",
        "8",
    ]));
    assert!(stdout.contains("iterative"), "{stdout}");
    assert!(stdout.contains("speedup"), "{stdout}");
    assert!(stdout.lines().count() >= 4, "{stdout}");
}

#[test]
fn gradcheck_reports_all_passes() {
    let stdout = run_ok(resan().args(["gradcheck", "--seed", "7"]));
    assert!(stdout.contains("PASS"), "{stdout}");
    assert!(!stdout.contains("FAIL"), "{stdout}");
    assert!(stdout.contains("0 failed"), "{stdout}");
}

#[test]
fn unknown_variant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let status = resan()
        .args(["train", "--task", "synthetic", "--variant", "bogus", "--out"])
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("unknown variant"));
}

#[test]
fn snli_training_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("pairs.jsonl");
    let mut lines = String::new();
    for i in 0..24 {
        let label = ["entailment", "neutral", "contradiction"][i % 3];
        lines.push_str(&format!(
            "{{\"sentence1\": \"a man walks {i}\", \"sentence2\": \"someone moves {i}\", \"gold_label\": \"{label}\"}}\n"
        ));
    }
    std::fs::write(&data, &lines).unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        format!(
            r#"{{
                "hidden": 8,
                "train_data": {0:?},
                "dev_data": {0:?},
                "train": {{
                    "gamma": 5e-5, "lambda": 0.01, "keep_prob": 1.0,
                    "patience": 2, "min_improvement": 1e-3,
                    "rho": 0.95, "eps_opt": 1e-6,
                    "batch_size": 8, "seed": 1,
                    "use_baseline": false, "samples_per_item": 1,
                    "max_epochs": 1, "penalty_both_vectors": true,
                    "early_stop_accuracy": null
                }}
            }}"#,
            data.display().to_string()
        ),
    )
    .unwrap();
    let out = dir.path().join("snli-run");
    let stdout = run_ok(
        resan()
            .args(["train", "--task", "snli", "--out"])
            .arg(&out)
            .arg("--config")
            .arg(&config_path),
    );
    assert!(stdout.contains("epoch   1"), "{stdout}");
    assert!(out.join("checkpoint.json").exists());

    let eval_out = run_ok(
        resan()
            .args(["eval", "--select-mode", "force-all", "--checkpoint"])
            .arg(out.join("checkpoint.json"))
            .arg("--data")
            .arg(&data),
    );
    assert!(eval_out.contains("examples=24"), "{eval_out}");
}

#[test]
fn sick_training_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("pairs.tsv");
    let mut lines = String::new();
    for i in 0..12 {
        let rating = 1.0 + (i % 9) as f64 * 0.5;
        lines.push_str(&format!(
            "a dog runs {i}\tan animal is running {i}\t{rating}\n"
        ));
    }
    std::fs::write(&data, &lines).unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        format!(
            r#"{{"hidden": 8, "train_data": {0:?}, "dev_data": {0:?},
                "train": {{"gamma": 5e-5, "lambda": 0.01, "keep_prob": 1.0,
                "patience": 2, "min_improvement": 1e-3, "rho": 0.95, "eps_opt": 1e-6,
                "batch_size": 6, "seed": 2, "use_baseline": false, "samples_per_item": 1,
                "max_epochs": 1, "penalty_both_vectors": true, "early_stop_accuracy": null}}}}"#,
            data.display().to_string()
        ),
    )
    .unwrap();
    let out = dir.path().join("sick-run");
    run_ok(
        resan()
            .args(["train", "--task", "sick", "--out"])
            .arg(&out)
            .arg("--config")
            .arg(&config_path),
    );
    let eval_out = run_ok(
        resan()
            .args(["eval", "--select-mode", "force-all", "--checkpoint"])
            .arg(out.join("checkpoint.json"))
            .arg("--data")
            .arg(&data),
    );
    assert!(eval_out.contains("mse="), "{eval_out}");
}

#[test]
fn embeddings_file_feeds_training(){
    let dir = tempfile::tempdir().unwrap();
    // 4-dimensional embeddings covering part of the corpus; the rest go OOV
    let emb = dir.path().join("vectors.txt");
    std::fs::write(&emb, "a 0.1 0.2 0.3 0.4\ndog 0.5 -0.5 0.25 0.0\n").unwrap();
    let data = dir.path().join("pairs.jsonl");
    let mut lines = String::new();
    for i in 0..9 {
        let label = ["entailment", "neutral", "contradiction"][i % 3];
        lines.push_str(&format!(
            "{{\"sentence1\": \"a dog barks {i}\", \"sentence2\": \"a dog is loud {i}\", \"gold_label\": \"{label}\"}}\n"
        ));
    }
    std::fs::write(&data, &lines).unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        format!(
            r#"{{"hidden": 4, "train_data": {0:?}, "dev_data": {0:?}, "embeddings": {1:?},
                "train": {{"gamma": 5e-5, "lambda": 0.01, "keep_prob": 1.0,
                "patience": 2, "min_improvement": 1e-3, "rho": 0.95, "eps_opt": 1e-6,
                "batch_size": 4, "seed": 5, "use_baseline": false, "samples_per_item": 1,
                "max_epochs": 1, "penalty_both_vectors": true, "early_stop_accuracy": null}}}}"#,
            data.display().to_string(),
            emb.display().to_string()
        ),
    )
    .unwrap();
    let out = dir.path().join("emb-run");
    run_ok(
        resan()
            .args(["train", "--task", "snli", "--out"])
            .arg(&out)
            .arg("--config")
            .arg(&config_path),
    );
    // the checkpoint embeds the frozen pre-trained vector verbatim
    let ckpt = std::fs::read_to_string(out.join("checkpoint.json")).unwrap();
    assert!(ckpt.contains("\"dog\""));
    assert!(Path::new(&out).join("run_config.json").exists());
}
