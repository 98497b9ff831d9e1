//! End-to-end tests of the `aa` binary: pipeline happy path with bitwise
//! rerun determinism, exit codes for caller mistakes vs bad data, lock
//! semantics, and report integrity flagging.

use std::path::{Path, PathBuf};
use std::process::Output;

use aa_core::util::file_sha256;

fn aa(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_aa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes a small experiment config and returns its path.
fn write_config(dir: &Path, seed: u64) -> PathBuf {
    let out_dir = dir.join("exp");
    let config = serde_json::json!({
        "seed": seed,
        "output_dir": out_dir,
        "generator": {
            "normal_classes": ["qcd", "top"],
            "anomaly_classes": ["wjet"],
            "unseen_classes": ["eft"],
            "per_class_count": 60,
            "split_fraction": 0.5
        },
        "training": {
            "lambda_aa": 0.5,
            "epochs": 2,
            "batch_size": 16,
            "learning_rate": 0.001,
            "optimizer": "adam"
        },
        "analysis": {
            "deltas": [0.2],
            "histogram_bins": 10
        }
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn run_pipeline(config: &str) {
    for args in [
        vec!["gen", "--config", config],
        vec!["train", "--config", config, "--phase", "prior"],
        vec!["train", "--config", config, "--phase", "aa"],
        vec!["eval", "--config", config, "--phase", "prior"],
        vec!["eval", "--config", config, "--phase", "aa"],
        vec!["scan", "--config", config, "--phase", "aa"],
        vec!["report", "--config", config],
    ] {
        let out = aa(&args);
        assert_ok(&out, &args.join(" "));
    }
}

#[test]
fn pipeline_runs_and_rerun_reproduces_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), 7);
    let config = config.to_str().unwrap();
    let exp = tmp.path().join("exp");

    run_pipeline(config);

    // The eval summary must reproduce the training report's final train
    // accuracy: both are computed from the same stored parameters.
    let prior_report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(exp.join("reports/prior_report.json")).unwrap(),
    )
    .unwrap();
    let prior_eval: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(exp.join("reports/prior_eval.json")).unwrap(),
    )
    .unwrap();
    let reported = prior_report["final_train_acc"].as_f64().unwrap();
    let measured = prior_eval["train_accuracy"].as_f64().unwrap();
    assert!(
        (reported - measured).abs() <= 1e-6,
        "eval train accuracy {measured} drifted from report {reported}"
    );

    // Key artifacts exist.
    for rel in [
        "config.json",
        "datasets/qcd.aajd",
        "datasets/qcd.json",
        "datasets/qcd_avg.pgm",
        "datasets/eft.aajd",
        "checkpoints/prior.aack",
        "checkpoints/aa.aack",
        "reports/prior_loss.csv",
        "reports/aa_report.json",
        "reports/prior_roc_top_vs_qcd.csv",
        "reports/prior_hist_eft.csv",
        "scores/aa_all.csv",
        "scores/aa_all.meta.json",
        "reports/aa_scan_eft_d0p2.csv",
        "reports/aa_scan_summary.json",
        "reports/experiment_report.json",
        "reports/experiment_summary.txt",
    ] {
        assert!(exp.join(rel).exists(), "missing artifact {rel}");
    }

    // Scan summary references the scanned classes.
    let scan: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(exp.join("reports/aa_scan_summary.json")).unwrap(),
    )
    .unwrap();
    assert!(scan["classes"]["wjet"].is_object());
    assert!(scan["classes"]["eft"].is_object());

    // Rerunning the whole pipeline in place reproduces every artifact
    // byte for byte.
    let tracked = [
        "datasets/qcd.aajd",
        "datasets/top.aajd",
        "datasets/wjet.aajd",
        "datasets/eft.aajd",
        "checkpoints/prior.aack",
        "checkpoints/aa.aack",
        "scores/prior_all.csv",
        "scores/aa_all.csv",
        "reports/prior_report.json",
        "reports/aa_loss.csv",
        "reports/aa_scan_summary.json",
        "reports/experiment_report.json",
        "reports/experiment_summary.txt",
    ];
    let before: Vec<String> = tracked
        .iter()
        .map(|rel| file_sha256(&exp.join(rel)).unwrap())
        .collect();
    run_pipeline(config);
    let after: Vec<String> = tracked
        .iter()
        .map(|rel| file_sha256(&exp.join(rel)).unwrap())
        .collect();
    assert_eq!(before, after, "rerun changed artifacts");
}

#[test]
fn seed_override_on_existing_directory_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), 7);
    let config = config.to_str().unwrap();
    assert_ok(&aa(&["gen", "--config", config]), "gen");
    let out = aa(&["gen", "--config", config, "--seed", "8"]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("different seed or generator"));
}

#[test]
fn aa_phase_without_prior_checkpoint_needs_cold_start() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), 11);
    let config = config.to_str().unwrap();
    assert_ok(&aa(&["gen", "--config", config]), "gen");

    let out = aa(&["train", "--config", config, "--phase", "aa"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("cold-start"), "stderr: {}", stderr(&out));

    let out = aa(&["train", "--config", config, "--phase", "aa", "--cold-start"]);
    assert_ok(&out, "cold-start aa train");
}

#[test]
fn unknown_config_field_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"seed": 1, "output_dir": "x", "typo_field": true}"#,
    )
    .unwrap();
    let out = aa(&["gen", "--config", path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("malformed config"));
}

#[test]
fn commands_before_gen_or_with_missing_data_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), 13);
    let config = config.to_str().unwrap();

    // No echo yet: caller mistake.
    let out = aa(&["train", "--config", config, "--phase", "prior"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("aa gen"));

    // Deleted dataset: bad/missing data.
    assert_ok(&aa(&["gen", "--config", config]), "gen");
    std::fs::remove_file(tmp.path().join("exp/datasets/top.aajd")).unwrap();
    let out = aa(&["train", "--config", config, "--phase", "prior"]);
    assert_eq!(exit_code(&out), 3);
    assert!(stderr(&out).contains("top"));
}

#[test]
fn malformed_score_file_is_a_parse_error_with_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), 17);
    let config = config.to_str().unwrap();
    assert_ok(&aa(&["gen", "--config", config]), "gen");
    assert_ok(&aa(&["train", "--config", config, "--phase", "prior"]), "prior");
    assert_ok(&aa(&["eval", "--config", config, "--phase", "prior"]), "eval");

    let csv = tmp.path().join("exp/scores/prior_all.csv");
    let mut text = std::fs::read_to_string(&csv).unwrap();
    text.push_str("9999,qcd,not_a_number,0.5\n");
    std::fs::write(&csv, text).unwrap();

    let out = aa(&["scan", "--config", config, "--phase", "prior"]);
    assert_eq!(exit_code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("line"), "stderr: {err}");
}

#[test]
fn tampered_checkpoint_is_flagged_but_report_still_writes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), 19);
    let config = config.to_str().unwrap();
    let exp = tmp.path().join("exp");
    run_pipeline(config);

    // Flip the last byte of the parameter blob.
    let ckpt = exp.join("checkpoints/aa.aack");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&ckpt, bytes).unwrap();

    let out = aa(&["report", "--config", config]);
    assert_ok(&out, "report after tampering");
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(exp.join("reports/experiment_report.json")).unwrap(),
    )
    .unwrap();
    let failures = report["integrity_failures"].as_array().unwrap();
    assert!(
        failures.iter().any(|f| f.as_str().unwrap().contains("aa.aack")),
        "failures: {failures:?}"
    );
    assert_eq!(
        report["artifacts"]["checkpoints/aa.aack"]["status"],
        "integrity_mismatch"
    );
    let summary =
        std::fs::read_to_string(exp.join("reports/experiment_summary.txt")).unwrap();
    assert!(summary.contains("FAILED"));
}

#[test]
fn report_errors_listing_missing_referenced_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), 23);
    let config = config.to_str().unwrap();
    let exp = tmp.path().join("exp");
    run_pipeline(config);

    std::fs::remove_file(exp.join("scores/aa_wjet.csv")).unwrap();
    std::fs::remove_file(exp.join("reports/prior_loss.csv")).unwrap();

    let out = aa(&["report", "--config", config]);
    assert_eq!(exit_code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("missing artifacts"), "stderr: {err}");
    assert!(err.contains("scores/aa_wjet.csv"), "stderr: {err}");
    assert!(err.contains("reports/prior_loss.csv"), "stderr: {err}");
}

#[test]
fn lock_file_blocks_a_second_writer() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), 29);
    let config = config.to_str().unwrap();
    let exp = tmp.path().join("exp");

    std::fs::create_dir_all(&exp).unwrap();
    std::fs::write(exp.join(".lock"), "424242\n").unwrap();
    let out = aa(&["gen", "--config", config]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("locked"), "stderr: {}", stderr(&out));

    std::fs::remove_file(exp.join(".lock")).unwrap();
    assert_ok(&aa(&["gen", "--config", config]), "gen after unlock");
    assert!(
        !exp.join(".lock").exists(),
        "lock not released after success"
    );
}

#[test]
fn lambda_override_is_recorded_in_the_run_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), 31);
    let config = config.to_str().unwrap();
    let exp = tmp.path().join("exp");
    assert_ok(&aa(&["gen", "--config", config]), "gen");
    assert_ok(&aa(&["train", "--config", config, "--phase", "prior"]), "prior");
    assert_ok(
        &aa(&[
            "train", "--config", config, "--phase", "aa", "--lambda-aa", "0.25",
        ]),
        "aa with lambda override",
    );
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(exp.join("reports/aa_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["config"]["lambda_aa"].as_f64().unwrap(), 0.25);
}

#[test]
fn shipped_configs_parse_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    for name in ["configs/desk.json", "configs/full_scale.json"] {
        let text = std::fs::read_to_string(root.join(name)).unwrap();
        let config: aa_cli::config::ExperimentConfig = serde_json::from_str(&text).unwrap();
        config.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let full: aa_cli::config::ExperimentConfig = serde_json::from_str(
        &std::fs::read_to_string(root.join("configs/full_scale.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(full.generator.per_class_count, 50000);
    assert_eq!(full.training.epochs, 100);
    assert_eq!(full.training.batch_size, 100);
    assert_eq!(full.training.lambda_aa, 0.5);
}
