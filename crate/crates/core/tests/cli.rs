use std::path::Path;
use std::process::{Command, Output};

use coms2t::experiment::{temporal_shift_synth, DataSource, ExperimentConfig, ExperimentReport, Variant};

fn coms2t(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coms2t")).args(args).arg("--out-dir").arg(out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn micro_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.data = DataSource::Synth(temporal_shift_synth(5, 6, 2));
    cfg.seeds = vec![0];
    cfg.plan.warmup.max_epochs = 3;
    cfg.plan.pretrain.epochs = 3;
    cfg.plan.finetune.epochs = 2;
    cfg.plan.adapt.epochs = 1;
    let path = dir.join("micro.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn theory_check_passes_and_writes_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = coms2t(&["theory-check"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
    assert!(dir.path().join("theory.json").exists());
    let index: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(index["command"], "theory-check");
}

#[test]
fn configuration_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let o = coms2t(&["train", "--config", missing.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);

    let bad = dir.path().join("bad.json");
    let mut json = serde_json::to_value(ExperimentConfig::desk_scale()).unwrap();
    json["variant"] = "non_everything".into();
    std::fs::write(&bad, json.to_string()).unwrap();
    let o = coms2t(&["ablate", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown variant"));

    std::fs::write(&bad, "not json").unwrap();
    let o = coms2t(&["theory-check", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn report_without_a_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = coms2t(&["report"], dir.path());
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn synth_writes_a_dataset_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let o = coms2t(&["synth", "--seed", "4"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let data = dir.path().join("dataset");
    assert!(data.is_dir() && std::fs::read_dir(&data).unwrap().count() > 0);
    let index: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(index["command"], "synth");
}

#[test]
fn train_adapt_report_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("run");

    let o = coms2t(&["train", "--config", cfg], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("full").join("seed_0").is_dir());

    let o = coms2t(&["adapt", "--config", cfg], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = ExperimentReport::read_json(out.join("report.json")).unwrap();
    assert_eq!(report.variants.len(), 1);
    assert_eq!(report.variants[0].variant, Variant::Full);
    assert!(report.variants[0].test_mae_mean.is_finite());

    let o = coms2t(&["report"], &out);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("full"));

    let o = coms2t(&["plot"], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = ExperimentReport::read_json(out.join("report.json")).unwrap();
    for p in report.artifacts.iter().filter(|p| p.extension().is_some_and(|e| e == "png")) {
        assert!(p.exists(), "{}", p.display());
    }
    assert!(out.join("full").join("seed_0").join("curves.png").exists());
}

#[test]
fn adapt_without_training_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro_config(dir.path());
    let o = coms2t(&["adapt", "--config", cfg.to_str().unwrap()], &dir.path().join("empty"));
    assert_ne!(code(&o), 0);
}
