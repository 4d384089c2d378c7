//! Experiment orchestration: data preparation, the staged pipeline per
//! variant and seed, metrics, update accounting, artifacts and plots.

mod accounting;
mod config;
mod pipeline;
mod plots;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use accounting::{caustg_closed_form, count_updated_params, update_closed_form, UpdateAccounting, UpdateLayout};
pub use config::{community_synth, temporal_shift_synth, BackboneSpec, DataSource, ExperimentConfig, ScenarioConfig, TimeSplit, Variant};
pub use pipeline::{
    evaluate, load_data, mae, new_bank, prepare, prepare_with, pretrained_bank, prompt_plumbing_size, removal_control, test_backbone,
    train_variant, warm_up, Phase, Prepared, RemovalControl, SeedReport, Trained, WarmState,
};
pub use plots::{emit_plots, PlotFiles};

use crate::backbone::{load_checkpoint, save_checkpoint, Backbone};
use crate::disentangle::ParameterPartition;
use crate::error::{Error, Result};
use crate::prompt::PretrainHistory;
use crate::scenarios::ScenarioTag;
use crate::train::Transcript;

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub test_mae_mean: f64,
    pub test_mae_std: f64,
    pub val_mae_mean: f64,
    pub seeds: Vec<SeedReport>,
}

impl VariantSummary {
    fn new(variant: Variant, seeds: Vec<SeedReport>) -> VariantSummary {
        let (test_mae_mean, test_mae_std) = mean_std(&seeds.iter().map(|s| s.test_mae).collect::<Vec<_>>());
        let (val_mae_mean, _) = mean_std(&seeds.iter().map(|s| s.val_mae).collect::<Vec<_>>());
        VariantSummary { variant, test_mae_mean, test_mae_std, val_mae_mean, seeds }
    }

    pub fn test_maes(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.test_mae).collect()
    }
}

/// Sizes of the split, for the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub scenario: ScenarioTag,
    pub train_windows: usize,
    pub val_windows: usize,
    pub test_windows: usize,
    pub adapt_rows: Vec<usize>,
    pub train_nodes: usize,
    pub test_only_nodes: Vec<usize>,
    pub removed_nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub split: SplitSummary,
    pub variants: Vec<VariantSummary>,
    #[serde(default)]
    pub artifacts: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn variant(&self, v: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == v)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<ExperimentReport> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))
    }
}

fn split_summary(prep: &Prepared) -> SplitSummary {
    SplitSummary {
        scenario: prep.manifest.scenario,
        train_windows: prep.train_windows.len(),
        val_windows: prep.val_windows.len(),
        test_windows: prep.test_windows.len(),
        adapt_rows: prep.adapt_sets.iter().map(|s| s.len()).collect(),
        train_nodes: prep.manifest.train_nodes.len(),
        test_only_nodes: prep.manifest.test_only_nodes.clone(),
        removed_nodes: prep.manifest.removed_nodes.clone(),
    }
}

/// Directory of one (variant, seed) run below `out`.
pub fn run_dir(out: &Path, variant: Variant, seed: u64) -> PathBuf {
    out.join(variant.as_str()).join(format!("seed_{seed}"))
}

/// Scalars of a trained run that are not tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainedMeta {
    variant: Variant,
    seed: u64,
    pretrain: Option<PretrainHistory>,
    warmup_epochs: usize,
    warmup_stopped_early: bool,
    finetune_adaptive: usize,
    finetune_plumbing: usize,
    neocortex_hash_before: String,
    neocortex_hash_after: String,
    val_mae: f64,
}

/// Saves backbone and bank checkpoints, partition, transcript and metadata.
pub fn save_trained(trained: &Trained, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let epochs = trained.transcript.records.len();
    save_checkpoint(dir.join("backbone.ckpt"), &trained.model.params, "finetune", epochs, trained.seed)?;
    save_checkpoint(dir.join("bank.ckpt"), &trained.bank.params, "finetune", epochs, trained.seed)?;
    std::fs::write(dir.join("partition.json"), serde_json::to_string(&trained.partition)?)?;
    trained.transcript.write_jsonl(dir.join("train_transcript.jsonl"))?;
    pipeline::write_prompt_exports(trained, dir)?;
    let meta = TrainedMeta {
        variant: trained.variant,
        seed: trained.seed,
        pretrain: trained.pretrain.clone(),
        warmup_epochs: trained.warmup_epochs,
        warmup_stopped_early: trained.warmup_stopped_early,
        finetune_adaptive: trained.finetune_adaptive,
        finetune_plumbing: trained.finetune_plumbing,
        neocortex_hash_before: trained.neocortex_hash_before.clone(),
        neocortex_hash_after: trained.neocortex_hash_after.clone(),
        val_mae: trained.val_mae,
    };
    std::fs::write(dir.join("trained.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Restores a run saved by [`save_trained`].
pub fn load_trained(prep: &Prepared, dir: &Path) -> Result<Trained> {
    let load = |name: &str| -> Result<String> {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::Load { path: p, reason: e.to_string() })
    };
    let meta: TrainedMeta = serde_json::from_str(&load("trained.json")?)?;
    let cfg = &prep.config;
    let ds = &prep.train_phase.ds;
    let bcfg = cfg.backbone.config(ds.n_nodes(), ds.n_features(), cfg.kappa, cfg.horizon);
    let mut model = Backbone::new(bcfg, Some(ds.adjacency.view()), 0)?;
    load_checkpoint(dir.join("backbone.ckpt"), &mut model.params)?;
    let mut bank = new_bank(prep, meta.seed)?;
    load_checkpoint(dir.join("bank.ckpt"), &mut bank.params)?;
    let partition: ParameterPartition = serde_json::from_str(&load("partition.json")?)?;
    let transcript = Transcript::read_jsonl(dir.join("train_transcript.jsonl"))?;
    Ok(Trained {
        variant: meta.variant,
        seed: meta.seed,
        model,
        bank,
        partition,
        transcript,
        pretrain: meta.pretrain,
        warmup_epochs: meta.warmup_epochs,
        warmup_stopped_early: meta.warmup_stopped_early,
        finetune_adaptive: meta.finetune_adaptive,
        finetune_plumbing: meta.finetune_plumbing,
        neocortex_hash_before: meta.neocortex_hash_before,
        neocortex_hash_after: meta.neocortex_hash_after,
        val_mae: meta.val_mae,
        prompt_exports: Vec::new(),
    })
}

/// Report over already evaluated seeds of one variant.
pub fn single_variant_report(prep: &Prepared, variant: Variant, seeds: Vec<SeedReport>, artifacts: Vec<PathBuf>) -> ExperimentReport {
    ExperimentReport { config: prep.config.clone(), split: split_summary(prep), variants: vec![VariantSummary::new(variant, seeds)], artifacts }
}

/// Writes the transcript and prompt exports of an evaluated run and points
/// the seed report at the transcript.
pub fn write_run(out: &Path, report: &mut SeedReport, trained: &Trained, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    let dir = run_dir(out, trained.variant, trained.seed);
    std::fs::create_dir_all(&dir)?;
    let tpath = dir.join("transcript.jsonl");
    trained.transcript.write_jsonl(&tpath)?;
    artifacts.push(tpath.clone());
    artifacts.extend(pipeline::write_prompt_exports(trained, &dir)?);
    report.transcript = Some(tpath.strip_prefix(out).map(Path::to_path_buf).unwrap_or(tpath));
    Ok(())
}

/// Runs `variants` over every configured seed. Warm-up is shared by all
/// variants of a seed, and so is prompt pre-training.
pub fn run_variants(cfg: &ExperimentConfig, variants: &[Variant], out: Option<&Path>) -> Result<ExperimentReport> {
    let prep = prepare(cfg)?;
    run_prepared(&prep, variants, out)
}

pub fn run_prepared(prep: &Prepared, variants: &[Variant], out: Option<&Path>) -> Result<ExperimentReport> {
    let cfg = &prep.config;
    let mut per_variant: Vec<Vec<SeedReport>> = vec![Vec::new(); variants.len()];
    let mut artifacts = Vec::new();
    for &seed in &cfg.seeds {
        let warm = warm_up(prep, seed)?;
        if let Some(out) = out {
            let dir = out.join("warmup").join(format!("seed_{seed}"));
            std::fs::create_dir_all(&dir)?;
            artifacts.extend(warm.outcome.ledger.export(&dir)?);
        }
        let pretrained = if variants.iter().any(|v| v.pretrains()) { Some(pretrained_bank(prep, seed)?) } else { None };
        for (k, &variant) in variants.iter().enumerate() {
            let trained = train_variant(prep, &warm, pretrained.as_ref(), variant)?;
            let (mut report, trained) = evaluate(prep, trained)?;
            if let Some(out) = out {
                write_run(out, &mut report, &trained, &mut artifacts)?;
            }
            per_variant[k].push(report);
        }
    }
    let report = ExperimentReport {
        config: cfg.clone(),
        split: split_summary(prep),
        variants: variants.iter().zip(per_variant).map(|(&v, seeds)| VariantSummary::new(v, seeds)).collect(),
        artifacts,
    };
    if let Some(out) = out {
        report.write_json(out.join("report.json"))?;
    }
    Ok(report)
}

/// The configured variant over every seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_variants(cfg, &[cfg.variant], None)
}

/// Every ablation variant over every seed, sharing warm-up per seed.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_variants(cfg, &Variant::ALL, None)
}
