use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use super::accounting::{count_updated_params, UpdateAccounting, UpdateLayout};
use super::config::{DataSource, ExperimentConfig, ScenarioConfig, TimeSplit, Variant};
use crate::backbone::{AdjacencyNorm, Backbone};
use crate::data::{
    load_dataset, make_windows, observation_windows, synth_generate, NormStats, SpatialEnv, SpatioTemporalDataset, TemporalEnv,
    TrendScale, WindowSet,
};
use crate::disentangle::{build_partition, ParameterPartition, PartitionStats};
use crate::error::{shape_err, Error, Result};
use crate::prompt::{pretrain_prompts, Encoder, PretrainConfig, PretrainHistory, PromptBank, PromptConfig, PromptExport, SslSet};
use crate::scenarios::{
    node_copy_adjacency, node_involvement, node_removal, remove_nodes, split_interval, split_month, ScenarioTag, SplitManifest,
};
use crate::train::{predict, run_finetune, run_warmup, test_time_adapt, PromptContext, Transcript, UnitRecord, WarmupOutcome};

/// Mean absolute error over every element.
pub fn mae(pred: ndarray::ArrayViewD<f64>, target: ndarray::ArrayViewD<f64>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(shape_err(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(target.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

/// One node set of the experiment with its normalized data and
/// environment descriptors.
#[derive(Debug, Clone)]
pub struct Phase {
    /// Original node indices, in model order.
    pub nodes: Vec<usize>,
    pub ds: SpatioTemporalDataset,
    pub spatial: SpatialEnv,
    pub temporal: TemporalEnv,
    pub ctx: PromptContext,
}

impl Phase {
    fn build(normalized: &SpatioTemporalDataset, all_spatial: &SpatialEnv, nodes: Vec<usize>, scale: TrendScale, cfg: &ExperimentConfig) -> Phase {
        let ds = normalized.select_nodes(&nodes);
        let spatial = all_spatial.select(&nodes);
        let trend = TemporalEnv::raw_trend(normalized, &nodes, cfg.kappa);
        let temporal = TemporalEnv::build(&ds, &trend, scale, cfg.descriptor_width);
        let ctx = PromptContext::build(&spatial, &temporal);
        Phase { nodes, ds, spatial, temporal, ctx }
    }
}

/// Data, splits and derived sets shared by every variant and seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub raw: SpatioTemporalDataset,
    pub manifest: SplitManifest,
    pub norm: NormStats,
    pub train_phase: Phase,
    pub test_phase: Phase,
    pub train_windows: WindowSet,
    pub val_windows: WindowSet,
    pub test_windows: WindowSet,
    pub ssl_train: SslSet,
    pub ssl_val: SslSet,
    /// One self-supervised set per adaptation event, in time order.
    pub adapt_sets: Vec<SslSet>,
}

fn time_manifest(ds: &SpatioTemporalDataset, split: &TimeSplit) -> Result<SplitManifest> {
    match split {
        TimeSplit::Interval(s) => split_interval(ds, s),
        TimeSplit::Month(s) => split_month(ds, s),
    }
}

pub fn load_data(source: &DataSource) -> Result<SpatioTemporalDataset> {
    match source {
        DataSource::Path(p) => load_dataset(p),
        DataSource::Synth(s) => synth_generate(s),
    }
}

fn manifest_for(ds: &SpatioTemporalDataset, scenario: &ScenarioConfig) -> Result<SplitManifest> {
    match scenario {
        ScenarioConfig::TempInterval { split } => split_interval(ds, split),
        ScenarioConfig::TempMonth { split } => split_month(ds, split),
        ScenarioConfig::NodeInvolve { base, fraction, seed } => node_involvement(ds, &time_manifest(ds, base)?, *fraction, *seed),
        ScenarioConfig::NodeRemove { base, fraction, seed } => node_removal(ds, &time_manifest(ds, base)?, *fraction, *seed),
    }
}

/// Cuts `windows` into `events` chronological chunks.
fn chunk_windows(windows: &WindowSet, events: usize) -> Vec<WindowSet> {
    let n = windows.len();
    (0..events)
        .map(|k| {
            let picks: Vec<usize> = (k * n / events..(k + 1) * n / events).collect();
            windows.subset(&picks)
        })
        .collect()
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let raw = load_data(&cfg.data)?;
    prepare_with(cfg, raw)
}

pub fn prepare_with(cfg: &ExperimentConfig, raw: SpatioTemporalDataset) -> Result<Prepared> {
    let manifest = manifest_for(&raw, &cfg.scenario)?;
    let norm = NormStats::fit(&raw, &manifest.train, &manifest.train_nodes);
    let normalized = norm.normalize(&raw);
    let all_spatial = SpatialEnv::build(&raw, cfg.descriptor_width);
    let train_trend = TemporalEnv::raw_trend(&normalized, &manifest.train_nodes, cfg.kappa);
    let scale = TrendScale::fit(&train_trend, &manifest.train);

    let train_phase = Phase::build(&normalized, &all_spatial, manifest.train_nodes.clone(), scale, cfg);
    let test_nodes = match manifest.scenario {
        ScenarioTag::NodeInvolve => manifest.train_nodes.iter().chain(&manifest.test_only_nodes).copied().collect(),
        _ => manifest.test_nodes(),
    };
    let test_phase = Phase::build(&normalized, &all_spatial, test_nodes, scale, cfg);

    let train_windows = make_windows(&train_phase.ds, cfg.kappa, cfg.horizon, &manifest.train)?;
    let val_windows = make_windows(&train_phase.ds, cfg.kappa, cfg.horizon, &manifest.val)?;
    let test_windows = make_windows(&test_phase.ds, cfg.kappa, cfg.horizon, &manifest.test)?;
    let ssl_train = SslSet::build(
        &train_phase.ds,
        &observation_windows(&train_phase.ds, cfg.kappa, &manifest.train)?,
        &train_phase.spatial,
        &train_phase.temporal,
    )?;
    let ssl_val = SslSet::build(
        &train_phase.ds,
        &observation_windows(&train_phase.ds, cfg.kappa, &manifest.val)?,
        &train_phase.spatial,
        &train_phase.temporal,
    )?;
    let events = cfg.plan.adapt.events;
    let adapt_sets = if events == 0 {
        Vec::new()
    } else {
        let obs = observation_windows(&test_phase.ds, cfg.kappa, &manifest.adapt)
            .map_err(|e| Error::Adapt(format!("adaptation slice: {e}")))?;
        if obs.len() < events {
            return Err(Error::Adapt(format!("{} adaptation windows for {events} events", obs.len())));
        }
        chunk_windows(&obs, events)
            .iter()
            .map(|w| SslSet::build(&test_phase.ds, w, &test_phase.spatial, &test_phase.temporal))
            .collect::<Result<_>>()?
    };
    Ok(Prepared {
        config: cfg.clone(),
        raw,
        manifest,
        norm,
        train_phase,
        test_phase,
        train_windows,
        val_windows,
        test_windows,
        ssl_train,
        ssl_val,
        adapt_sets,
    })
}

/// Per-stage seeds derived from one run seed.
#[derive(Debug, Clone, Copy)]
struct Seeds {
    model: u64,
    warmup: u64,
    bank: u64,
    pretrain: u64,
    finetune: u64,
    adapt: u64,
}

impl Seeds {
    fn new(seed: u64) -> Seeds {
        let base = seed.wrapping_mul(1_000_003);
        Seeds {
            model: base.wrapping_add(1),
            warmup: base.wrapping_add(2),
            bank: base.wrapping_add(3),
            pretrain: base.wrapping_add(4),
            finetune: base.wrapping_add(5),
            adapt: base.wrapping_add(6),
        }
    }
}

/// Backbone after warm-up, shared by every variant of one seed.
#[derive(Debug, Clone)]
pub struct WarmState {
    pub seed: u64,
    pub model: Backbone,
    pub outcome: WarmupOutcome,
    pub transcript: Transcript,
}

pub fn warm_up(prep: &Prepared, seed: u64) -> Result<WarmState> {
    let cfg = &prep.config;
    let s = Seeds::new(seed);
    let ds = &prep.train_phase.ds;
    let bcfg = cfg.backbone.config(ds.n_nodes(), ds.n_features(), cfg.kappa, cfg.horizon);
    let mut model = Backbone::new(bcfg, Some(ds.adjacency.view()), s.model)?;
    let mut transcript = Transcript::default();
    let outcome = run_warmup(&mut model, ds, &prep.train_windows, &prep.val_windows, &cfg.plan.warmup, s.warmup, &mut transcript)?;
    Ok(WarmState { seed, model, outcome, transcript })
}

pub fn new_bank(prep: &Prepared, seed: u64) -> Result<PromptBank> {
    let cfg = &prep.config;
    let mut pcfg = PromptConfig::standard(cfg.descriptor_width, cfg.prompt_dim, prep.raw.n_features(), cfg.backbone.hidden);
    pcfg.seed = Seeds::new(seed).bank;
    PromptBank::new(pcfg)
}

/// Freshly initialized bank after self-supervised pre-training.
pub fn pretrained_bank(prep: &Prepared, seed: u64) -> Result<(PromptBank, PretrainHistory)> {
    let mut bank = new_bank(prep, seed)?;
    let pcfg = PretrainConfig { seed: Seeds::new(seed).pretrain, ..prep.config.plan.pretrain.clone() };
    let hist = pretrain_prompts(&mut bank, &prep.ssl_train, &prep.ssl_val, &pcfg)?;
    Ok((bank, hist))
}

/// A variant after fine-tuning, before test-time adaptation.
#[derive(Debug, Clone)]
pub struct Trained {
    pub variant: Variant,
    pub seed: u64,
    pub model: Backbone,
    pub bank: PromptBank,
    pub partition: ParameterPartition,
    pub transcript: Transcript,
    pub pretrain: Option<PretrainHistory>,
    pub warmup_epochs: usize,
    pub warmup_stopped_early: bool,
    /// Adaptive backbone scalars and reachable bank scalars, summed over
    /// fine-tune iterations.
    pub finetune_adaptive: usize,
    pub finetune_plumbing: usize,
    pub neocortex_hash_before: String,
    pub neocortex_hash_after: String,
    pub val_mae: f64,
    pub prompt_exports: Vec<(String, PromptExport)>,
}

fn spatial_export(bank: &PromptBank, phase: &Phase) -> Result<PromptExport> {
    let prompts = bank.encode(Encoder::Spatial, phase.ctx.spatial.view())?;
    Ok(PromptExport { ids: phase.nodes.iter().map(|&i| phase.ds.node_ids.get(i).copied().unwrap_or(i as i64)).collect(), prompts })
}

/// Temporal prompts of the first day, one row per hour.
fn temporal_export(bank: &PromptBank, phase: &Phase) -> Result<PromptExport> {
    let per_hour = (3600 / phase.ds.interval_seconds).max(1) as usize;
    let steps: Vec<usize> = (0..24).map(|h| h * per_hour).filter(|&s| s < phase.ds.n_steps()).collect();
    let rows = phase.ctx.temporal.select(Axis(0), &steps);
    let prompts = bank.encode(Encoder::Temporal, rows.view())?;
    Ok(PromptExport { ids: steps.iter().map(|&s| s as i64).collect(), prompts })
}

/// Partition → (pre-trained) prompts → fine-tune, repeated `iterations`
/// times, for one variant.
pub fn train_variant(prep: &Prepared, warm: &WarmState, pretrained: Option<&(PromptBank, PretrainHistory)>, variant: Variant) -> Result<Trained> {
    let cfg = &prep.config;
    let seed = warm.seed;
    let s = Seeds::new(seed);
    let mut model = warm.model.clone();
    let mut ledger = warm.outcome.ledger.clone();
    let mut transcript = warm.transcript.clone();
    let (mut bank, pretrain) = match (variant.pretrains(), pretrained) {
        (true, Some((b, h))) => (b.clone(), Some(h.clone())),
        (true, None) => {
            let (b, h) = pretrained_bank(prep, seed)?;
            (b, Some(h))
        }
        (false, _) => (new_bank(prep, seed)?, None),
    };
    let mut plan = cfg.plan.finetune.clone();
    if !variant.pretrains() {
        plan.ssl_weight = 0.0;
    }
    let phase = &prep.train_phase;
    let mut exports = Vec::new();
    if variant.uses_prompts() {
        exports.push(("pretrain_spatial".to_string(), spatial_export(&bank, phase)?));
        exports.push(("pretrain_temporal".to_string(), temporal_export(&bank, phase)?));
    }

    let mut partition = ParameterPartition::all_trainable(&model.params);
    let (mut adaptive, mut plumbing) = (0, 0);
    let (mut hash_before, mut hash_after) = (String::new(), String::new());
    for it in 0..cfg.plan.iterations {
        partition = if variant.partitions() {
            build_partition(&model.params, &ledger, cfg.tau, cfg.lambda)?
        } else {
            ParameterPartition::all_trainable(&model.params)
        };
        partition.apply_to(&mut model.params)?;
        hash_before = model.params.hash_indices(partition.neocortex_indices());
        let ssl = (plan.ssl_weight > 0.0).then_some(&prep.ssl_train);
        let prompts = variant.uses_prompts().then_some((&mut bank, &phase.ctx));
        run_finetune(
            &mut model,
            &partition,
            prompts,
            ssl,
            &phase.ds,
            &prep.train_windows,
            &prep.val_windows,
            &plan,
            s.finetune.wrapping_add(it as u64),
            &mut transcript,
        )?;
        hash_after = model.params.hash_indices(partition.neocortex_indices());
        if plan.epochs > 0 {
            adaptive += model.params.len() - partition.neocortex_count();
            if variant.uses_prompts() {
                plumbing += prompt_plumbing_size(&bank, plan.ssl_weight > 0.0);
            }
        }
        ledger.update(&model.params)?;
    }
    if variant.uses_prompts() {
        exports.push(("finetune_spatial".to_string(), spatial_export(&bank, phase)?));
        exports.push(("finetune_temporal".to_string(), temporal_export(&bank, phase)?));
    }
    let prompts = variant.uses_prompts().then_some((&bank, &phase.ctx));
    let val_mae = crate::train::predict_mae(&model, prompts, &phase.ds, &prep.val_windows, &prep.norm)?;
    Ok(Trained {
        variant,
        seed,
        model,
        bank,
        partition,
        transcript,
        pretrain,
        warmup_epochs: warm.outcome.train_loss.len(),
        warmup_stopped_early: warm.outcome.stopped_early,
        finetune_adaptive: adaptive,
        finetune_plumbing: plumbing,
        neocortex_hash_before: hash_before,
        neocortex_hash_after: hash_after,
        val_mae,
        prompt_exports: exports,
    })
}

/// Bank scalars the fine-tune loss reaches: the encoders and alignment
/// projections, plus the interaction module when the self-supervised
/// co-loss is on.
pub fn prompt_plumbing_size(bank: &PromptBank, with_ssl: bool) -> usize {
    use crate::backbone::Block;
    let p = &bank.params;
    p.block_size(Block::PromptSpatial) + p.block_size(Block::PromptTemporal) + p.block_size(Block::Align) + if with_ssl { p.block_size(Block::Stim) } else { 0 }
}

/// The backbone for the test node set: new nodes copy the adjacency of
/// their nearest training node, removed nodes lose their rows and columns.
pub fn test_backbone(prep: &Prepared, model: &Backbone) -> Result<Backbone> {
    let m = &prep.manifest;
    match m.scenario {
        ScenarioTag::NodeInvolve if !m.test_only_nodes.is_empty() => {
            let old = prep.raw.node_coords.select(Axis(0), &m.train_nodes);
            let new = prep.raw.node_coords.select(Axis(0), &m.test_only_nodes);
            let adjs = model
                .adjacency_logits()
                .iter()
                .map(|a| node_copy_adjacency(a.view(), old.view(), new.view()))
                .collect::<Result<Vec<_>>>()?;
            model.with_adjacency(&adjs)
        }
        ScenarioTag::NodeRemove if !m.removed_nodes.is_empty() => {
            let adjs: Vec<Array2<f64>> = model.adjacency_logits().iter().map(|a| remove_nodes(a.view(), &m.removed_nodes)).collect();
            model.with_adjacency(&adjs)
        }
        _ => Ok(model.clone()),
    }
}

/// Metrics of one (variant, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub variant: Variant,
    pub warmup_epochs: usize,
    pub warmup_stopped_early: bool,
    /// Validation MAE after fine-tuning, original units.
    pub val_mae: f64,
    /// Test MAE, original units.
    pub test_mae: f64,
    /// Test MAE on nodes seen in training / only present at test time.
    pub test_mae_seen: Option<f64>,
    pub test_mae_new: Option<f64>,
    pub pretrain_heldout: Option<f64>,
    pub adapt_losses: Vec<Vec<f64>>,
    pub partition: Vec<PartitionStats>,
    pub accounting: UpdateAccounting,
    /// Bank reads performed while fine-tuning and predicting.
    pub bank_reads: u64,
    pub neocortex_hash_before: String,
    pub neocortex_hash_after: String,
    pub backbone_hash_before_adapt: String,
    pub backbone_hash_after_adapt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
}

/// Per-node mean absolute error over `[W, l, N, F]` forecasts.
fn node_mae(pred: ArrayView4<f64>, target: ArrayView4<f64>, nodes: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for &i in nodes {
        let p = pred.index_axis(Axis(2), i);
        let t = target.index_axis(Axis(2), i);
        total += p.iter().zip(t.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        n += p.len();
    }
    total / n.max(1) as f64
}

fn targets(ds: &SpatioTemporalDataset, windows: &WindowSet) -> Array4<f64> {
    let (n, f) = (ds.n_nodes(), ds.n_features());
    let mut out = Array4::zeros((windows.len(), windows.horizon, n, f));
    for w in 0..windows.len() {
        out.index_axis_mut(Axis(0), w).assign(&windows.target(ds, w));
    }
    out
}

/// Test-time adaptation (when the variant adapts) followed by prediction on
/// the test windows. The trained state is consumed so its transcript can
/// record the evaluation.
pub fn evaluate(prep: &Prepared, mut trained: Trained) -> Result<(SeedReport, Trained)> {
    let cfg = &prep.config;
    let s = Seeds::new(trained.seed);
    let phase = &prep.test_phase;
    let model = test_backbone(prep, &trained.model)?;
    let hash_before = model.params.hash_all();
    let mut adapt_losses = Vec::new();
    if trained.variant.adapts() {
        for (k, set) in prep.adapt_sets.iter().enumerate() {
            let out = test_time_adapt(&mut trained.bank, set, &cfg.plan.adapt, s.adapt.wrapping_add(k as u64), &mut trained.transcript)?;
            adapt_losses.push(out.losses);
        }
    }
    let hash_after = model.params.hash_all();
    let prompts = trained.variant.uses_prompts().then_some((&trained.bank, &phase.ctx));
    let pred = prep.norm.denormalize(&predict(&model, prompts, &phase.ds, &prep.test_windows)?);
    let truth = prep.norm.denormalize(&targets(&phase.ds, &prep.test_windows));
    let test_mae = mae(pred.view().into_dyn(), truth.view().into_dyn())?;
    let (seen, new) = if prep.manifest.scenario == ScenarioTag::NodeInvolve && !prep.manifest.test_only_nodes.is_empty() {
        let k = prep.manifest.train_nodes.len();
        let all = phase.nodes.len();
        (
            Some(node_mae(pred.view(), truth.view(), &(0..k).collect::<Vec<_>>())),
            Some(node_mae(pred.view(), truth.view(), &(k..all).collect::<Vec<_>>())),
        )
    } else {
        (None, None)
    };
    if trained.variant.uses_prompts() {
        if trained.variant.adapts() && !prep.adapt_sets.is_empty() {
            trained.prompt_exports.push(("adapt_spatial".to_string(), spatial_export(&trained.bank, phase)?));
            trained.prompt_exports.push(("adapt_temporal".to_string(), temporal_export(&trained.bank, phase)?));
        }
    }
    trained.transcript.push(UnitRecord {
        stage: "test".into(),
        epoch: 0,
        global_epoch: trained.transcript.next_global_epoch(),
        train_loss: 0.0,
        val_mae: None,
        ledger_quantiles: Vec::new(),
        updated_params: 0,
        neocortex_mean_abs: None,
        hippocampus_mean_abs: None,
        test_mae: Some(test_mae),
    });
    let layout = UpdateLayout {
        backbone_size: trained.model.params.len(),
        adaptive_backbone: trained.finetune_adaptive,
        prompt_plumbing: trained.finetune_plumbing,
        e_p: trained.bank.adaptable_size(),
        events: adapt_losses.len(),
    };
    let accounting = count_updated_params(&trained.transcript, layout);
    let report = SeedReport {
        seed: trained.seed,
        variant: trained.variant,
        warmup_epochs: trained.warmup_epochs,
        warmup_stopped_early: trained.warmup_stopped_early,
        val_mae: trained.val_mae,
        test_mae,
        test_mae_seen: seen,
        test_mae_new: new,
        pretrain_heldout: trained.pretrain.as_ref().map(|h| h.final_heldout()),
        adapt_losses,
        partition: trained.partition.stats.clone(),
        accounting,
        bank_reads: trained.bank.reads(),
        neocortex_hash_before: trained.neocortex_hash_before.clone(),
        neocortex_hash_after: trained.neocortex_hash_after.clone(),
        backbone_hash_before_adapt: hash_before,
        backbone_hash_after_adapt: hash_after,
        transcript: None,
    };
    Ok((report, trained))
}

/// Outcome of the fixed-adjacency node-removal control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalControl {
    /// Retained-node forecasts of the full graph with removed nodes masked
    /// out of the adjacency equal the reduced-graph forecasts bit for bit.
    pub bit_identical: bool,
    /// Largest retained-node difference between the full-graph run and the
    /// reduced-graph run with the learned adjacency (renormalization only).
    pub learned_max_abs_diff: f64,
}

/// Compares full-graph and reduced-graph forecasts of the retained nodes.
/// `prompts` carries the bank with the full-graph and retained-node
/// contexts.
pub fn removal_control(
    model: &Backbone,
    prompts: Option<(&PromptBank, &PromptContext, &PromptContext)>,
    full: &SpatioTemporalDataset,
    windows: &WindowSet,
    removed: &[usize],
) -> Result<RemovalControl> {
    let n = full.n_nodes();
    let retained: Vec<usize> = (0..n).filter(|i| !removed.contains(i)).collect();
    let reduced_ds = full.select_nodes(&retained);
    let masked_logits: Vec<Array2<f64>> = model
        .adjacency_logits()
        .into_iter()
        .map(|mut a| {
            for &j in removed {
                a.column_mut(j).fill(match model.cfg.adjacency_norm {
                    AdjacencyNorm::Softmax => -1e4,
                    AdjacencyNorm::RowSum => 0.0,
                });
            }
            a
        })
        .collect();
    let masked = model.with_adjacency(&masked_logits)?;
    let reduce = |m: &Backbone| -> Result<Backbone> {
        let adjs: Vec<Array2<f64>> = m.adjacency_logits().iter().map(|a| remove_nodes(a.view(), removed)).collect();
        m.with_adjacency(&adjs)
    };
    let full_prompts = prompts.map(|(b, f, _)| (b, f));
    let reduced_prompts = prompts.map(|(b, _, r)| (b, r));
    let run = |m: &Backbone, reduced: bool| -> Result<Array4<f64>> {
        if reduced {
            predict(m, reduced_prompts, &reduced_ds, windows)
        } else {
            Ok(predict(m, full_prompts, full, windows)?.select(Axis(2), &retained))
        }
    };
    let a = run(&masked, false)?;
    let b = run(&reduce(&masked)?, true)?;
    let bit_identical = a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    let c = run(model, false)?;
    let d = run(&reduce(model)?, true)?;
    let learned_max_abs_diff = c.iter().zip(d.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(RemovalControl { bit_identical, learned_max_abs_diff })
}

/// Writes the prompt exports of a trained run as CSV files.
pub(crate) fn write_prompt_exports(trained: &Trained, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (name, export) in &trained.prompt_exports {
        let p = dir.join(format!("prompts_{name}.csv"));
        export.write_csv(&p)?;
        paths.push(p);
    }
    Ok(paths)
}
