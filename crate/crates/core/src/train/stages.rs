use ndarray::{s, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plan::{AdaptPlan, FinetunePlan, WarmupPlan};
use super::transcript::{Transcript, UnitRecord};
use crate::backbone::{loss_mae_grad, loss_mae_train, Adam, Backbone, Injection};
use crate::data::{NormStats, SpatialEnv, SpatioTemporalDataset, TemporalEnv, WindowSet};
use crate::disentangle::{apply_freeze, warmup_stability_check, ParameterPartition, VariationLedger};
use crate::error::{shape_err, Error, Result};
use crate::prompt::{ssl_batch_grad, ssl_epoch, Encoder, PretrainConfig, PromptBank, SslSet};

/// Flattened environment descriptors of one dataset: one row per node and
/// one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    /// `[N, 2E]`
    pub spatial: Array2<f64>,
    /// `[T, 2E]`
    pub temporal: Array2<f64>,
}

impl PromptContext {
    pub fn build(spatial: &SpatialEnv, temporal: &TemporalEnv) -> PromptContext {
        let n = spatial.n_nodes();
        let e2 = 2 * spatial.width();
        let sp = Array2::from_shape_fn((n, e2), |(i, k)| spatial.descriptors[[i, k / spatial.width(), k % spatial.width()]]);
        let t = temporal.descriptors.dim().0;
        let w = temporal.width();
        let tp = Array2::from_shape_fn((t, 2 * w), |(s, k)| temporal.descriptors[[s, k / w, k % w]]);
        PromptContext { spatial: sp, temporal: tp }
    }

    pub fn n_nodes(&self) -> usize {
        self.spatial.nrows()
    }

    fn temporal_rows(&self, windows: &WindowSet, batch: &[usize]) -> Array2<f64> {
        let rows: Vec<usize> = batch.iter().flat_map(|&w| windows.start(w)..=windows.anchors[w]).collect();
        self.temporal.select(Axis(0), &rows)
    }
}

fn check_nodes(model: &Backbone, ds: &SpatioTemporalDataset, prompts: Option<(&PromptBank, &PromptContext)>) -> Result<()> {
    if ds.n_nodes() != model.cfg.n_nodes {
        return Err(shape_err(format!("data has {} nodes, model expects {}", ds.n_nodes(), model.cfg.n_nodes)));
    }
    if let Some((_, ctx)) = prompts {
        if ctx.n_nodes() != ds.n_nodes() {
            return Err(shape_err(format!("{} spatial descriptors for {} nodes", ctx.n_nodes(), ds.n_nodes())));
        }
    }
    Ok(())
}

/// Forward + backward over one batch. Backbone gradients go to `grads`,
/// prompt-bank gradients (when prompts are used) to `bank_grads`. Returns
/// the mean training loss of the batch.
fn batch_gradients(
    model: &Backbone,
    prompts: Option<(&PromptBank, &PromptContext)>,
    ds: &SpatioTemporalDataset,
    windows: &WindowSet,
    batch: &[usize],
    grads: &mut [f64],
    bank_grads: Option<&mut [f64]>,
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let kappa = windows.kappa;
    let mut total = 0.0;
    match prompts {
        None => {
            for &w in batch {
                let (pred, trace) = model.forward_one(windows.input(ds, w), None)?;
                let y = windows.target(ds, w);
                total += loss_mae_train(pred.view(), y)?;
                model.backward_one(&trace, &loss_mae_grad(pred.view(), y, scale), grads);
            }
        }
        Some((bank, ctx)) => {
            let (p_s, trace_s) = bank.encode_traced(Encoder::Spatial, ctx.spatial.view())?;
            let t_rows = ctx.temporal_rows(windows, batch);
            let (p_t_all, trace_t) = bank.encode_traced(Encoder::Temporal, t_rows.view())?;
            let mut d_ps = Array2::zeros(p_s.dim());
            let mut d_pt = Array2::zeros(p_t_all.dim());
            let mut scratch = bank.params.zeros_like();
            for (b, &w) in batch.iter().enumerate() {
                let p_t = p_t_all.slice(s![b * kappa..(b + 1) * kappa, ..]);
                let (inj_s, inj_t) = bank.injection(p_s.view(), p_t)?;
                let inj = Injection { spatial: inj_s.view(), temporal: inj_t.view() };
                let (pred, trace) = model.forward_one(windows.input(ds, w), Some(&inj))?;
                let y = windows.target(ds, w);
                total += loss_mae_train(pred.view(), y)?;
                let ig = model
                    .backward_one(&trace, &loss_mae_grad(pred.view(), y, scale), grads)
                    .expect("injected forward yields injection gradients");
                let (gs, gt) = bank.injection_backward(p_s.view(), p_t, ig.spatial.view(), ig.temporal.view(), &mut scratch);
                d_ps += &gs;
                d_pt.slice_mut(s![b * kappa..(b + 1) * kappa, ..]).assign(&gt);
            }
            bank.encoder_backward(Encoder::Spatial, &trace_s, d_ps, &mut scratch);
            bank.encoder_backward(Encoder::Temporal, &trace_t, d_pt, &mut scratch);
            if let Some(bg) = bank_grads {
                for (g, v) in bg.iter_mut().zip(&scratch) {
                    *g += v;
                }
            }
        }
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite training loss {loss}")));
    }
    Ok(loss)
}

/// Forecasts for every window: `[W, l, N, F]` in normalized units.
pub fn predict(
    model: &Backbone,
    prompts: Option<(&PromptBank, &PromptContext)>,
    ds: &SpatioTemporalDataset,
    windows: &WindowSet,
) -> Result<Array4<f64>> {
    check_nodes(model, ds, prompts)?;
    let cfg = &model.cfg;
    let mut out = Array4::zeros((windows.len(), cfg.horizon, cfg.n_nodes, cfg.n_features));
    let p_s = match prompts {
        Some((bank, ctx)) => Some(bank.encode(Encoder::Spatial, ctx.spatial.view())?),
        None => None,
    };
    for w in 0..windows.len() {
        let pred = match (prompts, &p_s) {
            (Some((bank, ctx)), Some(p_s)) => {
                let p_t = bank.encode(Encoder::Temporal, ctx.temporal_rows(windows, &[w]).view())?;
                let (inj_s, inj_t) = bank.injection(p_s.view(), p_t.view())?;
                let inj = Injection { spatial: inj_s.view(), temporal: inj_t.view() };
                model.forward_one(windows.input(ds, w), Some(&inj))?.0
            }
            _ => model.forward_one(windows.input(ds, w), None)?.0,
        };
        out.index_axis_mut(Axis(0), w).assign(&pred);
    }
    Ok(out)
}

/// Mean absolute error in the data's original units.
pub fn predict_mae(
    model: &Backbone,
    prompts: Option<(&PromptBank, &PromptContext)>,
    ds: &SpatioTemporalDataset,
    windows: &WindowSet,
    norm: &NormStats,
) -> Result<f64> {
    let pred = norm.denormalize(&predict(model, prompts, ds, windows)?);
    let mut total = 0.0;
    let mut count = 0usize;
    for w in 0..windows.len() {
        let y = norm.denormalize(&windows.target(ds, w).to_owned());
        let p = pred.index_axis(Axis(0), w);
        total += p.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        count += y.len();
    }
    Ok(total / count.max(1) as f64)
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupOutcome {
    pub ledger: VariationLedger,
    pub train_loss: Vec<f64>,
    /// Normalized-unit validation MAE after each unit.
    pub val_mae: Vec<f64>,
    pub stopped_early: bool,
    /// Parameters after each unit, when requested by the plan.
    pub snapshots: Vec<Vec<f64>>,
    /// Scalars changed at least once.
    pub touched: Vec<bool>,
}

/// Trains every backbone weight on plain (X, Y) pairs, updating the
/// variation ledger once per epoch, until the validation error is stable or
/// the epoch budget runs out.
pub fn run_warmup(
    model: &mut Backbone,
    ds: &SpatioTemporalDataset,
    train: &WindowSet,
    val: &WindowSet,
    plan: &WarmupPlan,
    seed: u64,
    transcript: &mut Transcript,
) -> Result<WarmupOutcome> {
    check_nodes(model, ds, None)?;
    let mut ledger = VariationLedger::new(&model.params);
    let mut adam = Adam::new(plan.adam, model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = WarmupOutcome {
        ledger: ledger.clone(),
        train_loss: Vec::new(),
        val_mae: Vec::new(),
        stopped_early: false,
        snapshots: Vec::new(),
        touched: vec![false; model.params.len()],
    };
    let unit_norm = NormStats::identity(ds.n_features());
    for epoch in 0..plan.max_epochs {
        let order = shuffled(train.len(), &mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(plan.batch_size.max(1)) {
            let mut grads = model.params.zeros_like();
            total += batch_gradients(model, None, ds, train, batch, &mut grads, None)?;
            batches += 1;
            adam.step(&mut model.params.values, &grads, Some(&mut out.touched));
        }
        ledger.update(&model.params)?;
        if plan.keep_snapshots {
            out.snapshots.push(model.params.values.clone());
        }
        let loss = total / batches.max(1) as f64;
        let val_mae = predict_mae(model, None, ds, val, &unit_norm)?;
        out.train_loss.push(loss);
        out.val_mae.push(val_mae);
        transcript.push(UnitRecord {
            stage: "warmup".into(),
            epoch,
            global_epoch: transcript.next_global_epoch(),
            train_loss: loss,
            val_mae: Some(val_mae),
            ledger_quantiles: ledger.summary().block_quantiles.into_iter().collect(),
            updated_params: count(&out.touched),
            neocortex_mean_abs: None,
            hippocampus_mean_abs: None,
            test_mae: None,
        });
        if warmup_stability_check(&out.val_mae, plan.patience, 1e-8) {
            out.stopped_early = true;
            break;
        }
    }
    out.ledger = ledger;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneOutcome {
    pub train_loss: Vec<f64>,
    pub val_mae: Vec<f64>,
    /// Backbone scalars changed during the stage.
    pub touched_backbone: Vec<bool>,
    /// Prompt-bank scalars changed during the stage (empty without prompts).
    pub touched_bank: Vec<bool>,
    /// Epoch whose parameters were kept; `None` when the stage ended on its
    /// starting state.
    pub best_epoch: Option<usize>,
}

fn mean_abs(values: &[f64], idx: impl Iterator<Item = usize>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for i in idx {
        s += values[i].abs();
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Writes the frozen values of `partition` into the model, then trains the
/// adaptive weights (and, when given, the prompt bank) on the forecasting
/// loss with the stable weights' gradients masked out.
#[allow(clippy::too_many_arguments)]
pub fn run_finetune(
    model: &mut Backbone,
    partition: &ParameterPartition,
    mut prompts: Option<(&mut PromptBank, &PromptContext)>,
    ssl: Option<&SslSet>,
    ds: &SpatioTemporalDataset,
    train: &WindowSet,
    val: &WindowSet,
    plan: &FinetunePlan,
    seed: u64,
    transcript: &mut Transcript,
) -> Result<FinetuneOutcome> {
    if partition.neocortex.len() != model.params.len() {
        return Err(Error::Ledger(format!(
            "partition covers {} scalars, model has {}",
            partition.neocortex.len(),
            model.params.len()
        )));
    }
    check_nodes(model, ds, prompts.as_ref().map(|(b, c)| (&**b, *c)))?;
    partition.apply_to(&mut model.params)?;
    let mut adam = Adam::new(plan.adam, model.params.len());
    let bank_len = prompts.as_ref().map_or(0, |(b, _)| b.params.len());
    let mut bank_adam = Adam::new(plan.prompt_adam, bank_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FinetuneOutcome {
        train_loss: Vec::new(),
        val_mae: Vec::new(),
        touched_backbone: vec![false; model.params.len()],
        touched_bank: vec![false; bank_len],
        best_epoch: None,
    };
    let unit_norm = NormStats::identity(ds.n_features());
    let snapshot = |model: &Backbone, prompts: &Option<(&mut PromptBank, &PromptContext)>| {
        (model.params.values.clone(), prompts.as_ref().map(|(b, _)| b.params.values.clone()))
    };
    let mut best = if plan.keep_best && plan.epochs > 0 {
        let view = prompts.as_ref().map(|(bk, c)| (&**bk, *c));
        Some((predict_mae(model, view, ds, val, &unit_norm)?, snapshot(model, &prompts)))
    } else {
        None
    };
    let ssl_rows_per_batch = ssl.map(|set| set.len().div_ceil(train.len().div_ceil(plan.batch_size.max(1)).max(1)));
    for epoch in 0..plan.epochs {
        let order = shuffled(train.len(), &mut rng);
        let ssl_order = ssl.map(|set| shuffled(set.len(), &mut rng));
        let mut total = 0.0;
        let mut batches = 0;
        for (b, batch) in order.chunks(plan.batch_size.max(1)).enumerate() {
            let mut grads = model.params.zeros_like();
            let mut bank_grads = vec![0.0; bank_len];
            let view = prompts.as_ref().map(|(bk, c)| (&**bk, *c));
            total += batch_gradients(model, view, ds, train, batch, &mut grads, view.map(|_| bank_grads.as_mut_slice()))?;
            batches += 1;
            if let (Some((bank, _)), Some(set), Some(order), Some(per)) = (prompts.as_ref(), ssl, ssl_order.as_ref(), ssl_rows_per_batch) {
                if plan.ssl_weight > 0.0 {
                    let lo = (b * per).min(order.len());
                    let hi = ((b + 1) * per).min(order.len());
                    if lo < hi {
                        let mut g = vec![0.0; bank_len];
                        let rows = &order[lo..hi];
                        ssl_batch_grad(bank, set, rows, &mut g)?;
                        let w = plan.ssl_weight / rows.len() as f64;
                        for (acc, v) in bank_grads.iter_mut().zip(&g) {
                            *acc += w * v;
                        }
                    }
                }
            }
            apply_freeze(&mut grads, partition);
            adam.step(&mut model.params.values, &grads, Some(&mut out.touched_backbone));
            if let Some((bank, _)) = prompts.as_mut() {
                bank_adam.step(&mut bank.params.values, &bank_grads, Some(&mut out.touched_bank));
            }
        }
        let loss = total / batches.max(1) as f64;
        let view = prompts.as_ref().map(|(bk, c)| (&**bk, *c));
        let val_mae = predict_mae(model, view, ds, val, &unit_norm)?;
        out.train_loss.push(loss);
        out.val_mae.push(val_mae);
        transcript.push(UnitRecord {
            stage: "finetune".into(),
            epoch,
            global_epoch: transcript.next_global_epoch(),
            train_loss: loss,
            val_mae: Some(val_mae),
            ledger_quantiles: Vec::new(),
            updated_params: count(&out.touched_backbone) + count(&out.touched_bank),
            neocortex_mean_abs: mean_abs(&model.params.values, partition.neocortex_indices()),
            hippocampus_mean_abs: mean_abs(&model.params.values, partition.hippocampus_indices()),
            test_mae: None,
        });
        if let Some((best_mae, state)) = best.as_mut() {
            if val_mae < *best_mae {
                *best_mae = val_mae;
                *state = snapshot(model, &prompts);
                out.best_epoch = Some(epoch);
            }
        }
    }
    if let Some((_, (values, bank_values))) = best {
        model.params.values = values;
        if let (Some((bank, _)), Some(v)) = (prompts.as_mut(), bank_values) {
            bank.params.values = v;
        }
    } else if plan.epochs > 0 {
        out.best_epoch = Some(plan.epochs - 1);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptOutcome {
    /// Mean per-row self-supervised loss of each adaptation epoch.
    pub losses: Vec<f64>,
    /// Bank scalars changed by this adaptation event.
    pub touched: Vec<bool>,
}

/// Re-fits the prompt encoders and interaction module on a few
/// self-supervised batches drawn from the adaptation slice. Backbone
/// weights and alignment projections are not touched.
pub fn test_time_adapt(bank: &mut PromptBank, adapt: &SslSet, plan: &AdaptPlan, seed: u64, transcript: &mut Transcript) -> Result<AdaptOutcome> {
    if adapt.is_empty() {
        return Err(Error::Adapt("the adaptation slice has no windows".into()));
    }
    let cfg = PretrainConfig { epochs: plan.epochs, batch_size: plan.batch_size, max_batches: Some(plan.max_batches), adam: plan.adam, seed };
    let mut adam = Adam::new(plan.adam, bank.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut touched = vec![false; bank.params.len()];
    let bound = 1e3 * adapt.mean_loss(bank)?.max(1e-12);
    let mut losses = Vec::new();
    for epoch in 0..plan.epochs {
        let loss = ssl_epoch(bank, adapt, &cfg, &mut adam, &mut rng, Some(&mut touched), bound)?;
        losses.push(loss);
        transcript.push(UnitRecord {
            stage: "adapt".into(),
            epoch,
            global_epoch: transcript.next_global_epoch(),
            train_loss: loss,
            val_mae: None,
            ledger_quantiles: Vec::new(),
            updated_params: count(&touched),
            neocortex_mean_abs: None,
            hippocampus_mean_abs: None,
            test_mae: None,
        });
    }
    Ok(AdaptOutcome { losses, touched })
}
