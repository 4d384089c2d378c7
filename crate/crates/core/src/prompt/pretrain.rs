//! Self-supervised prompt training: encoders and the interaction module
//! regress each node-window's mean and standard deviation from the node's
//! spatial descriptor and the window's temporal descriptor.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bank::{Encoder, PromptBank};
use crate::backbone::{Adam, AdamConfig};
use crate::data::{window_distribution, SpatialEnv, SpatioTemporalDataset, TemporalEnv, WindowSet};
use crate::error::{shape_err, Error, Result};

/// Rows of (spatial descriptor, temporal descriptor) → (μ, σ) targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SslSet {
    /// `[R, 2E]`
    pub spatial: Array2<f64>,
    /// `[R, 2E]`
    pub temporal: Array2<f64>,
    /// `[R, F]`
    pub mu: Array2<f64>,
    /// `[R, F]`
    pub sigma: Array2<f64>,
    pub node: Vec<usize>,
    /// Last input step of the window the row came from.
    pub step: Vec<usize>,
}

impl SslSet {
    /// One row per (window, node). Node `i` of `ds` reads row `i` of
    /// `spatial`; the temporal descriptor is that of the window's last
    /// input step. Targets are read from the window inputs only.
    pub fn build(ds: &SpatioTemporalDataset, windows: &WindowSet, spatial: &SpatialEnv, temporal: &TemporalEnv) -> Result<SslSet> {
        let n = ds.n_nodes();
        if spatial.n_nodes() != n {
            return Err(shape_err(format!("{} spatial descriptors for {n} nodes", spatial.n_nodes())));
        }
        if spatial.width() != temporal.width() {
            return Err(shape_err("spatial and temporal descriptor widths differ"));
        }
        let rows = windows.len() * n;
        let e2 = 2 * spatial.width();
        let f = ds.n_features();
        let mut set = SslSet {
            spatial: Array2::zeros((rows, e2)),
            temporal: Array2::zeros((rows, e2)),
            mu: Array2::zeros((rows, f)),
            sigma: Array2::zeros((rows, f)),
            node: Vec::with_capacity(rows),
            step: Vec::with_capacity(rows),
        };
        let s_rows: Vec<Vec<f64>> = (0..n).map(|i| spatial.flat(i)).collect();
        for w in 0..windows.len() {
            let (mu, sigma) = window_distribution(windows.input(ds, w));
            let t = windows.anchors[w];
            let t_row = temporal.flat(t);
            for i in 0..n {
                let r = w * n + i;
                set.spatial.row_mut(r).assign(&ndarray::ArrayView1::from(&s_rows[i]));
                set.temporal.row_mut(r).assign(&ndarray::ArrayView1::from(&t_row));
                set.mu.row_mut(r).assign(&mu.row(i));
                set.sigma.row_mut(r).assign(&sigma.row(i));
                set.node.push(i);
                set.step.push(t);
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> SslSet {
        SslSet {
            spatial: self.spatial.select(Axis(0), rows),
            temporal: self.temporal.select(Axis(0), rows),
            mu: self.mu.select(Axis(0), rows),
            sigma: self.sigma.select(Axis(0), rows),
            node: rows.iter().map(|&r| self.node[r]).collect(),
            step: rows.iter().map(|&r| self.step[r]).collect(),
        }
    }

    /// Bank predictions `(μ̂, σ̂)` for every row.
    pub fn predict(&self, bank: &PromptBank) -> Result<(Array2<f64>, Array2<f64>)> {
        let ps = bank.encode(Encoder::Spatial, self.spatial.view())?;
        let pt = bank.encode(Encoder::Temporal, self.temporal.view())?;
        let out = bank.stim(ps.view(), pt.view())?;
        Ok((out.mu, out.sigma))
    }

    /// Summed self-supervised loss over all rows.
    pub fn loss(&self, bank: &PromptBank) -> Result<f64> {
        let (mu, sigma) = self.predict(bank)?;
        ssl_loss(mu.view(), sigma.view(), self.mu.view(), self.sigma.view())
    }

    /// Loss per row; comparable across sets of different size.
    pub fn mean_loss(&self, bank: &PromptBank) -> Result<f64> {
        Ok(self.loss(bank)? / self.len().max(1) as f64)
    }
}

/// `Σ (μ̂−μ)² + (σ̂−σ)²` over every node-step row and feature.
pub fn ssl_loss(mu_hat: ArrayView2<f64>, sigma_hat: ArrayView2<f64>, mu: ArrayView2<f64>, sigma: ArrayView2<f64>) -> Result<f64> {
    if mu_hat.dim() != mu.dim() || sigma_hat.dim() != sigma.dim() || mu.dim() != sigma.dim() {
        return Err(shape_err(format!(
            "distribution shapes μ̂ {:?}, σ̂ {:?}, μ {:?}, σ {:?}",
            mu_hat.dim(),
            sigma_hat.dim(),
            mu.dim(),
            sigma.dim()
        )));
    }
    let a: f64 = mu_hat.iter().zip(mu.iter()).map(|(p, y)| (p - y).powi(2)).sum();
    let b: f64 = sigma_hat.iter().zip(sigma.iter()).map(|(p, y)| (p - y).powi(2)).sum();
    Ok(a + b)
}

/// Forward and backward of the summed loss over `rows`; gradients are
/// accumulated into `grads` (bank-sized). Returns the batch loss.
pub fn ssl_batch_grad(bank: &PromptBank, set: &SslSet, rows: &[usize], grads: &mut [f64]) -> Result<f64> {
    let xs = set.spatial.select(Axis(0), rows);
    let xt = set.temporal.select(Axis(0), rows);
    let mu = set.mu.select(Axis(0), rows);
    let sigma = set.sigma.select(Axis(0), rows);
    let (ps, trace_s) = bank.encode_traced(Encoder::Spatial, xs.view())?;
    let (pt, trace_t) = bank.encode_traced(Encoder::Temporal, xt.view())?;
    let out = bank.stim(ps.view(), pt.view())?;
    let loss = ssl_loss(out.mu.view(), out.sigma.view(), mu.view(), sigma.view())?;
    let d_mu = (&out.mu - &mu) * 2.0;
    let d_sigma = (&out.sigma - &sigma) * 2.0;
    let (d_ps, d_pt) = bank.stim_backward(ps.view(), pt.view(), &out, d_mu.view(), d_sigma.view(), grads);
    bank.encoder_backward(Encoder::Spatial, &trace_s, d_ps, grads);
    bank.encoder_backward(Encoder::Temporal, &trace_t, d_pt, grads);
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Rows per optimizer step.
    pub batch_size: usize,
    /// Cap on optimizer steps per epoch.
    pub max_batches: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { epochs: 200, batch_size: 256, max_batches: None, adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() }, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PretrainHistory {
    /// Per-row loss on the training rows before any update.
    pub initial_train: f64,
    /// Per-row loss on the held-out rows before any update.
    pub initial_heldout: f64,
    /// Mean per-row batch loss of each epoch.
    pub train: Vec<f64>,
    /// Per-row held-out loss after each epoch.
    pub heldout: Vec<f64>,
}

impl PretrainHistory {
    pub fn final_heldout(&self) -> f64 {
        self.heldout.last().copied().unwrap_or(self.initial_heldout)
    }
}

/// Runs SSL epochs over `set` with a caller-owned optimizer. Only entries
/// with nonzero gradient move, so alignment projections stay put. Marks
/// changed entries in `touched` and returns the mean per-row loss.
pub fn ssl_epoch(
    bank: &mut PromptBank,
    set: &SslSet,
    cfg: &PretrainConfig,
    adam: &mut Adam,
    rng: &mut ChaCha8Rng,
    touched: Option<&mut [bool]>,
    diverge_above: f64,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyWindow("no self-supervised rows".into()));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(rng);
    let bs = cfg.batch_size.max(1);
    let mut total = 0.0;
    let mut seen = 0usize;
    let mut touched = touched;
    for (b, rows) in order.chunks(bs).enumerate() {
        if cfg.max_batches.is_some_and(|m| b >= m) {
            break;
        }
        let mut grads = bank.params.zeros_like();
        let loss = ssl_batch_grad(bank, set, rows, &mut grads)?;
        let per_row = loss / rows.len() as f64;
        if !per_row.is_finite() || per_row > diverge_above {
            return Err(Error::Divergence(format!(
                "self-supervised loss {per_row:.4e} per row exceeds the divergence bound {diverge_above:.4e}"
            )));
        }
        adam.step(&mut bank.params.values, &grads, touched.as_deref_mut());
        total += loss;
        seen += rows.len();
    }
    Ok(total / seen.max(1) as f64)
}

/// Pre-trains the bank on `train`; `heldout` is evaluated after every
/// epoch. Fails with a divergence error once the per-row loss exceeds a
/// thousand times its initial value.
pub fn pretrain_prompts(bank: &mut PromptBank, train: &SslSet, heldout: &SslSet, cfg: &PretrainConfig) -> Result<PretrainHistory> {
    let initial_train = train.mean_loss(bank)?;
    let initial_heldout = if heldout.is_empty() { initial_train } else { heldout.mean_loss(bank)? };
    let mut hist = PretrainHistory { initial_train, initial_heldout, ..Default::default() };
    let bound = 1e3 * initial_train.max(1e-12);
    let mut adam = Adam::new(cfg.adam, bank.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.epochs {
        let loss = ssl_epoch(bank, train, cfg, &mut adam, &mut rng, None, bound)?;
        hist.train.push(loss);
        hist.heldout.push(if heldout.is_empty() { loss } else { heldout.mean_loss(bank)? });
    }
    Ok(hist)
}

/// Coefficient of determination of `pred` against `truth` over all
/// entries.
pub fn r_squared(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> f64 {
    let mean = truth.mean().unwrap_or(0.0);
    let ss_tot: f64 = truth.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth.iter()).map(|(p, y)| (p - y).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Block;
    use crate::prompt::PromptConfig;
    use ndarray::array;

    #[test]
    fn loss_examples() {
        let z = Array2::<f64>::zeros((2, 1));
        assert_eq!(ssl_loss(z.view(), z.view(), z.view(), z.view()).unwrap(), 0.0);
        let mu_hat = array![[1.0], [0.0]];
        let sigma_hat = array![[2.0], [0.0]];
        assert_eq!(ssl_loss(mu_hat.view(), sigma_hat.view(), z.view(), z.view()).unwrap(), 5.0);
        let swapped_mu = array![[0.0], [1.0]];
        let swapped_sigma = array![[0.0], [2.0]];
        assert_eq!(ssl_loss(swapped_mu.view(), swapped_sigma.view(), z.view(), z.view()).unwrap(), 5.0);
        let bad = Array2::<f64>::zeros((3, 1));
        assert!(matches!(ssl_loss(bad.view(), z.view(), z.view(), z.view()), Err(Error::Shape(_))));
    }

    /// Rows whose targets are a fixed function of the descriptors.
    fn toy_set(rows: usize, seed: u64, zero_sigma: bool) -> SslSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = 4;
        let days = 3;
        let node_desc: Vec<[f64; 4]> = (0..nodes).map(|i| [i as f64 * 0.5 - 0.75, 1.0, 0.2 * i as f64, -0.3]).collect();
        let day_desc: Vec<[f64; 4]> = (0..days).map(|d| [0.4, d as f64 - 1.0, 0.1, 0.7 * d as f64]).collect();
        let mut set = SslSet {
            spatial: Array2::zeros((rows, 4)),
            temporal: Array2::zeros((rows, 4)),
            mu: Array2::zeros((rows, 1)),
            sigma: Array2::zeros((rows, 1)),
            node: vec![],
            step: vec![],
        };
        use rand::Rng;
        for r in 0..rows {
            let i = rng.random_range(0..nodes);
            let d = rng.random_range(0..days);
            set.spatial.row_mut(r).assign(&ndarray::ArrayView1::from(&node_desc[i]));
            set.temporal.row_mut(r).assign(&ndarray::ArrayView1::from(&day_desc[d]));
            set.mu[[r, 0]] = 1.0 + 0.8 * i as f64 - 0.6 * d as f64;
            set.sigma[[r, 0]] = if zero_sigma { 0.0 } else { 0.5 + 0.2 * d as f64 };
            set.node.push(i);
            set.step.push(d);
        }
        set
    }

    fn small_bank() -> PromptBank {
        PromptBank::new(PromptConfig { seed: 11, ..PromptConfig::standard(2, 4, 1, 3) }).unwrap()
    }

    #[test]
    fn pretraining_reduces_heldout_loss_and_is_reproducible() {
        let train = toy_set(240, 1, false);
        let held = toy_set(60, 2, false);
        let cfg = PretrainConfig { epochs: 60, batch_size: 32, ..Default::default() };
        let mut a = small_bank();
        let hist = pretrain_prompts(&mut a, &train, &held, &cfg).unwrap();
        assert!(hist.final_heldout() < 0.2 * hist.initial_heldout, "{hist:?}");
        let mut b = small_bank();
        let hist_b = pretrain_prompts(&mut b, &train, &held, &cfg).unwrap();
        assert!((hist.final_heldout() - hist_b.final_heldout()).abs() < 1e-9);
        let (mu, _) = held.predict(&a).unwrap();
        assert!(r_squared(mu.view(), held.mu.view()) > 0.9);
    }

    #[test]
    fn zero_variance_targets_drive_sigma_down() {
        let train = toy_set(200, 3, true);
        let cfg = PretrainConfig { epochs: 150, batch_size: 50, ..Default::default() };
        let mut bank = small_bank();
        pretrain_prompts(&mut bank, &train, &train.subset(&[0, 1, 2]), &cfg).unwrap();
        let (_, sigma) = train.predict(&bank).unwrap();
        let mean_sigma = sigma.mean().unwrap();
        assert!(mean_sigma < 0.05, "σ̂ mean {mean_sigma}");
        assert!(sigma.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn ssl_updates_never_touch_alignment() {
        let train = toy_set(64, 4, false);
        let mut bank = small_bank();
        let align_before = bank.params.hash_indices(bank.params.block_indices(Block::Align));
        pretrain_prompts(&mut bank, &train, &train, &PretrainConfig { epochs: 3, batch_size: 16, ..Default::default() }).unwrap();
        assert_eq!(align_before, bank.params.hash_indices(bank.params.block_indices(Block::Align)));
    }

    #[test]
    fn temporal_updates_leave_spatial_prompts_bit_identical() {
        let bank = small_bank();
        let set = toy_set(16, 5, false);
        let before = bank.encode(Encoder::Spatial, set.spatial.view()).unwrap();
        let mut changed = bank.clone();
        for idx in changed.params.block_indices(Block::PromptTemporal) {
            changed.params.values[idx] += 0.37;
        }
        let after = changed.encode(Encoder::Spatial, set.spatial.view()).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn divergence_is_reported() {
        let train = toy_set(32, 6, false);
        let mut bank = small_bank();
        let cfg = PretrainConfig { epochs: 5, batch_size: 8, adam: AdamConfig { lr: 1e9, ..AdamConfig::default() }, ..Default::default() };
        let err = pretrain_prompts(&mut bank, &train, &train, &cfg);
        assert!(matches!(err, Err(Error::Divergence(_))), "{err:?}");
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let set = toy_set(5, 7, false);
        let bank = small_bank();
        let rows: Vec<usize> = (0..5).collect();
        let mut grads = bank.params.zeros_like();
        ssl_batch_grad(&bank, &set, &rows, &mut grads).unwrap();
        let h = 1e-5;
        for idx in bank.adaptable_indices().into_iter().step_by(7) {
            let mut p = bank.clone();
            p.params.values[idx] += h;
            let mut m = bank.clone();
            m.params.values[idx] -= h;
            let fd = (set.loss(&p).unwrap() - set.loss(&m).unwrap()) / (2.0 * h);
            assert!((fd - grads[idx]).abs() <= 1e-6 + 1e-4 * fd.abs(), "idx {idx}: fd {fd} vs {}", grads[idx]);
        }
    }
}
