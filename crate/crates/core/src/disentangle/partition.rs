use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::VariationLedger;
use crate::backbone::{Block, ParamSet};
use crate::error::{config_err, Error, Result};

/// Blocks that are split; every other tensor stays fully trainable.
const SPLIT_BLOCKS: [Block; 2] = [Block::Spatial, Block::Temporal];

fn stable_count(tau: f64, size: usize) -> usize {
    // τ is a percentage; the epsilon keeps 60% of 10 at 6 despite rounding.
    (((tau * size as f64) / 100.0) + 1e-9).floor() as usize
}

/// Positions (into `values`) of the ⌊τ%·len⌋ smallest entries. Ties go
/// to the earlier position.
pub fn select_stable_flat(values: &[f64], tau: f64) -> Result<Vec<usize>> {
    if values.is_empty() {
        return Err(Error::Block("cannot select from an empty block".into()));
    }
    if !(tau > 0.0 && tau <= 100.0) {
        return Err(config_err(format!("τ must be in (0, 100], got {tau}")));
    }
    let k = stable_count(tau, values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    // (value, index) is a total order, so the k smallest form a unique set.
    if k > 0 && k < order.len() {
        order.select_nth_unstable_by(k - 1, |&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    }
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Matrix form of [`select_stable_flat`], ties broken in row-major order.
pub fn select_stable_indices(accum: ArrayView2<f64>, tau: f64) -> Result<Vec<(usize, usize)>> {
    let cols = accum.ncols();
    let flat: Vec<f64> = accum.iter().copied().collect();
    Ok(select_stable_flat(&flat, tau)?.into_iter().map(|k| (k / cols, k % cols)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub block: Block,
    pub size: usize,
    pub neocortex: usize,
    pub hippocampus: usize,
}

/// Disjoint stable/adaptive index sets over the backbone's flat parameter
/// vector, plus the (optionally smoothed) values the stable part is frozen at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPartition {
    pub tau: f64,
    pub lambda: f64,
    /// `neocortex[i]` is true when flat index `i` is frozen.
    pub neocortex: Vec<bool>,
    /// Sorted flat indices per split block.
    pub spatial_neocortex: Vec<usize>,
    pub temporal_neocortex: Vec<usize>,
    /// Frozen value for every neocortex index, in ascending index order.
    pub frozen_values: Vec<f64>,
    pub stats: Vec<PartitionStats>,
    pub warnings: Vec<String>,
}

impl ParameterPartition {
    pub fn neocortex_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.neocortex.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn hippocampus_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.neocortex.iter().enumerate().filter(|(_, &b)| !b).map(|(i, _)| i)
    }

    pub fn neocortex_count(&self) -> usize {
        self.neocortex.iter().filter(|&&b| b).count()
    }

    /// Adaptive indices of one split block.
    pub fn block_hippocampus(&self, params: &ParamSet, block: Block) -> Vec<usize> {
        params.block_indices(block).into_iter().filter(|&i| !self.neocortex[i]).collect()
    }

    /// Writes the frozen values into `params`.
    pub fn apply_to(&self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.neocortex.len() {
            return Err(Error::Ledger(format!(
                "partition covers {} scalars, model has {}",
                self.neocortex.len(),
                params.len()
            )));
        }
        for (i, v) in self.neocortex_indices().zip(&self.frozen_values).collect::<Vec<_>>() {
            params.values[i] = *v;
        }
        Ok(())
    }

    /// A partition with nothing frozen.
    pub fn all_trainable(params: &ParamSet) -> ParameterPartition {
        ParameterPartition {
            tau: 0.0,
            lambda: 0.0,
            neocortex: vec![false; params.len()],
            spatial_neocortex: Vec::new(),
            temporal_neocortex: Vec::new(),
            frozen_values: Vec::new(),
            stats: SPLIT_BLOCKS
                .iter()
                .map(|&b| {
                    let size = params.block_size(b);
                    PartitionStats { block: b, size, neocortex: 0, hippocampus: size }
                })
                .collect(),
            warnings: Vec::new(),
        }
    }
}

/// Selects the τ% least-varying weights of the spatial block and of the
/// temporal block. Frozen values are `(1-λ)·w + λ·mean`, the mean taken
/// over the selected weights of the same tensor.
pub fn build_partition(params: &ParamSet, ledger: &VariationLedger, tau: f64, lambda: f64) -> Result<ParameterPartition> {
    if ledger.units == 0 {
        return Err(Error::Ledger("ledger has no completed training unit".into()));
    }
    if ledger.specs() != params.specs() {
        return Err(Error::Ledger("ledger and parameters disagree on the registry".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(config_err(format!("λ must be in [0, 1], got {lambda}")));
    }
    let mut neocortex = vec![false; params.len()];
    let mut per_block = Vec::new();
    let mut stats = Vec::new();
    for block in SPLIT_BLOCKS {
        let indices = params.block_indices(block);
        let values: Vec<f64> = indices.iter().map(|&i| ledger.accum[i]).collect();
        let picked: Vec<usize> = select_stable_flat(&values, tau)?.into_iter().map(|k| indices[k]).collect();
        for &i in &picked {
            neocortex[i] = true;
        }
        stats.push(PartitionStats {
            block,
            size: indices.len(),
            neocortex: picked.len(),
            hippocampus: indices.len() - picked.len(),
        });
        per_block.push(picked);
    }

    let mut warnings = Vec::new();
    let mut frozen = params.values.clone();
    for spec in params.specs().iter().filter(|s| SPLIT_BLOCKS.contains(&s.block)) {
        let members: Vec<usize> = spec.range().filter(|&i| neocortex[i]).collect();
        if members.is_empty() {
            warnings.push(format!("tensor {} has no stable weights at τ = {tau}", spec.name));
            continue;
        }
        if lambda > 0.0 {
            let mean = members.iter().map(|&i| params.values[i]).sum::<f64>() / members.len() as f64;
            for &i in &members {
                frozen[i] = (1.0 - lambda) * params.values[i] + lambda * mean;
            }
        }
    }
    let frozen_values = neocortex.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| frozen[i]).collect();
    let temporal_neocortex = per_block.pop().unwrap_or_default();
    let spatial_neocortex = per_block.pop().unwrap_or_default();
    Ok(ParameterPartition {
        tau,
        lambda,
        neocortex,
        spatial_neocortex,
        temporal_neocortex,
        frozen_values,
        stats,
        warnings,
    })
}

/// Zeroes the gradient of every frozen weight.
pub fn apply_freeze(grads: &mut [f64], partition: &ParameterPartition) {
    for (g, &frozen) in grads.iter_mut().zip(&partition.neocortex) {
        if frozen {
            *g = 0.0;
        }
    }
}

/// True when the last `patience` relative changes of the validation error
/// are all below 1%.
pub fn warmup_stability_check(val_errors: &[f64], patience: usize, eps: f64) -> bool {
    if patience == 0 || val_errors.len() < patience + 1 {
        return false;
    }
    val_errors[val_errors.len() - patience - 1..]
        .windows(2)
        .all(|w| (w[1] - w[0]).abs() / w[0].abs().max(eps) < 0.01)
}
