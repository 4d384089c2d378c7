use serde::{Deserialize, Serialize};

use crate::backbone::AdamConfig;
use crate::error::{config_err, Result};
use crate::prompt::PretrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarmupPlan {
    pub max_epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Consecutive sub-1% validation changes that end the warm-up.
    pub patience: usize,
    /// Keep a copy of the parameters after every unit (for audits).
    pub keep_snapshots: bool,
}

impl Default for WarmupPlan {
    fn default() -> Self {
        WarmupPlan {
            max_epochs: 30,
            batch_size: 64,
            adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
            patience: 3,
            keep_snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetunePlan {
    pub epochs: usize,
    pub batch_size: usize,
    /// Optimizer for the adaptive backbone weights.
    pub adam: AdamConfig,
    /// Optimizer for the prompt bank (encoders, interaction, alignment).
    pub prompt_adam: AdamConfig,
    /// Weight of the self-supervised distribution loss kept alongside the
    /// forecasting loss so prompts stay anchored to window statistics.
    pub ssl_weight: f64,
    /// Finish with the backbone and bank of the epoch with the lowest
    /// validation error, counting the state before the first epoch.
    pub keep_best: bool,
}

impl Default for FinetunePlan {
    fn default() -> Self {
        FinetunePlan {
            epochs: 10,
            batch_size: 64,
            adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
            prompt_adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
            ssl_weight: 0.0,
            keep_best: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptPlan {
    pub epochs: usize,
    /// Self-supervised rows per optimizer step.
    pub batch_size: usize,
    pub max_batches: usize,
    pub adam: AdamConfig,
    /// Adaptation events: the adaptation slice is cut into this many
    /// chronological chunks and the bank is re-fitted on each in turn.
    /// Zero disables test-time adaptation.
    pub events: usize,
}

impl Default for AdaptPlan {
    /// Small Adam steps: a bank already fitted to the data it adapts on
    /// stays essentially where it is.
    fn default() -> Self {
        AdaptPlan { epochs: 6, batch_size: 16, max_batches: 8, adam: AdamConfig { lr: 3e-4, ..AdamConfig::default() }, events: 1 }
    }
}

/// Budget of every stage; `iterations` repeats disentangle → pre-train →
/// fine-tune.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StagePlan {
    pub warmup: WarmupPlan,
    pub pretrain: PretrainConfig,
    pub finetune: FinetunePlan,
    pub adapt: AdaptPlan,
    pub iterations: usize,
}

impl Default for StagePlan {
    fn default() -> Self {
        StagePlan {
            warmup: WarmupPlan::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetunePlan::default(),
            adapt: AdaptPlan::default(),
            iterations: 1,
        }
    }
}

impl StagePlan {
    pub fn validate(&self) -> Result<()> {
        let sizes = [self.warmup.batch_size, self.pretrain.batch_size, self.finetune.batch_size, self.adapt.batch_size];
        if sizes.contains(&0) {
            return Err(config_err("batch sizes must be positive"));
        }
        if self.iterations == 0 {
            return Err(config_err("at least one disentangle/fine-tune iteration is required"));
        }
        if !(self.finetune.ssl_weight >= 0.0) {
            return Err(config_err("ssl_weight must be nonnegative"));
        }
        let lrs = [self.warmup.adam.lr, self.pretrain.adam.lr, self.finetune.adam.lr, self.finetune.prompt_adam.lr, self.adapt.adam.lr];
        if lrs.iter().any(|lr| !(*lr > 0.0) || !lr.is_finite()) {
            return Err(config_err("learning rates must be positive and finite"));
        }
        Ok(())
    }
}
