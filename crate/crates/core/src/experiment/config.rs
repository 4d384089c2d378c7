use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::{Activation, AdjacencyNorm, BackboneConfig};
use crate::data::{CommunityConfig, Regime, RegimeKey, SynthConfig};
use crate::error::{config_err, Error, Result};
use crate::scenarios::{IntervalSplit, MonthSplit};
use crate::train::StagePlan;

/// Ablation variants of the full system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    /// Partition, pre-trained prompts, prompt-conditioned fine-tune,
    /// test-time adaptation.
    Full,
    /// No stable/adaptive split: every backbone weight is fine-tuned.
    NonHip,
    /// Randomly initialized prompt bank, no self-supervised pre-training.
    NonSsl,
    /// Adaptive weights fine-tuned without any prompt injection.
    NonPrompt,
    /// No test-time adaptation.
    NonTtf,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::NonHip, Variant::NonSsl, Variant::NonPrompt, Variant::NonTtf];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NonHip => "non_hip",
            Variant::NonSsl => "non_ssl",
            Variant::NonPrompt => "non_prompt",
            Variant::NonTtf => "non_ttf",
        }
    }

    pub fn uses_prompts(&self) -> bool {
        !matches!(self, Variant::NonPrompt)
    }

    pub fn adapts(&self) -> bool {
        matches!(self, Variant::Full | Variant::NonHip | Variant::NonSsl)
    }

    pub fn pretrains(&self) -> bool {
        matches!(self, Variant::Full | Variant::NonHip | Variant::NonTtf)
    }

    pub fn partitions(&self) -> bool {
        !matches!(self, Variant::NonHip)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| config_err(format!("unknown variant {s:?} (expected one of full, non_hip, non_ssl, non_prompt, non_ttf)")))
    }
}

impl TryFrom<String> for Variant {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Variant, String> {
        s.parse().map_err(|e: Error| e.to_string())
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.as_str().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// A dataset bundle directory.
    Path(PathBuf),
    Synth(SynthConfig),
}

/// How steps are split when the scenario itself is about nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSplit {
    Interval(IntervalSplit),
    Month(MonthSplit),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioConfig {
    TempInterval {
        #[serde(default)]
        split: IntervalSplit,
    },
    TempMonth {
        #[serde(default)]
        split: MonthSplit,
    },
    NodeInvolve {
        base: TimeSplit,
        fraction: f64,
        #[serde(default)]
        seed: u64,
    },
    NodeRemove {
        base: TimeSplit,
        fraction: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::TempInterval { split: IntervalSplit::default() }
    }
}

/// Backbone shape; node and feature counts come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneSpec {
    pub hidden: usize,
    pub spatial_layers: usize,
    pub kernels: Vec<usize>,
    pub dilations: Vec<usize>,
    pub adjacency_norm: AdjacencyNorm,
    pub activation: Activation,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        let std = BackboneConfig::standard(1, 1, 12, 12);
        BackboneSpec {
            hidden: std.hidden,
            spatial_layers: std.spatial_layers,
            kernels: std.kernels,
            dilations: std.dilations,
            adjacency_norm: std.adjacency_norm,
            activation: std.activation,
        }
    }
}

impl BackboneSpec {
    pub fn config(&self, n_nodes: usize, n_features: usize, kappa: usize, horizon: usize) -> BackboneConfig {
        BackboneConfig {
            n_nodes,
            n_features,
            hidden: self.hidden,
            spatial_layers: self.spatial_layers,
            kernels: self.kernels.clone(),
            dilations: self.dilations.clone(),
            kappa,
            horizon,
            adjacency_norm: self.adjacency_norm,
            activation: self.activation,
        }
    }
}

/// Everything one experiment needs; echoed verbatim into its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub scenario: ScenarioConfig,
    /// Percentage of spatial/temporal weights frozen as the stable part.
    pub tau: f64,
    /// Mixing toward the per-tensor mean of the frozen weights.
    pub lambda: f64,
    /// Descriptor width `E`.
    pub descriptor_width: usize,
    /// Prompt width `E_p`.
    pub prompt_dim: usize,
    pub kappa: usize,
    pub horizon: usize,
    pub backbone: BackboneSpec,
    pub plan: StagePlan,
    pub seeds: Vec<u64>,
    pub variant: Variant,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synth(temporal_shift_synth(8, 14, 0)),
            scenario: ScenarioConfig::default(),
            tau: 60.0,
            lambda: 0.0,
            descriptor_width: 16,
            prompt_dim: 16,
            kappa: 12,
            horizon: 12,
            backbone: BackboneSpec::default(),
            plan: StagePlan::default(),
            seeds: vec![0, 1, 2, 3, 4],
            variant: Variant::Full,
        }
    }
}

impl ExperimentConfig {
    /// A small temporal-shift configuration that trains all five variants
    /// for five seeds in a few minutes on one core: a 16-wide three-layer
    /// dilated backbone, short stage budgets and the self-supervised co-loss
    /// switched on during fine-tuning.
    pub fn desk_scale() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.backbone.hidden = 16;
        cfg.backbone.kernels = vec![3, 3, 3];
        cfg.backbone.dilations = vec![1, 2, 4];
        let plan = &mut cfg.plan;
        plan.warmup.max_epochs = 20;
        plan.warmup.batch_size = 32;
        plan.warmup.adam.lr = 3e-3;
        plan.pretrain.epochs = 60;
        plan.finetune.epochs = 10;
        plan.finetune.batch_size = 32;
        plan.finetune.prompt_adam.lr = 3e-3;
        plan.finetune.ssl_weight = 10.0;
        plan.adapt.batch_size = 16;
        plan.adapt.adam.lr = 3e-3;
        plan.adapt.epochs = 6;
        cfg
    }

    /// Parses a JSON config; every parse failure is a configuration error.
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| config_err(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load { path: path.to_path_buf(), reason: e.to_string() })?;
        ExperimentConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 100.0) {
            return Err(config_err(format!("τ must be in (0, 100], got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(config_err(format!("λ must be in [0, 1], got {}", self.lambda)));
        }
        if self.descriptor_width == 0 || self.prompt_dim == 0 {
            return Err(config_err("descriptor and prompt widths must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("at least one seed is required"));
        }
        if let ScenarioConfig::NodeInvolve { fraction, .. } | ScenarioConfig::NodeRemove { fraction, .. } = self.scenario {
            if !(0.0..1.0).contains(&fraction) {
                return Err(config_err(format!("node fraction must lie in [0, 1), got {fraction}")));
            }
        }
        self.plan.validate()?;
        self.backbone.config(2, 1, self.kappa, self.horizon).validate()
    }
}

/// Five-minute synthetic series whose level depends on the hour of day:
/// two daytime regimes for training, an evening regime for validation and
/// a distinct night regime covering the adaptation and test hours. Nodes
/// carry fixed level offsets and fall into two communities.
pub fn temporal_shift_synth(n_nodes: usize, days: usize, seed: u64) -> SynthConfig {
    let regime = |start, end, mu, sigma| Regime { key: RegimeKey::Hours { start, end }, mu, sigma };
    SynthConfig {
        n_nodes,
        n_steps: days * 288,
        n_features: 1,
        seed,
        interval_seconds: 300,
        start_timestamp: 1_704_067_200,
        base_mu: 0.0,
        base_sigma: 1.0,
        ar_coef: 0.3,
        regimes: vec![
            regime(8, 12, 10.0, 2.0),
            regime(12, 16, 14.0, 2.0),
            regime(16, 24, 12.0, 2.0),
            regime(0, 8, 17.0, 2.0),
        ],
        communities: Some(CommunityConfig { count: 2, scales: vec![1.0, 1.0], offsets: vec![0.0, 0.0], coupling: 0.3 }),
        node_offsets: (0..n_nodes).map(|i| 3.0 * ((i * 7 + 3) % n_nodes) as f64 / n_nodes as f64 - 1.5).collect(),
        projection_seed: seed,
    }
}

/// Community-structured stationary series for node scenarios: nodes of a
/// community share level, scale and part of their noise, and sit close
/// together.
pub fn community_synth(n_nodes: usize, days: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_nodes,
        n_steps: days * 288,
        n_features: 1,
        seed,
        interval_seconds: 300,
        start_timestamp: 1_704_067_200,
        base_mu: 10.0,
        base_sigma: 1.0,
        ar_coef: 0.6,
        regimes: Vec::new(),
        communities: Some(CommunityConfig { count: 2, scales: vec![1.0, 1.4], offsets: vec![0.0, 2.0], coupling: 0.6 }),
        node_offsets: Vec::new(),
        projection_seed: seed,
    }
}
