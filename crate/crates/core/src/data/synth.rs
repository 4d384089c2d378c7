use chrono::{DateTime, Datelike, Timelike};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SpatioTemporalDataset;
use crate::error::{config_err, Result};

/// Which steps a regime applies to. Hour and month ranges are half-open
/// and evaluated on the UTC calendar of the step's timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegimeKey {
    Hours { start: u32, end: u32 },
    Months { start: u32, end: u32 },
    Weekdays { days: Vec<u32> },
}

impl RegimeKey {
    pub fn matches(&self, ts: i64) -> bool {
        let Some(dt) = DateTime::from_timestamp(ts, 0) else {
            return false;
        };
        match self {
            RegimeKey::Hours { start, end } => (*start..*end).contains(&dt.hour()),
            RegimeKey::Months { start, end } => (*start..*end).contains(&dt.month()),
            RegimeKey::Weekdays { days } => days.contains(&dt.weekday().num_days_from_monday()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub key: RegimeKey,
    pub mu: f64,
    pub sigma: f64,
}

/// Node communities: contiguous node blocks sharing a level multiplier,
/// an offset, a shared noise component and nearby coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityConfig {
    pub count: usize,
    pub scales: Vec<f64>,
    pub offsets: Vec<f64>,
    /// Fraction of noise variance shared within a community, in [0, 1].
    pub coupling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub n_steps: usize,
    pub n_features: usize,
    pub seed: u64,
    pub interval_seconds: i64,
    pub start_timestamp: i64,
    pub base_mu: f64,
    pub base_sigma: f64,
    /// AR(1) coefficient of the deviation from the regime mean.
    pub ar_coef: f64,
    /// First matching regime wins; unmatched steps use the base values.
    #[serde(default)]
    pub regimes: Vec<Regime>,
    #[serde(default)]
    pub communities: Option<CommunityConfig>,
    /// Optional fixed per-node mean offsets.
    #[serde(default)]
    pub node_offsets: Vec<f64>,
    #[serde(default)]
    pub projection_seed: u64,
}

impl SynthConfig {
    /// Small stationary configuration (5-minute steps from 2024-01-01).
    pub fn small(n_nodes: usize, n_steps: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_nodes,
            n_steps,
            n_features: 1,
            seed,
            interval_seconds: 300,
            start_timestamp: 1_704_067_200,
            base_mu: 0.0,
            base_sigma: 1.0,
            ar_coef: 0.5,
            regimes: Vec::new(),
            communities: None,
            node_offsets: Vec::new(),
            projection_seed: seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 || self.n_steps < 2 || self.n_features == 0 {
            return Err(config_err("synthetic data needs N ≥ 2, T ≥ 2, F ≥ 1"));
        }
        if self.interval_seconds <= 0 {
            return Err(config_err("interval_seconds must be positive"));
        }
        if !(self.base_sigma > 0.0) {
            return Err(config_err(format!("base σ must be positive, got {}", self.base_sigma)));
        }
        if let Some(r) = self.regimes.iter().find(|r| !(r.sigma > 0.0)) {
            return Err(config_err(format!("regime σ must be positive, got {}", r.sigma)));
        }
        if !(self.ar_coef > -1.0 && self.ar_coef < 1.0) {
            return Err(config_err("AR coefficient must lie in (-1, 1)"));
        }
        if !self.node_offsets.is_empty() && self.node_offsets.len() != self.n_nodes {
            return Err(config_err("node_offsets must be empty or have one entry per node"));
        }
        if let Some(c) = &self.communities {
            if c.count == 0 || c.count > self.n_nodes {
                return Err(config_err("community count must be in 1..=N"));
            }
            if c.scales.len() != c.count || c.offsets.len() != c.count {
                return Err(config_err("community scales/offsets need one entry per community"));
            }
            if !(0.0..=1.0).contains(&c.coupling) {
                return Err(config_err("community coupling must be in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn community_of(&self, node: usize) -> usize {
        match &self.communities {
            Some(c) => node * c.count / self.n_nodes,
            None => 0,
        }
    }

    /// Expected level and noise scale of `node` at timestamp `ts`.
    pub fn level(&self, node: usize, ts: i64) -> (f64, f64) {
        let (mu, sigma) = self
            .regimes
            .iter()
            .find(|r| r.key.matches(ts))
            .map_or((self.base_mu, self.base_sigma), |r| (r.mu, r.sigma));
        let (scale, offset) = match &self.communities {
            Some(c) => {
                let k = self.community_of(node);
                (c.scales[k], c.offsets[k])
            }
            None => (1.0, 0.0),
        };
        let node_off = self.node_offsets.get(node).copied().unwrap_or(0.0);
        (mu * scale + offset + node_off, sigma)
    }
}

/// Environment-conditioned Gaussian AR(1) series on a community graph.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SpatioTemporalDataset> {
    cfg.validate()?;
    let (t, n, f) = (cfg.n_steps, cfg.n_nodes, cfg.n_features);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let timestamps: Vec<i64> = (0..t as i64).map(|s| cfg.start_timestamp + s * cfg.interval_seconds).collect();

    let n_comm = cfg.communities.as_ref().map_or(1, |c| c.count);
    let coupling = cfg.communities.as_ref().map_or(0.0, |c| c.coupling);

    let mut coords = Array2::zeros((n, 2));
    for i in 0..n {
        let c = cfg.community_of(i) as f64;
        coords[[i, 0]] = 31.0 + 0.2 * c + rng.random_range(-0.01..0.01);
        coords[[i, 1]] = 120.0 + 0.2 * c + rng.random_range(-0.01..0.01);
    }
    let mut adjacency = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let same = cfg.community_of(i) == cfg.community_of(j);
            let ring = (i + 1) % n == j || (j + 1) % n == i;
            if (cfg.communities.is_some() && same) || (cfg.communities.is_none() && ring) {
                adjacency[[i, j]] = 1.0;
            }
        }
    }

    let shared_w = coupling.sqrt();
    let own_w = (1.0 - coupling).sqrt();
    let innov = (1.0 - cfg.ar_coef * cfg.ar_coef).sqrt();
    let mut obs = Array3::zeros((t, n, f));
    let mut prev_dev = Array2::<f64>::zeros((n, f));
    let mut shared = vec![0.0; n_comm];
    for s in 0..t {
        for k in 0..f {
            for z in shared.iter_mut() {
                *z = StandardNormal.sample(&mut rng);
            }
            for i in 0..n {
                let (mu, sigma) = cfg.level(i, timestamps[s]);
                let own: f64 = StandardNormal.sample(&mut rng);
                let eps = shared_w * shared[cfg.community_of(i)] + own_w * own;
                let dev = if s == 0 {
                    sigma * eps
                } else {
                    cfg.ar_coef * prev_dev[[i, k]] + sigma * innov * eps
                };
                prev_dev[[i, k]] = dev;
                obs[[s, i, k]] = mu + dev;
            }
        }
    }

    let ds = SpatioTemporalDataset {
        observations: obs,
        adjacency,
        node_coords: coords,
        node_ids: (0..n as i64).collect(),
        timestamps,
        interval_seconds: cfg.interval_seconds,
        feature_units: (0..f).map(|k| format!("synthetic_{k}")).collect(),
        projection_seed: cfg.projection_seed,
        self_loops: false,
    };
    ds.validate()?;
    Ok(ds)
}
