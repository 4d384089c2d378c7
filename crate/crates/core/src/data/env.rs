//! Spatial and temporal environment descriptors.
//!
//! Each descriptor is a `2 × E` matrix. Spatial: row 0 carries the
//! standardized (lat, long) pair, row 1 the location index. Temporal: row 0
//! holds day-of-week in its first ⌈E/2⌉ columns and step-of-day in the
//! remaining ones, row 1 the causal trend. Categorical
//! fields are one-hot encoded and mapped to width `E` through fixed random
//! projections seeded from the bundle's `projection_seed`, so descriptors
//! are stable for a dataset.

use chrono::{DateTime, Datelike};
use ndarray::{Array2, Array3, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SpatioTemporalDataset;

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Descriptor width `E`.
    pub width: usize,
    /// Look-back used by the trend field.
    pub kappa: usize,
}

fn projection(seed: u64, stream: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

/// `[N, 2, E]` spatial descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialEnv {
    pub descriptors: Array3<f64>,
}

impl SpatialEnv {
    /// Builds descriptors for every node of `ds`. The location one-hot space
    /// is the full node list, so subsets keep their descriptors.
    pub fn build(ds: &SpatioTemporalDataset, width: usize) -> SpatialEnv {
        let n = ds.n_nodes();
        let coord_proj = projection(ds.projection_seed, 1, 2, width);
        let loc_proj = projection(ds.projection_seed, 2, n, width);
        let mut z = ds.node_coords.clone();
        for c in 0..2 {
            let col = ds.node_coords.column(c);
            let m = col.mean().unwrap_or(0.0);
            let sd = col.std(0.0);
            let sd = if sd > 1e-12 { sd } else { 1.0 };
            z.column_mut(c).mapv_inplace(|v| (v - m) / sd);
        }
        let mut d = Array3::zeros((n, 2, width));
        for i in 0..n {
            for e in 0..width {
                d[[i, 0, e]] = (z[[i, 0]] * coord_proj[[0, e]] + z[[i, 1]] * coord_proj[[1, e]]) * SQRT_HALF;
                d[[i, 1, e]] = loc_proj[[i, e]];
            }
        }
        SpatialEnv { descriptors: d }
    }

    pub fn n_nodes(&self) -> usize {
        self.descriptors.dim().0
    }

    pub fn width(&self) -> usize {
        self.descriptors.dim().2
    }

    /// Flattened `2E` row-major descriptor of node `i`.
    pub fn flat(&self, i: usize) -> Vec<f64> {
        self.descriptors.slice(ndarray::s![i, .., ..]).iter().copied().collect()
    }

    pub fn select(&self, nodes: &[usize]) -> SpatialEnv {
        SpatialEnv { descriptors: self.descriptors.select(ndarray::Axis(0), nodes) }
    }
}

/// Min-max scaling of the raw trend, fitted on training steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendScale {
    pub min: f64,
    pub max: f64,
}

impl TrendScale {
    pub fn fit(trend: &[f64], steps: &[usize]) -> TrendScale {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &s in steps {
            min = min.min(trend[s]);
            max = max.max(trend[s]);
        }
        if !min.is_finite() || !max.is_finite() {
            return TrendScale { min: 0.0, max: 0.0 };
        }
        TrendScale { min, max }
    }

    /// Maps the training range onto [-1, 1]; values outside extrapolate.
    pub fn apply(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span > 1e-12 {
            2.0 * (v - self.min) / span - 1.0
        } else {
            0.0
        }
    }
}

/// `[T, 2, E]` temporal descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEnv {
    pub descriptors: Array3<f64>,
    pub trend: Vec<f64>,
}

pub fn steps_per_day(interval_seconds: i64) -> usize {
    ((86_400 + interval_seconds - 1) / interval_seconds) as usize
}

pub fn day_of_week(ts: i64) -> usize {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.weekday().num_days_from_monday() as usize)
        .unwrap_or(0)
}

pub fn step_of_day(ts: i64, interval_seconds: i64) -> usize {
    (ts.rem_euclid(86_400) / interval_seconds) as usize
}

fn slope(ys: ArrayView1<f64>) -> f64 {
    let m = ys.len();
    if m < 2 {
        return 0.0;
    }
    let xbar = (m - 1) as f64 / 2.0;
    let ybar = ys.sum() / m as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in ys.iter().enumerate() {
        let dx = x as f64 - xbar;
        num += dx * (y - ybar);
        den += dx * dx;
    }
    num / den
}

impl TemporalEnv {
    /// Least-squares slope of the node/feature average over the κ steps
    /// ending at each step (inclusive). Uses no future observation.
    pub fn raw_trend(ds: &SpatioTemporalDataset, nodes: &[usize], kappa: usize) -> Vec<f64> {
        let (t, _, f) = ds.observations.dim();
        let denom = (nodes.len() * f) as f64;
        let avg: Vec<f64> = (0..t)
            .map(|s| {
                let mut acc = 0.0;
                for &i in nodes {
                    for k in 0..f {
                        acc += ds.observations[[s, i, k]];
                    }
                }
                acc / denom
            })
            .collect();
        let avg = ndarray::Array1::from(avg);
        (0..t)
            .map(|s| {
                let lo = (s + 1).saturating_sub(kappa.max(1));
                slope(avg.slice(ndarray::s![lo..=s]))
            })
            .collect()
    }

    pub fn build(
        ds: &SpatioTemporalDataset,
        trend: &[f64],
        scale: TrendScale,
        width: usize,
    ) -> TemporalEnv {
        let t = ds.n_steps();
        let spd = steps_per_day(ds.interval_seconds);
        let half = width.div_ceil(2);
        let dw_proj = projection(ds.projection_seed, 3, 7, half);
        let ts_proj = projection(ds.projection_seed, 4, spd, width - half);
        let tr_proj = projection(ds.projection_seed, 5, 1, width);
        let mut d = Array3::zeros((t, 2, width));
        for s in 0..t {
            let ts = ds.timestamps[s];
            let dw = day_of_week(ts);
            let sd = step_of_day(ts, ds.interval_seconds).min(spd - 1);
            let tr = scale.apply(trend[s]);
            for e in 0..width {
                d[[s, 0, e]] = if e < half { dw_proj[[dw, e]] } else { ts_proj[[sd, e - half]] };
                d[[s, 1, e]] = tr * tr_proj[[0, e]];
            }
        }
        TemporalEnv { descriptors: d, trend: trend.to_vec() }
    }

    pub fn width(&self) -> usize {
        self.descriptors.dim().2
    }

    pub fn flat(&self, step: usize) -> Vec<f64> {
        self.descriptors.slice(ndarray::s![step, .., ..]).iter().copied().collect()
    }
}
