//! Out-of-distribution evaluation settings: calendar-based temporal splits,
//! nodes that appear only at test time, nodes that disappear at test time,
//! and the adjacency extension used for new nodes.

use std::path::Path;

use chrono::{DateTime, Datelike, Timelike};
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SpatioTemporalDataset;
use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTag {
    TempInterval,
    TempMonth,
    NodeInvolve,
    NodeRemove,
}

/// Explicit step and node index lists of one evaluation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub scenario: ScenarioTag,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub adapt: Vec<usize>,
    /// Nodes visible during training and validation.
    pub train_nodes: Vec<usize>,
    /// Nodes that only exist at test time.
    pub test_only_nodes: Vec<usize>,
    /// Nodes that exist in training but are gone at test time.
    pub removed_nodes: Vec<usize>,
}

impl SplitManifest {
    /// Nodes present at test time, in ascending order.
    pub fn test_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .train_nodes
            .iter()
            .chain(&self.test_only_nodes)
            .copied()
            .filter(|n| !self.removed_nodes.contains(n))
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<SplitManifest> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Half-open hour-of-day range `[start, end)`; `start == end` is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourRange {
    pub start: u32,
    pub end: u32,
}

impl HourRange {
    pub const fn new(start: u32, end: u32) -> HourRange {
        HourRange { start, end }
    }

    fn contains(&self, hour: u32) -> bool {
        (self.start..self.end).contains(&hour)
    }

    fn overlaps(&self, other: &HourRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntervalSplit {
    pub train: HourRange,
    pub val: HourRange,
    pub adapt: HourRange,
    pub test: HourRange,
}

impl Default for IntervalSplit {
    /// Train 8–16, validate 16–24, adapt 0–1, test 1–7.
    fn default() -> Self {
        IntervalSplit { train: HourRange::new(8, 16), val: HourRange::new(16, 24), adapt: HourRange::new(0, 1), test: HourRange::new(1, 7) }
    }
}

fn utc(ts: i64) -> DateTime<chrono::Utc> {
    DateTime::from_timestamp(ts, 0).unwrap_or_default()
}

fn all_nodes(ds: &SpatioTemporalDataset) -> Vec<usize> {
    (0..ds.n_nodes()).collect()
}

/// Assigns every step by its UTC hour of day.
pub fn split_interval(ds: &SpatioTemporalDataset, split: &IntervalSplit) -> Result<SplitManifest> {
    let ranges = [split.train, split.val, split.adapt, split.test];
    for r in &ranges {
        if r.start > r.end || r.end > 24 {
            return Err(config_err(format!("hour range [{}, {}) is not within a day", r.start, r.end)));
        }
    }
    for i in 0..ranges.len() {
        for j in i + 1..ranges.len() {
            if ranges[i].overlaps(&ranges[j]) {
                return Err(config_err(format!(
                    "hour ranges [{}, {}) and [{}, {}) overlap",
                    ranges[i].start, ranges[i].end, ranges[j].start, ranges[j].end
                )));
            }
        }
    }
    let mut m = empty_manifest(ScenarioTag::TempInterval, ds);
    for (s, &ts) in ds.timestamps.iter().enumerate() {
        let h = utc(ts).hour();
        if split.train.contains(h) {
            m.train.push(s);
        } else if split.val.contains(h) {
            m.val.push(s);
        } else if split.adapt.contains(h) {
            m.adapt.push(s);
        } else if split.test.contains(h) {
            m.test.push(s);
        }
    }
    Ok(m)
}

/// Inclusive calendar-month range `start..=end` (1–12).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthRange {
    pub start: u32,
    pub end: u32,
}

impl MonthRange {
    pub const fn new(start: u32, end: u32) -> MonthRange {
        MonthRange { start, end }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonthSplit {
    pub train: Option<MonthRange>,
    pub val: Option<MonthRange>,
    pub adapt: Option<MonthRange>,
    pub test: Option<MonthRange>,
}

impl Default for MonthSplit {
    /// Train Jan–Jun, validate Jul–Aug, adapt Sep, test Oct–Dec.
    fn default() -> Self {
        MonthSplit {
            train: Some(MonthRange::new(1, 6)),
            val: Some(MonthRange::new(7, 8)),
            adapt: Some(MonthRange::new(9, 9)),
            test: Some(MonthRange::new(10, 12)),
        }
    }
}

/// Assigns every step by its UTC calendar month.
pub fn split_month(ds: &SpatioTemporalDataset, split: &MonthSplit) -> Result<SplitManifest> {
    let ranges = [split.train, split.val, split.adapt, split.test];
    for r in ranges.iter().flatten() {
        if !(1..=12).contains(&r.start) || !(1..=12).contains(&r.end) || r.start > r.end {
            return Err(config_err(format!("month range {}..={} is outside 1–12", r.start, r.end)));
        }
    }
    let flat: Vec<MonthRange> = ranges.iter().flatten().copied().collect();
    for i in 0..flat.len() {
        for j in i + 1..flat.len() {
            if flat[i].start <= flat[j].end && flat[j].start <= flat[i].end {
                return Err(config_err("month ranges overlap"));
            }
        }
    }
    let inside = |r: Option<MonthRange>, m: u32| r.is_some_and(|r| (r.start..=r.end).contains(&m));
    let mut out = empty_manifest(ScenarioTag::TempMonth, ds);
    for (s, &ts) in ds.timestamps.iter().enumerate() {
        let m = utc(ts).month();
        if inside(split.train, m) {
            out.train.push(s);
        } else if inside(split.val, m) {
            out.val.push(s);
        } else if inside(split.adapt, m) {
            out.adapt.push(s);
        } else if inside(split.test, m) {
            out.test.push(s);
        }
    }
    Ok(out)
}

fn empty_manifest(scenario: ScenarioTag, ds: &SpatioTemporalDataset) -> SplitManifest {
    SplitManifest {
        scenario,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        adapt: Vec::new(),
        train_nodes: all_nodes(ds),
        test_only_nodes: Vec::new(),
        removed_nodes: Vec::new(),
    }
}

fn pick_nodes(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(config_err(format!("node fraction must lie in [0, 1), got {fraction}")));
    }
    let k = (fraction * n as f64 + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Hides `⌊fraction·N⌋` seeded nodes from training and validation; they
/// come back at test time. Steps follow `base`.
pub fn node_involvement(ds: &SpatioTemporalDataset, base: &SplitManifest, fraction: f64, seed: u64) -> Result<SplitManifest> {
    let n = ds.n_nodes();
    let masked = pick_nodes(n, fraction, seed)?;
    if n - masked.len() < 2 {
        return Err(config_err(format!("masking {} of {n} nodes leaves fewer than 2 for training", masked.len())));
    }
    Ok(SplitManifest {
        scenario: ScenarioTag::NodeInvolve,
        train_nodes: (0..n).filter(|i| !masked.contains(i)).collect(),
        test_only_nodes: masked,
        removed_nodes: Vec::new(),
        ..base.clone()
    })
}

/// Removes `⌊fraction·N⌋` seeded nodes at test time. Steps follow `base`.
pub fn node_removal(ds: &SpatioTemporalDataset, base: &SplitManifest, fraction: f64, seed: u64) -> Result<SplitManifest> {
    let n = ds.n_nodes();
    let removed = pick_nodes(n, fraction, seed)?;
    if n - removed.len() < 2 {
        return Err(config_err(format!("removing {} of {n} nodes leaves fewer than 2 at test time", removed.len())));
    }
    Ok(SplitManifest {
        scenario: ScenarioTag::NodeRemove,
        train_nodes: all_nodes(ds),
        test_only_nodes: Vec::new(),
        removed_nodes: removed,
        ..base.clone()
    })
}

/// Deletes the rows and columns of `removed` from a square matrix.
pub fn remove_nodes(a: ArrayView2<f64>, removed: &[usize]) -> Array2<f64> {
    let keep: Vec<usize> = (0..a.nrows()).filter(|i| !removed.contains(i)).collect();
    Array2::from_shape_fn((keep.len(), keep.len()), |(i, j)| a[[keep[i], keep[j]]])
}

/// Great-circle distance in kilometres between two (lat, long) points in
/// degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    const R: f64 = 6371.0088;
    let (la1, lo1, la2, lo2) = (a.0.to_radians(), a.1.to_radians(), b.0.to_radians(), b.1.to_radians());
    let h = ((la2 - la1) / 2.0).sin().powi(2) + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * R * h.sqrt().min(1.0).asin()
}

/// Index of the nearest existing node per new node (ties → smallest id).
pub fn nearest_donors(coords_old: ArrayView2<f64>, coords_new: ArrayView2<f64>) -> Result<Vec<usize>> {
    if coords_old.nrows() == 0 {
        return Err(config_err("node copy needs at least one existing node"));
    }
    Ok(coords_new
        .rows()
        .into_iter()
        .map(|p| {
            let mut best = (f64::INFINITY, 0usize);
            for (j, q) in coords_old.rows().into_iter().enumerate() {
                let d = haversine_km((p[0], p[1]), (q[0], q[1]));
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect())
}

/// Extends a learned `[N, N]` adjacency to `N + M` nodes: each new node
/// copies the row, column and self-entry of its nearest existing node;
/// entries between two new nodes copy the entry between their donors.
pub fn node_copy_adjacency(a: ArrayView2<f64>, coords_old: ArrayView2<f64>, coords_new: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n || coords_old.nrows() != n {
        return Err(config_err(format!("adjacency {:?} vs {} node coordinates", a.dim(), coords_old.nrows())));
    }
    let donors = nearest_donors(coords_old, coords_new)?;
    let src: Vec<usize> = (0..n).chain(donors).collect();
    Ok(Array2::from_shape_fn((src.len(), src.len()), |(i, j)| a[[src[i], src[j]]]))
}
