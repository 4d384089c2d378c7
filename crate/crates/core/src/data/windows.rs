use ndarray::{s, Array2, ArrayView3};
use serde::{Deserialize, Serialize};

use super::SpatioTemporalDataset;
use crate::error::{Error, Result};

/// Input/target windows, stored by anchor step `t`:
/// `X = obs[t-κ+1 ..= t]`, `Y = obs[t+1 ..= t+l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub kappa: usize,
    pub horizon: usize,
    pub anchors: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// First input step of window `w`.
    pub fn start(&self, w: usize) -> usize {
        self.anchors[w] + 1 - self.kappa
    }

    pub fn input<'a>(&self, ds: &'a SpatioTemporalDataset, w: usize) -> ArrayView3<'a, f64> {
        let t = self.anchors[w];
        ds.observations.slice(s![t + 1 - self.kappa..=t, .., ..])
    }

    pub fn target<'a>(&self, ds: &'a SpatioTemporalDataset, w: usize) -> ArrayView3<'a, f64> {
        let t = self.anchors[w];
        ds.observations.slice(s![t + 1..=t + self.horizon, .., ..])
    }

    /// Every step touched by window `w`, inputs and targets.
    pub fn steps(&self, w: usize) -> std::ops::RangeInclusive<usize> {
        self.start(w)..=self.anchors[w] + self.horizon
    }

    pub fn subset(&self, picks: &[usize]) -> WindowSet {
        WindowSet {
            kappa: self.kappa,
            horizon: self.horizon,
            anchors: picks.iter().map(|&i| self.anchors[i]).collect(),
        }
    }
}

fn anchors(n_steps: usize, kappa: usize, horizon: usize, allowed: &[usize]) -> Vec<usize> {
    let mut mask = vec![false; n_steps];
    for &s in allowed {
        if s < n_steps {
            mask[s] = true;
        }
    }
    // run[s] = number of consecutive allowed steps ending at s
    let mut run = vec![0usize; n_steps];
    for s in 0..n_steps {
        if mask[s] {
            run[s] = if s == 0 { 1 } else { run[s - 1] + 1 };
        }
    }
    let span = kappa + horizon;
    (kappa - 1..n_steps.saturating_sub(horizon))
        .filter(|&t| run[t + horizon] >= span)
        .collect()
}

/// All windows whose κ input and l target steps lie inside `allowed`.
pub fn make_windows(
    ds: &SpatioTemporalDataset,
    kappa: usize,
    horizon: usize,
    allowed: &[usize],
) -> Result<WindowSet> {
    if kappa == 0 || horizon == 0 {
        return Err(Error::Config(format!("κ and l must be ≥ 1 (got {kappa}, {horizon})")));
    }
    let n_steps = ds.n_steps();
    if let Some(&bad) = allowed.iter().find(|&&s| s >= n_steps) {
        return Err(Error::Config(format!("allowed step {bad} outside [0, {n_steps})")));
    }
    let found = anchors(n_steps, kappa, horizon, allowed);
    if found.is_empty() {
        return Err(Error::EmptyWindow(format!(
            "no κ={kappa}, l={horizon} window inside {} allowed steps",
            allowed.len()
        )));
    }
    Ok(WindowSet { kappa, horizon, anchors: found })
}

/// Input-only windows (no targets), used for the self-supervised
/// distribution objective where labels are never read.
pub fn observation_windows(
    ds: &SpatioTemporalDataset,
    kappa: usize,
    allowed: &[usize],
) -> Result<WindowSet> {
    if kappa == 0 {
        return Err(Error::Config("κ must be ≥ 1".into()));
    }
    let found = anchors(ds.n_steps(), kappa, 0, allowed);
    if found.is_empty() {
        return Err(Error::EmptyWindow(format!("no κ={kappa} observation window inside the allowed steps")));
    }
    Ok(WindowSet { kappa, horizon: 0, anchors: found })
}

/// Per node and feature mean and population standard deviation over the
/// window's time axis.
pub fn window_distribution(window: ArrayView3<f64>) -> (Array2<f64>, Array2<f64>) {
    let (k, n, f) = window.dim();
    let inv = 1.0 / k as f64;
    let mut mu = Array2::zeros((n, f));
    for t in 0..k {
        for i in 0..n {
            for j in 0..f {
                mu[[i, j]] += window[[t, i, j]];
            }
        }
    }
    mu.mapv_inplace(|v| v * inv);
    let mut var = Array2::<f64>::zeros((n, f));
    for t in 0..k {
        for i in 0..n {
            for j in 0..f {
                let d = window[[t, i, j]] - mu[[i, j]];
                var[[i, j]] += d * d;
            }
        }
    }
    let sigma = var.mapv(|v| (v * inv).max(0.0).sqrt());
    (mu, sigma)
}

/// Reference implementation used by tests: independent per-series
/// two-pass computation.
pub fn brute_force_distribution(window: ArrayView3<f64>) -> (Array2<f64>, Array2<f64>) {
    let (k, n, f) = window.dim();
    let mut mu = Array2::zeros((n, f));
    let mut sigma = Array2::zeros((n, f));
    for i in 0..n {
        for j in 0..f {
            let series: Vec<f64> = (0..k).map(|t| window[[t, i, j]]).collect();
            let m = series.iter().sum::<f64>() / k as f64;
            let v = series.iter().map(|x| (x - m).powi(2)).sum::<f64>() / k as f64;
            mu[[i, j]] = m;
            sigma[[i, j]] = v.sqrt();
        }
    }
    (mu, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array2 as A2};
    use proptest::prelude::*;

    fn ds_with_steps(t: usize) -> SpatioTemporalDataset {
        SpatioTemporalDataset {
            observations: Array3::from_shape_fn((t, 2, 1), |(s, i, _)| (10 * s + i) as f64),
            adjacency: A2::zeros((2, 2)),
            node_coords: A2::zeros((2, 2)),
            node_ids: vec![0, 1],
            timestamps: (0..t as i64).map(|s| s * 60).collect(),
            interval_seconds: 60,
            feature_units: vec!["u".into()],
            projection_seed: 0,
            self_loops: false,
        }
    }

    #[test]
    fn all_steps_allowed_gives_every_anchor() {
        let ds = ds_with_steps(5);
        let w = make_windows(&ds, 2, 1, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(w.anchors, vec![1, 2, 3]);
    }

    #[test]
    fn excluded_step_blocks_every_window_touching_it() {
        // With T=5, κ=2, l=1 every window touches step 2, so none survive.
        let ds = ds_with_steps(5);
        let r = make_windows(&ds, 2, 1, &[0, 1, 3, 4]);
        assert!(matches!(r, Err(Error::EmptyWindow(_))));
        // A longer series keeps the windows fully on either side of the hole.
        let ds = ds_with_steps(8);
        let w = make_windows(&ds, 2, 1, &[0, 1, 3, 4, 5, 6, 7]).unwrap();
        assert_eq!(w.anchors, vec![4, 5, 6]);
        for i in 0..w.len() {
            assert!(!w.steps(i).any(|s| s == 2));
        }
    }

    #[test]
    fn too_long_window_is_empty() {
        let ds = ds_with_steps(5);
        assert!(matches!(make_windows(&ds, 4, 2, &[0, 1, 2, 3, 4]), Err(Error::EmptyWindow(_))));
    }

    #[test]
    fn slicing_is_exact() {
        let ds = ds_with_steps(20);
        let all: Vec<usize> = (0..20).collect();
        let w = make_windows(&ds, 4, 3, &all).unwrap();
        for k in 0..w.len() {
            let t = w.anchors[k];
            let x = w.input(&ds, k);
            for j in 0..4 {
                assert_eq!(x.slice(s![j, .., ..]), ds.observations.slice(s![t - 3 + j, .., ..]));
            }
            let y = w.target(&ds, k);
            for j in 0..3 {
                assert_eq!(y.slice(s![j, .., ..]), ds.observations.slice(s![t + 1 + j, .., ..]));
            }
        }
    }

    fn dist_of(series: &[f64]) -> (f64, f64) {
        let x = Array3::from_shape_fn((series.len(), 1, 1), |(t, _, _)| series[t]);
        let (m, s) = window_distribution(x.view());
        (m[[0, 0]], s[[0, 0]])
    }

    #[test]
    fn distribution_hand_values() {
        assert_eq!(dist_of(&[2.0, 2.0, 2.0, 2.0]), (2.0, 0.0));
        assert_eq!(dist_of(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(dist_of(&[0.0, 0.0, 4.0, 4.0]), (2.0, 2.0));
        assert_eq!(dist_of(&[5.0]), (5.0, 0.0));
    }

    proptest! {
        #[test]
        fn distribution_matches_two_pass_oracle(
            k in 1usize..16, n in 1usize..5, f in 1usize..3,
            seed in proptest::collection::vec(-100.0f64..100.0, 240)
        ) {
            let x = Array3::from_shape_fn((k, n, f), |(t, i, j)| seed[(t * 15 + i * 3 + j) % 240]);
            let (m, s) = window_distribution(x.view());
            let (mo, so) = brute_force_distribution(x.view());
            for (a, b) in m.iter().zip(mo.iter()) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
            for (a, b) in s.iter().zip(so.iter()) {
                prop_assert!((a - b).abs() <= 1e-10);
                prop_assert!(*a >= 0.0);
            }
        }
    }
}
