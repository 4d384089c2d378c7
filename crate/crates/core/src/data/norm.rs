use ndarray::{Array, Axis, Dimension};
use serde::{Deserialize, Serialize};

use super::SpatioTemporalDataset;

/// Per-feature z-score statistics fitted on training steps and nodes only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose spread was zero; their std is clamped to 1.
    pub degenerate: Vec<bool>,
}

impl NormStats {
    pub fn fit(ds: &SpatioTemporalDataset, steps: &[usize], nodes: &[usize]) -> NormStats {
        let f = ds.n_features();
        let count = (steps.len() * nodes.len()) as f64;
        let mut mean = vec![0.0; f];
        for &s in steps {
            for &i in nodes {
                for k in 0..f {
                    mean[k] += ds.observations[[s, i, k]];
                }
            }
        }
        for m in &mut mean {
            *m /= count.max(1.0);
        }
        let mut var = vec![0.0; f];
        for &s in steps {
            for &i in nodes {
                for k in 0..f {
                    var[k] += (ds.observations[[s, i, k]] - mean[k]).powi(2);
                }
            }
        }
        let mut std = Vec::with_capacity(f);
        let mut degenerate = Vec::with_capacity(f);
        for v in var {
            let sd = (v / count.max(1.0)).sqrt();
            if sd > 1e-12 && sd.is_finite() {
                std.push(sd);
                degenerate.push(false);
            } else {
                std.push(1.0);
                degenerate.push(true);
            }
        }
        NormStats { mean, std, degenerate }
    }

    pub fn identity(f: usize) -> NormStats {
        NormStats { mean: vec![0.0; f], std: vec![1.0; f], degenerate: vec![false; f] }
    }

    /// Normalizes any array whose last axis is the feature axis.
    pub fn transform<D: Dimension + ndarray::RemoveAxis>(&self, x: &Array<f64, D>) -> Array<f64, D> {
        let mut out = x.clone();
        let last = Axis(out.ndim() - 1);
        for (k, mut lane) in out.axis_iter_mut(last).enumerate() {
            let (m, s) = (self.mean[k], self.std[k]);
            lane.mapv_inplace(|v| (v - m) / s);
        }
        out
    }

    pub fn inverse<D: Dimension + ndarray::RemoveAxis>(&self, x: &Array<f64, D>) -> Array<f64, D> {
        let mut out = x.clone();
        let last = Axis(out.ndim() - 1);
        for (k, mut lane) in out.axis_iter_mut(last).enumerate() {
            let (m, s) = (self.mean[k], self.std[k]);
            lane.mapv_inplace(|v| v * s + m);
        }
        out
    }

    pub fn normalize(&self, ds: &SpatioTemporalDataset) -> SpatioTemporalDataset {
        SpatioTemporalDataset { observations: self.transform(&ds.observations), ..ds.clone() }
    }

    pub fn denormalize<D: Dimension + ndarray::RemoveAxis>(&self, preds: &Array<f64, D>) -> Array<f64, D> {
        self.inverse(preds)
    }
}
