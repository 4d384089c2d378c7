//! The spatiotemporal forecaster: graph layers over a learnable adjacency
//! followed by dilated causal temporal convolutions.

mod checkpoint;
mod layers;
mod model;
mod optim;
mod params;

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4, Axis};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use layers::{normalize_adjacency, receptive_field, Activation, AdjacencyNorm};
pub use model::{Backbone, BackboneConfig, ForwardTrace, Injection, InjectionGrad};
pub use optim::{Adam, AdamConfig};
pub use params::{Block, ParamSet, TensorSpec};

use crate::error::{shape_err, Result};

/// Batched graph stack: `[B, κ, N, d] → [B, κ, N, d']`. Raw adjacencies
/// are normalized inside according to `norm`.
pub fn spatial_forward(
    x: ArrayView4<f64>,
    adjacency: &[ArrayView2<f64>],
    omegas: &[ArrayView2<f64>],
    norm: AdjacencyNorm,
    act: Activation,
) -> Result<Array4<f64>> {
    let (b, k, n, _) = x.dim();
    if adjacency.len() != omegas.len() {
        return Err(shape_err("one adjacency per feature transform"));
    }
    let out_dim = omegas.last().map_or(x.dim().3, |w| w.ncols());
    let normed: Vec<Array2<f64>> = adjacency.iter().map(|a| normalize_adjacency(*a, norm)).collect();
    let mut out = Array4::zeros((b, k, n, out_dim));
    for i in 0..b {
        let steps: Vec<Array2<f64>> = (0..k).map(|t| x.slice(ndarray::s![i, t, .., ..]).to_owned()).collect();
        let trace = layers::spatial_stack_forward(steps, normed.clone(), omegas, act)?;
        for (t, h) in trace.output().iter().enumerate() {
            out.slice_mut(ndarray::s![i, t, .., ..]).assign(h);
        }
    }
    Ok(out)
}

/// Batched temporal stack: `[B, κ, N, d] → [B, N, d'']` (last position).
pub fn temporal_forward(
    x: ArrayView4<f64>,
    kernels: &[ArrayView3<f64>],
    dilations: &[usize],
    act: Activation,
) -> Result<Array3<f64>> {
    let (b, k, n, _) = x.dim();
    let out_dim = kernels.last().map_or(x.dim().3, |w| w.dim().2);
    let mut out = Array3::zeros((b, n, out_dim));
    for i in 0..b {
        let steps: Vec<Array2<f64>> = (0..k).map(|t| x.slice(ndarray::s![i, t, .., ..]).to_owned()).collect();
        let trace = layers::temporal_stack_forward(steps, kernels, dilations, act)?;
        out.index_axis_mut(Axis(0), i).assign(trace.output());
    }
    Ok(out)
}

/// Mean absolute error over all entries.
pub fn loss_mae_train(pred: ArrayView3<f64>, target: ArrayView3<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(shape_err(format!("prediction {:?} vs target {:?}", pred.dim(), target.dim())));
    }
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target.iter()).map(|(p, y)| (p - y).abs()).sum::<f64>() / n)
}

/// Subgradient of [`loss_mae_train`]; zero where the residual is zero.
pub fn loss_mae_grad(pred: ArrayView3<f64>, target: ArrayView3<f64>, scale: f64) -> Array3<f64> {
    let n = pred.len() as f64;
    let mut g = pred.to_owned();
    g.zip_mut_with(&target, |p, &y| {
        let r = *p - y;
        *p = if r > 0.0 {
            scale / n
        } else if r < 0.0 {
            -scale / n
        } else {
            0.0
        };
    });
    g
}
