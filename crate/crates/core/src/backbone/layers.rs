//! Per-sample spatial and temporal blocks with their backward passes.
//!
//! A sample is a sequence of `κ` node-feature matrices (`[N, d]`, one per
//! input step). Batched entry points live in the parent module.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Linear,
    /// `x` for positive input, `slope * x` otherwise; slope 0 is plain ReLU.
    LeakyRelu { slope: f64 },
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Linear => x,
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    pub fn deriv(&self, pre: f64) -> f64 {
        match *self {
            Activation::Linear => 1.0,
            Activation::LeakyRelu { slope } => {
                if pre > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

/// How the learnable adjacency is turned into propagation weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyNorm {
    /// Row-wise softmax of unconstrained logits.
    Softmax,
    /// Divide each row by its sum (rows summing to zero stay zero).
    RowSum,
}

/// Left-to-right sum. Unlike the lane-unrolled `sum`, exact zeros never
/// change the result, so masking a node's column matches deleting it.
fn sequential_sum(v: ArrayView1<f64>) -> f64 {
    v.iter().fold(0.0, |acc, &x| acc + x)
}

pub fn normalize_adjacency(a: ArrayView2<f64>, norm: AdjacencyNorm) -> Array2<f64> {
    let mut out = a.to_owned();
    for mut row in out.rows_mut() {
        match norm {
            AdjacencyNorm::Softmax => {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - max).exp());
                let sum = sequential_sum(row.view());
                row.mapv_inplace(|v| v / sum);
            }
            AdjacencyNorm::RowSum => {
                let sum = sequential_sum(row.view());
                if sum != 0.0 {
                    row.mapv_inplace(|v| v / sum);
                }
            }
        }
    }
    out
}

/// Gradient w.r.t. the raw adjacency given the gradient w.r.t. its
/// normalized form.
pub fn normalize_adjacency_backward(
    raw: ArrayView2<f64>,
    normed: &Array2<f64>,
    d_normed: &Array2<f64>,
    norm: AdjacencyNorm,
) -> Array2<f64> {
    let n = raw.nrows();
    let mut d = Array2::zeros(raw.dim());
    for i in 0..n {
        match norm {
            AdjacencyNorm::Softmax => {
                let dot: f64 = (0..raw.ncols()).map(|k| d_normed[[i, k]] * normed[[i, k]]).sum();
                for j in 0..raw.ncols() {
                    d[[i, j]] = normed[[i, j]] * (d_normed[[i, j]] - dot);
                }
            }
            AdjacencyNorm::RowSum => {
                let sum: f64 = raw.row(i).sum();
                if sum == 0.0 {
                    continue;
                }
                let dot: f64 = (0..raw.ncols()).map(|k| d_normed[[i, k]] * raw[[i, k]]).sum();
                for j in 0..raw.ncols() {
                    d[[i, j]] = d_normed[[i, j]] / sum - dot / (sum * sum);
                }
            }
        }
    }
    d
}

fn check_finite(m: &Array2<f64>, stage: &'static str, layer: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerics { stage, layer })
    }
}

/// Cached activations of the spatial stack for one sample.
#[derive(Debug, Clone)]
pub struct SpatialTrace {
    pub adj: Vec<Array2<f64>>,
    /// `inputs[k][t]` feeds layer `k`; `inputs[K]` is the stack output.
    pub inputs: Vec<Vec<Array2<f64>>>,
    pub agg: Vec<Vec<Array2<f64>>>,
    pub pre: Vec<Vec<Array2<f64>>>,
}

impl SpatialTrace {
    pub fn output(&self) -> &[Array2<f64>] {
        self.inputs.last().expect("at least the input")
    }
}

/// `X ← act(Â_k · X · ω_k)` for each layer, applied per time step.
pub fn spatial_stack_forward(
    x: Vec<Array2<f64>>,
    adj_norm: Vec<Array2<f64>>,
    omegas: &[ArrayView2<f64>],
    act: Activation,
) -> Result<SpatialTrace> {
    let mut inputs = vec![x];
    let mut agg_all = Vec::with_capacity(omegas.len());
    let mut pre_all = Vec::with_capacity(omegas.len());
    for (k, (a, w)) in adj_norm.iter().zip(omegas).enumerate() {
        let cur = inputs.last().expect("input");
        let mut aggs = Vec::with_capacity(cur.len());
        let mut pres = Vec::with_capacity(cur.len());
        let mut outs = Vec::with_capacity(cur.len());
        for h in cur {
            let ah = a.dot(h);
            let pre = ah.dot(w);
            let out = pre.mapv(|v| act.apply(v));
            check_finite(&out, "spatial", k)?;
            aggs.push(ah);
            pres.push(pre);
            outs.push(out);
        }
        agg_all.push(aggs);
        pre_all.push(pres);
        inputs.push(outs);
    }
    Ok(SpatialTrace { adj: adj_norm, inputs, agg: agg_all, pre: pre_all })
}

/// Returns the gradient w.r.t. the stack input and accumulates gradients
/// of the normalized adjacencies and feature transforms.
pub fn spatial_stack_backward(
    trace: &SpatialTrace,
    omegas: &[ArrayView2<f64>],
    act: Activation,
    d_out: Vec<Array2<f64>>,
    d_adj: &mut [Array2<f64>],
    d_omega: &mut [Array2<f64>],
) -> Vec<Array2<f64>> {
    let mut d_h = d_out;
    for k in (0..omegas.len()).rev() {
        let a = &trace.adj[k];
        let mut d_prev = Vec::with_capacity(d_h.len());
        for (t, dh) in d_h.iter().enumerate() {
            let pre = &trace.pre[k][t];
            let mut dpre = dh.clone();
            dpre.zip_mut_with(pre, |g, &p| *g *= act.deriv(p));
            d_omega[k] += &trace.agg[k][t].t().dot(&dpre);
            let d_agg = dpre.dot(&omegas[k].t());
            let h = &trace.inputs[k][t];
            d_adj[k] += &d_agg.dot(&h.t());
            d_prev.push(a.t().dot(&d_agg));
        }
        d_h = d_prev;
    }
    d_h
}

/// Cached activations of the temporal stack for one sample.
#[derive(Debug, Clone)]
pub struct TemporalTrace {
    /// `inputs[j][t]` feeds layer `j`; positions a layer never computed are `None`.
    pub inputs: Vec<Vec<Option<Array2<f64>>>>,
    pub pre: Vec<Vec<Option<Array2<f64>>>>,
}

impl TemporalTrace {
    /// Features at the last input step after the final layer.
    pub fn output(&self) -> &Array2<f64> {
        self.inputs.last().and_then(|v| v.last()).and_then(Option::as_ref).expect("final position")
    }
}

/// Source step for kernel tap `m` at output position `t`; `None` is the
/// implicit causal zero padding.
fn tap_source(t: usize, m: usize, width: usize, dilation: usize) -> Option<usize> {
    let back = (width - 1 - m) * dilation;
    t.checked_sub(back)
}

pub fn receptive_field(kernels: &[usize], dilations: &[usize]) -> usize {
    1 + kernels.iter().zip(dilations).map(|(k, d)| (k - 1) * d).sum::<usize>()
}

/// Stacked dilated causal convolutions; kernel tap `width-1` sees the
/// current step. Only the final layer's last position is produced, which
/// collapses the time axis to one.
pub fn temporal_stack_forward(
    x: Vec<Array2<f64>>,
    kernels: &[ArrayView3<f64>],
    dilations: &[usize],
    act: Activation,
) -> Result<TemporalTrace> {
    let steps = x.len();
    let mut inputs: Vec<Vec<Option<Array2<f64>>>> = vec![x.into_iter().map(Some).collect()];
    let mut pres = Vec::with_capacity(kernels.len());
    for (j, (w, &dil)) in kernels.iter().zip(dilations).enumerate() {
        let width = w.dim().0;
        let last = j + 1 == kernels.len();
        let cur = inputs.last().expect("input");
        let mut pre_j: Vec<Option<Array2<f64>>> = vec![None; steps];
        let mut out_j: Vec<Option<Array2<f64>>> = vec![None; steps];
        let positions = if last { steps - 1..steps } else { 0..steps };
        for t in positions {
            let mut z: Option<Array2<f64>> = None;
            for m in 0..width {
                if let Some(src) = tap_source(t, m, width, dil) {
                    let u = cur[src].as_ref().expect("earlier layers compute every position");
                    let contrib = u.dot(&w.index_axis(Axis(0), m));
                    z = Some(match z {
                        Some(acc) => acc + contrib,
                        None => contrib,
                    });
                }
            }
            let z = z.expect("tap m = width-1 always sees step t");
            let out = z.mapv(|v| act.apply(v));
            check_finite(&out, "temporal", j)?;
            pre_j[t] = Some(z);
            out_j[t] = Some(out);
        }
        pres.push(pre_j);
        inputs.push(out_j);
    }
    Ok(TemporalTrace { inputs, pre: pres })
}

/// Returns the gradient w.r.t. the stack input (one matrix per step) and
/// accumulates kernel gradients.
pub fn temporal_stack_backward(
    trace: &TemporalTrace,
    kernels: &[ArrayView3<f64>],
    dilations: &[usize],
    act: Activation,
    d_out: Array2<f64>,
    d_kernels: &mut [ndarray::Array3<f64>],
) -> Vec<Array2<f64>> {
    let steps = trace.inputs[0].len();
    let in_shape = trace.inputs[0][0].as_ref().map(|a| a.dim()).unwrap_or(d_out.dim());
    let mut d_next: Vec<Option<Array2<f64>>> = vec![None; steps];
    d_next[steps - 1] = Some(d_out);
    for j in (0..kernels.len()).rev() {
        let w = &kernels[j];
        let width = w.dim().0;
        let dil = dilations[j];
        let mut d_cur: Vec<Option<Array2<f64>>> = vec![None; steps];
        for t in (0..steps).rev() {
            let Some(du) = d_next[t].take() else { continue };
            let pre = trace.pre[j][t].as_ref().expect("computed position");
            let mut dz = du;
            dz.zip_mut_with(pre, |g, &p| *g *= act.deriv(p));
            for m in 0..width {
                if let Some(src) = tap_source(t, m, width, dil) {
                    let u = trace.inputs[j][src].as_ref().expect("input");
                    let mut dk = d_kernels[j].index_axis_mut(Axis(0), m);
                    dk += &u.t().dot(&dz);
                    let back = dz.dot(&w.index_axis(Axis(0), m).t());
                    match d_cur[src].as_mut() {
                        Some(acc) => *acc += &back,
                        None => d_cur[src] = Some(back),
                    }
                }
            }
        }
        d_next = d_cur;
    }
    d_next
        .into_iter()
        .map(|d| d.unwrap_or_else(|| Array2::zeros(in_shape)))
        .collect()
}
