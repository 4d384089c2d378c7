use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    normalize_adjacency, normalize_adjacency_backward, receptive_field, spatial_stack_backward,
    spatial_stack_forward, temporal_stack_backward, temporal_stack_forward, Activation,
    AdjacencyNorm, SpatialTrace, TemporalTrace,
};
use super::params::{Block, ParamSet};
use crate::error::{config_err, shape_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub n_nodes: usize,
    pub n_features: usize,
    pub hidden: usize,
    pub spatial_layers: usize,
    pub kernels: Vec<usize>,
    pub dilations: Vec<usize>,
    pub kappa: usize,
    pub horizon: usize,
    pub adjacency_norm: AdjacencyNorm,
    pub activation: Activation,
}

impl BackboneConfig {
    /// Two graph layers, temporal kernels (12, 6, 3) with dilations
    /// (1, 2, 4), hidden width 32.
    pub fn standard(n_nodes: usize, n_features: usize, kappa: usize, horizon: usize) -> BackboneConfig {
        BackboneConfig {
            n_nodes,
            n_features,
            hidden: 32,
            spatial_layers: 2,
            kernels: vec![12, 6, 3],
            dilations: vec![1, 2, 4],
            kappa,
            horizon,
            adjacency_norm: AdjacencyNorm::Softmax,
            activation: Activation::LeakyRelu { slope: 0.01 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 || self.n_features == 0 || self.hidden == 0 {
            return Err(config_err("backbone dimensions must be positive"));
        }
        if self.kappa == 0 || self.horizon == 0 {
            return Err(config_err("κ and l must be positive"));
        }
        if self.kernels.is_empty() || self.kernels.len() != self.dilations.len() {
            return Err(config_err("need one dilation per temporal kernel"));
        }
        if self.kernels.iter().chain(&self.dilations).any(|&v| v == 0) {
            return Err(config_err("kernel widths and dilations must be positive"));
        }
        let rf = receptive_field(&self.kernels, &self.dilations);
        if rf < self.kappa {
            return Err(config_err(format!("temporal receptive field {rf} is shorter than κ = {}", self.kappa)));
        }
        Ok(())
    }
}

/// Registry positions of the backbone tensors.
#[derive(Debug, Clone, PartialEq)]
struct Slots {
    in_w: usize,
    in_b: usize,
    adj: Vec<usize>,
    omega: Vec<usize>,
    temporal: Vec<usize>,
    out_w: usize,
    out_b: usize,
}

/// Additive prompt terms already mapped to the injection widths:
/// `spatial` is `[N, F]` (added to every step of the raw input),
/// `temporal` is `[κ, d]` (added to every node after the graph layers).
#[derive(Debug, Clone, Copy)]
pub struct Injection<'a> {
    pub spatial: ArrayView2<'a, f64>,
    pub temporal: ArrayView2<'a, f64>,
}

/// Gradients w.r.t. the injected terms.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionGrad {
    pub spatial: Array2<f64>,
    pub temporal: Array2<f64>,
}

/// Everything the backward pass needs for one sample.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    x_in: Vec<Array2<f64>>,
    spatial: SpatialTrace,
    temporal: TemporalTrace,
    injected: bool,
}

/// The graph + temporal-convolution forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub params: ParamSet,
    slots: Slots,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl Backbone {
    /// Fresh weights. Adjacency logits start from `prior` (edges and
    /// self-loops get logit 2, others 0) plus small noise.
    pub fn new(cfg: BackboneConfig, prior: Option<ArrayView2<f64>>, seed: u64) -> Result<Backbone> {
        cfg.validate()?;
        let (n, f, d) = (cfg.n_nodes, cfg.n_features, cfg.hidden);
        if let Some(p) = prior {
            if p.dim() != (n, n) {
                return Err(shape_err(format!("adjacency prior {:?} for {n} nodes", p.dim())));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let in_w = params.push("head.in_w", &[f, d], Block::Head, gaussian(&mut rng, f * d, (1.0 / f as f64).sqrt()));
        let in_b = params.push("head.in_b", &[d], Block::Head, gaussian(&mut rng, d, 0.1));
        let mut adj = Vec::new();
        let mut omega = Vec::new();
        for k in 0..cfg.spatial_layers {
            let noise = gaussian(&mut rng, n * n, 0.01);
            let logits: Vec<f64> = (0..n * n)
                .map(|idx| {
                    let (i, j) = (idx / n, idx % n);
                    let edge = match (&cfg.adjacency_norm, prior) {
                        (AdjacencyNorm::Softmax, Some(p)) => {
                            if i == j || p[[i, j]] > 0.0 {
                                2.0
                            } else {
                                0.0
                            }
                        }
                        (AdjacencyNorm::Softmax, None) => 0.0,
                        (AdjacencyNorm::RowSum, Some(p)) => p[[i, j]] + if i == j { 1.0 } else { 0.0 },
                        (AdjacencyNorm::RowSum, None) => 1.0,
                    };
                    match cfg.adjacency_norm {
                        AdjacencyNorm::Softmax => edge + noise[idx],
                        AdjacencyNorm::RowSum => edge,
                    }
                })
                .collect();
            adj.push(params.push(format!("A_{k}"), &[n, n], Block::Spatial, logits));
            omega.push(params.push(format!("omega_{k}"), &[d, d], Block::Spatial, gaussian(&mut rng, d * d, (2.0 / d as f64).sqrt())));
        }
        let mut temporal = Vec::new();
        for (j, &k) in cfg.kernels.iter().enumerate() {
            let std = (2.0 / (k * d) as f64).sqrt();
            temporal.push(params.push(format!("w_t_{j}"), &[k, d, d], Block::Temporal, gaussian(&mut rng, k * d * d, std)));
        }
        let lf = cfg.horizon * f;
        let out_w = params.push("head.out_w", &[d, lf], Block::Head, gaussian(&mut rng, d * lf, (1.0 / d as f64).sqrt()));
        let out_b = params.push("head.out_b", &[lf], Block::Head, vec![0.0; lf]);
        Ok(Backbone { cfg, params, slots: Slots { in_w, in_b, adj, omega, temporal, out_w, out_b } })
    }

    /// Same architecture with a new node count and explicit adjacency
    /// logits per graph layer; every other tensor is copied.
    pub fn with_adjacency(&self, adjs: &[Array2<f64>]) -> Result<Backbone> {
        if adjs.len() != self.cfg.spatial_layers {
            return Err(shape_err("one adjacency per graph layer required"));
        }
        let n = adjs[0].nrows();
        if adjs.iter().any(|a| a.dim() != (n, n)) {
            return Err(shape_err("adjacencies must be square and equal-sized"));
        }
        let mut cfg = self.cfg.clone();
        cfg.n_nodes = n;
        let mut params = ParamSet::new();
        let mut map = Vec::new();
        for (idx, spec) in self.params.specs().iter().enumerate() {
            let new_idx = match self.slots.adj.iter().position(|&a| a == idx) {
                Some(k) => params.push(spec.name.clone(), &[n, n], spec.block, adjs[k].iter().copied().collect()),
                None => params.push(spec.name.clone(), &spec.shape, spec.block, self.params.slice(idx).to_vec()),
            };
            map.push(new_idx);
        }
        let s = &self.slots;
        let slots = Slots {
            in_w: map[s.in_w],
            in_b: map[s.in_b],
            adj: s.adj.iter().map(|&i| map[i]).collect(),
            omega: s.omega.iter().map(|&i| map[i]).collect(),
            temporal: s.temporal.iter().map(|&i| map[i]).collect(),
            out_w: map[s.out_w],
            out_b: map[s.out_b],
        };
        Ok(Backbone { cfg, params, slots })
    }

    pub fn adjacency_logits(&self) -> Vec<Array2<f64>> {
        self.slots.adj.iter().map(|&i| self.params.mat(i).to_owned()).collect()
    }

    pub fn normalized_adjacency(&self) -> Vec<Array2<f64>> {
        self.slots
            .adj
            .iter()
            .map(|&i| normalize_adjacency(self.params.mat(i), self.cfg.adjacency_norm))
            .collect()
    }

    fn omegas(&self) -> Vec<ArrayView2<'_, f64>> {
        self.slots.omega.iter().map(|&i| self.params.mat(i)).collect()
    }

    fn kernels(&self) -> Vec<ArrayView3<'_, f64>> {
        self.slots.temporal.iter().map(|&i| self.params.tensor3(i)).collect()
    }

    /// Forward pass of one window `x: [κ, N, F]` → `[l, N, F]`.
    pub fn forward_one(&self, x: ArrayView3<f64>, inj: Option<&Injection>) -> Result<(Array3<f64>, ForwardTrace)> {
        let cfg = &self.cfg;
        let (k, n, f) = x.dim();
        if (k, n, f) != (cfg.kappa, cfg.n_nodes, cfg.n_features) {
            return Err(shape_err(format!(
                "input window {:?}, model expects ({}, {}, {})",
                x.dim(),
                cfg.kappa,
                cfg.n_nodes,
                cfg.n_features
            )));
        }
        if let Some(inj) = inj {
            if inj.spatial.dim() != (n, f) {
                return Err(shape_err(format!("spatial injection {:?}, expected ({n}, {f})", inj.spatial.dim())));
            }
            if inj.temporal.dim() != (k, cfg.hidden) {
                return Err(shape_err(format!("temporal injection {:?}, expected ({k}, {})", inj.temporal.dim(), cfg.hidden)));
            }
        }
        let in_w = self.params.mat(self.slots.in_w);
        let in_b = ndarray::ArrayView1::from(self.params.slice(self.slots.in_b));
        let mut x_in = Vec::with_capacity(k);
        let mut h0 = Vec::with_capacity(k);
        for t in 0..k {
            let mut xt = x.index_axis(Axis(0), t).to_owned();
            if let Some(inj) = inj {
                xt += &inj.spatial;
            }
            let h = xt.dot(&in_w) + &in_b;
            x_in.push(xt);
            h0.push(h);
        }
        let spatial = spatial_stack_forward(h0, self.normalized_adjacency(), &self.omegas(), cfg.activation)?;
        let mut u0: Vec<Array2<f64>> = spatial.output().to_vec();
        if let Some(inj) = inj {
            for (t, u) in u0.iter_mut().enumerate() {
                *u += &inj.temporal.row(t);
            }
        }
        let temporal = temporal_stack_forward(u0, &self.kernels(), &cfg.dilations, cfg.activation)?;
        let out_w = self.params.mat(self.slots.out_w);
        let out_b = ndarray::ArrayView1::from(self.params.slice(self.slots.out_b));
        let y2 = temporal.output().dot(&out_w) + &out_b;
        let y = Array3::from_shape_fn((cfg.horizon, n, f), |(h, i, j)| y2[[i, h * f + j]]);
        Ok((y, ForwardTrace { x_in, spatial, temporal, injected: inj.is_some() }))
    }

    /// Backward pass for one sample: accumulates parameter gradients into
    /// `grads` and returns gradients w.r.t. the injected prompt terms.
    pub fn backward_one(&self, trace: &ForwardTrace, d_y: &Array3<f64>, grads: &mut [f64]) -> Option<InjectionGrad> {
        let cfg = &self.cfg;
        let (n, f, d) = (cfg.n_nodes, cfg.n_features, cfg.hidden);
        let lf = cfg.horizon * f;
        let d_y2 = Array2::from_shape_fn((n, lf), |(i, c)| d_y[[c / f, i, c % f]]);

        let o = trace.temporal.output();
        let out_w = self.params.mat(self.slots.out_w);
        add_into(grads, self.params.spec(self.slots.out_w).offset, &o.t().dot(&d_y2));
        add_vec(grads, self.params.spec(self.slots.out_b).offset, d_y2.sum_axis(Axis(0)).iter());
        let d_o = d_y2.dot(&out_w.t());

        let kernels = self.kernels();
        let mut d_kernels: Vec<Array3<f64>> = kernels.iter().map(|w| Array3::zeros(w.dim())).collect();
        let d_u0 = temporal_stack_backward(&trace.temporal, &kernels, &cfg.dilations, cfg.activation, d_o, &mut d_kernels);
        for (j, dk) in d_kernels.iter().enumerate() {
            add_vec(grads, self.params.spec(self.slots.temporal[j]).offset, dk.iter());
        }
        let d_temporal = if trace.injected {
            let mut dt = Array2::zeros((cfg.kappa, d));
            for (t, du) in d_u0.iter().enumerate() {
                dt.row_mut(t).assign(&du.sum_axis(Axis(0)));
            }
            Some(dt)
        } else {
            None
        };

        let omegas = self.omegas();
        let mut d_adj: Vec<Array2<f64>> = (0..cfg.spatial_layers).map(|_| Array2::zeros((n, n))).collect();
        let mut d_omega: Vec<Array2<f64>> = (0..cfg.spatial_layers).map(|_| Array2::zeros((d, d))).collect();
        let d_h0 = spatial_stack_backward(&trace.spatial, &omegas, cfg.activation, d_u0, &mut d_adj, &mut d_omega);
        for k in 0..cfg.spatial_layers {
            let raw = self.params.mat(self.slots.adj[k]);
            let d_raw = normalize_adjacency_backward(raw, &trace.spatial.adj[k], &d_adj[k], cfg.adjacency_norm);
            add_into(grads, self.params.spec(self.slots.adj[k]).offset, &d_raw);
            add_into(grads, self.params.spec(self.slots.omega[k]).offset, &d_omega[k]);
        }

        let in_w = self.params.mat(self.slots.in_w);
        let mut d_in_w = Array2::zeros((f, d));
        let mut d_in_b = ndarray::Array1::zeros(d);
        let mut d_spatial = Array2::<f64>::zeros((n, f));
        for (t, dh) in d_h0.iter().enumerate() {
            d_in_w += &trace.x_in[t].t().dot(dh);
            d_in_b += &dh.sum_axis(Axis(0));
            if trace.injected {
                d_spatial += &dh.dot(&in_w.t());
            }
        }
        add_into(grads, self.params.spec(self.slots.in_w).offset, &d_in_w);
        add_vec(grads, self.params.spec(self.slots.in_b).offset, d_in_b.iter());

        d_temporal.map(|temporal| InjectionGrad { spatial: d_spatial, temporal })
    }

    /// Batched forward over `[B, κ, N, F]`.
    pub fn forward(&self, x: &ndarray::Array4<f64>, inj: Option<&Injection>) -> Result<ndarray::Array4<f64>> {
        let b = x.dim().0;
        let cfg = &self.cfg;
        let mut out = ndarray::Array4::zeros((b, cfg.horizon, cfg.n_nodes, cfg.n_features));
        for i in 0..b {
            let (y, _) = self.forward_one(x.index_axis(Axis(0), i), inj)?;
            out.index_axis_mut(Axis(0), i).assign(&y);
        }
        Ok(out)
    }

    pub fn spatial_indices(&self) -> Vec<usize> {
        self.params.block_indices(Block::Spatial)
    }
}

fn add_into(grads: &mut [f64], offset: usize, m: &Array2<f64>) {
    add_vec(grads, offset, m.iter());
}

fn add_vec<'a>(grads: &mut [f64], offset: usize, it: impl Iterator<Item = &'a f64>) {
    for (g, v) in grads[offset..].iter_mut().zip(it) {
        *g += v;
    }
}
