//! Parameter container for the prompt encoders, the interaction module and
//! the alignment projections.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::stim::{stim_backward, stim_forward, StimOutput, StimWeights};
use crate::backbone::{Activation, Block, ParamSet};
use crate::error::{config_err, shape_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    /// Descriptor width `E`; encoders read the flattened `2 × E` matrix.
    pub descriptor_width: usize,
    /// Prompt width `E_p`.
    pub prompt_dim: usize,
    /// Hidden widths of each encoder; empty means a single linear layer.
    pub encoder_hidden: Vec<usize>,
    /// Compressed-interaction feature maps.
    pub cin_maps: usize,
    /// Width of the interaction MLP.
    pub stim_hidden: usize,
    /// Features `F` of the data (spatial injection width and STIM outputs).
    pub n_features: usize,
    /// Channel width `d` of the backbone (temporal injection width).
    pub backbone_hidden: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl PromptConfig {
    /// Encoders `2E → 2E_p → E_p`, `E_p` maps and MLP units.
    pub fn standard(descriptor_width: usize, prompt_dim: usize, n_features: usize, backbone_hidden: usize) -> PromptConfig {
        PromptConfig {
            descriptor_width,
            prompt_dim,
            encoder_hidden: vec![2 * prompt_dim],
            cin_maps: prompt_dim,
            stim_hidden: prompt_dim,
            n_features,
            backbone_hidden,
            activation: Activation::LeakyRelu { slope: 0.01 },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.descriptor_width == 0 || self.prompt_dim == 0 || self.n_features == 0 || self.backbone_hidden == 0 {
            return Err(config_err("prompt widths must be positive"));
        }
        if self.encoder_hidden.contains(&0) || self.cin_maps == 0 || self.stim_hidden == 0 {
            return Err(config_err("prompt layer widths must be positive"));
        }
        Ok(())
    }
}

/// Which encoder a call addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoder {
    Spatial,
    Temporal,
}

/// Intermediate values of one batched encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Slots {
    enc_s: Vec<(usize, usize)>,
    enc_t: Vec<(usize, usize)>,
    cin: usize,
    mlp_w: usize,
    mlp_b: usize,
    out_w: usize,
    out_b: usize,
    align_s: usize,
    align_t: usize,
}

/// Prompt encoders `W_ps`/`W_pt`, interaction weights `W_P` and the zero-
/// initialized alignment projections.
#[derive(Debug)]
pub struct PromptBank {
    pub cfg: PromptConfig,
    pub params: ParamSet,
    slots: Slots,
    reads: AtomicU64,
}

impl Clone for PromptBank {
    fn clone(&self) -> Self {
        PromptBank {
            cfg: self.cfg.clone(),
            params: self.params.clone(),
            slots: self.slots.clone(),
            reads: AtomicU64::new(self.reads.load(Ordering::Relaxed)),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl PromptBank {
    pub fn new(cfg: PromptConfig) -> Result<PromptBank> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamSet::new();
        let mut widths = vec![2 * cfg.descriptor_width];
        widths.extend(&cfg.encoder_hidden);
        widths.push(cfg.prompt_dim);
        let encoder = |params: &mut ParamSet, rng: &mut ChaCha8Rng, tag: &str, block: Block| {
            let mut layers = Vec::new();
            for (j, pair) in widths.windows(2).enumerate() {
                let (a, b) = (pair[0], pair[1]);
                let w = params.push(format!("{tag}.w{j}"), &[a, b], block, gaussian(rng, a * b, (2.0 / a as f64).sqrt()));
                let bias = params.push(format!("{tag}.b{j}"), &[b], block, vec![0.0; b]);
                layers.push((w, bias));
            }
            layers
        };
        let enc_s = encoder(&mut params, &mut rng, "prompt_s", Block::PromptSpatial);
        let enc_t = encoder(&mut params, &mut rng, "prompt_t", Block::PromptTemporal);
        let (e, maps, m, f) = (cfg.prompt_dim, cfg.cin_maps, cfg.stim_hidden, cfg.n_features);
        // Gram entries scale like E_p, so the compression starts small.
        let cin = params.push("stim.cin", &[maps, 2, 2], Block::Stim, gaussian(&mut rng, maps * 4, 0.5 / e as f64));
        let mlp_w = params.push("stim.mlp_w", &[e, m], Block::Stim, gaussian(&mut rng, e * m, (2.0 / e as f64).sqrt()));
        let mlp_b = params.push("stim.mlp_b", &[m], Block::Stim, vec![0.0; m]);
        let fan = maps + m;
        let out_w = params.push("stim.out_w", &[fan, 2 * f], Block::Stim, gaussian(&mut rng, fan * 2 * f, (1.0 / fan as f64).sqrt()));
        let out_b = params.push("stim.out_b", &[2 * f], Block::Stim, vec![0.0; 2 * f]);
        let align_s = params.push("align.spatial", &[e, f], Block::Align, vec![0.0; e * f]);
        let d = cfg.backbone_hidden;
        let align_t = params.push("align.temporal", &[e, d], Block::Align, vec![0.0; e * d]);
        Ok(PromptBank {
            cfg,
            params,
            slots: Slots { enc_s, enc_t, cin, mlp_w, mlp_b, out_w, out_b, align_s, align_t },
            reads: AtomicU64::new(0),
        })
    }

    /// Number of times any bank tensor has been read by a forward pass.
    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    fn touch(&self) {
        self.reads.fetch_add(1, Ordering::Relaxed);
    }

    /// `|W_ps| + |W_pt| + |W_P|`: the scalars adapted at test time.
    pub fn adaptable_size(&self) -> usize {
        self.params.block_size(Block::PromptSpatial) + self.params.block_size(Block::PromptTemporal) + self.params.block_size(Block::Stim)
    }

    /// Flat indices of the encoder and interaction tensors.
    pub fn adaptable_indices(&self) -> Vec<usize> {
        let mut idx = self.params.block_indices(Block::PromptSpatial);
        idx.extend(self.params.block_indices(Block::PromptTemporal));
        idx.extend(self.params.block_indices(Block::Stim));
        idx.sort_unstable();
        idx
    }

    fn layers(&self, which: Encoder) -> &[(usize, usize)] {
        match which {
            Encoder::Spatial => &self.slots.enc_s,
            Encoder::Temporal => &self.slots.enc_t,
        }
    }

    /// Encodes a batch of flattened descriptors `[rows, 2E] → [rows, E_p]`.
    /// Hidden layers use the configured activation; the output layer is
    /// linear.
    pub fn encode_traced(&self, which: Encoder, x: ArrayView2<f64>) -> Result<(Array2<f64>, EncoderTrace)> {
        let width = 2 * self.cfg.descriptor_width;
        if x.ncols() != width {
            return Err(shape_err(format!("descriptor width {} but encoder reads {width}", x.ncols())));
        }
        self.touch();
        let layers = self.layers(which);
        let act = self.cfg.activation;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len());
        let mut h = x.to_owned();
        for (j, &(w, b)) in layers.iter().enumerate() {
            let z = h.dot(&self.params.mat(w)) + ArrayView1::from(self.params.slice(b));
            let next = if j + 1 == layers.len() { z.clone() } else { z.mapv(|v| act.apply(v)) };
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
        Ok((h, EncoderTrace { inputs, pre }))
    }

    pub fn encode(&self, which: Encoder, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.encode_traced(which, x)?.0)
    }

    /// One spatial prompt row from a flattened descriptor.
    pub fn encode_spatial(&self, e_s: &[f64]) -> Result<ndarray::Array1<f64>> {
        let x = ArrayView2::from_shape((1, e_s.len()), e_s).expect("row");
        Ok(self.encode(Encoder::Spatial, x)?.row(0).to_owned())
    }

    /// One temporal prompt row from a flattened descriptor.
    pub fn encode_temporal(&self, e_t: &[f64]) -> Result<ndarray::Array1<f64>> {
        let x = ArrayView2::from_shape((1, e_t.len()), e_t).expect("row");
        Ok(self.encode(Encoder::Temporal, x)?.row(0).to_owned())
    }

    /// Accumulates encoder weight gradients for `d_out: [rows, E_p]`.
    /// Descriptors are constants, so no input gradient is produced.
    pub fn encoder_backward(&self, which: Encoder, trace: &EncoderTrace, d_out: Array2<f64>, grads: &mut [f64]) {
        let layers = self.layers(which);
        let act = self.cfg.activation;
        let mut d = d_out;
        for (j, &(w, b)) in layers.iter().enumerate().rev() {
            if j + 1 != layers.len() {
                d.zip_mut_with(&trace.pre[j], |g, &p| *g *= act.deriv(p));
            }
            let dw = trace.inputs[j].t().dot(&d);
            add_slice(grads, self.params.spec(w).offset, dw.iter());
            add_slice(grads, self.params.spec(b).offset, d.sum_axis(Axis(0)).iter());
            if j > 0 {
                d = d.dot(&self.params.mat(w).t());
            }
        }
    }

    pub fn stim_weights(&self) -> StimWeights<'_> {
        let s = &self.slots;
        StimWeights {
            cin: self.params.tensor3(s.cin),
            mlp_w: self.params.mat(s.mlp_w),
            mlp_b: ArrayView1::from(self.params.slice(s.mlp_b)),
            out_w: self.params.mat(s.out_w),
            out_b: ArrayView1::from(self.params.slice(s.out_b)),
            activation: self.cfg.activation,
        }
    }

    /// `(μ̂, σ̂)` for paired prompt rows.
    pub fn stim(&self, p_s: ArrayView2<f64>, p_t: ArrayView2<f64>) -> Result<StimOutput> {
        self.touch();
        stim_forward(p_s, p_t, &self.stim_weights())
    }

    /// Accumulates interaction-module weight gradients and returns the
    /// gradients w.r.t. the two prompt batches.
    pub fn stim_backward(
        &self,
        p_s: ArrayView2<f64>,
        p_t: ArrayView2<f64>,
        out: &StimOutput,
        d_mu: ArrayView2<f64>,
        d_sigma: ArrayView2<f64>,
        grads: &mut [f64],
    ) -> (Array2<f64>, Array2<f64>) {
        let g = stim_backward(p_s, p_t, &self.stim_weights(), out, d_mu, d_sigma);
        let s = &self.slots;
        add_slice(grads, self.params.spec(s.cin).offset, g.cin.iter());
        add_slice(grads, self.params.spec(s.mlp_w).offset, g.mlp_w.iter());
        add_slice(grads, self.params.spec(s.mlp_b).offset, g.mlp_b.iter());
        add_slice(grads, self.params.spec(s.out_w).offset, g.out_w.iter());
        add_slice(grads, self.params.spec(s.out_b).offset, g.out_b.iter());
        (g.p_s, g.p_t)
    }

    pub fn align_spatial_weights(&self) -> ArrayView2<'_, f64> {
        self.params.mat(self.slots.align_s)
    }

    pub fn align_temporal_weights(&self) -> ArrayView2<'_, f64> {
        self.params.mat(self.slots.align_t)
    }

    /// Injection terms `(P_S·W_sal [N, F], P_T·W_tal [κ, d])`.
    pub fn injection(&self, p_s: ArrayView2<f64>, p_t: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.touch();
        Ok((align_spatial(p_s, self.align_spatial_weights())?, align_temporal(p_t, self.align_temporal_weights())?))
    }

    /// Back-propagates injection gradients into the alignment weights and
    /// returns the gradients w.r.t. `(P_S, P_T)`.
    pub fn injection_backward(
        &self,
        p_s: ArrayView2<f64>,
        p_t: ArrayView2<f64>,
        d_spatial: ArrayView2<f64>,
        d_temporal: ArrayView2<f64>,
        grads: &mut [f64],
    ) -> (Array2<f64>, Array2<f64>) {
        let (ws, wt) = (self.align_spatial_weights(), self.align_temporal_weights());
        add_slice(grads, self.params.spec(self.slots.align_s).offset, p_s.t().dot(&d_spatial).iter());
        add_slice(grads, self.params.spec(self.slots.align_t).offset, p_t.t().dot(&d_temporal).iter());
        (d_spatial.dot(&ws.t()), d_temporal.dot(&wt.t()))
    }

    /// Overwrites one encoder layer; used to construct hand-checkable
    /// encoders.
    pub fn set_encoder_layer(&mut self, which: Encoder, layer: usize, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<()> {
        let &(wi, bi) = self.layers(which).get(layer).ok_or_else(|| shape_err(format!("encoder has no layer {layer}")))?;
        if self.params.mat(wi).dim() != w.dim() || self.params.slice(bi).len() != b.len() {
            return Err(shape_err("encoder layer shape mismatch"));
        }
        self.params.mat_mut(wi).assign(&w);
        self.params.slice_mut(bi).iter_mut().zip(b).for_each(|(d, s)| *d = *s);
        Ok(())
    }

    /// Overwrites an alignment projection.
    pub fn set_alignment(&mut self, which: Encoder, w: ArrayView2<f64>) -> Result<()> {
        let idx = match which {
            Encoder::Spatial => self.slots.align_s,
            Encoder::Temporal => self.slots.align_t,
        };
        if self.params.mat(idx).dim() != w.dim() {
            return Err(shape_err(format!("alignment {:?} vs {:?}", w.dim(), self.params.mat(idx).dim())));
        }
        self.params.mat_mut(idx).assign(&w);
        Ok(())
    }
}

fn add_slice<'a>(grads: &mut [f64], offset: usize, src: impl Iterator<Item = &'a f64>) {
    for (g, v) in grads[offset..].iter_mut().zip(src) {
        *g += v;
    }
}

/// `P_S · W_sal`: one `F`-vector per node, broadcast over batch and time.
pub fn align_spatial(p_s: ArrayView2<f64>, w: ArrayView2<f64>) -> Result<Array2<f64>> {
    if p_s.ncols() != w.nrows() {
        return Err(shape_err(format!("spatial prompts {:?} cannot be aligned by {:?}", p_s.dim(), w.dim())));
    }
    Ok(p_s.dot(&w))
}

/// `P_T · W_tal`: one `d`-vector per input step, broadcast over batch and
/// nodes.
pub fn align_temporal(p_t: ArrayView2<f64>, w: ArrayView2<f64>) -> Result<Array2<f64>> {
    if p_t.ncols() != w.nrows() {
        return Err(shape_err(format!("temporal prompts {:?} cannot be aligned by {:?}", p_t.dim(), w.dim())));
    }
    Ok(p_t.dot(&w))
}

/// Rows of prompts keyed by entity id, as written to CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptExport {
    pub ids: Vec<i64>,
    pub prompts: Array2<f64>,
}

impl PromptExport {
    /// Writes `entity_id,dim0,…` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = std::iter::once("entity_id".to_string())
            .chain((0..self.prompts.ncols()).map(|k| format!("dim{k}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (id, row) in self.ids.iter().zip(self.prompts.rows()) {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{id},{}", vals.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    fn bank(e: usize, ep: usize) -> PromptBank {
        PromptBank::new(PromptConfig { seed: 3, ..PromptConfig::standard(e, ep, 2, 4) }).unwrap()
    }

    #[test]
    fn zero_encoder_gives_zero_prompt() {
        let mut b = bank(3, 4);
        let n_layers = b.cfg.encoder_hidden.len() + 1;
        for which in [Encoder::Spatial, Encoder::Temporal] {
            for j in 0..n_layers {
                let (wi, bi) = b.layers(which)[j];
                let shape = b.params.mat(wi).dim();
                let blen = b.params.slice(bi).len();
                b.set_encoder_layer(which, j, Array2::zeros(shape).view(), Array1::zeros(blen).view()).unwrap();
            }
        }
        let p = b.encode_spatial(&[0.3, -2.0, 1.0, 5.0, 0.1, 0.2]).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));
        let p = b.encode_temporal(&[1.0; 6]).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer_returns_first_descriptor_row() {
        let cfg = PromptConfig { encoder_hidden: vec![], ..PromptConfig::standard(3, 3, 1, 2) };
        let mut b = PromptBank::new(cfg).unwrap();
        let mut w = Array2::zeros((6, 3));
        for k in 0..3 {
            w[[k, k]] = 1.0;
        }
        b.set_encoder_layer(Encoder::Spatial, 0, w.view(), Array1::zeros(3).view()).unwrap();
        b.set_encoder_layer(Encoder::Temporal, 0, w.view(), Array1::zeros(3).view()).unwrap();
        // Packing is row-major: entries 0..E are descriptor row 0.
        let desc = [0.5, -1.5, 2.0, 9.0, 8.0, 7.0];
        assert_eq!(b.encode_spatial(&desc).unwrap(), array![0.5, -1.5, 2.0]);
        assert_eq!(b.encode_temporal(&desc).unwrap(), array![0.5, -1.5, 2.0]);
    }

    #[test]
    fn identical_descriptors_identical_prompts() {
        let b = bank(2, 3);
        let d = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(b.encode_spatial(&d).unwrap(), b.encode_spatial(&d).unwrap());
    }

    #[test]
    fn descriptor_width_mismatch() {
        let b = bank(2, 3);
        assert!(matches!(b.encode_spatial(&[1.0, 2.0, 3.0]), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn fresh_alignment_injects_nothing() {
        let b = bank(2, 3);
        let p_s = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]];
        let p_t = array![[0.3, 0.3, 0.3]];
        let (s, t) = b.injection(p_s.view(), p_t.view()).unwrap();
        assert!(s.iter().chain(t.iter()).all(|&v| v == 0.0));
        assert_eq!(s.dim(), (2, 2));
        assert_eq!(t.dim(), (1, 4));
    }

    #[test]
    fn identity_alignment_adds_prompt() {
        let p_s = array![[1.0, 2.0], [3.0, 4.0]];
        let eye = array![[1.0, 0.0], [0.0, 1.0]];
        let a = align_spatial(p_s.view(), eye.view()).unwrap();
        assert_eq!(a, p_s);
        assert!(align_spatial(p_s.view(), Array2::zeros((3, 2)).view()).is_err());
        assert!(align_temporal(p_s.view(), Array2::zeros((3, 2)).view()).is_err());
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let b = bank(2, 3);
        let x = array![[0.3, -0.7, 1.1, 0.4], [-0.2, 0.9, 0.0, -1.3]];
        let coef = array![[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]];
        let objective = |bank: &PromptBank| (bank.encode(Encoder::Temporal, x.view()).unwrap() * &coef).sum();
        let (_, trace) = b.encode_traced(Encoder::Temporal, x.view()).unwrap();
        let mut grads = b.params.zeros_like();
        b.encoder_backward(Encoder::Temporal, &trace, coef.clone(), &mut grads);
        let h = 1e-5;
        for idx in b.params.block_indices(Block::PromptTemporal) {
            let mut p = b.clone();
            p.params.values[idx] += h;
            let mut m = b.clone();
            m.params.values[idx] -= h;
            let fd = (objective(&p) - objective(&m)) / (2.0 * h);
            assert!((fd - grads[idx]).abs() <= 1e-6 + 1e-4 * fd.abs(), "idx {idx}: {fd} vs {}", grads[idx]);
        }
        for idx in b.params.block_indices(Block::PromptSpatial) {
            assert_eq!(grads[idx], 0.0);
        }
    }

    #[test]
    fn prompt_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let ex = PromptExport { ids: vec![7, 9], prompts: array![[0.5, -1.0], [2.0, 0.125]] };
        ex.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "entity_id,dim0,dim1\n7,0.5,-1\n9,2,0.125\n");
    }
}
