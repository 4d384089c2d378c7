//! Spatial-temporal interaction module: a one-layer compressed interaction
//! network over the field stack `[p_s; p_t]` next to a small MLP over the
//! product `p_s ⊙ p_t`, followed by a linear head emitting `(μ̂, σ̂)` per
//! feature with `σ̂ = softplus(raw)`.
//!
//! Every function works on a batch of rows: row `r` of `p_s` and `p_t` is
//! one (node, step) pair.

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

use crate::backbone::Activation;
use crate::error::{shape_err, Result};

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Borrowed interaction-module weights.
#[derive(Debug, Clone, Copy)]
pub struct StimWeights<'a> {
    /// `[maps, 2, 2]` compression of the field-pair Gram entries.
    pub cin: ArrayView3<'a, f64>,
    /// `[E_p, M]`
    pub mlp_w: ArrayView2<'a, f64>,
    pub mlp_b: ArrayView1<'a, f64>,
    /// `[maps + M, 2F]`
    pub out_w: ArrayView2<'a, f64>,
    pub out_b: ArrayView1<'a, f64>,
    pub activation: Activation,
}

impl StimWeights<'_> {
    fn maps(&self) -> usize {
        self.cin.dim().0
    }

    /// `[4, maps]` with row `2i + j` holding `cin[·, i, j]`.
    fn cin_matrix(&self) -> Array2<f64> {
        let maps = self.maps();
        Array2::from_shape_fn((4, maps), |(r, h)| self.cin[[h, r / 2, r % 2]])
    }
}

/// Outputs of a batch plus what the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct StimOutput {
    /// `[B, F]`
    pub mu: Array2<f64>,
    /// `[B, F]`, nonnegative.
    pub sigma: Array2<f64>,
    gram: Array2<f64>,
    mlp_pre: Array2<f64>,
    features: Array2<f64>,
    raw_sigma: Array2<f64>,
}

pub fn stim_forward(p_s: ArrayView2<f64>, p_t: ArrayView2<f64>, w: &StimWeights) -> Result<StimOutput> {
    if p_s.dim() != p_t.dim() || p_s.ncols() != w.mlp_w.nrows() {
        return Err(shape_err(format!(
            "prompt rows {:?} and {:?} vs interaction input width {}",
            p_s.dim(),
            p_t.dim(),
            w.mlp_w.nrows()
        )));
    }
    let b = p_s.nrows();
    let mut gram = Array2::zeros((b, 4));
    for r in 0..b {
        let (ps, pt) = (p_s.row(r), p_t.row(r));
        let st = ps.dot(&pt);
        gram[[r, 0]] = ps.dot(&ps);
        gram[[r, 1]] = st;
        gram[[r, 2]] = st;
        gram[[r, 3]] = pt.dot(&pt);
    }
    let cin_feat = gram.dot(&w.cin_matrix());
    let prod = &p_s * &p_t;
    let mlp_pre = prod.dot(&w.mlp_w) + w.mlp_b;
    let act = w.activation;
    let mlp_out = mlp_pre.mapv(|v| act.apply(v));
    let features = ndarray::concatenate(Axis(1), &[cin_feat.view(), mlp_out.view()]).expect("row counts agree");
    let out = features.dot(&w.out_w) + w.out_b;
    let f = out.ncols() / 2;
    let mu = out.slice(s![.., ..f]).to_owned();
    let raw_sigma = out.slice(s![.., f..]).to_owned();
    let sigma = raw_sigma.mapv(softplus);
    Ok(StimOutput { mu, sigma, gram, mlp_pre, features, raw_sigma })
}

/// Gradients of one batch evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct StimGrad {
    pub cin: Array3<f64>,
    pub mlp_w: Array2<f64>,
    pub mlp_b: ndarray::Array1<f64>,
    pub out_w: Array2<f64>,
    pub out_b: ndarray::Array1<f64>,
    /// `[B, E_p]`
    pub p_s: Array2<f64>,
    /// `[B, E_p]`
    pub p_t: Array2<f64>,
}

pub fn stim_backward(
    p_s: ArrayView2<f64>,
    p_t: ArrayView2<f64>,
    w: &StimWeights,
    out: &StimOutput,
    d_mu: ArrayView2<f64>,
    d_sigma: ArrayView2<f64>,
) -> StimGrad {
    let (b, f) = d_mu.dim();
    let mut d_out = Array2::zeros((b, 2 * f));
    d_out.slice_mut(s![.., ..f]).assign(&d_mu);
    for r in 0..b {
        for k in 0..f {
            d_out[[r, f + k]] = d_sigma[[r, k]] * sigmoid(out.raw_sigma[[r, k]]);
        }
    }
    let out_b = d_out.sum_axis(Axis(0));
    let out_w = out.features.t().dot(&d_out);
    let d_feat = d_out.dot(&w.out_w.t());

    let maps = w.maps();
    let d_cin_feat = d_feat.slice(s![.., ..maps]);
    let d_c = out.gram.t().dot(&d_cin_feat);
    let cin = Array3::from_shape_fn(w.cin.dim(), |(h, i, j)| d_c[[2 * i + j, h]]);
    let d_gram = d_cin_feat.dot(&w.cin_matrix().t());

    let act = w.activation;
    let mut d_pre = d_feat.slice(s![.., maps..]).to_owned();
    d_pre.zip_mut_with(&out.mlp_pre, |g, &p| *g *= act.deriv(p));
    let mlp_b = d_pre.sum_axis(Axis(0));
    let prod = &p_s * &p_t;
    let mlp_w = prod.t().dot(&d_pre);
    let d_prod = d_pre.dot(&w.mlp_w.t());

    let mut gs = &d_prod * &p_t;
    let mut gt = &d_prod * &p_s;
    for r in 0..b {
        let (ss, cross, tt) = (d_gram[[r, 0]], d_gram[[r, 1]] + d_gram[[r, 2]], d_gram[[r, 3]]);
        let (ps, pt) = (p_s.row(r), p_t.row(r));
        let mut rs = gs.row_mut(r);
        rs.scaled_add(2.0 * ss, &ps);
        rs.scaled_add(cross, &pt);
        let mut rt = gt.row_mut(r);
        rt.scaled_add(2.0 * tt, &pt);
        rt.scaled_add(cross, &ps);
    }
    StimGrad { cin, mlp_w, mlp_b, out_w, out_b, p_s: gs, p_t: gt }
}
