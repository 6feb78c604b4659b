//! Forward and reverse-mode passes of the pose model.
//!
//! Per keypoint: `d = MLP(x)`, `l = d + p` (when positional embeddings are
//! enabled). The `K` tokens go through pre-norm encoder layers
//! (`x + MHA(LN(x))`, then `x + FF(LN(x))`) and a final layer norm, are
//! concatenated, and the head MLP emits translation and rotation.

use super::linalg::{
    add_in_place, layer_norm, layer_norm_backward, linear, linear_backward, relu_backward_in_place, relu_in_place,
    LayerNormCache,
};
use super::params::{LayerIdx, LinearIdx, NormIdx, PemWeights};
use crate::error::{Error, Result};

/// Borrowed parameters of one encoder layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a> {
    pub ln1_gamma: &'a [f64],
    pub ln1_beta: &'a [f64],
    pub wq: &'a [f64],
    pub bq: &'a [f64],
    pub wk: &'a [f64],
    pub bk: &'a [f64],
    pub wv: &'a [f64],
    pub bv: &'a [f64],
    pub wo: &'a [f64],
    pub bo: &'a [f64],
    pub ln2_gamma: &'a [f64],
    pub ln2_beta: &'a [f64],
    pub wf1: &'a [f64],
    pub bf1: &'a [f64],
    pub wf2: &'a [f64],
    pub bf2: &'a [f64],
    pub d_model: usize,
    pub ff_dim: usize,
}

impl<'a> LayerView<'a> {
    fn from_weights(data: &'a [f64], idx: &LayerIdx) -> Self {
        let w = |l: &LinearIdx| &data[l.w..l.w + l.fan_in * l.fan_out];
        let b = |l: &LinearIdx| &data[l.b..l.b + l.fan_out];
        let g = |n: &NormIdx| &data[n.gamma..n.gamma + n.dim];
        let be = |n: &NormIdx| &data[n.beta..n.beta + n.dim];
        LayerView {
            ln1_gamma: g(&idx.ln1),
            ln1_beta: be(&idx.ln1),
            wq: w(&idx.q),
            bq: b(&idx.q),
            wk: w(&idx.k),
            bk: b(&idx.k),
            wv: w(&idx.v),
            bv: b(&idx.v),
            wo: w(&idx.o),
            bo: b(&idx.o),
            ln2_gamma: g(&idx.ln2),
            ln2_beta: be(&idx.ln2),
            wf1: w(&idx.ff1),
            bf1: b(&idx.ff1),
            wf2: w(&idx.ff2),
            bf2: b(&idx.ff2),
            d_model: idx.q.fan_in,
            ff_dim: idx.ff1.fan_out,
        }
    }
}

/// Scaled dot-product attention over `batch` independent token sets.
/// Returns the concatenated head outputs and the attention weights, laid out
/// as `[batch][head][query][key]`.
pub fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    batch: usize,
    tokens: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; batch * tokens * d];
    let mut attn = vec![0.0; batch * heads * tokens * tokens];
    for s in 0..batch {
        let base = s * tokens * d;
        for h in 0..heads {
            let off = h * dh;
            let a_base = (s * heads + h) * tokens * tokens;
            for i in 0..tokens {
                let qi = &q[base + i * d + off..base + i * d + off + dh];
                let row = &mut attn[a_base + i * tokens..a_base + (i + 1) * tokens];
                let mut peak = f64::NEG_INFINITY;
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &k[base + j * d + off..base + j * d + off + dh];
                    *r = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                    peak = peak.max(*r);
                }
                let mut z = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - peak).exp();
                    z += *r;
                }
                for r in row.iter_mut() {
                    *r /= z;
                }
                let oi = &mut out[base + i * d + off..base + i * d + off + dh];
                for (j, &a) in row.iter().enumerate() {
                    let vj = &v[base + j * d + off..base + j * d + off + dh];
                    for (o, &vv) in oi.iter_mut().zip(vj) {
                        *o += a * vv;
                    }
                }
            }
        }
    }
    (out, attn)
}

/// Gradients of [`attention_forward`] with respect to `q`, `k` and `v`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    attn: &[f64],
    d_out: &[f64],
    batch: usize,
    tokens: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (mut dq, mut dk, mut dv) = (vec![0.0; q.len()], vec![0.0; k.len()], vec![0.0; v.len()]);
    let mut d_attn = vec![0.0; tokens];
    for s in 0..batch {
        let base = s * tokens * d;
        for h in 0..heads {
            let off = h * dh;
            let a_base = (s * heads + h) * tokens * tokens;
            for i in 0..tokens {
                let row = &attn[a_base + i * tokens..a_base + (i + 1) * tokens];
                let doi = &d_out[base + i * d + off..base + i * d + off + dh];
                let mut dot = 0.0;
                for j in 0..tokens {
                    let vj = &v[base + j * d + off..base + j * d + off + dh];
                    d_attn[j] = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                    dot += d_attn[j] * row[j];
                    let dvj = &mut dv[base + j * d + off..base + j * d + off + dh];
                    for (g, &o) in dvj.iter_mut().zip(doi) {
                        *g += row[j] * o;
                    }
                }
                for j in 0..tokens {
                    let ds = row[j] * (d_attn[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        dq[base + i * d + off + c] += ds * k[base + j * d + off + c];
                        dk[base + j * d + off + c] += ds * q[base + i * d + off + c];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Intermediates of one encoder layer.
#[derive(Debug, Clone, Default)]
pub struct LayerCache {
    ln1: LayerNormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Softmax weights, `[batch][head][query][key]`.
    pub attn: Vec<f64>,
    o: Vec<f64>,
    ln2: LayerNormCache,
    bn: Vec<f64>,
    f1_pre: Vec<f64>,
    f1: Vec<f64>,
}

/// One pre-norm encoder layer on `batch × tokens` rows of width `d_model`.
pub fn layer_forward(p: &LayerView<'_>, x: &[f64], batch: usize, tokens: usize, heads: usize) -> (Vec<f64>, LayerCache) {
    let (d, ff) = (p.d_model, p.ff_dim);
    let n = batch * tokens;
    let (a, ln1) = layer_norm(x, d, p.ln1_gamma, p.ln1_beta);
    let q = linear(&a, n, p.wq, p.bq, d, d);
    let k = linear(&a, n, p.wk, p.bk, d, d);
    let v = linear(&a, n, p.wv, p.bv, d, d);
    let (o, attn) = attention_forward(&q, &k, &v, batch, tokens, d, heads);
    let mut x1 = linear(&o, n, p.wo, p.bo, d, d);
    add_in_place(&mut x1, x);
    let (bn, ln2) = layer_norm(&x1, d, p.ln2_gamma, p.ln2_beta);
    let f1_pre = linear(&bn, n, p.wf1, p.bf1, d, ff);
    let mut f1 = f1_pre.clone();
    relu_in_place(&mut f1);
    let mut x2 = linear(&f1, n, p.wf2, p.bf2, ff, d);
    add_in_place(&mut x2, &x1);
    (x2, LayerCache { ln1, a, q, k, v, attn, o, ln2, bn, f1_pre, f1 })
}

/// Two disjoint mutable windows of the gradient buffer (`a` before `b`).
fn pair_mut(buf: &mut [f64], a: usize, a_len: usize, b: usize, b_len: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + a_len <= b);
    let (lo, hi) = buf.split_at_mut(b);
    (&mut lo[a..a + a_len], &mut hi[..b_len])
}

fn linear_grads<'g>(grads: &'g mut [f64], l: &LinearIdx) -> (&'g mut [f64], &'g mut [f64]) {
    pair_mut(grads, l.w, l.fan_in * l.fan_out, l.b, l.fan_out)
}

fn norm_grads<'g>(grads: &'g mut [f64], n: &NormIdx) -> (&'g mut [f64], &'g mut [f64]) {
    pair_mut(grads, n.gamma, n.dim, n.beta, n.dim)
}

fn layer_backward(
    p: &LayerView<'_>,
    idx: &LayerIdx,
    cache: &LayerCache,
    dx2: &[f64],
    batch: usize,
    tokens: usize,
    heads: usize,
    grads: &mut [f64],
) -> Vec<f64> {
    let (d, ff) = (p.d_model, p.ff_dim);
    let n = batch * tokens;
    let mut dx1 = dx2.to_vec();
    let (dw, db) = linear_grads(grads, &idx.ff2);
    let mut df1 = linear_backward(&cache.f1, dx2, n, p.wf2, ff, d, dw, db, true).expect("dx requested");
    relu_backward_in_place(&cache.f1_pre, &mut df1);
    let (dw, db) = linear_grads(grads, &idx.ff1);
    let dbn = linear_backward(&cache.bn, &df1, n, p.wf1, d, ff, dw, db, true).expect("dx requested");
    let (dg, dbeta) = norm_grads(grads, &idx.ln2);
    add_in_place(&mut dx1, &layer_norm_backward(&dbn, d, p.ln2_gamma, &cache.ln2, dg, dbeta));

    let (dw, db) = linear_grads(grads, &idx.o);
    let d_o = linear_backward(&cache.o, &dx1, n, p.wo, d, d, dw, db, true).expect("dx requested");
    let (dq, dk, dv) = attention_backward(&cache.q, &cache.k, &cache.v, &cache.attn, &d_o, batch, tokens, d, heads);
    let mut da = vec![0.0; n * d];
    for (l, w, g) in [(&idx.q, p.wq, &dq), (&idx.k, p.wk, &dk), (&idx.v, p.wv, &dv)] {
        let (dw, db) = linear_grads(grads, l);
        add_in_place(&mut da, &linear_backward(&cache.a, g, n, w, d, d, dw, db, true).expect("dx requested"));
    }
    let (dg, dbeta) = norm_grads(grads, &idx.ln1);
    let mut dx = layer_norm_backward(&da, d, p.ln1_gamma, &cache.ln1, dg, dbeta);
    add_in_place(&mut dx, &dx1);
    dx
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    params: usize,
    pub batch: usize,
    x: Vec<f64>,
    h1_pre: Vec<f64>,
    h1: Vec<f64>,
    pub layers: Vec<LayerCache>,
    final_ln: Option<LayerNormCache>,
    /// Inputs of every head layer; entry 0 is the concatenated token features.
    head_in: Vec<Vec<f64>>,
    head_pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Attention weights of encoder layer `l`, `[batch][head][query][key]`.
    pub fn attention(&self, l: usize) -> &[f64] {
        &self.layers[l].attn
    }

    /// Which rectifier inputs are positive, over every rectifier in the model.
    pub(crate) fn relu_pattern(&self) -> Vec<bool> {
        let pre = std::iter::once(&self.h1_pre).chain(self.layers.iter().map(|l| &l.f1_pre)).chain(&self.head_pre);
        pre.flat_map(|v| v.iter().map(|x| *x > 0.0)).collect()
    }
}

/// Runs the model on `batch` samples of normalized keypoints laid out as
/// `[sample][keypoint][x, y]`. Returns `batch × output_dim` raw outputs.
pub fn forward_batch(w: &PemWeights, inputs: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
    let cfg = &w.config;
    let lay = &w.layout;
    let (kp, d) = (cfg.num_keypoints, cfg.d_model);
    let n = batch * kp;
    if inputs.len() != n * 2 {
        return Err(Error::Shape { expected: n * 2, actual: inputs.len() });
    }
    let data = &w.data;
    let lin = |l: &LinearIdx, x: &[f64], rows: usize| {
        linear(x, rows, &data[l.w..l.w + l.fan_in * l.fan_out], &data[l.b..l.b + l.fan_out], l.fan_in, l.fan_out)
    };
    let h1_pre = lin(&lay.embed1, inputs, n);
    let mut h1 = h1_pre.clone();
    relu_in_place(&mut h1);
    let mut tokens = lin(&lay.embed2, &h1, n);
    if let Some(pos) = lay.pos {
        let p = &data[pos..pos + kp * d];
        for row in tokens.chunks_exact_mut(kp * d) {
            add_in_place(row, p);
        }
    }
    let mut layers = Vec::with_capacity(lay.layers.len());
    for idx in &lay.layers {
        let view = LayerView::from_weights(data, idx);
        let (next, cache) = layer_forward(&view, &tokens, batch, kp, cfg.heads);
        tokens = next;
        layers.push(cache);
    }
    let final_ln = lay.final_norm.map(|nrm| {
        let (y, cache) =
            layer_norm(&tokens, d, &data[nrm.gamma..nrm.gamma + d], &data[nrm.beta..nrm.beta + d]);
        tokens = y;
        cache
    });
    // rows are sample-major, so `tokens` already is batch × (K·D)
    let mut head_in = vec![tokens];
    let mut head_pre = Vec::new();
    let last = lay.head.len() - 1;
    for (i, l) in lay.head.iter().enumerate() {
        let y = lin(l, &head_in[i], batch);
        if i < last {
            let mut act = y.clone();
            relu_in_place(&mut act);
            head_pre.push(y);
            head_in.push(act);
        } else {
            let cache = ForwardCache {
                version: w.version,
                params: w.data.len(),
                batch,
                x: inputs.to_vec(),
                h1_pre,
                h1,
                layers,
                final_ln,
                head_in,
                head_pre,
            };
            return Ok((y, cache));
        }
    }
    unreachable!("head always has an output layer")
}

/// Reverse-mode gradient of `Σ d_out · outputs` for every parameter.
pub fn backward(w: &PemWeights, cache: &ForwardCache, d_out: &[f64]) -> Result<Vec<f64>> {
    let cfg = &w.config;
    let lay = &w.layout;
    if cache.version != w.version || cache.params != w.data.len() {
        return Err(Error::StaleCache("weights changed since the forward pass"));
    }
    let batch = cache.batch;
    if d_out.len() != batch * cfg.output_dim() {
        return Err(Error::Shape { expected: batch * cfg.output_dim(), actual: d_out.len() });
    }
    let (kp, d) = (cfg.num_keypoints, cfg.d_model);
    let n = batch * kp;
    let data = &w.data;
    let mut grads = vec![0.0; w.data.len()];

    let mut g = d_out.to_vec();
    for i in (0..lay.head.len()).rev() {
        let l = &lay.head[i];
        let wmat = &data[l.w..l.w + l.fan_in * l.fan_out];
        let (dw, db) = linear_grads(&mut grads, l);
        let mut dx = linear_backward(&cache.head_in[i], &g, batch, wmat, l.fan_in, l.fan_out, dw, db, true)
            .expect("dx requested");
        if i > 0 {
            relu_backward_in_place(&cache.head_pre[i - 1], &mut dx);
        }
        g = dx;
    }
    if let (Some(nrm), Some(ln)) = (lay.final_norm, &cache.final_ln) {
        let (dg, db) = norm_grads(&mut grads, &nrm);
        g = layer_norm_backward(&g, d, &data[nrm.gamma..nrm.gamma + d], ln, dg, db);
    }
    for (idx, lc) in lay.layers.iter().zip(&cache.layers).rev() {
        let view = LayerView::from_weights(data, idx);
        g = layer_backward(&view, idx, lc, &g, batch, kp, cfg.heads, &mut grads);
    }
    if let Some(pos) = lay.pos {
        let dp = &mut grads[pos..pos + kp * d];
        for row in g.chunks_exact(kp * d) {
            add_in_place(dp, row);
        }
    }
    let e2 = &lay.embed2;
    let (dw, db) = linear_grads(&mut grads, e2);
    let mut dh1 = linear_backward(
        &cache.h1,
        &g,
        n,
        &data[e2.w..e2.w + e2.fan_in * e2.fan_out],
        e2.fan_in,
        e2.fan_out,
        dw,
        db,
        true,
    )
    .expect("dx requested");
    relu_backward_in_place(&cache.h1_pre, &mut dh1);
    let e1 = &lay.embed1;
    let (dw, db) = linear_grads(&mut grads, e1);
    linear_backward(&cache.x, &dh1, n, &data[e1.w..e1.w + e1.fan_in * e1.fan_out], 2, e1.fan_out, dw, db, false);
    Ok(grads)
}

/// Owned parameters of a standalone encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub d_model: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub ln1: (Vec<f64>, Vec<f64>),
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub ln2: (Vec<f64>, Vec<f64>),
    pub wf1: Vec<f64>,
    pub bf1: Vec<f64>,
    pub wf2: Vec<f64>,
    pub bf2: Vec<f64>,
}

impl EncoderLayer {
    fn view(&self) -> LayerView<'_> {
        LayerView {
            ln1_gamma: &self.ln1.0,
            ln1_beta: &self.ln1.1,
            wq: &self.wq,
            bq: &self.bq,
            wk: &self.wk,
            bk: &self.bk,
            wv: &self.wv,
            bv: &self.bv,
            wo: &self.wo,
            bo: &self.bo,
            ln2_gamma: &self.ln2.0,
            ln2_beta: &self.ln2.1,
            wf1: &self.wf1,
            bf1: &self.bf1,
            wf2: &self.wf2,
            bf2: &self.bf2,
            d_model: self.d_model,
            ff_dim: self.ff_dim,
        }
    }

    /// Runs the block on one set of `tokens` rows; returns the output rows and
    /// the attention weights `[head][query][key]`.
    pub fn forward(&self, x: &[f64], tokens: usize) -> (Vec<f64>, Vec<f64>) {
        let (y, cache) = layer_forward(&self.view(), x, 1, tokens, self.heads);
        (y, cache.attn)
    }
}

/// Copies encoder layer `l` out of a weight set.
pub fn encoder_layer(w: &PemWeights, l: usize) -> EncoderLayer {
    let v = LayerView::from_weights(&w.data, &w.layout.layers[l]);
    EncoderLayer {
        d_model: v.d_model,
        ff_dim: v.ff_dim,
        heads: w.config.heads,
        ln1: (v.ln1_gamma.to_vec(), v.ln1_beta.to_vec()),
        wq: v.wq.to_vec(),
        bq: v.bq.to_vec(),
        wk: v.wk.to_vec(),
        bk: v.bk.to_vec(),
        wv: v.wv.to_vec(),
        bv: v.bv.to_vec(),
        wo: v.wo.to_vec(),
        bo: v.bo.to_vec(),
        ln2: (v.ln2_gamma.to_vec(), v.ln2_beta.to_vec()),
        wf1: v.wf1.to_vec(),
        bf1: v.bf1.to_vec(),
        wf2: v.wf2.to_vec(),
        bf2: v.bf2.to_vec(),
    }
}
