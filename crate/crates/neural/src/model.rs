//! Forward and backward passes of the post-norm transformer encoder.
//!
//! A batch is packed: sequences are stacked row-wise without padding and
//! attention runs per sequence, so no compute is spent on filler rows.
//! Every forward step keeps what its backward step needs; backward
//! functions take `Option<&mut [T]>` for parameter gradients so a frozen
//! encoder can pass gradients to its input without accumulating its own.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::params::{EncoderParams, LayerLayout, SEGMENTS};
use crate::scalar::{gemm, MatMut, MatRef, Scalar};
use crate::vocab::TokenSeq;
use crate::NeuralError;

pub const LN_EPS: f64 = 1e-5;

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)`.
pub struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    fn mask<T: Scalar>(&mut self, n: usize) -> Vec<T> {
        let keep = T::from_f64_lossy(1.0 / (1.0 - self.rate));
        (0..n)
            .map(|_| if self.rng.random::<f64>() < self.rate { T::zero() } else { keep })
            .collect()
    }
}

fn apply_mask<T: Scalar>(dropout: &mut Option<&mut Dropout>, x: &mut [T]) -> Option<Vec<T>> {
    let d = dropout.as_deref_mut().filter(|d| d.rate > 0.0)?;
    let mask = d.mask::<T>(x.len());
    for (v, m) in x.iter_mut().zip(&mask) {
        *v = *v * *m;
    }
    Some(mask)
}

fn scale_by<T: Scalar>(mask: &Option<Vec<T>>, x: &mut [T]) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v = *v * *k;
        }
    }
}

/// Sequences stacked row-wise.
#[derive(Debug, Clone)]
pub struct Packed {
    pub starts: Vec<usize>,
    pub lens: Vec<usize>,
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    pub positions: Vec<usize>,
    pub key_mask: Vec<u8>,
    pub query_spans: Vec<(usize, usize)>,
}

impl Packed {
    pub fn new(seqs: &[&TokenSeq]) -> Self {
        let mut p = Packed {
            starts: Vec::with_capacity(seqs.len()),
            lens: Vec::with_capacity(seqs.len()),
            ids: Vec::new(),
            segments: Vec::new(),
            positions: Vec::new(),
            key_mask: Vec::new(),
            query_spans: Vec::with_capacity(seqs.len()),
        };
        for s in seqs {
            p.starts.push(p.ids.len());
            p.lens.push(s.len());
            p.ids.extend_from_slice(&s.ids);
            p.segments.extend_from_slice(&s.segments);
            p.positions.extend(0..s.len());
            p.key_mask.extend_from_slice(&s.mask);
            p.query_spans.push(s.query_span);
        }
        p
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn sequences(&self) -> usize {
        self.starts.len()
    }

    /// Row of each sequence's `[CLS]` token.
    pub fn cls_rows(&self) -> &[usize] {
        &self.starts
    }

    fn check<T>(&self, p: &EncoderParams<T>) -> Result<(), NeuralError> {
        let c = &p.config;
        if let Some(id) = self.ids.iter().find(|i| **i as usize >= c.vocab_size) {
            return Err(NeuralError::Input(format!("token id {id} outside vocabulary of {}", c.vocab_size)));
        }
        if let Some(len) = self.lens.iter().find(|l| **l > c.max_len) {
            return Err(NeuralError::Length {
                len: *len,
                max_len: c.max_len,
            });
        }
        if self.segments.iter().any(|s| *s as usize >= SEGMENTS) {
            return Err(NeuralError::Input("segment id out of range".into()));
        }
        if self.lens.contains(&0) {
            return Err(NeuralError::Input("empty sequence".into()));
        }
        for (s, &start) in self.starts.iter().enumerate() {
            if !self.key_mask[start..start + self.lens[s]].iter().any(|m| *m != 0) {
                return Err(NeuralError::Input("sequence with every position masked".into()));
            }
        }
        Ok(())
    }
}

struct Norm<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &[T], d: usize, gain: &[T], bias: &[T]) -> (Vec<T>, Norm<T>) {
    let n = x.len() / d;
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); n];
    let dn = T::from_usize(d).expect("dim");
    let eps = T::from_f64_lossy(LN_EPS);
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().fold(T::zero(), |a, v| a + *v) / dn;
        let var = row.iter().fold(T::zero(), |a, v| a + (*v - mean) * (*v - mean)) / dn;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (out, Norm { xhat, rstd })
}

/// Returns the input gradient; accumulates gain/bias gradients if given.
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    norm: &Norm<T>,
    d: usize,
    gain: &[T],
    grads: Option<(&mut [T], &mut [T])>,
) -> Vec<T> {
    let n = dy.len() / d;
    let dn = T::from_usize(d).expect("dim");
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..n {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &norm.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            dxhat[j] = dyr[j] * gain[j];
            mean_dxhat = mean_dxhat + dxhat[j];
            mean_dxhat_xhat = mean_dxhat_xhat + dxhat[j] * xh[j];
        }
        mean_dxhat = mean_dxhat / dn;
        mean_dxhat_xhat = mean_dxhat_xhat / dn;
        for j in 0..d {
            dx[r * d + j] = norm.rstd[r] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    if let Some((dgain, dbias)) = grads {
        for r in 0..n {
            for j in 0..d {
                dgain[j] = dgain[j] + dy[r * d + j] * norm.xhat[r * d + j];
                dbias[j] = dbias[j] + dy[r * d + j];
            }
        }
    }
    dx
}

/// `x · w + b` for row-major `x: n × k`, `w: k × m`.
fn linear<T: Scalar>(x: &[T], w: &[T], b: &[T], k: usize, m: usize) -> Vec<T> {
    let n = x.len() / k;
    let mut y = vec![T::zero(); n * m];
    for r in 0..n {
        y[r * m..(r + 1) * m].copy_from_slice(b);
    }
    gemm(T::one(), MatRef::dense(x, n, k), MatRef::dense(w, k, m), T::one(), MatMut::dense(&mut y, n, m));
    y
}

/// Input gradient of [`linear`]; weight and bias gradients accumulate.
fn linear_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    w: &[T],
    k: usize,
    m: usize,
    grads: Option<(&mut [T], &mut [T])>,
) -> Vec<T> {
    let n = dy.len() / m;
    if let Some((dw, db)) = grads {
        gemm(T::one(), MatRef::dense(x, n, k).t(), MatRef::dense(dy, n, m), T::one(), MatMut::dense(dw, k, m));
        for r in 0..n {
            for j in 0..m {
                db[j] = db[j] + dy[r * m + j];
            }
        }
    }
    let mut dx = vec![T::zero(); n * k];
    gemm(T::one(), MatRef::dense(dy, n, m), MatRef::dense(w, k, m).t(), T::zero(), MatMut::dense(&mut dx, n, k));
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

/// State kept by [`embed`] for its backward pass.
pub struct EmbedCache<T> {
    norm: Norm<T>,
    drop: Option<Vec<T>>,
}

/// Token + position + segment embeddings followed by layer norm.
pub fn embed<T: Scalar>(
    p: &EncoderParams<T>,
    batch: &Packed,
    mut dropout: Option<&mut Dropout>,
) -> Result<(Vec<T>, EmbedCache<T>), NeuralError> {
    batch.check(p)?;
    let d = p.config.d_model;
    let l = &p.layout;
    let tok = p.slice(&l.token_emb);
    let pos = p.slice(&l.position_emb);
    let seg = p.slice(&l.segment_emb);
    let mut sum = vec![T::zero(); batch.rows() * d];
    for r in 0..batch.rows() {
        let t = batch.ids[r] as usize;
        let q = batch.positions[r];
        let s = batch.segments[r] as usize;
        for j in 0..d {
            sum[r * d + j] = tok[t * d + j] + pos[q * d + j] + seg[s * d + j];
        }
    }
    let (mut x, norm) = layer_norm(&sum, d, p.slice(&l.emb_ln_gain), p.slice(&l.emb_ln_bias));
    let drop = apply_mask(&mut dropout, &mut x);
    Ok((x, EmbedCache { norm, drop }))
}

pub fn embed_backward<T: Scalar>(
    p: &EncoderParams<T>,
    batch: &Packed,
    cache: &EmbedCache<T>,
    mut dx: Vec<T>,
    grads: &mut [T],
) {
    let d = p.config.d_model;
    let l = &p.layout;
    scale_by(&cache.drop, &mut dx);
    let (before, after) = grads.split_at_mut(l.emb_ln_bias.start);
    let dgain = &mut before[l.emb_ln_gain.clone()];
    let dbias = &mut after[..d];
    let dsum = layer_norm_backward(&dx, &cache.norm, d, p.slice(&l.emb_ln_gain), Some((dgain, dbias)));
    for r in 0..batch.rows() {
        let t = l.token_emb.start + batch.ids[r] as usize * d;
        let q = l.position_emb.start + batch.positions[r] * d;
        let s = l.segment_emb.start + batch.segments[r] as usize * d;
        for j in 0..d {
            let g = dsum[r * d + j];
            grads[t + j] = grads[t + j] + g;
            grads[q + j] = grads[q + j] + g;
            grads[s + j] = grads[s + j] + g;
        }
    }
}

struct LayerCache<T> {
    input: Vec<T>,
    qkv: Vec<T>,
    /// Softmax probabilities, `n_heads · len²` per sequence.
    probs: Vec<T>,
    probs_drop: Option<Vec<T>>,
    attended: Vec<T>,
    out_drop: Option<Vec<T>>,
    norm1: Norm<T>,
    mid: Vec<T>,
    ffn_pre: Vec<T>,
    ffn_act: Vec<T>,
    ffn_drop: Option<Vec<T>>,
    norm2: Norm<T>,
}

/// Final hidden states plus everything backward needs.
pub struct Activations<T> {
    pub hidden: Vec<T>,
    layers: Vec<LayerCache<T>>,
}

fn attention_offsets(batch: &Packed, heads: usize) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(batch.sequences() + 1);
    let mut acc = 0;
    for len in &batch.lens {
        offsets.push(acc);
        acc += heads * len * len;
    }
    offsets.push(acc);
    offsets
}

fn split_grads<'g, T>(grads: &'g mut [T], ranges: &[std::ops::Range<usize>]) -> Vec<&'g mut [T]> {
    // ranges are disjoint; hand out one mutable slice per range
    let mut order: Vec<usize> = (0..ranges.len()).collect();
    order.sort_by_key(|i| ranges[*i].start);
    let mut out: Vec<Option<&'g mut [T]>> = (0..ranges.len()).map(|_| None).collect();
    let mut rest = grads;
    let mut consumed = 0;
    for i in order {
        let r = &ranges[i];
        let (_, tail) = std::mem::take(&mut rest).split_at_mut(r.start - consumed);
        let (mine, tail) = tail.split_at_mut(r.len());
        out[i] = Some(mine);
        rest = tail;
        consumed = r.end;
    }
    out.into_iter().map(|s| s.expect("assigned")).collect()
}

fn layer_forward<T: Scalar>(
    p: &EncoderParams<T>,
    ll: &LayerLayout,
    batch: &Packed,
    x: Vec<T>,
    dropout: &mut Option<&mut Dropout>,
) -> (Vec<T>, LayerCache<T>) {
    let c = &p.config;
    let d = c.d_model;
    let heads = c.n_heads;
    let dh = c.head_dim();
    let f = c.ffn_dim();
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let n = batch.rows();

    let qkv = linear(&x, p.slice(&ll.w_qkv), p.slice(&ll.b_qkv), d, 3 * d);
    let offsets = attention_offsets(batch, heads);
    let mut probs = vec![T::zero(); offsets[batch.sequences()]];
    for (s, (&start, &len)) in batch.starts.iter().zip(&batch.lens).enumerate() {
        let rows = &qkv[start * 3 * d..(start + len) * 3 * d];
        let mask = &batch.key_mask[start..start + len];
        for h in 0..heads {
            let o = offsets[s] + h * len * len;
            let scores = &mut probs[o..o + len * len];
            let q = MatRef::rows(&rows[h * dh..], len, dh, 3 * d);
            let k = MatRef::rows(&rows[d + h * dh..], len, dh, 3 * d);
            gemm(scale, q, k.t(), T::zero(), MatMut::dense(scores, len, len));
            for i in 0..len {
                let row = &mut scores[i * len..(i + 1) * len];
                let mut max = T::neg_infinity();
                for (j, v) in row.iter().enumerate() {
                    if mask[j] != 0 && *v > max {
                        max = *v;
                    }
                }
                let mut total = T::zero();
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if mask[j] != 0 { (*v - max).exp() } else { T::zero() };
                    total = total + *v;
                }
                for v in row.iter_mut() {
                    *v = *v / total;
                }
            }
        }
    }
    let mut dropped = probs.clone();
    let probs_drop = apply_mask(dropout, &mut dropped);
    let mut attended = vec![T::zero(); n * d];
    for (s, (&start, &len)) in batch.starts.iter().zip(&batch.lens).enumerate() {
        let rows = &qkv[start * 3 * d..(start + len) * 3 * d];
        for h in 0..heads {
            let o = offsets[s] + h * len * len;
            let pm = MatRef::dense(&dropped[o..o + len * len], len, len);
            let v = MatRef::rows(&rows[2 * d + h * dh..], len, dh, 3 * d);
            let out = MatMut::rows(&mut attended[start * d + h * dh..(start + len) * d], len, dh, d);
            gemm(T::one(), pm, v, T::zero(), out);
        }
    }
    let mut projected = linear(&attended, p.slice(&ll.w_out), p.slice(&ll.b_out), d, d);
    let out_drop = apply_mask(dropout, &mut projected);
    for (r, xi) in projected.iter_mut().zip(&x) {
        *r = *r + *xi;
    }
    let (mid, norm1) = layer_norm(&projected, d, p.slice(&ll.ln1_gain), p.slice(&ll.ln1_bias));

    let ffn_pre = linear(&mid, p.slice(&ll.w_ffn_in), p.slice(&ll.b_ffn_in), d, f);
    let ffn_act: Vec<T> = ffn_pre.iter().map(|v| gelu(*v)).collect();
    let mut ffn_out = linear(&ffn_act, p.slice(&ll.w_ffn_out), p.slice(&ll.b_ffn_out), f, d);
    let ffn_drop = apply_mask(dropout, &mut ffn_out);
    for (r, m) in ffn_out.iter_mut().zip(&mid) {
        *r = *r + *m;
    }
    let (out, norm2) = layer_norm(&ffn_out, d, p.slice(&ll.ln2_gain), p.slice(&ll.ln2_bias));
    (
        out,
        LayerCache {
            input: x,
            qkv,
            probs,
            probs_drop,
            attended,
            out_drop,
            norm1,
            mid,
            ffn_pre,
            ffn_act,
            ffn_drop,
            norm2,
        },
    )
}

fn layer_backward<T: Scalar>(
    p: &EncoderParams<T>,
    ll: &LayerLayout,
    batch: &Packed,
    cache: &LayerCache<T>,
    dy: Vec<T>,
    grads: Option<&mut [T]>,
) -> Vec<T> {
    let c = &p.config;
    let d = c.d_model;
    let heads = c.n_heads;
    let dh = c.head_dim();
    let f = c.ffn_dim();
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let n = batch.rows();

    let mut g = grads.map(|g| {
        split_grads(
            g,
            &[
                ll.w_qkv.clone(),
                ll.b_qkv.clone(),
                ll.w_out.clone(),
                ll.b_out.clone(),
                ll.ln1_gain.clone(),
                ll.ln1_bias.clone(),
                ll.w_ffn_in.clone(),
                ll.b_ffn_in.clone(),
                ll.w_ffn_out.clone(),
                ll.b_ffn_out.clone(),
                ll.ln2_gain.clone(),
                ll.ln2_bias.clone(),
            ],
        )
    });
    macro_rules! pair {
        ($a:expr, $b:expr) => {
            g.as_mut().map(|g| {
                let (lo, hi) = g.split_at_mut($b);
                (&mut *lo[$a], &mut *hi[0])
            })
        };
    }

    // second sublayer
    let dres2 = layer_norm_backward(&dy, &cache.norm2, d, p.slice(&ll.ln2_gain), pair!(10, 11));
    let mut dffn_out = dres2.clone();
    scale_by(&cache.ffn_drop, &mut dffn_out);
    let mut dact = linear_backward(&dffn_out, &cache.ffn_act, p.slice(&ll.w_ffn_out), f, d, pair!(8, 9));
    for (da, x) in dact.iter_mut().zip(&cache.ffn_pre) {
        *da = *da * gelu_grad(*x);
    }
    let dmid_ffn = linear_backward(&dact, &cache.mid, p.slice(&ll.w_ffn_in), d, f, pair!(6, 7));
    let mut dmid = dres2;
    for (a, b) in dmid.iter_mut().zip(&dmid_ffn) {
        *a = *a + *b;
    }

    // first sublayer
    let dres1 = layer_norm_backward(&dmid, &cache.norm1, d, p.slice(&ll.ln1_gain), pair!(4, 5));
    let mut dproj = dres1.clone();
    scale_by(&cache.out_drop, &mut dproj);
    let dattended = linear_backward(&dproj, &cache.attended, p.slice(&ll.w_out), d, d, pair!(2, 3));

    let offsets = attention_offsets(batch, heads);
    let dropped: Vec<T> = match &cache.probs_drop {
        Some(m) => cache.probs.iter().zip(m).map(|(a, b)| *a * *b).collect(),
        None => cache.probs.clone(),
    };
    let mut dqkv = vec![T::zero(); n * 3 * d];
    for (s, (&start, &len)) in batch.starts.iter().zip(&batch.lens).enumerate() {
        let rows = &cache.qkv[start * 3 * d..(start + len) * 3 * d];
        let da_rows = &dattended[start * d..(start + len) * d];
        let drows = &mut dqkv[start * 3 * d..(start + len) * 3 * d];
        let mut dprobs = vec![T::zero(); len * len];
        for h in 0..heads {
            let o = offsets[s] + h * len * len;
            let probs = &cache.probs[o..o + len * len];
            let pm = &dropped[o..o + len * len];
            let da = MatRef::rows(&da_rows[h * dh..], len, dh, d);
            let v = MatRef::rows(&rows[2 * d + h * dh..], len, dh, 3 * d);
            gemm(T::one(), da, v.t(), T::zero(), MatMut::dense(&mut dprobs, len, len));
            gemm(
                T::one(),
                MatRef::dense(pm, len, len).t(),
                da,
                T::zero(),
                MatMut::rows(&mut drows[2 * d + h * dh..], len, dh, 3 * d),
            );
            if let Some(m) = &cache.probs_drop {
                for (x, k) in dprobs.iter_mut().zip(&m[o..o + len * len]) {
                    *x = *x * *k;
                }
            }
            for i in 0..len {
                let pr = &probs[i * len..(i + 1) * len];
                let dr = &mut dprobs[i * len..(i + 1) * len];
                let dot = pr.iter().zip(dr.iter()).fold(T::zero(), |a, (x, y)| a + *x * *y);
                for (x, pv) in dr.iter_mut().zip(pr) {
                    *x = *pv * (*x - dot) * scale;
                }
            }
            let q = MatRef::rows(&rows[h * dh..], len, dh, 3 * d);
            let k = MatRef::rows(&rows[d + h * dh..], len, dh, 3 * d);
            let ds = MatRef::dense(&dprobs, len, len);
            gemm(T::one(), ds, k, T::zero(), MatMut::rows(&mut drows[h * dh..], len, dh, 3 * d));
            gemm(T::one(), ds.t(), q, T::zero(), MatMut::rows(&mut drows[d + h * dh..], len, dh, 3 * d));
        }
    }
    let mut dx = linear_backward(&dqkv, &cache.input, p.slice(&ll.w_qkv), d, 3 * d, pair!(0, 1));
    for (a, b) in dx.iter_mut().zip(&dres1) {
        *a = *a + *b;
    }
    dx
}

/// Run every layer over the layer-0 inputs `x`.
pub fn encode<T: Scalar>(
    p: &EncoderParams<T>,
    batch: &Packed,
    x: Vec<T>,
    mut dropout: Option<&mut Dropout>,
) -> Result<Activations<T>, NeuralError> {
    batch.check(p)?;
    if x.len() != batch.rows() * p.config.d_model {
        return Err(NeuralError::Wiring(format!(
            "layer input has {} values, expected {} rows of {}",
            x.len(),
            batch.rows(),
            p.config.d_model
        )));
    }
    let mut layers = Vec::with_capacity(p.layout.layers.len());
    let mut h = x;
    for ll in &p.layout.layers {
        let (out, cache) = layer_forward(p, ll, batch, h, &mut dropout);
        layers.push(cache);
        h = out;
    }
    Ok(Activations { hidden: h, layers })
}

/// Gradient with respect to the layer-0 inputs.
pub fn encode_backward<T: Scalar>(
    p: &EncoderParams<T>,
    batch: &Packed,
    acts: &Activations<T>,
    dhidden: Vec<T>,
    mut grads: Option<&mut [T]>,
) -> Vec<T> {
    let mut dy = dhidden;
    for (ll, cache) in p.layout.layers.iter().zip(&acts.layers).rev() {
        dy = layer_backward(p, ll, batch, cache, dy, grads.as_deref_mut());
    }
    dy
}

/// Logit of the `[CLS]` row of every sequence.
pub fn logits<T: Scalar>(p: &EncoderParams<T>, batch: &Packed, hidden: &[T]) -> Vec<T> {
    let d = p.config.d_model;
    let w = p.slice(&p.layout.head_w);
    let b = p.slice(&p.layout.head_b)[0];
    batch
        .cls_rows()
        .iter()
        .map(|r| {
            hidden[r * d..(r + 1) * d]
                .iter()
                .zip(w)
                .fold(b, |acc, (h, w)| acc + *h * *w)
        })
        .collect()
}

pub fn logits_backward<T: Scalar>(
    p: &EncoderParams<T>,
    batch: &Packed,
    hidden: &[T],
    dlogits: &[T],
    grads: Option<&mut [T]>,
) -> Vec<T> {
    let d = p.config.d_model;
    let l = &p.layout;
    let w = p.slice(&l.head_w);
    let mut dh = vec![T::zero(); hidden.len()];
    for (r, dz) in batch.cls_rows().iter().zip(dlogits) {
        for j in 0..d {
            dh[r * d + j] = *dz * w[j];
        }
    }
    if let Some(g) = grads {
        for (r, dz) in batch.cls_rows().iter().zip(dlogits) {
            for j in 0..d {
                g[l.head_w.start + j] = g[l.head_w.start + j] + *dz * hidden[r * d + j];
            }
            g[l.head_b.start] = g[l.head_b.start] + *dz;
        }
    }
    dh
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

/// Mean binary log loss over logits and its gradient.
pub fn log_loss<T: Scalar>(logits: &[T], labels: &[bool]) -> (T, Vec<T>) {
    let n = T::from_usize(logits.len().max(1)).expect("count");
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (z, y) in logits.iter().zip(labels) {
        let yv = if *y { T::one() } else { T::zero() };
        // log(1 + e^z) - y·z, computed without overflow
        loss = loss + z.max(T::zero()) - *z * yv + (T::one() + (-z.abs()).exp()).ln();
        grad.push((sigmoid(*z) - yv) / n);
    }
    (loss / n, grad)
}

/// Probabilities with dropout disabled.
pub fn predict_probs<T: Scalar>(p: &EncoderParams<T>, seqs: &[&TokenSeq]) -> Result<Vec<T>, NeuralError> {
    let batch = Packed::new(seqs);
    let (x, _) = embed(p, &batch, None)?;
    let acts = encode(p, &batch, x, None)?;
    Ok(logits(p, &batch, &acts.hidden).into_iter().map(sigmoid).collect())
}

/// Loss of one batch; parameter gradients are added into `grads`.
pub fn loss_and_grads<T: Scalar>(
    p: &EncoderParams<T>,
    seqs: &[&TokenSeq],
    labels: &[bool],
    mut dropout: Option<&mut Dropout>,
    grads: &mut [T],
) -> Result<T, NeuralError> {
    let batch = Packed::new(seqs);
    let (x, emb) = embed(p, &batch, dropout.as_deref_mut())?;
    let acts = encode(p, &batch, x, dropout)?;
    let z = logits(p, &batch, &acts.hidden);
    let (loss, dz) = log_loss(&z, labels);
    let dh = logits_backward(p, &batch, &acts.hidden, &dz, Some(grads));
    let dx = encode_backward(p, &batch, &acts, dh, Some(grads));
    embed_backward(p, &batch, &emb, dx, grads);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::EncoderConfig;
    use crate::vocab::{tokenize, Vocab};
    use rand::SeedableRng;
    use unifier_core::ruleworld::Lexicon;

    fn setup() -> (EncoderParams<f64>, Vocab) {
        let vocab = Vocab::from_lexicon(&Lexicon::default());
        let c = EncoderConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            max_len: 32,
            vocab_size: vocab.len(),
            init_std: 0.3,
            ..EncoderConfig::default()
        };
        (EncoderParams::init(&c).unwrap(), vocab)
    }

    fn seq(v: &Vocab, c: &str, q: &str) -> TokenSeq {
        tokenize(c, q, v, 32).unwrap()
    }

    fn hidden(p: &EncoderParams<f64>, s: &[&TokenSeq]) -> Vec<f64> {
        let b = Packed::new(s);
        let (x, _) = embed(p, &b, None).unwrap();
        encode(p, &b, x, None).unwrap().hidden
    }

    #[test]
    fn single_token_attends_to_itself() {
        let (p, _) = setup();
        let s = TokenSeq {
            ids: vec![0],
            segments: vec![0],
            mask: vec![1],
            query_span: (0, 0),
        };
        let b = Packed::new(&[&s]);
        let (x, _) = embed(&p, &b, None).unwrap();
        let mut acts = encode(&p, &b, x, None).unwrap();
        for v in acts.layers.remove(0).probs {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn attention_rows_sum_to_one_and_skip_padding() {
        let (p, v) = setup();
        let mut s = seq(&v, "Bob is big.", "Bob is big?");
        let len = s.len();
        s.pad_to(len + 3);
        let b = Packed::new(&[&s]);
        let (x, _) = embed(&p, &b, None).unwrap();
        let acts = encode(&p, &b, x, None).unwrap();
        let n = len + 3;
        for layer in &acts.layers {
            for row in layer.probs.chunks(n) {
                let total: f64 = row.iter().sum();
                assert!((total - 1.0).abs() < 1e-6);
                assert!(row[len..].iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn masked_positions_do_not_leak() {
        let (p, v) = setup();
        let mut a = seq(&v, "Bob is big.", "Bob is big?");
        let len = a.len();
        a.pad_to(len + 2);
        let mut b = a.clone();
        b.ids[len] = 7;
        b.ids[len + 1] = 9;
        let ha = hidden(&p, &[&a]);
        let hb = hidden(&p, &[&b]);
        let d = p.config.d_model;
        assert_eq!(ha[..len * d], hb[..len * d]);
    }

    #[test]
    fn deterministic_and_position_sensitive() {
        let (p, v) = setup();
        let a = seq(&v, "Bob is big. Anne is red.", "Bob is big?");
        let b = seq(&v, "Anne is red. Bob is big.", "Bob is big?");
        assert_eq!(hidden(&p, &[&a]), hidden(&p, &[&a]));
        assert_ne!(hidden(&p, &[&a])[..8], hidden(&p, &[&b])[..8]);
        // packing several sequences does not couple them
        let both = hidden(&p, &[&a, &b]);
        assert_eq!(both[..a.len() * 8], hidden(&p, &[&a])[..]);
    }

    #[test]
    fn zero_output_projection_leaves_normalised_input() {
        let (mut p, v) = setup();
        let ll = p.layout.layers[0].clone();
        for r in [ll.w_out.clone(), ll.b_out.clone()] {
            p.data[r].iter_mut().for_each(|x| *x = 0.0);
        }
        let s = seq(&v, "Bob is big.", "Bob is big?");
        let b = Packed::new(&[&s]);
        let (x, _) = embed(&p, &b, None).unwrap();
        let (_, cache) = layer_forward(&p, &ll, &b, x.clone(), &mut None);
        let (expect, _) = layer_norm(&x, 8, p.slice(&ll.ln1_gain), p.slice(&ll.ln1_bias));
        for (a, e) in cache.mid.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_head_gives_one_half() {
        let (mut p, v) = setup();
        let r = p.layout.head_w.start..p.layout.head_b.end;
        p.data[r].iter_mut().for_each(|x| *x = 0.0);
        let s = seq(&v, "Bob is big.", "Bob is big?");
        assert_eq!(predict_probs(&p, &[&s]).unwrap(), vec![0.5]);
    }

    #[test]
    fn log_loss_matches_definition() {
        let (loss, grad) = log_loss(&[0.3f64, -1.2], &[true, false]);
        let p0 = sigmoid(0.3f64);
        let p1 = sigmoid(-1.2f64);
        let expect = (-(p0.ln()) - (1.0 - p1).ln()) / 2.0;
        assert!((loss - expect).abs() < 1e-12);
        assert!((grad[0] - (p0 - 1.0) / 2.0).abs() < 1e-12);
        let (big, _) = log_loss(&[800.0f64], &[false]);
        assert!(big.is_finite());
    }

    #[test]
    fn dropout_changes_training_but_not_eval() {
        let (p, v) = setup();
        let s = seq(&v, "Bob is big.", "Bob is big?");
        let mut g1 = p.zeros_like();
        let mut g2 = p.zeros_like();
        let mut d1 = Dropout { rate: 0.5, rng: ChaCha8Rng::seed_from_u64(1) };
        let mut d2 = Dropout { rate: 0.5, rng: ChaCha8Rng::seed_from_u64(2) };
        let l1 = loss_and_grads(&p, &[&s], &[true], Some(&mut d1), &mut g1).unwrap();
        let l2 = loss_and_grads(&p, &[&s], &[true], Some(&mut d2), &mut g2).unwrap();
        assert_ne!(l1, l2);
        assert_eq!(predict_probs(&p, &[&s]).unwrap(), predict_probs(&p, &[&s]).unwrap());
    }

    #[test]
    fn unused_embedding_rows_get_no_gradient() {
        let (p, v) = setup();
        let s = seq(&v, "Bob is big.", "Bob is big?");
        let mut g = p.zeros_like();
        loss_and_grads(&p, &[&s], &[true], None, &mut g).unwrap();
        let unused = v.id("furry") as usize;
        let d = p.config.d_model;
        let row = p.layout.token_emb.start + unused * d;
        assert!(g[row..row + d].iter().all(|x| *x == 0.0));
        let used = p.layout.token_emb.start + v.id("bob") as usize * d;
        assert!(g[used..used + d].iter().any(|x| *x != 0.0));
    }
}
