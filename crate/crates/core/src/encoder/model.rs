//! Pre-norm transformer encoder with learned positions, GELU feed-forward
//! blocks and an MLM head tied to the token embeddings.
//!
//! Only the non-PAD prefix of each sequence is materialized. PAD keys get
//! zero attention weight, so the activations of real tokens are the same as
//! if the padding had been computed and masked.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::linalg::{add_bias, add_col_sums, gemm, View, ViewMut};
use super::params::{Gradients, Parameters, Tensor};
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};
use crate::templating::EncodedInput;
use crate::tokenizer::DEFAULT_VOCAB_SIZE;

pub const FFN_MULT: usize = 4;
pub const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { layers: 4, dim: 128, heads: 4, max_len: 128, vocab_size: DEFAULT_VOCAB_SIZE, dropout: 0.1 }
    }
}

impl ModelConfig {
    /// Two layers, width 16; small enough for finite-difference checks.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig { layers: 2, dim: 16, heads: 2, max_len: 16, vocab_size, dropout: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.layers == 0 {
            return fail("layers must be positive".into());
        }
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!("dim {} is not divisible by heads {}", self.dim, self.heads));
        }
        if self.max_len < 8 {
            return fail(format!("max_len {} is below 8", self.max_len));
        }
        if self.vocab_size <= crate::tokenizer::NUM_SPECIALS {
            return fail(format!("vocab_size {} leaves no room past the specials", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} is outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.dim * FFN_MULT
    }
}

// Parameter layout: embeddings, then 15 tensors per layer, then the final
// norm and the MLM output bias.
pub(crate) const TOK_EMB: usize = 0;
pub(crate) const POS_EMB: usize = 1;
const PER_LAYER: usize = 15;
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const BQ: usize = 3;
const WK: usize = 4;
const WV: usize = 5;
const BV: usize = 6;
const WO: usize = 7;
const BO: usize = 8;
const LN2_G: usize = 9;
const LN2_B: usize = 10;
const W1: usize = 11;
const B1: usize = 12;
const W2: usize = 13;
const B2: usize = 14;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Tensor>,
}

impl Parameters for Model {
    fn tensors(&self) -> Vec<&Tensor> {
        self.params.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().collect()
    }
}

/// Weights ~ N(0, 0.02), biases 0, norm gains 1. Same seed, same bits.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut weight = |name: String, shape: &[usize]| {
        let mut t = Tensor::zeros(name, shape);
        for v in &mut t.data {
            *v = normal.sample(&mut rng);
        }
        t
    };
    let (d, f, v, s) = (config.dim, config.ffn_dim(), config.vocab_size, config.max_len);
    let mut params = vec![weight("tok_emb".into(), &[v, d]), weight("pos_emb".into(), &[s, d])];
    for l in 0..config.layers {
        let p = |n: &str| format!("layer{l}.{n}");
        params.push(Tensor::filled(p("ln1.gain"), &[d], 1.0));
        params.push(Tensor::zeros(p("ln1.bias"), &[d]));
        for name in ["q", "k", "v", "o"] {
            params.push(weight(p(&format!("attn.w{name}")), &[d, d]));
            // a key bias only shifts each softmax row by a constant
            if name != "k" {
                params.push(Tensor::zeros(p(&format!("attn.b{name}")), &[d]));
            }
        }
        params.push(Tensor::filled(p("ln2.gain"), &[d], 1.0));
        params.push(Tensor::zeros(p("ln2.bias"), &[d]));
        params.push(weight(p("ffn.w1"), &[d, f]));
        params.push(Tensor::zeros(p("ffn.b1"), &[f]));
        params.push(weight(p("ffn.w2"), &[f, d]));
        params.push(Tensor::zeros(p("ffn.b2"), &[d]));
    }
    params.push(Tensor::filled("final_ln.gain", &[d], 1.0));
    params.push(Tensor::zeros("final_ln.bias", &[d]));
    params.push(Tensor::zeros("mlm.bias", &[v]));
    Ok(Model { config: config.clone(), params })
}

pub enum Mode<'r> {
    Eval,
    Train(&'r mut Rng),
}

/// Final-layer activations for the non-PAD positions of each sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStates {
    dim: usize,
    max_len: usize,
    offsets: Vec<usize>,
    lengths: Vec<usize>,
    data: Vec<f64>,
}

impl HiddenStates {
    /// Builds hidden states from per-sequence row-major `[len x dim]` blocks.
    pub fn from_sequences(dim: usize, max_len: usize, sequences: &[Vec<f64>]) -> Self {
        let mut offsets = Vec::new();
        let mut lengths = Vec::new();
        let mut data = Vec::new();
        for s in sequences {
            assert_eq!(s.len() % dim, 0, "sequence block is not a multiple of dim");
            offsets.push(data.len() / dim);
            lengths.push(s.len() / dim);
            data.extend_from_slice(s);
        }
        HiddenStates { dim, max_len, offsets, lengths, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn seq_len(&self) -> usize {
        self.max_len
    }

    /// Number of valid (non-PAD) positions of sequence `b`.
    pub fn valid_len(&self, b: usize) -> usize {
        self.lengths[b]
    }

    pub fn is_valid(&self, b: usize, pos: usize) -> bool {
        pos < self.lengths[b]
    }

    /// Activation at `(b, pos)`, or `None` for a PAD position.
    pub fn row(&self, b: usize, pos: usize) -> Option<&[f64]> {
        self.is_valid(b, pos).then(|| {
            let r = self.offsets[b] + pos;
            &self.data[r * self.dim..(r + 1) * self.dim]
        })
    }

    pub(crate) fn row_index(&self, b: usize, pos: usize) -> usize {
        self.offsets[b] + pos
    }

    pub(crate) fn total_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

struct NormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct LayerCache {
    ln1: NormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Softmax weights per `(sequence, head)`, each `len x len`.
    probs: Vec<Vec<f64>>,
    ctx: Vec<f64>,
    drop1: Option<Vec<f64>>,
    ln2: NormCache,
    b: Vec<f64>,
    f_pre: Vec<f64>,
    f_act: Vec<f64>,
    drop2: Option<Vec<f64>>,
}

/// Intermediate values kept by [`Model::forward`] for the backward pass.
pub struct ForwardCache {
    ids: Vec<u32>,
    positions: Vec<usize>,
    offsets: Vec<usize>,
    lengths: Vec<usize>,
    drop0: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    final_ln: NormCache,
}

impl ForwardCache {
    /// Attention weights of `layer`/`head` for sequence `b`, one row per
    /// valid query, padded with zeros up to `max_len` keys.
    pub fn attention_rows(&self, layer: usize, b: usize, head: usize, heads: usize, max_len: usize) -> Vec<Vec<f64>> {
        let t = self.lengths[b];
        let p = &self.layers[layer].probs[b * heads + head];
        (0..t)
            .map(|i| {
                let mut row = vec![0.0; max_len];
                row[..t].copy_from_slice(&p[i * t..(i + 1) * t]);
                row
            })
            .collect()
    }
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> (Vec<f64>, NormCache) {
    let d = gain.len();
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (row[c] - mean) * rs;
            xhat[r * d + c] = h;
            y[r * d + c] = h * gain[c] + bias[c];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Returns dx; accumulates the gain and bias gradients.
fn layer_norm_backward(dy: &[f64], cache: &NormCache, gain: &[f64], dgain: &mut [f64], dbias: &mut [f64]) -> Vec<f64> {
    let d = gain.len();
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            dgain[c] += dyr[c] * xh[c];
            dbias[c] += dyr[c];
            dxhat[c] = dyr[c] * gain[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xh[c];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        for c in 0..d {
            dx[r * d + c] = rs * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn dropout_mask(len: usize, p: f64, mode: &mut Mode<'_>) -> Option<Vec<f64>> {
    match mode {
        Mode::Train(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            Some((0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
        }
        _ => None,
    }
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

/// `x @ w + b` for row-major `x: rows x in`, `w: in x out`.
fn linear(x: &[f64], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (din, dout) = (w.shape[0], w.shape[1]);
    let mut y = vec![0.0; rows * dout];
    gemm(1.0, View::new(x, rows, din), View::new(&w.data, din, dout), 0.0, ViewMut::new(&mut y, rows, dout));
    add_bias(&mut y, &b.data);
    y
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let reference = init_model(&config, 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::BadCheckpoint(format!(
                "expected {} tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (r, p) in reference.params.iter().zip(&params) {
            if r.name != p.name || r.shape != p.shape || p.data.len() != r.data.len() {
                return Err(Error::BadCheckpoint(format!("tensor {} does not match the config", p.name)));
            }
        }
        Ok(Model { config, params })
    }

    fn lp(&self, layer: usize, k: usize) -> &Tensor {
        &self.params[2 + layer * PER_LAYER + k]
    }

    pub(crate) fn lp_index(&self, layer: usize, k: usize) -> usize {
        2 + layer * PER_LAYER + k
    }

    pub(crate) fn final_index(&self) -> usize {
        2 + self.config.layers * PER_LAYER
    }

    pub(crate) fn token_embeddings(&self) -> &Tensor {
        &self.params[TOK_EMB]
    }

    pub(crate) fn mlm_bias(&self) -> &Tensor {
        &self.params[self.final_index() + 2]
    }

    pub(crate) fn mlm_bias_index(&self) -> usize {
        self.final_index() + 2
    }

    fn check_batch(&self, batch: &[EncodedInput]) -> Result<()> {
        let Some(first) = batch.first() else { return Ok(()) };
        let len = first.ids.len();
        if len > self.config.max_len {
            return Err(Error::ShapeMismatch(format!("sequence length {len} exceeds max_len {}", self.config.max_len)));
        }
        for (b, input) in batch.iter().enumerate() {
            if input.ids.len() != len {
                return Err(Error::ShapeMismatch(format!(
                    "input {b} has length {} but input 0 has {len}",
                    input.ids.len()
                )));
            }
            if input.attention_length == 0 || input.attention_length > len {
                return Err(Error::ShapeMismatch(format!("input {b} has attention_length {}", input.attention_length)));
            }
            if let Some(&bad) = input.valid_ids().iter().find(|&&id| id as usize >= self.config.vocab_size) {
                return Err(Error::ShapeMismatch(format!("token id {bad} >= vocab_size {}", self.config.vocab_size)));
            }
        }
        Ok(())
    }

    /// Eval-mode forward; a pure function of the parameters and inputs.
    pub fn forward_eval(&self, batch: &[EncodedInput]) -> Result<HiddenStates> {
        self.forward(batch, Mode::Eval).map(|(h, _)| h)
    }

    pub fn forward(&self, batch: &[EncodedInput], mut mode: Mode<'_>) -> Result<(HiddenStates, ForwardCache)> {
        self.check_batch(batch)?;
        let cfg = &self.config;
        let (d, heads, dh, f) = (cfg.dim, cfg.heads, cfg.head_dim(), cfg.ffn_dim());
        let scale = 1.0 / (dh as f64).sqrt();

        let lengths: Vec<usize> = batch.iter().map(|x| x.attention_length).collect();
        let mut offsets = Vec::with_capacity(batch.len());
        let mut n = 0;
        for &l in &lengths {
            offsets.push(n);
            n += l;
        }
        let mut ids = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        for x in batch {
            ids.extend_from_slice(x.valid_ids());
            positions.extend(0..x.attention_length);
        }

        let tok = &self.params[TOK_EMB].data;
        let pos = &self.params[POS_EMB].data;
        let mut x = vec![0.0; n * d];
        for r in 0..n {
            let (t, p) = (ids[r] as usize, positions[r]);
            for c in 0..d {
                x[r * d + c] = tok[t * d + c] + pos[p * d + c];
            }
        }
        let drop0 = dropout_mask(x.len(), cfg.dropout, &mut mode);
        apply_mask(&mut x, &drop0);

        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let (a, ln1) = layer_norm(&x, &self.lp(l, LN1_G).data, &self.lp(l, LN1_B).data);
            let q = linear(&a, n, self.lp(l, WQ), self.lp(l, BQ));
            let mut k = vec![0.0; n * d];
            gemm(1.0, View::new(&a, n, d), View::new(&self.lp(l, WK).data, d, d), 0.0, ViewMut::new(&mut k, n, d));
            let v = linear(&a, n, self.lp(l, WV), self.lp(l, BV));

            let mut ctx = vec![0.0; n * d];
            let mut probs = Vec::with_capacity(batch.len() * heads);
            for (&o, &t) in offsets.iter().zip(&lengths) {
                for h in 0..heads {
                    let qv = View::new(&q, n, d).block(o, h * dh, t, dh);
                    let kv = View::new(&k, n, d).block(o, h * dh, t, dh);
                    let vv = View::new(&v, n, d).block(o, h * dh, t, dh);
                    let mut p = vec![0.0; t * t];
                    gemm(scale, qv, kv.t(), 0.0, ViewMut::new(&mut p, t, t));
                    for row in p.chunks_exact_mut(t) {
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        for s in row.iter_mut() {
                            *s = (*s - max).exp();
                            sum += *s;
                        }
                        for s in row.iter_mut() {
                            *s /= sum;
                        }
                    }
                    gemm(1.0, View::new(&p, t, t), vv, 0.0, ViewMut::new(&mut ctx, n, d).block(o, h * dh, t, dh));
                    probs.push(p);
                }
            }

            let mut attn = linear(&ctx, n, self.lp(l, WO), self.lp(l, BO));
            let drop1 = dropout_mask(attn.len(), cfg.dropout, &mut mode);
            apply_mask(&mut attn, &drop1);
            let hres: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();

            let (bn, ln2) = layer_norm(&hres, &self.lp(l, LN2_G).data, &self.lp(l, LN2_B).data);
            let f_pre = linear(&bn, n, self.lp(l, W1), self.lp(l, B1));
            let f_act: Vec<f64> = f_pre.iter().map(|&z| gelu(z)).collect();
            let mut ffn = linear(&f_act, n, self.lp(l, W2), self.lp(l, B2));
            debug_assert_eq!(f_act.len(), n * f);
            let drop2 = dropout_mask(ffn.len(), cfg.dropout, &mut mode);
            apply_mask(&mut ffn, &drop2);
            x = hres.iter().zip(&ffn).map(|(a, b)| a + b).collect();

            layers.push(LayerCache { ln1, a, q, k, v, probs, ctx, drop1, ln2, b: bn, f_pre, f_act, drop2 });
        }

        let fi = self.final_index();
        let (out, final_ln) = layer_norm(&x, &self.params[fi].data, &self.params[fi + 1].data);
        let hidden = HiddenStates {
            dim: d,
            max_len: batch.first().map_or(0, |b| b.ids.len()),
            offsets: offsets.clone(),
            lengths: lengths.clone(),
            data: out,
        };
        let cache = ForwardCache { ids, positions, offsets, lengths, drop0, layers, final_ln };
        Ok((hidden, cache))
    }

    /// Backpropagates `d_hidden` (one row per valid position, same layout as
    /// [`HiddenStates`]) and accumulates into `grads`.
    pub fn backward(&self, cache: &ForwardCache, d_hidden: &[f64], grads: &mut Gradients) {
        let cfg = &self.config;
        let (d, heads, dh, f) = (cfg.dim, cfg.heads, cfg.head_dim(), cfg.ffn_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let n = cache.ids.len();
        assert_eq!(d_hidden.len(), n * d, "d_hidden shape");
        let g = &mut grads.0;

        let fi = self.final_index();
        let (head, tail) = g.split_at_mut(fi + 1);
        let mut dx = layer_norm_backward(d_hidden, &cache.final_ln, &self.params[fi].data, &mut head[fi], &mut tail[0]);

        for l in (0..cfg.layers).rev() {
            let c = &cache.layers[l];
            let gi = |k: usize| self.lp_index(l, k);

            // x_out = h + drop(ffn(ln2(h)))
            let mut d_ffn = dx.clone();
            apply_mask(&mut d_ffn, &c.drop2);
            gemm(1.0, View::new(&c.f_act, n, f).t(), View::new(&d_ffn, n, d), 1.0, ViewMut::new(&mut g[gi(W2)], f, d));
            add_col_sums(&d_ffn, d, &mut g[gi(B2)]);
            let mut d_f = vec![0.0; n * f];
            gemm(
                1.0,
                View::new(&d_ffn, n, d),
                View::new(&self.lp(l, W2).data, f, d).t(),
                0.0,
                ViewMut::new(&mut d_f, n, f),
            );
            for (df, &z) in d_f.iter_mut().zip(&c.f_pre) {
                *df *= gelu_grad(z);
            }
            gemm(1.0, View::new(&c.b, n, d).t(), View::new(&d_f, n, f), 1.0, ViewMut::new(&mut g[gi(W1)], d, f));
            add_col_sums(&d_f, f, &mut g[gi(B1)]);
            let mut d_b = vec![0.0; n * d];
            gemm(
                1.0,
                View::new(&d_f, n, f),
                View::new(&self.lp(l, W1).data, d, f).t(),
                0.0,
                ViewMut::new(&mut d_b, n, d),
            );
            let (lo, hi) = g.split_at_mut(gi(LN2_B));
            let d_h_ln = layer_norm_backward(&d_b, &c.ln2, &self.lp(l, LN2_G).data, &mut lo[gi(LN2_G)], &mut hi[0]);
            let dh_res: Vec<f64> = dx.iter().zip(&d_h_ln).map(|(a, b)| a + b).collect();

            // h = x_in + drop(attn(ln1(x_in)))
            let mut d_attn = dh_res.clone();
            apply_mask(&mut d_attn, &c.drop1);
            gemm(1.0, View::new(&c.ctx, n, d).t(), View::new(&d_attn, n, d), 1.0, ViewMut::new(&mut g[gi(WO)], d, d));
            add_col_sums(&d_attn, d, &mut g[gi(BO)]);
            let mut d_ctx = vec![0.0; n * d];
            gemm(
                1.0,
                View::new(&d_attn, n, d),
                View::new(&self.lp(l, WO).data, d, d).t(),
                0.0,
                ViewMut::new(&mut d_ctx, n, d),
            );

            let mut dq = vec![0.0; n * d];
            let mut dk = vec![0.0; n * d];
            let mut dv = vec![0.0; n * d];
            for (s, (&o, &t)) in cache.offsets.iter().zip(&cache.lengths).enumerate() {
                for h in 0..heads {
                    let p = &c.probs[s * heads + h];
                    let dctx = View::new(&d_ctx, n, d).block(o, h * dh, t, dh);
                    // dV = P^T dctx
                    gemm(1.0, View::new(p, t, t).t(), dctx, 0.0, ViewMut::new(&mut dv, n, d).block(o, h * dh, t, dh));
                    // dP = dctx V^T
                    let mut ds = vec![0.0; t * t];
                    gemm(
                        1.0,
                        dctx,
                        View::new(&c.v, n, d).block(o, h * dh, t, dh).t(),
                        0.0,
                        ViewMut::new(&mut ds, t, t),
                    );
                    for (dsr, pr) in ds.chunks_exact_mut(t).zip(p.chunks_exact(t)) {
                        let inner: f64 = dsr.iter().zip(pr).map(|(a, b)| a * b).sum();
                        for (x, &pv) in dsr.iter_mut().zip(pr) {
                            *x = pv * (*x - inner) * scale;
                        }
                    }
                    gemm(
                        1.0,
                        View::new(&ds, t, t),
                        View::new(&c.k, n, d).block(o, h * dh, t, dh),
                        0.0,
                        ViewMut::new(&mut dq, n, d).block(o, h * dh, t, dh),
                    );
                    gemm(
                        1.0,
                        View::new(&ds, t, t).t(),
                        View::new(&c.q, n, d).block(o, h * dh, t, dh),
                        0.0,
                        ViewMut::new(&mut dk, n, d).block(o, h * dh, t, dh),
                    );
                }
            }

            let mut d_a = vec![0.0; n * d];
            for (dm, w, b) in [(&dq, WQ, Some(BQ)), (&dk, WK, None), (&dv, WV, Some(BV))] {
                gemm(1.0, View::new(&c.a, n, d).t(), View::new(dm, n, d), 1.0, ViewMut::new(&mut g[gi(w)], d, d));
                if let Some(b) = b {
                    add_col_sums(dm, d, &mut g[gi(b)]);
                }
                gemm(
                    1.0,
                    View::new(dm, n, d),
                    View::new(&self.lp(l, w).data, d, d).t(),
                    1.0,
                    ViewMut::new(&mut d_a, n, d),
                );
            }
            let (lo, hi) = g.split_at_mut(gi(LN1_B));
            let d_x_ln = layer_norm_backward(&d_a, &c.ln1, &self.lp(l, LN1_G).data, &mut lo[gi(LN1_G)], &mut hi[0]);
            dx = dh_res.iter().zip(&d_x_ln).map(|(a, b)| a + b).collect();
        }

        apply_mask(&mut dx, &cache.drop0);
        for r in 0..n {
            let (t, p) = (cache.ids[r] as usize, cache.positions[r]);
            for col in 0..d {
                g[TOK_EMB][t * d + col] += dx[r * d + col];
                g[POS_EMB][p * d + col] += dx[r * d + col];
            }
        }
    }
}
