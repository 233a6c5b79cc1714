//! Scalar objectives with their gradients: masked-token cross-entropy through
//! the tied MLM head, and cross-entropy or squared error through a task head.

use super::head::{extract_representation, scatter_representation_grad, Head, HeadKind, Pooling};
use super::linalg::{add_col_sums, gemm, View, ViewMut};
use super::model::{HiddenStates, Mode, Model, TOK_EMB};
use super::params::Gradients;
use crate::error::{Error, Result};
use crate::templating::EncodedInput;
use crate::tokenizer::TokenId;

/// One corrupted position whose original token must be predicted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlmTarget {
    pub seq: usize,
    pub pos: usize,
    pub id: TokenId,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Softmax cross-entropy averaged over rows; returns the loss and
/// `d loss / d logits`.
pub fn softmax_cross_entropy(logits: &[f64], classes: usize, gold: &[usize]) -> (f64, Vec<f64>) {
    let rows = gold.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (r, &y) in gold.iter().enumerate() {
        let z = &logits[r * classes..(r + 1) * classes];
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss += log_norm - z[y];
        let g = &mut grad[r * classes..(r + 1) * classes];
        for (gv, zv) in g.iter_mut().zip(z) {
            *gv = (zv - log_norm).exp() / rows as f64;
        }
        g[y] -= 1.0 / rows as f64;
    }
    (loss / rows as f64, grad)
}

fn mlm_logits(model: &Model, hidden: &HiddenStates, targets: &[MlmTarget]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = hidden.dim();
    let mut rows = Vec::with_capacity(targets.len() * d);
    for (i, t) in targets.iter().enumerate() {
        let row = hidden
            .row(t.seq, t.pos)
            .ok_or_else(|| Error::InvalidArgument(format!("target {i} points at a PAD position")))?;
        rows.extend_from_slice(row);
    }
    let v = model.config().vocab_size;
    let emb = &model.token_embeddings().data;
    let mut logits = vec![0.0; targets.len() * v];
    gemm(
        1.0,
        View::new(&rows, targets.len(), d),
        View::new(emb, v, d).t(),
        0.0,
        ViewMut::new(&mut logits, targets.len(), v),
    );
    super::linalg::add_bias(&mut logits, &model.mlm_bias().data);
    Ok((rows, logits))
}

/// Mean masked-token cross-entropy over `targets`.
pub fn mlm_loss_and_grads(
    model: &Model,
    batch: &[EncodedInput],
    targets: &[MlmTarget],
    mode: Mode<'_>,
) -> Result<(f64, Gradients)> {
    if targets.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let (hidden, cache) = model.forward(batch, mode)?;
    let (rows, logits) = mlm_logits(model, &hidden, targets)?;
    let v = model.config().vocab_size;
    let d = hidden.dim();
    let gold: Vec<usize> = targets.iter().map(|t| t.id as usize).collect();
    let (loss, d_logits) = softmax_cross_entropy(&logits, v, &gold);

    let mut grads = Gradients::zeros_like(model);
    let m = targets.len();
    // tied output embedding
    gemm(1.0, View::new(&d_logits, m, v).t(), View::new(&rows, m, d), 1.0, ViewMut::new(&mut grads.0[TOK_EMB], v, d));
    add_col_sums(&d_logits, v, &mut grads.0[model.mlm_bias_index()]);
    let mut d_rows = vec![0.0; m * d];
    gemm(
        1.0,
        View::new(&d_logits, m, v),
        View::new(&model.token_embeddings().data, v, d),
        0.0,
        ViewMut::new(&mut d_rows, m, d),
    );
    let mut d_hidden = vec![0.0; hidden.total_rows() * d];
    for (t, g) in targets.iter().zip(d_rows.chunks_exact(d)) {
        let r = hidden.row_index(t.seq, t.pos);
        for (dst, src) in d_hidden[r * d..(r + 1) * d].iter_mut().zip(g) {
            *dst += src;
        }
    }
    model.backward(&cache, &d_hidden, &mut grads);
    Ok((loss, grads))
}

pub fn mlm_loss(model: &Model, batch: &[EncodedInput], targets: &[MlmTarget]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let hidden = model.forward_eval(batch)?;
    let (_, logits) = mlm_logits(model, &hidden, targets)?;
    let gold: Vec<usize> = targets.iter().map(|t| t.id as usize).collect();
    Ok(softmax_cross_entropy(&logits, model.config().vocab_size, &gold).0)
}

/// Loss of `head` on fixed representations, and `d loss / d outputs`.
/// Classification uses mean cross-entropy, regression mean squared error.
pub fn head_objective(head: &Head, reps: &[f64], labels: &Labels) -> Result<(f64, Vec<f64>)> {
    let rows = labels.len();
    if rows == 0 {
        return Err(Error::EmptyTargets);
    }
    if reps.len() != rows * head.dim() {
        return Err(Error::ShapeMismatch(format!("{} representation values for {rows} labels", reps.len())));
    }
    let out = head.forward(reps);
    match (head.kind(), labels) {
        (HeadKind::Classification { num_classes }, Labels::Classes(gold)) => {
            if let Some(&bad) = gold.iter().find(|&&g| g >= num_classes) {
                return Err(Error::InvalidArgument(format!("label {bad} >= {num_classes} classes")));
            }
            Ok(softmax_cross_entropy(&out, num_classes, gold))
        }
        (HeadKind::Regression, Labels::Values(gold)) => {
            let n = rows as f64;
            let loss = out.iter().zip(gold).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n;
            let grad = out.iter().zip(gold).map(|(p, y)| 2.0 * (p - y) / n).collect();
            Ok((loss, grad))
        }
        _ => Err(Error::InvalidArgument("labels do not match the head kind".into())),
    }
}

/// Gradients of the head parameters (weight, bias) from output gradients.
pub fn head_backward(head: &Head, reps: &[f64], d_out: &[f64]) -> (Gradients, Vec<f64>) {
    let (d, o) = (head.dim(), head.out_dim());
    let rows = reps.len() / d;
    let mut dw = vec![0.0; d * o];
    gemm(1.0, View::new(reps, rows, d).t(), View::new(d_out, rows, o), 0.0, ViewMut::new(&mut dw, d, o));
    let mut db = vec![0.0; o];
    add_col_sums(d_out, o, &mut db);
    let mut d_reps = vec![0.0; rows * d];
    gemm(
        1.0,
        View::new(d_out, rows, o),
        View::new(&head.weight().data, d, o).t(),
        0.0,
        ViewMut::new(&mut d_reps, rows, d),
    );
    (Gradients(vec![dw, db]), d_reps)
}

/// Supervised loss through encoder and head. Returns the loss, encoder
/// gradients and head gradients.
pub fn head_loss_and_grads(
    model: &Model,
    head: &Head,
    batch: &[EncodedInput],
    pooling: Pooling,
    labels: &Labels,
    mode: Mode<'_>,
) -> Result<(f64, Gradients, Gradients)> {
    if labels.len() != batch.len() {
        return Err(Error::LengthMismatch(batch.len(), labels.len()));
    }
    let (hidden, cache) = model.forward(batch, mode)?;
    let reps = extract_representation(&hidden, batch, pooling)?;
    let (loss, d_out) = head_objective(head, &reps, labels)?;
    let (head_grads, d_reps) = head_backward(head, &reps, &d_out);
    let d_hidden = scatter_representation_grad(&hidden, batch, pooling, &d_reps);
    let mut grads = Gradients::zeros_like(model);
    model.backward(&cache, &d_hidden, &mut grads);
    Ok((loss, grads, head_grads))
}

pub fn head_loss(model: &Model, head: &Head, batch: &[EncodedInput], pooling: Pooling, labels: &Labels) -> Result<f64> {
    let hidden = model.forward_eval(batch)?;
    let reps = extract_representation(&hidden, batch, pooling)?;
    Ok(head_objective(head, &reps, labels)?.0)
}
