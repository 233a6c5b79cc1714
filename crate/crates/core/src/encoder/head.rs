use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::linalg::{add_bias, gemm, View, ViewMut};
use super::model::{HiddenStates, INIT_STD};
use super::params::{Parameters, Tensor};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::templating::EncodedInput;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Classification { num_classes: usize },
    Regression,
}

impl HeadKind {
    pub fn out_dim(self) -> usize {
        match self {
            HeadKind::Classification { num_classes } => num_classes,
            HeadKind::Regression => 1,
        }
    }
}

/// Task-specific linear predictor on top of a pooled representation.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    kind: HeadKind,
    weight: Tensor,
    bias: Tensor,
}

impl Parameters for Head {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl Head {
    pub fn new(kind: HeadKind, dim: usize, seed: u64) -> Result<Self> {
        if let HeadKind::Classification { num_classes } = kind {
            if num_classes < 2 {
                return Err(Error::InvalidArgument(format!(
                    "classification head needs >= 2 classes, got {num_classes}"
                )));
            }
        }
        let out = kind.out_dim();
        let mut rng = seeded(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut weight = Tensor::zeros("head.weight", &[dim, out]);
        for v in &mut weight.data {
            *v = normal.sample(&mut rng);
        }
        Ok(Head { kind, weight, bias: Tensor::zeros("head.bias", &[out]) })
    }

    pub(crate) fn from_parts(kind: HeadKind, weight: Tensor, bias: Tensor) -> Result<Self> {
        let out = kind.out_dim();
        if weight.shape.len() != 2 || weight.shape[1] != out || bias.shape != [out] {
            return Err(Error::BadCheckpoint("head tensor shapes do not match its kind".into()));
        }
        Ok(Head { kind, weight, bias })
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn out_dim(&self) -> usize {
        self.kind.out_dim()
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    /// Raw outputs `[rows x out_dim]` for representations `[rows x dim]`.
    pub fn forward(&self, reps: &[f64]) -> Vec<f64> {
        let (d, o) = (self.dim(), self.out_dim());
        let rows = reps.len() / d;
        let mut out = vec![0.0; rows * o];
        gemm(1.0, View::new(reps, rows, d), View::new(&self.weight.data, d, o), 0.0, ViewMut::new(&mut out, rows, o));
        add_bias(&mut out, &self.bias.data);
        out
    }
}

/// Which position(s) of the final hidden states feed the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Cls,
    Mean,
    Mask,
}

/// One `dim`-vector per input: the `[CLS]` row, the mean over non-PAD rows,
/// or the `[MASK]` row.
pub fn extract_representation(hidden: &HiddenStates, inputs: &[EncodedInput], pooling: Pooling) -> Result<Vec<f64>> {
    let d = hidden.dim();
    let mut reps = Vec::with_capacity(inputs.len() * d);
    for (b, x) in inputs.iter().enumerate() {
        match pooling {
            Pooling::Cls => reps.extend_from_slice(hidden.row(b, EncodedInput::CLS_INDEX).expect("CLS is valid")),
            Pooling::Mask => {
                let m = x.mask_index.ok_or(Error::MissingMaskIndex(b))?;
                reps.extend_from_slice(hidden.row(b, m).ok_or(Error::MissingMaskIndex(b))?);
            }
            Pooling::Mean => {
                let n = hidden.valid_len(b);
                let start = reps.len();
                reps.resize(start + d, 0.0);
                for pos in 0..n {
                    for (acc, v) in reps[start..].iter_mut().zip(hidden.row(b, pos).unwrap()) {
                        *acc += v;
                    }
                }
                for acc in &mut reps[start..] {
                    *acc /= n as f64;
                }
            }
        }
    }
    Ok(reps)
}

/// Routes gradients w.r.t. the pooled representations back to hidden rows.
pub(crate) fn scatter_representation_grad(
    hidden: &HiddenStates,
    inputs: &[EncodedInput],
    pooling: Pooling,
    d_reps: &[f64],
) -> Vec<f64> {
    let d = hidden.dim();
    let mut dh = vec![0.0; hidden.total_rows() * d];
    for (b, x) in inputs.iter().enumerate() {
        let g = &d_reps[b * d..(b + 1) * d];
        let mut add = |pos: usize, w: f64| {
            let r = hidden.row_index(b, pos);
            for (t, v) in dh[r * d..(r + 1) * d].iter_mut().zip(g) {
                *t += w * v;
            }
        };
        match pooling {
            Pooling::Cls => add(EncodedInput::CLS_INDEX, 1.0),
            Pooling::Mask => add(x.mask_index.expect("checked by extract_representation"), 1.0),
            Pooling::Mean => {
                let n = hidden.valid_len(b);
                for pos in 0..n {
                    add(pos, 1.0 / n as f64);
                }
            }
        }
    }
    dh
}
