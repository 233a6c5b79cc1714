//! A small pre-layer-norm transformer encoder in `f64` with hand-written
//! reverse-mode gradients, MLM corruption and loss, task heads, and
//! checkpoints.

mod checkpoint;
mod gradcheck;
mod head;
pub(crate) mod linalg;
mod loss;
mod mlm;
mod model;
mod params;

pub use checkpoint::{Checkpoint, MAGIC};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, TensorCheck, MIN_SAMPLES_PER_TENSOR};
pub use head::{extract_representation, Head, HeadKind, Pooling};
pub use loss::{
    head_loss, head_loss_and_grads, head_objective, mlm_loss, mlm_loss_and_grads, softmax_cross_entropy, Labels,
    MlmTarget,
};
pub use mlm::mlm_mask;
pub use model::{init_model, ForwardCache, HiddenStates, Mode, Model, ModelConfig, INIT_STD};
pub use params::{Gradients, Parameters, Tensor};
