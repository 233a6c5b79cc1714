//! The six fine-tuning strategies: input encoding, pre-training, the
//! fine-tuning loop with periodic validation and early stopping, and
//! evaluation.

mod early_stop;
mod optim;
mod strategy;
mod train;

pub use early_stop::{early_stop_update, EarlyStopping, StopDecision};
pub use optim::{Adam, AdamConfig};
pub use strategy::{
    encode_for_strategy, tokenize_dataset, Phase, Strategy, StrategyEncoder, StrategyKind, TokenizedExample,
};
pub use train::{
    check_metric, choose_inference_template, evaluate, evaluate_phase, finetune, finetune_with_validator,
    head_kind_for, mlm_eval_loss, predict, pretrain_mlm, score_predictions, Finetuned, PretrainConfig, Pretrained,
    RunHistory, TrainingSchedule,
};
