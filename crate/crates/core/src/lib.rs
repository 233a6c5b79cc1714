//! Prompt-based fine-tuning of a small transformer encoder with dynamic
//! prompt pools and mask-token representations, alongside the standard
//! baselines (`[CLS]`/mean-pooled fine-tuning, null prompts, fixed-template
//! fine-tuning).

pub mod data;
pub mod encoder;
pub mod error;
pub mod finetune;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod templating;
pub mod tokenizer;

pub use error::{Error, Result};
