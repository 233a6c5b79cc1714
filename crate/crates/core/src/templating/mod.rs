//! Prompt templates: parsing, rendering into encoder inputs, dissimilarity
//! scoring and diverse pool selection.

mod pool;
mod render;
mod scorer;
mod template;

pub(crate) use pool::sample_index;
pub use pool::{sample_template, select_inference_template, select_pool, PoolSelection};
pub use render::{render, truncate_documents, truncation_lengths, CompiledTemplate, EncodedInput};
pub use scorer::{cosine, Dissimilarity, EmbeddingCosine, ScorerKind, TokenJaccard};
pub use template::{parse_template, PromptPool, PromptTemplate, Segment, MASK_MARKER};
