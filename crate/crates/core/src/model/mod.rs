//! Transformer encoder with masked-LM, token-classification and
//! relation-classification heads, plus the checkpoint container.

mod batch;
mod checkpoint;
mod config;
mod forward;
mod params;

pub use batch::Batch;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Provenance};
pub use config::{Heads, ModelConfig};
pub use forward::{
    encoder_graph, forward_encoder, forward_mlm, forward_relation, forward_token_classification,
    marker_positions, mlm_logits_graph, relation_logits_graph, token_logits_graph,
};
pub use params::{init_model, manifest, parameter_count};
