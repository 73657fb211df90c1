//! Decoder-only transformer: config, weights, forward pass, checkpoints and
//! compaction of pruned plans.

mod checkpoint;
mod compact;
mod config;
mod forward;
mod weights;

pub use checkpoint::{
    load_checkpoint, load_model, save_checkpoint, CheckpointManifest, TensorEntry,
    CHECKPOINT_FORMAT_VERSION,
};
pub use compact::{apply_plan, compact_model, masked_model};
pub use config::{
    count_prunable_params, LayerWidths, ModelConfig, PositionalScheme, PrunableParams,
    SublayerId, SublayerKind, ROPE_THETA,
};
pub use forward::{
    attention_heads, attention_output, ffn_hidden, ffn_output, forward_sublayer, rms_norm, silu,
    Capture, ForwardOutput, Model,
};
pub(crate) use forward::rotate_row;
pub use weights::{
    AttentionWeights, FfnWeights, LayerWeights, PrunedSublayer, SublayerWeights, TensorView,
    TransformerWeights,
};
