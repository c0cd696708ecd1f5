//! Point-wise segmentation network with multi-view context pooling.
//!
//! Every layer is a shared per-point affine map. Data flow for a batch of
//! `N` points with `M` context points each:
//!
//! ```text
//! context N×M×6 ─ relu(6→64) ─ relu(64→200) ─ max over M ─┐
//! inputs  N×6 ──────────────────────────────────────────── ⊕ ─ relu(→200) = trunk
//! trunk ─ 200→50 ─ L2 normalize ─────────────────── embedding (N×50)
//! trunk ─ max over N ─ broadcast ─ ⊕ embedding ─ 250→13 ─ logits
//! ```
//!
//! Without context pooling the trunk consumes the 6 input columns only.

mod adam;
mod batch;
mod checkpoint;
mod loss;
mod model;
mod params;
mod train;

pub use adam::{adam_step, AdamState};
pub use batch::{Batch, ContextBuilder, ContextTensor};
pub use checkpoint::Checkpoint;
pub use loss::{
    loss_classification, loss_triplet_semihard, semihard_triplets, softmax, triplet_semihard_grad,
    Triplet,
};
pub use model::{
    backward, context_features, evaluate_loss, forward, forward_pooled, mcp_forward, pool_context,
    Forward, LossConfig, LossValues,
};
pub use params::{trunk_input_dim, ContextLayers, Dense, Gradients, NetworkParams};
pub use train::{loss_history_csv, train, EpochStats, TrainConfig, TrainState};

pub use crate::pointcloud::NUM_CLASSES;

/// Columns of a normalized point: x, y, z, r, g, b.
pub const INPUT_DIM: usize = 6;
pub const CONTEXT_HIDDEN: usize = 64;
pub const FEATURE_DIM: usize = 200;
pub const EMBED_DIM: usize = 50;
