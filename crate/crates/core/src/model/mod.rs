//! The heterogeneous subgraph Transformer and its optimizer.

pub mod adam;
pub mod checkpoint;
pub mod encoder;
pub mod linalg;
pub mod objective;
pub mod params;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use encoder::{
    backward, compose_embeddings, encode, interaction_score, represent, score_input, sigmoid,
    subgraph_representation, ActivationTrace, EncoderInput, Representation,
};
pub use linalg::{Float, Mat};
pub use objective::{
    batch_loss, example_loss_and_grad, example_loss_parts, finite_difference_check, loss_and_gradients,
    loss_parts_and_gradients, Example, LossParts, MepTarget, MnpTarget, Term,
};
pub use params::{Gradients, ModelDims, ModelParams};
