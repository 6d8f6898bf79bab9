//! Encoder/decoder registration network with hand-written backpropagation.
//!
//! The network sees a moving (XCT) and fixed (CAD) patch stacked as two channels
//! and predicts a three-channel displacement; a trilinear spatial transformer
//! produces the moved patch. Everything is generic over [`Real`](crate::real::Real)
//! so gradient checks can run in `f64`.

mod checkpoint;
mod data;
mod infer;
pub mod layers;
pub mod loss;
mod model;
mod optim;
mod train;

pub use checkpoint::{
    checkpoint_load, checkpoint_load_as, checkpoint_save, decode as decode_checkpoint, encode as encode_checkpoint,
};
pub use data::{sample_patch_refs, sample_training_batch, InMemoryPairs, ManifestPairs, PairSource, PatchRef};
pub use infer::sliding_register;
pub use model::{
    evaluate_loss, loss_and_grad, model_backward, model_forward, ModelConfig, ModelParams, Prediction, Tape,
};
pub use optim::{Adam, PlateauScheduler};
pub use train::{train, train_on, EpochLog, TrainConfig, TrainHistory};
