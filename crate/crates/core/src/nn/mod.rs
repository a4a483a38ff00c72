//! Dense two-stage synthesis network: layers with exact backward passes,
//! the composite circuit/geometry loss, Adam with step decay, training and
//! checkpoints.

mod checkpoint;
mod layers;
mod model;
mod optim;
mod train;

pub use checkpoint::{
    load_checkpoint, load_init_checkpoint, save_checkpoint, ModelCheckpoint, Provenance,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use layers::{BatchNorm, Layer, LayerStack, Linear, Scalar, StackCache, StackGrads};
pub use model::{loss, Architecture, ForwardPass, Mode, ModelGrads, SynthesisModel};
pub use optim::Adam;
pub use train::{
    evaluate, lr_schedule, predict_geometry, standardize_rows, train, EpochRecord, TrainConfig,
    TrainOutcome,
};
