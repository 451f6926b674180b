//! The multitask segmentation network, its losses, optimizer, training loop
//! and tiled inference.

pub mod adamw;
pub mod checkpoint;
pub mod data;
pub mod layers;
pub mod loss;
pub mod network;
pub mod predict;
pub mod train;

pub use adamw::{AdamW, AdamWConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use data::{CompactSample, TrainingBatch};
pub use loss::{loss_delineation, loss_landcover, LossReport, TaskLoss};
pub use network::{ForwardCache, Gradients, Mode, MtlNetwork, Output, FEATURES, LANDCOVER_CLASSES, SIDE_MULTIPLE};
pub use predict::{predict, predict_planes, Prediction};
pub use train::{compute_gradients, resume, train, train_step, EpochRecord, TrainConfig, TrainOutcome, Trainer};
