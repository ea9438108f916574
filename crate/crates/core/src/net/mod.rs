//! Layers, the model, training, gradient checking and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use model::{argmax_rows, encode, EncodedCloud, Encoding, Model, ModelConfig, Task};
pub use train::{evaluate, train, EvalReport, TrainConfig, Trainer};
