//! Feed-forward network substrate: model, datasets, fine-tuning, evaluation.

pub mod data;
pub mod model;
pub mod synthetic;
pub mod train;

pub use data::{load_dataset, DataFormat, Dataset, Role, Sample};
pub use model::{Activation, Architecture, ForwardPass, Layer, LayerSpec, Model, ParamLoc};
pub use synthetic::synthetic_digits;
pub use train::{evaluate, mean_loss, personalize, TrainConfig};
