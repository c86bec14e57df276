//! From-scratch tensor and neural-network engine: the fixed six-layer
//! architecture, exact backpropagation, Adam, binary cross-entropy, training
//! loops and weight serialization.

pub mod adam;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;
pub mod weights;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use layers::{conv2d_valid, dense_forward, logistic, maxpool2, relu};
pub use loss::bce_loss;
pub use model::{ForwardCache, Gradients, Model, ModelError, ModelSpec};
pub use tensor::{Tensor, TensorError};
pub use train::{evaluate, train, EpochStats, TrainConfig, TrainError, TrainReport};
pub use weights::{load_weights, save_weights, WeightsError};
