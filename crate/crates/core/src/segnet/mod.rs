//! The U-shaped segmentation network: four LAE-Conv encoder layers with
//! farthest-point downsampling, three decoder layers with inverse-distance
//! upsampling and skip fusion, optional spatial attention after any layer,
//! and a linear classification head.

mod config;
mod geometry;
mod model;
mod train;

pub use config::{parse_psa_layers, NetworkConfig, DEFAULT_SCENE_SCALE, NUM_LAYERS};
pub use geometry::{interpolation_weights, BlockGeometry, Interpolation, INTERP_EPS};
pub use model::{feature_propagation, network_forward, set_abstraction, ForwardPass, SegNet};
pub use train::{batch_loss_and_grads, block_loss_and_grads, inverse_frequency_weights, train_step, TrainingBlock};
