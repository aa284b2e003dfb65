//! Semantic segmentation of 3D point clouds with local attention-edge
//! convolutions and point-wise spatial attention.

pub mod attention;
pub mod data;
pub mod error;
pub mod kv;
pub mod lae;
pub mod numerics;
pub mod pipeline;
pub mod search;
pub mod segnet;
pub mod selfcheck;

pub use data::{load_cloud, save_labeled_cloud, CloudFormat, LabelPrediction, PointCloud};
pub use error::{Error, Result};
pub use search::{NeighborGraph, SearchConfig, SearchMethod, SpatialIndex};
pub use segnet::{NetworkConfig, SegNet};
