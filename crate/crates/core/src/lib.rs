//! Rotation-invariant point cloud features and a small two-branch network
//! built on them.
//!
//! Every point is described by the cosines of its angles to three axes picked
//! from the cloud itself, plus its distance from the centroid. Those features,
//! a learned neighborhood aggregation and a normal-based key point response
//! are all unchanged by any rotation of the input.

pub mod cli;
pub mod data;
pub mod error;
pub mod geom;
pub mod graph;
pub mod keypoint;
pub mod net;

pub use error::{Error, Result};
pub use geom::{
    project_cloud, random_rotation, reconstruct_point, select_axes, AxisFrame, PointCloud,
    ProjectionFeature, Rotation,
};
pub use graph::{graph_aggregate_forward, knn_graph, KnnGraph};
pub use keypoint::{estimate_normals, keypoint_response, Fusion};
pub use net::{Encoding, Model, ModelConfig, Task};

/// Derives an independent stream seed from a base seed and an index (splitmix64).
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
