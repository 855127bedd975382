//! Point clouds, exact k-NN search, output-point sampling and neighborhood
//! normalisation.

mod cloud;
pub mod io;
pub mod kdtree;
pub mod sampling;

pub use cloud::PointCloud;
pub use kdtree::{KdTree, NeighborIndices};
pub use sampling::{normalize_to_unit_ball, sample_output_points, sample_output_points_from};
