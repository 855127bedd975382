//! Datasets, training, evaluation and scene inference.

mod calibrate;
mod dataset;
mod eval;
mod metrics;
pub mod mnist;
pub mod scene;
mod select;
mod train;

pub use calibrate::calibrate;
pub use dataset::{Dataset, Sample, Target};
pub use eval::{aggregate_spatial_samplings, evaluate, evaluate_samplings, EvalConfig};
pub use metrics::{ConfusionMatrix, Metrics};
pub use select::{
    column_indices, extract_column, fixed_size_select, occupancy_grid_centers, propagate_labels_nn,
};
pub use train::{train, train_with, EpochLog, TrainConfig};
