//! Column-wise semantic segmentation of large scenes.
//!
//! The horizontal footprint is rasterised into an occupancy grid; around
//! every occupied cell a vertically unbounded square column is cut out,
//! resampled to a fixed size and segmented. Scores are summed per scene
//! point over all columns and samplings, and points that were never
//! selected take the label of their nearest scored neighbor.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample, Target};
use super::select::{column_indices, fixed_size_select, occupancy_grid_centers, propagate_labels_nn};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::geometry::PointCloud;
use crate::networks::Model;
use crate::nn::argmax_rows;
use crate::tensor::Tensor;
use crate::{derive_rng, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Side of the square column footprint.
    pub column_width: f64,
    /// Occupancy grid cell size.
    pub pixel_size: f64,
    /// Points fed to the network per column.
    pub column_points: usize,
    pub samplings: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            column_width: 2.0,
            pixel_size: 0.1,
            column_points: 8192,
            samplings: 1,
            seed: 0,
            execution: Execution::Sequential,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenePrediction {
    pub labels: Vec<usize>,
    /// Whether each point received network scores (as opposed to a
    /// propagated label).
    pub scored: Vec<bool>,
    pub columns: usize,
}

/// Segments `scene` column by column.
pub fn predict_scene<M: Model + ?Sized>(model: &M, scene: &PointCloud, config: &SceneConfig) -> Result<ScenePrediction> {
    if config.samplings == 0 || config.column_points == 0 {
        return Err(Error::Parameter("samplings and column points must be positive".into()));
    }
    let centers = occupancy_grid_centers(scene, config.pixel_size)?;
    let classes = model.num_classes();
    let per_column = map_indexed(config.execution, centers.len(), |c| -> Result<Option<(Vec<usize>, Tensor)>> {
        let idx = column_indices(scene, centers[c], config.column_width)?;
        if idx.is_empty() {
            return Ok(None);
        }
        let column = scene.select(&idx)?;
        let mut rng = derive_rng(config.seed, c as u64);
        let mut touched = Vec::new();
        let mut scores = Vec::new();
        for _ in 0..config.samplings {
            let (input, map) = fixed_size_select(&column, config.column_points, &mut rng)?;
            let logits = model.forward(&input, &mut rng, false)?.0;
            for (r, &m) in map.iter().enumerate() {
                touched.push(idx[m]);
                scores.extend_from_slice(logits.row(r));
            }
        }
        let n = touched.len();
        Ok(Some((touched, Tensor::new(&[n, classes], scores)?)))
    });

    let mut totals = Tensor::zeros(&[scene.len(), classes]);
    let mut scored = vec![false; scene.len()];
    for r in per_column {
        let Some((touched, scores)) = r? else { continue };
        for (row, &p) in touched.iter().enumerate() {
            scored[p] = true;
            for (t, s) in totals.row_mut(p).iter_mut().zip(scores.row(row)) {
                *t += s;
            }
        }
    }
    let seen: Vec<usize> = (0..scene.len()).filter(|&i| scored[i]).collect();
    if seen.is_empty() {
        return Err(Error::EmptyInput("scene"));
    }
    let mut labels = argmax_rows(&totals);
    if seen.len() < scene.len() {
        let seen_labels: Vec<usize> = seen.iter().map(|&i| labels[i]).collect();
        let seen_positions = scene.positions().gather_rows(&seen);
        let propagated = propagate_labels_nn(&seen_positions, &seen_labels, scene.positions())?;
        for i in 0..scene.len() {
            if !scored[i] {
                labels[i] = propagated[i];
            }
        }
    }
    Ok(ScenePrediction {
        labels,
        scored,
        columns: centers.len(),
    })
}

pub const FLOOR: usize = 0;
pub const CEILING: usize = 1;
pub const SLAB_HEIGHT: f64 = 3.0;

/// Two horizontal slabs over `[0, extent]²`: a floor near `z = 0` (class
/// [`FLOOR`]) and a ceiling near `z = 3` (class [`CEILING`]). Each point
/// carries one intensity feature, around 0.3 on the floor and 0.7 on the
/// ceiling.
pub fn synthetic_slab_scene(extent: f64, points_per_slab: usize, rng: &mut Rng) -> Result<(PointCloud, Vec<usize>)> {
    if !(extent > 0.0) || points_per_slab == 0 {
        return Err(Error::Parameter("scene extent and size must be positive".into()));
    }
    let mut positions = Vec::with_capacity(6 * points_per_slab);
    let mut features = Vec::with_capacity(2 * points_per_slab);
    let mut labels = Vec::with_capacity(2 * points_per_slab);
    for (class, z, intensity) in [(FLOOR, 0.0, 0.3), (CEILING, SLAB_HEIGHT, 0.7)] {
        for _ in 0..points_per_slab {
            positions.push(rng.gen_range(0.0..extent));
            positions.push(rng.gen_range(0.0..extent));
            positions.push(z + rng.gen_range(-0.05..0.05));
            features.push(intensity + rng.gen_range(-0.1..0.1));
            labels.push(class);
        }
    }
    let n = labels.len();
    let cloud = PointCloud::new(Tensor::new(&[n, 3], positions)?, Tensor::new(&[n, 1], features)?)?;
    Ok((cloud, labels))
}

/// Training samples cut from a labeled scene: `count` columns at uniformly
/// random centers over the scene's footprint, each resampled to `points`.
pub fn column_dataset(
    scene: &PointCloud,
    labels: &[usize],
    num_classes: usize,
    count: usize,
    width: f64,
    points: usize,
    rng: &mut Rng,
) -> Result<Dataset> {
    if labels.len() != scene.len() {
        return Err(Error::Dimension("one label per scene point is required".into()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for i in 0..scene.len() {
        let p = scene.position(i);
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mut samples = Vec::with_capacity(count);
    let mut attempts = 0;
    while samples.len() < count {
        attempts += 1;
        if attempts > 100 * count.max(1) {
            return Err(Error::InsufficientPoints("scene columns are empty".into()));
        }
        let center = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
        let idx = column_indices(scene, center, width)?;
        if idx.is_empty() {
            continue;
        }
        let column = scene.select(&idx)?;
        let (cloud, map) = fixed_size_select(&column, points, rng)?;
        let target = Target::Points(map.iter().map(|&m| labels[idx[m]]).collect());
        samples.push(Sample { cloud, target });
    }
    Dataset::new(samples, num_classes)
}
