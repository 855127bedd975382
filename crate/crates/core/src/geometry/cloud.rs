use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Positions (`|P|×d`) with per-point features (`|P|×n`).
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    positions: Tensor,
    features: Tensor,
}

impl PointCloud {
    pub fn new(positions: Tensor, features: Tensor) -> Result<Self> {
        if positions.shape().len() != 2 || features.shape().len() != 2 {
            return Err(Error::Dimension("point cloud tensors must be matrices".into()));
        }
        if positions.rows() != features.rows() {
            return Err(Error::Dimension(format!(
                "{} positions but {} feature rows",
                positions.rows(),
                features.rows()
            )));
        }
        if positions.rows() == 0 {
            return Err(Error::EmptyInput("point cloud"));
        }
        positions.ensure_finite("point positions")?;
        features.ensure_finite("point features")?;
        Ok(Self {
            positions,
            features,
        })
    }

    /// Cloud whose every point carries the single feature `1`.
    pub fn with_unit_features(positions: Tensor) -> Result<Self> {
        let n = positions.rows();
        Self::new(positions, Tensor::filled(&[n, 1], 1.0))
    }

    pub fn len(&self) -> usize {
        self.positions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.positions.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn position(&self, i: usize) -> &[f64] {
        self.positions.row(i)
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Sub-cloud (with repetition allowed) in the order of `indices`.
    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Index {
                what: "point",
                index: bad,
                bound: self.len(),
            });
        }
        PointCloud::new(
            self.positions.gather_rows(indices),
            self.features.gather_rows(indices),
        )
    }

    pub fn into_parts(self) -> (Tensor, Tensor) {
        (self.positions, self.features)
    }
}
