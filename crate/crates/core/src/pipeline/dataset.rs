use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Ground truth of one sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// One label for the whole cloud.
    Class(usize),
    /// One label per point.
    Points(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud,
    pub target: Target,
}

impl Sample {
    /// Targets for the rows of a network output computed on
    /// `cloud.select(index_map)`.
    pub fn targets(&self, index_map: &[usize]) -> Vec<usize> {
        match &self.target {
            Target::Class(c) => vec![*c],
            Target::Points(labels) => index_map.iter().map(|&i| labels[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("dataset"));
        }
        for (i, s) in samples.iter().enumerate() {
            let bad = match &s.target {
                Target::Class(c) => (*c >= num_classes).then_some(*c),
                Target::Points(l) => {
                    if l.len() != s.cloud.len() {
                        return Err(Error::Dimension(format!(
                            "sample {i}: {} labels for {} points",
                            l.len(),
                            s.cloud.len()
                        )));
                    }
                    l.iter().copied().find(|&c| c >= num_classes)
                }
            };
            if let Some(c) = bad {
                return Err(Error::Index {
                    what: "label",
                    index: c,
                    bound: num_classes,
                });
            }
        }
        Ok(Self { samples, num_classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples[0].cloud.feature_dim()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].cloud.dim()
    }
}
