//! MNIST digits as 2-d point clouds.
//!
//! IDX files are big-endian: magic `0x00000803` followed by count, rows and
//! columns for images, magic `0x00000801` and count for labels.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample, Target};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

/// How pixels become points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MnistMode {
    /// Every pixel is a point carrying its gray level in `[0, 1]`.
    GrayLevels,
    /// Only ink pixels (intensity > 0) are points, each with feature 1.
    BlackPoints,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_names(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }
}

fn read_be_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

fn check_magic(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!(
            "IDX magic {found:#010x}, expected {expected:#010x}"
        )));
    }
    Ok(())
}

/// Reads up to `limit` images.
pub fn read_idx_images<R: Read>(mut r: R, limit: Option<usize>) -> Result<IdxImages> {
    check_magic(read_be_u32(&mut r)?, IMAGES_MAGIC)?;
    let count = read_be_u32(&mut r)? as usize;
    let rows = read_be_u32(&mut r)? as usize;
    let cols = read_be_u32(&mut r)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format("IDX images with an empty side".into()));
    }
    let count = limit.map_or(count, |l| l.min(count));
    let mut pixels = vec![0u8; count * rows * cols];
    r.read_exact(&mut pixels)?;
    Ok(IdxImages { rows, cols, pixels })
}

pub fn read_idx_labels<R: Read>(mut r: R, limit: Option<usize>) -> Result<Vec<u8>> {
    check_magic(read_be_u32(&mut r)?, LABELS_MAGIC)?;
    let count = read_be_u32(&mut r)? as usize;
    let count = limit.map_or(count, |l| l.min(count));
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels)?;
    Ok(labels)
}

/// Converts a grayscale image (row-major, `rows × cols`) to a point cloud
/// with positions `(col, row)` scaled to `[0, 1]²`.
pub fn mnist_to_pointcloud(image: &[u8], rows: usize, cols: usize, mode: MnistMode) -> Result<PointCloud> {
    if image.len() != rows * cols || rows < 2 || cols < 2 {
        return Err(Error::Dimension(format!(
            "{} pixels for a {rows}x{cols} image",
            image.len()
        )));
    }
    let (sx, sy) = (1.0 / (cols - 1) as f64, 1.0 / (rows - 1) as f64);
    let mut positions = Vec::new();
    let mut features = Vec::new();
    for (i, &v) in image.iter().enumerate() {
        let keep = match mode {
            MnistMode::GrayLevels => true,
            MnistMode::BlackPoints => v > 0,
        };
        if keep {
            positions.push((i % cols) as f64 * sx);
            positions.push((i / cols) as f64 * sy);
            features.push(match mode {
                MnistMode::GrayLevels => f64::from(v) / 255.0,
                MnistMode::BlackPoints => 1.0,
            });
        }
    }
    if features.is_empty() {
        return Err(Error::InsufficientPoints("blank image has no ink pixels".into()));
    }
    let n = features.len();
    PointCloud::new(Tensor::new(&[n, 2], positions)?, Tensor::new(&[n, 1], features)?)
}

/// Loads the first `limit` digits of a split from `dir`. Blank images are
/// skipped in black-points mode.
pub fn load_mnist(dir: &Path, split: Split, limit: Option<usize>, mode: MnistMode) -> Result<Dataset> {
    let (img_name, lbl_name) = split.file_names();
    let images = read_idx_images(BufReader::new(File::open(dir.join(img_name))?), limit)?;
    let labels = read_idx_labels(BufReader::new(File::open(dir.join(lbl_name))?), limit)?;
    if labels.len() != images.len() {
        return Err(Error::Format(format!(
            "{} labels for {} images",
            labels.len(),
            images.len()
        )));
    }
    let mut samples = Vec::with_capacity(images.len());
    for (i, &label) in labels.iter().enumerate() {
        match mnist_to_pointcloud(images.image(i), images.rows, images.cols, mode) {
            Ok(cloud) => samples.push(Sample {
                cloud,
                target: Target::Class(label as usize),
            }),
            Err(Error::InsufficientPoints(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Dataset::new(samples, NUM_CLASSES)
}
