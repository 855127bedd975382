//! Point-cloud file formats.
//!
//! * CSV with header `x,y[,z],f1..fn[,label]`.
//! * Little-endian binary: magic `PCLD`, `u32` version, `u32 |P|`, `u32 d`,
//!   `u32 n`, then positions and features as `f32`. Version 2 appends one
//!   `u32` label per point.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BINARY_MAGIC: &[u8; 4] = b"PCLD";
pub const BINARY_VERSION: u32 = 1;
pub const BINARY_VERSION_LABELED: u32 = 2;

/// A point cloud with optional per-point integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub labels: Option<Vec<usize>>,
}

const AXES: [&str; 3] = ["x", "y", "z"];

pub fn read_csv<R: Read>(reader: R) -> Result<LabeledCloud> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let names: Vec<&str> = header.iter().collect();
    let dim = names
        .iter()
        .zip(AXES)
        .take_while(|(n, a)| n.eq_ignore_ascii_case(a))
        .count();
    if dim < 2 {
        return Err(Error::Format(format!("CSV header must start with x,y: {names:?}")));
    }
    let has_label = names.last().is_some_and(|n| n.eq_ignore_ascii_case("label"));
    let n_features = names.len() - dim - usize::from(has_label);
    for (i, name) in names[dim..dim + n_features].iter().enumerate() {
        if *name != format!("f{}", i + 1) {
            return Err(Error::Format(format!("unexpected CSV column {name:?}")));
        }
    }

    let mut positions = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        if record.len() != names.len() {
            return Err(Error::Format(format!("row {} has {} fields", line + 1, record.len())));
        }
        let parse = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("row {} column {}: {e}", line + 1, i + 1)))
        };
        for i in 0..dim {
            positions.push(parse(i)?);
        }
        for i in dim..dim + n_features {
            features.push(parse(i)?);
        }
        if has_label {
            let raw = &record[names.len() - 1];
            labels.push(
                raw.parse::<usize>()
                    .map_err(|e| Error::Format(format!("row {} label {raw:?}: {e}", line + 1)))?,
            );
        }
    }
    let rows = positions.len() / dim;
    let (features, n) = if n_features == 0 {
        (vec![1.0; rows], 1)
    } else {
        (features, n_features)
    };
    let cloud = PointCloud::new(
        Tensor::new(&[rows, dim], positions)?,
        Tensor::new(&[rows, n], features)?,
    )?;
    Ok(LabeledCloud {
        cloud,
        labels: has_label.then_some(labels),
    })
}

pub fn write_csv<W: Write>(writer: W, cloud: &PointCloud, labels: Option<&[usize]>) -> Result<()> {
    if cloud.dim() > 3 {
        return Err(Error::Unsupported(format!("CSV export of {}-d points", cloud.dim())));
    }
    check_labels(cloud, labels)?;
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = AXES[..cloud.dim()].iter().map(|s| s.to_string()).collect();
    header.extend((1..=cloud.feature_dim()).map(|i| format!("f{i}")));
    if labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..cloud.len() {
        row.clear();
        row.extend(cloud.position(i).iter().map(|v| v.to_string()));
        row.extend(cloud.feature(i).iter().map(|v| v.to_string()));
        if let Some(l) = labels {
            row.push(l[i].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut reader: R) -> Result<LabeledCloud> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Format("missing PCLD magic".into()));
    }
    let version = read_u32(&mut reader)?;
    if version != BINARY_VERSION && version != BINARY_VERSION_LABELED {
        return Err(Error::Version {
            expected: BINARY_VERSION_LABELED,
            found: version,
        });
    }
    let count = read_u32(&mut reader)? as usize;
    let dim = read_u32(&mut reader)? as usize;
    let n = read_u32(&mut reader)? as usize;
    let positions = read_f32s(&mut reader, count * dim)?;
    let features = read_f32s(&mut reader, count * n)?;
    let labels = if version == BINARY_VERSION_LABELED {
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            labels.push(read_u32(&mut reader)? as usize);
        }
        Some(labels)
    } else {
        None
    };
    let cloud = PointCloud::new(
        Tensor::new(&[count, dim], positions)?,
        Tensor::new(&[count, n], features)?,
    )?;
    Ok(LabeledCloud { cloud, labels })
}

pub fn write_binary<W: Write>(mut writer: W, cloud: &PointCloud, labels: Option<&[usize]>) -> Result<()> {
    check_labels(cloud, labels)?;
    let version = if labels.is_some() {
        BINARY_VERSION_LABELED
    } else {
        BINARY_VERSION
    };
    writer.write_all(BINARY_MAGIC)?;
    for v in [
        version,
        cloud.len() as u32,
        cloud.dim() as u32,
        cloud.feature_dim() as u32,
    ] {
        writer.write_all(&v.to_le_bytes())?;
    }
    for v in cloud.positions().data().iter().chain(cloud.features().data()) {
        writer.write_all(&(*v as f32).to_le_bytes())?;
    }
    if let Some(labels) = labels {
        for &l in labels {
            writer.write_all(&(l as u32).to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn is_binary_path(path: &Path) -> bool {
    !path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Loads a cloud, choosing CSV for `.csv` files and the binary format
/// otherwise.
pub fn load(path: &Path) -> Result<LabeledCloud> {
    let reader = BufReader::new(File::open(path)?);
    if is_binary_path(path) {
        read_binary(reader)
    } else {
        read_csv(reader)
    }
}

pub fn save(path: &Path, cloud: &PointCloud, labels: Option<&[usize]>) -> Result<()> {
    let writer = BufWriter::new(File::create(path)?);
    if is_binary_path(path) {
        write_binary(writer, cloud, labels)
    } else {
        write_csv(writer, cloud, labels)
    }
}

fn check_labels(cloud: &PointCloud, labels: Option<&[usize]>) -> Result<()> {
    match labels {
        Some(l) if l.len() != cloud.len() => Err(Error::Dimension(format!(
            "{} labels for {} points",
            l.len(),
            cloud.len()
        ))),
        _ => Ok(()),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
