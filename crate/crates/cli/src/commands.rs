//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use convpoint::checkpoint::{Checkpoint, Precision};
use convpoint::conv::{ConvPoint, OutputPoints, WeightingFunction};
use convpoint::geometry::{io as cloud_io, KdTree};
use convpoint::networks::{Model, Network};
use convpoint::pipeline::mnist::{load_mnist, Split};
use convpoint::pipeline::scene::{column_dataset, predict_scene, ScenePrediction};
use convpoint::pipeline::{evaluate, train_with, ConfusionMatrix, Dataset, EpochLog, Metrics};
use convpoint::{derive_rng, PointCloud, Rng, Tensor};

use crate::config::{resolve_data_path, RunConfig, Task};
use crate::CliError;

/// Generator stream used to cut training columns from a scene.
const COLUMN_STREAM: u64 = 0xC01;

/// Training metadata stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub run: RunConfig,
    pub epochs: Vec<EpochRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub oa: f64,
}

impl From<&EpochLog> for EpochRow {
    fn from(log: &EpochLog) -> Self {
        Self {
            epoch: log.epoch,
            loss: log.loss,
            oa: log.accuracy(),
        }
    }
}

pub struct TrainOutcome {
    pub network: Network,
    pub epochs: Vec<EpochRow>,
}

fn missing(what: &str, path: &Path) -> CliError {
    CliError::Config(format!("{what} not found: {}", path.display()))
}

fn mnist_dir(path: &Path, split: Split) -> Result<PathBuf, CliError> {
    let dir = resolve_data_path(path);
    let (images, labels) = split.file_names();
    if !dir.join(images).is_file() || !dir.join(labels).is_file() {
        return Err(missing("MNIST split", &dir.join(images)));
    }
    Ok(dir)
}

fn load_scene(path: &Path) -> Result<(PointCloud, Option<Vec<usize>>), CliError> {
    let path = resolve_data_path(path);
    if !path.is_file() {
        return Err(missing("scene", &path));
    }
    let labeled = cloud_io::load(&path)?;
    Ok((labeled.cloud, labeled.labels))
}

fn scene_classes(config: &RunConfig, labels: &[usize]) -> usize {
    config
        .data
        .num_classes
        .unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1))
}

/// Training data and optional per-epoch evaluation data.
pub fn load_training_data(config: &RunConfig) -> Result<(Dataset, Option<Dataset>), CliError> {
    let d = &config.data;
    match config.task {
        Task::Classify => {
            let dir = mnist_dir(&d.train, Split::Train)?;
            let test_dir = d.test.as_deref().unwrap_or(&d.train);
            let train = load_mnist(&dir, Split::Train, d.train_limit, d.mnist_mode)?;
            let test = match mnist_dir(test_dir, Split::Test) {
                Ok(t) => Some(load_mnist(&t, Split::Test, d.test_limit, d.mnist_mode)?),
                Err(_) if d.test.is_none() => None,
                Err(e) => return Err(e),
            };
            Ok((train, test))
        }
        Task::Segment => {
            let (scene, labels) = load_scene(&d.train)?;
            let labels = labels.ok_or_else(|| CliError::Config("training scene has no label column".into()))?;
            let classes = scene_classes(config, &labels);
            let mut rng = derive_rng(config.seed, COLUMN_STREAM);
            let s = &config.scene;
            let data = column_dataset(&scene, &labels, classes, d.columns, s.column_width, s.column_points, &mut rng)?;
            Ok((data, None))
        }
    }
}

/// Trains according to `config`, reporting each epoch to `on_epoch`.
pub fn train(config: &RunConfig, mut on_epoch: impl FnMut(&EpochRow)) -> Result<TrainOutcome, CliError> {
    config.validate()?;
    let (train_set, eval_set) = load_training_data(config)?;
    let arch = config.architecture(train_set.feature_dim(), train_set.dim(), train_set.num_classes);
    let mut network = arch.build(&mut Rng::seed_from_u64(config.seed))?;
    let mut epochs = Vec::new();
    train_with(&mut network, &train_set, eval_set.as_ref(), &config.train_config(), |log| {
        let row = EpochRow::from(log);
        on_epoch(&row);
        epochs.push(row);
    })?;
    Ok(TrainOutcome { network, epochs })
}

pub fn write_metrics_csv(path: &Path, rows: &[EpochRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss", "oa"])?;
    for r in rows {
        w.write_record([r.epoch.to_string(), r.loss.to_string(), r.oa.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn checkpoint_for(outcome: &TrainOutcome, config: &RunConfig) -> Result<Checkpoint, CliError> {
    let record = TrainingRecord {
        run: config.clone(),
        epochs: outcome.epochs.clone(),
    };
    let metadata = serde_json::to_value(record).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Checkpoint::from_network(&outcome.network, config.seed, metadata, Precision::F64))
}

/// Full `train` command: nothing is written unless training succeeds.
pub fn cmd_train(config: &RunConfig, checkpoint: &Path, metrics: &Path) -> Result<TrainOutcome, CliError> {
    let outcome = train(config, |row| {
        eprintln!("epoch {} loss {:.5} oa {:.4}", row.epoch, row.loss, row.oa)
    })?;
    checkpoint_for(&outcome, config)?.save(checkpoint)?;
    write_metrics_csv(metrics, &outcome.epochs)?;
    Ok(outcome)
}

/// Loads a checkpoint and the run configuration embedded in it.
pub fn load_checkpoint(path: &Path) -> Result<(Network, Option<RunConfig>), CliError> {
    let ckpt = Checkpoint::load(path)?;
    let run = ckpt
        .metadata
        .get("run")
        .and_then(|v| serde_json::from_value::<RunConfig>(v.clone()).ok());
    Ok((ckpt.to_network()?, run))
}

/// Evaluates `network` on the evaluation data named by `config` (MNIST
/// test split, or the labeled test scene through the column pipeline).
pub fn cmd_eval(network: &Network, config: &RunConfig) -> Result<Metrics, CliError> {
    let d = &config.data;
    match config.task {
        Task::Classify => {
            let dir = mnist_dir(d.test.as_deref().unwrap_or(&d.train), Split::Test)?;
            let data = load_mnist(&dir, Split::Test, d.test_limit, d.mnist_mode)?;
            Ok(evaluate(network, &data, &config.eval_config())?)
        }
        Task::Segment => {
            let (scene, labels) = load_scene(d.test.as_deref().unwrap_or(&d.train))?;
            let labels = labels.ok_or_else(|| CliError::Config("evaluation scene has no label column".into()))?;
            let prediction = predict_scene(network, &scene, &config.scene_config())?;
            scene_metrics(&labels, &prediction.labels, network.num_classes())
        }
    }
}

pub fn scene_metrics(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Metrics, CliError> {
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= classes {
            return Err(CliError::Config(format!("label {t} outside the model's {classes} classes")));
        }
        cm.add(t, p);
    }
    Ok(cm.metrics())
}

pub fn write_metrics_report<W: Write>(out: W, samplings: usize, m: &Metrics) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["samplings", "oa", "aa", "miou"])?;
    w.write_record([
        samplings.to_string(),
        m.overall_accuracy.to_string(),
        m.average_accuracy.to_string(),
        m.mean_iou.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

pub struct SceneReport {
    pub prediction: ScenePrediction,
    /// Per-point accuracy when the scene file carries labels.
    pub accuracy: Option<f64>,
}

/// Segments the scene at `scene_path` and writes it with a predicted label
/// column to `out`.
pub fn cmd_predict_scene(network: &Network, config: &RunConfig, scene_path: &Path, out: &Path) -> Result<SceneReport, CliError> {
    if !network.is_pointwise() {
        return Err(CliError::Config("scene prediction needs a segmentation checkpoint".into()));
    }
    let (scene, truth) = load_scene(scene_path)?;
    let prediction = predict_scene(network, &scene, &config.scene_config())?;
    let accuracy = truth.map(|t| {
        let hits = t.iter().zip(&prediction.labels).filter(|(a, b)| a == b).count();
        hits as f64 / t.len() as f64
    });
    let writer = BufWriter::new(File::create(out)?);
    cloud_io::write_csv(writer, &scene, Some(&prediction.labels))?;
    Ok(SceneReport { prediction, accuracy })
}

/// One `x,y,value` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub name: String,
    pub rows: Vec<[f64; 3]>,
}

fn axis(resolution: usize) -> Vec<f64> {
    if resolution == 1 {
        return vec![0.0];
    }
    (0..resolution)
        .map(|a| -1.0 + 2.0 * a as f64 / (resolution - 1) as f64)
        .collect()
}

/// Weighting responses of kernel `elements` and composed filters of output
/// `channels` (for input feature `feature`) over a grid on `[-1, 1]²`.
///
/// A probe point `p` yields `φ(p − c_1, …, p − c_|K|)`; filter `t` at `p` is
/// `Σ_i w[i, feature, t]·φ_i(p)`.
pub fn filter_grids(
    conv: &ConvPoint,
    resolution: usize,
    elements: &[usize],
    channels: &[usize],
    feature: usize,
) -> Result<Vec<Grid>, CliError> {
    if conv.dim() != 2 {
        return Err(CliError::Core(convpoint::Error::Unsupported(format!(
            "filters can only be drawn for 2-d kernels, layer has d = {}",
            conv.dim()
        ))));
    }
    if resolution == 0 {
        return Err(CliError::Config("resolution must be >= 1".into()));
    }
    let (k, n, c) = (conv.kernel_size(), conv.in_channels(), conv.out_channels());
    if let Some(&e) = elements.iter().find(|&&e| e >= k) {
        return Err(CliError::Config(format!("kernel element {e} out of range (|K| = {k})")));
    }
    if let Some(&t) = channels.iter().find(|&&t| t >= c) {
        return Err(CliError::Config(format!("output channel {t} out of range (C = {c})")));
    }
    if feature >= n {
        return Err(CliError::Config(format!("input feature {feature} out of range (n = {n})")));
    }

    let centers = conv.kernel.positions.value.data();
    let ax = axis(resolution);
    let probes: Vec<[f64; 2]> = ax.iter().flat_map(|&y| ax.iter().map(move |&x| [x, y])).collect();
    let mut relative = Vec::with_capacity(probes.len() * k * 2);
    for p in &probes {
        for i in 0..k {
            relative.push(p[0] - centers[2 * i]);
            relative.push(p[1] - centers[2 * i + 1]);
        }
    }
    let phi = conv
        .weighting
        .evaluate(&Tensor::new(&[probes.len(), k * 2], relative)?)?;
    let w = conv.kernel.weights.value.data();

    let mut grids = Vec::new();
    for &e in elements {
        let rows = probes
            .iter()
            .enumerate()
            .map(|(r, p)| [p[0], p[1], phi.data()[r * k + e]])
            .collect();
        grids.push(Grid {
            name: format!("phi_element{e}"),
            rows,
        });
    }
    for &t in channels {
        let rows = probes
            .iter()
            .enumerate()
            .map(|(r, p)| {
                let v = (0..k).map(|i| w[(i * n + feature) * c + t] * phi.data()[r * k + i]).sum();
                [p[0], p[1], v]
            })
            .collect();
        grids.push(Grid {
            name: format!("filter_channel{t}"),
            rows,
        });
    }
    Ok(grids)
}

/// Writes each grid to `<out_dir>/layer<l>_<name>.csv`.
pub fn write_grids(out_dir: &Path, layer: usize, grids: &[Grid]) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::with_capacity(grids.len());
    for g in grids {
        let path = out_dir.join(format!("layer{layer}_{}.csv", g.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["x", "y", "value"])?;
        for r in &g.rows {
            w.write_record(r.iter().map(f64::to_string))?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn cmd_dump_filters(
    network: &Network,
    layer: usize,
    resolution: usize,
    elements: &[usize],
    channels: &[usize],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let convs = network.conv_layers();
    let conv = convs
        .get(layer)
        .ok_or_else(|| CliError::Config(format!("layer {layer} out of range ({} layers)", convs.len())))?;
    let grids = filter_grids(conv, resolution, elements, channels, 0)?;
    write_grids(out_dir, layer, &grids)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub points: usize,
    pub neighbors: usize,
    pub knn_seconds: f64,
    pub conv_seconds: f64,
}

impl BenchRow {
    pub fn knn_points_per_second(&self) -> f64 {
        self.points as f64 / self.knn_seconds
    }

    pub fn conv_points_per_second(&self) -> f64 {
        self.points as f64 / self.conv_seconds
    }
}

/// Times a kd-tree build plus one k-NN query per point, and a convolution
/// (8 → 16 channels, |K| = 16) evaluated at every point, for each
/// `(|P|, k)` pair on uniform random 3-d clouds.
pub fn cmd_bench(points: &[usize], neighbors: &[usize], seed: u64) -> Result<Vec<BenchRow>, CliError> {
    let mut rng = Rng::seed_from_u64(seed);
    let conv = ConvPoint::new(8, 16, 16, 3, &mut rng)?;
    let mut rows = Vec::with_capacity(points.len() * neighbors.len());
    for &p in points {
        if p == 0 {
            return Err(CliError::Config("point counts must be positive".into()));
        }
        let positions = Tensor::new(&[p, 3], (0..p * 3).map(|_| rng.gen_range(0.0..1.0)).collect())?;
        let features = Tensor::new(&[p, 8], (0..p * 8).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        for &k in neighbors {
            if k == 0 {
                return Err(CliError::Config("neighborhood sizes must be positive".into()));
            }
            let start = Instant::now();
            let tree = KdTree::build(&positions)?;
            std::hint::black_box(tree.knn_batch(&positions, k)?);
            let knn_seconds = start.elapsed().as_secs_f64();

            let start = Instant::now();
            std::hint::black_box(conv.apply(&positions, &features, OutputPoints::All, k, &mut rng)?);
            let conv_seconds = start.elapsed().as_secs_f64();
            rows.push(BenchRow {
                points: p,
                neighbors: k,
                knn_seconds,
                conv_seconds,
            });
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(out: W, rows: &[BenchRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "points",
        "k",
        "knn_seconds",
        "knn_points_per_second",
        "conv_seconds",
        "conv_points_per_second",
    ])?;
    for r in rows {
        w.write_record([
            r.points.to_string(),
            r.neighbors.to_string(),
            r.knn_seconds.to_string(),
            r.knn_points_per_second().to_string(),
            r.conv_seconds.to_string(),
            r.conv_points_per_second().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use convpoint::conv::phi_weights;

    #[test]
    fn grid_matches_direct_weighting_call() {
        let conv = ConvPoint::new(1, 4, 6, 2, &mut Rng::seed_from_u64(5)).unwrap();
        let grids = filter_grids(&conv, 3, &[0, 5], &[2], 0).unwrap();
        assert_eq!(grids.len(), 3);
        assert!(grids.iter().all(|g| g.rows.len() == 9));
        let c = conv.kernel.positions.value.data();
        for (r, row) in grids[1].rows.iter().enumerate() {
            let rel: Vec<f64> = (0..6)
                .flat_map(|i| [row[0] - c[2 * i], row[1] - c[2 * i + 1]])
                .collect();
            let phi = phi_weights(&Tensor::new(&[1, 6, 2], rel).unwrap(), &conv.weighting).unwrap();
            assert_eq!(row[2], phi.data()[5], "probe {r}");
            let w = conv.kernel.weights.value.data();
            let filter: f64 = (0..6).map(|i| w[i * 4 + 2] * phi.data()[i]).sum();
            assert!((grids[2].rows[r][2] - filter).abs() <= 1e-12);
        }
    }

    #[test]
    fn three_d_kernels_are_unsupported() {
        let conv = ConvPoint::new(1, 4, 6, 3, &mut Rng::seed_from_u64(5)).unwrap();
        let err = filter_grids(&conv, 3, &[0], &[], 0).unwrap_err();
        assert!(matches!(err, CliError::Core(convpoint::Error::Unsupported(_))));
    }

    #[test]
    fn bench_has_one_row_per_pair() {
        let rows = cmd_bench(&[64, 128], &[4, 8, 16], 1).unwrap();
        assert_eq!(rows.len(), 6);
        let mut out = Vec::new();
        write_bench_csv(&mut out, &rows).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 7);
    }
}
