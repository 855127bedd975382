#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use convpoint::geometry::io;
use convpoint::pipeline::scene::synthetic_slab_scene;
use convpoint::Rng;
use rand::{Rng as _, SeedableRng};

pub fn convpoint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convpoint"))
        .args(args)
        .env_remove("CONVPOINT_DATA_ROOT")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn idx(path: &Path, magic: u32, dims: &[u32], body: &[u8]) {
    let mut bytes = magic.to_be_bytes().to_vec();
    for d in dims {
        bytes.extend(d.to_be_bytes());
    }
    bytes.extend_from_slice(body);
    std::fs::write(path, bytes).unwrap();
}

/// Writes a tiny MNIST-format dataset: digit `c` is a bar on row `4 + 2c`.
pub fn fake_mnist(dir: &Path, train: usize, test: usize) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = Rng::seed_from_u64(0);
    for (images, labels, n) in [
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", train),
        ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", test),
    ] {
        let mut pixels = vec![0u8; n * 784];
        let mut tags = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 10;
            let row = 4 + 2 * c;
            for col in 6..22 {
                pixels[i * 784 + row * 28 + col] = rng.gen_range(128..=255);
            }
            tags.push(c as u8);
        }
        idx(&dir.join(images), 0x803, &[n as u32, 28, 28], &pixels);
        idx(&dir.join(labels), 0x801, &[n as u32], &tags);
    }
}

/// Labeled two-slab scene over `[0, extent]²`.
pub fn slab_scene(path: &Path, extent: f64, points_per_slab: usize, seed: u64) {
    let (cloud, labels) = synthetic_slab_scene(extent, points_per_slab, &mut Rng::seed_from_u64(seed)).unwrap();
    io::save(path, &cloud, Some(&labels)).unwrap();
}

pub fn write(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

pub fn classify_config(root: &Path) -> PathBuf {
    write(
        &root.join("classify.toml"),
        &format!(
            r#"
task = "classify"
seed = 1

[data]
train = "{}"
train_limit = 20
test_limit = 10

[training]
epochs = 2
batch_size = 4
learning_rate = 0.001
calibration_samples = 4
"#,
            root.join("mnist").display()
        ),
    )
}

pub fn segment_config(root: &Path, scene: &Path) -> PathBuf {
    write(
        &root.join("segment.toml"),
        &format!(
            r#"
task = "segment"
seed = 3

[data]
train = "{}"
columns = 8
num_classes = 2

[training]
epochs = 1
batch_size = 4
learning_rate = 0.001
calibration_samples = 4

[scene]
column_width = 1.0
pixel_size = 0.5
column_points = 300
"#,
            scene.display()
        ),
    )
}
