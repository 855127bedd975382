//! Trains the desk-scale classifier on an MNIST subset.
//!
//! `cargo run --release -p convpoint --example mnist_desk -- <mnist dir> [gray|black] [train] [test] [epochs]`

use std::path::PathBuf;
use std::time::Instant;

use convpoint::networks::{ClassificationConfig, ClassificationNet};
use convpoint::pipeline::mnist::{load_mnist, MnistMode, Split};
use convpoint::pipeline::{evaluate_samplings, train_with, EvalConfig, TrainConfig};
use convpoint::Rng;
use rand::SeedableRng;

fn main() -> convpoint::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let dir = PathBuf::from(args.get(1).map_or("data/mnist", String::as_str));
    let mode = match args.get(2).map(String::as_str) {
        Some("black") => MnistMode::BlackPoints,
        _ => MnistMode::GrayLevels,
    };
    let n_train = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let n_test = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(2_000);
    let epochs = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(5);

    let train_set = load_mnist(&dir, Split::Train, Some(n_train), mode)?;
    let test_set = load_mnist(&dir, Split::Test, Some(n_test), mode)?;
    let mut net = ClassificationNet::new(ClassificationConfig::desk(10, 1, 2), &mut Rng::seed_from_u64(1))?;
    let config = TrainConfig {
        epochs,
        batch_size: 8,
        lr_decay: 0.8,
        calibration_samples: 64,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    train_with(&mut net, &train_set, Some(&test_set), &config, |log| {
        eprintln!(
            "epoch {} loss {:.4} train {:.4} test {:.4} ({:.0}s)",
            log.epoch,
            log.loss,
            log.train_accuracy,
            log.accuracy(),
            start.elapsed().as_secs_f64()
        );
    })?;
    let m = evaluate_samplings(&net, &test_set, &[1, 4, 16], &EvalConfig::default())?;
    println!(
        "{mode:?}: OA {:.4} / {:.4} / {:.4} at 1 / 4 / 16 samplings ({:.0}s)",
        m[0].overall_accuracy,
        m[1].overall_accuracy,
        m[2].overall_accuracy,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
