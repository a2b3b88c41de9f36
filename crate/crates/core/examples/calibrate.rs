// Scratch calibration binary (not part of the deliverable test suite; run manually).
use std::time::Instant;
use tailq_core::data::{synth_generate, ActionDims, Normalizer, SyntheticSpec};
use tailq_core::models::{QuantileRegressor, TrainConfig};
use tailq_core::quantile::QuantileLevel;

fn main() {
    let spec = SyntheticSpec::default();
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200_000);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let alpha: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let train = synth_generate(&spec, n, 1).unwrap();
    let test = synth_generate(&spec, 20_000, 2).unwrap();
    let norm = Normalizer::fit(&train, ActionDims::One).unwrap();
    let cfg = TrainConfig {
        epochs,
        batch_size: 256,
        learning_rate: 2e-3,
        lr_decay: 0.93,
        ..TrainConfig::default()
    };
    let level = QuantileLevel::new(alpha).unwrap();
    let t0 = Instant::now();
    let (model, report) = QuantileRegressor::train(&train, level, &cfg, &norm, 42, None).unwrap();
    let train_time = t0.elapsed();
    let mut mae = 0.0;
    for s in &test {
        let q_true = spec.true_quantile(&s.state, level).unwrap();
        let q_pred = model.predict(&s.state).unwrap();
        mae += (q_pred - q_true).abs();
    }
    mae /= test.len() as f64;
    println!(
        "n={n} epochs={epochs} alpha={alpha}: train {:.1}s ({:.2} s/epoch), MAE {:.4}, loss {:.5} -> {:.5}",
        train_time.as_secs_f64(),
        train_time.as_secs_f64() / epochs as f64,
        mae,
        report.initial_train_loss,
        report.final_train_loss
    );
}
