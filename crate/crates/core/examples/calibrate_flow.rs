// Scratch calibration for flow training (run manually).
use std::time::Instant;
use tailq_core::data::{synth_generate, ActionDims, Normalizer, SyntheticSpec};
use tailq_core::models::{flow_train, FlowKind, TrainConfig};
use tailq_core::quantile::QuantileLevel;

fn main() {
    let spec = SyntheticSpec::default();
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200_000);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let kind: FlowKind = std::env::args().nth(3).unwrap_or("aqf-nlsq".into()).parse().unwrap();
    let lr: f64 = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let train = synth_generate(&spec, n, 1).unwrap();
    let test = synth_generate(&spec, 20_000, 2).unwrap();
    let norm = Normalizer::fit(&train, ActionDims::One).unwrap();
    let cfg = TrainConfig {
        epochs,
        batch_size: 256,
        learning_rate: lr,
        lr_decay: 0.93,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (flow, report) = flow_train(&train, kind, ActionDims::One, &cfg, &norm, 42, None).unwrap();
    let train_time = t0.elapsed();
    print!(
        "{kind} n={n} epochs={epochs} lr={lr}: train {:.1}s ({:.2} s/ep), loss {:.4}->{:.4}, minratio {:.4} | MAE:",
        train_time.as_secs_f64(),
        train_time.as_secs_f64() / epochs as f64,
        report.initial_train_loss,
        report.final_train_loss,
        report.epochs.last().unwrap().min_slope_ratio.unwrap()
    );
    for alpha in [0.01, 0.05, 0.5, 0.95, 0.99] {
        let level = QuantileLevel::new(alpha).unwrap();
        let mut mae = 0.0;
        let mut tal_sum = 0.0;
        for s in &test {
            let q_true = spec.true_quantile(&s.state, level).unwrap();
            let q_pred = flow.quantile(&s.state, level, &[]).unwrap();
            mae += (q_pred - q_true).abs();
            tal_sum += tailq_core::quantile::tal(s.action.longitudinal, q_pred, level).unwrap();
        }
        print!(" {alpha}:{:.4}/tal{:.5}", mae / test.len() as f64, tal_sum / test.len() as f64);
    }
    println!();
}
