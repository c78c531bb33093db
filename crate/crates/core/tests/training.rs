use actf_core::data::{generate, SyntheticTask, TaskKind};
use actf_core::train::{fit, TrainConfig};
use actf_core::{ModelConfig, ModelParams, SketchMode, Variant};

fn model(seed: u64) -> ModelParams<f64> {
    ModelParams::init(ModelConfig {
        frames: 4,
        height: 16,
        width: 16,
        hidden_channels: 4,
        c_out: 8,
        bilinear_dim: 32,
        reduction_widths: None,
        n_classes: 4,
        variant: Variant::Full,
        sketch_mode: SketchMode::Pair,
        sketch_seed: seed,
        init_seed: seed + 100,
        frame_norm: true,
    })
    .unwrap()
}

#[test]
fn direction4_loss_falls_for_five_epochs() {
    let mut decreasing = 0;
    let mut trace = Vec::new();
    for seed in 1..=5 {
        let task = SyntheticTask {
            kind: TaskKind::Direction4,
            frames: 4,
            height: 16,
            width: 16,
            per_class: 8,
            noise: 0.05,
            seed,
        };
        let train = generate::<f64>(&task).unwrap();
        let mut m = model(seed);
        let cfg = TrainConfig {
            epochs: 5,
            seed,
            ..TrainConfig::default()
        };
        let report = fit(&mut m, &train, None, &cfg).unwrap();
        let losses: Vec<f64> = report.epochs.iter().map(|e| e.loss).collect();
        if losses.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
        trace.push(losses);
    }
    assert!(decreasing >= 4, "{trace:?}");
}

#[test]
fn identical_runs_give_identical_reports() {
    let task = SyntheticTask {
        kind: TaskKind::Direction4,
        frames: 4,
        height: 16,
        width: 16,
        per_class: 3,
        noise: 0.05,
        seed: 9,
    };
    let data = generate::<f64>(&task).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = model(9);
        let report = fit(&mut m, &data, Some(&data), &cfg).unwrap();
        (report.to_tsv(), m)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
}
