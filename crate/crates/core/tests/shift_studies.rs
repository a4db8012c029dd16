//! Seed-averaged studies of the synthetic shift generators against a
//! trained model: a null shift should cost nothing, and corruption severity
//! should degrade frozen-statistics accuracy monotonically.

use ttbn_core::network::{accuracy, arch_with_hidden, train_source, Network, TrainConfig};
use ttbn_core::numerics::Rng;
use ttbn_core::shiftgen::{
    apply_corruption, generate_domains, CorruptionKind, GeneratorSpec, LabeledDataset, ShiftSpec,
};

fn train_on(data: &LabeledDataset, seed: u64) -> Network {
    let arch = arch_with_hidden(data.dim(), &[16], 4);
    let mut net = Network::with_seed(&arch, seed).unwrap();
    let cfg = TrainConfig {
        epochs: 25,
        lr: 0.02,
        batch_size: 32,
        seed,
        frozen_bn: false,
    };
    train_source(&mut net, data, &cfg, None).unwrap();
    net
}

fn eval_accuracy(net: &Network, data: &LabeledDataset) -> f64 {
    let probs = net.eval_forward(&data.features).unwrap();
    accuracy(&probs, &data.labels)
}

#[test]
fn null_shift_costs_less_than_two_points_over_ten_seeds() {
    let mut source_acc = 0.0;
    let mut target_acc = 0.0;
    let seeds = 10;
    for seed in 0..seeds {
        let spec = GeneratorSpec::sample(4, 8, 600, 9000 + seed, 2.5, 0.5, 0.8).unwrap();
        // Identity shift: zero rotation, unit scale, zero offset. The target
        // is a statistically identical fresh draw.
        let domains = generate_domains(&spec, &[ShiftSpec::rotation_degrees(0.0)]).unwrap();
        let net = train_on(&domains[0], seed);
        source_acc += eval_accuracy(&net, &domains[0]);
        target_acc += eval_accuracy(&net, &domains[1]);
    }
    source_acc /= seeds as f64;
    target_acc /= seeds as f64;
    assert!(
        (source_acc - target_acc).abs() < 0.02,
        "null-shift gap too large: source {source_acc:.4} vs target {target_acc:.4}"
    );
}

#[test]
fn corruption_severity_degrades_frozen_eval_monotonically() {
    let seeds = 10;
    let mut mean_acc = [0.0f64; 6]; // index 0 = clean, 1..=5 severities
    for seed in 0..seeds {
        let spec = GeneratorSpec::sample(4, 8, 600, 7000 + seed, 2.5, 0.5, 0.8).unwrap();
        let domains = generate_domains(&spec, &[ShiftSpec::rotation_degrees(0.0)]).unwrap();
        let net = train_on(&domains[0], seed);
        let fresh = &domains[1]; // held-out clean draw
        mean_acc[0] += eval_accuracy(&net, fresh);
        for severity in 1..=5u8 {
            let corrupted = apply_corruption(
                fresh,
                CorruptionKind::GaussianNoise,
                severity,
                Rng::new(40_000 + seed * 10 + severity as u64),
            )
            .unwrap();
            mean_acc[severity as usize] += eval_accuracy(&net, &corrupted);
        }
    }
    for acc in &mut mean_acc {
        *acc /= seeds as f64;
    }
    for s in 0..5 {
        assert!(
            mean_acc[s + 1] <= mean_acc[s] + 0.002,
            "severity {} mean accuracy {:.4} rose above severity {} accuracy {:.4} (all: {mean_acc:?})",
            s + 1,
            mean_acc[s + 1],
            s,
            mean_acc[s]
        );
    }
    assert!(
        mean_acc[5] < mean_acc[0] - 0.02,
        "severity 5 should cost visibly more than clean: {mean_acc:?}"
    );
}
