use convmambanet::model::ModelConfig;
use convmambanet::train::{bench_epoch, synth_dataset, train, SynthSpec, TrainConfig, TrainRun};

fn overfit_losses(seed: u64) -> Vec<f64> {
    let config = ModelConfig::reduced();
    let ds = synth_dataset(
        &SynthSpec {
            channels: config.in_channels,
            window_len: config.window_len,
            ..SynthSpec::default()
        },
        seed,
    );
    let idx: Vec<usize> = (0..ds.len()).collect();
    let run = TrainRun {
        model: config,
        train: TrainConfig {
            epochs: 120,
            seed,
            ..TrainConfig::default()
        },
        checkpoint: None,
    };
    let (_, log) = train(&run, &ds, &idx, &[], |_| {}).unwrap();
    log.rows.iter().map(|r| r.train_loss).collect()
}

#[test]
fn smoothed_loss_rarely_rises_after_epoch_twenty() {
    for seed in [0, 1] {
        let losses = overfit_losses(seed);
        let smooth: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        // smooth[i] averages epochs i+1..=i+5
        let tail = &smooth[20..];
        let rises = tail.windows(2).filter(|w| w[1] > w[0]).count();
        let allowed = (0.05 * (tail.len() - 1) as f64).floor() as usize;
        assert!(rises <= allowed, "seed {seed}: {rises} of {} smoothed epochs rose", tail.len() - 1);
    }
}

#[test]
fn doubling_the_dataset_doubles_epoch_time() {
    let config = ModelConfig::reduced();
    let min_mamba = |n: usize| {
        let timings = bench_epoch(&config, n, 16, 5, 0).unwrap();
        timings.iter().find(|t| t.label == "mamba").unwrap().min()
    };
    let (small, large) = (min_mamba(64), min_mamba(128));
    let ratio = large / small;
    assert!((1.6..=2.5).contains(&ratio), "{small:.4} s vs {large:.4} s, ratio {ratio:.3}");
}
