use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{synth_dataset, train, SynthSpec, TrainConfig, TrainError, TrainRun};
use crate::model::{ModelConfig, TemporalKind};
use crate::ndcore::Rng;
use crate::ssm::scan_seq_raw;

/// Wall-clock samples of one benchmarked configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub label: String,
    pub samples: Vec<f64>,
}

impl Timing {
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len().max(1) as f64
    }

    /// Sample standard deviation (0 for fewer than two samples).
    pub fn std(&self) -> f64 {
        let n = self.samples.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.samples.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn median(&self) -> f64 {
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        match s.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => s[n / 2],
            n => (s[n / 2 - 1] + s[n / 2]) / 2.0,
        }
    }
}

/// `label,repetition,seconds` rows followed by nothing else.
pub fn timings_csv(timings: &[Timing]) -> String {
    let mut out = String::from("label,repetition,seconds\n");
    for t in timings {
        for (i, s) in t.samples.iter().enumerate() {
            out += &format!("{},{},{}\n", t.label, i + 1, s);
        }
    }
    out
}

/// `label,n,mean,std,min,max`.
pub fn summary_csv(timings: &[Timing]) -> String {
    let mut out = String::from("label,n,mean,std,min,max\n");
    for t in timings {
        out += &format!(
            "{},{},{},{},{},{}\n",
            t.label,
            t.samples.len(),
            t.mean(),
            t.std(),
            t.min(),
            t.max()
        );
    }
    out
}

/// Per-epoch training time on fixed synthetic data, for the Mamba model and
/// for the same pipeline with each Mamba block replaced by a dense stack.
pub fn bench_epoch(
    config: &ModelConfig,
    n_windows: usize,
    batch_size: usize,
    repetitions: usize,
    seed: u64,
) -> Result<Vec<Timing>, TrainError> {
    let spec = SynthSpec {
        n_windows,
        channels: config.in_channels,
        window_len: config.window_len,
        ..SynthSpec::default()
    };
    let ds = synth_dataset(&spec, seed);
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::new();
    for (label, kind) in [("mamba", TemporalKind::Mamba), ("dense", TemporalKind::Dense)] {
        let run = TrainRun {
            model: ModelConfig {
                temporal: kind,
                ..config.clone()
            },
            train: TrainConfig {
                epochs: 1,
                batch_size,
                seed,
                ..TrainConfig::default()
            },
            checkpoint: None,
        };
        let mut samples = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let (_, log) = train(&run, &ds, &idx, &[], |_| {})?;
            samples.push(log.rows[0].seconds);
        }
        out.push(Timing {
            label: label.into(),
            samples,
        });
    }
    Ok(out)
}

/// Time of one sequential scan over `len` steps (`batch 1`), best of
/// `repetitions`.
pub fn time_scan(len: usize, inner: usize, state: usize, repetitions: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut fill = |n: usize, f: &mut dyn FnMut(&mut Rng) -> f64| (0..n).map(|_| f(&mut rng)).collect::<Vec<f64>>();
    let u = fill(len * inner, &mut |r| r.normal());
    let delta = fill(len * inner, &mut |r| r.uniform_range(0.001, 0.1));
    let b = fill(len * state, &mut |r| r.normal());
    let c = fill(len * state, &mut |r| r.normal());
    let a = fill(inner * state, &mut |r| -r.uniform_range(0.5, 2.0));
    let d = fill(inner, &mut |r| r.normal());
    let mut best = f64::INFINITY;
    for _ in 0..repetitions.max(1) {
        let t = Instant::now();
        let y = scan_seq_raw(&u, &delta, &b, &c, &a, &d, (1, len, inner, state), None);
        std::hint::black_box(&y);
        best = best.min(t.elapsed().as_secs_f64());
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanScaling {
    pub len: usize,
    pub seconds_len: f64,
    pub seconds_double: f64,
    pub ratio: f64,
}

/// Time ratio of a sequential scan over `2·len` steps to one over `len`.
pub fn scan_linearity(len: usize, inner: usize, state: usize, repetitions: usize) -> ScanScaling {
    // warm caches and the allocator before timing
    time_scan(len, inner, state, 1, 0);
    let seconds_len = time_scan(len, inner, state, repetitions, 1);
    let seconds_double = time_scan(2 * len, inner, state, repetitions, 2);
    ScanScaling {
        len,
        seconds_len,
        seconds_double,
        ratio: seconds_double / seconds_len,
    }
}
