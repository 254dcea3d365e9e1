use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use convmambanet::dataset::{
    load_windows, prepare_directory, save_windows, stratified_split, Dataset, DatasetManifest, SplitResult,
    WindowSpec, DATA_FILE,
};
use convmambanet::eeg_io::{read_annotation_csv, ChannelMap};
use convmambanet::model::load_checkpoint;
use convmambanet::train::{
    bench_epoch, compute_metrics, evaluate, line_plot, model_suite, op_suite, roc_csv, scan_linearity, summary_csv,
    synth_dataset, timings_csv, train, Series, TrainLog, TrainRun,
};

use crate::config::RunConfig;
use crate::{Cli, Command, Failure};

pub const RUN_CONFIG_FILE: &str = "run_config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn require_dir(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} is not a directory", path.display())))
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_store(dir: &Path) -> Result<Dataset, Failure> {
    require_dir(dir, "dataset")?;
    require_file(&dir.join(DATA_FILE), "window array")?;
    Ok(load_windows(dir).with_context(|| format!("loading {}", dir.display()))?.0)
}

fn load_split(path: &Path, n: usize) -> Result<SplitResult, Failure> {
    require_file(path, "split")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let split: SplitResult = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(&bad) = split.train.iter().chain(&split.test).find(|&&i| i >= n) {
        return Err(usage(format!("split refers to window {bad}, dataset has {n}")));
    }
    Ok(split)
}

/// Synthetic windows are stored with the window geometry they imply.
fn synthetic_window_spec(window_len: usize, sample_rate: f64) -> WindowSpec {
    let seconds = window_len as f64 / sample_rate;
    WindowSpec {
        window_s: seconds,
        stride_s: seconds,
        sample_rate,
        overlap_threshold: 0.0,
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let common = cli.common;
    if common.threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    // a second initialisation only happens in-process, never from main
    let _ = rayon::ThreadPoolBuilder::new().num_threads(common.threads).build_global();

    let out = common.out.ok_or_else(|| usage("--out is required"))?;
    if let Some(path) = &common.config {
        require_file(path, "config")?;
    }
    let mut cfg = RunConfig::load(common.config.as_deref(), common.reduced).map_err(Failure::Usage)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }

    match cli.command {
        Command::Preprocess {
            data_dir,
            annotations,
            window_s,
            stride_s,
            sample_rate,
            overlap_threshold,
        } => {
            require_dir(&data_dir, "data directory")?;
            let w = &mut cfg.window;
            w.window_s = window_s.unwrap_or(w.window_s);
            w.stride_s = stride_s.unwrap_or(w.stride_s);
            w.sample_rate = sample_rate.unwrap_or(w.sample_rate);
            w.overlap_threshold = overlap_threshold.unwrap_or(w.overlap_threshold);
            cfg.window.validate().map_err(usage)?;
            let annotations = match &annotations {
                Some(path) => {
                    require_file(path, "annotation file")?;
                    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                    read_annotation_csv(file).with_context(|| format!("reading {}", path.display()))?
                }
                None => Vec::new(),
            };
            preprocess(&cfg, &data_dir, &annotations, &out)
        }
        Command::Split {
            data,
            mode,
            test_fraction,
        } => {
            if let Some(m) = mode {
                cfg.split.mode = m.into();
            }
            cfg.split.test_fraction = test_fraction.unwrap_or(cfg.split.test_fraction);
            if !(0.0..1.0).contains(&cfg.split.test_fraction) {
                return Err(usage(format!("test fraction {} outside [0, 1)", cfg.split.test_fraction)));
            }
            let ds = load_store(&data)?;
            split(&cfg, &ds, &out)
        }
        Command::Train {
            data,
            split,
            epochs,
            batch_size,
            lr,
        } => {
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.batch_size = batch_size.unwrap_or(cfg.train.batch_size);
            cfg.train.adam.lr = lr.unwrap_or(cfg.train.adam.lr);
            if cfg.train.batch_size == 0 {
                return Err(usage("batch size must be positive"));
            }
            cfg.model.validate().map_err(usage)?;
            let ds = load_store(&data)?;
            let split = split.map(|p| load_split(&p, ds.len())).transpose()?;
            train_cmd(&cfg, &ds, split.as_ref(), &out)
        }
        Command::Eval {
            data,
            checkpoint,
            split,
        } => {
            require_file(&checkpoint, "checkpoint")?;
            if common.config.is_none() {
                let beside = checkpoint.parent().map(|d| d.join(RUN_CONFIG_FILE));
                if let Some(path) = beside.filter(|p| p.is_file()) {
                    log::info!("model configuration from {}", path.display());
                    let seed = cfg.seed;
                    cfg = RunConfig::load(Some(&path), false).map_err(Failure::Usage)?;
                    cfg.seed = common.seed.unwrap_or(seed);
                }
            }
            let ds = load_store(&data)?;
            let split = split.map(|p| load_split(&p, ds.len())).transpose()?;
            eval_cmd(&cfg, &ds, &checkpoint, split.as_ref(), &out)
        }
        Command::Gradcheck { seeds } => {
            if seeds == 0 {
                return Err(usage("--seeds must be at least 1"));
            }
            cfg.model.validate().map_err(usage)?;
            gradcheck(&cfg, seeds, &out)
        }
        Command::Bench {
            repetitions,
            n_windows,
            scan_len,
        } => {
            cfg.bench.repetitions = repetitions.unwrap_or(cfg.bench.repetitions);
            cfg.bench.n_windows = n_windows.unwrap_or(cfg.bench.n_windows);
            cfg.bench.scan_len = scan_len.unwrap_or(cfg.bench.scan_len);
            if cfg.bench.repetitions == 0 || cfg.bench.n_windows < 2 || cfg.bench.scan_len == 0 {
                return Err(usage("bench needs at least 1 repetition, 2 windows and a positive scan length"));
            }
            cfg.model.validate().map_err(usage)?;
            bench(&cfg, &out)
        }
        Command::Synth { n_windows } => {
            cfg.synth.n_windows = n_windows.unwrap_or(cfg.synth.n_windows);
            synth(&cfg, &out)
        }
    }
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join(RUN_CONFIG_FILE), cfg.to_toml()?)
}

fn preprocess(
    cfg: &RunConfig,
    data_dir: &Path,
    annotations: &[convmambanet::eeg_io::SeizureInterval],
    out: &Path,
) -> Result<(), Failure> {
    let channels = ChannelMap {
        labels: cfg.channels.clone(),
    };
    let mut prepared = prepare_directory(data_dir, annotations, &cfg.window, &channels)?;
    prepared.manifest.seed = cfg.seed;
    prepare_out(cfg, out)?;
    save_windows(out, &prepared.dataset, Some(&prepared.manifest))?;
    println!("patient\trecordings\twindows\tseizure_windows");
    for (patient, c) in &prepared.per_patient {
        println!("{patient}\t{}\t{}\t{}", c.recordings, c.windows, c.positive);
    }
    println!(
        "total\t{}\t{}\t{}",
        prepared.manifest.files.len(),
        prepared.manifest.n_windows,
        prepared.manifest.n_positive
    );
    if !prepared.skipped.is_empty() {
        log::warn!("{} recordings skipped", prepared.skipped.len());
    }
    Ok(())
}

fn split(cfg: &RunConfig, ds: &Dataset, out: &Path) -> Result<(), Failure> {
    let groups: Vec<&str> = ds.provenance.iter().map(|r| r.file.as_str()).collect();
    let result = stratified_split(&ds.labels, &groups, cfg.split.test_fraction, cfg.split.mode, cfg.seed)?;
    prepare_out(cfg, out)?;
    write(&out.join("split.json"), serde_json::to_string_pretty(&result)? + "\n")?;
    println!(
        "train {} / test {} windows; test positive fraction {:.4} (overall {:.4})",
        result.train.len(),
        result.test.len(),
        result.test_positive_fraction,
        result.overall_positive_fraction
    );
    Ok(())
}

fn curves(log: &TrainLog, pick: impl Fn(&convmambanet::train::EpochRow) -> (f64, Option<f64>)) -> [Vec<(f64, f64)>; 2] {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for r in &log.rows {
        let (t, v) = pick(r);
        train.push((r.epoch as f64, t));
        if let Some(v) = v {
            val.push((r.epoch as f64, v));
        }
    }
    [train, val]
}

fn train_cmd(cfg: &RunConfig, ds: &Dataset, split: Option<&SplitResult>, out: &Path) -> Result<(), Failure> {
    let all: Vec<usize> = (0..ds.len()).collect();
    let (train_idx, val_idx) = match split {
        Some(s) => (s.train.as_slice(), s.test.as_slice()),
        None => (all.as_slice(), &[][..]),
    };
    prepare_out(cfg, out)?;
    let checkpoint: PathBuf = out.join(CHECKPOINT_FILE);
    let run = TrainRun {
        model: cfg.model.clone(),
        train: cfg.train_config(),
        checkpoint: Some(&checkpoint),
    };
    let (_, log) = train(&run, ds, train_idx, val_idx, |r| {
        let val = match (r.val_loss, r.val_acc) {
            (Some(l), Some(a)) => format!(" val_loss {l:.5} val_acc {a:.4}"),
            _ => String::new(),
        };
        log::info!(
            "epoch {} train_loss {:.5} train_acc {:.4}{val} ({:.2} s)",
            r.epoch,
            r.train_loss,
            r.train_acc,
            r.seconds
        );
    })?;
    write(&out.join("train_log.csv"), log.to_csv())?;
    let [tl, vl] = curves(&log, |r| (r.train_loss, r.val_loss));
    let [ta, va] = curves(&log, |r| (r.train_acc, r.val_acc));
    let pair = |t, v| {
        vec![
            Series {
                name: "train",
                points: t,
            },
            Series {
                name: "validation",
                points: v,
            },
        ]
    };
    write(&out.join("loss.svg"), line_plot("Loss", "epoch", "cross-entropy", &pair(tl, vl)))?;
    write(&out.join("accuracy.svg"), line_plot("Accuracy", "epoch", "accuracy", &pair(ta, va)))?;
    if let Some(last) = log.rows.last() {
        println!("final train accuracy {:.4}, loss {:.5}", last.train_acc, last.train_loss);
    }
    Ok(())
}

fn eval_cmd(
    cfg: &RunConfig,
    ds: &Dataset,
    checkpoint: &Path,
    split: Option<&SplitResult>,
    out: &Path,
) -> Result<(), Failure> {
    let model = load_checkpoint(checkpoint, &cfg.model).with_context(|| format!("loading {}", checkpoint.display()))?;
    let indices: Vec<usize> = match split {
        Some(s) => s.test.clone(),
        None => (0..ds.len()).collect(),
    };
    if indices.is_empty() {
        return Err(Failure::Runtime(anyhow!("no windows to evaluate")));
    }
    let e = evaluate(&model, ds, &indices, cfg.train.batch_size)?;
    let report = compute_metrics(&e.labels, &e.predictions, &e.scores)?;
    prepare_out(cfg, out)?;
    write(&out.join("metrics.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    write(&out.join("roc.csv"), roc_csv(&report.roc))?;
    let mut preds = String::from("index,label,prediction,score\n");
    for (k, &i) in indices.iter().enumerate() {
        preds += &format!("{i},{},{},{}\n", e.labels[k], e.predictions[k], e.scores[k]);
    }
    write(&out.join("predictions.csv"), preds)?;
    let roc = Series {
        name: "model",
        points: report.roc.iter().map(|p| (p.fpr, p.tpr)).collect(),
    };
    let chance = Series {
        name: "chance",
        points: vec![(0.0, 0.0), (1.0, 1.0)],
    };
    write(
        &out.join("roc.svg"),
        line_plot("ROC", "false positive rate", "true positive rate", &[roc, chance]),
    )?;
    let [[tn, fp], [fn_, tp]] = report.confusion;
    println!(
        "n {} accuracy {:.4} weighted_f1 {:.4} auc {} | TN {tn} FP {fp} FN {fn_} TP {tp}",
        report.n,
        report.accuracy,
        report.weighted_f1,
        report.auc.map_or("n/a".to_string(), |a| format!("{a:.4}"))
    );
    for flag in &report.flags {
        log::warn!("metric flag: {flag}");
    }
    Ok(())
}

fn gradcheck(cfg: &RunConfig, seeds: u64, out: &Path) -> Result<(), Failure> {
    if cfg.model.window_len > 256 {
        log::warn!(
            "model gradient check over {}-sample windows is slow; --reduced uses 64",
            cfg.model.window_len
        );
    }
    prepare_out(cfg, out)?;
    let mut table = String::from("suite,name,seed,elements,max_rel_error,tolerance,passed\n");
    let (mut total, mut failed) = (0, 0);
    for seed in cfg.seed..cfg.seed + seeds {
        let ops = op_suite(seed).into_iter().map(|c| ("op", c));
        let model = model_suite(&cfg.model, seed)?.into_iter().map(|c| ("model", c));
        for (suite, c) in ops.chain(model) {
            total += 1;
            if !c.passed() {
                failed += 1;
                log::warn!("{suite} {} seed {}: rel err {:e}", c.name, c.seed, c.max_rel_error);
            }
            table += &format!(
                "{suite},{},{},{},{:e},{:e},{}\n",
                c.name,
                c.seed,
                c.elements,
                c.max_rel_error,
                c.tolerance,
                c.passed()
            );
        }
    }
    write(&out.join("gradcheck.csv"), table)?;
    println!("{} of {total} gradient checks passed", total - failed);
    if failed > 0 {
        return Err(Failure::Runtime(anyhow!("{failed} gradient checks exceeded tolerance")));
    }
    Ok(())
}

fn bench(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let b = &cfg.bench;
    prepare_out(cfg, out)?;
    let timings = bench_epoch(&cfg.model, b.n_windows, b.batch_size, b.repetitions, cfg.seed)?;
    write(&out.join("bench_epochs.csv"), timings_csv(&timings))?;
    write(&out.join("bench_summary.csv"), summary_csv(&timings))?;
    for t in &timings {
        println!(
            "{}: {:.4} s/epoch ± {:.4} over {} runs ({} windows)",
            t.label,
            t.mean(),
            t.std(),
            t.samples.len(),
            b.n_windows
        );
    }
    let m = &cfg.model.mamba;
    let s = scan_linearity(b.scan_len, m.d_inner(), m.d_state, b.repetitions);
    write(
        &out.join("scan_scaling.csv"),
        format!(
            "len,seconds_len,seconds_double,ratio\n{},{},{},{}\n",
            s.len, s.seconds_len, s.seconds_double, s.ratio
        ),
    )?;
    println!("scan: L={} {:.5} s, 2L {:.5} s, ratio {:.3}", s.len, s.seconds_len, s.seconds_double, s.ratio);
    Ok(())
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let spec = cfg.synth_spec();
    if spec.n_windows < 2 || spec.window_len < 2 || spec.channels == 0 {
        return Err(usage("synthetic set needs at least 2 windows of at least 2 samples"));
    }
    let ds = synth_dataset(&spec, cfg.seed);
    let n_positive = ds.count_positive();
    let manifest = DatasetManifest {
        window: synthetic_window_spec(spec.window_len, spec.sample_rate),
        channels: (0..spec.channels).map(|c| format!("synth{c}")).collect(),
        split_mode: None,
        seed: cfg.seed,
        n_windows: ds.len(),
        n_positive,
        n_negative: ds.len() - n_positive,
        files: vec!["synthetic".into()],
        skipped_files: Vec::new(),
    };
    prepare_out(cfg, out)?;
    save_windows(out, &ds, Some(&manifest))?;
    println!("{} windows ({} positive) of {}×{}", ds.len(), n_positive, spec.channels, spec.window_len);
    Ok(())
}

