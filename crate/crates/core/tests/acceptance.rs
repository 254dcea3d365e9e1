//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Criterion 10 needs the full corpus and only runs when
//! `CHBMIT_DIR` points at it.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use convmambanet::dataset::{
    label_windows, make_windows, prepare_directory, read_npy, stratified_split, windows_from_recording, write_npy,
    NpyArray, NpyData, SplitMode, WindowSpec,
};
use convmambanet::eeg_io::{
    map_channels, parse_edf, parse_summary, write_edf, ChannelMap, EdfHeader, EegError, SeizureInterval,
    SignalHeader, BIPOLAR_CHANNELS,
};
use convmambanet::model::{glorot_limit, init_model, AttentionConfig, ModelConfig, TemporalParams};
use convmambanet::ndcore::{softplus, Rng, Tensor};
use convmambanet::ssm::{selective_scan_par, selective_scan_seq, MambaBlock, MambaConfig, ScanInputs, ScanKind};
use convmambanet::train::{
    auc, compute_metrics, model_suite, op_suite, roc_points, scan_linearity, synth_dataset, train, trapezoid_area,
    SynthSpec, TrainConfig, TrainRun, GRAD_TOLERANCE,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s as f64, || {
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let config = ModelConfig::reduced();
    let (mut n, mut worst) = (0, 0.0f64);
    for seed in 0..5 {
        let checks = op_suite(seed)
            .into_iter()
            .chain(model_suite(&config, seed).map_err(|e| e.to_string())?);
        for c in checks {
            n += 1;
            worst = worst.max(c.max_rel_error);
            ensure(c.max_rel_error < GRAD_TOLERANCE, || {
                format!("{} seed {}: rel err {:e}", c.name, c.seed, c.max_rel_error)
            })?;
        }
    }
    within(t.elapsed(), 120)?;
    Ok(format!("{n} checks over 5 seeds, max rel err {worst:.2e}, {:.1} s", t.elapsed().as_secs_f64()))
}

fn scan_instance(rng: &mut Rng, batch: usize, len: usize, inner: usize, state: usize) -> ScanInputs {
    let mut t = |shape: &[usize], f: &mut dyn FnMut(&mut Rng) -> f64| Tensor::from_fn(shape, |_| f(rng));
    ScanInputs {
        u: t(&[batch, len, inner], &mut |r| r.normal()),
        delta: t(&[batch, len, inner], &mut |r| r.uniform_range(1e-3, 0.5)),
        b: t(&[batch, len, state], &mut |r| r.normal()),
        c: t(&[batch, len, state], &mut |r| r.normal()),
        a: t(&[inner, state], &mut |r| -r.uniform_range(0.05, 2.0)),
        d: t(&[inner], &mut |r| r.normal()),
    }
}

fn scan_equivalence() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(2024);
    let required = [1, 2, 3, 17, 64, 1000];
    let mut worst = 0.0f64;
    for i in 0..100 {
        let len = if i < required.len() { required[i] } else { 1 + rng.below(200) };
        let (batch, inner, state) = (1 + rng.below(3), 1 + rng.below(6), 1 + rng.below(5));
        let inputs = scan_instance(&mut rng, batch, len, inner, state);
        let seq = selective_scan_seq(&inputs).map_err(|e| e.to_string())?;
        let par = selective_scan_par(&inputs).map_err(|e| e.to_string())?;
        let diff = seq.data().iter().zip(par.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
        ensure(diff <= 1e-10, || format!("instance {i} (L={len}): max abs diff {diff:e}"))?;
    }
    within(t.elapsed(), 30)?;
    Ok(format!("100 instances incl. L = 1, 2, 3, 17, 64, 1000; max abs diff {worst:.2e}"))
}

fn shape_contract() -> Outcome {
    let config = MambaConfig {
        d_model: 16,
        d_state: 16,
        d_conv: 4,
        expand: 2,
    };
    let mut rng = Rng::new(3);
    let block = MambaBlock::new(config, &mut rng).map_err(|e| e.to_string())?;
    let mut seen = Vec::new();
    for (b, l) in [(1, 1), (2, 128), (4, 37)] {
        let x = Tensor::from_fn(&[b, l, 16], |_| rng.normal());
        for kind in [ScanKind::Sequential, ScanKind::Parallel] {
            let y = block.forward(&x, kind).map_err(|e| e.to_string())?;
            ensure(y.shape() == x.shape() && y.all_finite(), || {
                format!("{:?} in gives {:?} out ({kind:?})", x.shape(), y.shape())
            })?;
        }
        seen.push(format!("{b}×{l}×16"));
    }
    Ok(format!("shape preserved for {}", seen.join(", ")))
}

fn init_audit() -> Outcome {
    let config = ModelConfig {
        attention: AttentionConfig { enabled: true, heads: 2 },
        ..ModelConfig::default()
    };
    // independent oracle for softplus⁻¹(0.001) = ln(e^0.001 − 1)
    let dt_bias = (0.001f64.exp() - 1.0).ln();
    for seed in 0..5 {
        let (p, running) = init_model(&config, &mut Rng::new(seed)).map_err(|e| e.to_string())?;
        for (i, c) in p.conv.iter().enumerate() {
            ensure(c.bias.data().iter().all(|&v| v == 0.0), || format!("conv.{i} bias non-zero"))?;
            ensure(c.gamma.data().iter().all(|&v| v == 1.0), || format!("conv.{i} γ ≠ 1"))?;
            ensure(c.beta.data().iter().all(|&v| v == 0.0), || format!("conv.{i} β ≠ 0"))?;
            ensure(running[i].mean.data().iter().all(|&v| v == 0.0), || format!("conv.{i} running mean"))?;
            ensure(running[i].var.data().iter().all(|&v| v == 1.0), || format!("conv.{i} running var"))?;
        }
        for t in &p.temporal {
            let TemporalParams::Mamba(m) = t else {
                return Err("default temporal block is not Mamba".into());
            };
            ensure(m.a_log.data().iter().all(|&v| -softplus(v) < 0.0), || "A not negative".into())?;
            ensure(m.conv_b.data().iter().all(|&v| v == 0.0), || "depthwise conv bias non-zero".into())?;
            ensure(m.dt_proj_b.data().iter().all(|&v| (v - dt_bias).abs() <= 1e-6), || {
                format!("dt bias {:?} vs {dt_bias}", &m.dt_proj_b.data()[..1])
            })?;
        }
        let a = p.attention.as_ref().ok_or("attention missing")?;
        let linears = [
            (&p.fc1.weight, "fc1"),
            (&p.fc2.weight, "fc2"),
            (&a.wq, "q"),
            (&a.wk, "k"),
            (&a.wv, "v"),
            (&a.wo, "o"),
        ];
        for (w, name) in linears {
            let limit = glorot_limit(w.shape()[0], w.shape()[1]);
            ensure(w.max_abs() <= limit, || format!("{name} exceeds Glorot bound {limit}"))?;
        }
        for b in [&p.fc1.bias, &p.fc2.bias, &a.bq, &a.bo] {
            ensure(b.data().iter().all(|&v| v == 0.0), || "dense bias non-zero".into())?;
        }
    }
    Ok(format!("5 seeds; dt bias = ln(e^0.001 − 1) = {dt_bias:.7}"))
}

fn synthetic_overfit() -> Outcome {
    let t = Instant::now();
    let config = ModelConfig::reduced();
    let spec = SynthSpec {
        channels: config.in_channels,
        window_len: config.window_len,
        ..SynthSpec::default()
    };
    let ds = synth_dataset(&spec, 11);
    let idx: Vec<usize> = (0..ds.len()).collect();
    let run = TrainRun {
        model: config,
        train: TrainConfig {
            epochs: 200,
            seed: 11,
            ..TrainConfig::default()
        },
        checkpoint: None,
    };
    let (_, log) = train(&run, &ds, &idx, &[], |_| {}).map_err(|e| e.to_string())?;
    let reached = log.rows.iter().find(|r| r.train_acc >= 0.95).map(|r| r.epoch);
    let (_, again) = train(&run, &ds, &idx, &[], |_| {}).map_err(|e| e.to_string())?;
    let losses = |l: &convmambanet::train::TrainLog| l.rows.iter().map(|r| r.train_loss.to_bits()).collect::<Vec<_>>();
    ensure(losses(&log) == losses(&again), || "two runs with one seed diverge".into())?;
    let epoch = reached.ok_or_else(|| format!("best train accuracy {:.3}", log.best_train_acc()))?;
    within(t.elapsed(), 600)?;
    Ok(format!(
        "64 windows: train accuracy ≥ 0.95 at epoch {epoch}, final {:.3}; repeat run identical; {:.1} s",
        log.rows.last().map_or(0.0, |r| r.train_acc),
        t.elapsed().as_secs_f64()
    ))
}

fn preprocessing_fixture() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path().join("chb01");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let edf = convmambanet::eeg_io::fixture_edf(&BIPOLAR_CHANNELS, 256, 20, 5).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("chb01_01.edf"), &edf).map_err(|e| e.to_string())?;
    let seizure = [SeizureInterval::new("chb01_01.edf", 10.0, 12.0).map_err(|e| e.to_string())?];

    let rec = parse_edf(&edf).and_then(|e| e.recording("chb01_01.edf")).map_err(|e| e.to_string())?;
    let rec = map_channels(&rec, &ChannelMap::default()).map_err(|e| e.to_string())?;
    let ds = windows_from_recording(&rec, &seizure, &WindowSpec::default()).map_err(|e| e.to_string())?;
    let starts: Vec<usize> = ds.provenance.iter().map(|r| r.start_sample).collect();
    ensure(starts == [0, 1024, 2048, 3072], || format!("window starts {starts:?}"))?;
    ensure(ds.labels == [0, 1, 1, 0], || format!("labels {:?}", ds.labels))?;

    let prepared = prepare_directory(tmp.path(), &seizure, &WindowSpec::default(), &ChannelMap::default())
        .map_err(|e| e.to_string())?;
    ensure(prepared.dataset.labels == [0, 1, 1, 0], || "directory pipeline disagrees".into())?;

    let offsets = make_windows(20 * 256, 2048, 1024);
    ensure(label_windows(&offsets, 2048, &WindowSpec::default(), &seizure) == [0, 1, 1, 0], || {
        "label_windows disagrees".into()
    })?;

    let labels: Vec<u8> = (0..100).map(|i| u8::from(i % 5 == 0)).collect();
    let names: Vec<String> = (0..100).map(|i| format!("f{i}")).collect();
    let groups: Vec<&str> = names.iter().map(String::as_str).collect();
    let split = stratified_split(&labels, &groups, 0.2, SplitMode::WindowStratified, 0).map_err(|e| e.to_string())?;
    let test_pos = split.test.iter().filter(|&&i| labels[i] == 1).count();
    ensure(split.test.len() == 20 && test_pos == 4, || {
        format!("test {} windows, {test_pos} positive", split.test.len())
    })?;
    Ok("20 s recording → 4 windows labelled [0, 1, 1, 0]; 100/20 split → test 20 with 4 positive".into())
}

fn random_label(rng: &mut Rng) -> String {
    const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-";
    (0..1 + rng.below(12)).map(|_| ALPHABET[rng.below(ALPHABET.len())] as char).collect()
}

fn random_edf(rng: &mut Rng) -> (EdfHeader, Vec<Vec<i16>>) {
    let n_signals = 1 + rng.below(5);
    let n_records = rng.below(5);
    let signals: Vec<SignalHeader> = (0..n_signals)
        .map(|_| SignalHeader {
            label: random_label(rng),
            transducer: if rng.below(2) == 0 { String::new() } else { "AgAgCl electrode".into() },
            physical_dimension: "uV".into(),
            physical_min: -(rng.below(50_000) as f64 + 1.0) / 10.0,
            physical_max: (rng.below(50_000) as f64 + 1.0) / 10.0,
            digital_min: -(rng.below(32_768) as i32) - 1,
            digital_max: rng.below(32_767) as i32 + 1,
            prefiltering: if rng.below(2) == 0 { String::new() } else { "HP:0.1Hz".into() },
            samples_per_record: 1 + rng.below(40),
            reserved: String::new(),
        })
        .collect();
    let samples = signals
        .iter()
        .map(|s| {
            let span = (s.digital_max - s.digital_min + 1) as usize;
            (0..s.samples_per_record * n_records)
                .map(|_| (s.digital_min + rng.below(span) as i32) as i16)
                .collect()
        })
        .collect();
    let header = EdfHeader {
        version: "0".into(),
        patient_id: random_label(rng),
        recording_id: random_label(rng),
        start_date: "16.10.26".into(),
        start_time: "12.00.00".into(),
        header_bytes: EdfHeader::expected_header_bytes(n_signals),
        reserved: String::new(),
        n_records,
        record_duration_s: [1.0, 0.5, 2.0][rng.below(3)],
        signals,
    };
    (header, samples)
}

fn random_npy(rng: &mut Rng, i: usize) -> NpyArray {
    let shape: Vec<usize> = (0..1 + rng.below(3)).map(|_| rng.below(5)).collect();
    let n: usize = shape.iter().product();
    let special = [0.0, -0.0, f64::MIN_POSITIVE / 4.0, f64::MAX, f64::INFINITY, f64::NEG_INFINITY];
    let data = if i.is_multiple_of(2) {
        NpyData::F64(
            (0..n)
                .map(|_| if rng.below(8) == 0 { special[rng.below(special.len())] } else { rng.normal() * 1e3 })
                .collect(),
        )
    } else {
        NpyData::I64((0..n).map(|_| rng.next_u64() as i64).collect())
    };
    NpyArray { shape, data }
}

fn same_bits(a: &NpyData, b: &NpyData) -> bool {
    match (a, b) {
        (NpyData::F64(x), NpyData::F64(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
        }
        (NpyData::I64(x), NpyData::I64(y)) => x == y,
        _ => false,
    }
}

fn parser_round_trips() -> Outcome {
    let mut rng = Rng::new(77);
    let mut truncations = 0;
    for i in 0..100 {
        let (header, samples) = random_edf(&mut rng);
        let bytes = write_edf(&header, &samples).map_err(|e| format!("fixture {i}: {e}"))?;
        let parsed = parse_edf(&bytes).map_err(|e| format!("fixture {i}: {e}"))?;
        ensure(parsed.header == header && parsed.samples == samples, || format!("EDF fixture {i} differs"))?;
        let again = write_edf(&parsed.header, &parsed.samples).map_err(|e| e.to_string())?;
        ensure(again == bytes, || format!("EDF fixture {i} not a byte identity"))?;
        if header.n_records > 0 {
            let cut = header.header_bytes + rng.below(bytes.len() - header.header_bytes);
            ensure(matches!(parse_edf(&bytes[..cut]), Err(EegError::Truncated { .. })), || {
                format!("EDF fixture {i} cut at {cut} not reported as truncated")
            })?;
            truncations += 1;
        }
        let mut bad = bytes.clone();
        bad[184..192].copy_from_slice(b"12x     ");
        ensure(matches!(parse_edf(&bad), Err(EegError::Field { offset: 184, .. })), || {
            format!("EDF fixture {i}: corrupt header-size field not located")
        })?;
    }
    for i in 0..100 {
        let array = random_npy(&mut rng, i);
        let bytes = write_npy(&array).map_err(|e| e.to_string())?;
        let back = read_npy(&bytes).map_err(|e| format!("NPY fixture {i}: {e}"))?;
        ensure(back.shape == array.shape && same_bits(&back.data, &array.data), || {
            format!("NPY fixture {i} differs")
        })?;
        let mut bad = bytes.clone();
        bad[1] = b'X';
        ensure(read_npy(&bad).is_err(), || format!("NPY fixture {i}: bad magic accepted"))?;
        if bytes.len() > 128 {
            ensure(read_npy(&bytes[..bytes.len() - 1]).is_err(), || format!("NPY fixture {i}: truncation accepted"))?;
        }
    }

    let summary = "File Name: chb01_03.edf\nNumber of Seizures in File: 1\n\
                   Seizure Start Time: 2996 seconds\nSeizure End Time: 3036 seconds\n\n\
                   File Name: chb06_01.edf\nNumber of Seizures in File: 2\n\
                   Seizure 1 Start Time: 1724 seconds\nSeizure 1 End Time: 1738 seconds\n\
                   Seizure 2 Start Time: 7461 seconds\nSeizure 2 End Time: 7476 seconds\n";
    let entries = parse_summary(summary).map_err(|e| e.to_string())?;
    let spans: Vec<(String, f64, f64)> = entries
        .iter()
        .flat_map(|e| e.intervals.iter().map(|iv| (iv.file.clone(), iv.start_s, iv.end_s)))
        .collect();
    let expected = [
        ("chb01_03.edf", 2996.0, 3036.0),
        ("chb06_01.edf", 1724.0, 1738.0),
        ("chb06_01.edf", 7461.0, 7476.0),
    ];
    ensure(
        spans.len() == 3 && spans.iter().zip(expected).all(|(a, b)| a.0 == b.0 && a.1 == b.1 && a.2 == b.2),
        || format!("summary parsed to {spans:?}"),
    )?;
    let malformed = "File Name: a.edf\nNumber of Seizures in File: 1\nSeizure Start Time: 9 seconds\n";
    ensure(matches!(parse_summary(malformed), Err(EegError::Summary { .. })), || {
        "unterminated seizure accepted".into()
    })?;
    Ok(format!(
        "100 EDF ({truncations} truncations rejected) and 100 NPY fixtures bitwise; summary grammar and malformed inputs"
    ))
}

fn brute_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn metrics_oracle() -> Outcome {
    let mut rng = Rng::new(8);
    for set in 0..50 {
        let n = 2 + rng.below(60);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        // one decimal place forces ties
        let scores: Vec<f64> = (0..n).map(|_| (rng.uniform() * 10.0).round() / 10.0).collect();
        let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s > 0.5)).collect();
        let r = compute_metrics(&labels, &preds, &scores).map_err(|e| e.to_string())?;

        let count = |y: u8, p: u8| labels.iter().zip(&preds).filter(|&(&a, &b)| a == y && b == p).count();
        let hand = [[count(0, 0), count(0, 1)], [count(1, 0), count(1, 1)]];
        ensure(r.confusion == hand, || format!("set {set}: confusion {:?} vs {hand:?}", r.confusion))?;
        ensure(r.accuracy == (hand[0][0] + hand[1][1]) as f64 / n as f64, || format!("set {set}: accuracy"))?;

        let oracle = brute_auc(&labels, &scores);
        let got = r.auc.ok_or("missing AUC")?;
        ensure((got - oracle).abs() <= 1e-12, || format!("set {set}: AUC {got} vs pairwise {oracle}"))?;
        let area = trapezoid_area(&roc_points(&labels, &scores).map_err(|e| e.to_string())?);
        ensure((area - oracle).abs() <= 1e-12, || format!("set {set}: ROC area {area} vs {oracle}"))?;
        for transform in [|s: f64| 2.0 * s + 1.0, f64::exp] {
            let moved: Vec<f64> = scores.iter().map(|&s| transform(s)).collect();
            let a = auc(&labels, &moved).map_err(|e| e.to_string())?;
            ensure((a - oracle).abs() <= 1e-12, || format!("set {set}: AUC moved to {a} under a monotone map"))?;
        }
    }
    Ok("50 random sets: confusion, accuracy, AUC, ROC area and monotone invariance".into())
}

fn scan_scaling() -> Outcome {
    let t = Instant::now();
    let mut report = Vec::new();
    for len in [1 << 14, 1 << 15] {
        let s = scan_linearity(len, 32, 16, 7);
        report.push(format!("L=2^{} ratio {:.3}", len.trailing_zeros(), s.ratio));
        ensure((1.5..=2.6).contains(&s.ratio), || {
            format!("L={len}: {:.4} s vs {:.4} s, ratio {:.3}", s.seconds_len, s.seconds_double, s.ratio)
        })?;
    }
    within(t.elapsed(), 120)?;
    Ok(report.join(", "))
}

fn full_corpus() -> Option<Outcome> {
    let dir = std::env::var_os("CHBMIT_DIR")?;
    Some(
        prepare_directory(std::path::Path::new(&dir), &[], &WindowSpec::default(), &ChannelMap::default())
            .map(|p| {
                format!(
                    "{} windows, {} seizure windows from {} recordings ({} skipped); reference 9505 / 2581",
                    p.manifest.n_windows,
                    p.manifest.n_positive,
                    p.manifest.files.len(),
                    p.skipped.len()
                )
            })
            .map_err(|e| e.to_string()),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradient_suite),
        ("scan equivalence", scan_equivalence),
        ("block shape contract", shape_contract),
        ("initialisation audit", init_audit),
        ("synthetic overfit", synthetic_overfit),
        ("preprocessing fixture", preprocessing_fixture),
        ("parser round-trips", parser_round_trips),
        ("metrics oracle", metrics_oracle),
        ("scan linearity", scan_scaling),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    match full_corpus() {
        Some(Ok(detail)) => println!("INFO 10 full-corpus counts: {detail}"),
        Some(Err(detail)) => println!("INFO 10 full-corpus counts: could not run: {detail}"),
        None => println!("SKIP 10 full-corpus counts: set CHBMIT_DIR to the corpus root"),
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
