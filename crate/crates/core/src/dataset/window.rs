use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::eeg_io::{Recording, SeizureInterval};
use crate::ndcore::Tensor;

/// Window geometry and the window-level label rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub window_s: f64,
    pub stride_s: f64,
    pub sample_rate: f64,
    /// A window is a seizure window when its seizure overlap exceeds this
    /// fraction of the window; 0 means any overlap.
    pub overlap_threshold: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window_s: 8.0,
            stride_s: 4.0,
            sample_rate: 256.0,
            overlap_threshold: 0.0,
        }
    }
}

fn exact_samples(seconds: f64, rate: f64, what: &str) -> Result<usize, DatasetError> {
    let n = seconds * rate;
    if !(n.is_finite() && n >= 1.0 && n.fract() == 0.0) {
        return Err(DatasetError::Spec(format!(
            "{what} of {seconds} s at {rate} Hz is not a positive whole number of samples"
        )));
    }
    Ok(n as usize)
}

impl WindowSpec {
    pub fn window_len(&self) -> Result<usize, DatasetError> {
        exact_samples(self.window_s, self.sample_rate, "window")
    }

    pub fn stride_len(&self) -> Result<usize, DatasetError> {
        exact_samples(self.stride_s, self.sample_rate, "stride")
    }

    pub fn validate(&self) -> Result<(usize, usize), DatasetError> {
        let (w, s) = (self.window_len()?, self.stride_len()?);
        if s > w {
            return Err(DatasetError::Spec(format!("stride {s} exceeds window {w}")));
        }
        if !(0.0..1.0).contains(&self.overlap_threshold) {
            return Err(DatasetError::Spec(format!(
                "overlap threshold {} outside [0, 1)",
                self.overlap_threshold
            )));
        }
        Ok((w, s))
    }
}

/// Start samples of every full window; trailing partial windows are dropped.
pub fn make_windows(n_samples: usize, window_len: usize, stride_len: usize) -> Vec<usize> {
    if window_len == 0 || stride_len == 0 || n_samples < window_len {
        return Vec::new();
    }
    (0..=(n_samples - window_len) / stride_len).map(|k| k * stride_len).collect()
}

/// Seizure intervals converted to sorted, merged half-open sample ranges.
fn merged_ranges(intervals: &[SeizureInterval], rate: f64) -> Vec<(usize, usize)> {
    let mut ranges: Vec<(usize, usize)> = intervals
        .iter()
        .map(|iv| {
            let a = (iv.start_s * rate).round().max(0.0) as usize;
            let b = (iv.end_s * rate).round().max(0.0) as usize;
            (a, b)
        })
        .filter(|(a, b)| b > a)
        .collect();
    ranges.sort_unstable();
    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(ranges.len());
    for (a, b) in ranges {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    merged
}

/// Label 1 when a window's overlap with the union of `intervals` exceeds
/// `overlap_threshold · window_len` samples.
pub fn label_windows(
    offsets: &[usize],
    window_len: usize,
    spec: &WindowSpec,
    intervals: &[SeizureInterval],
) -> Vec<u8> {
    let ranges = merged_ranges(intervals, spec.sample_rate);
    let threshold = spec.overlap_threshold * window_len as f64;
    offsets
        .iter()
        .map(|&o| {
            let end = o + window_len;
            let overlap: usize = ranges
                .iter()
                .map(|&(a, b)| b.min(end).saturating_sub(a.max(o)))
                .sum();
            u8::from(overlap > 0 && overlap as f64 > threshold)
        })
        .collect()
}

/// Where a window came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRef {
    pub file: String,
    pub patient: String,
    pub start_sample: usize,
}

/// Patient prefix of a CHB-MIT style file name (`chb01_03.edf` → `chb01`).
pub fn patient_id(file: &str) -> String {
    let base = file.rsplit(['/', '\\']).next().unwrap_or(file);
    let stem = base.split('.').next().unwrap_or(base);
    stem.split('_').next().unwrap_or(stem).to_string()
}

/// Labeled windows stored contiguously as `[n × channels × window_len]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub window_len: usize,
    pub data: Vec<f64>,
    pub labels: Vec<u8>,
    pub provenance: Vec<WindowRef>,
}

impl Dataset {
    pub fn empty(channels: usize, window_len: usize) -> Self {
        Self {
            channels,
            window_len,
            data: Vec::new(),
            labels: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_size(&self) -> usize {
        self.channels * self.window_len
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let w = self.window_size();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn count_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// `[indices.len() × channels × window_len]` batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let data = indices.iter().flat_map(|&i| self.window(i).iter().copied()).collect();
        Tensor::new(&[indices.len(), self.channels, self.window_len], data).expect("window size")
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i] as usize).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            channels: self.channels,
            window_len: self.window_len,
            data: indices.iter().flat_map(|&i| self.window(i).iter().copied()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: indices.iter().map(|&i| self.provenance[i].clone()).collect(),
        }
    }

    pub fn push(&mut self, window: &[f64], label: u8, origin: WindowRef) {
        assert_eq!(window.len(), self.window_size(), "window size");
        self.data.extend_from_slice(window);
        self.labels.push(label);
        self.provenance.push(origin);
    }

    pub fn extend(&mut self, other: Dataset) {
        assert_eq!((self.channels, self.window_len), (other.channels, other.window_len));
        self.data.extend(other.data);
        self.labels.extend(other.labels);
        self.provenance.extend(other.provenance);
    }
}

/// Windows and labels of one recording, channels already in model order.
pub fn windows_from_recording(
    rec: &Recording,
    intervals: &[SeizureInterval],
    spec: &WindowSpec,
) -> Result<Dataset, DatasetError> {
    let (w, s) = spec.validate()?;
    if rec.sample_rate != spec.sample_rate {
        return Err(DatasetError::Spec(format!(
            "{} is sampled at {} Hz, spec expects {} Hz",
            rec.source, rec.sample_rate, spec.sample_rate
        )));
    }
    let c = rec.labels.len();
    let n = rec.n_samples();
    let offsets = make_windows(n, w, s);
    let labels = label_windows(&offsets, w, spec, intervals);
    let file = rec.source.rsplit(['/', '\\']).next().unwrap_or(&rec.source).to_string();
    let patient = patient_id(&file);
    let src = rec.data.data();
    let mut out = Dataset::empty(c, w);
    let mut buf = Vec::with_capacity(c * w);
    for (&o, &label) in offsets.iter().zip(&labels) {
        buf.clear();
        for ch in 0..c {
            buf.extend_from_slice(&src[ch * n + o..ch * n + o + w]);
        }
        out.push(
            &buf,
            label,
            WindowRef {
                file: file.clone(),
                patient: patient.clone(),
                start_sample: o,
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(a: f64, b: f64) -> SeizureInterval {
        SeizureInterval::new("r.edf", a, b).unwrap()
    }

    #[test]
    fn default_spec_lengths() {
        let s = WindowSpec::default();
        assert_eq!(s.validate().unwrap(), (2048, 1024));
        let bad = WindowSpec { window_s: 8.001, ..s };
        assert!(bad.validate().is_err());
        let inverted = WindowSpec { stride_s: 9.0, ..s };
        assert!(inverted.validate().is_err());
    }

    #[test]
    fn twenty_second_recording() {
        assert_eq!(make_windows(5120, 2048, 1024), vec![0, 1024, 2048, 3072]);
        assert_eq!(make_windows(2048, 2048, 1024), vec![0]);
        assert!(make_windows(2047, 2048, 1024).is_empty());
        assert!(make_windows(0, 2048, 1024).is_empty());
    }

    #[test]
    fn seizure_fixture_labels() {
        let spec = WindowSpec::default();
        let offsets = make_windows(5120, 2048, 1024);
        assert_eq!(label_windows(&offsets, 2048, &spec, &[iv(10.0, 12.0)]), vec![0, 1, 1, 0]);
        assert_eq!(label_windows(&offsets, 2048, &spec, &[]), vec![0; 4]);
        assert_eq!(label_windows(&offsets, 2048, &spec, &[iv(0.0, 20.0)]), vec![1; 4]);
    }

    #[test]
    fn threshold_requires_more_overlap() {
        // [4 s, 12 s) overlaps [10 s, 12 s) by 2 s = 25 % of the window
        let offsets = [1024];
        let at = |theta| {
            let spec = WindowSpec {
                overlap_threshold: theta,
                ..WindowSpec::default()
            };
            label_windows(&offsets, 2048, &spec, &[iv(10.0, 12.0)])[0]
        };
        assert_eq!(at(0.2), 1);
        assert_eq!(at(0.25), 0);
    }

    #[test]
    fn patient_prefix() {
        assert_eq!(patient_id("data/chb01_03.edf"), "chb01");
        assert_eq!(patient_id("synthetic"), "synthetic");
    }

    #[test]
    fn recording_windows_carry_provenance() {
        let rec = Recording {
            labels: vec!["A".into(), "B".into()],
            sample_rate: 4.0,
            data: Tensor::from_fn(&[2, 20], |i| i as f64),
            source: "dir/chb02_01.edf".into(),
        };
        let spec = WindowSpec {
            window_s: 2.0,
            stride_s: 1.0,
            sample_rate: 4.0,
            overlap_threshold: 0.0,
        };
        let ds = windows_from_recording(&rec, &[], &spec).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.window(1), &[4., 5., 6., 7., 8., 9., 10., 11., 24., 25., 26., 27., 28., 29., 30., 31.]);
        assert_eq!(ds.provenance[2].start_sample, 8);
        assert_eq!(ds.provenance[0].patient, "chb02");
        assert_eq!(ds.provenance[0].file, "chb02_01.edf");
        assert_eq!(ds.batch(&[3, 0]).shape(), &[2, 2, 8]);
    }

    proptest! {
        #[test]
        fn window_count_matches_enumeration(n in 0usize..1_000_000, w in 1usize..5000, s_frac in 1usize..=100) {
            let s = (w * s_frac / 100).max(1);
            let offsets = make_windows(n, w, s);
            let expected = if n >= w { (n - w) / s + 1 } else { 0 };
            prop_assert_eq!(offsets.len(), expected);
            prop_assert!(offsets.iter().all(|&o| o % s == 0 && o + w <= n));
            if let Some(&last) = offsets.last() {
                prop_assert!(last + s + w > n);
            }
        }

        #[test]
        fn labels_ignore_order_and_abutting_splits(
            ivs in prop::collection::vec((0u32..200, 1u32..40, 1u32..39), 0..6),
            theta in prop::sample::select(vec![0.0, 0.1, 0.5]),
        ) {
            let spec = WindowSpec { window_s: 8.0, stride_s: 4.0, sample_rate: 4.0, overlap_threshold: theta };
            let offsets = make_windows(1000, 32, 16);
            // quarter-second grid so splits land on exact samples
            let whole: Vec<_> = ivs.iter().map(|&(a, d, _)| iv(a as f64 / 4.0, (a + d) as f64 / 4.0)).collect();
            let base = label_windows(&offsets, 32, &spec, &whole);

            let mut reversed = whole.clone();
            reversed.reverse();
            prop_assert_eq!(&label_windows(&offsets, 32, &spec, &reversed), &base);

            let mut split = Vec::new();
            for &(a, d, cut) in &ivs {
                let m = a + 1 + cut % d.max(1);
                if m < a + d {
                    split.push(iv(a as f64 / 4.0, m as f64 / 4.0));
                    split.push(iv(m as f64 / 4.0, (a + d) as f64 / 4.0));
                } else {
                    split.push(iv(a as f64 / 4.0, (a + d) as f64 / 4.0));
                }
            }
            prop_assert_eq!(&label_windows(&offsets, 32, &spec, &split), &base);
        }
    }
}
