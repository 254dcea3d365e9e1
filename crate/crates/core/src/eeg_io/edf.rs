use std::path::Path;

use super::EegError;
use crate::ndcore::Tensor;

/// Per-signal header fields.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes: usize,
    pub reserved: String,
    pub n_records: usize,
    pub record_duration_s: f64,
    pub signals: Vec<SignalHeader>,
}

impl EdfHeader {
    /// Header size implied by the signal count.
    pub fn expected_header_bytes(n_signals: usize) -> usize {
        256 + 256 * n_signals
    }

    /// Bytes in one data record.
    pub fn record_bytes(&self) -> usize {
        2 * self.signals.iter().map(|s| s.samples_per_record).sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), EegError> {
        let expected = Self::expected_header_bytes(self.signals.len());
        if self.header_bytes != expected {
            return Err(EegError::HeaderBytes {
                offset: 184,
                declared: self.header_bytes,
                signals: self.signals.len(),
                expected,
            });
        }
        if !(self.record_duration_s.is_finite() && self.record_duration_s > 0.0) {
            return Err(EegError::Header(format!(
                "record duration {} s is not positive",
                self.record_duration_s
            )));
        }
        for (i, s) in self.signals.iter().enumerate() {
            if s.digital_min >= s.digital_max {
                return Err(EegError::Header(format!(
                    "signal {i} ({}): digital min {} not below max {}",
                    s.label, s.digital_min, s.digital_max
                )));
            }
            if s.digital_min < i16::MIN as i32 || s.digital_max > i16::MAX as i32 {
                return Err(EegError::Header(format!(
                    "signal {i} ({}): digital range [{}, {}] exceeds 16 bits",
                    s.label, s.digital_min, s.digital_max
                )));
            }
            if s.physical_min == s.physical_max || !s.physical_min.is_finite() || !s.physical_max.is_finite() {
                return Err(EegError::Header(format!(
                    "signal {i} ({}): degenerate physical range [{}, {}]",
                    s.label, s.physical_min, s.physical_max
                )));
            }
            if s.samples_per_record == 0 {
                return Err(EegError::Header(format!("signal {i} ({}): zero samples per record", s.label)));
            }
        }
        Ok(())
    }
}

/// A parsed file: header plus raw digital samples, one vector per signal
/// spanning all records.
#[derive(Clone, Debug, PartialEq)]
pub struct Edf {
    pub header: EdfHeader,
    pub samples: Vec<Vec<i16>>,
}

/// Channels in physical units, ready for windowing.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub labels: Vec<String>,
    pub sample_rate: f64,
    /// `[channels × samples]`
    pub data: Tensor,
    pub source: String,
}

impl Recording {
    pub fn n_samples(&self) -> usize {
        self.data.shape().get(1).copied().unwrap_or(0)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate
    }
}

/// EDF linear calibration from digital to physical units.
pub fn physical_scale(d: i32, sig: &SignalHeader) -> f64 {
    if d == sig.digital_max {
        return sig.physical_max;
    }
    let span = (sig.physical_max - sig.physical_min) / (sig.digital_max as f64 - sig.digital_min as f64);
    sig.physical_min + (d as f64 - sig.digital_min as f64) * span
}

impl Edf {
    /// Physical-unit recording. All signals must share one sample rate.
    pub fn recording(&self, source: &str) -> Result<Recording, EegError> {
        let h = &self.header;
        let spr = h.signals.first().map_or(0, |s| s.samples_per_record);
        if let Some(s) = h.signals.iter().find(|s| s.samples_per_record != spr) {
            return Err(EegError::Header(format!(
                "signal {} has {} samples per record, expected uniform {spr}",
                s.label, s.samples_per_record
            )));
        }
        let n = h.n_records * spr;
        let mut data = Vec::with_capacity(h.signals.len() * n);
        for (sig, samples) in h.signals.iter().zip(&self.samples) {
            data.extend(samples.iter().map(|&d| physical_scale(d as i32, sig)));
        }
        Ok(Recording {
            labels: h.signals.iter().map(|s| s.label.clone()).collect(),
            sample_rate: spr as f64 / h.record_duration_s,
            data: Tensor::new(&[h.signals.len(), n], data).map_err(|e| EegError::Header(e.to_string()))?,
            source: source.to_string(),
        })
    }
}

struct Fields<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Fields<'_> {
    fn text(&mut self, width: usize, field: &'static str) -> Result<String, EegError> {
        let offset = self.pos;
        let raw = &self.bytes[offset..offset + width];
        self.pos += width;
        if !raw.iter().all(|b| (0x20..0x7f).contains(b)) {
            return Err(EegError::Field {
                offset,
                field,
                value: String::from_utf8_lossy(raw).into_owned(),
            });
        }
        Ok(std::str::from_utf8(raw).expect("ascii").trim().to_string())
    }

    fn number<T: std::str::FromStr>(&mut self, width: usize, field: &'static str) -> Result<T, EegError> {
        let offset = self.pos;
        let s = self.text(width, field)?;
        s.parse().map_err(|_| EegError::Field { offset, field, value: s })
    }
}

/// Parses a complete EDF file. Every malformed input yields an error naming
/// the byte offset; nothing partial is returned.
pub fn parse_edf(bytes: &[u8]) -> Result<Edf, EegError> {
    if bytes.len() < 256 {
        return Err(EegError::Short { len: bytes.len() });
    }
    let mut f = Fields { bytes, pos: 0 };
    let version = f.text(8, "version")?;
    let patient_id = f.text(80, "patient id")?;
    let recording_id = f.text(80, "recording id")?;
    let start_date = f.text(8, "start date")?;
    let start_time = f.text(8, "start time")?;
    let header_bytes: usize = f.number(8, "header bytes")?;
    let reserved = f.text(44, "reserved")?;
    let n_records: usize = f.number(8, "number of records")?;
    let record_duration_s: f64 = f.number(8, "record duration")?;
    let ns_offset = f.pos;
    let n_signals: usize = f.number(4, "number of signals")?;

    let expected = EdfHeader::expected_header_bytes(n_signals);
    if header_bytes != expected {
        return Err(EegError::HeaderBytes {
            offset: 184,
            declared: header_bytes,
            signals: n_signals,
            expected,
        });
    }
    if bytes.len() < expected {
        return Err(EegError::Field {
            offset: ns_offset,
            field: "number of signals",
            value: format!("{n_signals} (file has only {} bytes)", bytes.len()),
        });
    }

    let texts = |f: &mut Fields, w, name| (0..n_signals).map(|_| f.text(w, name)).collect::<Result<Vec<_>, _>>();
    let labels = texts(&mut f, 16, "label")?;
    let transducers = texts(&mut f, 80, "transducer")?;
    let dims = texts(&mut f, 8, "physical dimension")?;
    let pmins = (0..n_signals).map(|_| f.number::<f64>(8, "physical min")).collect::<Result<Vec<_>, _>>()?;
    let pmaxs = (0..n_signals).map(|_| f.number::<f64>(8, "physical max")).collect::<Result<Vec<_>, _>>()?;
    let dmins = (0..n_signals).map(|_| f.number::<i32>(8, "digital min")).collect::<Result<Vec<_>, _>>()?;
    let dmaxs = (0..n_signals).map(|_| f.number::<i32>(8, "digital max")).collect::<Result<Vec<_>, _>>()?;
    let prefilters = texts(&mut f, 80, "prefiltering")?;
    let sprs = (0..n_signals)
        .map(|_| f.number::<usize>(8, "samples per record"))
        .collect::<Result<Vec<_>, _>>()?;
    let reserveds = texts(&mut f, 32, "signal reserved")?;

    let signals = (0..n_signals)
        .map(|i| SignalHeader {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dimension: dims[i].clone(),
            physical_min: pmins[i],
            physical_max: pmaxs[i],
            digital_min: dmins[i],
            digital_max: dmaxs[i],
            prefiltering: prefilters[i].clone(),
            samples_per_record: sprs[i],
            reserved: reserveds[i].clone(),
        })
        .collect();
    let header = EdfHeader {
        version,
        patient_id,
        recording_id,
        start_date,
        start_time,
        header_bytes,
        reserved,
        n_records,
        record_duration_s,
        signals,
    };
    header.validate()?;

    let record_bytes = header.record_bytes();
    let mut samples: Vec<Vec<i16>> = header
        .signals
        .iter()
        .map(|s| Vec::with_capacity(s.samples_per_record * n_records))
        .collect();
    let mut pos = header_bytes;
    for record in 0..n_records {
        let available = bytes.len() - pos;
        if available < record_bytes {
            return Err(EegError::Truncated {
                offset: pos,
                record,
                needed: record_bytes,
                available,
            });
        }
        for (sig, out) in header.signals.iter().zip(samples.iter_mut()) {
            let chunk = &bytes[pos..pos + 2 * sig.samples_per_record];
            out.extend(chunk.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])));
            pos += chunk.len();
        }
    }
    if pos != bytes.len() {
        return Err(EegError::Trailing {
            offset: pos,
            extra: bytes.len() - pos,
        });
    }
    Ok(Edf { header, samples })
}

fn put(out: &mut Vec<u8>, value: &str, width: usize, field: &'static str) -> Result<(), EegError> {
    if value.len() > width || !value.bytes().all(|b| (0x20..0x7f).contains(&b)) {
        return Err(EegError::Field {
            offset: out.len(),
            field,
            value: value.to_string(),
        });
    }
    out.extend_from_slice(value.as_bytes());
    out.resize(out.len() + width - value.len(), b' ');
    Ok(())
}

/// Serialises a header and its digital samples; the exact inverse of
/// [`parse_edf`].
pub fn write_edf(header: &EdfHeader, samples: &[Vec<i16>]) -> Result<Vec<u8>, EegError> {
    header.validate()?;
    if samples.len() != header.signals.len() {
        return Err(EegError::Header(format!(
            "{} sample vectors for {} signals",
            samples.len(),
            header.signals.len()
        )));
    }
    for (i, (sig, s)) in header.signals.iter().zip(samples).enumerate() {
        if s.len() != sig.samples_per_record * header.n_records {
            return Err(EegError::Header(format!(
                "signal {i}: {} samples, header implies {}",
                s.len(),
                sig.samples_per_record * header.n_records
            )));
        }
        if let Some(&v) = s.iter().find(|&&v| (v as i32) < sig.digital_min || (v as i32) > sig.digital_max) {
            return Err(EegError::Range {
                signal: i,
                value: v as i64,
                min: sig.digital_min as i64,
                max: sig.digital_max as i64,
            });
        }
    }

    let mut out = Vec::with_capacity(header.header_bytes + header.record_bytes() * header.n_records);
    put(&mut out, &header.version, 8, "version")?;
    put(&mut out, &header.patient_id, 80, "patient id")?;
    put(&mut out, &header.recording_id, 80, "recording id")?;
    put(&mut out, &header.start_date, 8, "start date")?;
    put(&mut out, &header.start_time, 8, "start time")?;
    put(&mut out, &header.header_bytes.to_string(), 8, "header bytes")?;
    put(&mut out, &header.reserved, 44, "reserved")?;
    put(&mut out, &header.n_records.to_string(), 8, "number of records")?;
    put(&mut out, &header.record_duration_s.to_string(), 8, "record duration")?;
    put(&mut out, &header.signals.len().to_string(), 4, "number of signals")?;

    let sigs = &header.signals;
    for s in sigs {
        put(&mut out, &s.label, 16, "label")?;
    }
    for s in sigs {
        put(&mut out, &s.transducer, 80, "transducer")?;
    }
    for s in sigs {
        put(&mut out, &s.physical_dimension, 8, "physical dimension")?;
    }
    for s in sigs {
        put(&mut out, &s.physical_min.to_string(), 8, "physical min")?;
    }
    for s in sigs {
        put(&mut out, &s.physical_max.to_string(), 8, "physical max")?;
    }
    for s in sigs {
        put(&mut out, &s.digital_min.to_string(), 8, "digital min")?;
    }
    for s in sigs {
        put(&mut out, &s.digital_max.to_string(), 8, "digital max")?;
    }
    for s in sigs {
        put(&mut out, &s.prefiltering, 80, "prefiltering")?;
    }
    for s in sigs {
        put(&mut out, &s.samples_per_record.to_string(), 8, "samples per record")?;
    }
    for s in sigs {
        put(&mut out, &s.reserved, 32, "signal reserved")?;
    }

    for r in 0..header.n_records {
        for (sig, s) in sigs.iter().zip(samples) {
            let spr = sig.samples_per_record;
            for v in &s[r * spr..(r + 1) * spr] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Reads and decodes an EDF file into physical units.
pub fn read_edf(path: &Path) -> Result<Recording, EegError> {
    let bytes = std::fs::read(path).map_err(|e| EegError::Io(format!("{}: {e}", path.display())))?;
    parse_edf(&bytes)?.recording(&path.display().to_string())
}

/// Synthetic EDF with the given labels, one-second records and uniform
/// digital noise; used for fixtures and examples.
pub fn fixture_edf(labels: &[&str], sample_rate: usize, seconds: usize, seed: u64) -> Result<Vec<u8>, EegError> {
    let mut rng = crate::ndcore::Rng::new(seed).derive(0xedf);
    let signals = labels
        .iter()
        .map(|l| SignalHeader {
            label: (*l).to_string(),
            transducer: String::new(),
            physical_dimension: "uV".into(),
            physical_min: -3276.8,
            physical_max: 3276.7,
            digital_min: -32768,
            digital_max: 32767,
            prefiltering: String::new(),
            samples_per_record: sample_rate,
            reserved: String::new(),
        })
        .collect::<Vec<_>>();
    let header = EdfHeader {
        version: "0".into(),
        patient_id: "fixture".into(),
        recording_id: "synthetic".into(),
        start_date: "01.01.01".into(),
        start_time: "00.00.00".into(),
        header_bytes: EdfHeader::expected_header_bytes(signals.len()),
        reserved: String::new(),
        n_records: seconds,
        record_duration_s: 1.0,
        signals,
    };
    let samples: Vec<Vec<i16>> = labels
        .iter()
        .map(|_| (0..sample_rate * seconds).map(|_| rng.below(4001) as i16 - 2000).collect())
        .collect();
    write_edf(&header, &samples)
}
