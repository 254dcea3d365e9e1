use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::EegError;

/// Seizure span in seconds from recording start, half-open `[start, end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeizureInterval {
    pub file: String,
    #[serde(rename = "start_s")]
    pub start_s: f64,
    #[serde(rename = "end_s")]
    pub end_s: f64,
}

impl SeizureInterval {
    pub fn new(file: &str, start_s: f64, end_s: f64) -> Result<Self, EegError> {
        if !(start_s >= 0.0 && start_s < end_s && end_s.is_finite()) {
            return Err(EegError::Header(format!(
                "{file}: seizure interval [{start_s}, {end_s}) is not 0 ≤ start < end"
            )));
        }
        Ok(Self {
            file: file.to_string(),
            start_s,
            end_s,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// One "File Name:" block of a summary file.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryEntry {
    pub file: String,
    pub intervals: Vec<SeizureInterval>,
}

struct Block {
    file: String,
    line: usize,
    declared: Option<(usize, usize)>,
    intervals: Vec<SeizureInterval>,
    pending_start: Option<(f64, usize)>,
}

impl Block {
    fn close(self) -> Result<SummaryEntry, EegError> {
        if let Some((_, line)) = self.pending_start {
            return Err(EegError::Summary {
                line,
                message: "seizure start without a matching end".into(),
            });
        }
        match self.declared {
            Some((k, line)) if k != self.intervals.len() => Err(EegError::Summary {
                line,
                message: format!(
                    "{} declares {k} seizures, {} start/end pairs follow",
                    self.file,
                    self.intervals.len()
                ),
            }),
            None if !self.intervals.is_empty() => Err(EegError::Summary {
                line: self.line,
                message: format!("{} lists seizures without a seizure count", self.file),
            }),
            _ => Ok(SummaryEntry {
                file: self.file,
                intervals: self.intervals,
            }),
        }
    }
}

/// `Seizure[ N] Start Time: <s> seconds` → `Some((true, s))`.
fn seizure_line(line: &str, lineno: usize) -> Result<Option<(bool, f64)>, EegError> {
    let Some(rest) = line.strip_prefix("Seizure") else {
        return Ok(None);
    };
    let (label, is_start, after) = if let Some((l, v)) = rest.split_once("Start Time:") {
        (l, true, v)
    } else if let Some((l, v)) = rest.split_once("End Time:") {
        (l, false, v)
    } else {
        return Ok(None);
    };
    if !label.trim().chars().all(|c| c.is_ascii_digit()) {
        return Err(EegError::Summary {
            line: lineno,
            message: format!("unrecognised seizure line {line:?}"),
        });
    }
    let value = after.trim();
    let value = value.strip_suffix("seconds").unwrap_or(value).trim();
    let secs: f64 = value.parse().map_err(|_| EegError::Summary {
        line: lineno,
        message: format!("malformed number {value:?}"),
    })?;
    if !secs.is_finite() || secs < 0.0 {
        return Err(EegError::Summary {
            line: lineno,
            message: format!("seizure time {secs} is negative or non-finite"),
        });
    }
    Ok(Some((is_start, secs)))
}

/// Parses a CHB-MIT style summary. Lines outside the recognised grammar
/// (sampling rate, channel lists, file times) are ignored.
pub fn parse_summary(text: &str) -> Result<Vec<SummaryEntry>, EegError> {
    let mut entries = Vec::new();
    let mut block: Option<Block> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if let Some(name) = line.strip_prefix("File Name:") {
            if let Some(b) = block.take() {
                entries.push(b.close()?);
            }
            let name = name.trim();
            if name.is_empty() {
                return Err(EegError::Summary {
                    line: lineno,
                    message: "empty file name".into(),
                });
            }
            block = Some(Block {
                file: name.to_string(),
                line: lineno,
                declared: None,
                intervals: Vec::new(),
                pending_start: None,
            });
            continue;
        }
        let needs_block = |what: &str| EegError::Summary {
            line: lineno,
            message: format!("{what} before any \"File Name:\" line"),
        };
        if let Some(k) = line.strip_prefix("Number of Seizures in File:") {
            let b = block.as_mut().ok_or_else(|| needs_block("seizure count"))?;
            let k = k.trim().parse().map_err(|_| EegError::Summary {
                line: lineno,
                message: format!("malformed seizure count {:?}", k.trim()),
            })?;
            b.declared = Some((k, lineno));
            continue;
        }
        if let Some((is_start, secs)) = seizure_line(line, lineno)? {
            let b = block.as_mut().ok_or_else(|| needs_block("seizure time"))?;
            match (is_start, b.pending_start.take()) {
                (true, None) => b.pending_start = Some((secs, lineno)),
                (true, Some((_, prev))) => {
                    return Err(EegError::Summary {
                        line: lineno,
                        message: format!("second start time, the one on line {prev} has no end"),
                    })
                }
                (false, None) => {
                    return Err(EegError::Summary {
                        line: lineno,
                        message: "end time before any start time".into(),
                    })
                }
                (false, Some((start, _))) => {
                    if secs <= start {
                        return Err(EegError::Summary {
                            line: lineno,
                            message: format!("end {secs} s not after start {start} s"),
                        });
                    }
                    b.intervals.push(SeizureInterval {
                        file: b.file.clone(),
                        start_s: start,
                        end_s: secs,
                    });
                }
            }
        }
    }
    if let Some(b) = block {
        entries.push(b.close()?);
    }
    Ok(entries)
}

/// Reads `file,start_s,end_s` rows.
pub fn read_annotation_csv(reader: impl Read) -> Result<Vec<SeizureInterval>, EegError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| EegError::Csv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["file", "start_s", "end_s"] {
        return Err(EegError::Csv(format!("header must be file,start_s,end_s, got {headers:?}")));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<SeizureInterval>().enumerate() {
        let row = row.map_err(|e| EegError::Csv(format!("row {}: {e}", i + 2)))?;
        out.push(
            SeizureInterval::new(&row.file, row.start_s, row.end_s)
                .map_err(|e| EegError::Csv(format!("row {}: {e}", i + 2)))?,
        );
    }
    Ok(out)
}

pub fn write_annotation_csv(writer: impl Write, intervals: &[SeizureInterval]) -> Result<(), EegError> {
    let mut w = csv::Writer::from_writer(writer);
    for iv in intervals {
        w.serialize(iv).map_err(|e| EegError::Csv(e.to_string()))?;
    }
    if intervals.is_empty() {
        w.write_record(["file", "start_s", "end_s"]).map_err(|e| EegError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| EegError::Csv(e.to_string()))
}
