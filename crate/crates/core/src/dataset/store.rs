use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_npy, write_npy, Dataset, DatasetError, NpyArray, NpyData, SplitMode, WindowRef, WindowSpec};

pub const DATA_FILE: &str = "windows.npy";
pub const LABELS_FILE: &str = "labels.npy";
pub const PROVENANCE_FILE: &str = "windows.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance summary written beside the arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub window: WindowSpec,
    pub channels: Vec<String>,
    pub split_mode: Option<SplitMode>,
    pub seed: u64,
    pub n_windows: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub files: Vec<String>,
    pub skipped_files: Vec<String>,
}

fn io(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io(format!("{}: {e}", path.display()))
}

#[derive(Serialize, Deserialize)]
struct ProvenanceRow {
    index: usize,
    file: String,
    patient: String,
    start_sample: usize,
    label: u8,
}

/// Writes `windows.npy` `(n, C, W)` `<f8`, `labels.npy` `(n,)` `<i8`,
/// `windows.csv` and, if given, `manifest.json` into `dir`.
pub fn save_windows(dir: &Path, ds: &Dataset, manifest: Option<&DatasetManifest>) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let data = write_npy(&NpyArray {
        shape: vec![ds.len(), ds.channels, ds.window_len],
        data: NpyData::F64(ds.data.clone()),
    })?;
    let labels = write_npy(&NpyArray {
        shape: vec![ds.len()],
        data: NpyData::I64(ds.labels.iter().map(|&l| l as i64).collect()),
    })?;
    let path = dir.join(DATA_FILE);
    std::fs::write(&path, data).map_err(|e| io(&path, e))?;
    let path = dir.join(LABELS_FILE);
    std::fs::write(&path, labels).map_err(|e| io(&path, e))?;

    let path = dir.join(PROVENANCE_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, e))?;
    if ds.is_empty() {
        w.write_record(["index", "file", "patient", "start_sample", "label"])
            .map_err(|e| io(&path, e))?;
    }
    for (i, (r, &label)) in ds.provenance.iter().zip(&ds.labels).enumerate() {
        w.serialize(ProvenanceRow {
            index: i,
            file: r.file.clone(),
            patient: r.patient.clone(),
            start_sample: r.start_sample,
            label,
        })
        .map_err(|e| io(&path, e))?;
    }
    w.flush().map_err(|e| io(&path, e))?;

    if let Some(m) = manifest {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(m).map_err(|e| io(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| io(&path, e))?;
    }
    Ok(())
}

/// Reads a directory written by [`save_windows`]. The manifest is optional.
pub fn load_windows(dir: &Path) -> Result<(Dataset, Option<DatasetManifest>), DatasetError> {
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read(&path).map_err(|e| io(&path, e))
    };
    let data = read_npy(&read(DATA_FILE)?)?;
    let labels = read_npy(&read(LABELS_FILE)?)?;
    let (NpyData::F64(values), [n, c, w]) = (data.data, data.shape.as_slice()) else {
        return Err(DatasetError::Format(format!("{DATA_FILE} must be a rank-3 <f8 array")));
    };
    let (NpyData::I64(label_values), [m]) = (labels.data, labels.shape.as_slice()) else {
        return Err(DatasetError::Format(format!("{LABELS_FILE} must be a rank-1 <i8 array")));
    };
    if m != n {
        return Err(DatasetError::Format(format!("{n} windows but {m} labels")));
    }
    let labels = label_values
        .iter()
        .map(|&l| u8::try_from(l).ok().filter(|&l| l <= 1))
        .collect::<Option<Vec<u8>>>()
        .ok_or_else(|| DatasetError::Format("labels must be 0 or 1".into()))?;

    let path = dir.join(PROVENANCE_FILE);
    let provenance = if path.exists() {
        let mut r = csv::Reader::from_path(&path).map_err(|e| io(&path, e))?;
        let rows = r
            .deserialize::<ProvenanceRow>()
            .map(|row| {
                row.map(|r| WindowRef {
                    file: r.file,
                    patient: r.patient,
                    start_sample: r.start_sample,
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| io(&path, e))?;
        if rows.len() != *n {
            return Err(DatasetError::Format(format!("{PROVENANCE_FILE} has {} rows for {n} windows", rows.len())));
        }
        rows
    } else {
        vec![
            WindowRef {
                file: "unknown".into(),
                patient: "unknown".into(),
                start_sample: 0
            };
            *n
        ]
    };

    let path = dir.join(MANIFEST_FILE);
    let manifest = if path.exists() {
        let text = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| io(&path, e))?)
    } else {
        None
    };
    Ok((
        Dataset {
            channels: *c,
            window_len: *w,
            data: values,
            labels,
            provenance,
        },
        manifest,
    ))
}
