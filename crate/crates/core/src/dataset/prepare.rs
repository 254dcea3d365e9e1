use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{patient_id, windows_from_recording, Dataset, DatasetError, DatasetManifest, WindowSpec};
use crate::eeg_io::{map_channels, parse_summary, read_edf, ChannelMap, SeizureInterval};

/// Window and seizure-window counts of one patient.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientCounts {
    pub recordings: usize,
    pub windows: usize,
    pub positive: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub dataset: Dataset,
    pub manifest: DatasetManifest,
    pub per_patient: BTreeMap<String, PatientCounts>,
    /// `(file, reason)` for every recording left out.
    pub skipped: Vec<(String, String)>,
}

fn io(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io(format!("{}: {e}", path.display()))
}

fn walk(dir: &Path, edf: &mut Vec<PathBuf>, summaries: &mut Vec<PathBuf>) -> Result<(), DatasetError> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| io(dir, e))?;
    entries.sort();
    for path in entries {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_ascii_lowercase();
        if path.is_dir() {
            walk(&path, edf, summaries)?;
        } else if name.ends_with(".edf") {
            edf.push(path);
        } else if name.ends_with("-summary.txt") {
            summaries.push(path);
        }
    }
    Ok(())
}

fn file_name(path: &Path) -> String {
    path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string()
}

/// Walks `data_dir` recursively for `*.edf` recordings and `*-summary.txt`
/// seizure summaries, maps every recording onto `channels`, windows and
/// labels it, and concatenates the result in sorted path order.
///
/// Intervals from `annotations` are added to those found in summaries.
/// Recordings that fail to parse or lack a required channel are skipped and
/// logged; malformed summaries are hard errors. No usable recording is an
/// error.
pub fn prepare_directory(
    data_dir: &Path,
    annotations: &[SeizureInterval],
    spec: &WindowSpec,
    channels: &ChannelMap,
) -> Result<Prepared, DatasetError> {
    let (window_len, _) = spec.validate()?;
    if !data_dir.is_dir() {
        return Err(DatasetError::Io(format!("{} is not a directory", data_dir.display())));
    }
    let (mut edf_paths, mut summary_paths) = (Vec::new(), Vec::new());
    walk(data_dir, &mut edf_paths, &mut summary_paths)?;

    let mut intervals: BTreeMap<String, Vec<SeizureInterval>> = BTreeMap::new();
    for path in &summary_paths {
        let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
        let entries = parse_summary(&text).map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))?;
        for entry in entries {
            intervals.entry(entry.file).or_default().extend(entry.intervals);
        }
    }
    for iv in annotations {
        intervals.entry(iv.file.clone()).or_default().push(iv.clone());
    }

    let results: Vec<(String, Result<Dataset, String>)> = edf_paths
        .par_iter()
        .map(|path| {
            let name = file_name(path);
            let result = read_edf(path)
                .and_then(|rec| map_channels(&rec, channels))
                .map_err(DatasetError::from)
                .and_then(|rec| {
                    let ivs = intervals.get(&name).map(Vec::as_slice).unwrap_or(&[]);
                    windows_from_recording(&rec, ivs, spec)
                })
                .map_err(|e| e.to_string());
            (name, result)
        })
        .collect();

    let mut dataset = Dataset::empty(channels.labels.len(), window_len);
    let mut per_patient: BTreeMap<String, PatientCounts> = BTreeMap::new();
    let mut files = Vec::new();
    let mut skipped = Vec::new();
    for (name, result) in results {
        match result {
            Ok(ds) => {
                if !intervals.contains_key(&name) {
                    log::info!("{name}: no seizure annotation, all windows labelled 0");
                }
                let counts = per_patient.entry(patient_id(&name)).or_default();
                counts.recordings += 1;
                counts.windows += ds.len();
                counts.positive += ds.count_positive();
                files.push(name);
                dataset.extend(ds);
            }
            Err(reason) => {
                log::warn!("skipping {name}: {reason}");
                skipped.push((name, reason));
            }
        }
    }
    if files.is_empty() {
        return Err(DatasetError::Io(format!(
            "no recordings found under {} ({} skipped)",
            data_dir.display(),
            skipped.len()
        )));
    }
    let n_positive = dataset.count_positive();
    let manifest = DatasetManifest {
        window: *spec,
        channels: channels.labels.clone(),
        split_mode: None,
        seed: 0,
        n_windows: dataset.len(),
        n_positive,
        n_negative: dataset.len() - n_positive,
        files,
        skipped_files: skipped.iter().map(|(f, _)| f.clone()).collect(),
    };
    Ok(Prepared {
        dataset,
        manifest,
        per_patient,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eeg_io::{fixture_edf, BIPOLAR_CHANNELS};

    fn write_fixture(dir: &Path) {
        let patient = dir.join("chb01");
        fs::create_dir_all(&patient).unwrap();
        fs::write(patient.join("chb01_01.edf"), fixture_edf(&BIPOLAR_CHANNELS, 256, 20, 1).unwrap()).unwrap();
        fs::write(patient.join("chb01_02.edf"), fixture_edf(&BIPOLAR_CHANNELS, 256, 12, 2).unwrap()).unwrap();
        fs::write(
            patient.join("chb01-summary.txt"),
            "File Name: chb01_01.edf\nNumber of Seizures in File: 1\n\
             Seizure Start Time: 10 seconds\nSeizure End Time: 12 seconds\n\n\
             File Name: chb01_02.edf\nNumber of Seizures in File: 0\n",
        )
        .unwrap();
    }

    #[test]
    fn fixture_counts_match_enumeration() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let p = prepare_directory(dir.path(), &[], &WindowSpec::default(), &ChannelMap::default()).unwrap();
        // 20 s → offsets 0, 4, 8, 12 s, seizure [10, 12) hits the middle two;
        // 12 s → offsets 0, 4 s
        assert_eq!(p.dataset.labels, [0, 1, 1, 0, 0, 0]);
        assert_eq!(p.manifest.n_windows, 6);
        assert_eq!(p.manifest.n_positive, 2);
        assert_eq!(p.per_patient["chb01"], PatientCounts { recordings: 2, windows: 6, positive: 2 });
        assert!(p.skipped.is_empty());
    }

    #[test]
    fn annotations_csv_adds_intervals() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let extra = [SeizureInterval::new("chb01_02.edf", 0.0, 1.0).unwrap()];
        let p = prepare_directory(dir.path(), &extra, &WindowSpec::default(), &ChannelMap::default()).unwrap();
        assert_eq!(p.manifest.n_positive, 3);
    }

    #[test]
    fn unusable_files_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        fs::write(dir.path().join("chb01/broken.edf"), b"not an edf").unwrap();
        fs::write(dir.path().join("chb01/short.edf"), fixture_edf(&["FP1-F7"], 256, 10, 3).unwrap()).unwrap();
        let p = prepare_directory(dir.path(), &[], &WindowSpec::default(), &ChannelMap::default()).unwrap();
        assert_eq!(p.skipped.len(), 2);
        assert_eq!(p.manifest.skipped_files, ["broken.edf", "short.edf"]);
        assert_eq!(p.manifest.n_windows, 6);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = prepare_directory(dir.path(), &[], &WindowSpec::default(), &ChannelMap::default()).unwrap_err();
        assert!(err.to_string().contains("no recordings found"));
    }

    #[test]
    fn rerun_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let a = prepare_directory(dir.path(), &[], &WindowSpec::default(), &ChannelMap::default()).unwrap();
        let b = prepare_directory(dir.path(), &[], &WindowSpec::default(), &ChannelMap::default()).unwrap();
        assert_eq!(a, b);
    }
}
