use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::ndcore::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Per-class shuffle; windows of one recording may land on both sides.
    WindowStratified,
    /// Whole recordings go to one side.
    #[default]
    RecordGrouped,
}

/// Indices into the window list, each side sorted ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub mode: SplitMode,
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Achieved `|test| / n`.
    pub test_fraction: f64,
    /// Positive fraction within the test side (0 when it is empty).
    pub test_positive_fraction: f64,
    pub overall_positive_fraction: f64,
}

fn finish(mode: SplitMode, seed: u64, labels: &[u8], mut test: Vec<usize>) -> SplitResult {
    test.sort_unstable();
    let mut in_test = vec![false; labels.len()];
    for &i in &test {
        in_test[i] = true;
    }
    let train = (0..labels.len()).filter(|&i| !in_test[i]).collect();
    let pos = |idx: &mut dyn Iterator<Item = usize>| idx.filter(|&i| labels[i] == 1).count();
    let test_pos = pos(&mut test.iter().copied());
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    SplitResult {
        mode,
        seed,
        train,
        test_fraction: frac(test.len(), labels.len()),
        test_positive_fraction: frac(test_pos, test.len()),
        overall_positive_fraction: frac(pos(&mut (0..labels.len())), labels.len()),
        test,
    }
}

/// Splits windows into train and test.
///
/// `groups[i]` names the recording of window `i`. Window-stratified mode
/// sends `round(count · test_frac)` windows of each class to test, chosen
/// by a seeded shuffle. Record-grouped mode shuffles recordings by seed,
/// orders them largest first, and moves a recording to test whenever that
/// reduces `|Δpositive| + |Δnegative|` against the per-class targets.
pub fn stratified_split(
    labels: &[u8],
    groups: &[&str],
    test_frac: f64,
    mode: SplitMode,
    seed: u64,
) -> Result<SplitResult, DatasetError> {
    if !(0.0..=1.0).contains(&test_frac) {
        return Err(DatasetError::Split(format!("test fraction {test_frac} outside [0, 1]")));
    }
    if groups.len() != labels.len() {
        return Err(DatasetError::Split(format!(
            "{} group names for {} windows",
            groups.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(DatasetError::Split(format!("label {bad} is not binary")));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(DatasetError::Split(format!(
            "need both classes, have {} positive and {} negative windows",
            pos.len(),
            neg.len()
        )));
    }

    let test = match mode {
        SplitMode::WindowStratified => {
            let mut test = Vec::new();
            for (tag, mut class) in [(0u64, neg), (1, pos)] {
                let k = (class.len() as f64 * test_frac).round() as usize;
                Rng::new(seed).derive(tag).shuffle(&mut class);
                test.extend_from_slice(&class[..k]);
            }
            test
        }
        SplitMode::RecordGrouped => {
            let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, g) in groups.iter().enumerate() {
                by_group.entry(g).or_default().push(i);
            }
            let mut records: Vec<Vec<usize>> = by_group.into_values().collect();
            Rng::new(seed).derive(2).shuffle(&mut records);
            records.sort_by_key(|r| std::cmp::Reverse(r.len()));

            let target_pos = pos.len() as f64 * test_frac;
            let target_neg = neg.len() as f64 * test_frac;
            let cost = |p: usize, n: usize| (p as f64 - target_pos).abs() + (n as f64 - target_neg).abs();
            let (mut tp, mut tn) = (0, 0);
            let mut test = Vec::new();
            for rec in records {
                let rp = rec.iter().filter(|&&i| labels[i] == 1).count();
                let rn = rec.len() - rp;
                if cost(tp + rp, tn + rn) < cost(tp, tn) {
                    tp += rp;
                    tn += rn;
                    test.extend(rec);
                }
            }
            test
        }
    };
    Ok(finish(mode, seed, labels, test))
}
