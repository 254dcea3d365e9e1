use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `≥ threshold` are called positive; `+∞` for the origin.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    /// `[[TN, FP], [FN, TP]]`
    pub confusion: [[usize; 2]; 2],
    /// Indexed by class.
    pub per_class: [ClassMetrics; 2],
    pub weighted_f1: f64,
    pub accuracy: f64,
    /// Absent when only one class is present.
    pub auc: Option<f64>,
    pub roc: Vec<RocPoint>,
    /// Quantities reported as 0 because their denominator was 0, or
    /// otherwise undefined.
    pub flags: Vec<String>,
}

fn ratio(num: usize, den: usize, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(format!("{name}: zero denominator"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_binary(labels: &[u8]) -> Result<(usize, usize), TrainError> {
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(TrainError::Metrics(format!("label {bad} is not binary")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Mann–Whitney AUC: `P(s₊ > s₋) + ½·P(s₊ = s₋)`, from mid-ranks.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64, TrainError> {
    if labels.len() != scores.len() {
        return Err(TrainError::Metrics(format!("{} labels, {} scores", labels.len(), scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TrainError::Metrics("NaN score".into()));
    }
    let (pos, neg) = check_binary(labels)?;
    if pos == 0 || neg == 0 {
        return Err(TrainError::Metrics("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// ROC polyline over distinct thresholds, descending; starts at (0,0) and
/// ends at (1,1).
pub fn roc_points(labels: &[u8], scores: &[f64]) -> Result<Vec<RocPoint>, TrainError> {
    let _ = auc(labels, scores)?;
    let (pos, neg) = check_binary(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a polyline.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Thresholded metrics from hard `predictions`, ranking metrics from
/// class-1 `scores`.
pub fn compute_metrics(labels: &[u8], predictions: &[u8], scores: &[f64]) -> Result<MetricsReport, TrainError> {
    let n = labels.len();
    if n == 0 {
        return Err(TrainError::Metrics("no samples".into()));
    }
    if predictions.len() != n || scores.len() != n {
        return Err(TrainError::Metrics(format!(
            "{n} labels, {} predictions, {} scores",
            predictions.len(),
            scores.len()
        )));
    }
    let (pos, neg) = check_binary(labels)?;
    check_binary(predictions)?;
    let mut confusion = [[0usize; 2]; 2];
    for (&y, &p) in labels.iter().zip(predictions) {
        confusion[y as usize][p as usize] += 1;
    }
    let mut flags = Vec::new();
    let per_class = [0usize, 1].map(|c| {
        let tp = confusion[c][c];
        let predicted = confusion[0][c] + confusion[1][c];
        let actual = confusion[c][0] + confusion[c][1];
        let precision = ratio(tp, predicted, &format!("precision[{c}]"), &mut flags);
        let recall = ratio(tp, actual, &format!("recall[{c}]"), &mut flags);
        let f1 = if precision + recall == 0.0 {
            flags.push(format!("f1[{c}]: zero denominator"));
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support: actual,
        }
    });
    let weighted_f1 = per_class.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / n as f64;
    let accuracy = (confusion[0][0] + confusion[1][1]) as f64 / n as f64;
    let (auc, roc) = if pos > 0 && neg > 0 {
        (Some(auc(labels, scores)?), roc_points(labels, scores)?)
    } else {
        flags.push("auc: single class".into());
        (None, Vec::new())
    };
    Ok(MetricsReport {
        n,
        confusion,
        per_class,
        weighted_f1,
        accuracy,
        auc,
        roc,
        flags,
    })
}

/// ROC CSV `threshold,fpr,tpr`.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        out += &format!("{},{},{}\n", p.threshold, p.fpr, p.tpr);
    }
    out
}
