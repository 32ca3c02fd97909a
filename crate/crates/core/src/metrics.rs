//! Counting metrics: per-class MAE and root-mean-square error over images,
//! and their means across classes.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Predicted count of one density channel: the sum of its cells.
pub fn count_from_density(channel: &[f64]) -> f64 {
    channel.iter().sum()
}

/// `(predicted, ground_truth)` count for one image and one class.
pub type CountPair = (f64, f64);

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mae_per_class: Vec<f64>,
    /// Root-mean-square count error per class (named MSE by convention).
    pub mse_per_class: Vec<f64>,
    pub mae_mean: f64,
    pub mse_mean: f64,
    /// One row per image, one pair per class.
    pub per_image_counts: Vec<Vec<CountPair>>,
}

/// Mean of the per-class values.
pub fn class_mean(per_class: &[f64]) -> f64 {
    per_class.iter().sum::<f64>() / per_class.len() as f64
}

/// Computes the report from per-image, per-class counts.
pub fn evaluate_metrics(rows: Vec<Vec<CountPair>>) -> Result<MetricsReport> {
    let m = rows.len();
    if m == 0 {
        return Err(Error::Config("metrics need at least one image".into()));
    }
    let n = rows[0].len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::shape("channel", "images disagree on class count"));
    }
    let mut mae = vec![0.0; n];
    let mut sq = vec![0.0; n];
    for row in &rows {
        for (k, &(pred, gt)) in row.iter().enumerate() {
            let e = pred - gt;
            mae[k] += e.abs();
            sq[k] += e * e;
        }
    }
    let mae: Vec<f64> = mae.into_iter().map(|s| s / m as f64).collect();
    let mse: Vec<f64> = sq.into_iter().map(|s| (s / m as f64).sqrt()).collect();
    Ok(MetricsReport {
        mae_mean: class_mean(&mae),
        mse_mean: class_mean(&mse),
        mae_per_class: mae,
        mse_per_class: mse,
        per_image_counts: rows,
    })
}

impl MetricsReport {
    pub fn num_images(&self) -> usize {
        self.per_image_counts.len()
    }

    pub fn num_classes(&self) -> usize {
        self.mae_per_class.len()
    }

    /// Report over the union of two disjoint image sets.
    pub fn merge(&self, other: &MetricsReport) -> Result<MetricsReport> {
        let mut rows = self.per_image_counts.clone();
        rows.extend(other.per_image_counts.iter().cloned());
        evaluate_metrics(rows)
    }

    /// Flat `key = value` text, one metric per line, six decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images = {}", self.num_images());
        let _ = writeln!(s, "classes = {}", self.num_classes());
        let _ = writeln!(s, "mae_mean = {:.6}", self.mae_mean);
        let _ = writeln!(s, "mse_mean = {:.6}", self.mse_mean);
        for k in 0..self.num_classes() {
            let _ = writeln!(s, "mae_class_{k} = {:.6}", self.mae_per_class[k]);
            let _ = writeln!(s, "mse_class_{k} = {:.6}", self.mse_per_class[k]);
        }
        s
    }
}

/// Parses the text written by [`MetricsReport::to_text`] into key/value pairs.
pub fn parse_metrics_text(text: &str) -> Result<Vec<(String, f64)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (k, v) = l.split_once('=').ok_or_else(|| Error::Parse {
                path: "<metrics>".into(),
                line: i + 1,
                detail: format!("expected key = value, got {l:?}"),
            })?;
            let v: f64 = v.trim().parse().map_err(|_| Error::Parse {
                path: "<metrics>".into(),
                line: i + 1,
                detail: format!("bad number {:?}", v.trim()),
            })?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}
