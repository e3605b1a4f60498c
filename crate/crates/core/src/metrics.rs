//! Confusion-matrix metrics and per-batch reports.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("confusion matrix is empty")]
    Empty,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    /// Counts `(predicted, actual)` pairs, `true` being the positive class.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut cm = ConfusionMatrix::default();
        for p in pairs {
            cm.record(p.0, p.1);
        }
        cm
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Which ratios had a zero denominator and were reported as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Undefined {
    pub precision: bool,
    pub recall: bool,
    pub f_score: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// F1: harmonic mean of precision and recall.
    pub f_score: f64,
    #[serde(skip)]
    pub undefined: Undefined,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let accuracy = (cm.tp + cm.tn) as f64 / total as f64;
    let (precision, p_undef) = ratio(cm.tp, cm.tp + cm.fp);
    let (recall, r_undef) = ratio(cm.tp, cm.tp + cm.fn_);
    let (f_score, f_undef) = if precision + recall == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / (precision + recall), false)
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f_score,
        undefined: Undefined { precision: p_undef, recall: r_undef, f_score: f_undef },
    })
}

/// Unweighted mean over folds or batches.
pub fn mean(items: &[Metrics]) -> Metrics {
    if items.is_empty() {
        return Metrics::default();
    }
    let n = items.len() as f64;
    let avg = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / n;
    Metrics {
        accuracy: avg(|m| m.accuracy),
        precision: avg(|m| m.precision),
        recall: avg(|m| m.recall),
        f_score: avg(|m| m.f_score),
        undefined: Undefined {
            precision: items.iter().any(|m| m.undefined.precision),
            recall: items.iter().any(|m| m.undefined.recall),
            f_score: items.iter().any(|m| m.undefined.f_score),
        },
    }
}

/// One row of the batch-wise performance table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub batch: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// Seconds spent producing offline risk for the batch.
    pub offline_time: f64,
    /// Seconds spent scoring the batch's online transactions.
    pub online_time: f64,
}

pub const REPORT_HEADER: [&str; 7] =
    ["batch", "accuracy", "precision", "recall", "f_score", "offline_time", "online_time"];

impl BatchReport {
    pub fn new(batch: usize, m: &Metrics, offline_time: f64, online_time: f64) -> Self {
        BatchReport {
            batch,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f_score: m.f_score,
            offline_time,
            online_time,
        }
    }
}

pub fn write_reports<W: Write>(reports: &[BatchReport], writer: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    if reports.is_empty() {
        w.write_record(REPORT_HEADER)?;
    }
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_reports<R: Read>(reader: R) -> Result<Vec<BatchReport>, MetricsError> {
    let mut rdr = csv::Reader::from_reader(reader);
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}
