//! Stratified k-fold cross-validation.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::{train, Dataset, ExtraTreesParams, TreeError};
use crate::exec::Execution;
use crate::metrics::{self, ConfusionMatrix, Metrics};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub train_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub mean: Metrics,
    pub mean_train_seconds: f64,
}

/// Fold index of every row. Rows of each class are shuffled with `seed` and
/// dealt round-robin, class 0 first, so every fold gets a near-equal share of
/// each class and fold sizes differ by at most one.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, &[0xf01d]);
    let mut order = Vec::with_capacity(labels.len());
    for class in [0u8, 1] {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rows.shuffle(&mut rng);
        order.extend(rows);
    }
    let mut fold = vec![0; labels.len()];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    fold
}

/// Trains on k-1 folds and scores the held-out fold at `threshold`
/// (predicted positive when `p >= threshold`), for each of the `k` folds.
pub fn cross_validate(
    data: &Dataset,
    params: &ExtraTreesParams,
    k: usize,
    threshold: f64,
    exec: Execution,
) -> Result<CvReport, TreeError> {
    if k < 2 {
        return Err(TreeError::Params(format!("k must be at least 2, got {k}")));
    }
    if data.n_rows() < k {
        return Err(TreeError::Params(format!("{} rows cannot fill {k} folds", data.n_rows())));
    }
    let assignment = stratified_folds(&data.labels, k, params.seed);

    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
            (0..data.n_rows()).partition(|&i| assignment[i] == fold);
        let train_set = data.subset(&train_idx);
        let test_set = data.subset(&test_idx);

        let started = Instant::now();
        let model = train(&train_set, params, exec)?;
        let train_seconds = started.elapsed().as_secs_f64();

        let probs = model.predict_dataset(&test_set, exec)?;
        let confusion =
            ConfusionMatrix::from_pairs(probs.iter().zip(&test_set.labels).map(|(&p, &l)| (p >= threshold, l == 1)));
        folds.push(FoldResult {
            fold: fold + 1,
            train_rows: train_idx.len(),
            test_rows: test_idx.len(),
            confusion,
            metrics: metrics::metrics(&confusion)?,
            train_seconds,
        });
    }

    let per_fold: Vec<Metrics> = folds.iter().map(|f| f.metrics).collect();
    let mean_train_seconds = folds.iter().map(|f| f.train_seconds).sum::<f64>() / k as f64;
    Ok(CvReport { mean: metrics::mean(&per_fold), folds, mean_train_seconds })
}

impl CvReport {
    /// `fold,accuracy,precision,recall,f_score,train_seconds`; one row per
    /// fold and a final `mean` row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TreeError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| TreeError::Io(e.into());
        w.write_record(["fold", "accuracy", "precision", "recall", "f_score", "train_seconds"]).map_err(io)?;
        let row = |label: String, m: &Metrics, secs: f64| {
            vec![label, m.accuracy.to_string(), m.precision.to_string(), m.recall.to_string(), m.f_score.to_string(), secs.to_string()]
        };
        for f in &self.folds {
            w.write_record(row(f.fold.to_string(), &f.metrics, f.train_seconds)).map_err(io)?;
        }
        w.write_record(row("mean".into(), &self.mean, self.mean_train_seconds)).map_err(io)?;
        w.flush()?;
        Ok(())
    }
}
