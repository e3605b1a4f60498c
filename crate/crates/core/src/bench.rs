//! Batch-size scaling benchmark.
//!
//! Times a scorer on prefixes of a batch that halve in size, takes the
//! median of a few repetitions per size and fits `seconds = a * size + b`.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least 2 halvings, got {0}")]
    Halvings(usize),
    #[error("batch of {size} cannot be halved {halvings} times")]
    TooSmall { size: usize, halvings: usize },
    #[error("need at least one repetition")]
    Repetitions,
    #[error("scorer failed at size {size}: {message}")]
    Scorer { size: usize, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub size: usize,
    pub seconds: f64,
    pub repetition: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares on `(x, y)`. A perfectly flat `y` has R² 1.
pub fn least_squares(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    LinearFit { slope, intercept, r_squared }
}

#[derive(Clone, Debug)]
pub struct ScalingReport {
    pub samples: Vec<Sample>,
    /// `(size, median seconds)`, largest size first.
    pub medians: Vec<(usize, f64)>,
    pub fit: LinearFit,
    pub warnings: Vec<String>,
}

/// Sizes `n, n/2, n/4, ...`, `halvings + 1` of them.
pub fn halving_sizes(n: usize, halvings: usize) -> Result<Vec<usize>, BenchError> {
    if halvings < 2 {
        return Err(BenchError::Halvings(halvings));
    }
    if halvings >= usize::BITS as usize || n >> halvings == 0 {
        return Err(BenchError::TooSmall { size: n, halvings });
    }
    Ok((0..=halvings).map(|h| n >> h).collect())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Smallest positive step the monotonic clock reports.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..64 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Runs `scorer` on each halving prefix of `batch`, `reps` times per size.
pub fn bench_scaling<T, E, F>(batch: &[T], halvings: usize, reps: usize, mut scorer: F) -> Result<ScalingReport, BenchError>
where
    E: std::fmt::Display,
    F: FnMut(&[T]) -> Result<(), E>,
{
    if reps == 0 {
        return Err(BenchError::Repetitions);
    }
    let sizes = halving_sizes(batch.len(), halvings)?;
    let mut samples = Vec::with_capacity(sizes.len() * reps);
    let mut medians = Vec::with_capacity(sizes.len());
    for &size in &sizes {
        let mut times = Vec::with_capacity(reps);
        for repetition in 1..=reps {
            let t = Instant::now();
            scorer(&batch[..size]).map_err(|e| BenchError::Scorer { size, message: e.to_string() })?;
            let seconds = t.elapsed().as_secs_f64();
            times.push(seconds);
            samples.push(Sample { size, seconds, repetition });
        }
        medians.push((size, median(&mut times)));
    }

    let mut warnings = Vec::new();
    let resolution = timer_resolution().as_secs_f64();
    let smallest = medians.last().map(|m| m.1).unwrap_or(0.0);
    if smallest < 100.0 * resolution {
        warnings.push(format!(
            "smallest batch took {smallest:.3e} s, within 100x of the {resolution:.1e} s timer resolution"
        ));
    }
    let points: Vec<(f64, f64)> = medians.iter().map(|&(s, t)| (s as f64, t)).collect();
    Ok(ScalingReport { samples, medians, fit: least_squares(&points), warnings })
}

impl ScalingReport {
    /// `size,seconds,repetition` rows followed by `#` comment lines with the
    /// fit and any warnings.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(writer);
        if self.samples.is_empty() {
            w.write_record(["size", "seconds", "repetition"])?;
        }
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        let mut out = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
        writeln!(out, "# slope_seconds_per_item={:e}", self.fit.slope)?;
        writeln!(out, "# intercept_seconds={:e}", self.fit.intercept)?;
        writeln!(out, "# r_squared={}", self.fit.r_squared)?;
        for w in &self.warnings {
            writeln!(out, "# warning: {w}")?;
        }
        Ok(())
    }
}
