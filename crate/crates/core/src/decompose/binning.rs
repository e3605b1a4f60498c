//! Linear range conversion and equal-frequency (quantile) binning.

use super::DecomposeError;

/// Source range `[min1, max1]` mapped onto target range `[min2, max2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RescaleRange {
    pub min1: f64,
    pub max1: f64,
    pub min2: f64,
    pub max2: f64,
}

impl RescaleRange {
    pub fn new(min1: f64, max1: f64, min2: f64, max2: f64) -> Result<Self, DecomposeError> {
        let r = RescaleRange { min1, max1, min2, max2 };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<(), DecomposeError> {
        let all = [self.min1, self.max1, self.min2, self.max2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(DecomposeError::Range("bounds must be finite".into()));
        }
        if self.max1 == self.min1 {
            return Err(DecomposeError::Range(format!(
                "degenerate source range [{}, {}]",
                self.min1, self.max1
            )));
        }
        if self.max1 < self.min1 || self.max2 < self.min2 {
            return Err(DecomposeError::Range("range bounds are reversed".into()));
        }
        Ok(())
    }
}

/// `V2 = (Max2 - Min2) * (V1 - Min1) / (Max1 - Min1) + Min2`, with `v`
/// clamped into the source range first.
pub fn rescale(v: f64, range: &RescaleRange) -> Result<f64, DecomposeError> {
    range.validate()?;
    let v = v.clamp(range.min1, range.max1);
    let out = (range.max2 - range.min2) * (v - range.min1) / (range.max1 - range.min1) + range.min2;
    Ok(out.clamp(range.min2, range.max2))
}

/// Start index of each of `n_bins` contiguous bins over `n` sorted items,
/// plus the terminal `n`. Bin sizes differ by at most one.
pub fn equal_frequency_splits(n: usize, n_bins: usize) -> Vec<usize> {
    (0..=n_bins).map(|j| j * n / n_bins).collect()
}

/// Bin edges read off the empirical inverse CDF: edge `j` is the sample at
/// quantile `j / n_bins`, and the last edge is the maximum.
///
/// Returns `n_bins + 1` non-decreasing edges. Membership is by index split
/// (see [`equal_frequency_splits`]), so ties never unbalance the counts.
pub fn equal_frequency_bins(samples: &[f64], n_bins: usize) -> Result<Vec<f64>, DecomposeError> {
    if samples.is_empty() {
        return Err(DecomposeError::Binning("no samples".into()));
    }
    if n_bins == 0 {
        return Err(DecomposeError::Binning("bin count must be positive".into()));
    }
    if n_bins > samples.len() {
        return Err(DecomposeError::Binning(format!(
            "{n_bins} bins requested for {} samples",
            samples.len()
        )));
    }
    if samples.windows(2).any(|w| w[0] > w[1]) || samples.iter().any(|v| v.is_nan()) {
        return Err(DecomposeError::Binning("samples must be sorted and not NaN".into()));
    }
    let splits = equal_frequency_splits(samples.len(), n_bins);
    let mut edges: Vec<f64> = splits[..n_bins].iter().map(|&i| samples[i]).collect();
    edges.push(samples[samples.len() - 1]);
    Ok(edges)
}

/// Bin holding `v`: the last bin whose lower edge is `<= v`, clamped to the
/// outer bins for out-of-range values.
pub fn bin_index(edges: &[f64], v: f64) -> usize {
    let n_bins = edges.len().saturating_sub(1).max(1);
    let inner = &edges[1..n_bins.min(edges.len())];
    inner.partition_point(|&e| e <= v).min(n_bins - 1)
}
