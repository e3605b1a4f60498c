//! Reference transaction-amount distribution used to split monthly bills.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::binning::{bin_index, equal_frequency_bins, equal_frequency_splits};
use super::DecomposeError;
use crate::ingest::Amount;

/// Binning and split-count settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateSettings {
    /// Equal-frequency bins over both the template amounts and the bills.
    pub n_bins: usize,
    /// Transactions per bill in the smallest bill bin.
    pub min_parts: usize,
    /// Transactions per bill in the largest bill bin.
    pub max_parts: usize,
}

impl Default for TemplateSettings {
    fn default() -> Self {
        TemplateSettings { n_bins: 10, min_parts: 2, max_parts: 24 }
    }
}

impl TemplateSettings {
    pub fn validate(&self) -> Result<(), DecomposeError> {
        if self.n_bins == 0 {
            return Err(DecomposeError::Config("n_bins must be positive".into()));
        }
        if self.min_parts == 0 || self.max_parts < self.min_parts {
            return Err(DecomposeError::Config(format!(
                "need 1 <= min_parts <= max_parts, got {}..{}",
                self.min_parts, self.max_parts
            )));
        }
        Ok(())
    }
}

/// Log-normal stand-in for a reference transaction dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticAmounts {
    pub count: usize,
    /// Mean of the underlying normal (log scale).
    pub log_mean: f64,
    /// Standard deviation of the underlying normal (log scale).
    pub log_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticAmounts {
    fn default() -> Self {
        // Median ~27, mean ~40: the shape of small retail card payments.
        SyntheticAmounts { count: 20_000, log_mean: 3.3, log_sd: 0.9, seed: 2018 }
    }
}

impl SyntheticAmounts {
    pub fn generate(&self) -> Result<Vec<f64>, DecomposeError> {
        if self.count == 0 {
            return Err(DecomposeError::Template("synthetic template needs count > 0".into()));
        }
        let dist = LogNormal::new(self.log_mean, self.log_sd)
            .map_err(|e| DecomposeError::Template(format!("bad log-normal parameters: {e}")))?;
        let mut rng = crate::rng::stream(self.seed, &[0x7e_3b1a7e]);
        Ok((0..self.count).map(|_| dist.sample(&mut rng)).collect())
    }
}

/// Reads a single-column amounts CSV. A non-numeric first row is taken as a
/// header.
pub fn read_amounts(path: impl AsRef<Path>) -> Result<Vec<f64>, DecomposeError> {
    read_amounts_from(File::open(path)?)
}

pub fn read_amounts_from<R: Read>(reader: R) -> Result<Vec<f64>, DecomposeError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let cell = row.get(0).unwrap_or("").trim();
        if cell.is_empty() {
            continue;
        }
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ if i == 0 => continue,
            _ => {
                return Err(DecomposeError::Template(format!(
                    "line {}: `{cell}` is not a finite number",
                    i + 1
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(DecomposeError::Template("template has no amounts".into()));
    }
    Ok(out)
}

/// A reference amount distribution prepared against a set of bills.
///
/// Both the template amounts and the positive bills are cut into the same
/// number of equal-frequency bins, so a bill at quantile `q` draws its
/// transactions from the template amounts at quantile `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionTemplate {
    /// Sorted reference amounts.
    pub amounts: Vec<f64>,
    /// Edges of the template bins.
    pub bin_boundaries: Vec<f64>,
    /// Index split of `amounts` into bins.
    pub bin_splits: Vec<usize>,
    /// Edges of the bill-size bins.
    pub bill_boundaries: Vec<f64>,
    /// Transactions per bill, keyed by bill bin.
    pub counts_per_bin: Vec<usize>,
}

impl DistributionTemplate {
    pub fn prepare(
        mut amounts: Vec<f64>,
        bills: impl IntoIterator<Item = Amount>,
        settings: &TemplateSettings,
    ) -> Result<Self, DecomposeError> {
        settings.validate()?;
        if amounts.is_empty() {
            return Err(DecomposeError::Template("template has no amounts".into()));
        }
        if amounts.iter().any(|v| !v.is_finite()) {
            return Err(DecomposeError::Template("template amounts must be finite".into()));
        }
        amounts.sort_by(f64::total_cmp);

        let mut bills: Vec<f64> = bills.into_iter().filter(|&b| b > 0).map(|b| b as f64).collect();
        bills.sort_by(f64::total_cmp);
        if bills.is_empty() {
            bills.push(1.0);
        }

        let k = settings.n_bins.min(amounts.len()).min(bills.len());
        let bin_boundaries = equal_frequency_bins(&amounts, k)?;
        let bin_splits = equal_frequency_splits(amounts.len(), k);
        let bill_boundaries = equal_frequency_bins(&bills, k)?;

        let counts_per_bin = (0..k)
            .map(|j| {
                let span = (settings.max_parts - settings.min_parts) as f64;
                let t = if k == 1 { 0.5 } else { j as f64 / (k - 1) as f64 };
                settings.min_parts + (span * t).round() as usize
            })
            .collect();

        Ok(DistributionTemplate { amounts, bin_boundaries, bin_splits, bill_boundaries, counts_per_bin })
    }

    pub fn n_bins(&self) -> usize {
        self.counts_per_bin.len()
    }

    /// Bill-size bin for a (positive) bill.
    pub fn bill_bin(&self, bill: Amount) -> usize {
        bin_index(&self.bill_boundaries, bill as f64)
    }

    /// Template amounts belonging to bin `j`.
    pub fn bin_amounts(&self, j: usize) -> &[f64] {
        &self.amounts[self.bin_splits[j]..self.bin_splits[j + 1]]
    }

    pub fn min_amount(&self) -> f64 {
        self.amounts[0]
    }

    pub fn max_amount(&self) -> f64 {
        self.amounts[self.amounts.len() - 1]
    }

    /// Uniform draw from bin `j`.
    pub fn draw<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> f64 {
        let bin = self.bin_amounts(j);
        bin[rng.random_range(0..bin.len())]
    }
}
