//! The run configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decompose::{SyntheticAmounts, TemplateSettings, BATCHES};
use crate::exec::Execution;
use crate::extra_trees::{ExtraTreesParams, OFFLINE_FEATURES};
use crate::orchestrator::ScoringConfig;
use crate::synth::SynthSettings;

use super::CliError;

/// File locations. Relative paths resolve against the working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Taiwan-schema source CSV.
    pub source: PathBuf,
    /// Single-column transaction amounts; synthetic amounts when absent.
    pub template: Option<PathBuf>,
    /// Offline/online batch CSVs.
    pub batches: PathBuf,
    pub model: PathBuf,
    pub cv_report: PathBuf,
    pub report: PathBuf,
    pub state: PathBuf,
    /// Rule catalog; the built-in catalog when absent.
    pub rules: Option<PathBuf>,
    pub bench: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            source: "data/source.csv".into(),
            template: None,
            batches: "out/batches".into(),
            model: "out/model.json".into(),
            cv_report: "out/cv_report.csv".into(),
            report: "out/report.csv".into(),
            state: "out/state.csv".into(),
            rules: None,
            bench: "out/bench.csv".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeSettings {
    pub seed: u64,
    pub year: i32,
    pub bins: TemplateSettings,
    pub synthetic_amounts: SyntheticAmounts,
}

impl Default for DecomposeSettings {
    fn default() -> Self {
        DecomposeSettings {
            seed: 7,
            year: 2005,
            bins: TemplateSettings::default(),
            synthetic_amounts: SyntheticAmounts::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub folds: usize,
    /// Offline batch the model is fitted on.
    pub batch: usize,
    /// Probability at or above which a CV prediction counts as default.
    pub threshold: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { folds: 10, batch: BATCHES, threshold: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub halvings: usize,
    pub repetitions: usize,
    /// Online batch to time.
    pub batch: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings { halvings: 4, repetitions: 3, batch: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub execution: Execution,
    pub paths: Paths,
    pub synth: SynthSettings,
    pub decompose: DecomposeSettings,
    pub extra_trees: ExtraTreesParams,
    pub train: TrainSettings,
    pub scoring: ScoringConfig,
    pub bench: BenchSettings,
}

fn batch_in_range(what: &str, b: usize) -> Result<(), CliError> {
    if (1..=BATCHES).contains(&b) {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} must be in 1..={BATCHES}, got {b}")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// Range checks for every section; no files are touched.
    pub fn validate(&self) -> Result<(), CliError> {
        self.synth.validate().map_err(CliError::Config)?;
        self.decompose.bins.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if chrono::NaiveDate::from_ymd_opt(self.decompose.year, 1, 1).is_none() {
            return Err(CliError::Config(format!("year {} out of range", self.decompose.year)));
        }
        self.extra_trees.validate(OFFLINE_FEATURES.len()).map_err(|e| CliError::Config(e.to_string()))?;
        if self.train.folds < 2 {
            return Err(CliError::Config(format!("folds must be at least 2, got {}", self.train.folds)));
        }
        batch_in_range("train.batch", self.train.batch)?;
        if !(0.0..=1.0).contains(&self.train.threshold) {
            return Err(CliError::Config(format!("train.threshold must lie in [0, 1], got {}", self.train.threshold)));
        }
        self.scoring.validate().map_err(|e| CliError::Config(e.to_string()))?;
        batch_in_range("bench.batch", self.bench.batch)?;
        if self.bench.halvings < 2 {
            return Err(CliError::Config(format!("bench.halvings must be at least 2, got {}", self.bench.halvings)));
        }
        if self.bench.repetitions == 0 {
            return Err(CliError::Config("bench.repetitions must be positive".into()));
        }
        Ok(())
    }
}
