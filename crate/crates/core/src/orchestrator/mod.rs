//! Rolling per-account risk: offline prior, online fusion, monthly batches.
//!
//! Each account starts from the classifier's default probability. Every
//! online transaction is fused with the carried risk as
//! `r_total = lambda * r_online + (1 - lambda) * r_offline`; a transaction
//! with positive online risk carries `r_total` forward as the new
//! `r_offline`. At each month end the carried risk is synchronised with a
//! fresh prediction on the updated profile.

mod state;

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::{OfflineAccount, OnlineTransaction};
use crate::exec::Execution;
use crate::extra_trees::{ExtraTreesModel, TreeError};
use crate::ingest::Amount;
use crate::metrics::{self, BatchReport, ConfusionMatrix, MetricsError};
use crate::rules::{self, AccountContext, Catalog, RuleError};

pub use state::{RiskRecord, RiskState, STATE_HEADER};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("account {0} is not in the risk state")]
    UnknownAccount(u64),
    #[error("batches are misaligned: {0}")]
    Misaligned(String),
    #[error("profile sync failed: {0}")]
    Sync(String),
    #[error("prediction for account {account}: {source}")]
    Model { account: u64, source: TreeError },
    #[error("transaction {tid}: {source}")]
    Rule { tid: u64, source: RuleError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("state file: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which end-of-batch score decides the default flag.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagOn {
    /// The carried offline risk, i.e. the fused score of the account's last
    /// transaction with positive online risk (or its synced prior).
    #[default]
    CarriedRisk,
    /// The fused score of the account's last transaction, whatever its online
    /// risk.
    LastTotal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub lambda: f64,
    pub threshold: f64,
    pub flag_on: FlagOn,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig { lambda: 0.5, threshold: 0.5, flag_on: FlagOn::CarriedRisk }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(RunError::Contract(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(RunError::Contract(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        Ok(())
    }

    fn flag_score(&self, r: &RiskRecord) -> f64 {
        match self.flag_on {
            FlagOn::CarriedRisk => r.r_offline,
            FlagOn::LastTotal => r.last_r_total,
        }
    }
}

fn unit(name: &str, v: f64) -> Result<(), RunError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(RunError::Contract(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// `lambda * r_online + (1 - lambda) * r_offline`.
pub fn combine(r_online: f64, r_offline: f64, lambda: f64) -> Result<f64, RunError> {
    unit("r_online", r_online)?;
    unit("r_offline", r_offline)?;
    unit("lambda", lambda)?;
    Ok((lambda * r_online + (1.0 - lambda) * r_offline).clamp(0.0, 1.0))
}

fn predict_all(model: &ExtraTreesModel, batch: &[OfflineAccount], exec: Execution) -> Result<Vec<f64>, RunError> {
    exec.map(batch, |a| model.predict_offline(a).map_err(|source| RunError::Model { account: a.account, source }))
        .into_iter()
        .collect()
}

/// State with every account of `batch` at its predicted default probability.
pub fn init_offline_risk(
    model: &ExtraTreesModel,
    batch: &[OfflineAccount],
    batch_index: usize,
    exec: Execution,
) -> Result<RiskState, RunError> {
    let p = predict_all(model, batch, exec)?;
    RiskState::from_records(batch.iter().zip(p).map(|(a, p)| RiskRecord::new(a.account, p, batch_index)).collect())
}

/// Applies one transaction's online risk to its account.
pub fn apply_transaction(
    state: &mut RiskState,
    txn: &OnlineTransaction,
    r_online: f64,
    config: &ScoringConfig,
    batch: usize,
    ordinal: u64,
) -> Result<f64, RunError> {
    state.get_mut(txn.account)?.apply(r_online, config.lambda, batch, ordinal)
}

/// Month-end synchronisation with the updated profiles in `next`.
///
/// Accounts without positive online risk this month take the fresh
/// prediction; active accounts keep the larger of carried and fresh risk.
/// Activity flags are cleared.
pub fn month_end_sync(
    state: &mut RiskState,
    model: &ExtraTreesModel,
    next: &[OfflineAccount],
    exec: Execution,
) -> Result<(), RunError> {
    if next.len() != state.len() {
        return Err(RunError::Sync(format!("state has {} accounts, profile batch has {}", state.len(), next.len())));
    }
    let mut slots = Vec::with_capacity(next.len());
    for a in next {
        slots.push(state.position(a.account).ok_or_else(|| RunError::Sync(format!("account {} is not in the risk state", a.account)))?);
    }
    let fresh = predict_all(model, next, exec)?;
    let records = state.records_mut();
    for (slot, p) in slots.into_iter().zip(fresh) {
        let r = &mut records[slot];
        r.r_offline = if r.active { r.r_offline.max(p) } else { p };
        r.active = false;
    }
    Ok(())
}

/// Previous-month bill per account: the growth of the cumulative total, or
/// the total itself when there is no earlier batch.
pub fn previous_bills(current: &[OfflineAccount], earlier: Option<&[OfflineAccount]>) -> HashMap<u64, Amount> {
    let before: HashMap<u64, Amount> = earlier.map(|e| e.iter().map(|a| (a.account, a.total_bill)).collect()).unwrap_or_default();
    current.iter().map(|a| (a.account, a.total_bill - before.get(&a.account).copied().unwrap_or(0))).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StreamSummary {
    pub transactions: usize,
    pub violations: usize,
}

/// Streams `txns` through the rule engine and into `state`.
///
/// Accounts are processed independently (in parallel under
/// [`Execution::Parallel`]); each account's transactions are applied in
/// their stream order. `profiles` must cover every account in `txns`.
#[allow(clippy::too_many_arguments)]
pub fn stream_batch(
    state: &mut RiskState,
    batch: usize,
    profiles: &[OfflineAccount],
    prev_bills: &HashMap<u64, Amount>,
    txns: &[OnlineTransaction],
    catalog: &Catalog,
    config: &ScoringConfig,
    exec: Execution,
) -> Result<StreamSummary, RunError> {
    let profile_of: HashMap<u64, &OfflineAccount> = profiles.iter().map(|p| (p.account, p)).collect();

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); state.len()];
    for (i, t) in txns.iter().enumerate() {
        let slot = state.position(t.account).ok_or(RunError::UnknownAccount(t.account))?;
        groups[slot].push(i);
    }
    let touched: Vec<usize> = (0..groups.len()).filter(|&s| !groups[s].is_empty()).collect();

    let snapshot = state.records();
    let results = exec.map(&touched, |&slot| {
        let mut record = snapshot[slot];
        let profile = profile_of.get(&record.account).ok_or(RunError::UnknownAccount(record.account))?;
        let prev = prev_bills.get(&record.account).copied().unwrap_or(0);
        let mut ctx = AccountContext::new((*profile).clone(), prev);
        let mut violations = 0;
        for (n, &i) in groups[slot].iter().enumerate() {
            let txn = &txns[i];
            ctx.absorb(txn);
            let eval = rules::evaluate(txn, &ctx, catalog).map_err(|source| RunError::Rule { tid: txn.tid, source })?;
            if !eval.violated.is_empty() {
                violations += 1;
            }
            record.apply(eval.r_online, config.lambda, batch, n as u64 + 1)?;
        }
        Ok::<_, RunError>((slot, record, violations))
    });

    let mut summary = StreamSummary { transactions: txns.len(), violations: 0 };
    let records = state.records_mut();
    for r in results {
        let (slot, record, v) = r?;
        records[slot] = record;
        summary.violations += v;
    }
    Ok(summary)
}

/// Per-account default flags against the batch labels.
pub fn classify(state: &RiskState, batch: &[OfflineAccount], config: &ScoringConfig) -> Result<ConfusionMatrix, RunError> {
    let mut cm = ConfusionMatrix::default();
    for a in batch {
        let r = state.get(a.account)?;
        cm.record(config.flag_score(r) >= config.threshold, a.default == 1);
    }
    Ok(cm)
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub reports: Vec<BatchReport>,
    pub confusion: Vec<ConfusionMatrix>,
    pub streams: Vec<StreamSummary>,
    pub state: RiskState,
}

fn check_alignment(offline: &[Vec<OfflineAccount>], online: &[Vec<OnlineTransaction>]) -> Result<(), RunError> {
    if offline.is_empty() || offline.len() != online.len() {
        return Err(RunError::Misaligned(format!("{} offline and {} online batches", offline.len(), online.len())));
    }
    let first: Vec<u64> = offline[0].iter().map(|a| a.account).collect();
    let known: std::collections::HashSet<u64> = first.iter().copied().collect();
    if known.len() != first.len() {
        return Err(RunError::Misaligned("offline batch 1 repeats an account".into()));
    }
    for (i, (off, on)) in offline.iter().zip(online).enumerate() {
        if off.len() != first.len() || off.iter().any(|a| !known.contains(&a.account)) {
            return Err(RunError::Misaligned(format!("offline batch {} covers different accounts", i + 1)));
        }
        if let Some(t) = on.iter().find(|t| !known.contains(&t.account)) {
            return Err(RunError::Misaligned(format!("online batch {} has unknown account {}", i + 1, t.account)));
        }
    }
    Ok(())
}

/// Runs offline batch `i` then online batch `i` for every batch in turn.
pub fn run_batches(
    offline: &[Vec<OfflineAccount>],
    online: &[Vec<OnlineTransaction>],
    model: &ExtraTreesModel,
    catalog: &Catalog,
    config: &ScoringConfig,
    exec: Execution,
) -> Result<RunOutcome, RunError> {
    config.validate()?;
    check_alignment(offline, online)?;

    let mut state = RiskState::default();
    let mut out = RunOutcome { reports: Vec::new(), confusion: Vec::new(), streams: Vec::new(), state: RiskState::default() };
    for (i, (off, on)) in offline.iter().zip(online).enumerate() {
        let batch = i + 1;
        let t0 = Instant::now();
        if i == 0 {
            state = init_offline_risk(model, off, batch, exec)?;
        } else {
            month_end_sync(&mut state, model, off, exec)?;
        }
        let offline_time = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let prev = previous_bills(off, i.checked_sub(1).map(|j| offline[j].as_slice()));
        let summary = stream_batch(&mut state, batch, off, &prev, on, catalog, config, exec)?;
        let online_time = t1.elapsed().as_secs_f64();

        let cm = classify(&state, off, config)?;
        out.reports.push(BatchReport::new(batch, &metrics::metrics(&cm)?, offline_time, online_time));
        out.confusion.push(cm);
        out.streams.push(summary);
    }
    out.state = state;
    Ok(out)
}
