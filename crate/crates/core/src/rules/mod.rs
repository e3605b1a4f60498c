//! Online risk from standard rules and customer-specific causes.
//!
//! Every transaction goes through the standard test. A violation sends it on
//! to the customer-specific test, which collects the causes related to the
//! violated rules (`Y`) and the subset whose detectors fire for the account
//! (`X`, the valid causes). The online risk is
//!
//! ```text
//! r_online = 1 - sum(w(X)) / sum(w(Y))
//! ```
//!
//! kept on the `[0, 1]` scale. A violation with no related causes scores 1;
//! a conforming transaction scores 0.

mod catalog;
pub mod expr;

use std::collections::HashMap;

use thiserror::Error;

use crate::decompose::{OfflineAccount, OnlineTransaction, TxnType};
use crate::extra_trees::ExtraTreesModel;
use crate::ingest::Amount;

pub use catalog::{AppliesTo, CauseSpec, RuleConfig, StandardRule, Weight, DEFAULT_RULES, MAX_ENTRIES};
pub use expr::{Condition, Field};

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule config line {line}, column {column}: {message}")]
    Config { line: usize, column: usize, message: String },
    #[error("no context for account {0}")]
    UnknownAccount(u64),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("cause `{0}` derives its weight from feature scores, but none were supplied")]
    MissingScores(String),
    #[error("cause `{cause}` refers to unknown feature `{feature}`")]
    UnknownFeature { cause: String, feature: String },
    #[error("feature scores: {0}")]
    Scores(String),
}

macro_rules! bitset {
    ($name:ident) => {
        /// Set of catalog indices (at most 64).
        #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub u64);

        impl $name {
            pub const EMPTY: $name = $name(0);

            pub fn insert(&mut self, i: usize) {
                self.0 |= 1 << i;
            }

            pub fn contains(self, i: usize) -> bool {
                self.0 >> i & 1 == 1
            }

            pub fn is_empty(self) -> bool {
                self.0 == 0
            }

            pub fn len(self) -> usize {
                self.0.count_ones() as usize
            }

            pub fn union(self, other: $name) -> $name {
                $name(self.0 | other.0)
            }

            pub fn is_subset(self, other: $name) -> bool {
                self.0 & !other.0 == 0
            }

            pub fn iter(self) -> impl Iterator<Item = usize> {
                (0..64).filter(move |&i| self.contains(i))
            }
        }

        impl FromIterator<usize> for $name {
            fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
                let mut s = $name::EMPTY;
                for i in iter {
                    s.insert(i);
                }
                s
            }
        }
    };
}

bitset!(RuleSet);
bitset!(CauseSet);

/// Per-feature non-negative scores summing to 1, taken from the offline
/// model's importances.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScores {
    names: Vec<String>,
    scores: Vec<f64>,
}

impl FeatureScores {
    pub fn new(names: Vec<String>, scores: Vec<f64>) -> Result<Self, RuleError> {
        if names.len() != scores.len() || names.is_empty() {
            return Err(RuleError::Scores("names and scores must be non-empty and aligned".into()));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(RuleError::Scores("scores must be finite and non-negative".into()));
        }
        let total: f64 = scores.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(RuleError::Scores(format!("scores sum to {total}, expected 1")));
        }
        Ok(FeatureScores { names, scores })
    }

    pub fn from_model(model: &ExtraTreesModel) -> Result<Self, RuleError> {
        Self::new(model.feature_names.clone(), model.feature_importance.clone())
    }

    pub fn score(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.scores[i])
    }
}

/// Snapshot of everything a rule may look at for one transaction.
#[derive(Clone, Debug, PartialEq)]
pub struct AccountContext {
    pub profile: OfflineAccount,
    pub prev_bill: Amount,
    pub mtd_bill: Amount,
    pub mtd_payment: Amount,
    pub mtd_count: u32,
}

impl AccountContext {
    pub fn new(profile: OfflineAccount, prev_bill: Amount) -> Self {
        AccountContext { profile, prev_bill, mtd_bill: 0, mtd_payment: 0, mtd_count: 0 }
    }

    /// Folds `txn` into the month-to-date aggregates.
    pub fn absorb(&mut self, txn: &OnlineTransaction) {
        match txn.kind {
            TxnType::Pay => self.mtd_payment += txn.amount,
            TxnType::Exp => self.mtd_bill += txn.amount,
        }
        self.mtd_count += 1;
    }

    pub fn field(&self, f: Field, txn: Option<&OnlineTransaction>) -> f64 {
        let p = &self.profile;
        match f {
            Field::BalanceLimit => p.balance_limit as f64,
            Field::Sex => p.sex as f64,
            Field::Education => p.education as f64,
            Field::Marriage => p.marriage as f64,
            Field::Age => p.age as f64,
            Field::TotalBill => p.total_bill as f64,
            Field::TotalPayment => p.total_payment as f64,
            Field::Repayment => p.repayment as f64,
            Field::PrevBill => self.prev_bill as f64,
            Field::MtdBill => self.mtd_bill as f64,
            Field::MtdPayment => self.mtd_payment as f64,
            Field::MtdCount => self.mtd_count as f64,
            Field::Amount => txn.map(|t| t.amount as f64).unwrap_or(0.0),
        }
    }
}

/// Outcome of scoring one transaction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RuleEvaluation {
    pub violated: RuleSet,
    /// Causes related to the violated rules.
    pub related: CauseSet,
    /// Related causes whose detectors fire.
    pub valid: CauseSet,
    pub r_online: f64,
}

/// Catalog with resolved impact coefficients, ready for scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    pub config: RuleConfig,
    pub coefficients: Vec<f64>,
}

impl Catalog {
    pub fn new(config: RuleConfig, scores: Option<&FeatureScores>) -> Result<Self, RuleError> {
        let coefficients = config.coefficients(scores)?;
        Ok(Catalog { config, coefficients })
    }

    pub fn rules(&self) -> &[StandardRule] {
        &self.config.rules
    }
}

/// Rules whose predicate fails for `txn` in `ctx`.
pub fn standard_test(txn: &OnlineTransaction, ctx: &AccountContext, rules: &[StandardRule]) -> Result<RuleSet, RuleError> {
    if txn.account != ctx.profile.account {
        return Err(RuleError::UnknownAccount(txn.account));
    }
    let mut violated = RuleSet::EMPTY;
    for (i, rule) in rules.iter().enumerate() {
        if rule.applies_to.matches(txn.kind) && !rule.predicate.holds(|f| ctx.field(f, Some(txn))) {
            violated.insert(i);
        }
    }
    Ok(violated)
}

/// `1 - sum(w(X)) / sum(w(Y))`; 1 when `Y` is empty.
pub fn r_online_score(valid: CauseSet, related: CauseSet, coefficients: &[f64]) -> Result<f64, RuleError> {
    if !valid.is_subset(related) {
        return Err(RuleError::Contract("valid causes must be a subset of related causes".into()));
    }
    if related.iter().any(|c| c >= coefficients.len()) {
        return Err(RuleError::Contract("cause index without a coefficient".into()));
    }
    if related.is_empty() {
        return Ok(1.0);
    }
    let sum = |s: CauseSet| s.iter().map(|c| coefficients[c]).sum::<f64>();
    let ratio = sum(valid) / sum(related);
    Ok((1.0 - ratio).clamp(0.0, 1.0))
}

/// Gathers related and valid causes for the violated rules and scores them.
pub fn customer_specific_test(violated: RuleSet, ctx: &AccountContext, catalog: &Catalog) -> Result<RuleEvaluation, RuleError> {
    if violated.is_empty() {
        return Err(RuleError::Contract("customer-specific test needs at least one violated rule".into()));
    }
    let config = &catalog.config;
    let related = violated
        .iter()
        .filter_map(|r| config.mapping.get(r).copied())
        .fold(CauseSet::EMPTY, CauseSet::union);
    let valid: CauseSet = related
        .iter()
        .filter(|&c| config.causes[c].detector.holds(|f| ctx.field(f, None)))
        .collect();
    Ok(RuleEvaluation { violated, related, valid, r_online: r_online_score(valid, related, &catalog.coefficients)? })
}

/// Scores a single transaction against an already-updated context.
pub fn evaluate(txn: &OnlineTransaction, ctx: &AccountContext, catalog: &Catalog) -> Result<RuleEvaluation, RuleError> {
    let violated = standard_test(txn, ctx, catalog.rules())?;
    if violated.is_empty() {
        return Ok(RuleEvaluation::default());
    }
    customer_specific_test(violated, ctx, catalog)
}

/// Supplies the context of each transaction in stream order.
pub trait ContextProvider {
    /// Context for `txn`, with `txn` already folded into month-to-date
    /// aggregates.
    fn context_for(&mut self, txn: &OnlineTransaction) -> Result<&AccountContext, RuleError>;
}

/// Month-to-date contexts for one batch, keyed by account.
#[derive(Clone, Debug, Default)]
pub struct MonthToDate {
    accounts: HashMap<u64, AccountContext>,
}

impl MonthToDate {
    /// `prev_bill` gives each account's previous-month bill.
    pub fn new(profiles: &[OfflineAccount], prev_bill: impl Fn(&OfflineAccount) -> Amount) -> Self {
        MonthToDate {
            accounts: profiles.iter().map(|p| (p.account, AccountContext::new(p.clone(), prev_bill(p)))).collect(),
        }
    }

    pub fn get(&self, account: u64) -> Option<&AccountContext> {
        self.accounts.get(&account)
    }
}

impl ContextProvider for MonthToDate {
    fn context_for(&mut self, txn: &OnlineTransaction) -> Result<&AccountContext, RuleError> {
        let ctx = self.accounts.get_mut(&txn.account).ok_or(RuleError::UnknownAccount(txn.account))?;
        ctx.absorb(txn);
        Ok(ctx)
    }
}

/// Online risk for every transaction of `batch`, in input order. A failed
/// transaction yields an error in its slot; the rest are still scored.
pub fn risk<P: ContextProvider>(catalog: &Catalog, batch: &[OnlineTransaction], provider: &mut P) -> Vec<Result<f64, RuleError>> {
    batch
        .iter()
        .map(|txn| {
            let ctx = provider.context_for(txn)?;
            evaluate(txn, ctx, catalog).map(|e| e.r_online)
        })
        .collect()
}
