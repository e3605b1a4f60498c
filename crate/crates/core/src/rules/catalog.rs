//! Rule, cause and mapping catalogs loaded from TOML.

use std::collections::{BTreeMap, HashSet};
use std::ops::Range;
use std::path::Path;

use serde::Deserialize;
use toml::Spanned;

use super::expr::{parse_condition, Condition, Field};
use super::{CauseSet, FeatureScores, RuleError, RuleSet};
use crate::decompose::TxnType;

/// The built-in catalog: three standard rules, three derivable causes.
pub const DEFAULT_RULES: &str = include_str!("../../config/default_rules.toml");

/// Largest catalog a [`RuleSet`] / [`CauseSet`] bitmask can hold.
pub const MAX_ENTRIES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AppliesTo {
    Pay,
    Exp,
    Any,
}

impl AppliesTo {
    pub fn matches(self, kind: TxnType) -> bool {
        matches!((self, kind), (AppliesTo::Any, _) | (AppliesTo::Pay, TxnType::Pay) | (AppliesTo::Exp, TxnType::Exp))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StandardRule {
    pub id: String,
    pub description: String,
    pub applies_to: AppliesTo,
    /// Holds for a conforming transaction.
    pub predicate: Condition,
    pub params: BTreeMap<String, f64>,
}

/// Source of a cause's impact coefficient.
#[derive(Clone, Debug, PartialEq)]
pub enum Weight {
    Fixed(f64),
    /// Importance of the named offline feature.
    Feature(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CauseSpec {
    pub id: String,
    pub description: String,
    pub detector: Condition,
    pub weight: Weight,
}

/// A validated catalog whose feature-derived weights are not yet resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleConfig {
    pub rules: Vec<StandardRule>,
    pub causes: Vec<CauseSpec>,
    /// Rule index -> related causes.
    pub mapping: Vec<CauseSet>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    #[serde(default)]
    rule: Vec<RawRule>,
    #[serde(default)]
    cause: Vec<RawCause>,
    #[serde(default)]
    mapping: BTreeMap<Spanned<String>, Vec<Spanned<String>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    id: Spanned<String>,
    #[serde(default)]
    description: String,
    applies_to: Option<Spanned<String>>,
    predicate: Spanned<String>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCause {
    id: Spanned<String>,
    #[serde(default)]
    description: String,
    detector: Spanned<String>,
    impact_coefficient: Option<Spanned<f64>>,
    feature: Option<Spanned<String>>,
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map(|s| s.chars().count()).unwrap_or(0) + 1;
    (line, col)
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn err(&self, span: Range<usize>, message: impl Into<String>) -> RuleError {
        let (line, column) = line_col(self.text, span.start);
        RuleError::Config { line, column, message: message.into() }
    }

    /// Compiles an expression held in a TOML string, reporting errors at the
    /// offending character.
    fn condition(&self, s: &Spanned<String>, params: &BTreeMap<String, f64>) -> Result<Condition, RuleError> {
        parse_condition(s.get_ref(), params).map_err(|e| {
            // Skip the opening quote; exact for strings without escapes.
            let start = s.span().start + 1 + s.get_ref().chars().take(e.column - 1).map(char::len_utf8).sum::<usize>();
            self.err(start..start, e.message)
        })
    }
}

impl RuleConfig {
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let ctx = Ctx { text };
        let raw: RawCatalog = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
            RuleError::Config { line, column, message: e.message().to_string() }
        })?;

        if raw.rule.len() > MAX_ENTRIES || raw.cause.len() > MAX_ENTRIES {
            return Err(RuleError::Config {
                line: 0,
                column: 0,
                message: format!("at most {MAX_ENTRIES} rules and {MAX_ENTRIES} causes are supported"),
            });
        }

        let mut seen = HashSet::new();
        let mut rules = Vec::with_capacity(raw.rule.len());
        for r in &raw.rule {
            let id = r.id.get_ref().trim();
            if id.is_empty() {
                return Err(ctx.err(r.id.span(), "rule id is empty"));
            }
            if !seen.insert(id.to_string()) {
                return Err(ctx.err(r.id.span(), format!("duplicate rule id `{id}`")));
            }
            for (name, v) in &r.params {
                if !v.is_finite() {
                    return Err(ctx.err(r.id.span(), format!("parameter `{name}` of `{id}` is not finite")));
                }
                if Field::from_name(name).is_some() {
                    return Err(ctx.err(r.id.span(), format!("parameter `{name}` of `{id}` shadows a field")));
                }
            }
            let applies_to = match &r.applies_to {
                None => AppliesTo::Any,
                Some(s) => match s.get_ref().as_str() {
                    "pay" => AppliesTo::Pay,
                    "exp" => AppliesTo::Exp,
                    "any" => AppliesTo::Any,
                    other => {
                        return Err(ctx.err(s.span(), format!("applies_to must be pay, exp or any, got `{other}`")))
                    }
                },
            };
            rules.push(StandardRule {
                id: id.to_string(),
                description: r.description.clone(),
                applies_to,
                predicate: ctx.condition(&r.predicate, &r.params)?,
                params: r.params.clone(),
            });
        }

        let mut seen = HashSet::new();
        let mut causes = Vec::with_capacity(raw.cause.len());
        for c in &raw.cause {
            let id = c.id.get_ref().trim();
            if id.is_empty() {
                return Err(ctx.err(c.id.span(), "cause id is empty"));
            }
            if !seen.insert(id.to_string()) {
                return Err(ctx.err(c.id.span(), format!("duplicate cause id `{id}`")));
            }
            let detector = ctx.condition(&c.detector, &BTreeMap::new())?;
            if let Some(f) = detector.fields().into_iter().find(|f| f.is_transactional()) {
                return Err(ctx.err(
                    c.detector.span(),
                    format!("cause detectors see account context only; `{}` is not allowed", f.name()),
                ));
            }
            let weight = match (&c.impact_coefficient, &c.feature) {
                (Some(w), None) => {
                    let v = *w.get_ref();
                    if !(v.is_finite() && v > 0.0) {
                        return Err(ctx.err(w.span(), format!("impact_coefficient must be > 0, got {v}")));
                    }
                    Weight::Fixed(v)
                }
                (None, Some(f)) => Weight::Feature(f.get_ref().clone()),
                _ => {
                    return Err(ctx.err(
                        c.id.span(),
                        format!("cause `{id}` needs exactly one of impact_coefficient or feature"),
                    ))
                }
            };
            causes.push(CauseSpec { id: id.to_string(), description: c.description.clone(), detector, weight });
        }

        let mut mapping = vec![CauseSet::EMPTY; rules.len()];
        for (rule_id, cause_ids) in &raw.mapping {
            let Some(r) = rules.iter().position(|r| r.id == *rule_id.get_ref()) else {
                return Err(ctx.err(rule_id.span(), format!("mapping names unknown rule `{}`", rule_id.get_ref())));
            };
            for cid in cause_ids {
                let Some(c) = causes.iter().position(|c| c.id == *cid.get_ref()) else {
                    return Err(ctx.err(cid.span(), format!("mapping names unknown cause `{}`", cid.get_ref())));
                };
                mapping[r].insert(c);
            }
        }

        Ok(RuleConfig { rules, causes, mapping })
    }

    pub fn load(path: &Path) -> Result<Self, RuleError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RuleError::Config { line: 0, column: 0, message: format!("{}: {e}", path.display()) })?;
        Self::parse(&text).map_err(|e| match e {
            RuleError::Config { line, column, message } => {
                RuleError::Config { line, column, message: format!("{}: {message}", path.display()) }
            }
            other => other,
        })
    }

    pub fn default_catalog() -> Self {
        Self::parse(DEFAULT_RULES).expect("built-in catalog is valid")
    }

    pub fn needs_feature_scores(&self) -> bool {
        self.causes.iter().any(|c| matches!(c.weight, Weight::Feature(_)))
    }

    /// Resolves every cause weight.
    ///
    /// Fixed weights are used verbatim when no cause is feature-derived.
    /// Otherwise feature-derived weights take the feature's score (floored
    /// at 1e-6 so they stay positive) and the whole catalog is rescaled to
    /// sum to 1; rescaling leaves every online risk unchanged.
    pub fn coefficients(&self, scores: Option<&FeatureScores>) -> Result<Vec<f64>, RuleError> {
        let mut out = Vec::with_capacity(self.causes.len());
        for c in &self.causes {
            out.push(match &c.weight {
                Weight::Fixed(v) => *v,
                Weight::Feature(name) => {
                    let fs = scores.ok_or_else(|| RuleError::MissingScores(c.id.clone()))?;
                    let v = fs.score(name).ok_or_else(|| RuleError::UnknownFeature {
                        cause: c.id.clone(),
                        feature: name.clone(),
                    })?;
                    v.max(1e-6)
                }
            });
        }
        if self.needs_feature_scores() {
            let total: f64 = out.iter().sum();
            for v in &mut out {
                *v /= total;
            }
        }
        Ok(out)
    }

    pub fn rule_index(&self, id: &str) -> Option<usize> {
        self.rules.iter().position(|r| r.id == id)
    }

    pub fn cause_index(&self, id: &str) -> Option<usize> {
        self.causes.iter().position(|c| c.id == id)
    }

    pub fn rule_ids(&self, set: RuleSet) -> Vec<&str> {
        set.iter().map(|i| self.rules[i].id.as_str()).collect()
    }

    pub fn cause_ids(&self, set: CauseSet) -> Vec<&str> {
        set.iter().map(|i| self.causes[i].id.as_str()).collect()
    }
}
