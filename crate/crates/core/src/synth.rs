//! Deterministic synthetic customers in the Taiwan source schema.
//!
//! Stands in for the public dataset when it is not at hand. Each customer has
//! a latent credit quality that drives utilisation, repayment status and
//! payments month by month; the label marks the riskiest customers so that
//! the default count matches the reference rate exactly.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::ingest::{Amount, CustomerRecord, MONTHS};
use crate::rng;

/// Default share of the reference dataset (6,626 of 30,000).
pub const REFERENCE_DEFAULT_RATE: f64 = 6626.0 / 30000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub customers: usize,
    pub default_rate: f64,
    pub seed: u64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings { customers: 30_000, default_rate: REFERENCE_DEFAULT_RATE, seed: 2005 }
    }
}

impl SynthSettings {
    pub fn defaults(&self) -> usize {
        (self.customers as f64 * self.default_rate).round() as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.customers < 2 {
            return Err(format!("need at least 2 customers, got {}", self.customers));
        }
        if !(self.default_rate > 0.0 && self.default_rate < 1.0) {
            return Err(format!("default_rate must lie in (0, 1), got {}", self.default_rate));
        }
        let d = self.defaults();
        if d == 0 || d == self.customers {
            return Err("default_rate leaves a single class".into());
        }
        Ok(())
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One customer and its label score; higher means riskier.
fn customer(seed: u64, id: u64) -> (CustomerRecord, f64) {
    let mut rng = rng::stream(seed, &[id]);
    let r = &mut rng;

    let tiers = 10.0 + 70.0 * r.random::<f64>().powf(1.8);
    let limit_bal = (tiers.round() as Amount) * 10_000;
    let sex = 1 + i32::from(r.random::<f64>() < 0.6);
    let education = 1 + pick(r, &[0.35, 0.47, 0.16, 0.02]) as i32;
    let marriage = 1 + pick(r, &[0.45, 0.53, 0.02]) as i32;
    let age = 21 + (49.0 * r.random::<f64>().powf(1.6)).round() as i32;

    // Latent risk: smaller limits and younger customers skew riskier.
    let z = normal(r) + 0.35 * (1.0 - limit_bal as f64 / 400_000.0) + 0.1 * (30.0 - age as f64) / 10.0;
    let habit = normal(r);

    let mut pay_status = [0i32; MONTHS];
    let mut bill_amt = [0 as Amount; MONTHS];
    let mut pay_amt = [0 as Amount; MONTHS];
    let mut late = 0i32;
    let mut util = (0.35 + 0.22 * z + 0.2 * normal(r)).clamp(0.0, 1.1);
    for m in 0..MONTHS {
        util = (util + 0.06 * z.max(0.0) * r.random::<f64>() + 0.05 * normal(r)).clamp(0.0, 1.15);
        let p_late = sigmoid(1.9 * z - 2.6 + 1.2 * f64::from(late.min(3)) + 0.35 * normal(r));
        if r.random::<f64>() < p_late {
            late = (late + 1).min(8);
            pay_status[m] = late.max(1 + i32::from(r.random::<f64>() < 0.3));
        } else {
            late = 0;
            pay_status[m] = if util < 0.02 {
                -2
            } else if habit - 0.6 * z > 0.4 {
                -1
            } else {
                0
            };
        }

        let bill = if util < 0.02 || r.random::<f64>() < 0.04 {
            0
        } else {
            (limit_bal as f64 * util * (1.0 + 0.08 * normal(r))).round().max(0.0) as Amount
        };
        bill_amt[m] = if r.random::<f64>() < 0.01 { -(r.random_range(1..2_000)) } else { bill };

        let prev = if m == 0 { bill_amt[0] } else { bill_amt[m - 1] }.max(0) as f64;
        let share = match pay_status[m] {
            -2 => 0.0,
            -1 => 1.0,
            0 => 0.05 + 0.25 * r.random::<f64>(),
            _ => 0.04 * r.random::<f64>() * f64::from(r.random::<f64>() < 0.5),
        };
        pay_amt[m] = (prev * share).round() as Amount;
        if pay_status[m] <= 0 && pay_amt[m] > 0 {
            util = (util - 0.3 * share).max(0.0);
        }
    }

    let recent = f64::from(pay_status[MONTHS - 1].max(0)) + 0.6 * f64::from(pay_status[MONTHS - 2].max(0));
    let score = 0.8 * z + 0.9 * recent.min(4.0) + 0.45 * normal(r);
    let record = CustomerRecord {
        id,
        limit_bal,
        sex,
        education,
        marriage,
        age,
        pay_status,
        bill_amt,
        pay_amt,
        label: 0,
    };
    (record, score)
}

/// Generates `settings.customers` records with ids `1..=n`; exactly
/// `settings.defaults()` carry label 1.
pub fn generate(settings: &SynthSettings, exec: Execution) -> Result<Vec<CustomerRecord>, String> {
    settings.validate()?;
    let drawn = exec.map_range(settings.customers, |i| customer(settings.seed, i as u64 + 1));
    let mut order: Vec<usize> = (0..drawn.len()).collect();
    order.sort_by(|&a, &b| drawn[b].1.total_cmp(&drawn[a].1).then(a.cmp(&b)));
    let mut records: Vec<CustomerRecord> = drawn.into_iter().map(|(r, _)| r).collect();
    for &i in &order[..settings.defaults()] {
        records[i].label = 1;
    }
    Ok(records)
}
