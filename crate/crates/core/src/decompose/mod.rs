//! Decomposition of the source into monthly offline summaries and online
//! transactions.
//!
//! April is folded into the initial offline totals. Each of the five
//! following months (May..September) becomes one batch: an offline table of
//! account summaries as of the end of the previous month, and an online feed
//! holding one `pay` transaction per account plus that month's bill split
//! into `exp` transactions.

mod binning;
mod template;

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::ingest::{Amount, CustomerRecord, MONTHS, MONTH_NUMBERS};
use crate::rng;

pub use binning::{bin_index, equal_frequency_bins, equal_frequency_splits, rescale, RescaleRange};
pub use template::{read_amounts, read_amounts_from, DistributionTemplate, SyntheticAmounts, TemplateSettings};

/// Number of monthly batches (May..September).
pub const BATCHES: usize = MONTHS - 1;

pub const OFFLINE_HEADER: [&str; 10] = [
    "account", "balance_limit", "sex", "education", "marriage", "age", "total_bill", "total_payment",
    "repayment", "default",
];
pub const ONLINE_HEADER: [&str; 5] = ["tid", "account", "amount", "date", "type"];

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("range error: {0}")]
    Range(String),
    #[error("binning error: {0}")]
    Binning(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}

/// Offline account summary, one row per account per batch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfflineAccount {
    pub account: u64,
    pub balance_limit: Amount,
    pub sex: i32,
    pub education: i32,
    pub marriage: i32,
    pub age: i32,
    /// Sum of bills from April through the last summarized month.
    pub total_bill: Amount,
    /// Sum of payments from April through the last summarized month.
    pub total_payment: Amount,
    /// Repayment status of the last summarized month.
    pub repayment: i32,
    pub default: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxnType {
    Pay,
    Exp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnlineTransaction {
    pub tid: u64,
    pub account: u64,
    pub amount: Amount,
    pub date: NaiveDate,
    #[serde(rename = "type")]
    pub kind: TxnType,
}

/// Five aligned offline/online batches.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub offline: Vec<Vec<OfflineAccount>>,
    pub online: Vec<Vec<OnlineTransaction>>,
}

/// Splits a monthly bill into individual transaction amounts.
///
/// Non-positive bills are not split. A positive bill picks its bill-size bin,
/// draws that bin's transaction count of template amounts from the matching
/// template bin, rescales them from the template range onto `[1, bill]` and
/// apportions the bill in proportion. Every part is at least 1 and the last
/// part absorbs the rounding residue, so the parts always sum to `bill`.
pub fn split_bill<R: Rng + ?Sized>(bill: Amount, template: &DistributionTemplate, rng: &mut R) -> Vec<Amount> {
    if bill <= 0 {
        return vec![bill];
    }
    let bin = template.bill_bin(bill);
    let n = template.counts_per_bin[bin].clamp(1, usize::try_from(bill).unwrap_or(usize::MAX));
    if n == 1 {
        return vec![bill];
    }

    let target = RescaleRange::new(template.min_amount(), template.max_amount(), 1.0, bill as f64);
    let weights: Vec<f64> = (0..n)
        .map(|_| {
            let raw = template.draw(bin, rng);
            match &target {
                Ok(range) => rescale(raw, range).unwrap_or(1.0),
                // A single-valued template carries no shape: equal weights.
                Err(_) => 1.0,
            }
        })
        .collect();
    let total_weight: f64 = weights.iter().sum();

    let spare = (bill - n as Amount) as f64;
    let mut parts: Vec<Amount> = weights[..n - 1]
        .iter()
        .map(|w| 1 + (spare * w / total_weight).floor() as Amount)
        .collect();
    let used: Amount = parts.iter().sum();
    parts.push(bill - used);
    parts
}

/// Offline summary of `r` with the first `folded` months accumulated.
fn offline_row(r: &CustomerRecord, folded: usize) -> OfflineAccount {
    OfflineAccount {
        account: r.id,
        balance_limit: r.limit_bal,
        sex: r.sex,
        education: r.education,
        marriage: r.marriage,
        age: r.age,
        total_bill: r.bill_amt[..folded].iter().sum(),
        total_payment: r.pay_amt[..folded].iter().sum(),
        repayment: r.pay_status[folded - 1],
        default: r.label,
    }
}

fn days_in_month(year: i32, month: u32) -> u32 {
    let (ny, nm) = if month == 12 { (year + 1, 1) } else { (year, month + 1) };
    let first_next = NaiveDate::from_ymd_opt(ny, nm, 1).expect("valid month");
    first_next.pred_opt().expect("valid date").day()
}

/// One account-month of online activity before tids are assigned.
fn account_month(
    r: &CustomerRecord,
    month: usize,
    template: &DistributionTemplate,
    seed: u64,
    year: i32,
) -> Vec<(NaiveDate, TxnType, Amount)> {
    let mut rng = rng::stream(seed, &[r.id, month as u64]);
    let cal_month = MONTH_NUMBERS[month];
    let days = days_in_month(year, cal_month);
    let day = |rng: &mut rng::StreamRng| {
        NaiveDate::from_ymd_opt(year, cal_month, rng.random_range(1..=days)).expect("valid day")
    };

    let mut out = vec![(day(&mut rng), TxnType::Pay, r.pay_amt[month])];
    for amount in split_bill(r.bill_amt[month], template, &mut rng) {
        out.push((day(&mut rng), TxnType::Exp, amount));
    }
    out
}

/// Builds the five offline and five online batches.
///
/// Batch `i` (1-based) covers month May+(i-1) of `year`. Each account's
/// draws come from a stream keyed by (seed, account, month), so the result
/// does not depend on `exec`. Online transactions are ordered by date, then
/// account, then generation order, and numbered sequentially across batches.
pub fn decompose_dataset(
    records: &[CustomerRecord],
    template: &DistributionTemplate,
    seed: u64,
    year: i32,
    exec: Execution,
) -> Result<Decomposition, DecomposeError> {
    if NaiveDate::from_ymd_opt(year, 1, 1).is_none() {
        return Err(DecomposeError::Config(format!("year {year} out of range")));
    }
    let mut offline = Vec::with_capacity(BATCHES);
    let mut online = Vec::with_capacity(BATCHES);
    let mut next_tid = 1u64;

    for batch in 1..=BATCHES {
        offline.push(records.iter().map(|r| offline_row(r, batch)).collect());

        let per_account = exec.map(records, |r| account_month(r, batch, template, seed, year));
        let mut keyed: Vec<(NaiveDate, u64, usize, TxnType, Amount)> = per_account
            .into_iter()
            .zip(records)
            .flat_map(|(txns, r)| {
                txns.into_iter()
                    .enumerate()
                    .map(move |(k, (date, kind, amount))| (date, r.id, k, kind, amount))
            })
            .collect();
        keyed.sort_by_key(|&(date, account, k, _, _)| (date, account, k));

        let txns: Vec<OnlineTransaction> = keyed
            .into_iter()
            .map(|(date, account, _, kind, amount)| {
                let tid = next_tid;
                next_tid += 1;
                OnlineTransaction { tid, account, amount, date, kind }
            })
            .collect();
        online.push(txns);
    }
    Ok(Decomposition { offline, online })
}

pub fn offline_path(dir: &Path, batch: usize) -> PathBuf {
    dir.join(format!("offline_batch_{batch}.csv"))
}

pub fn online_path(dir: &Path, batch: usize) -> PathBuf {
    dir.join(format!("online_batch_{batch}.csv"))
}

pub fn write_offline<W: Write>(rows: &[OfflineAccount], writer: W) -> Result<(), DecomposeError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(OFFLINE_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_online<W: Write>(rows: &[OnlineTransaction], writer: W) -> Result<(), DecomposeError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(ONLINE_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

fn check_header<R: Read>(
    rdr: &mut csv::Reader<R>,
    expected: &[&str],
    origin: &str,
) -> Result<(), DecomposeError> {
    let header = rdr.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(DecomposeError::Format {
            path: origin.to_string(),
            reason: format!("expected header {}, found {}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

pub fn read_offline_from<R: Read>(reader: R, origin: &str) -> Result<Vec<OfflineAccount>, DecomposeError> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &OFFLINE_HEADER, origin)?;
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

pub fn read_online_from<R: Read>(reader: R, origin: &str) -> Result<Vec<OnlineTransaction>, DecomposeError> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &ONLINE_HEADER, origin)?;
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

pub fn read_offline(path: &Path) -> Result<Vec<OfflineAccount>, DecomposeError> {
    read_offline_from(File::open(path)?, &path.display().to_string())
}

pub fn read_online(path: &Path) -> Result<Vec<OnlineTransaction>, DecomposeError> {
    read_online_from(File::open(path)?, &path.display().to_string())
}

impl Decomposition {
    /// Writes `offline_batch_{i}.csv` and `online_batch_{i}.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), DecomposeError> {
        std::fs::create_dir_all(dir)?;
        for (i, (off, on)) in self.offline.iter().zip(&self.online).enumerate() {
            write_offline(off, BufWriter::new(File::create(offline_path(dir, i + 1))?))?;
            write_online(on, BufWriter::new(File::create(online_path(dir, i + 1))?))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, DecomposeError> {
        let mut offline = Vec::with_capacity(BATCHES);
        let mut online = Vec::with_capacity(BATCHES);
        for i in 1..=BATCHES {
            offline.push(read_offline(&offline_path(dir, i))?);
            online.push(read_online(&online_path(dir, i))?);
        }
        Ok(Decomposition { offline, online })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn record(id: u64, bills: [Amount; 6], pays: [Amount; 6]) -> CustomerRecord {
        CustomerRecord {
            id,
            limit_bal: 50_000,
            sex: 2,
            education: 3,
            marriage: 2,
            age: 23,
            pay_status: [0, 0, -1, 2, 0, 1],
            bill_amt: bills,
            pay_amt: pays,
            label: 0,
        }
    }

    fn template(min_parts: usize, max_parts: usize) -> DistributionTemplate {
        let amounts = SyntheticAmounts { count: 2000, ..Default::default() }.generate().unwrap();
        let settings = TemplateSettings { n_bins: 5, min_parts, max_parts };
        DistributionTemplate::prepare(amounts, (1..=400).map(|b| b * 250), &settings).unwrap()
    }

    #[test]
    fn non_positive_bills_are_not_split() {
        let t = template(4, 4);
        let mut rng = rng::stream(1, &[]);
        assert_eq!(split_bill(0, &t, &mut rng), vec![0]);
        assert_eq!(split_bill(-7, &t, &mut rng), vec![-7]);
    }

    #[test]
    fn four_parts_sum_to_bill() {
        let t = template(4, 4);
        let mut rng = rng::stream(3, &[]);
        let parts = split_bill(100, &t, &mut rng);
        assert_eq!(parts.len(), 4);
        assert_eq!(parts.iter().sum::<Amount>(), 100);
        assert!(parts.iter().all(|&p| p >= 1));
    }

    #[test]
    fn tiny_bill_caps_part_count() {
        let t = template(10, 10);
        let mut rng = rng::stream(3, &[]);
        assert_eq!(split_bill(3, &t, &mut rng), vec![1, 1, 1]);
        assert_eq!(split_bill(1, &t, &mut rng), vec![1]);
    }

    #[test]
    fn single_valued_template_splits_evenly() {
        let settings = TemplateSettings { n_bins: 1, min_parts: 4, max_parts: 4 };
        let t = DistributionTemplate::prepare(vec![9.0; 10], [100], &settings).unwrap();
        let mut rng = rng::stream(0, &[]);
        assert_eq!(split_bill(100, &t, &mut rng), vec![25, 25, 25, 25]);
    }

    #[test]
    fn april_is_folded_into_offline_totals() {
        // Account whose April bill/payment reproduce the reference offline row.
        let mut r = record(4663, [28718, 30000, 1, -3, 0, 77], [1028, 0, 5, 5, 5, 5]);
        r.pay_status[0] = 0;
        let t = template(2, 6);
        let d = decompose_dataset(&[r], &t, 42, 2005, Execution::Sequential).unwrap();
        let row = &d.offline[0][0];
        assert_eq!(
            (row.account, row.balance_limit, row.total_bill, row.total_payment, row.repayment, row.default),
            (4663, 50000, 28718, 1028, 0, 0)
        );
        assert_eq!((row.sex, row.education, row.marriage, row.age), (2, 3, 2, 23));
        // April amounts never appear online; May's pay does.
        let pays: Vec<Amount> =
            d.online[0].iter().filter(|t| t.kind == TxnType::Pay).map(|t| t.amount).collect();
        assert_eq!(pays, vec![0]);
        // Batch 5 (September) totals cover April..August.
        let last = &d.offline[4][0];
        assert_eq!(last.total_bill, 28718 + 30000 + 1 - 3);
        assert_eq!(last.total_payment, 1028 + 15);
        assert_eq!(last.repayment, 0);
    }

    #[test]
    fn batches_conserve_amounts_and_dates() {
        let t = template(2, 12);
        let recs: Vec<CustomerRecord> = (1..=40)
            .map(|i| record(i, [i as Amount * 10, 5000, -7, 0, 123_456, 9], [1, 2, 3, 4, 5, 6]))
            .collect();
        let d = decompose_dataset(&recs, &t, 9, 2005, Execution::Parallel).unwrap();
        assert_eq!(d.offline.len(), BATCHES);
        assert_eq!(d.online.len(), BATCHES);
        let mut last_tid = 0;
        for (b, batch) in d.online.iter().enumerate() {
            let month = MONTH_NUMBERS[b + 1];
            let mut exp: HashMap<u64, Amount> = HashMap::new();
            let mut pays: HashMap<u64, usize> = HashMap::new();
            for txn in batch {
                assert_eq!(txn.tid, last_tid + 1);
                last_tid = txn.tid;
                assert_eq!((txn.date.year(), txn.date.month()), (2005, month));
                match txn.kind {
                    TxnType::Exp => *exp.entry(txn.account).or_default() += txn.amount,
                    TxnType::Pay => {
                        *pays.entry(txn.account).or_default() += 1;
                        assert_eq!(txn.amount, recs[txn.account as usize - 1].pay_amt[b + 1]);
                    }
                }
            }
            for r in &recs {
                assert_eq!(exp[&r.id], r.bill_amt[b + 1]);
                assert_eq!(pays[&r.id], 1);
            }
            assert!(batch.windows(2).all(|w| w[0].date <= w[1].date));
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let t = template(2, 12);
        let recs: Vec<CustomerRecord> =
            (1..=25).map(|i| record(i * 7, [100, 2000, 35_000, 1, 0, 999], [0; 6])).collect();
        let a = decompose_dataset(&recs, &t, 5, 2005, Execution::Sequential).unwrap();
        let b = decompose_dataset(&recs, &t, 5, 2005, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let c = decompose_dataset(&recs, &t, 6, 2005, Execution::Sequential).unwrap();
        assert_ne!(a.online, c.online);
    }

    #[test]
    fn csv_round_trip_and_header() {
        let t = template(2, 5);
        let recs = vec![record(3, [10, 20, 30, 40, 50, 60], [1, 1, 1, 1, 1, 1])];
        let d = decompose_dataset(&recs, &t, 1, 2005, Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        write_offline(&d.offline[0], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&OFFLINE_HEADER.join(",")));
        assert_eq!(read_offline_from(buf.as_slice(), "mem").unwrap(), d.offline[0]);

        let mut buf = Vec::new();
        write_online(&d.online[0], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("tid,account,amount,date,type\n"));
        assert!(text.contains("-05-"));
        assert_eq!(read_online_from(buf.as_slice(), "mem").unwrap(), d.online[0]);

        let bad = "tid,account,amount,date\n1,2,3,2005-05-01\n";
        assert!(matches!(read_online_from(bad.as_bytes(), "x"), Err(DecomposeError::Format { .. })));
    }

    #[test]
    fn february_days() {
        assert_eq!(days_in_month(2005, 2), 28);
        assert_eq!(days_in_month(2004, 2), 29);
        assert_eq!(days_in_month(2005, 12), 31);
        assert_eq!(days_in_month(2005, 9), 30);
    }

    proptest! {
        #[test]
        fn splits_always_conserve(bill in -1000i64..2_000_000, seed in any::<u64>(), lo in 1usize..8, extra in 0usize..30) {
            let t = template(lo, lo + extra);
            let mut rng = rng::stream(seed, &[]);
            let parts = split_bill(bill, &t, &mut rng);
            prop_assert!(!parts.is_empty());
            prop_assert_eq!(parts.iter().sum::<Amount>(), bill);
            if bill > 0 {
                prop_assert!(parts.iter().all(|&p| p >= 1));
            }
        }
    }
}
