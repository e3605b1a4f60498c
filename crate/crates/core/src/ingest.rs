//! Taiwan-schema source ingestion.
//!
//! The source has 25 columns: `ID`, 23 features and the label column
//! `default payment next month`. Month-indexed columns run newest-first in the
//! file (`PAY_0`, `BILL_AMT1`, `PAY_AMT1` are September) and are reordered
//! oldest-first on load, so index 0 is always April and index 5 September.
//! The file has no `PAY_1`; `PAY_0` is the September repayment status.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::StringRecord;
use thiserror::Error;

/// Number of months covered by the source (April..September).
pub const MONTHS: usize = 6;

pub const MONTH_NAMES: [&str; MONTHS] = ["April", "May", "June", "July", "August", "September"];

/// Calendar month number (1-12) of each month index.
pub const MONTH_NUMBERS: [u32; MONTHS] = [4, 5, 6, 7, 8, 9];

pub const LABEL_COLUMN: &str = "default payment next month";

/// Repayment-status columns, oldest month first.
pub const PAY_STATUS_COLUMNS: [&str; MONTHS] = ["PAY_6", "PAY_5", "PAY_4", "PAY_3", "PAY_2", "PAY_0"];
/// Bill-statement columns, oldest month first.
pub const BILL_COLUMNS: [&str; MONTHS] = [
    "BILL_AMT6", "BILL_AMT5", "BILL_AMT4", "BILL_AMT3", "BILL_AMT2", "BILL_AMT1",
];
/// Payment-amount columns, oldest month first.
pub const PAY_AMT_COLUMNS: [&str; MONTHS] = [
    "PAY_AMT6", "PAY_AMT5", "PAY_AMT4", "PAY_AMT3", "PAY_AMT2", "PAY_AMT1",
];

/// Column order used when writing a source file (matches the UCI layout).
pub fn source_header() -> Vec<&'static str> {
    let mut h = vec!["ID", "LIMIT_BAL", "SEX", "EDUCATION", "MARRIAGE", "AGE"];
    h.extend(PAY_STATUS_COLUMNS.iter().rev());
    h.extend(BILL_COLUMNS.iter().rev());
    h.extend(PAY_AMT_COLUMNS.iter().rev());
    h.push(LABEL_COLUMN);
    h
}

/// Whole-unit currency (NT dollars).
pub type Amount = i64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CustomerRecord {
    pub id: u64,
    pub limit_bal: Amount,
    pub sex: i32,
    pub education: i32,
    pub marriage: i32,
    pub age: i32,
    /// Repayment status, April..September.
    pub pay_status: [i32; MONTHS],
    /// Bill statement, April..September. May be zero or negative.
    pub bill_amt: [Amount; MONTHS],
    /// Amount paid, April..September.
    pub pay_amt: [Amount; MONTHS],
    pub label: u8,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("input is empty")]
    Empty,
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: column `{column}` has non-numeric value `{value}`")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("row {row}: {reason}")]
    Invalid { row: usize, reason: String },
}

/// Row count and default rate of a parsed source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceSummary {
    pub rows: usize,
    pub defaults: usize,
}

impl SourceSummary {
    pub fn of(records: &[CustomerRecord]) -> Self {
        SourceSummary {
            rows: records.len(),
            defaults: records.iter().filter(|r| r.label == 1).count(),
        }
    }

    pub fn default_rate(&self) -> f64 {
        if self.rows == 0 {
            0.0
        } else {
            self.defaults as f64 / self.rows as f64
        }
    }
}

pub fn parse_source(path: impl AsRef<Path>) -> Result<Vec<CustomerRecord>, IngestError> {
    parse_reader(File::open(path)?)
}

struct Columns {
    id: usize,
    limit_bal: usize,
    sex: usize,
    education: usize,
    marriage: usize,
    age: usize,
    pay_status: [usize; MONTHS],
    bill_amt: [usize; MONTHS],
    pay_amt: [usize; MONTHS],
    label: usize,
}

impl Columns {
    fn resolve(header: &StringRecord) -> Result<Self, IngestError> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
        };
        let months = |names: &[&str; MONTHS]| -> Result<[usize; MONTHS], IngestError> {
            let mut out = [0; MONTHS];
            for (slot, name) in out.iter_mut().zip(names) {
                *slot = find(name)?;
            }
            Ok(out)
        };
        Ok(Columns {
            id: find("ID")?,
            limit_bal: find("LIMIT_BAL")?,
            sex: find("SEX")?,
            education: find("EDUCATION")?,
            marriage: find("MARRIAGE")?,
            age: find("AGE")?,
            pay_status: months(&PAY_STATUS_COLUMNS)?,
            bill_amt: months(&BILL_COLUMNS)?,
            pay_amt: months(&PAY_AMT_COLUMNS)?,
            label: find(LABEL_COLUMN)?,
        })
    }
}

/// Parses a source CSV from any reader.
///
/// Spreadsheet exports sometimes carry a leading `X1..X23,Y` alias row before
/// the real header; it is skipped.
pub fn parse_reader<R: Read>(reader: R) -> Result<Vec<CustomerRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();

    let mut header = match rows.next() {
        Some(h) => h?,
        None => return Err(IngestError::Empty),
    };
    if !header.iter().any(|h| h.trim() == "ID") && header.iter().any(|h| h.trim() == "X1") {
        header = match rows.next() {
            Some(h) => h?,
            None => return Err(IngestError::Empty),
        };
    }
    let cols = Columns::resolve(&header)?;

    let mut out = Vec::new();
    for (i, row) in rows.enumerate() {
        let row = row?;
        let row_no = i + 1;
        if row.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        out.push(parse_row(&row, row_no, &cols, &header)?);
    }
    if out.is_empty() {
        return Err(IngestError::Empty);
    }
    Ok(out)
}

fn parse_row(
    row: &StringRecord,
    row_no: usize,
    cols: &Columns,
    header: &StringRecord,
) -> Result<CustomerRecord, IngestError> {
    let int = |idx: usize| -> Result<i64, IngestError> {
        let raw = row.get(idx).unwrap_or("").trim();
        parse_int(raw).ok_or_else(|| IngestError::NonNumeric {
            row: row_no,
            column: header.get(idx).unwrap_or("?").trim().to_string(),
            value: raw.to_string(),
        })
    };
    let small = |idx: usize| -> Result<i32, IngestError> {
        let v = int(idx)?;
        i32::try_from(v).map_err(|_| IngestError::Invalid {
            row: row_no,
            reason: format!("value {v} out of range"),
        })
    };
    let invalid = |reason: String| IngestError::Invalid { row: row_no, reason };

    let id = int(cols.id)?;
    if id <= 0 {
        return Err(invalid(format!("ID must be positive, got {id}")));
    }
    let limit_bal = int(cols.limit_bal)?;
    if limit_bal <= 0 {
        return Err(invalid(format!("LIMIT_BAL must be positive, got {limit_bal}")));
    }
    let age = small(cols.age)?;
    if age <= 0 {
        return Err(invalid(format!("AGE must be positive, got {age}")));
    }
    let label = int(cols.label)?;
    if label != 0 && label != 1 {
        return Err(invalid(format!("label must be 0 or 1, got {label}")));
    }

    let mut pay_status = [0; MONTHS];
    let mut bill_amt = [0; MONTHS];
    let mut pay_amt = [0; MONTHS];
    for m in 0..MONTHS {
        pay_status[m] = small(cols.pay_status[m])?;
        bill_amt[m] = int(cols.bill_amt[m])?;
        pay_amt[m] = int(cols.pay_amt[m])?;
    }

    Ok(CustomerRecord {
        id: id as u64,
        limit_bal,
        sex: small(cols.sex)?,
        education: small(cols.education)?,
        marriage: small(cols.marriage)?,
        age,
        pay_status,
        bill_amt,
        pay_amt,
        label: label as u8,
    })
}

/// Integers, also accepting an integral decimal such as `150000.0`.
fn parse_int(raw: &str) -> Option<i64> {
    if let Ok(v) = raw.parse::<i64>() {
        return Some(v);
    }
    let f = raw.parse::<f64>().ok()?;
    (f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

/// Writes records in the source layout (newest month first, UCI column order).
pub fn write_source<W: Write>(records: &[CustomerRecord], writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(source_header())?;
    for r in records {
        let mut row: Vec<String> = vec![
            r.id.to_string(),
            r.limit_bal.to_string(),
            r.sex.to_string(),
            r.education.to_string(),
            r.marriage.to_string(),
            r.age.to_string(),
        ];
        row.extend(r.pay_status.iter().rev().map(|v| v.to_string()));
        row.extend(r.bill_amt.iter().rev().map(|v| v.to_string()));
        row.extend(r.pay_amt.iter().rev().map(|v| v.to_string()));
        row.push(r.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
