//! Per-account risk records and their on-disk form.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{combine, RunError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskRecord {
    pub account: u64,
    pub r_offline: f64,
    pub last_r_total: f64,
    pub last_batch: usize,
    /// Position of the last applied transaction within the account's batch
    /// stream; 0 before any transaction.
    pub last_ordinal: u64,
    /// Whether a transaction with positive online risk was applied this batch.
    pub active: bool,
}

impl RiskRecord {
    pub fn new(account: u64, r_offline: f64, batch: usize) -> Self {
        RiskRecord { account, r_offline, last_r_total: r_offline, last_batch: batch, last_ordinal: 0, active: false }
    }

    /// Fuses `r_online` with the carried risk. A positive online risk carries
    /// the fused value forward as the new offline risk.
    pub fn apply(&mut self, r_online: f64, lambda: f64, batch: usize, ordinal: u64) -> Result<f64, RunError> {
        let r_total = combine(r_online, self.r_offline, lambda)?;
        if r_online > 0.0 {
            self.r_offline = r_total;
            self.active = true;
        }
        self.last_r_total = r_total;
        self.last_batch = batch;
        self.last_ordinal = ordinal;
        Ok(r_total)
    }
}

/// One record per account, kept in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RiskState {
    records: Vec<RiskRecord>,
    index: HashMap<u64, usize>,
}

pub const STATE_HEADER: [&str; 6] = ["account", "r_offline", "last_r_total", "last_batch", "last_ordinal", "active"];

impl RiskState {
    pub fn from_records(records: Vec<RiskRecord>) -> Result<Self, RunError> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            for v in [r.r_offline, r.last_r_total] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(RunError::Contract(format!("account {} has risk {v} outside [0, 1]", r.account)));
                }
            }
            if index.insert(r.account, i).is_some() {
                return Err(RunError::Contract(format!("account {} appears twice", r.account)));
            }
        }
        Ok(RiskState { records, index })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[RiskRecord] {
        &self.records
    }

    pub fn position(&self, account: u64) -> Option<usize> {
        self.index.get(&account).copied()
    }

    pub fn get(&self, account: u64) -> Result<&RiskRecord, RunError> {
        self.position(account).map(|i| &self.records[i]).ok_or(RunError::UnknownAccount(account))
    }

    pub fn get_mut(&mut self, account: u64) -> Result<&mut RiskRecord, RunError> {
        match self.position(account) {
            Some(i) => Ok(&mut self.records[i]),
            None => Err(RunError::UnknownAccount(account)),
        }
    }

    pub(crate) fn records_mut(&mut self) -> &mut [RiskRecord] {
        &mut self.records
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<(), RunError> {
        let mut w = csv::Writer::from_writer(writer);
        if self.records.is_empty() {
            w.write_record(STATE_HEADER)?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self, RunError> {
        let mut rdr = csv::Reader::from_reader(reader);
        if rdr.headers()?.iter().ne(STATE_HEADER) {
            return Err(RunError::Contract(format!("state header must be {}", STATE_HEADER.join(","))));
        }
        let records = rdr.deserialize().collect::<Result<Vec<RiskRecord>, _>>()?;
        Self::from_records(records)
    }

    /// Writes to a sibling temporary file and renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = Path::new(&tmp);
        {
            let file = fs::File::create(tmp)?;
            let mut buf = std::io::BufWriter::new(file);
            self.write(&mut buf)?;
            buf.flush()?;
            buf.get_ref().sync_all()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        Self::read(std::io::BufReader::new(fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RiskState {
        let mut a = RiskRecord::new(7, 0.25, 1);
        a.apply(1.0, 0.5, 1, 1).unwrap();
        let b = RiskRecord::new(3, 0.1, 1);
        RiskState::from_records(vec![a, b]).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let s = sample();
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), STATE_HEADER.join(","));
        assert_eq!(RiskState::read(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn atomic_save_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.csv");
        sample().save(&path).unwrap();
        sample().save(&path).unwrap();
        assert_eq!(RiskState::load(&path).unwrap(), sample());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn rejects_duplicates_and_out_of_range() {
        let r = RiskRecord::new(1, 0.5, 1);
        assert!(RiskState::from_records(vec![r, r]).is_err());
        let mut bad = r;
        bad.r_offline = 1.5;
        assert!(RiskState::from_records(vec![bad]).is_err());
    }

    #[test]
    fn unknown_account() {
        assert!(matches!(sample().get(99), Err(RunError::UnknownAccount(99))));
    }
}
