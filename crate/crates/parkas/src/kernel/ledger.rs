//! Flop accounting ledger.

use std::collections::BTreeMap;

/// One accounting record: an operation tag and its flop charge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerRecord {
    pub tag: &'static str,
    pub flops: u64,
}

/// Accumulates flop charges per operation invocation.
///
/// Work totals are a plain sum over records, so merging ledgers in any
/// order yields the same total. Each parallel task gets its own ledger;
/// ledgers are merged at join points.
#[derive(Debug, Clone, Default)]
pub struct FlopLedger {
    records: Vec<LedgerRecord>,
    total: u64,
}

impl FlopLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `flops` against `tag`.
    pub fn charge(&mut self, tag: &'static str, flops: u64) {
        self.records.push(LedgerRecord { tag, flops });
        self.total += flops;
    }

    /// Total work in flops: the sum of all records.
    pub fn work(&self) -> u64 {
        self.total
    }

    pub fn records(&self) -> &[LedgerRecord] {
        &self.records
    }

    /// Appends all records of `other` to this ledger.
    pub fn merge(&mut self, other: FlopLedger) {
        self.total += other.total;
        self.records.extend(other.records);
    }

    /// Work grouped by tag, in deterministic (sorted) order.
    pub fn by_tag(&self) -> BTreeMap<&'static str, u64> {
        let mut map = BTreeMap::new();
        for rec in &self.records {
            *map.entry(rec.tag).or_insert(0) += rec.flops;
        }
        map
    }
}
