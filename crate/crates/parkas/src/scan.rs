//! Generic associative-scan engine.
//!
//! Provides a sequential reference scan, a work-efficient parallel tree scan
//! (up-sweep, down-sweep with the root set to the identity, and a final pass
//! combining each exclusive prefix with its saved input element), reversed
//! scans for smoothing, and block-level aggregation. Every scan tracks both
//! work (total combine flops) and span (sum over execution levels of the
//! maximum per-invocation cost in that level).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{matmul, FlopLedger, Matrix};

/// Binary operator for scans. `combine` must be associative (within
/// numerical tolerance) and pure; the parallel scans additionally require a
/// two-sided identity element. Operators without one (such as subtraction)
/// can only be scanned sequentially.
pub trait ScanOp: Sync {
    type Elem: Clone + Send + Sync;

    fn name(&self) -> &'static str;

    fn combine(&self, left: &Self::Elem, right: &Self::Elem, ledger: &mut FlopLedger) -> Result<Self::Elem>;

    fn identity(&self) -> Option<Self::Elem> {
        None
    }
}

/// Span/work accounting for one (possibly multi-stage) parallel computation.
///
/// Each level is one parallel step: its span contribution is the maximum
/// per-invocation flop cost in the level, its work contribution the sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpanStats {
    pub work_flops: u64,
    pub span_flops: u64,
    pub levels: usize,
}

impl SpanStats {
    pub fn add_level(&mut self, costs: &[u64]) {
        if costs.is_empty() {
            return;
        }
        self.span_flops += costs.iter().copied().max().unwrap_or(0);
        self.work_flops += costs.iter().sum::<u64>();
        self.levels += 1;
    }

    /// A stage of `depth` dependent steps whose per-chain totals are given;
    /// contributes the maximum chain total to the span.
    pub fn add_chained_level(&mut self, chain_totals: &[u64], depth: usize) {
        if chain_totals.is_empty() || depth == 0 {
            return;
        }
        self.span_flops += chain_totals.iter().copied().max().unwrap_or(0);
        self.work_flops += chain_totals.iter().sum::<u64>();
        self.levels += depth;
    }

    pub fn absorb(&mut self, other: SpanStats) {
        self.work_flops += other.work_flops;
        self.span_flops += other.span_flops;
        self.levels += other.levels;
    }
}

/// Scan output: inclusive prefixes plus span/work accounting.
#[derive(Debug, Clone)]
pub struct ScanReport<T> {
    pub results: Vec<T>,
    pub stats: SpanStats,
}

/// The same operator with swapped operands. Scanning a reversed sequence
/// under the opposite operator composes suffix products in original order.
pub struct Opposite<'a, Op>(pub &'a Op);

impl<Op: ScanOp> ScanOp for Opposite<'_, Op> {
    type Elem = Op::Elem;

    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn combine(&self, left: &Self::Elem, right: &Self::Elem, ledger: &mut FlopLedger) -> Result<Self::Elem> {
        self.0.combine(right, left, ledger)
    }

    fn identity(&self) -> Option<Self::Elem> {
        self.0.identity()
    }
}

/// Left-to-right sequential scan; every combine is its own level, so span
/// equals work.
pub fn seq_scan<Op: ScanOp>(elems: &[Op::Elem], op: &Op, ledger: &mut FlopLedger) -> Result<ScanReport<Op::Elem>> {
    if elems.is_empty() {
        return Err(Error::EmptyInput("seq_scan"));
    }
    let mut stats = SpanStats::default();
    let mut results = Vec::with_capacity(elems.len());
    results.push(elems[0].clone());
    for e in &elems[1..] {
        let mut local = FlopLedger::new();
        let next = op.combine(results.last().expect("nonempty"), e, &mut local)?;
        stats.add_level(&[local.work()]);
        ledger.merge(local);
        results.push(next);
    }
    Ok(ScanReport { results, stats })
}

/// Exclusive prefixes of `elems` by the tree algorithm: pad to a power of
/// two with the identity, up-sweep, set the root to the identity, down-sweep.
fn exclusive_scan<Op: ScanOp>(
    elems: &[Op::Elem],
    op: &Op,
    stats: &mut SpanStats,
    ledger: &mut FlopLedger,
) -> Result<Vec<Op::Elem>> {
    let n = elems.len();
    let identity = op.identity().ok_or(Error::MissingIdentity(op.name()))?;
    let size = n.next_power_of_two();
    let mut tree: Vec<Op::Elem> = Vec::with_capacity(size);
    tree.extend_from_slice(elems);
    tree.resize(size, identity.clone());

    let mut half = 1usize;
    while half < size {
        let pairs: Vec<(usize, usize)> = (0..size)
            .step_by(2 * half)
            .map(|i| (i + half - 1, i + 2 * half - 1))
            .collect();
        let (values, costs) = run_level_merge(pairs.len(), ledger, |j, local| {
            let (left, right) = pairs[j];
            op.combine(&tree[left], &tree[right], local)
        })?;
        for (&(_, right), value) in pairs.iter().zip(values) {
            tree[right] = value;
        }
        stats.add_level(&costs);
        half <<= 1;
    }

    tree[size - 1] = identity;

    let mut half = size >> 1;
    while half >= 1 {
        let pairs: Vec<(usize, usize)> = (0..size)
            .step_by(2 * half)
            .map(|i| (i + half - 1, i + 2 * half - 1))
            .collect();
        // New right child is (parent exclusive prefix) combined with the
        // saved left subtree total, in that order.
        let (values, costs) = run_level_merge(pairs.len(), ledger, |j, local| {
            let (left, right) = pairs[j];
            op.combine(&tree[right], &tree[left], local)
        })?;
        for (&(left, right), value) in pairs.iter().zip(values) {
            let parent = std::mem::replace(&mut tree[right], value);
            tree[left] = parent;
        }
        stats.add_level(&costs);
        half >>= 1;
    }

    tree.truncate(n);
    Ok(tree)
}

/// Runs one parallel level: invocation `i` works under a fresh ledger, and
/// the per-invocation ledgers merge back into `ledger` in index order, so
/// accounting is deterministic regardless of the physical schedule.
pub(crate) fn run_level_merge<T, F>(count: usize, ledger: &mut FlopLedger, job: F) -> Result<(Vec<T>, Vec<u64>)>
where
    T: Send,
    F: Fn(usize, &mut FlopLedger) -> Result<T> + Sync,
{
    let outcomes: Vec<Result<(T, FlopLedger)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut local = FlopLedger::new();
            let value = job(i, &mut local)?;
            Ok((value, local))
        })
        .collect();
    let mut values = Vec::with_capacity(count);
    let mut costs = Vec::with_capacity(count);
    for outcome in outcomes {
        let (value, local) = outcome?;
        costs.push(local.work());
        ledger.merge(local);
        values.push(value);
    }
    Ok((values, costs))
}

/// Work-efficient parallel scan producing inclusive prefixes identical (up
/// to the operator's numerical tolerance) to `seq_scan`.
pub fn par_scan<Op: ScanOp>(elems: &[Op::Elem], op: &Op, ledger: &mut FlopLedger) -> Result<ScanReport<Op::Elem>> {
    if elems.is_empty() {
        return Err(Error::EmptyInput("par_scan"));
    }
    let mut stats = SpanStats::default();
    let exclusive = exclusive_scan(elems, op, &mut stats, ledger)?;
    let (results, costs) = run_level_merge(elems.len(), ledger, |i, local| {
        op.combine(&exclusive[i], &elems[i], local)
    })?;
    stats.add_level(&costs);
    Ok(ScanReport { results, stats })
}

/// Combines consecutive runs of `block_len` elements left-to-right into one
/// element each; the final block may be shorter.
pub fn block_reduce<Op: ScanOp>(
    elems: &[Op::Elem],
    op: &Op,
    block_len: usize,
    ledger: &mut FlopLedger,
) -> Result<Vec<Op::Elem>> {
    if block_len < 1 {
        return Err(Error::InvalidArg(format!("block length must be >= 1, got {block_len}")));
    }
    if elems.is_empty() {
        return Err(Error::EmptyInput("block_reduce"));
    }
    let prefixes = block_prefixes(elems, op, block_len, &mut SpanStats::default(), ledger)?;
    Ok(prefixes.into_iter().map(|mut p| p.pop().expect("nonempty block")).collect())
}

/// Within-block inclusive prefixes, blocks processed in parallel and folded
/// sequentially inside. Span contribution is the worst block chain.
fn block_prefixes<Op: ScanOp>(
    elems: &[Op::Elem],
    op: &Op,
    block_len: usize,
    stats: &mut SpanStats,
    ledger: &mut FlopLedger,
) -> Result<Vec<Vec<Op::Elem>>> {
    let chunks: Vec<&[Op::Elem]> = elems.chunks(block_len).collect();
    let (prefixes, chain_costs) = run_level_merge(chunks.len(), ledger, |b, local| {
        let chunk = chunks[b];
        let mut acc = Vec::with_capacity(chunk.len());
        acc.push(chunk[0].clone());
        for e in &chunk[1..] {
            let next = op.combine(acc.last().expect("nonempty"), e, local)?;
            acc.push(next);
        }
        Ok(acc)
    })?;
    let depth = block_len.min(elems.len()) - 1;
    stats.add_chained_level(&chain_costs, depth);
    Ok(prefixes)
}

/// Parallel scan with block-level aggregation: elements are pre-combined in
/// blocks of `block_len`, the block elements are tree-scanned, and within-
/// block prefixes are expanded back out. `block_len = 1` is exactly
/// `par_scan`; results agree with `seq_scan` for any block length.
pub fn block_scan<Op: ScanOp>(
    elems: &[Op::Elem],
    op: &Op,
    block_len: usize,
    ledger: &mut FlopLedger,
) -> Result<ScanReport<Op::Elem>> {
    if block_len < 1 {
        return Err(Error::InvalidArg(format!("block length must be >= 1, got {block_len}")));
    }
    if elems.is_empty() {
        return Err(Error::EmptyInput("block_scan"));
    }
    if block_len == 1 {
        return par_scan(elems, op, ledger);
    }
    let mut stats = SpanStats::default();
    let prefixes = block_prefixes(elems, op, block_len, &mut stats, ledger)?;
    let block_elems: Vec<Op::Elem> = prefixes.iter().map(|p| p.last().expect("nonempty").clone()).collect();
    let exclusive = exclusive_scan(&block_elems, op, &mut stats, ledger)?;
    let (results, costs) = run_level_merge(elems.len(), ledger, |i, local| {
        let block = i / block_len;
        let offset = i % block_len;
        op.combine(&exclusive[block], &prefixes[block][offset], local)
    })?;
    stats.add_level(&costs);
    Ok(ScanReport { results, stats })
}

/// Suffix products in original time order: `results[k] = a_{k+1} * ... * a_n`
/// (0-based `k`). Implemented by reversing the sequence, scanning under the
/// opposite operator, and reversing the results.
pub fn reverse_scan<Op: ScanOp>(elems: &[Op::Elem], op: &Op, ledger: &mut FlopLedger) -> Result<ScanReport<Op::Elem>> {
    reverse_block_scan(elems, op, 1, ledger)
}

/// Block-aggregated reversed scan; see `reverse_scan` and `block_scan`.
pub fn reverse_block_scan<Op: ScanOp>(
    elems: &[Op::Elem],
    op: &Op,
    block_len: usize,
    ledger: &mut FlopLedger,
) -> Result<ScanReport<Op::Elem>> {
    let reversed: Vec<Op::Elem> = elems.iter().rev().cloned().collect();
    let mut report = block_scan(&reversed, &Opposite(op), block_len, ledger)?;
    report.results.reverse();
    Ok(report)
}

/// Scalar addition; identity 0, one flop per combine.
pub struct ScalarAdd;

impl ScanOp for ScalarAdd {
    type Elem = f64;

    fn name(&self) -> &'static str {
        "scalar addition"
    }

    fn combine(&self, left: &f64, right: &f64, ledger: &mut FlopLedger) -> Result<f64> {
        ledger.charge("scalar_add", 1);
        Ok(left + right)
    }

    fn identity(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Square-matrix product; identity I. Non-commutative, which exercises the
/// operand ordering of the tree and reversed scans.
pub struct MatProduct {
    pub dim: usize,
}

impl ScanOp for MatProduct {
    type Elem = Matrix;

    fn name(&self) -> &'static str {
        "matrix product"
    }

    fn combine(&self, left: &Matrix, right: &Matrix, ledger: &mut FlopLedger) -> Result<Matrix> {
        matmul(left, right, ledger)
    }

    fn identity(&self) -> Option<Matrix> {
        Some(Matrix::identity(self.dim))
    }
}
