//! Span/work flop measurement of the four algorithms on one data set.
//!
//! Measurement protocol: `kf` is the sequential Kalman filter including its
//! per-step evidence terms, and `pkf` is the parallel filter plus the
//! two-pass parallel marginal likelihood, so both sides of the filtering
//! comparison produce the same outputs. `rts` and `prts` measure only the
//! smoothing pass, with filtered (and predicted) moments supplied by a prior
//! filter run whose cost is excluded on both sides. Sequential algorithms
//! have span equal to work by definition.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernel::{FlopLedger, Vector};
use crate::pkf::{parallel_filter, parallel_loglik};
use crate::prts::parallel_smoother;
use crate::sequential::{kalman_filter, rts_smoother};
use crate::ssm::Lgssm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Kf,
    Pkf,
    Rts,
    Prts,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Kf, Algorithm::Pkf, Algorithm::Rts, Algorithm::Prts];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Kf => "kf",
            Algorithm::Pkf => "pkf",
            Algorithm::Rts => "rts",
            Algorithm::Prts => "prts",
        }
    }

    pub fn parse(s: &str) -> Option<Algorithm> {
        match s {
            "kf" => Some(Algorithm::Kf),
            "pkf" => Some(Algorithm::Pkf),
            "rts" => Some(Algorithm::Rts),
            "prts" => Some(Algorithm::Prts),
            _ => None,
        }
    }
}

/// One measured algorithm run. Flop columns are deterministic for a given
/// model, data and block length; wall time is informational only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Measurement {
    pub n: usize,
    pub algorithm: Algorithm,
    pub work_flops: u64,
    pub span_flops: u64,
    pub wall_time_ns: u128,
    pub block_len: usize,
    pub seed: u64,
}

/// Runs all four algorithms on one data set and reports their span/work
/// flops. `seed` is recorded verbatim in the measurements.
pub fn measure_all(
    model: &Lgssm,
    ys: &[Vector],
    block_len: usize,
    seed: u64,
) -> Result<Vec<Measurement>> {
    let n = model.n();
    let mut out = Vec::with_capacity(4);

    let mut ledger = FlopLedger::new();
    let t = Instant::now();
    let run = kalman_filter(model, ys, &mut ledger)?;
    let kf_ns = t.elapsed().as_nanos();
    out.push(Measurement {
        n,
        algorithm: Algorithm::Kf,
        work_flops: ledger.work(),
        span_flops: ledger.work(),
        wall_time_ns: kf_ns,
        block_len,
        seed,
    });

    let mut ledger = FlopLedger::new();
    let t = Instant::now();
    let (par_filtered, filter_stats) = parallel_filter(model, ys, block_len, &mut ledger)?;
    let loglik = parallel_loglik(model, &par_filtered, ys, &mut ledger)?;
    let pkf_ns = t.elapsed().as_nanos();
    let mut pkf_stats = filter_stats;
    pkf_stats.absorb(loglik.stats);
    debug_assert_eq!(pkf_stats.work_flops, ledger.work());
    out.push(Measurement {
        n,
        algorithm: Algorithm::Pkf,
        work_flops: pkf_stats.work_flops,
        span_flops: pkf_stats.span_flops,
        wall_time_ns: pkf_ns,
        block_len,
        seed,
    });

    let mut ledger = FlopLedger::new();
    let t = Instant::now();
    let _ = rts_smoother(model, &run, &mut ledger)?;
    let rts_ns = t.elapsed().as_nanos();
    out.push(Measurement {
        n,
        algorithm: Algorithm::Rts,
        work_flops: ledger.work(),
        span_flops: ledger.work(),
        wall_time_ns: rts_ns,
        block_len,
        seed,
    });

    let mut ledger = FlopLedger::new();
    let t = Instant::now();
    let (_, prts_stats) = parallel_smoother(model, &par_filtered, block_len, &mut ledger)?;
    let prts_ns = t.elapsed().as_nanos();
    out.push(Measurement {
        n,
        algorithm: Algorithm::Prts,
        work_flops: prts_stats.work_flops,
        span_flops: prts_stats.span_flops,
        wall_time_ns: prts_ns,
        block_len,
        seed,
    });

    Ok(out)
}
