//! Finite-state instantiation of the general filtering/smoothing operator
//! algebra, with all integrals realized as finite sums under the counting
//! measure. Because the discrete combination is exact (no proportionality
//! relaxation), it validates the operator definitions and theorems against
//! the enumeration oracle to near machine precision, including direct
//! recovery of the marginal likelihood from the scan itself.

use crate::error::{Error, Result};
use crate::kernel::{matmul, FlopLedger, Matrix, Vector};
use crate::scan::{self, par_scan, reverse_scan, ScanOp, SpanStats};
use crate::ssm::HmmModel;

/// Discrete filtering element: `cond[z][x] = p(x_k = x | y_k, x_{k-1} = z)`
/// (rows sum to one) and `log_lik[z] = log p(y_k | x_{k-1} = z)`. The
/// likelihood factor is kept in log domain so that long products do not
/// underflow.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmFilterElement {
    pub cond: Matrix,
    pub log_lik: Vector,
}

impl HmmFilterElement {
    /// Identity: Dirac conditional with unit likelihood.
    pub fn identity(ns: usize) -> Self {
        Self { cond: Matrix::identity(ns), log_lik: Vector::zeros(ns) }
    }

    pub fn states(&self) -> usize {
        self.log_lik.dim()
    }
}

/// Discrete smoothing element: `cond[z][x] = p(x_k = x | y_{1:k}, x_{k+1} = z)`,
/// rows summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmSmoothElement {
    pub cond: Matrix,
}

impl HmmSmoothElement {
    pub fn identity(ns: usize) -> Self {
        Self { cond: Matrix::identity(ns) }
    }
}

/// Filtering element for step `k` (1-based). For k = 1 the predecessor is
/// integrated out through the initial distribution, which makes all rows
/// identical and the likelihood constant.
pub fn hmm_filter_element(model: &HmmModel, k: usize, ledger: &mut FlopLedger) -> Result<HmmFilterElement> {
    let ns = model.states();
    let n = model.n();
    if k < 1 || k > n {
        return Err(Error::InvalidArg(format!("step {k} outside 1..={n}")));
    }
    let lik = &model.emission[k - 1];
    let mut cond = Matrix::zeros(ns, ns);
    let mut log_lik = Vector::zeros(ns);

    if k == 1 {
        let mut pred = vec![0.0; ns];
        for z in 0..ns {
            let pz = model.init.get(z);
            for (x, p) in pred.iter_mut().enumerate() {
                *p += pz * model.trans.get(z, x);
            }
        }
        let weighted: Vec<f64> = pred.iter().enumerate().map(|(x, p)| lik.get(x) * p).collect();
        let norm: f64 = weighted.iter().sum();
        if norm.is_nan() || norm <= 0.0 {
            return Err(Error::ZeroLikelihood { step: 1 });
        }
        for z in 0..ns {
            for (x, w) in weighted.iter().enumerate() {
                cond.set(z, x, w / norm);
            }
            log_lik.set(z, norm.ln());
        }
        ledger.charge("hmm_element", (3 * ns * ns + 3 * ns + 1) as u64);
        return Ok(HmmFilterElement { cond, log_lik });
    }

    for z in 0..ns {
        let mut norm = 0.0;
        for x in 0..ns {
            let w = lik.get(x) * model.trans.get(z, x);
            cond.set(z, x, w);
            norm += w;
        }
        if norm.is_nan() || norm <= 0.0 {
            return Err(Error::ZeroLikelihood { step: k });
        }
        for x in 0..ns {
            let v = cond.get(z, x) / norm;
            cond.set(z, x, v);
        }
        log_lik.set(z, norm.ln());
    }
    ledger.charge("hmm_element", (3 * ns * ns + ns) as u64);
    Ok(HmmFilterElement { cond, log_lik })
}

/// Discrete filtering combination:
///
///   f_ij(x|z) = sum_y g_j(y) f_j(x|y) f_i(y|z) / sum_y g_j(y) f_i(y|z)
///   g_ij(z)   = g_i(z) * sum_y g_j(y) f_i(y|z)
///
/// computed in log domain by rescaling g_j with its maximum before
/// exponentiation.
pub fn combine_hmm_filter(
    ei: &HmmFilterElement,
    ej: &HmmFilterElement,
    ledger: &mut FlopLedger,
) -> Result<HmmFilterElement> {
    let ns = ei.states();
    if ns != ej.states() {
        return Err(Error::DimMismatch {
            op: "combine_hmm_filter",
            detail: format!("state counts {} and {}", ns, ej.states()),
        });
    }
    let shift = ej
        .log_lik
        .as_slice()
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let weights: Vec<f64> = ej.log_lik.as_slice().iter().map(|&v| (v - shift).exp()).collect();

    // scaled[z][y] = f_i(y|z) * g_j(y); row sums give the denominators.
    let mut scaled = Matrix::zeros(ns, ns);
    for z in 0..ns {
        for (y, w) in weights.iter().enumerate() {
            scaled.set(z, y, ei.cond.get(z, y) * w);
        }
    }
    ledger.charge("hmm_scale", (ns * ns) as u64 + 2 * ns as u64);

    let numer = matmul(&scaled, &ej.cond, ledger)?;
    let mut cond = Matrix::zeros(ns, ns);
    let mut log_lik = Vector::zeros(ns);
    for z in 0..ns {
        let denom: f64 = (0..ns).map(|y| scaled.get(z, y)).sum();
        if denom.is_nan() || denom <= 0.0 {
            return Err(Error::ZeroDenominator("combine_hmm_filter"));
        }
        for x in 0..ns {
            cond.set(z, x, numer.get(z, x) / denom);
        }
        log_lik.set(z, ei.log_lik.get(z) + denom.ln() + shift);
    }
    ledger.charge("hmm_normalize", (2 * ns * ns + 3 * ns) as u64);
    Ok(HmmFilterElement { cond, log_lik })
}

/// Smoothing element for step `k`: rows proportional to
/// `trans[x][z] * filtered[x]`; the boundary k = n repeats the filtered
/// distribution in every row.
pub fn hmm_smooth_element(
    model: &HmmModel,
    filtered: &Vector,
    k: usize,
    ledger: &mut FlopLedger,
) -> Result<HmmSmoothElement> {
    let ns = model.states();
    let n = model.n();
    if k < 1 || k > n {
        return Err(Error::InvalidArg(format!("step {k} outside 1..={n}")));
    }
    let mut cond = Matrix::zeros(ns, ns);
    if k == n {
        for z in 0..ns {
            for x in 0..ns {
                cond.set(z, x, filtered.get(x));
            }
        }
        return Ok(HmmSmoothElement { cond });
    }
    for z in 0..ns {
        let mut norm = 0.0;
        for x in 0..ns {
            let w = model.trans.get(x, z) * filtered.get(x);
            cond.set(z, x, w);
            norm += w;
        }
        if norm.is_nan() || norm <= 0.0 {
            return Err(Error::ZeroDenominator("hmm_smooth_element"));
        }
        for x in 0..ns {
            let v = cond.get(z, x) / norm;
            cond.set(z, x, v);
        }
    }
    ledger.charge("hmm_element", (3 * ns * ns) as u64);
    Ok(HmmSmoothElement { cond })
}

/// Discrete smoothing combination `a_ij(x|z) = sum_y a_i(x|y) a_j(y|z)`,
/// which in row-major conditional tables is the product `m_j m_i`. Rows
/// stay stochastic exactly.
pub fn combine_hmm_smooth(
    ei: &HmmSmoothElement,
    ej: &HmmSmoothElement,
    ledger: &mut FlopLedger,
) -> Result<HmmSmoothElement> {
    Ok(HmmSmoothElement { cond: matmul(&ej.cond, &ei.cond, ledger)? })
}

/// Scan operator wrapper for discrete filtering elements.
pub struct HmmFilterOp {
    pub ns: usize,
}

impl ScanOp for HmmFilterOp {
    type Elem = HmmFilterElement;

    fn name(&self) -> &'static str {
        "discrete filtering operator"
    }

    fn combine(&self, left: &HmmFilterElement, right: &HmmFilterElement, ledger: &mut FlopLedger) -> Result<HmmFilterElement> {
        combine_hmm_filter(left, right, ledger)
    }

    fn identity(&self) -> Option<HmmFilterElement> {
        Some(HmmFilterElement::identity(self.ns))
    }
}

/// Scan operator wrapper for discrete smoothing elements.
pub struct HmmSmoothOp {
    pub ns: usize,
}

impl ScanOp for HmmSmoothOp {
    type Elem = HmmSmoothElement;

    fn name(&self) -> &'static str {
        "discrete smoothing operator"
    }

    fn combine(&self, left: &HmmSmoothElement, right: &HmmSmoothElement, ledger: &mut FlopLedger) -> Result<HmmSmoothElement> {
        combine_hmm_smooth(left, right, ledger)
    }

    fn identity(&self) -> Option<HmmSmoothElement> {
        Some(HmmSmoothElement::identity(self.ns))
    }
}

/// Output of the parallel HMM filter.
#[derive(Debug, Clone)]
pub struct HmmFilterRun {
    /// p(x_k | y_{1:k}) for k = 1..n.
    pub filtered: Vec<Vector>,
    /// log p(y_{1:k}) for k = 1..n, read directly from the scanned
    /// likelihood components.
    pub prefix_loglik: Vec<f64>,
    pub stats: SpanStats,
}

/// Parallel discrete filter: element construction level plus one scan. The
/// k-th prefix has identical rows (its first element integrates out the
/// predecessor), so row zero is the filtered marginal, and its likelihood
/// component is exactly p(y_{1:k}).
pub fn parallel_hmm_filter(model: &HmmModel, ledger: &mut FlopLedger) -> Result<HmmFilterRun> {
    model.validate()?;
    let n = model.n();
    let ns = model.states();
    let mut stats = SpanStats::default();
    let (elems, costs) = scan::run_level_merge(n, ledger, |i, local| hmm_filter_element(model, i + 1, local))?;
    stats.add_level(&costs);

    let report = par_scan(&elems, &HmmFilterOp { ns }, ledger)?;
    stats.absorb(report.stats);

    let mut filtered = Vec::with_capacity(n);
    let mut prefix_loglik = Vec::with_capacity(n);
    for prefix in report.results {
        filtered.push(Vector::from(prefix.cond.row(0).to_vec()));
        prefix_loglik.push(prefix.log_lik.get(0));
    }
    Ok(HmmFilterRun { filtered, prefix_loglik, stats })
}

/// Output of the parallel HMM smoother (includes the filter pass it ran).
#[derive(Debug, Clone)]
pub struct HmmSmootherRun {
    pub filtered: Vec<Vector>,
    /// p(x_k | y_{1:n}) for k = 1..n.
    pub smoothed: Vec<Vector>,
    pub prefix_loglik: Vec<f64>,
    pub stats: SpanStats,
}

/// Parallel discrete smoother: runs the parallel filter, builds smoothing
/// elements from the filtered marginals, and composes suffixes with a
/// reversed scan. Every suffix containing the boundary element has
/// identical rows equal to the smoothed marginal.
pub fn parallel_hmm_smoother(model: &HmmModel, ledger: &mut FlopLedger) -> Result<HmmSmootherRun> {
    let filter_run = parallel_hmm_filter(model, ledger)?;
    let n = model.n();
    let ns = model.states();
    let mut stats = filter_run.stats;
    let (elems, costs) = scan::run_level_merge(n, ledger, |i, local| {
        hmm_smooth_element(model, &filter_run.filtered[i], i + 1, local)
    })?;
    stats.add_level(&costs);

    let report = reverse_scan(&elems, &HmmSmoothOp { ns }, ledger)?;
    stats.absorb(report.stats);

    let smoothed = report
        .results
        .into_iter()
        .map(|suffix| Vector::from(suffix.cond.row(0).to_vec()))
        .collect();
    Ok(HmmSmootherRun {
        filtered: filter_run.filtered,
        smoothed,
        prefix_loglik: filter_run.prefix_loglik,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequential::{brute_force_posterior, hmm_backward_smooth, hmm_forward};
    use crate::ssm::make_random_hmm;

    fn rng_stream(mut state: u64) -> impl FnMut() -> f64 {
        move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    fn random_filter_element(ns: usize, seed: u64) -> HmmFilterElement {
        let mut next = rng_stream(seed);
        let mut cond = Matrix::zeros(ns, ns);
        for z in 0..ns {
            let row: Vec<f64> = (0..ns).map(|_| next() + 0.05).collect();
            let s: f64 = row.iter().sum();
            for (x, v) in row.iter().enumerate() {
                cond.set(z, x, v / s);
            }
        }
        let log_lik = Vector::from((0..ns).map(|_| (next() + 0.1).ln()).collect::<Vec<_>>());
        HmmFilterElement { cond, log_lik }
    }

    fn random_smooth_element(ns: usize, seed: u64) -> HmmSmoothElement {
        HmmSmoothElement { cond: random_filter_element(ns, seed).cond }
    }

    #[test]
    fn uninformative_emission_keeps_transition() {
        let (mut model, _) = make_random_hmm(3, 3, 2).unwrap();
        model.emission[1] = Vector::from(vec![0.4, 0.4, 0.4]);
        let mut ledger = FlopLedger::new();
        let e = hmm_filter_element(&model, 2, &mut ledger).unwrap();
        for z in 0..3 {
            assert!((e.log_lik.get(z) - 0.4f64.ln()).abs() <= 1e-12);
            for x in 0..3 {
                assert!((e.cond.get(z, x) - model.trans.get(z, x)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn point_mass_emission_concentrates_rows() {
        let (mut model, _) = make_random_hmm(3, 3, 7).unwrap();
        model.emission[1] = Vector::from(vec![0.0, 0.0, 0.9]);
        let mut ledger = FlopLedger::new();
        let e = hmm_filter_element(&model, 2, &mut ledger).unwrap();
        for z in 0..3 {
            assert!((e.cond.get(z, 2) - 1.0).abs() <= 1e-12);
            let expect = (model.trans.get(z, 2) * 0.9).ln();
            assert!((e.log_lik.get(z) - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn first_element_rows_identical() {
        let (model, _) = make_random_hmm(4, 3, 3).unwrap();
        let mut ledger = FlopLedger::new();
        let e = hmm_filter_element(&model, 1, &mut ledger).unwrap();
        for z in 1..4 {
            assert!((e.log_lik.get(z) - e.log_lik.get(0)).abs() <= 1e-15);
            for x in 0..4 {
                assert_eq!(e.cond.get(z, x), e.cond.get(0, x));
            }
        }
    }

    #[test]
    fn zero_emission_row_is_explicit_error() {
        let (mut model, _) = make_random_hmm(2, 2, 5).unwrap();
        model.emission[1] = Vector::zeros(2);
        let mut ledger = FlopLedger::new();
        assert!(matches!(
            hmm_filter_element(&model, 2, &mut ledger),
            Err(Error::ZeroLikelihood { step: 2 })
        ));
    }

    #[test]
    fn filter_combine_identity_laws() {
        let e = random_filter_element(3, 10);
        let id = HmmFilterElement::identity(3);
        let mut ledger = FlopLedger::new();
        for combined in [
            combine_hmm_filter(&e, &id, &mut ledger).unwrap(),
            combine_hmm_filter(&id, &e, &mut ledger).unwrap(),
        ] {
            for z in 0..3 {
                assert!((combined.log_lik.get(z) - e.log_lik.get(z)).abs() <= 1e-12);
                for x in 0..3 {
                    assert!((combined.cond.get(z, x) - e.cond.get(z, x)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn filter_combine_preserves_row_stochasticity() {
        let mut ledger = FlopLedger::new();
        let mut acc = random_filter_element(3, 30);
        for seed in 31..40 {
            acc = combine_hmm_filter(&acc, &random_filter_element(3, seed), &mut ledger).unwrap();
            for z in 0..3 {
                let s: f64 = (0..3).map(|x| acc.cond.get(z, x)).sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn filter_combine_associative() {
        for seed in 0..40 {
            let a = random_filter_element(3, 3 * seed + 200);
            let b = random_filter_element(3, 3 * seed + 201);
            let c = random_filter_element(3, 3 * seed + 202);
            let mut ledger = FlopLedger::new();
            let left = combine_hmm_filter(&combine_hmm_filter(&a, &b, &mut ledger).unwrap(), &c, &mut ledger).unwrap();
            let right = combine_hmm_filter(&a, &combine_hmm_filter(&b, &c, &mut ledger).unwrap(), &mut ledger).unwrap();
            for z in 0..3 {
                assert!((left.log_lik.get(z) - right.log_lik.get(z)).abs() <= 1e-12);
                for x in 0..3 {
                    assert!((left.cond.get(z, x) - right.cond.get(z, x)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn prefix_likelihood_matches_enumeration() {
        for seed in 0..8 {
            let (model, _) = make_random_hmm(3, 4, seed + 600).unwrap();
            let mut ledger = FlopLedger::new();
            let mut prefix = hmm_filter_element(&model, 1, &mut ledger).unwrap();
            for k in 2..=4 {
                let e = hmm_filter_element(&model, k, &mut ledger).unwrap();
                prefix = combine_hmm_filter(&prefix, &e, &mut ledger).unwrap();
            }
            let brute = brute_force_posterior(&model).unwrap();
            assert!((prefix.log_lik.get(0) - brute.loglik).abs() <= 1e-12);
            for x in 0..3 {
                assert!((prefix.cond.get(0, x) - brute.filtered[3].get(x)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn smooth_element_uniform_transition_copies_filtered() {
        let (mut model, _) = make_random_hmm(3, 2, 12).unwrap();
        model.trans = Matrix::new(3, 3, vec![1.0 / 3.0; 9]).unwrap();
        let alpha = Vector::from(vec![0.2, 0.5, 0.3]);
        let mut ledger = FlopLedger::new();
        let e = hmm_smooth_element(&model, &alpha, 1, &mut ledger).unwrap();
        for z in 0..3 {
            for x in 0..3 {
                assert!((e.cond.get(z, x) - alpha.get(x)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn smooth_element_boundary_repeats_filtered() {
        let (model, _) = make_random_hmm(3, 2, 13).unwrap();
        let alpha = Vector::from(vec![0.1, 0.6, 0.3]);
        let mut ledger = FlopLedger::new();
        let e = hmm_smooth_element(&model, &alpha, 2, &mut ledger).unwrap();
        for z in 0..3 {
            for x in 0..3 {
                assert_eq!(e.cond.get(z, x), alpha.get(x));
            }
        }
    }

    #[test]
    fn smooth_combine_identity_and_associativity() {
        let e = random_smooth_element(3, 50);
        let id = HmmSmoothElement::identity(3);
        let mut ledger = FlopLedger::new();
        for combined in [
            combine_hmm_smooth(&e, &id, &mut ledger).unwrap(),
            combine_hmm_smooth(&id, &e, &mut ledger).unwrap(),
        ] {
            for z in 0..3 {
                for x in 0..3 {
                    assert!((combined.cond.get(z, x) - e.cond.get(z, x)).abs() <= 1e-14);
                }
            }
        }
        for seed in 0..20 {
            let a = random_smooth_element(3, 3 * seed + 300);
            let b = random_smooth_element(3, 3 * seed + 301);
            let c = random_smooth_element(3, 3 * seed + 302);
            let left = combine_hmm_smooth(&combine_hmm_smooth(&a, &b, &mut ledger).unwrap(), &c, &mut ledger).unwrap();
            let right = combine_hmm_smooth(&a, &combine_hmm_smooth(&b, &c, &mut ledger).unwrap(), &mut ledger).unwrap();
            for z in 0..3 {
                for x in 0..3 {
                    assert!((left.cond.get(z, x) - right.cond.get(z, x)).abs() <= 1e-14);
                }
            }
        }
    }

    #[test]
    fn parallel_single_step_is_bayes_update() {
        let (model, _) = make_random_hmm(3, 1, 77).unwrap();
        let mut ledger = FlopLedger::new();
        let run = parallel_hmm_smoother(&model, &mut ledger).unwrap();
        let fwd = hmm_forward(&model).unwrap();
        for x in 0..3 {
            assert!((run.filtered[0].get(x) - fwd.filtered[0].get(x)).abs() <= 1e-14);
            assert!((run.smoothed[0].get(x) - fwd.filtered[0].get(x)).abs() <= 1e-14);
        }
        assert!((run.prefix_loglik[0] - fwd.loglik).abs() <= 1e-14);
    }

    #[test]
    fn parallel_matches_enumeration_and_sequential() {
        for seed in 0..10 {
            let (model, _) = make_random_hmm(3, 6, seed + 900).unwrap();
            let mut ledger = FlopLedger::new();
            let run = parallel_hmm_smoother(&model, &mut ledger).unwrap();
            let brute = brute_force_posterior(&model).unwrap();
            let fwd = hmm_forward(&model).unwrap();
            let seq_smoothed = hmm_backward_smooth(&model, &fwd).unwrap();
            assert!((run.prefix_loglik[5] - brute.loglik).abs() <= 1e-12);
            for k in 0..6 {
                for x in 0..3 {
                    assert!((run.filtered[k].get(x) - brute.filtered[k].get(x)).abs() <= 1e-12);
                    assert!((run.smoothed[k].get(x) - brute.smoothed[k].get(x)).abs() <= 1e-12);
                    assert!((run.smoothed[k].get(x) - seq_smoothed[k].get(x)).abs() <= 1e-12);
                }
            }
            let prefix_seq = fwd.prefix_loglik();
            for k in 0..6 {
                assert!((run.prefix_loglik[k] - prefix_seq[k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn parallel_matches_sequential_on_long_sequences() {
        let (model, _) = make_random_hmm(3, 10_000, 321).unwrap();
        let mut ledger = FlopLedger::new();
        let run = parallel_hmm_smoother(&model, &mut ledger).unwrap();
        let fwd = hmm_forward(&model).unwrap();
        let seq_smoothed = hmm_backward_smooth(&model, &fwd).unwrap();
        let prefix_seq = fwd.prefix_loglik();
        for k in 0..10_000 {
            assert!((run.prefix_loglik[k] - prefix_seq[k]).abs() <= 1e-10 * prefix_seq[k].abs().max(1.0));
            for x in 0..3 {
                assert!((run.filtered[k].get(x) - fwd.filtered[k].get(x)).abs() <= 1e-10);
                assert!((run.smoothed[k].get(x) - seq_smoothed[k].get(x)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn uniform_model_closed_form() {
        // Uniform transition and start with constant emission tables:
        // marginals stay uniform and the log-likelihood is the sum of the
        // per-step table means.
        let ns = 4;
        let levels = [0.3, 0.7, 0.1, 0.9, 0.5];
        let model = HmmModel {
            trans: Matrix::new(ns, ns, vec![0.25; ns * ns]).unwrap(),
            emission: levels.iter().map(|&c| Vector::from(vec![c; ns])).collect(),
            init: Vector::from(vec![0.25; ns]),
        };
        let mut ledger = FlopLedger::new();
        let run = parallel_hmm_smoother(&model, &mut ledger).unwrap();
        let expect: f64 = levels.iter().map(|c| c.ln()).sum();
        assert!((run.prefix_loglik[4] - expect).abs() <= 1e-12);
        for k in 0..5 {
            for x in 0..ns {
                assert!((run.filtered[k].get(x) - 0.25).abs() <= 1e-12);
                assert!((run.smoothed[k].get(x) - 0.25).abs() <= 1e-12);
            }
        }
    }
}
