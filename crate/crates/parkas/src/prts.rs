//! Parallel linear-Gaussian smoothing.
//!
//! Each step becomes the conditional `N(x_k; E x_{k+1} + g, L)` of the state
//! given its successor and the measurements so far; composing conditionals
//! by marginalization is associative, and the suffix product `a_k ... a_n`
//! is exactly the smoothing posterior at step k. A reversed parallel scan
//! therefore yields every smoothed moment in logarithmic span. Elements
//! consume filtered moments, so the driver accepts output from either the
//! sequential or the parallel filter.

use crate::error::{Error, Result};
use crate::kernel::{self, matmul, matvec, sym, FlopLedger, Matrix, Vector};
use crate::scan::{self, reverse_block_scan, ScanOp, SpanStats};
use crate::sequential::GaussianMoment;
use crate::ssm::Lgssm;

/// Smoothing element `(E, g, L)`: gain onto the successor state, offset,
/// and conditional covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothElement {
    pub gain: Matrix,
    pub offset: Vector,
    pub cov: Matrix,
}

impl SmoothElement {
    /// Identity of the composition operator: the Dirac transition.
    pub fn identity(nx: usize) -> Self {
        Self {
            gain: Matrix::identity(nx),
            offset: Vector::zeros(nx),
            cov: Matrix::zeros(nx, nx),
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.dim()
    }
}

/// Builds the smoothing element at step `k` from the filtered moment there.
///
/// For k < n: `E = P F^T (F P F^T + Q)^{-1}`, `g = m - E (F m + u)`,
/// `L = P - E F P`. The boundary element at k = n has `E = 0`, `g = m`,
/// `L = P`, which zeroes the gain of every suffix product that contains it.
pub fn smooth_element(
    model: &Lgssm,
    filtered: &GaussianMoment,
    k: usize,
    ledger: &mut FlopLedger,
) -> Result<SmoothElement> {
    let n = model.n();
    if k < 1 || k > n {
        return Err(Error::InvalidArg(format!("step {k} outside 1..={n}")));
    }
    if k == n {
        return Ok(SmoothElement {
            gain: Matrix::zeros(filtered.mean.dim(), filtered.mean.dim()),
            offset: filtered.mean.clone(),
            cov: filtered.cov.clone(),
        });
    }
    // Transition from step k to k+1 is indexed k.
    let (f, u, q) = model.trans(k);
    let fp = matmul(f, &filtered.cov, ledger)?;
    let pred_cov = sym(&kernel::mat_add(&matmul(&fp, &f.transpose(), ledger)?, q, ledger)?)?;
    // E = P F^T (F P F^T + Q)^{-1}; P symmetric, so P F^T = (F P)^T.
    let gain = kernel::solve(&pred_cov, &fp, ledger)?.transpose();
    let drift = kernel::vec_add(&matvec(f, &filtered.mean, ledger)?, u, ledger)?;
    let offset = kernel::vec_sub(&filtered.mean, &matvec(&gain, &drift, ledger)?, ledger)?;
    let cov = sym(&kernel::mat_sub(&filtered.cov, &matmul(&gain, &fp, ledger)?, ledger)?)?;
    Ok(SmoothElement { gain, offset, cov })
}

/// Composition of smoothing elements: `E_ij = E_i E_j`,
/// `g_ij = E_i g_j + g_i`, `L_ij = E_i L_j E_i^T + L_i`.
pub fn combine_smooth(ei: &SmoothElement, ej: &SmoothElement, ledger: &mut FlopLedger) -> Result<SmoothElement> {
    if ei.dim() != ej.dim() {
        return Err(Error::DimMismatch {
            op: "combine_smooth",
            detail: format!("element dims {} and {}", ei.dim(), ej.dim()),
        });
    }
    let gain = matmul(&ei.gain, &ej.gain, ledger)?;
    let offset = kernel::vec_add(&matvec(&ei.gain, &ej.offset, ledger)?, &ei.offset, ledger)?;
    let cov = sym(&kernel::mat_add(
        &matmul(&matmul(&ei.gain, &ej.cov, ledger)?, &ei.gain.transpose(), ledger)?,
        &ei.cov,
        ledger,
    )?)?;
    Ok(SmoothElement { gain, offset, cov })
}

/// Scan operator wrapper for smoothing elements.
pub struct SmoothOp {
    pub nx: usize,
}

impl ScanOp for SmoothOp {
    type Elem = SmoothElement;

    fn name(&self) -> &'static str {
        "Gaussian smoothing operator"
    }

    fn combine(&self, left: &SmoothElement, right: &SmoothElement, ledger: &mut FlopLedger) -> Result<SmoothElement> {
        combine_smooth(left, right, ledger)
    }

    fn identity(&self) -> Option<SmoothElement> {
        Some(SmoothElement::identity(self.nx))
    }
}

/// Parallel RTS smoother: builds all elements in one parallel level from the
/// provided filtered moments and composes suffixes with a reversed
/// (block-aggregated) scan. Smoothed moments are the suffix offsets and
/// covariances, valid because the boundary element has zero gain.
pub fn parallel_smoother(
    model: &Lgssm,
    filtered: &[GaussianMoment],
    block_len: usize,
    ledger: &mut FlopLedger,
) -> Result<(Vec<GaussianMoment>, SpanStats)> {
    let n = model.n();
    if filtered.len() != n {
        return Err(Error::InvalidArg(format!(
            "filtered moment count {} does not match model steps {}",
            filtered.len(),
            n
        )));
    }
    let mut stats = SpanStats::default();
    let (elems, costs) = scan::run_level_merge(n, ledger, |i, local| {
        smooth_element(model, &filtered[i], i + 1, local)
    })?;
    stats.add_level(&costs);

    let report = reverse_block_scan(&elems, &SmoothOp { nx: model.state_dim() }, block_len, ledger)?;
    stats.absorb(report.stats);

    let moments = report
        .results
        .into_iter()
        .map(|e| GaussianMoment { mean: e.offset, cov: e.cov })
        .collect();
    Ok((moments, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pkf::parallel_filter;
    use crate::scan::reverse_scan;
    use crate::sequential::{kalman_filter, rts_smoother};
    use crate::ssm::{make_random_lgssm, simulate, tracking_benchmark_model, Lgssm};

    fn scalar_model(n: usize) -> Lgssm {
        Lgssm::stationary(
            Matrix::identity(1),
            Vector::zeros(1),
            Matrix::identity(1),
            Matrix::identity(1),
            Vector::zeros(1),
            Matrix::identity(1),
            Vector::zeros(1),
            Matrix::identity(1),
            n,
        )
        .unwrap()
    }

    fn rng_stream(mut state: u64) -> impl FnMut() -> f64 {
        move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64) / ((1u64 << 31) as f64) - 1.0
        }
    }

    fn random_element(nx: usize, seed: u64) -> SmoothElement {
        let mut next = rng_stream(seed);
        let g = Matrix::new(nx, nx, (0..nx * nx).map(|_| next()).collect()).unwrap();
        let mut cov = Matrix::zeros(nx, nx);
        for i in 0..nx {
            for j in 0..nx {
                let mut s = 0.0;
                for k in 0..nx {
                    s += g.get(i, k) * g.get(j, k);
                }
                cov.set(i, j, s);
            }
        }
        SmoothElement {
            gain: Matrix::new(nx, nx, (0..nx * nx).map(|_| next()).collect()).unwrap(),
            offset: Vector::from((0..nx).map(|_| next()).collect::<Vec<_>>()),
            cov,
        }
    }

    #[test]
    fn scalar_element_interior_step() {
        // Filtered (2/3, 2/3) with F = Q = 1, u = 0: E = g = L = 2/5.
        let model = scalar_model(3);
        let filt = GaussianMoment {
            mean: Vector::from(vec![2.0 / 3.0]),
            cov: Matrix::new(1, 1, vec![2.0 / 3.0]).unwrap(),
        };
        let mut ledger = FlopLedger::new();
        let e = smooth_element(&model, &filt, 1, &mut ledger).unwrap();
        assert!((e.gain.get(0, 0) - 0.4).abs() <= 1e-12);
        assert!((e.offset.get(0) - 0.4).abs() <= 1e-12);
        assert!((e.cov.get(0, 0) - 0.4).abs() <= 1e-12);
    }

    #[test]
    fn boundary_element_copies_filtered_moment() {
        let model = scalar_model(2);
        let filt = GaussianMoment {
            mean: Vector::from(vec![0.25]),
            cov: Matrix::new(1, 1, vec![0.625]).unwrap(),
        };
        let mut ledger = FlopLedger::new();
        let e = smooth_element(&model, &filt, 2, &mut ledger).unwrap();
        assert_eq!(e.gain.get(0, 0), 0.0);
        assert_eq!(e.offset.get(0), 0.25);
        assert_eq!(e.cov.get(0, 0), 0.625);
    }

    #[test]
    fn static_dynamics_give_identity_element() {
        // Q = 0, F = I, u = 0: E = I, g = 0, L = 0.
        let mut model = scalar_model(2);
        model.q = crate::ssm::ParamSeq::Stationary(Matrix::zeros(1, 1));
        let filt = GaussianMoment {
            mean: Vector::from(vec![0.7]),
            cov: Matrix::new(1, 1, vec![0.3]).unwrap(),
        };
        let mut ledger = FlopLedger::new();
        let e = smooth_element(&model, &filt, 1, &mut ledger).unwrap();
        assert!((e.gain.get(0, 0) - 1.0).abs() <= 1e-12);
        assert!(e.offset.get(0).abs() <= 1e-12);
        assert!(e.cov.get(0, 0).abs() <= 1e-12);
    }

    #[test]
    fn combine_respects_identity() {
        let e = random_element(3, 5);
        let id = SmoothElement::identity(3);
        let mut ledger = FlopLedger::new();
        for combined in [
            combine_smooth(&e, &id, &mut ledger).unwrap(),
            combine_smooth(&id, &e, &mut ledger).unwrap(),
        ] {
            let scratch = &mut FlopLedger::new();
            assert!(kernel::mat_sub(&combined.gain, &e.gain, scratch).unwrap().max_abs() <= 1e-14);
            assert!(kernel::mat_sub(&combined.cov, &e.cov, scratch).unwrap().max_abs() <= 1e-14);
            for i in 0..3 {
                assert!((combined.offset.get(i) - e.offset.get(i)).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn scalar_combination_matches_sequential_smoother() {
        // (E=2/5, g=2/5, L=2/5) composed with the boundary (0, 1/4, 5/8)
        // equals the smoothed moment (1/2, 1/2) at step 1.
        let ei = SmoothElement {
            gain: Matrix::new(1, 1, vec![0.4]).unwrap(),
            offset: Vector::from(vec![0.4]),
            cov: Matrix::new(1, 1, vec![0.4]).unwrap(),
        };
        let ej = SmoothElement {
            gain: Matrix::zeros(1, 1),
            offset: Vector::from(vec![0.25]),
            cov: Matrix::new(1, 1, vec![0.625]).unwrap(),
        };
        let mut ledger = FlopLedger::new();
        let c = combine_smooth(&ei, &ej, &mut ledger).unwrap();
        assert_eq!(c.gain.get(0, 0), 0.0);
        assert!((c.offset.get(0) - 0.5).abs() <= 1e-12);
        assert!((c.cov.get(0, 0) - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn combine_is_associative_on_random_elements() {
        for seed in 0..40 {
            let a = random_element(3, seed * 3 + 100);
            let b = random_element(3, seed * 3 + 101);
            let c = random_element(3, seed * 3 + 102);
            let mut ledger = FlopLedger::new();
            let left = combine_smooth(&combine_smooth(&a, &b, &mut ledger).unwrap(), &c, &mut ledger).unwrap();
            let right = combine_smooth(&a, &combine_smooth(&b, &c, &mut ledger).unwrap(), &mut ledger).unwrap();
            let scratch = &mut FlopLedger::new();
            let gd = kernel::mat_sub(&left.gain, &right.gain, scratch).unwrap().frobenius_norm()
                / right.gain.frobenius_norm().max(1e-9);
            let cd = kernel::mat_sub(&left.cov, &right.cov, scratch).unwrap().frobenius_norm()
                / right.cov.frobenius_norm().max(1e-9);
            assert!(gd <= 1e-10);
            assert!(cd <= 1e-10);
            for i in 0..3 {
                assert!((left.offset.get(i) - right.offset.get(i)).abs() / right.offset.get(i).abs().max(1e-9) <= 1e-10);
            }
        }
    }

    #[test]
    fn single_step_smoothing_is_filtering() {
        let model = scalar_model(1);
        let ys = vec![Vector::from(vec![1.0])];
        let mut ledger = FlopLedger::new();
        let (filtered, _) = parallel_filter(&model, &ys, 1, &mut ledger).unwrap();
        let (smoothed, _) = parallel_smoother(&model, &filtered, 1, &mut ledger).unwrap();
        assert!((smoothed[0].mean.get(0) - filtered[0].mean.get(0)).abs() <= 1e-15);
        assert!((smoothed[0].cov.get(0, 0) - filtered[0].cov.get(0, 0)).abs() <= 1e-15);
    }

    #[test]
    fn scalar_two_step_smoother_matches_hand_values() {
        let model = scalar_model(2);
        let ys = vec![Vector::from(vec![1.0]), Vector::from(vec![0.0])];
        let mut ledger = FlopLedger::new();
        let (filtered, _) = parallel_filter(&model, &ys, 1, &mut ledger).unwrap();
        let (smoothed, _) = parallel_smoother(&model, &filtered, 1, &mut ledger).unwrap();
        assert!((smoothed[0].mean.get(0) - 0.5).abs() <= 1e-12);
        assert!((smoothed[0].cov.get(0, 0) - 0.5).abs() <= 1e-12);
        assert!((smoothed[1].mean.get(0) - 0.25).abs() <= 1e-12);
        assert!((smoothed[1].cov.get(0, 0) - 0.625).abs() <= 1e-12);
    }

    #[test]
    fn parallel_smoother_matches_rts_on_tracking_model() {
        let model = tracking_benchmark_model(100).unwrap();
        let sim = simulate(&model, 31).unwrap();
        let mut ledger = FlopLedger::new();
        let run = kalman_filter(&model, &sim.measurements, &mut ledger).unwrap();
        let seq = rts_smoother(&model, &run, &mut ledger).unwrap();
        let (par, _) = parallel_smoother(&model, &run.filtered, 1, &mut ledger).unwrap();
        let scratch = &mut FlopLedger::new();
        for (p, s) in par.iter().zip(&seq) {
            let dm: f64 = p
                .mean
                .as_slice()
                .iter()
                .zip(s.mean.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(dm / s.mean.norm().max(1e-9) <= 1e-8);
            let dc = kernel::mat_sub(&p.cov, &s.cov, scratch).unwrap().frobenius_norm();
            assert!(dc / s.cov.frobenius_norm().max(1e-9) <= 1e-8);
        }
    }

    #[test]
    fn smoother_accepts_sequential_or_parallel_filter_output() {
        let model = make_random_lgssm(3, 2, 33, 12).unwrap();
        let sim = simulate(&model, 13).unwrap();
        let mut ledger = FlopLedger::new();
        let run = kalman_filter(&model, &sim.measurements, &mut ledger).unwrap();
        let (par_filtered, _) = parallel_filter(&model, &sim.measurements, 1, &mut ledger).unwrap();
        let (a, _) = parallel_smoother(&model, &run.filtered, 1, &mut ledger).unwrap();
        let (b, _) = parallel_smoother(&model, &par_filtered, 1, &mut ledger).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for i in 0..3 {
                assert!((x.mean.get(i) - y.mean.get(i)).abs() <= 1e-7 * x.mean.get(i).abs().max(1.0));
            }
        }
    }

    #[test]
    fn block_lengths_do_not_change_results() {
        let model = tracking_benchmark_model(29).unwrap();
        let sim = simulate(&model, 3).unwrap();
        let mut ledger = FlopLedger::new();
        let run = kalman_filter(&model, &sim.measurements, &mut ledger).unwrap();
        let (base, _) = parallel_smoother(&model, &run.filtered, 1, &mut ledger).unwrap();
        for block_len in [2usize, 4, 8, 29] {
            let (other, _) = parallel_smoother(&model, &run.filtered, block_len, &mut ledger).unwrap();
            for (a, b) in base.iter().zip(&other) {
                for i in 0..4 {
                    assert!((a.mean.get(i) - b.mean.get(i)).abs() <= 1e-9 * a.mean.get(i).abs().max(1.0));
                }
                let dc = kernel::mat_sub(&a.cov, &b.cov, &mut FlopLedger::new()).unwrap().max_abs();
                assert!(dc <= 1e-9);
            }
        }
    }

    #[test]
    fn suffixes_containing_boundary_have_zero_gain() {
        let model = tracking_benchmark_model(16).unwrap();
        let sim = simulate(&model, 5).unwrap();
        let mut ledger = FlopLedger::new();
        let run = kalman_filter(&model, &sim.measurements, &mut ledger).unwrap();
        let (elems, _) = scan::run_level_merge(16, &mut ledger, |i, local| {
            smooth_element(&model, &run.filtered[i], i + 1, local)
        })
        .unwrap();
        let report = reverse_scan(&elems, &SmoothOp { nx: 4 }, &mut ledger).unwrap();
        for suffix in &report.results {
            assert!(suffix.gain.frobenius_norm() <= 1e-12);
        }
    }
}
