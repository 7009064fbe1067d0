//! Parallel linear-Gaussian filtering.
//!
//! Each measurement becomes a five-parameter element: the conditional
//! `N(x_k; A x_{k-1} + b, C)` of the state given its predecessor and the
//! measurement, plus an information-form likelihood factor `(eta, J)` in the
//! predecessor. Combining elements with an associative operator makes the
//! k-th prefix exactly the filtering posterior, so a parallel scan produces
//! every filtering moment in logarithmic span. The marginal likelihood is
//! recovered by a second parallel pass over predictive densities, since the
//! element likelihood factors are kept only up to proportionality.

use crate::error::{Error, Result};
use crate::kernel::{
    self, add_identity, gaussian_logpdf, matmul, matvec, sym, FlopLedger, Matrix, Vector,
};
use crate::scan::{self, block_scan, par_scan, ScalarAdd, ScanOp, SpanStats};
use crate::sequential::GaussianMoment;
use crate::ssm::Lgssm;

/// Filtering element `(A, b, C, eta, J)`: conditional mean map `A`, offset
/// `b`, conditional covariance `C`, and the information vector/matrix of the
/// likelihood factor in the predecessor state.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterElement {
    pub trans: Matrix,
    pub offset: Vector,
    pub cov: Matrix,
    pub info_vec: Vector,
    pub info_mat: Matrix,
}

impl FilterElement {
    /// Two-sided identity of the combination operator: the Dirac conditional
    /// with a flat likelihood factor.
    pub fn identity(nx: usize) -> Self {
        Self {
            trans: Matrix::identity(nx),
            offset: Vector::zeros(nx),
            cov: Matrix::zeros(nx, nx),
            info_vec: Vector::zeros(nx),
            info_mat: Matrix::zeros(nx, nx),
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.trans.is_finite()
            && self.offset.is_finite()
            && self.cov.is_finite()
            && self.info_vec.is_finite()
            && self.info_mat.is_finite()
    }
}

/// Builds the filtering element for step `k` (1-based).
///
/// For k > 1 the element conditions on the predecessor through one Kalman
/// update of the transition density; k = 1 instead folds in the initial
/// distribution through a prediction, which zeroes `A` so that every prefix
/// containing the first element is predecessor-free.
pub fn filter_element(model: &Lgssm, y: &Vector, k: usize, ledger: &mut FlopLedger) -> Result<FilterElement> {
    let n = model.n();
    if k < 1 || k > n {
        return Err(Error::InvalidArg(format!("step {k} outside 1..={n}")));
    }
    if y.dim() != model.meas_dim() {
        return Err(Error::InvalidArg(format!(
            "measurement dim {} does not match model dim {}",
            y.dim(),
            model.meas_dim()
        )));
    }
    let nx = model.state_dim();
    let (f, u, q) = model.trans(k - 1);
    let (h, d, r) = model.meas(k);

    // Offset-corrected innovation y - H u - d drives both b and eta.
    let innov_u = kernel::vec_sub(y, &kernel::vec_add(&matvec(h, u, ledger)?, d, ledger)?, ledger)?;
    let hf = matmul(h, f, ledger)?;

    if k == 1 {
        let m_pred = kernel::vec_add(&matvec(f, &model.m0, ledger)?, u, ledger)?;
        let fp = matmul(f, &model.p0, ledger)?;
        let p_pred = sym(&kernel::mat_add(&matmul(&fp, &f.transpose(), ledger)?, q, ledger)?)?;
        let hp = matmul(h, &p_pred, ledger)?;
        let s = sym(&kernel::mat_add(&matmul(&hp, &h.transpose(), ledger)?, r, ledger)?)?;
        let gain = kernel::solve(&s, &hp, ledger)?.transpose();
        let innov = kernel::vec_sub(y, &kernel::vec_add(&matvec(h, &m_pred, ledger)?, d, ledger)?, ledger)?;
        let offset = kernel::vec_add(&m_pred, &matvec(&gain, &innov, ledger)?, ledger)?;
        let ks = matmul(&gain, &s, ledger)?;
        let cov = sym(&kernel::mat_sub(&p_pred, &matmul(&ks, &gain.transpose(), ledger)?, ledger)?)?;
        let info_vec = matvec(&hf.transpose(), &kernel::solve_vec(&s, &innov_u, ledger)?, ledger)?;
        let info_mat = sym(&matmul(&hf.transpose(), &kernel::solve(&s, &hf, ledger)?, ledger)?)?;
        return Ok(FilterElement {
            trans: Matrix::zeros(nx, nx),
            offset,
            cov,
            info_vec,
            info_mat,
        });
    }

    let hq = matmul(h, q, ledger)?;
    let s = sym(&kernel::mat_add(&matmul(&hq, &h.transpose(), ledger)?, r, ledger)?)?;
    // K = Q H^T S^{-1}; Q is symmetric so Q H^T = (H Q)^T.
    let gain = kernel::solve(&s, &hq, ledger)?.transpose();
    let kh = matmul(&gain, h, ledger)?;
    let ikh = kernel::mat_sub(&Matrix::identity(nx), &kh, ledger)?;
    let trans = matmul(&ikh, f, ledger)?;
    let cov = sym(&matmul(&ikh, q, ledger)?)?;
    let offset = kernel::vec_add(u, &matvec(&gain, &innov_u, ledger)?, ledger)?;
    let info_vec = matvec(&hf.transpose(), &kernel::solve_vec(&s, &innov_u, ledger)?, ledger)?;
    let info_mat = sym(&matmul(&hf.transpose(), &kernel::solve(&s, &hf, ledger)?, ledger)?)?;
    Ok(FilterElement { trans, offset, cov, info_vec, info_mat })
}

/// The filtering combination operator.
///
/// All inverses of `I + C_i J_j` and `I + J_j C_i` are realized as linear
/// solves with stacked right-hand sides; `C` and `J` are symmetrized after
/// combination to control drift over deep combination trees.
pub fn combine_filter(ei: &FilterElement, ej: &FilterElement, ledger: &mut FlopLedger) -> Result<FilterElement> {
    let nx = ei.dim();
    if nx != ej.dim() {
        return Err(Error::DimMismatch {
            op: "combine_filter",
            detail: format!("element dims {} and {}", nx, ej.dim()),
        });
    }

    let ci_jj = matmul(&ei.cov, &ej.info_mat, ledger)?;
    let lhs1 = add_identity(&ci_jj, ledger)?;
    let c_eta = matvec(&ei.cov, &ej.info_vec, ledger)?;
    let b_plus = kernel::vec_add(&ei.offset, &c_eta, ledger)?;
    let rhs1 = Matrix::hstack(&[&ei.trans, &Matrix::from_column(&b_plus), &ei.cov])?;
    let sol1 = kernel::solve(&lhs1, &rhs1, ledger)?;
    let xa = sol1.columns(0, nx);
    let xb = sol1.column(nx);
    let xc = sol1.columns(nx + 1, 2 * nx + 1);

    let trans = matmul(&ej.trans, &xa, ledger)?;
    let offset = kernel::vec_add(&matvec(&ej.trans, &xb, ledger)?, &ej.offset, ledger)?;
    let cov = sym(&kernel::mat_add(
        &matmul(&matmul(&ej.trans, &xc, ledger)?, &ej.trans.transpose(), ledger)?,
        &ej.cov,
        ledger,
    )?)?;

    let jj_ci = matmul(&ej.info_mat, &ei.cov, ledger)?;
    let lhs2 = add_identity(&jj_ci, ledger)?;
    let j_b = matvec(&ej.info_mat, &ei.offset, ledger)?;
    let eta_minus = kernel::vec_sub(&ej.info_vec, &j_b, ledger)?;
    let j_a = matmul(&ej.info_mat, &ei.trans, ledger)?;
    let rhs2 = Matrix::hstack(&[&Matrix::from_column(&eta_minus), &j_a])?;
    let sol2 = kernel::solve(&lhs2, &rhs2, ledger)?;

    let info_vec = kernel::vec_add(&matvec(&ei.trans.transpose(), &sol2.column(0), ledger)?, &ei.info_vec, ledger)?;
    let info_mat = sym(&kernel::mat_add(
        &matmul(&ei.trans.transpose(), &sol2.columns(1, nx + 1), ledger)?,
        &ei.info_mat,
        ledger,
    )?)?;

    Ok(FilterElement { trans, offset, cov, info_vec, info_mat })
}

/// Scan operator wrapper for filtering elements.
pub struct FilterOp {
    pub nx: usize,
}

impl ScanOp for FilterOp {
    type Elem = FilterElement;

    fn name(&self) -> &'static str {
        "Gaussian filtering operator"
    }

    fn combine(&self, left: &FilterElement, right: &FilterElement, ledger: &mut FlopLedger) -> Result<FilterElement> {
        combine_filter(left, right, ledger)
    }

    fn identity(&self) -> Option<FilterElement> {
        Some(FilterElement::identity(self.nx))
    }
}

/// Parallel Kalman filter: builds all elements in one parallel level, scans
/// them (optionally pre-combined in blocks of `block_len`), and reads each
/// filtered mean and covariance from the prefix offsets and covariances.
/// That read is valid because the first element has `A = 0`, which forces
/// `A = 0` for every prefix containing it.
pub fn parallel_filter(
    model: &Lgssm,
    ys: &[Vector],
    block_len: usize,
    ledger: &mut FlopLedger,
) -> Result<(Vec<GaussianMoment>, SpanStats)> {
    let n = model.n();
    if ys.len() != n {
        return Err(Error::InvalidArg(format!(
            "measurement count {} does not match model steps {}",
            ys.len(),
            n
        )));
    }
    let mut stats = SpanStats::default();
    let (elems, costs) = scan::run_level_merge(n, ledger, |i, local| filter_element(model, &ys[i], i + 1, local))?;
    stats.add_level(&costs);

    let report = block_scan(&elems, &FilterOp { nx: model.state_dim() }, block_len, ledger)?;
    stats.absorb(report.stats);

    let moments = report
        .results
        .into_iter()
        .map(|e| GaussianMoment { mean: e.offset, cov: e.cov })
        .collect();
    Ok((moments, stats))
}

/// One-step-ahead predictive moments for step `k`, given the filtered
/// moment at step k-1 (pass the initial moment for k = 1).
pub fn predictive_moments(model: &Lgssm, prev: &GaussianMoment, k: usize, ledger: &mut FlopLedger) -> Result<GaussianMoment> {
    if k < 1 || k > model.n() {
        return Err(Error::InvalidArg(format!("step {k} outside 1..={}", model.n())));
    }
    let (f, u, q) = model.trans(k - 1);
    let mean = kernel::vec_add(&matvec(f, &prev.mean, ledger)?, u, ledger)?;
    let fp = matmul(f, &prev.cov, ledger)?;
    let cov = sym(&kernel::mat_add(&matmul(&fp, &f.transpose(), ledger)?, q, ledger)?)?;
    Ok(GaussianMoment { mean, cov })
}

/// Output of the two-pass parallel marginal-likelihood computation.
#[derive(Debug, Clone)]
pub struct ParallelLoglik {
    /// log p(y_k | y_{1:k-1}) per step.
    pub step_loglik: Vec<f64>,
    /// log p(y_{1:k}) per step (inclusive prefix sums of the above).
    pub prefix_loglik: Vec<f64>,
    pub stats: SpanStats,
}

/// Recovers the marginal likelihood from filtered moments: every factor
/// log N(y_k; H m_k^- + d, H P_k^- H^T + R) is computed independently in one
/// parallel level, then prefix-summed with a parallel scan.
pub fn parallel_loglik(
    model: &Lgssm,
    filtered: &[GaussianMoment],
    ys: &[Vector],
    ledger: &mut FlopLedger,
) -> Result<ParallelLoglik> {
    let n = model.n();
    if filtered.len() != n || ys.len() != n {
        return Err(Error::InvalidArg("filtered moments and measurements must cover all steps".into()));
    }
    let initial = GaussianMoment { mean: model.m0.clone(), cov: model.p0.clone() };
    let mut stats = SpanStats::default();
    let (step_loglik, costs) = scan::run_level_merge(n, ledger, |i, local| {
        let prev = if i == 0 { &initial } else { &filtered[i - 1] };
        let pred = predictive_moments(model, prev, i + 1, local)?;
        let (h, d, r) = model.meas(i + 1);
        let y_mean = kernel::vec_add(&matvec(h, &pred.mean, local)?, d, local)?;
        let hp = matmul(h, &pred.cov, local)?;
        let s = sym(&kernel::mat_add(&matmul(&hp, &h.transpose(), local)?, r, local)?)?;
        gaussian_logpdf(&ys[i], &y_mean, &s, local)
    })?;
    stats.add_level(&costs);

    let report = par_scan(&step_loglik, &ScalarAdd, ledger)?;
    stats.absorb(report.stats);
    Ok(ParallelLoglik { step_loglik, prefix_loglik: report.results, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::sym_eigenvalues;
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

    fn random_psd(nx: usize, next: &mut impl FnMut() -> f64) -> Matrix {
        let g = Matrix::new(nx, nx, (0..nx * nx).map(|_| next()).collect()).unwrap();
        let mut out = Matrix::zeros(nx, nx);
        for i in 0..nx {
            for j in 0..nx {
                let mut s = 0.0;
                for k in 0..nx {
                    s += g.get(i, k) * g.get(j, k);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn random_element(nx: usize, seed: u64) -> FilterElement {
        let mut next = rng_stream(seed);
        FilterElement {
            trans: Matrix::new(nx, nx, (0..nx * nx).map(|_| next()).collect()).unwrap(),
            offset: Vector::from((0..nx).map(|_| next()).collect::<Vec<_>>()),
            cov: random_psd(nx, &mut next),
            info_vec: Vector::from((0..nx).map(|_| next()).collect::<Vec<_>>()),
            info_mat: random_psd(nx, &mut next),
        }
    }

    fn rel_diff(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-9)
    }

    #[test]
    fn scalar_element_later_step() {
        // F = Q = H = R = 1, u = d = 0, y = 0 at k >= 2:
        // S = 2, K = 1/2, A = 1/2, b = 0, C = 1/2, eta = 0, J = 1/2.
        let model = scalar_model(3);
        let mut ledger = FlopLedger::new();
        let e = filter_element(&model, &Vector::zeros(1), 2, &mut ledger).unwrap();
        assert!((e.trans.get(0, 0) - 0.5).abs() <= 1e-12);
        assert!(e.offset.get(0).abs() <= 1e-12);
        assert!((e.cov.get(0, 0) - 0.5).abs() <= 1e-12);
        assert!(e.info_vec.get(0).abs() <= 1e-12);
        assert!((e.info_mat.get(0, 0) - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn scalar_element_first_step() {
        // m0 = 0, P0 = 1, y1 = 1: A = 0, b = 2/3, C = 2/3, eta = 1/3, J = 1/3.
        let model = scalar_model(2);
        let mut ledger = FlopLedger::new();
        let e = filter_element(&model, &Vector::from(vec![1.0]), 1, &mut ledger).unwrap();
        assert_eq!(e.trans.get(0, 0), 0.0);
        assert!((e.offset.get(0) - 2.0 / 3.0).abs() <= 1e-12);
        assert!((e.cov.get(0, 0) - 2.0 / 3.0).abs() <= 1e-12);
        assert!((e.info_vec.get(0) - 1.0 / 3.0).abs() <= 1e-12);
        assert!((e.info_mat.get(0, 0) - 1.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn uninformative_measurement_degenerates_to_transition() {
        // H = 0 gives K = 0, so A = F, b = u, C = Q, eta = 0, J = 0.
        let mut model = make_random_lgssm(3, 2, 4, 8).unwrap();
        model.h = crate::ssm::ParamSeq::Stationary(Matrix::zeros(2, 3));
        model.d = crate::ssm::ParamSeq::Stationary(Vector::zeros(2));
        let mut ledger = FlopLedger::new();
        let e = filter_element(&model, &Vector::zeros(2), 2, &mut ledger).unwrap();
        let (f, u, q) = model.trans(1);
        for i in 0..3 {
            assert!((e.offset.get(i) - u.get(i)).abs() <= 1e-12);
            assert!(e.info_vec.get(i).abs() <= 1e-12);
            for j in 0..3 {
                assert!((e.trans.get(i, j) - f.get(i, j)).abs() <= 1e-12);
                assert!((e.cov.get(i, j) - q.get(i, j)).abs() <= 1e-12);
                assert!(e.info_mat.get(i, j).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn elements_are_finite_with_psd_covariance_and_information() {
        let model = make_random_lgssm(4, 3, 20, 2).unwrap();
        let sim = simulate(&model, 11).unwrap();
        let mut ledger = FlopLedger::new();
        for k in 1..=20 {
            let e = filter_element(&model, &sim.measurements[k - 1], k, &mut ledger).unwrap();
            assert!(e.is_finite());
            for m in [&e.cov, &e.info_mat] {
                let eigs = sym_eigenvalues(m).unwrap();
                assert!(eigs[0] >= -1e-9, "eigenvalue {}", eigs[0]);
            }
        }
    }

    #[test]
    fn combine_respects_identity() {
        let e = random_element(3, 21);
        let id = FilterElement::identity(3);
        let mut ledger = FlopLedger::new();
        for combined in [
            combine_filter(&e, &id, &mut ledger).unwrap(),
            combine_filter(&id, &e, &mut ledger).unwrap(),
        ] {
            let scratch = &mut FlopLedger::new();
            assert!(kernel::mat_sub(&combined.trans, &e.trans, scratch).unwrap().max_abs() <= 1e-14);
            assert!(kernel::mat_sub(&combined.cov, &e.cov, scratch).unwrap().max_abs() <= 1e-14);
            assert!(kernel::mat_sub(&combined.info_mat, &e.info_mat, scratch).unwrap().max_abs() <= 1e-14);
            for i in 0..3 {
                assert!((combined.offset.get(i) - e.offset.get(i)).abs() <= 1e-14);
                assert!((combined.info_vec.get(i) - e.info_vec.get(i)).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn combining_two_scalar_elements_matches_sequential_posterior() {
        let model = scalar_model(2);
        let mut ledger = FlopLedger::new();
        let e1 = filter_element(&model, &Vector::from(vec![1.0]), 1, &mut ledger).unwrap();
        let e2 = filter_element(&model, &Vector::from(vec![0.0]), 2, &mut ledger).unwrap();
        let c = combine_filter(&e1, &e2, &mut ledger).unwrap();
        assert!(c.trans.get(0, 0).abs() <= 1e-14);
        assert!((c.offset.get(0) - 0.25).abs() <= 1e-12);
        assert!((c.cov.get(0, 0) - 0.625).abs() <= 1e-12);
        // A_1 = 0 passes the left info pair through unchanged.
        assert!((c.info_vec.get(0) - 1.0 / 3.0).abs() <= 1e-12);
        assert!((c.info_mat.get(0, 0) - 1.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn combine_is_associative_on_random_elements() {
        for seed in 0..40 {
            let a = random_element(3, seed * 3 + 1);
            let b = random_element(3, seed * 3 + 2);
            let c = random_element(3, seed * 3 + 3);
            let mut ledger = FlopLedger::new();
            let left = combine_filter(&combine_filter(&a, &b, &mut ledger).unwrap(), &c, &mut ledger).unwrap();
            let right = combine_filter(&a, &combine_filter(&b, &c, &mut ledger).unwrap(), &mut ledger).unwrap();
            let scratch = &mut FlopLedger::new();
            for (x, y) in [
                (&left.trans, &right.trans),
                (&left.cov, &right.cov),
                (&left.info_mat, &right.info_mat),
            ] {
                let rel = kernel::mat_sub(x, y, scratch).unwrap().frobenius_norm()
                    / y.frobenius_norm().max(1e-9);
                assert!(rel <= 1e-9, "relative gap {rel}");
            }
            for i in 0..3 {
                assert!(rel_diff(left.offset.get(i), right.offset.get(i)) <= 1e-9);
                assert!(rel_diff(left.info_vec.get(i), right.info_vec.get(i)) <= 1e-9);
            }
        }
    }

    #[test]
    fn parallel_filter_single_step_is_first_element() {
        let model = scalar_model(1);
        let ys = vec![Vector::from(vec![1.0])];
        let mut ledger = FlopLedger::new();
        let e1 = filter_element(&model, &ys[0], 1, &mut ledger).unwrap();
        let (moments, _) = parallel_filter(&model, &ys, 1, &mut ledger).unwrap();
        assert_eq!(moments.len(), 1);
        assert!((moments[0].mean.get(0) - e1.offset.get(0)).abs() <= 1e-15);
        assert!((moments[0].cov.get(0, 0) - e1.cov.get(0, 0)).abs() <= 1e-15);
    }

    #[test]
    fn parallel_filter_matches_scalar_hand_values() {
        let model = scalar_model(2);
        let ys = vec![Vector::from(vec![1.0]), Vector::from(vec![0.0])];
        let mut ledger = FlopLedger::new();
        let (moments, stats) = parallel_filter(&model, &ys, 1, &mut ledger).unwrap();
        assert!((moments[0].mean.get(0) - 2.0 / 3.0).abs() <= 1e-12);
        assert!((moments[0].cov.get(0, 0) - 2.0 / 3.0).abs() <= 1e-12);
        assert!((moments[1].mean.get(0) - 0.25).abs() <= 1e-12);
        assert!((moments[1].cov.get(0, 0) - 0.625).abs() <= 1e-12);
        assert!(stats.span_flops <= stats.work_flops);
    }

    #[test]
    fn parallel_filter_matches_kalman_filter_on_tracking_model() {
        let model = tracking_benchmark_model(100).unwrap();
        let sim = simulate(&model, 17).unwrap();
        let mut ledger = FlopLedger::new();
        let run = kalman_filter(&model, &sim.measurements, &mut ledger).unwrap();
        let (moments, _) = parallel_filter(&model, &sim.measurements, 1, &mut ledger).unwrap();
        let scratch = &mut FlopLedger::new();
        for (par, seq) in moments.iter().zip(&run.filtered) {
            let dm: f64 = par
                .mean
                .as_slice()
                .iter()
                .zip(seq.mean.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(dm / seq.mean.norm().max(1e-9) <= 1e-8);
            let dc = kernel::mat_sub(&par.cov, &seq.cov, scratch).unwrap().frobenius_norm();
            assert!(dc / seq.cov.frobenius_norm().max(1e-9) <= 1e-8);
        }
    }

    #[test]
    fn extracted_covariances_stay_psd() {
        let model = make_random_lgssm(4, 2, 200, 3).unwrap();
        let sim = simulate(&model, 30).unwrap();
        let mut ledger = FlopLedger::new();
        let (moments, _) = parallel_filter(&model, &sim.measurements, 1, &mut ledger).unwrap();
        for m in &moments {
            let eigs = sym_eigenvalues(&m.cov).unwrap();
            assert!(eigs[0] >= -1e-8, "eigenvalue {}", eigs[0]);
        }
    }

    #[test]
    fn block_lengths_do_not_change_results() {
        let model = tracking_benchmark_model(37).unwrap();
        let sim = simulate(&model, 8).unwrap();
        let mut ledger = FlopLedger::new();
        let (base, _) = parallel_filter(&model, &sim.measurements, 1, &mut ledger).unwrap();
        for block_len in [2usize, 4, 8, 37] {
            let (other, _) = parallel_filter(&model, &sim.measurements, block_len, &mut ledger).unwrap();
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
    fn predictive_moments_cases() {
        // Identity dynamics with no noise keep the moment unchanged.
        let mut model = scalar_model(2);
        model.q = crate::ssm::ParamSeq::Stationary(Matrix::zeros(1, 1));
        let moment = GaussianMoment {
            mean: Vector::from(vec![0.4]),
            cov: Matrix::new(1, 1, vec![0.9]).unwrap(),
        };
        let mut ledger = FlopLedger::new();
        let pred = predictive_moments(&model, &moment, 2, &mut ledger).unwrap();
        assert_eq!(pred.mean.get(0), 0.4);
        assert_eq!(pred.cov.get(0, 0), 0.9);

        // Scalar filtered (2/3, 2/3) predicts (2/3, 5/3) under F = Q = 1.
        let model = scalar_model(2);
        let filt = GaussianMoment {
            mean: Vector::from(vec![2.0 / 3.0]),
            cov: Matrix::new(1, 1, vec![2.0 / 3.0]).unwrap(),
        };
        let pred = predictive_moments(&model, &filt, 2, &mut ledger).unwrap();
        assert!((pred.mean.get(0) - 2.0 / 3.0).abs() <= 1e-15);
        assert!((pred.cov.get(0, 0) - 5.0 / 3.0).abs() <= 1e-15);

        // k = 1 with the initial moment: (F m0 + u, F P0 F^T + Q).
        let init = GaussianMoment { mean: model.m0.clone(), cov: model.p0.clone() };
        let pred = predictive_moments(&model, &init, 1, &mut ledger).unwrap();
        assert_eq!(pred.mean.get(0), 0.0);
        assert_eq!(pred.cov.get(0, 0), 2.0);
    }

    #[test]
    fn parallel_loglik_single_step_scalar() {
        let model = scalar_model(1);
        let ys = vec![Vector::from(vec![1.0])];
        let mut ledger = FlopLedger::new();
        let (moments, _) = parallel_filter(&model, &ys, 1, &mut ledger).unwrap();
        let out = parallel_loglik(&model, &moments, &ys, &mut ledger).unwrap();
        // y1 ~ N(0, F P0 F^T + Q + R) = N(0, 3).
        let expect = -0.5 * (1.0 / 3.0 + 3.0f64.ln() + (2.0 * std::f64::consts::PI).ln());
        assert!((out.prefix_loglik[0] - expect).abs() <= 1e-12);
    }

    #[test]
    fn flat_likelihood_prefixes_stay_finite_and_decreasing() {
        let mut model = scalar_model(6);
        model.r = crate::ssm::ParamSeq::Stationary(Matrix::new(1, 1, vec![1e10]).unwrap());
        let ys: Vec<Vector> = (0..6).map(|i| Vector::from(vec![i as f64])).collect();
        let mut ledger = FlopLedger::new();
        let (moments, _) = parallel_filter(&model, &ys, 1, &mut ledger).unwrap();
        let out = parallel_loglik(&model, &moments, &ys, &mut ledger).unwrap();
        let mut prev = 0.0;
        for &p in &out.prefix_loglik {
            assert!(p.is_finite());
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn parallel_loglik_matches_sequential_on_tracking_model() {
        let model = tracking_benchmark_model(100).unwrap();
        let sim = simulate(&model, 23).unwrap();
        let mut ledger = FlopLedger::new();
        let run = kalman_filter(&model, &sim.measurements, &mut ledger).unwrap();
        let (moments, _) = parallel_filter(&model, &sim.measurements, 1, &mut ledger).unwrap();
        let out = parallel_loglik(&model, &moments, &sim.measurements, &mut ledger).unwrap();
        for (p, s) in out.prefix_loglik.iter().zip(run.prefix_loglik()) {
            assert!((p - s).abs() <= 1e-8, "{p} vs {s}");
        }
    }

    #[test]
    fn oracle_equivalence_on_random_models() {
        for seed in 0..6 {
            let model = make_random_lgssm(1 + (seed as usize % 5), 1 + (seed as usize % 3), 64, seed).unwrap();
            let sim = simulate(&model, seed + 50).unwrap();
            let mut ledger = FlopLedger::new();
            let run = kalman_filter(&model, &sim.measurements, &mut ledger).unwrap();
            let (moments, _) = parallel_filter(&model, &sim.measurements, 1, &mut ledger).unwrap();
            let smoothed = rts_smoother(&model, &run, &mut ledger).unwrap();
            assert_eq!(smoothed.len(), moments.len());
            for (par, seq) in moments.iter().zip(&run.filtered) {
                let dm: f64 = par
                    .mean
                    .as_slice()
                    .iter()
                    .zip(seq.mean.as_slice())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(dm / seq.mean.norm().max(1e-9) <= 1e-8);
            }
        }
    }

    #[test]
    fn gaussian_product_identities_hold_up_to_constant() {
        // Three information-form product identities, each checked by
        // evaluating both sides at random points: the log-ratio must be
        // constant across points.
        let nx = 3;
        let mut next = rng_stream(77);
        let eta = Vector::from((0..nx).map(|_| next()).collect::<Vec<_>>());
        let jm = {
            let mut m = random_psd(nx, &mut next);
            let boost = add_identity(&m, &mut FlopLedger::new()).unwrap();
            m = boost;
            m
        };
        let mean = Vector::from((0..nx).map(|_| next()).collect::<Vec<_>>());
        let cov = {
            let m = random_psd(nx, &mut next);
            add_identity(&m, &mut FlopLedger::new()).unwrap()
        };
        let eta2 = Vector::from((0..nx).map(|_| next()).collect::<Vec<_>>());
        let jm2 = {
            let m = random_psd(nx, &mut next);
            add_identity(&m, &mut FlopLedger::new()).unwrap()
        };
        let a = Matrix::new(nx, nx, (0..nx * nx).map(|_| next()).collect()).unwrap();
        let b = Vector::from((0..nx).map(|_| next()).collect::<Vec<_>>());
        let scratch = &mut FlopLedger::new();

        let log_ni = |y: &Vector, eta: &Vector, jm: &Matrix, lg: &mut FlopLedger| -> f64 {
            let jy = matvec(jm, y, lg).unwrap();
            let quad: f64 = y.as_slice().iter().zip(jy.as_slice()).map(|(a, b)| a * b).sum();
            let lin: f64 = y.as_slice().iter().zip(eta.as_slice()).map(|(a, b)| a * b).sum();
            lin - 0.5 * quad
        };

        let points: Vec<Vector> = (0..20)
            .map(|_| Vector::from((0..nx).map(|_| 2.0 * next()).collect::<Vec<_>>()))
            .collect();

        let check_constant = |ratios: &[f64]| {
            let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
            for &r in ratios {
                assert!((r - mean_ratio).abs() <= 1e-8, "log-ratio spread {}", (r - mean_ratio).abs());
            }
        };

        // N_I(y; eta, J) N(y; m, C) prop N(y; (J + C^-1)^-1 (eta + C^-1 m), (J + C^-1)^-1)
        let cinv = kernel::solve(&cov, &Matrix::identity(nx), scratch).unwrap();
        let prec = kernel::mat_add(&jm, &cinv, scratch).unwrap();
        let post_cov = sym(&kernel::solve(&prec, &Matrix::identity(nx), scratch).unwrap()).unwrap();
        let rhs_mean = matvec(
            &post_cov,
            &kernel::vec_add(&eta, &matvec(&cinv, &mean, scratch).unwrap(), scratch).unwrap(),
            scratch,
        )
        .unwrap();
        let ratios: Vec<f64> = points
            .iter()
            .map(|y| {
                let lhs = log_ni(y, &eta, &jm, scratch) + gaussian_logpdf(y, &mean, &cov, scratch).unwrap();
                let rhs = gaussian_logpdf(y, &rhs_mean, &post_cov, scratch).unwrap();
                lhs - rhs
            })
            .collect();
        check_constant(&ratios);

        // N_I(y; eta, J) N_I(y; eta', J') prop N_I(y; eta + eta', J + J')
        let eta_sum = kernel::vec_add(&eta, &eta2, scratch).unwrap();
        let jm_sum = kernel::mat_add(&jm, &jm2, scratch).unwrap();
        let ratios: Vec<f64> = points
            .iter()
            .map(|y| {
                log_ni(y, &eta, &jm, scratch) + log_ni(y, &eta2, &jm2, scratch)
                    - log_ni(y, &eta_sum, &jm_sum, scratch)
            })
            .collect();
        check_constant(&ratios);

        // integral N_I(y; eta, J) N(y; Az + b, C) dy prop
        //   N_I(z; A^T (I + J C)^-1 (eta - J b), A^T (I + J C)^-1 J A)
        // With J invertible the left side is N(Az + b; J^-1 eta, J^-1 + C).
        let jinv = sym(&kernel::solve(&jm, &Matrix::identity(nx), scratch).unwrap()).unwrap();
        let jinv_eta = matvec(&jinv, &eta, scratch).unwrap();
        let lhs_cov = kernel::mat_add(&jinv, &cov, scratch).unwrap();
        let m_ijc = add_identity(&matmul(&jm, &cov, scratch).unwrap(), scratch).unwrap();
        let jb = matvec(&jm, &b, scratch).unwrap();
        let solved = kernel::solve(
            &m_ijc,
            &Matrix::hstack(&[
                &Matrix::from_column(&kernel::vec_sub(&eta, &jb, scratch).unwrap()),
                &matmul(&jm, &a, scratch).unwrap(),
            ])
            .unwrap(),
            scratch,
        )
        .unwrap();
        let eta_z = matvec(&a.transpose(), &solved.column(0), scratch).unwrap();
        let jm_z = matmul(&a.transpose(), &solved.columns(1, nx + 1), scratch).unwrap();
        let ratios: Vec<f64> = points
            .iter()
            .map(|z| {
                let az_b = kernel::vec_add(&matvec(&a, z, scratch).unwrap(), &b, scratch).unwrap();
                let lhs = gaussian_logpdf(&az_b, &jinv_eta, &lhs_cov, scratch).unwrap();
                let rhs = log_ni(z, &eta_z, &jm_z, scratch);
                lhs - rhs
            })
            .collect();
        check_constant(&ratios);
    }
}
