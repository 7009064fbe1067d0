//! Sequential reference algorithms: Kalman filter, Rauch-Tung-Striebel
//! smoother, HMM forward filtering and backward smoothing, and an
//! exhaustive-enumeration posterior for small HMMs. These are the oracles
//! the parallel algorithms are validated against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    self, gaussian_logpdf, matmul, matvec, sym, FlopLedger, Matrix, Vector,
};
use crate::ssm::{HmmModel, Lgssm};

/// Mean and covariance of a Gaussian state estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoment {
    pub mean: Vector,
    pub cov: Matrix,
}

/// Output of a filtering pass: filtered and one-step-ahead predicted
/// moments for k = 1..n, the per-step measurement log-densities
/// log p(y_k | y_{1:k-1}), and their total.
#[derive(Debug, Clone)]
pub struct FilterRun {
    pub filtered: Vec<GaussianMoment>,
    pub predicted: Vec<GaussianMoment>,
    pub step_loglik: Vec<f64>,
    pub loglik: f64,
}

impl FilterRun {
    /// Prefix sums of the per-step log-densities: log p(y_{1:k}).
    pub fn prefix_loglik(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.step_loglik.len());
        let mut acc = 0.0;
        for &v in &self.step_loglik {
            acc += v;
            out.push(acc);
        }
        out
    }
}

/// Standard Kalman filter. Covariances are symmetrized after each update;
/// the measurement log-density uses the innovation moments
/// `N(y_k; H m_k^- + d, H P_k^- H^T + R)`.
pub fn kalman_filter(model: &Lgssm, ys: &[Vector], ledger: &mut FlopLedger) -> Result<FilterRun> {
    let n = model.n();
    if ys.len() != n {
        return Err(Error::InvalidArg(format!(
            "measurement count {} does not match model steps {}",
            ys.len(),
            n
        )));
    }
    let mut filtered = Vec::with_capacity(n);
    let mut predicted = Vec::with_capacity(n);
    let mut step_loglik = Vec::with_capacity(n);

    let mut mean = model.m0.clone();
    let mut cov = model.p0.clone();
    for (k, y) in ys.iter().enumerate() {
        let (f, u, q) = model.trans(k);
        let (h, d, r) = model.meas(k + 1);

        // Predict.
        let m_pred = kernel::vec_add(&matvec(f, &mean, ledger)?, u, ledger)?;
        let fp = matmul(f, &cov, ledger)?;
        let p_pred = sym(&kernel::mat_add(&matmul(&fp, &f.transpose(), ledger)?, q, ledger)?)?;

        // Innovation moments.
        let hp = matmul(h, &p_pred, ledger)?;
        let s = sym(&kernel::mat_add(&matmul(&hp, &h.transpose(), ledger)?, r, ledger)?)?;
        let y_mean = kernel::vec_add(&matvec(h, &m_pred, ledger)?, d, ledger)?;
        step_loglik.push(gaussian_logpdf(y, &y_mean, &s, ledger)?);

        // Update. K = P^- H^T S^{-1} via one solve against H P^-.
        let gain = kernel::solve(&s, &hp, ledger)?.transpose();
        let innov = kernel::vec_sub(y, &y_mean, ledger)?;
        mean = kernel::vec_add(&m_pred, &matvec(&gain, &innov, ledger)?, ledger)?;
        let kh = matmul(&gain, h, ledger)?;
        let ikh = kernel::mat_sub(&Matrix::identity(model.state_dim()), &kh, ledger)?;
        cov = sym(&matmul(&ikh, &p_pred, ledger)?)?;

        predicted.push(GaussianMoment { mean: m_pred, cov: p_pred });
        filtered.push(GaussianMoment { mean: mean.clone(), cov: cov.clone() });
    }
    let loglik = step_loglik.iter().sum();
    Ok(FilterRun { filtered, predicted, step_loglik, loglik })
}

/// Rauch-Tung-Striebel backward recursion. Consumes the predicted moments
/// stored in the filter run; the smoothed moment at step n equals the
/// filtered moment exactly.
pub fn rts_smoother(model: &Lgssm, run: &FilterRun, ledger: &mut FlopLedger) -> Result<Vec<GaussianMoment>> {
    let n = run.filtered.len();
    if n != model.n() || run.predicted.len() != n {
        return Err(Error::InvalidArg("filter run does not match model".into()));
    }
    let mut smoothed = vec![run.filtered[n - 1].clone(); n];
    for k in (0..n - 1).rev() {
        // Transition from step k+1 to k+2 is indexed k+1.
        let (f, _, _) = model.trans(k + 1);
        let filt = &run.filtered[k];
        let pred_next = &run.predicted[k + 1];

        // Gain G = P_k F^T (P_{k+1}^-)^{-1}; P symmetric, so solve on F P.
        let fp = matmul(f, &filt.cov, ledger)?;
        let gain = kernel::solve(&pred_next.cov, &fp, ledger)?.transpose();

        let dm = kernel::vec_sub(&smoothed[k + 1].mean, &pred_next.mean, ledger)?;
        let mean = kernel::vec_add(&filt.mean, &matvec(&gain, &dm, ledger)?, ledger)?;
        let dp = kernel::mat_sub(&smoothed[k + 1].cov, &pred_next.cov, ledger)?;
        let gp = matmul(&gain, &dp, ledger)?;
        let cov = sym(&kernel::mat_add(&filt.cov, &matmul(&gp, &gain.transpose(), ledger)?, ledger)?)?;
        smoothed[k] = GaussianMoment { mean, cov };
    }
    Ok(smoothed)
}

/// Output of the HMM forward pass: filtered and one-step-ahead predicted
/// distributions plus per-step log-normalizers log p(y_k | y_{1:k-1}).
#[derive(Debug, Clone)]
pub struct HmmForward {
    pub filtered: Vec<Vector>,
    pub predicted: Vec<Vector>,
    pub log_norm: Vec<f64>,
    pub loglik: f64,
}

impl HmmForward {
    pub fn prefix_loglik(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.log_norm.len());
        let mut acc = 0.0;
        for &v in &self.log_norm {
            acc += v;
            out.push(acc);
        }
        out
    }
}

/// Normalized forward algorithm; log-likelihood accumulates in log domain.
pub fn hmm_forward(model: &HmmModel) -> Result<HmmForward> {
    model.validate()?;
    let ns = model.states();
    let n = model.n();
    let mut filtered = Vec::with_capacity(n);
    let mut predicted = Vec::with_capacity(n);
    let mut log_norm = Vec::with_capacity(n);

    let mut prev = model.init.clone();
    for k in 0..n {
        let mut pred = Vector::zeros(ns);
        for z in 0..ns {
            let pz = prev.get(z);
            for x in 0..ns {
                let v = pred.get(x) + pz * model.trans.get(z, x);
                pred.set(x, v);
            }
        }
        let lik = &model.emission[k];
        let mut alpha = Vector::zeros(ns);
        let mut norm = 0.0;
        for x in 0..ns {
            let w = lik.get(x) * pred.get(x);
            alpha.set(x, w);
            norm += w;
        }
        if norm.is_nan() || norm <= 0.0 {
            return Err(Error::ZeroLikelihood { step: k + 1 });
        }
        for x in 0..ns {
            let v = alpha.get(x) / norm;
            alpha.set(x, v);
        }
        log_norm.push(norm.ln());
        predicted.push(pred);
        filtered.push(alpha.clone());
        prev = alpha;
    }
    let loglik = log_norm.iter().sum();
    Ok(HmmForward { filtered, predicted, log_norm, loglik })
}

/// Backward smoothing pass producing p(x_k | y_{1:n}) for all k.
pub fn hmm_backward_smooth(model: &HmmModel, fwd: &HmmForward) -> Result<Vec<Vector>> {
    let ns = model.states();
    let n = fwd.filtered.len();
    if n != model.n() {
        return Err(Error::InvalidArg("forward result does not match model".into()));
    }
    let mut smoothed = vec![fwd.filtered[n - 1].clone(); n];
    for k in (0..n - 1).rev() {
        let mut ratio = Vector::zeros(ns);
        for z in 0..ns {
            let p = fwd.predicted[k + 1].get(z);
            if p.is_nan() || p <= 0.0 {
                return Err(Error::ZeroLikelihood { step: k + 2 });
            }
            ratio.set(z, smoothed[k + 1].get(z) / p);
        }
        let mut out = Vector::zeros(ns);
        for x in 0..ns {
            let mut s = 0.0;
            for z in 0..ns {
                s += model.trans.get(x, z) * ratio.get(z);
            }
            out.set(x, fwd.filtered[k].get(x) * s);
        }
        smoothed[k] = out;
    }
    Ok(smoothed)
}

/// Exact posterior for small HMMs by summing the joint over all state
/// sequences. Ground-truth oracle; cost is O(n * n_s^(n+1)).
#[derive(Debug, Clone)]
pub struct BrutePosterior {
    pub filtered: Vec<Vector>,
    pub smoothed: Vec<Vector>,
    pub loglik: f64,
}

pub fn brute_force_posterior(model: &HmmModel) -> Result<BrutePosterior> {
    model.validate()?;
    let ns = model.states();
    let n = model.n();
    let combos = (ns as f64).powi(n as i32);
    if combos > 1e7 {
        return Err(Error::TooLarge(format!("{ns} states over {n} steps is {combos:.1e} sequences")));
    }

    // Enumerate p(x_{0:m}, y_{1:m}) marginals for each horizon m; the full
    // horizon gives the smoothed marginals and the likelihood.
    let mut filtered = Vec::with_capacity(n);
    let mut smoothed = vec![Vector::zeros(ns); n];
    let mut loglik = 0.0;
    for horizon in 1..=n {
        let mut joint_by_last = vec![0.0; ns];
        let mut joint_by_step = vec![vec![0.0; ns]; horizon];
        let mut seq = vec![0usize; horizon + 1];
        loop {
            let mut w = model.init.get(seq[0]);
            for k in 1..=horizon {
                w *= model.trans.get(seq[k - 1], seq[k]) * model.emission[k - 1].get(seq[k]);
            }
            joint_by_last[seq[horizon]] += w;
            if horizon == n {
                for k in 1..=horizon {
                    joint_by_step[k - 1][seq[k]] += w;
                }
            }
            // Mixed-radix increment over the sequence.
            let mut pos = 0;
            loop {
                seq[pos] += 1;
                if seq[pos] < ns {
                    break;
                }
                seq[pos] = 0;
                pos += 1;
                if pos > horizon {
                    break;
                }
            }
            if pos > horizon {
                break;
            }
        }
        let total: f64 = joint_by_last.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::ZeroLikelihood { step: horizon });
        }
        filtered.push(Vector::from(joint_by_last.iter().map(|v| v / total).collect::<Vec<_>>()));
        if horizon == n {
            loglik = total.ln();
            for k in 0..n {
                let s: f64 = joint_by_step[k].iter().sum();
                smoothed[k] = Vector::from(joint_by_step[k].iter().map(|v| v / s).collect::<Vec<_>>());
            }
        }
    }
    Ok(BrutePosterior { filtered, smoothed, loglik })
}
