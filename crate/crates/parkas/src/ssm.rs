//! Model definitions and data generation: linear-Gaussian state-space models
//! (including the constant-velocity tracking model used by the benchmarks)
//! and finite-state hidden Markov models, with seeded simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{psd_cholesky, sym_eigenvalues, FlopLedger, Matrix, Vector};

/// A per-step parameter: either one value broadcast over all steps or an
/// explicit per-step sequence. Stationary models store a single value so
/// that step-independent element parameters can be shared.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSeq<T> {
    Stationary(T),
    PerStep(Vec<T>),
}

impl<T> ParamSeq<T> {
    /// Value at step index `k` (0-based).
    pub fn at(&self, k: usize) -> &T {
        match self {
            ParamSeq::Stationary(v) => v,
            ParamSeq::PerStep(vs) => &vs[k],
        }
    }

    pub fn is_stationary(&self) -> bool {
        matches!(self, ParamSeq::Stationary(_))
    }

    fn len_for(&self, n: usize) -> Option<usize> {
        match self {
            ParamSeq::Stationary(_) => Some(n),
            ParamSeq::PerStep(vs) => (vs.len() == n).then_some(n),
        }
    }
}

/// Linear-Gaussian state-space model
///
///   x_k = F_{k-1} x_{k-1} + u_{k-1} + q_{k-1},   q ~ N(0, Q_{k-1})
///   y_k = H_k x_k + d_k + r_k,                   r ~ N(0, R_k)
///
/// for k = 1..n with x_0 ~ N(m0, P0). Transition parameters are indexed
/// from 0 (`F_0` drives step 1) and measurement parameters from step 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lgssm {
    pub f: ParamSeq<Matrix>,
    pub u: ParamSeq<Vector>,
    pub q: ParamSeq<Matrix>,
    pub h: ParamSeq<Matrix>,
    pub d: ParamSeq<Vector>,
    pub r: ParamSeq<Matrix>,
    pub m0: Vector,
    pub p0: Matrix,
    pub steps: usize,
}

impl Lgssm {
    /// Stationary model: one parameter set broadcast over `steps` steps.
    #[allow(clippy::too_many_arguments)]
    pub fn stationary(
        f: Matrix,
        u: Vector,
        q: Matrix,
        h: Matrix,
        d: Vector,
        r: Matrix,
        m0: Vector,
        p0: Matrix,
        steps: usize,
    ) -> Result<Self> {
        let model = Self {
            f: ParamSeq::Stationary(f),
            u: ParamSeq::Stationary(u),
            q: ParamSeq::Stationary(q),
            h: ParamSeq::Stationary(h),
            d: ParamSeq::Stationary(d),
            r: ParamSeq::Stationary(r),
            m0,
            p0,
            steps,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn state_dim(&self) -> usize {
        self.m0.dim()
    }

    pub fn meas_dim(&self) -> usize {
        self.h.at(0).rows()
    }

    pub fn n(&self) -> usize {
        self.steps
    }

    /// Transition parameters (F, u, Q) indexed from 0; index k-1 drives step k.
    pub fn trans(&self, idx: usize) -> (&Matrix, &Vector, &Matrix) {
        (self.f.at(idx), self.u.at(idx), self.q.at(idx))
    }

    /// Measurement parameters (H, d, R) for step k in 1..=n.
    pub fn meas(&self, k: usize) -> (&Matrix, &Vector, &Matrix) {
        (self.h.at(k - 1), self.d.at(k - 1), self.r.at(k - 1))
    }

    /// Checks dimensional consistency, symmetry and definiteness:
    /// Q and P0 symmetric PSD (min eigenvalue >= -1e-10), R symmetric PD.
    pub fn validate(&self) -> Result<()> {
        let nx = self.state_dim();
        let ny = self.meas_dim();
        if self.steps == 0 {
            return Err(Error::InvalidArg("model must have at least one step".into()));
        }
        for (name, seq) in [("f", &self.f), ("q", &self.q)] {
            if seq.len_for(self.steps).is_none() {
                return Err(Error::InvalidArg(format!("{name} sequence length != steps")));
            }
        }
        if self.u.len_for(self.steps).is_none()
            || self.h.len_for(self.steps).is_none()
            || self.d.len_for(self.steps).is_none()
            || self.r.len_for(self.steps).is_none()
        {
            return Err(Error::InvalidArg("per-step parameter length != steps".into()));
        }
        if self.p0.rows() != nx || !self.p0.is_square() {
            return Err(Error::InvalidArg("p0 must be n_x x n_x".into()));
        }
        check_psd(&self.p0, "p0", false)?;
        for k in 0..self.steps {
            let (f, u, q) = self.trans(k);
            if f.rows() != nx || f.cols() != nx || u.dim() != nx || q.rows() != nx || !q.is_square() {
                return Err(Error::InvalidArg(format!("transition dims inconsistent at index {k}")));
            }
            check_psd(q, "q", false)?;
            let (h, d, r) = self.meas(k + 1);
            if h.rows() != ny || h.cols() != nx || d.dim() != ny || r.rows() != ny || !r.is_square() {
                return Err(Error::InvalidArg(format!("measurement dims inconsistent at step {}", k + 1)));
            }
            check_psd(r, "r", true)?;
            if self.f.is_stationary() && k > 0 {
                break;
            }
        }
        Ok(())
    }
}

fn check_psd(a: &Matrix, name: &'static str, strict: bool) -> Result<()> {
    let scale = a.max_abs().max(1.0);
    for i in 0..a.rows() {
        for j in 0..i {
            if (a.get(i, j) - a.get(j, i)).abs() > 1e-9 * scale {
                return Err(Error::InvalidArg(format!("{name} is not symmetric")));
            }
        }
    }
    let eigs = sym_eigenvalues(a)?;
    let min = eigs.first().copied().unwrap_or(0.0);
    if strict {
        if min <= 0.0 {
            return Err(Error::NotPsd { context: "model validation (PD required)", value: min });
        }
    } else if min < -1e-10 * scale {
        return Err(Error::NotPsd { context: "model validation", value: min });
    }
    Ok(())
}

/// Finite-state hidden Markov model with per-step emission likelihood tables.
///
/// `trans[i][j] = p(x_k = j | x_{k-1} = i)` (rows sum to one) and
/// `emission[k-1][s] = p(y_k | x_k = s)` for the realized measurement at
/// step k. `init` is the distribution of x_0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HmmModel {
    pub trans: Matrix,
    pub emission: Vec<Vector>,
    pub init: Vector,
}

impl HmmModel {
    pub fn states(&self) -> usize {
        self.init.dim()
    }

    pub fn n(&self) -> usize {
        self.emission.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ns = self.states();
        if ns == 0 || self.emission.is_empty() {
            return Err(Error::InvalidArg("HMM needs at least one state and one step".into()));
        }
        if self.trans.rows() != ns || self.trans.cols() != ns {
            return Err(Error::InvalidArg("transition matrix must be n_s x n_s".into()));
        }
        for i in 0..ns {
            let s: f64 = (0..ns).map(|j| self.trans.get(i, j)).sum();
            if (s - 1.0).abs() > 1e-12 || (0..ns).any(|j| self.trans.get(i, j) < 0.0) {
                return Err(Error::InvalidArg(format!("transition row {i} is not a distribution")));
            }
        }
        let s0: f64 = self.init.as_slice().iter().sum();
        if (s0 - 1.0).abs() > 1e-12 || self.init.as_slice().iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidArg("initial distribution must sum to one".into()));
        }
        for (k, table) in self.emission.iter().enumerate() {
            if table.dim() != ns || table.as_slice().iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidArg(format!("emission table at step {} invalid", k + 1)));
            }
        }
        Ok(())
    }
}

/// A simulated trajectory and its measurements; regenerating with the same
/// seed reproduces the output bit for bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimResult {
    pub states: Vec<Vector>,
    pub measurements: Vec<Vector>,
    pub seed: u64,
}

/// Constant-velocity tracking model with state (pos_x, pos_y, vel_x, vel_y),
/// position measurements, and the standard white-noise-acceleration Q.
pub fn make_tracking_model(
    dt: f64,
    q: f64,
    sigma: f64,
    m0: Vector,
    p0: Matrix,
    n: usize,
) -> Result<Lgssm> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidArg(format!("dt must be positive, got {dt}")));
    }
    if !q.is_finite() || q < 0.0 {
        return Err(Error::InvalidArg(format!("q must be nonnegative, got {q}")));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidArg(format!("sigma must be positive, got {sigma}")));
    }
    if m0.dim() != 4 || p0.rows() != 4 || p0.cols() != 4 {
        return Err(Error::InvalidArg("tracking model needs 4-dim m0 and 4x4 p0".into()));
    }
    let f = Matrix::from_rows(&[
        vec![1.0, 0.0, dt, 0.0],
        vec![0.0, 1.0, 0.0, dt],
        vec![0.0, 0.0, 1.0, 0.0],
        vec![0.0, 0.0, 0.0, 1.0],
    ])?;
    let (a, b, c) = (dt * dt * dt / 3.0, dt * dt / 2.0, dt);
    let qm = Matrix::from_rows(&[
        vec![q * a, 0.0, q * b, 0.0],
        vec![0.0, q * a, 0.0, q * b],
        vec![q * b, 0.0, q * c, 0.0],
        vec![0.0, q * b, 0.0, q * c],
    ])?;
    let h = Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]])?;
    let r = Matrix::diag(&[sigma * sigma, sigma * sigma]);
    Lgssm::stationary(f, Vector::zeros(4), qm, h, Vector::zeros(2), r, m0, p0, n)
}

/// Tracking model at the benchmark configuration: dt = 0.1, q = 1,
/// sigma = 0.5, m0 = (0, 0, 1, -1), p0 = I.
pub fn tracking_benchmark_model(n: usize) -> Result<Lgssm> {
    make_tracking_model(
        0.1,
        1.0,
        0.5,
        Vector::from(vec![0.0, 0.0, 1.0, -1.0]),
        Matrix::identity(4),
        n,
    )
}

fn sample_gaussian(mean: &Vector, chol_lower: &Matrix, rng: &mut ChaCha8Rng) -> Vector {
    let n = mean.dim();
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut out = mean.clone();
    for i in 0..n {
        let mut s = 0.0;
        for (j, zj) in z.iter().enumerate().take(i + 1) {
            s += chol_lower.get(i, j) * zj;
        }
        let v = out.get(i) + s;
        out.set(i, v);
    }
    out
}

/// Draws a trajectory and measurements from the model. Sampling uses a
/// Cholesky factor of each covariance with a ChaCha8 generator seeded from
/// `seed`, so output is deterministic.
pub fn simulate(model: &Lgssm, seed: u64) -> Result<SimResult> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n();

    let chol_p0 = psd_cholesky(&model.p0, "simulate p0")?;
    let mut x = sample_gaussian(&model.m0, &chol_p0, &mut rng);

    let mut states = Vec::with_capacity(n);
    let mut measurements = Vec::with_capacity(n);
    let mut scratch = FlopLedger::new();
    // Stationary models share one factor per covariance.
    let mut chol_q = psd_cholesky(model.trans(0).2, "simulate q")?;
    let mut chol_r = psd_cholesky(model.meas(1).2, "simulate r")?;
    for k in 1..=n {
        let (f, u, q) = model.trans(k - 1);
        if !model.q.is_stationary() {
            chol_q = psd_cholesky(q, "simulate q")?;
        }
        let drift = crate::kernel::vec_add(&crate::kernel::matvec(f, &x, &mut scratch)?, u, &mut scratch)?;
        x = sample_gaussian(&drift, &chol_q, &mut rng);
        let (h, d, r) = model.meas(k);
        if !model.r.is_stationary() {
            chol_r = psd_cholesky(r, "simulate r")?;
        }
        let loc = crate::kernel::vec_add(&crate::kernel::matvec(h, &x, &mut scratch)?, d, &mut scratch)?;
        let y = sample_gaussian(&loc, &chol_r, &mut rng);
        states.push(x.clone());
        measurements.push(y);
    }
    Ok(SimResult { states, measurements, seed })
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen::<f64>() * 2.0 - 1.0
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| uniform(rng)).collect()).expect("finite entries")
}

/// Random orthogonal matrix via modified Gram-Schmidt on a random matrix.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    loop {
        let g = random_matrix(n, n, rng);
        let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| g.get(i, j)).collect()).collect();
        let mut ok = true;
        for j in 0..n {
            for i in 0..j {
                let proj: f64 = cols[j].iter().zip(&cols[i]).map(|(a, b)| a * b).sum();
                let prev = cols[i].clone();
                for (c, p) in cols[j].iter_mut().zip(&prev) {
                    *c -= proj * p;
                }
            }
            let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-6 {
                ok = false;
                break;
            }
            for c in cols[j].iter_mut() {
                *c /= norm;
            }
        }
        if ok {
            let mut out = Matrix::zeros(n, n);
            for (j, col) in cols.iter().enumerate() {
                for (i, &v) in col.iter().enumerate() {
                    out.set(i, j, v);
                }
            }
            return out;
        }
    }
}

fn random_spd(n: usize, shift: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let g = random_matrix(n, n, rng);
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += g.get(i, k) * g.get(j, k);
            }
            out.set(i, j, s + if i == j { shift } else { 0.0 });
        }
    }
    out
}

/// Random stable test model: F = U diag(s) V^T with singular values below
/// 0.99 (so the spectral radius is too), Q and P0 of the form G G^T + eps I,
/// and R of the form G G^T + I. Reproducible under `seed`.
pub fn make_random_lgssm(nx: usize, ny: usize, n: usize, seed: u64) -> Result<Lgssm> {
    if nx < 1 || ny < 1 || n < 1 {
        return Err(Error::InvalidArg("dimensions and step count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u_orth = random_orthogonal(nx, &mut rng);
    let v_orth = random_orthogonal(nx, &mut rng);
    let sv: Vec<f64> = (0..nx).map(|_| 0.2 + 0.79 * rng.gen::<f64>()).collect();
    let mut scratch = FlopLedger::new();
    let f = crate::kernel::matmul(
        &crate::kernel::matmul(&u_orth, &Matrix::diag(&sv), &mut scratch)?,
        &v_orth.transpose(),
        &mut scratch,
    )?;
    let q = random_spd(nx, 0.1, &mut rng);
    let h = random_matrix(ny, nx, &mut rng);
    let r = random_spd(ny, 1.0, &mut rng);
    let u = Vector::from((0..nx).map(|_| uniform(&mut rng)).collect::<Vec<_>>());
    let d = Vector::from((0..ny).map(|_| uniform(&mut rng)).collect::<Vec<_>>());
    let m0 = Vector::from((0..nx).map(|_| uniform(&mut rng)).collect::<Vec<_>>());
    let p0 = random_spd(nx, 0.1, &mut rng);
    Lgssm::stationary(f, u, q, h, d, r, m0, p0, n)
}

/// Random HMM plus the discrete observation sequence that produced its
/// emission tables. Transition rows are floored well above 1e-3 and
/// renormalized; emission tables are strictly positive.
pub fn make_random_hmm(ns: usize, n: usize, seed: u64) -> Result<(HmmModel, Vec<usize>)> {
    if ns < 2 || n < 1 {
        return Err(Error::InvalidArg("need at least 2 states and 1 step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trans = Matrix::zeros(ns, ns);
    for i in 0..ns {
        let row: Vec<f64> = (0..ns).map(|_| rng.gen::<f64>() + 0.05).collect();
        let s: f64 = row.iter().sum();
        for (j, v) in row.iter().enumerate() {
            trans.set(i, j, v / s);
        }
    }
    let raw0: Vec<f64> = (0..ns).map(|_| rng.gen::<f64>() + 0.05).collect();
    let s0: f64 = raw0.iter().sum();
    let init = Vector::from(raw0.iter().map(|v| v / s0).collect::<Vec<_>>());

    // Emission matrix over as many symbols as states.
    let mut emit = Matrix::zeros(ns, ns);
    for i in 0..ns {
        let row: Vec<f64> = (0..ns).map(|_| rng.gen::<f64>() + 0.05).collect();
        let s: f64 = row.iter().sum();
        for (j, v) in row.iter().enumerate() {
            emit.set(i, j, v / s);
        }
    }

    let sample_from = |p: &[f64], rng: &mut ChaCha8Rng| -> usize {
        let t = rng.gen::<f64>();
        let mut cdf = 0.0;
        for (i, &v) in p.iter().enumerate() {
            cdf += v;
            if t < cdf {
                return i;
            }
        }
        p.len() - 1
    };

    let mut x = sample_from(init.as_slice(), &mut rng);
    let mut observations = Vec::with_capacity(n);
    let mut emission = Vec::with_capacity(n);
    for _ in 0..n {
        x = sample_from(trans.row(x), &mut rng);
        let y = sample_from(emit.row(x), &mut rng);
        observations.push(y);
        emission.push(emit.column(y));
    }
    let model = HmmModel { trans, emission, init };
    model.validate()?;
    Ok((model, observations))
}
