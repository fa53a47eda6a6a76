//! Gradient flow of the linear cross-moment loss `L(W) = ‖WΓWᵀ − I‖²_F`,
//! `dW/dt = 4(I − WΓWᵀ)WΓ`, integrated with fixed-step classic RK4.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg;
use crate::seeding::{self, Stream};
use crate::trainer::{fmt_f64, fmt_opt};
use crate::{Error, Result};

/// Relative cutoff separating zero from nonzero eigenvalues of Γ.
pub const RANK_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearState {
    /// K × p.
    pub w: DMatrix<f64>,
    /// p × p, symmetric.
    pub gamma: DMatrix<f64>,
    pub t: f64,
}

impl LinearState {
    pub fn new(w: DMatrix<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        if gamma.nrows() != gamma.ncols() || w.ncols() != gamma.nrows() {
            return Err(Error::dim(
                "linear state",
                format!("K x p with p x p gamma (p = {})", w.ncols()),
                format!("{:?} / {:?}", w.shape(), gamma.shape()),
            ));
        }
        if linalg::relative_asymmetry(&gamma) > 1e-12 {
            return Err(Error::Invariant("gamma must be symmetric".into()));
        }
        if w.iter().chain(gamma.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entries in linear state".into()));
        }
        Ok(Self { w, gamma, t: 0.0 })
    }

    pub fn cross_moment(&self) -> DMatrix<f64> {
        cross_moment(&self.w, &self.gamma)
    }

    pub fn loss(&self) -> f64 {
        loss(&self.w, &self.gamma)
    }
}

fn cross_moment(w: &DMatrix<f64>, gamma: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::symmetrize(&(w * gamma * w.transpose()))
}

fn loss(w: &DMatrix<f64>, gamma: &DMatrix<f64>) -> f64 {
    let k = w.nrows();
    (cross_moment(w, gamma) - DMatrix::identity(k, k)).norm_squared()
}

/// `4(I − WΓWᵀ)WΓ`.
pub fn lindyn_rhs(w: &DMatrix<f64>, gamma: &DMatrix<f64>) -> DMatrix<f64> {
    let k = w.nrows();
    let wg = w * gamma;
    (DMatrix::identity(k, k) - &wg * w.transpose()) * wg * 4.0
}

/// `L` at `W` for the state's Γ; convenient for finite-difference checks.
pub fn loss_at(w: &DMatrix<f64>, gamma: &DMatrix<f64>) -> f64 {
    loss(w, gamma)
}

/// Smallest nonzero `|eigenvalue|` of Γ, or `None` if Γ vanishes.
pub fn mu_gamma(gamma: &DMatrix<f64>) -> Result<Option<f64>> {
    let eig = linalg::sym_eigenvalues(gamma)?;
    let norm = eig.iter().fold(0.0_f64, |a, &l| a.max(l.abs()));
    let cutoff = RANK_CUTOFF * norm;
    Ok(eig.iter().map(|l| l.abs()).filter(|&l| l > cutoff && l > 0.0).reduce(f64::min))
}

/// `η = 16 λ_min(C(0)) μ_Γ`.
pub fn eta(state: &LinearState) -> Result<Option<f64>> {
    let lam = linalg::min_sym_eigenvalue(&state.cross_moment())?;
    Ok(mu_gamma(&state.gamma)?.map(|mu| 16.0 * lam * mu))
}

/// `h` with `h·‖rhs(W₀)‖ = 1e-3·‖W₀‖`; falls back to 1e-3 when either norm vanishes.
pub fn default_step(state: &LinearState) -> f64 {
    let r = lindyn_rhs(&state.w, &state.gamma).norm();
    let w = state.w.norm();
    if r > 0.0 && w > 0.0 {
        1e-3 * w / r
    } else {
        1e-3
    }
}

/// Absolute jitter of `‖C − I‖²_F` in f64 once the entries of `C − I` reach ~1e-13;
/// converged trajectories wander at this level.
pub const LOSS_NOISE_FLOOR: f64 = 1e-24;

#[derive(Debug, Clone, PartialEq)]
pub struct LindynRecord {
    pub t: f64,
    pub loss: f64,
    /// Spectrum of `C = WΓWᵀ`, ascending.
    pub eigenvalues: Vec<f64>,
}

impl LindynRecord {
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().expect("nonempty spectrum")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LindynTrajectory {
    pub records: Vec<LindynRecord>,
    pub eta: Option<f64>,
    pub final_state: LinearState,
}

impl LindynTrajectory {
    pub fn initial_loss(&self) -> f64 {
        self.records[0].loss
    }

    /// `L(0)·exp(−ηt)`.
    pub fn envelope(&self, t: f64) -> Option<f64> {
        self.eta.map(|eta| self.initial_loss() * (-eta * t).exp())
    }

    pub fn within_envelope(&self, slack: f64) -> Option<bool> {
        self.eta?;
        Some(self.records.iter().all(|r| r.loss <= self.envelope(r.t).unwrap() * (1.0 + slack)))
    }

    /// Nonincreasing loss, up to [`LOSS_NOISE_FLOOR`].
    pub fn is_loss_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[1].loss <= w[0].loss + LOSS_NOISE_FLOOR)
    }

    /// First recorded time with loss < δ.
    pub fn time_below(&self, delta: f64) -> Option<f64> {
        self.records.iter().find(|r| r.loss < delta).map(|r| r.t)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,loss,lambda_min_C,lambda_max_C,envelope_value")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(r.t),
                fmt_f64(r.loss),
                fmt_f64(r.lambda_min()),
                fmt_f64(r.lambda_max()),
                fmt_opt(self.envelope(r.t))
            )?;
        }
        Ok(())
    }
}

fn snapshot(w: &DMatrix<f64>, gamma: &DMatrix<f64>, t: f64) -> Result<LindynRecord> {
    let eig = linalg::sym_eigenvalues(&cross_moment(w, gamma))?;
    Ok(LindynRecord { t, loss: loss(w, gamma), eigenvalues: eig.iter().copied().collect() })
}

fn rk4_step(w: &DMatrix<f64>, gamma: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let k1 = lindyn_rhs(w, gamma);
    let k2 = lindyn_rhs(&(w + &k1 * (h / 2.0)), gamma);
    let k3 = lindyn_rhs(&(w + &k2 * (h / 2.0)), gamma);
    let k4 = lindyn_rhs(&(w + &k3 * h), gamma);
    w + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrate from `state0.t` to `t_end` with step `h` (the last step is shortened
/// to land on `t_end`), recording every step.
pub fn integrate(state0: &LinearState, t_end: f64, h: f64) -> Result<LindynTrajectory> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be > 0, got {h}")));
    }
    if !(t_end >= state0.t) {
        return Err(Error::InvalidArgument(format!("t_end {t_end} precedes start {}", state0.t)));
    }
    let eta = eta(state0)?;
    let gamma = &state0.gamma;
    let mut w = state0.w.clone();
    let mut t = state0.t;
    let mut records = vec![snapshot(&w, gamma, t)?];
    let steps = ((t_end - t) / h - 1e-9).ceil().max(0.0) as usize;
    for s in 0..steps {
        let hs = if s + 1 == steps { t_end - t } else { h };
        w = rk4_step(&w, gamma, hs);
        t = if s + 1 == steps { t_end } else { t + hs };
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Integration { time: t });
        }
        records.push(snapshot(&w, gamma, t)?);
    }
    let final_state = LinearState { w, gamma: gamma.clone(), t };
    Ok(LindynTrajectory { records, eta, final_state })
}

/// `λ_min(C)` nondecreasing (tolerance 1e-10) and the whole spectrum inside `(0, 1 + 1e-10)` at every record.
pub fn eigen_monotonicity_check(trajectory: &LindynTrajectory) -> bool {
    let in_range = trajectory
        .records
        .iter()
        .all(|r| r.eigenvalues.iter().all(|&l| l > 0.0 && l < 1.0 + 1e-10));
    let monotone = trajectory.records.windows(2).all(|w| w[1].lambda_min() >= w[0].lambda_min() - 1e-10);
    in_range && monotone
}

/// Orthogonal projector onto `ker Γ` (eigenvalues below the rank cutoff).
pub fn nullspace_projector(gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if linalg::relative_asymmetry(gamma) > 1e-12 {
        return Err(Error::Invariant("gamma must be symmetric".into()));
    }
    let eig = linalg::symmetrize(gamma).symmetric_eigen();
    let norm = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l.abs()));
    let p = gamma.nrows();
    let mut proj = DMatrix::zeros(p, p);
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() <= RANK_CUTOFF * norm {
            let q = eig.eigenvectors.column(j);
            proj += &q * q.transpose();
        }
    }
    Ok(proj)
}

fn normal(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Random PSD instance with `null_dim` null directions in Γ and `spec(C(0))`
/// drawn uniformly from `(lo, hi)`. The rows of `W(0)` carry a random component
/// in `ker Γ`, which leaves `C(0)` unchanged.
pub fn random_instance(k: usize, p: usize, null_dim: usize, lo: f64, hi: f64, seed: u64) -> Result<LinearState> {
    if k == 0 || p < k + null_dim {
        return Err(Error::InvalidArgument(format!("need p >= K + null_dim (K={k}, p={p}, null={null_dim})")));
    }
    if !(0.0 < lo && lo < hi) {
        return Err(Error::InvalidArgument(format!("need 0 < lo < hi, got ({lo}, {hi})")));
    }
    let mut rng = seeding::rng(seed, Stream::Init);
    let q = normal(&mut rng, p, p).qr().q();
    let rank = p - null_dim;
    let q_range = q.columns(0, rank).into_owned();
    let q_null = q.columns(rank, null_dim).into_owned();
    let u = normal(&mut rng, k, k).qr().q();
    let r = normal(&mut rng, rank, k).qr().q();
    let noise = normal(&mut rng, k, null_dim);
    let gamma_eigs: Vec<f64> = (0..rank).map(|_| rng.random_range(0.2..2.0)).collect();
    let c_eigs: Vec<f64> = (0..k).map(|_| rng.random_range(lo..hi)).collect();
    let gamma = linalg::symmetrize(
        &(&q_range * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(gamma_eigs.clone())) * q_range.transpose()),
    );
    // W = U C^{1/2} Rᵀ Γ_r^{-1/2} Q_rᵀ gives WΓWᵀ = U diag(c) Uᵀ.
    let c_half = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(k, c_eigs.iter().map(|c| c.sqrt())));
    let g_inv_half = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(rank, gamma_eigs.iter().map(|g| 1.0 / g.sqrt())));
    let mut w = &u * c_half * r.transpose() * g_inv_half * q_range.transpose();
    if null_dim > 0 {
        w += noise * q_null.transpose();
    }
    LinearState::new(w, gamma)
}
