//! Full-batch gradient descent on the cross-moment loss, with per-epoch diagnostics.
//!
//! Each step is the explicit-Euler discretization `θ ← θ − lr·∇_θL` of gradient
//! flow; time after `e` epochs is `t = e·lr`.

use std::io::Write;

use crate::bt_loss::{self, Evaluation};
use crate::data::PairedDataset;
use crate::network::NetworkParams;
use crate::ntk::{self, Drift, NtkMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Assemble `𝐊(0)` and `𝐊(final)`; report drift, `λ_min(𝐊(0))` and η.
    pub ntk: bool,
    /// Record `uᵀ𝐊(t)u` at every recorded epoch (assembles 𝐊 each time).
    pub quadratic_form: bool,
    /// Restrict NTK diagnostics to these pairs (memory budget).
    pub ntk_pairs: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub delta: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub record_every: usize,
    pub diagnostics: Diagnostics,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            delta: 1e-5,
            max_epochs: 10_000,
            seed: 0,
            record_every: 1,
            diagnostics: Diagnostics::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidArgument(format!("delta must be > 0, got {}", self.delta)));
        }
        if self.max_epochs == 0 || self.record_every == 0 {
            return Err(Error::InvalidArgument("max_epochs and record_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub epoch: usize,
    pub loss: f64,
    /// `‖θ − θ₀‖`.
    pub theta_drift: f64,
    pub lambda_min_c: f64,
    /// `‖∇_θL‖²`; the step taken at this epoch has length `lr·√grad_norm_sq`.
    pub grad_norm_sq: f64,
    pub u_k_u: Option<f64>,
    /// `Σ_m ‖w_m‖²`.
    pub w_norm_sq: f64,
    /// `Σ` over all 2N points of `‖f(point)‖²`.
    pub rep_norm_sq: f64,
}

impl TrajectoryRecord {
    pub fn step_grad_norm(&self) -> f64 {
        self.grad_norm_sq.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub lr: f64,
    pub records: Vec<TrajectoryRecord>,
}

pub const TRAJECTORY_COLUMNS: [&str; 7] =
    ["epoch", "loss", "theta_drift", "lambda_min_C", "grad_norm_sq", "u_K_u", "w_norm_sq"];

/// 17 significant digits, `NA` for missing values.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), fmt_f64)
}

impl Trajectory {
    pub fn initial_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn is_monotone_nonincreasing(&self) -> bool {
        self.records.windows(2).all(|w| w[1].loss <= w[0].loss)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", TRAJECTORY_COLUMNS.join(","))?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                fmt_f64(r.loss),
                fmt_f64(r.theta_drift),
                fmt_f64(r.lambda_min_c),
                fmt_f64(r.grad_norm_sq),
                fmt_opt(r.u_k_u),
                fmt_f64(r.w_norm_sq)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub converged: bool,
    /// First epoch with loss < δ, or the number of steps taken when not converged.
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_params: NetworkParams,
    /// Representations at the final parameters, K × 2N.
    pub final_reps: nalgebra::DMatrix<f64>,
    pub trajectory: Trajectory,
    pub ntk_drift: Option<Drift>,
    pub lambda_min_k0: Option<f64>,
    pub eta: Option<f64>,
}

impl RunResult {
    pub fn epochs_to_converge(&self) -> Option<usize> {
        self.converged.then_some(self.epochs)
    }

    pub fn theta_drift(&self) -> f64 {
        self.trajectory.records.last().map_or(0.0, |r| r.theta_drift)
    }
}

/// `η = 4λ(1 − √L(0)) / N`, defined only for `L(0) < 1`.
pub fn eta_estimate(k0_min_eig: f64, loss0: f64, n: usize) -> Option<f64> {
    (loss0 < 1.0).then(|| 4.0 * k0_min_eig * (1.0 - loss0.max(0.0).sqrt()) / n as f64)
}

/// True iff `Σ‖f‖²` never exceeds `Σ‖f‖²(0) · exp(rate · t)` (relative slack 1e-9).
pub fn gronwall_envelope_check(trajectory: &Trajectory, growth_rate: f64) -> bool {
    let Some(first) = trajectory.records.first() else {
        return true;
    };
    let u0 = first.rep_norm_sq;
    trajectory.records.iter().all(|r| {
        let t = (r.epoch - first.epoch) as f64 * trajectory.lr;
        r.rep_norm_sq <= u0 * (growth_rate * t).exp() * (1.0 + 1e-9)
    })
}

/// `‖θ_e − θ₀‖ ≤ lr · e · max_{s<e} ‖∇L(θ_s)‖` at every record. Needs every epoch recorded.
pub fn drift_within_step_envelope(trajectory: &Trajectory) -> bool {
    let mut max_step: f64 = 0.0;
    let mut ok = true;
    for (i, r) in trajectory.records.iter().enumerate() {
        let envelope = max_step * trajectory.lr * r.epoch as f64;
        ok &= r.theta_drift <= envelope * (1.0 + 1e-12) + 1e-12;
        debug_assert!(i == 0 || trajectory.records[i - 1].epoch + 1 == r.epoch);
        max_step = max_step.max(r.step_grad_norm());
    }
    ok
}

/// `λ_min(C_e) ≥ 1 − √L(0) − 1e-6` at every record, checked only when `L(0) < 1`
/// and the recorded losses are monotone; returns `None` when the check does not apply.
pub fn cross_moment_floor_holds(trajectory: &Trajectory) -> Option<bool> {
    let l0 = trajectory.initial_loss()?;
    if l0 >= 1.0 || !trajectory.is_monotone_nonincreasing() {
        return None;
    }
    let floor = 1.0 - l0.sqrt() - 1e-6;
    Some(trajectory.records.iter().all(|r| r.lambda_min_c >= floor))
}

/// Worst ratio `−ΔL / (lr · η · L)` over consecutive records; the discrete form of
/// `∂L/∂t ≤ −η L` holds with tolerance `tol` iff this is at least `1 − tol`.
pub fn min_contraction_ratio(trajectory: &Trajectory, eta: f64) -> f64 {
    trajectory
        .records
        .windows(2)
        .filter(|w| w[1].epoch == w[0].epoch + 1)
        .map(|w| (w[0].loss - w[1].loss) / (trajectory.lr * eta * w[0].loss))
        .fold(f64::INFINITY, f64::min)
}

/// NTK at initialization and its change until `params_t`.
#[derive(Debug, Clone)]
pub struct NtkReport {
    pub k0: NtkMatrix,
    pub drift: Drift,
    pub lambda_min_k0: f64,
    pub eta: Option<f64>,
}

/// Assemble `𝐊(0)` and `𝐊(t)` on `points` (the training set or a subsample of its
/// pairs); `n` is the training-set size used in η.
pub fn ntk_report(
    params0: &NetworkParams,
    params_t: &NetworkParams,
    points: &PairedDataset,
    loss0: f64,
    n: usize,
) -> Result<NtkReport> {
    let k0 = ntk::assemble(params0, points)?;
    let kt = ntk::assemble(params_t, points)?;
    let drift = ntk::drift(&k0, &kt)?;
    let lambda_min_k0 = ntk::min_eigenvalue(&k0)?;
    Ok(NtkReport { eta: eta_estimate(lambda_min_k0, loss0, n), k0, drift, lambda_min_k0 })
}

fn record(
    epoch: usize,
    params: &NetworkParams,
    params0: &NetworkParams,
    dataset: &PairedDataset,
    eval: &Evaluation,
    grad_norm_sq: f64,
    config: &TrainConfig,
) -> Result<TrajectoryRecord> {
    let u_k_u = if config.diagnostics.quadratic_form {
        let k = ntk::assemble(params, dataset)?;
        Some(k.quadratic_form(eval.rep_grad.vector())?)
    } else {
        None
    };
    Ok(TrajectoryRecord {
        epoch,
        loss: eval.loss,
        theta_drift: params.distance(params0),
        lambda_min_c: eval.cross.min_eigenvalue()?,
        grad_norm_sq,
        u_k_u,
        w_norm_sq: params.w.norm_squared(),
        rep_norm_sq: eval.reps.norm_squared(),
    })
}

pub fn train(params0: &NetworkParams, dataset: &PairedDataset, config: &TrainConfig) -> Result<RunResult> {
    config.validate()?;
    if params0.input_dim() != dataset.dim() {
        return Err(Error::dim("train", params0.input_dim(), dataset.dim()));
    }
    let mut params = params0.clone();
    let mut records = Vec::new();
    let mut initial_loss = f64::NAN;
    let mut converged;
    let mut epoch = 0;
    let final_eval = loop {
        let eval = bt_loss::evaluate(&params, dataset)?;
        if !eval.loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: eval.loss });
        }
        if epoch == 0 {
            initial_loss = eval.loss;
        }
        let grad = bt_loss::param_gradient_from(&params, dataset, &eval);
        converged = eval.loss < config.delta;
        let last = converged || epoch == config.max_epochs;
        if epoch % config.record_every == 0 || last {
            records.push(record(epoch, &params, params0, dataset, &eval, grad.norm_squared(), config)?);
        }
        if last {
            break eval;
        }
        params.w -= &grad.w * config.lr;
        params.v -= &grad.v * config.lr;
        epoch += 1;
    };

    let (mut ntk_drift, mut lambda_min_k0, mut eta) = (None, None, None);
    if config.diagnostics.ntk {
        let report = match &config.diagnostics.ntk_pairs {
            Some(pairs) => ntk_report(params0, &params, &dataset.select(pairs)?, initial_loss, dataset.len())?,
            None => ntk_report(params0, &params, dataset, initial_loss, dataset.len())?,
        };
        ntk_drift = Some(report.drift);
        lambda_min_k0 = Some(report.lambda_min_k0);
        eta = report.eta;
    }

    Ok(RunResult {
        converged,
        epochs: epoch,
        initial_loss,
        final_loss: final_eval.loss,
        final_params: params,
        final_reps: final_eval.reps,
        trajectory: Trajectory { lr: config.lr, records },
        ntk_drift,
        lambda_min_k0,
        eta,
    })
}
