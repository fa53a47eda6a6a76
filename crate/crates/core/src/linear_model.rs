//! The linearized (frozen-NTK) model `g(x) = f(x; θ₀) + ⟨θ − θ₀, ∇_θ f(x; θ₀)⟩`,
//! trained by gradient descent directly in function space.
//!
//! Because `Δθ = −lr·Jᵀu`, the training-set representations move by `−lr·𝐊₀u`,
//! and `θ − θ₀ = Jᵀα` with `α = −lr Σ_t u_t`. Off the training set,
//! `g(x) = f(x; θ₀) + K₀(x, 𝒳)α`.

use nalgebra::{DMatrix, DVector};

use crate::bt_loss;
use crate::data::PairedDataset;
use crate::network::{self, NetworkParams};
use crate::ntk::{self, NtkMatrix};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

/// Frozen kernel, initial representations, and the current iterate.
#[derive(Debug, Clone)]
pub struct FrozenKernelState {
    k0: NtkMatrix,
    f0: DVector<f64>,
    reps: DVector<f64>,
    dual: DVector<f64>,
}

impl FrozenKernelState {
    /// `f0` is the K × 2N matrix of initial representations.
    pub fn new(k0: NtkMatrix, f0: &DMatrix<f64>) -> Result<Self> {
        let k = k0.embed_dim();
        if f0.nrows() != k || f0.ncols() != k0.n_points() {
            return Err(Error::dim(
                "frozen kernel state",
                format!("{k} x {}", k0.n_points()),
                format!("{} x {}", f0.nrows(), f0.ncols()),
            ));
        }
        if f0.ncols() % 2 != 0 {
            return Err(Error::InvalidArgument("need an even number of points (pairs)".into()));
        }
        let f0 = DVector::from_column_slice(f0.as_slice());
        Ok(Self { reps: f0.clone(), dual: DVector::zeros(f0.len()), k0, f0 })
    }

    pub fn kernel(&self) -> &NtkMatrix {
        &self.k0
    }

    pub fn initial_reps(&self) -> DMatrix<f64> {
        self.as_matrix(&self.f0)
    }

    pub fn reps(&self) -> DMatrix<f64> {
        self.as_matrix(&self.reps)
    }

    /// `α` such that `θ − θ₀ = Jᵀα`.
    pub fn dual(&self) -> &DVector<f64> {
        &self.dual
    }

    fn as_matrix(&self, v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.k0.embed_dim(), self.k0.n_points(), v.as_slice())
    }

    /// Loss and representation gradient at the current iterate.
    pub fn loss_and_gradient(&self) -> Result<(f64, DVector<f64>)> {
        let (c, u) = bt_loss::rep_gradient_of(&self.reps())?;
        Ok((bt_loss::loss(&c), u.into_vector()))
    }

    /// One Euler step `reps ← reps − lr·𝐊₀u`; returns the loss before the step.
    pub fn step(&mut self, lr: f64) -> Result<f64> {
        let (loss, u) = self.loss_and_gradient()?;
        self.reps -= self.k0.mul_vec(&u) * lr;
        self.dual -= u * lr;
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct LinearRun {
    pub converged: bool,
    pub epochs: usize,
    pub final_loss: f64,
    /// Loss at every epoch, including the final one.
    pub losses: Vec<f64>,
    pub state: FrozenKernelState,
}

impl LinearRun {
    pub fn reps(&self) -> DMatrix<f64> {
        self.state.reps()
    }
}

/// Gradient descent on the linearized model until loss < δ or `max_epochs`.
pub fn train_function_space(mut state: FrozenKernelState, config: &TrainConfig) -> Result<LinearRun> {
    config.validate()?;
    let mut losses = Vec::new();
    let mut epoch = 0;
    loop {
        let (loss, u) = state.loss_and_gradient()?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        losses.push(loss);
        let converged = loss < config.delta;
        if converged || epoch == config.max_epochs {
            return Ok(LinearRun { converged, epochs: epoch, final_loss: loss, losses, state });
        }
        state.reps -= state.k0.mul_vec(&u) * config.lr;
        state.dual -= u * config.lr;
        epoch += 1;
    }
}

/// Frozen state for `params0` on `dataset`: `𝐊(0)` and `f(·; θ₀)` on all 2N points.
pub fn frozen_state(params0: &NetworkParams, dataset: &PairedDataset) -> Result<FrozenKernelState> {
    let k0 = ntk::assemble(params0, dataset)?;
    let f0 = network::forward_batch(params0, dataset.points())?;
    FrozenKernelState::new(k0, &f0)
}

/// `(1/2N) Σ_points ‖a(point) − b(point)‖²` for K × 2N representation matrices.
pub fn rep_difference(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim("rep_difference", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    if a.ncols() == 0 {
        return Err(Error::InvalidArgument("rep_difference of empty representations".into()));
    }
    Ok((a - b).norm_squared() / a.ncols() as f64)
}

/// `max |a − b|` over all entries.
pub fn max_abs_deviation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim("max_abs_deviation", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok((a - b).amax())
}

/// Kernel between training points and test points plus the offset `f(x; θ₀)` at the test points.
#[derive(Debug, Clone)]
pub struct CrossKernel {
    /// `(2NK) × (T·K)`, block `(i, j) = K_θ₀(train_i, test_j)`.
    pub matrix: DMatrix<f64>,
    /// K × T.
    pub f0_test: DMatrix<f64>,
}

pub fn cross_kernel(params0: &NetworkParams, dataset: &PairedDataset, test_points: &DMatrix<f64>) -> Result<CrossKernel> {
    let matrix = ntk::kernel_between(params0, dataset.points(), test_points)?;
    let f0_test = network::forward_batch(params0, test_points)?;
    Ok(CrossKernel { matrix, f0_test })
}

/// `g` at the test points (K × T) given dual coefficients from function-space training.
pub fn predict(cross: &CrossKernel, dual: &DVector<f64>) -> Result<DMatrix<f64>> {
    if cross.matrix.nrows() != dual.len() {
        return Err(Error::dim("predict", cross.matrix.nrows(), dual.len()));
    }
    let shift = cross.matrix.transpose() * dual;
    let (k, t) = cross.f0_test.shape();
    Ok(&cross.f0_test + DMatrix::from_column_slice(k, t, shift.as_slice()))
}
