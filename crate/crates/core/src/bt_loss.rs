//! The cross-moment loss `‖C − I‖²_F` and its gradients.
//!
//! With representations `F` (K × 2N, anchors first) the loss only sees
//! `C = (1/2N) Σ_n f(x_n)f(x_n⁺)ᵀ + f(x_n⁺)f(x_n)ᵀ`. Its gradient with respect to
//! a representation is `∂L/∂f(x_n) = (2/N)(C − I) f(x_n⁺)` (and symmetrically for
//! the augment), and the parameter gradient is the chain rule through the network
//! applied to those vectors.

use nalgebra::{DMatrix, DVector};

use crate::data::PairedDataset;
use crate::network::{self, NetworkParams};
use crate::{Error, Result};

/// Symmetric `K × K` cross-moment matrix of a set of representations.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossMoment(DMatrix<f64>);

impl CrossMoment {
    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        if !c.is_square() {
            return Err(Error::dim("CrossMoment", "square matrix", format!("{}x{}", c.nrows(), c.ncols())));
        }
        let asym = (&c - c.transpose()).amax();
        if asym > 1e-12 * c.amax().max(1.0) {
            return Err(Error::Invariant(format!("cross-moment matrix asymmetric by {asym:e}")));
        }
        Ok(Self(c))
    }

    pub fn identity(k: usize) -> Self {
        Self(DMatrix::identity(k, k))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// `C − I`.
    pub fn residual(&self) -> DMatrix<f64> {
        &self.0 - DMatrix::identity(self.dim(), self.dim())
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        crate::linalg::min_sym_eigenvalue(&self.0)
    }
}

/// `∂L/∂f` for every point, flattened point-major (anchors first) with `k` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct RepGradient {
    u: DVector<f64>,
    k: usize,
}

impl RepGradient {
    pub fn vector(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.u
    }

    /// The same values as a `K × 2N` matrix, one column per point.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.k, self.u.len() / self.k, self.u.as_slice())
    }
}

fn check_pair_shapes(context: &'static str, anchor: &DMatrix<f64>, augment: &DMatrix<f64>) -> Result<()> {
    if anchor.shape() != augment.shape() || anchor.ncols() == 0 {
        return Err(Error::dim(context, format!("{:?}", anchor.shape()), format!("{:?}", augment.shape())));
    }
    Ok(())
}

/// `C` from anchor and augment representations, each `K × N` (one column per pair).
pub fn cross_moment(reps_anchor: &DMatrix<f64>, reps_augment: &DMatrix<f64>) -> Result<CrossMoment> {
    check_pair_shapes("cross_moment", reps_anchor, reps_augment)?;
    let n = reps_anchor.ncols() as f64;
    let ab = reps_anchor * reps_augment.transpose();
    let c = (&ab + ab.transpose()) / (2.0 * n);
    Ok(CrossMoment(c))
}

/// Splits a `K × 2N` representation matrix into its anchor and augment halves.
pub fn split_reps(reps: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if reps.ncols() == 0 || reps.ncols() % 2 != 0 {
        return Err(Error::dim("split_reps", "K x 2N", format!("{}x{}", reps.nrows(), reps.ncols())));
    }
    let n = reps.ncols() / 2;
    Ok((reps.columns(0, n).into_owned(), reps.columns(n, n).into_owned()))
}

pub fn cross_moment_of(reps: &DMatrix<f64>) -> Result<CrossMoment> {
    let (a, b) = split_reps(reps)?;
    cross_moment(&a, &b)
}

/// `‖C − I‖²_F`.
pub fn loss(c: &CrossMoment) -> f64 {
    c.residual().norm_squared()
}

pub fn rep_gradient(c: &CrossMoment, reps_anchor: &DMatrix<f64>, reps_augment: &DMatrix<f64>) -> Result<RepGradient> {
    check_pair_shapes("rep_gradient", reps_anchor, reps_augment)?;
    let k = c.dim();
    if reps_anchor.nrows() != k {
        return Err(Error::dim("rep_gradient", k, reps_anchor.nrows()));
    }
    let n = reps_anchor.ncols();
    let scaled = c.residual() * (2.0 / n as f64);
    let mut u = DMatrix::zeros(k, 2 * n);
    u.columns_mut(0, n).copy_from(&(&scaled * reps_augment));
    u.columns_mut(n, n).copy_from(&(&scaled * reps_anchor));
    Ok(RepGradient { u: DVector::from_column_slice(u.as_slice()), k })
}

pub fn rep_gradient_of(reps: &DMatrix<f64>) -> Result<(CrossMoment, RepGradient)> {
    let (a, b) = split_reps(reps)?;
    let c = cross_moment(&a, &b)?;
    let u = rep_gradient(&c, &a, &b)?;
    Ok((c, u))
}

/// `8 · trace((I − C) C)`: the gradient-flow rate of change of `Σ_m ‖w_m‖²`.
pub fn weight_norm_rate(c: &CrossMoment) -> f64 {
    let m = c.matrix();
    let i_minus_c = DMatrix::identity(c.dim(), c.dim()) - m;
    8.0 * (i_minus_c * m).trace()
}

/// Everything one forward pass over the training set yields.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// `V Z`, M × 2N.
    pub pre: DMatrix<f64>,
    /// `φ(V Z)`, M × 2N.
    pub hidden: DMatrix<f64>,
    /// `F`, K × 2N.
    pub reps: DMatrix<f64>,
    pub cross: CrossMoment,
    pub loss: f64,
    pub rep_grad: RepGradient,
}

pub fn evaluate(params: &NetworkParams, dataset: &PairedDataset) -> Result<Evaluation> {
    let pre = network::preactivations(params, dataset.points())?;
    let act = params.activation;
    let hidden = pre.map(|z| act.apply(z));
    let reps = params.w.tr_mul(&hidden) / (params.width() as f64).sqrt();
    let (cross, rep_grad) = rep_gradient_of(&reps)?;
    let loss = loss(&cross);
    Ok(Evaluation { pre, hidden, reps, cross, loss, rep_grad })
}

/// `∇_θ L` split into its `W` (M×K) and `V` (M×d) blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl ParamGradient {
    pub fn norm_squared(&self) -> f64 {
        self.w.norm_squared() + self.v.norm_squared()
    }

    /// Flattened in the same order as [`NetworkParams::flatten`].
    pub fn flatten(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.w.len() + self.v.len());
        for r in self.w.row_iter() {
            out.extend(r.iter());
        }
        for r in self.v.row_iter() {
            out.extend(r.iter());
        }
        DVector::from_vec(out)
    }
}

/// Closed-form `Jᵀu` from a finished [`Evaluation`], without building `J`.
///
/// `∇_W = φ(VZ) Uᵀ / √M` and `∇_V = ((W U) ∘ φ'(VZ)) Zᵀ / √M`, where `U` is the
/// `K × 2N` representation gradient.
pub fn param_gradient_from(params: &NetworkParams, dataset: &PairedDataset, eval: &Evaluation) -> ParamGradient {
    let scale = 1.0 / (params.width() as f64).sqrt();
    let u = eval.rep_grad.as_matrix();
    let gw = &eval.hidden * u.transpose() * scale;
    let act = params.activation;
    let mut back = &params.w * &u;
    back.zip_apply(&eval.pre, |b, z| *b *= act.derivative(z) * scale);
    let gv = back * dataset.points().transpose();
    ParamGradient { w: gw, v: gv }
}

pub fn param_gradient(params: &NetworkParams, dataset: &PairedDataset) -> Result<DVector<f64>> {
    let eval = evaluate(params, dataset)?;
    Ok(param_gradient_from(params, dataset, &eval).flatten())
}
