//! Population-loss bound quantities for a trained network.
//!
//! Each pair `(x_i, x_i⁺)` defines a symmetric rank-two operator
//! `Γ_i = ½(ψ(x_i)⊗ψ(x_i⁺) + ψ(x_i⁺)⊗ψ(x_i))` on the feature space of a scalar
//! kernel; everything here is computed from Gram entries via the kernel trick.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::data::PairedDataset;
use crate::linalg;
use crate::network::{Activation, NetworkParams};
use crate::seeding::{self, Stream};
use crate::{Error, Result};

/// The four N × N blocks of a scalar kernel over anchors (`x`) and augments (`p`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarKernelGram {
    pub xx: DMatrix<f64>,
    pub xp: DMatrix<f64>,
    pub px: DMatrix<f64>,
    pub pp: DMatrix<f64>,
}

impl ScalarKernelGram {
    pub fn from_blocks(xx: DMatrix<f64>, xp: DMatrix<f64>, px: DMatrix<f64>, pp: DMatrix<f64>) -> Result<Self> {
        let n = xx.nrows();
        for (name, b) in [("xx", &xx), ("xp", &xp), ("px", &px), ("pp", &pp)] {
            if b.shape() != (n, n) {
                return Err(Error::dim("scalar kernel gram", format!("{name}: {n} x {n}"), format!("{:?}", b.shape())));
            }
        }
        for (name, b) in [("xx", &xx), ("pp", &pp)] {
            if linalg::relative_asymmetry(b) > 1e-8 {
                return Err(Error::Invariant(format!("gram block {name} is not symmetric")));
            }
        }
        Ok(Self { xx, xp, px, pp })
    }

    /// Split a `2N × 2N` Gram over `[anchors; augments]`.
    pub fn from_full(full: &DMatrix<f64>) -> Result<Self> {
        let two_n = full.nrows();
        if full.ncols() != two_n || two_n % 2 != 0 {
            return Err(Error::dim("scalar kernel gram", "2N x 2N", format!("{:?}", full.shape())));
        }
        let n = two_n / 2;
        let blk = |r: usize, c: usize| full.view((r, c), (n, n)).into_owned();
        Self::from_blocks(blk(0, 0), blk(0, n), blk(n, 0), blk(n, n))
    }

    /// Gram of an arbitrary scalar kernel over the dataset's points.
    pub fn from_kernel(dataset: &PairedDataset, kernel: impl Fn(&[f64], &[f64]) -> f64) -> Result<Self> {
        let pts = dataset.points();
        let cols: Vec<Vec<f64>> = pts.column_iter().map(|c| c.iter().copied().collect()).collect();
        let full = DMatrix::from_fn(cols.len(), cols.len(), |i, j| kernel(&cols[i], &cols[j]));
        Self::from_full(&full)
    }

    pub fn len(&self) -> usize {
        self.xx.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `max √K(z, z)` over anchors and augments.
    pub fn feature_radius(&self) -> f64 {
        self.xx
            .diagonal()
            .iter()
            .chain(self.pp.diagonal().iter())
            .fold(0.0_f64, |acc, &v| acc.max(v.max(0.0).sqrt()))
    }
}

/// Gram of the trace kernel `tr K_θ(x, x′)`, i.e. the scalar kernel whose features are all `K` output gradients.
pub fn trace_kernel_gram(params: &NetworkParams, dataset: &PairedDataset) -> Result<ScalarKernelGram> {
    let pts = dataset.points();
    if pts.nrows() != params.input_dim() {
        return Err(Error::dim("trace kernel", params.input_dim(), pts.nrows()));
    }
    let (m, k) = (params.width() as f64, params.embed_dim() as f64);
    let act = params.activation;
    let pre = &params.v * pts;
    let hidden = pre.map(|z| act.apply(z));
    let mut deriv = pre.map(|z| act.derivative(z));
    // tr K(a,b) = (K/M) Σ_m φφ + (1/M) Σ_m ‖w_m‖² φ'φ' aᵀb.
    let w_sq: Vec<f64> = params.w.row_iter().map(|r| r.norm_squared()).collect();
    for (neuron, mut row) in deriv.row_iter_mut().enumerate() {
        row *= w_sq[neuron].sqrt();
    }
    let scalar = hidden.transpose() * &hidden * (k / m);
    let mut second = deriv.transpose() * &deriv;
    second.component_mul_assign(&(pts.transpose() * pts));
    let full = linalg::symmetrize(&(scalar + second / m));
    ScalarKernelGram::from_full(&full)
}

/// `‖Γ_i − Γ_j‖²_HS` from Gram entries; `i ≠ j`.
pub fn gamma_hs_distance(gram: &ScalarKernelGram, i: usize, j: usize) -> Result<f64> {
    let n = gram.len();
    if i >= n || j >= n {
        return Err(Error::InvalidArgument(format!("pair index ({i}, {j}) out of range for N = {n}")));
    }
    if i == j {
        return Err(Error::InvalidArgument(format!("gamma distance needs distinct indices, got {i} twice")));
    }
    let self_term = |a: usize| 0.5 * (gram.xx[(a, a)] * gram.pp[(a, a)] + gram.xp[(a, a)] * gram.xp[(a, a)]);
    Ok(self_term(i) + self_term(j)
        - gram.xx[(i, j)] * gram.pp[(i, j)]
        - gram.xp[(i, j)] * gram.px[(i, j)])
}

/// `V̂ = (1/(N′(N′−1))) Σ_{i<j<N′} ‖Γ_i − Γ_j‖²_HS`.
pub fn v_hat(gram: &ScalarKernelGram, n_prime: usize) -> Result<f64> {
    if n_prime < 2 || n_prime > gram.len() {
        return Err(Error::InvalidArgument(format!("N' must lie in [2, {}], got {n_prime}", gram.len())));
    }
    let mut sum = 0.0;
    for i in 0..n_prime {
        for j in i + 1..n_prime {
            sum += gamma_hs_distance(gram, i, j)?;
        }
    }
    Ok(sum / (n_prime * (n_prime - 1)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub n: usize,
    pub n_prime: usize,
    pub eps: f64,
    /// Training loss level reached.
    pub delta: f64,
    /// Parameter-norm budget.
    pub b: f64,
    /// Feature-space radius.
    pub s: f64,
    pub v_hat: f64,
    /// Network-to-kernel-model deviation.
    pub zeta: f64,
    pub k: usize,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("bound inputs: {what}")));
        if self.n_prime < 2 || self.n_prime > self.n {
            return bad("need 2 <= N' <= N");
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad("eps must lie in (0, 1)");
        }
        if !(self.b > 0.0 && self.s > 0.0) || !self.b.is_finite() || !self.s.is_finite() {
            return bad("B and S must be positive and finite");
        }
        if !(self.delta >= 0.0 && self.v_hat >= 0.0 && self.zeta >= 0.0) {
            return bad("delta, V_hat and zeta must be nonnegative");
        }
        if self.k == 0 {
            return bad("K must be >= 1");
        }
        Ok(())
    }

    fn variance_term(&self) -> f64 {
        let np = self.n_prime as f64;
        self.v_hat + (-(np - 1.0).powi(2) * self.eps * self.eps / (8.0 * self.s.powi(8) * np)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slack {
    /// Square-root-scale slack `ν(N, ε)` on the operator deviation.
    pub nu_sqrt_scale: f64,
    /// Loss-level slack `ν(N, ε, δ)`; the default in reports.
    pub nu_full: f64,
}

pub fn slack(inputs: &BoundInputs) -> Result<Slack> {
    inputs.validate()?;
    let n = inputs.n as f64;
    let b4 = inputs.b.powi(4);
    let s4 = inputs.s.powi(4);
    let e2 = inputs.eps * inputs.eps;
    let var = inputs.variance_term();
    let nu_full = 3.0 * inputs.delta + 3.0 * b4 / n * var + 3.0 * (-n * e2 / (b4 * s4)).exp();
    let nu_sqrt_scale = inputs.b.powi(2) / n.sqrt() * var.sqrt() + (-n * e2 / (2.0 * b4 * s4)).exp();
    Ok(Slack { nu_sqrt_scale, nu_full })
}

/// `2ν + 8K²ζ²(2BS + ζ)²` with `ν = nu_full`.
pub fn nn_population_bound(inputs: &BoundInputs) -> Result<f64> {
    let nu = slack(inputs)?.nu_full;
    let (k, z) = (inputs.k as f64, inputs.zeta);
    Ok(2.0 * nu + 8.0 * k * k * z * z * (2.0 * inputs.b * inputs.s + z).powi(2))
}

/// Outcome of first-layer scale calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub scale: f64,
    pub target: f64,
    /// Monte-Carlo `E[C_kk]` at unit first-layer scale.
    pub estimate_unit: f64,
    /// Monte-Carlo `E[C_kk]` at the returned scale (same probe draws).
    pub estimate_scaled: f64,
}

/// Default target `(2K − 1)/(2K)` for the diagonal of `E[C]`.
pub fn default_calibration_target(k: usize) -> f64 {
    (2 * k - 1) as f64 / (2 * k) as f64
}

/// Monte-Carlo estimate of `E[C_kk]` at initialization for relu:
/// `variance · (1/N) Σ_n E_v[φ(vᵀx_n) φ(vᵀx_n⁺)]` with `v ~ N(0, variance·scale²·I)`.
///
/// Each probe neuron's pre-activations on all 2N points are drawn jointly from
/// their exact Gaussian law `N(0, variance·scale²·G)`, `G` the data Gram, which
/// avoids sampling in the ambient dimension.
pub fn relu_diag_moment_estimate(
    dataset: &PairedDataset,
    variance: f64,
    scale: f64,
    m_probe: usize,
    seed: u64,
) -> Result<f64> {
    let factor = gram_factor(dataset)?;
    Ok(diag_moment_from_factor(&factor, dataset.len(), variance, scale, m_probe, seed))
}

fn gram_factor(dataset: &PairedDataset) -> Result<DMatrix<f64>> {
    // G = Q Λ Qᵀ ⇒ L = Q Λ^{1/2} with L Lᵀ = G, robust to rank deficiency.
    let eig = linalg::symmetrize(&dataset.gram()).symmetric_eigen();
    let mut l = eig.eigenvectors;
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    Ok(l)
}

fn diag_moment_from_factor(
    factor: &DMatrix<f64>,
    n: usize,
    variance: f64,
    scale: f64,
    m_probe: usize,
    seed: u64,
) -> f64 {
    const CHUNK: usize = 4096;
    let mut rng = seeding::rng(seed, Stream::Probe);
    let two_n = factor.nrows();
    let sd = variance.sqrt() * scale;
    let mut acc = 0.0;
    let mut done = 0;
    while done < m_probe {
        let width = CHUNK.min(m_probe - done);
        let xi = DMatrix::from_fn(two_n, width, |_, _| StandardNormal.sample(&mut rng));
        let pre = factor * xi;
        for col in pre.column_iter() {
            for i in 0..n {
                acc += Activation::Relu.apply(sd * col[i]) * Activation::Relu.apply(sd * col[n + i]);
            }
        }
        done += width;
    }
    variance * acc / (n * m_probe) as f64
}

/// Solve for the relu first-layer scale `s` with `E[C_kk](s) = target` using
/// `E[C_kk](s) = s²·E[C_kk](1)`.
pub fn calibrate_first_layer_scale(
    dataset: &PairedDataset,
    k: usize,
    target: Option<f64>,
    variance: f64,
    m_probe: usize,
    seed: u64,
) -> Result<Calibration> {
    if k == 0 || m_probe == 0 {
        return Err(Error::InvalidArgument("K and M_probe must be >= 1".into()));
    }
    let target = target.unwrap_or_else(|| default_calibration_target(k));
    if !(target > 0.0) || !(variance > 0.0) {
        return Err(Error::InvalidArgument(format!("target and variance must be > 0 (got {target}, {variance})")));
    }
    let factor = gram_factor(dataset)?;
    let estimate_unit = diag_moment_from_factor(&factor, dataset.len(), variance, 1.0, m_probe, seed);
    if !(estimate_unit > 0.0) {
        return Err(Error::Calibration(format!(
            "E[C_kk] estimate at unit scale is {estimate_unit}; no positive scale reaches the target"
        )));
    }
    let scale = (target / estimate_unit).sqrt();
    let estimate_scaled = diag_moment_from_factor(&factor, dataset.len(), variance, scale, m_probe, seed);
    Ok(Calibration { scale, target, estimate_unit, estimate_scaled })
}

/// Column of `√K(z,z)` values over all 2N points, anchors first.
pub fn feature_norms(gram: &ScalarKernelGram) -> DVector<f64> {
    let n = gram.len();
    DVector::from_fn(2 * n, |i, _| {
        let v = if i < n { gram.xx[(i, i)] } else { gram.pp[(i - n, i - n)] };
        v.max(0.0).sqrt()
    })
}
