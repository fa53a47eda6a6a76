//! The two-layer network `f(x) = (1/√M) Σ_m w_m φ(v_mᵀx)`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::seeding::{self, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    /// ReLU with the weak derivative `φ'(0) = 0`.
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `sup |φ|`; unbounded for ReLU.
    pub fn sup_value(self) -> f64 {
        match self {
            Activation::Tanh => 1.0,
            Activation::Relu => f64::INFINITY,
        }
    }

    /// `sup |φ'|`.
    pub fn sup_derivative(self) -> f64 {
        1.0
    }

    pub fn code(self) -> u64 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?} (expected tanh or relu)"))),
        }
    }
}

/// Second-layer weights `W` (M×K, row `m` is `w_m`) and first-layer weights `V`
/// (M×d, row `m` is `v_m`).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub activation: Activation,
}

impl NetworkParams {
    pub fn new(w: DMatrix<f64>, v: DMatrix<f64>, activation: Activation) -> Result<Self> {
        if w.nrows() != v.nrows() || w.nrows() == 0 || w.ncols() == 0 || v.ncols() == 0 {
            return Err(Error::dim(
                "NetworkParams::new",
                "W: MxK and V: Mxd with M, K, d >= 1",
                format!("W: {}x{}, V: {}x{}", w.nrows(), w.ncols(), v.nrows(), v.ncols()),
            ));
        }
        if w.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Invariant("network parameters must be finite".into()));
        }
        Ok(Self { w, v, activation })
    }

    pub fn width(&self) -> usize {
        self.w.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.v.ncols()
    }

    /// `M (d + K)`.
    pub fn num_params(&self) -> usize {
        self.width() * (self.input_dim() + self.embed_dim())
    }

    /// θ: all `W` entries row-major, then all `V` entries row-major.
    pub fn flatten(&self) -> DVector<f64> {
        let (m, k, d) = (self.width(), self.embed_dim(), self.input_dim());
        let mut theta = Vec::with_capacity(self.num_params());
        for i in 0..m {
            theta.extend((0..k).map(|j| self.w[(i, j)]));
        }
        for i in 0..m {
            theta.extend((0..d).map(|j| self.v[(i, j)]));
        }
        DVector::from_vec(theta)
    }

    pub fn unflatten(theta: &[f64], m: usize, k: usize, d: usize, activation: Activation) -> Result<Self> {
        if theta.len() != m * (d + k) {
            return Err(Error::dim("NetworkParams::unflatten", m * (d + k), theta.len()));
        }
        let (w_part, v_part) = theta.split_at(m * k);
        Self::new(DMatrix::from_row_slice(m, k, w_part), DMatrix::from_row_slice(m, d, v_part), activation)
    }

    /// `‖θ − other‖₂`.
    pub fn distance(&self, other: &NetworkParams) -> f64 {
        ((&self.w - &other.w).norm_squared() + (&self.v - &other.v).norm_squared()).sqrt()
    }

    /// `‖θ‖²`.
    pub fn norm_squared(&self) -> f64 {
        self.w.norm_squared() + self.v.norm_squared()
    }

    fn check_input(&self, rows: usize) -> Result<()> {
        if rows != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), rows));
        }
        Ok(())
    }

    /// Serializes as four little-endian `u64` (M, K, d, activation code) followed by
    /// θ as little-endian `f64` in flattening order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let theta = self.flatten();
        let mut out = Vec::with_capacity(32 + 8 * theta.len());
        for word in [self.width() as u64, self.embed_dim() as u64, self.input_dim() as u64, self.activation.code()] {
            out.extend_from_slice(&word.to_le_bytes());
        }
        for x in theta.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<u64> {
            bytes
                .get(8 * i..8 * i + 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8-byte slice")))
                .ok_or_else(|| Error::Format("checkpoint header truncated".into()))
        };
        let (m, k, d) = (word(0)? as usize, word(1)? as usize, word(2)? as usize);
        let activation = Activation::from_code(word(3)?)
            .ok_or_else(|| Error::Format(format!("unknown activation code {}", word(3).unwrap_or(u64::MAX))))?;
        let body = &bytes[32..];
        let len = m * (d + k);
        if body.len() != 8 * len {
            return Err(Error::Format(format!("checkpoint body has {} bytes, expected {}", body.len(), 8 * len)));
        }
        let theta: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        Self::unflatten(&theta, m, k, d, activation)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Independent Gaussian initialization: `W ~ N(0, variance)`,
/// `V ~ N(0, variance · first_layer_scale²)`.
pub fn init_gaussian(
    m: usize,
    k: usize,
    d: usize,
    activation: Activation,
    variance: f64,
    first_layer_scale: f64,
    seed: u64,
) -> Result<NetworkParams> {
    if m == 0 || k == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!("M, K, d must be >= 1 (got {m}, {k}, {d})")));
    }
    if !(variance >= 0.0) || !(first_layer_scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "variance must be >= 0 and first_layer_scale > 0 (got {variance}, {first_layer_scale})"
        )));
    }
    let mut rng = seeding::rng(seed, Stream::Init);
    let sw = variance.sqrt();
    let sv = sw * first_layer_scale;
    // Row-major draw order so θ's layout matches the RNG sequence.
    let w = DMatrix::from_row_iterator(m, k, (0..m * k).map(|_| sw * rng.sample::<f64, _>(StandardNormal)));
    let v = DMatrix::from_row_iterator(m, d, (0..m * d).map(|_| sv * rng.sample::<f64, _>(StandardNormal)));
    NetworkParams::new(w, v, activation)
}

/// Pre-activations `V Z` for a `d × n` batch of column inputs.
pub fn preactivations(params: &NetworkParams, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    params.check_input(inputs.nrows())?;
    Ok(&params.v * inputs)
}

/// `f(x)` for a single input.
pub fn forward(params: &NetworkParams, x: DVectorView<'_, f64>) -> Result<DVector<f64>> {
    params.check_input(x.nrows())?;
    let act = params.activation;
    let hidden = (&params.v * x).map(|z| act.apply(z));
    Ok(params.w.tr_mul(&hidden) / (params.width() as f64).sqrt())
}

/// Representations of a `d × n` batch as a `K × n` matrix.
pub fn forward_batch(params: &NetworkParams, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let act = params.activation;
    let hidden = preactivations(params, inputs)?.map(|z| act.apply(z));
    Ok(params.w.tr_mul(&hidden) / (params.width() as f64).sqrt())
}

/// `∂f_k(x)/∂θ` as the rows of a `K × M(d+K)` matrix.
pub fn output_jacobian(params: &NetworkParams, x: DVectorView<'_, f64>) -> Result<DMatrix<f64>> {
    params.check_input(x.nrows())?;
    let (m, k, d) = (params.width(), params.embed_dim(), params.input_dim());
    let scale = 1.0 / (m as f64).sqrt();
    let act = params.activation;
    let pre = &params.v * x;
    let mut jac = DMatrix::zeros(k, params.num_params());
    for neuron in 0..m {
        let h = act.apply(pre[neuron]) * scale;
        let dh = act.derivative(pre[neuron]) * scale;
        for out in 0..k {
            jac[(out, neuron * k + out)] = h;
            let coef = params.w[(neuron, out)] * dh;
            if coef != 0.0 {
                let base = m * k + neuron * d;
                for r in 0..d {
                    jac[(out, base + r)] = coef * x[r];
                }
            }
        }
    }
    Ok(jac)
}

/// Per-output comparison of `‖∇_θ f_k(x)‖²` with
/// `c_φ² + c_φ'² R² / M + c_φ'² ‖θ₀‖² / M`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBoundReport {
    pub actual: Vec<f64>,
    pub bound: f64,
    pub within_bound: bool,
}

pub fn gradient_norm_bound_check(
    params: &NetworkParams,
    params0: &NetworkParams,
    x: DVectorView<'_, f64>,
    radius: f64,
) -> Result<GradientBoundReport> {
    let jac = output_jacobian(params, x)?;
    let m = params.width() as f64;
    let c_phi = params.activation.sup_value();
    let c_dphi = params.activation.sup_derivative();
    let bound = c_phi * c_phi + c_dphi * c_dphi * radius * radius / m + c_dphi * c_dphi * params0.norm_squared() / m;
    let actual: Vec<f64> = jac.row_iter().map(|r| r.norm_squared()).collect();
    let within_bound = actual.iter().all(|&a| a <= bound + 1e-9);
    Ok(GradientBoundReport { actual, bound, within_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_pairs;

    #[test]
    fn zero_variance_gives_zero_params() {
        let p = init_gaussian(4, 2, 3, Activation::Tanh, 0.0, 1.0, 1).unwrap();
        assert!(p.flatten().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_gaussian(6, 2, 3, Activation::Relu, 1.0, 0.5, 17).unwrap();
        let b = init_gaussian(6, 2, 3, Activation::Relu, 1.0, 0.5, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_sample_mean_concentrates() {
        let (m, k, d) = (10_000, 2, 3);
        let p = init_gaussian(m, k, d, Activation::Tanh, 1.0, 1.0, 5).unwrap();
        let theta = p.flatten();
        let mean = theta.mean();
        assert!(mean.abs() <= 3.0 / ((m * (d + k)) as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn first_layer_scale_multiplies_v() {
        let a = init_gaussian(5, 2, 3, Activation::Relu, 1.0, 1.0, 3).unwrap();
        let b = init_gaussian(5, 2, 3, Activation::Relu, 1.0, 2.0, 3).unwrap();
        assert_eq!(a.w, b.w);
        assert!((&a.v * 2.0 - &b.v).amax() < 1e-15);
    }

    #[test]
    fn forward_hand_example() {
        let p = NetworkParams::new(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            Activation::Relu,
        )
        .unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(forward(&p, x.as_view()).unwrap()[0], 2.0);
    }

    #[test]
    fn zero_second_layer_gives_zero_output() {
        let mut p = init_gaussian(8, 3, 4, Activation::Tanh, 1.0, 1.0, 2).unwrap();
        p.w.fill(0.0);
        let ds = synthetic_pairs(3, 4, 0.1, 0).unwrap();
        assert!(forward_batch(&p, ds.points()).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_matches_per_neuron_loop() {
        let p = init_gaussian(13, 3, 5, Activation::Tanh, 1.0, 1.0, 8).unwrap();
        let ds = synthetic_pairs(4, 5, 0.2, 8).unwrap();
        let batch = forward_batch(&p, ds.points()).unwrap();
        for i in 0..8 {
            let x = ds.point(i);
            for k in 0..3 {
                let mut acc = 0.0;
                for m in 0..13 {
                    let mut z = 0.0;
                    for r in 0..5 {
                        z += p.v[(m, r)] * x[r];
                    }
                    acc += p.w[(m, k)] * z.tanh();
                }
                acc /= 13f64.sqrt();
                assert!((batch[(k, i)] - acc).abs() <= 1e-12);
                assert!((forward(&p, x).unwrap()[k] - acc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn wrong_input_dimension_is_rejected() {
        let p = init_gaussian(3, 1, 4, Activation::Tanh, 1.0, 1.0, 0).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(forward(&p, x.as_view()), Err(Error::Dimension { .. })));
    }

    #[test]
    fn jacobian_w_block_vanishes_for_tanh_at_zero_v() {
        let mut p = init_gaussian(4, 2, 3, Activation::Tanh, 1.0, 1.0, 4).unwrap();
        p.v.fill(0.0);
        let x = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let jac = output_jacobian(&p, x.as_view()).unwrap();
        assert!(jac.columns(0, 4 * 2).iter().all(|&e| e == 0.0));
    }

    #[test]
    fn jacobian_w_entries_are_scaled_activations() {
        let p = init_gaussian(5, 2, 3, Activation::Tanh, 1.0, 1.0, 4).unwrap();
        let x = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let jac = output_jacobian(&p, x.as_view()).unwrap();
        for m in 0..5 {
            let h = (p.v.row(m) * &x)[0].tanh() / 5f64.sqrt();
            assert!((jac[(1, m * 2 + 1)] - h).abs() < 1e-15);
            assert_eq!(jac[(0, m * 2 + 1)], 0.0);
        }
    }

    #[test]
    fn relu_weak_derivative_zeroes_v_row_at_kink() {
        let w = DMatrix::from_row_slice(2, 1, &[1.5, -0.7]);
        let v = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]);
        let p = NetworkParams::new(w, v, Activation::Relu).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let jac = output_jacobian(&p, x.as_view()).unwrap();
        // neuron 0 sits exactly at v·x = 0
        assert_eq!(jac[(0, 2)], 0.0);
        assert_eq!(jac[(0, 3)], 0.0);
        assert!(jac[(0, 4)] != 0.0);
    }

    #[test]
    fn gradient_bound_trivial_case() {
        let mut p = init_gaussian(4, 2, 3, Activation::Tanh, 1.0, 1.0, 1).unwrap();
        p.w.fill(0.0);
        p.v.fill(0.0);
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let rep = gradient_norm_bound_check(&p, &p, x.as_view(), 0.0).unwrap();
        assert!(rep.actual.iter().all(|&a| a == 0.0));
        assert!(rep.within_bound);
        assert_eq!(rep.bound, 1.0);
    }

    #[test]
    fn flatten_order_is_w_then_v_row_major() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let v = DMatrix::from_row_slice(2, 1, &[5.0, 6.0]);
        let p = NetworkParams::new(w, v, Activation::Tanh).unwrap();
        assert_eq!(p.flatten().as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn checkpoint_rejects_truncation() {
        let p = init_gaussian(3, 2, 2, Activation::Relu, 1.0, 1.0, 0).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(bytes.len(), 32 + 8 * 12);
        assert_eq!(NetworkParams::from_bytes(&bytes).unwrap(), p);
        assert!(NetworkParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
