//! Reference implementations shared by the integration tests. Nothing here calls
//! into the closed-form paths under test except to build inputs.
#![allow(dead_code)]

use barlow_ntk::data::synthetic_pairs;
use barlow_ntk::network::{self, init_gaussian};
use barlow_ntk::{Activation, NetworkParams, PairedDataset};
use nalgebra::{DMatrix, DVector};

pub fn instance(seed: u64, n: usize, m: usize, k: usize, d: usize, act: Activation) -> (PairedDataset, NetworkParams) {
    let ds = synthetic_pairs(n, d, 0.3, seed).unwrap();
    let p = init_gaussian(m, k, d, act, 1.0, 1.0, seed).unwrap();
    (ds, p)
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

pub fn rel_err_scalar(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Per-neuron loop for `f(x)`.
pub fn naive_forward(p: &NetworkParams, x: &[f64]) -> Vec<f64> {
    let (m, k) = (p.width(), p.embed_dim());
    let mut out = vec![0.0; k];
    for neuron in 0..m {
        let mut z = 0.0;
        for (r, xr) in x.iter().enumerate() {
            z += p.v[(neuron, r)] * xr;
        }
        let h = p.activation.apply(z);
        for (kk, o) in out.iter_mut().enumerate() {
            *o += p.w[(neuron, kk)] * h;
        }
    }
    out.iter().map(|o| o / (m as f64).sqrt()).collect()
}

/// Naive double loop for the symmetrized cross moment over column representations.
pub fn naive_cross_moment(fa: &DMatrix<f64>, fb: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, n) = fa.shape();
    let mut c = DMatrix::zeros(k, k);
    for i in 0..n {
        for a in 0..k {
            for b in 0..k {
                c[(a, b)] += fa[(a, i)] * fb[(b, i)] + fb[(a, i)] * fa[(b, i)];
            }
        }
    }
    c / (2 * n) as f64
}

pub fn naive_loss(fa: &DMatrix<f64>, fb: &DMatrix<f64>) -> f64 {
    let c = naive_cross_moment(fa, fb);
    let mut s = 0.0;
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            let t = c[(i, j)] - if i == j { 1.0 } else { 0.0 };
            s += t * t;
        }
    }
    s
}

/// Network loss evaluated from scratch at a flat θ.
pub fn loss_at_theta(theta: &DVector<f64>, like: &NetworkParams, ds: &PairedDataset) -> f64 {
    let p = NetworkParams::unflatten(theta.as_slice(), like.width(), like.embed_dim(), like.input_dim(), like.activation)
        .unwrap();
    let n = ds.len();
    let mut fa = DMatrix::zeros(p.embed_dim(), n);
    let mut fb = DMatrix::zeros(p.embed_dim(), n);
    for i in 0..n {
        let a: Vec<f64> = ds.anchor(i).iter().copied().collect();
        let b: Vec<f64> = ds.augment(i).iter().copied().collect();
        fa.set_column(i, &DVector::from_vec(naive_forward(&p, &a)));
        fb.set_column(i, &DVector::from_vec(naive_forward(&p, &b)));
    }
    naive_loss(&fa, &fb)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &DVector<f64>, h: f64, f: impl Fn(&DVector<f64>) -> f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let up = f(&xp);
        xp[i] = orig - h;
        let down = f(&xp);
        xp[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// `J` stacked over all 2N points in the frozen ordering (point-major, k fastest).
pub fn stacked_jacobian(p: &NetworkParams, ds: &PairedDataset) -> DMatrix<f64> {
    let k = p.embed_dim();
    let two_n = ds.points().ncols();
    let mut j = DMatrix::zeros(two_n * k, p.num_params());
    for i in 0..two_n {
        let ji = network::output_jacobian(p, ds.point(i)).unwrap();
        j.view_mut((i * k, 0), (k, p.num_params())).copy_from(&ji);
    }
    j
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix; eigenvalues ascending.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (a[(i, j)] + a[(j, i)])).collect()).collect();
    let total: f64 = m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum::<f64>().sqrt();
        if off <= 1e-15 * total.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p][q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let (mrp, mrq) = (m[r][p], m[r][q]);
                    m[r][p] = c * mrp - s * mrq;
                    m[r][q] = s * mrp + c * mrq;
                }
                for r in 0..n {
                    let (mpr, mqr) = (m[p][r], m[q][r]);
                    m[p][r] = c * mpr - s * mqr;
                    m[q][r] = s * mpr + c * mqr;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Explicit feature map of the degree-2 polynomial kernel `(xᵀy + 1)²`.
pub fn poly2_features(x: &[f64]) -> Vec<f64> {
    let s2 = 2f64.sqrt();
    let mut f = vec![1.0];
    f.extend(x.iter().map(|v| s2 * v));
    for i in 0..x.len() {
        for j in i..x.len() {
            f.push(if i == j { x[i] * x[i] } else { s2 * x[i] * x[j] });
        }
    }
    f
}

pub fn poly2_kernel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (d + 1.0).powi(2)
}

pub fn linear_kernel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Γ_i = ½(ψψ⁺ᵀ + ψ⁺ψᵀ)` as an explicit matrix.
pub fn gamma_operator(psi: &[f64], psi_plus: &[f64]) -> DMatrix<f64> {
    let a = DVector::from_column_slice(psi);
    let b = DVector::from_column_slice(psi_plus);
    (&a * b.transpose() + &b * a.transpose()) * 0.5
}

pub fn columns(ds: &PairedDataset) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let a = (0..ds.len()).map(|i| ds.anchor(i).iter().copied().collect()).collect();
    let b = (0..ds.len()).map(|i| ds.augment(i).iter().copied().collect()).collect();
    (a, b)
}
