//! Empirical neural tangent kernel of the two-layer network.
//!
//! For inputs `a, b` the matrix-valued kernel has the closed form
//!
//! ```text
//! K_kl(a, b) = (1/M) Σ_m 1{k=l} φ(v_mᵀa) φ(v_mᵀb)
//!            + (1/M) Σ_m w_mk w_ml φ'(v_mᵀa) φ'(v_mᵀb) aᵀb
//! ```
//!
//! which equals `J(a) J(b)ᵀ` for the output Jacobian `J`. Assembled matrices use
//! the same point-major, output-fastest ordering as [`crate::RepGradient`].

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::data::PairedDataset;
use crate::linalg;
use crate::network::NetworkParams;
use crate::{Error, Result};

/// Symmetric PSD kernel matrix over `n_points` inputs with `K × K` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct NtkMatrix {
    matrix: DMatrix<f64>,
    embed_dim: usize,
}

impl NtkMatrix {
    pub fn from_matrix(matrix: DMatrix<f64>, embed_dim: usize) -> Result<Self> {
        if !matrix.is_square() || embed_dim == 0 || matrix.nrows() % embed_dim != 0 {
            return Err(Error::dim(
                "NtkMatrix",
                format!("square matrix with side divisible by K={embed_dim}"),
                format!("{}x{}", matrix.nrows(), matrix.ncols()),
            ));
        }
        Ok(Self { matrix, embed_dim })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn n_points(&self) -> usize {
        self.matrix.nrows() / self.embed_dim
    }

    /// The `K × K` block between points `i` and `j`.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let k = self.embed_dim;
        self.matrix.view((i * k, j * k), (k, k)).into_owned()
    }

    pub fn quadratic_form(&self, u: &DVector<f64>) -> Result<f64> {
        if u.len() != self.matrix.nrows() {
            return Err(Error::dim("NtkMatrix::quadratic_form", self.matrix.nrows(), u.len()));
        }
        Ok(u.dot(&(&self.matrix * u)))
    }

    pub fn mul_vec(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.matrix * u
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Writes two little-endian `u64` (rows, cols) followed by the entries as
    /// little-endian `f64`, row-major.
    pub fn write_dense(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, dense_to_bytes(&self.matrix))?;
        Ok(())
    }
}

pub fn dense_to_bytes(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.len());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for r in m.row_iter() {
        for x in r.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn dense_from_bytes(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 16 {
        return Err(Error::Format("dense matrix header truncated".into()));
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != 8 * rows * cols {
        return Err(Error::Format(format!("dense matrix body has {} bytes, expected {}", body.len(), 8 * rows * cols)));
    }
    let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

/// The `K × K` kernel `K_θ(a, b)` by the closed form.
pub fn ntk_entry(params: &NetworkParams, a: DVectorView<'_, f64>, b: DVectorView<'_, f64>) -> Result<DMatrix<f64>> {
    let d = params.input_dim();
    if a.len() != d || b.len() != d {
        return Err(Error::dim("ntk_entry", d, format!("{} / {}", a.len(), b.len())));
    }
    let (m, k) = (params.width(), params.embed_dim());
    let act = params.activation;
    let pa = &params.v * a;
    let pb = &params.v * b;
    let ab = a.dot(&b);
    let mut scalar = 0.0;
    let mut out = DMatrix::zeros(k, k);
    for neuron in 0..m {
        scalar += act.apply(pa[neuron]) * act.apply(pb[neuron]);
        let dd = act.derivative(pa[neuron]) * act.derivative(pb[neuron]);
        if dd == 0.0 {
            continue;
        }
        let w = params.w.row(neuron);
        for i in 0..k {
            for j in 0..k {
                out[(i, j)] += w[i] * w[j] * dd;
            }
        }
    }
    out *= ab;
    for i in 0..k {
        out[(i, i)] += scalar;
    }
    Ok(out / m as f64)
}

/// Kernel matrix between two batches of column inputs: `(n_a K) × (n_b K)` with
/// block `(i, j) = K_θ(a_i, b_j)`.
pub fn kernel_between(params: &NetworkParams, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = params.input_dim();
    if a.nrows() != d || b.nrows() != d {
        return Err(Error::dim("kernel_between", d, format!("{} / {}", a.nrows(), b.nrows())));
    }
    let (m, k) = (params.width(), params.embed_dim());
    let act = params.activation;
    let pa = &params.v * a;
    let pb = &params.v * b;
    let scalar = pa.map(|z| act.apply(z)).transpose() * pb.map(|z| act.apply(z));
    let inner = a.transpose() * b;
    // Column (i, k) of the weighted derivative features is w_·k ∘ φ'(V a_i).
    let weighted = |pre: &DMatrix<f64>| {
        let n = pre.ncols();
        let mut q = DMatrix::zeros(m, n * k);
        for i in 0..n {
            for kk in 0..k {
                let mut col = q.column_mut(i * k + kk);
                for neuron in 0..m {
                    col[neuron] = params.w[(neuron, kk)] * act.derivative(pre[(neuron, i)]);
                }
            }
        }
        q
    };
    let qa = weighted(&pa);
    let qb = if std::ptr::eq(a, b) { qa.clone() } else { weighted(&pb) };
    // Explicit transpose so the product goes through the blocked gemm path.
    let mut out = qa.transpose() * &qb;
    let (na, nb) = (a.ncols(), b.ncols());
    for j in 0..nb {
        for i in 0..na {
            let g = inner[(i, j)];
            let s = scalar[(i, j)];
            for l in 0..k {
                for kk in 0..k {
                    let e = &mut out[(i * k + kk, j * k + l)];
                    *e *= g;
                    if kk == l {
                        *e += s;
                    }
                }
            }
        }
    }
    Ok(out / m as f64)
}

/// `𝐊` over all 2N training points (anchors, then augments).
pub fn assemble(params: &NetworkParams, dataset: &PairedDataset) -> Result<NtkMatrix> {
    let pts = dataset.points();
    let raw = kernel_between(params, pts, pts)?;
    NtkMatrix::from_matrix(linalg::symmetrize(&raw), params.embed_dim())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drift {
    /// `‖K_t − K_0‖_F`.
    pub absolute: f64,
    /// `‖K_t − K_0‖_F / ‖K_0‖_F`.
    pub relative: f64,
}

pub fn drift(k0: &NtkMatrix, kt: &NtkMatrix) -> Result<Drift> {
    if k0.matrix.shape() != kt.matrix.shape() {
        return Err(Error::dim("ntk drift", format!("{:?}", k0.matrix.shape()), format!("{:?}", kt.matrix.shape())));
    }
    let absolute = (&kt.matrix - &k0.matrix).norm();
    let base = k0.matrix.norm();
    let relative = if base > 0.0 { absolute / base } else if absolute == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(Drift { absolute, relative })
}

pub fn min_eigenvalue(k: &NtkMatrix) -> Result<f64> {
    linalg::min_sym_eigenvalue(&k.matrix)
}
