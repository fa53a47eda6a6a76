//! Positive-pair datasets on the unit sphere.

pub mod idx;

use std::path::Path;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::seeding::{self, Stream};
use crate::{Error, Result};

use self::idx::IdxFile;

/// Maximum tolerated deviation of any point's Euclidean norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// Additive Gaussian pixel jitter applied before renormalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub noise_scale: f64,
}

impl AugmentSpec {
    pub fn new(noise_scale: f64) -> Result<Self> {
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise scale must be >= 0, got {noise_scale}")));
        }
        Ok(Self { noise_scale })
    }
}

/// `N` positive pairs `(x_n, x_n⁺)` of unit-norm `d`-vectors.
///
/// Stored as a single `d × 2N` matrix whose first `N` columns are the anchors and
/// whose last `N` columns are the matching augments.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    points: DMatrix<f64>,
    n: usize,
}

impl PairedDataset {
    pub fn new(anchors: &[DVector<f64>], augments: &[DVector<f64>]) -> Result<Self> {
        if anchors.is_empty() || anchors.len() != augments.len() {
            return Err(Error::dim("PairedDataset::new", "equal, nonzero pair counts", format!("{} anchors / {} augments", anchors.len(), augments.len())));
        }
        let d = anchors[0].len();
        let cols: Vec<DVector<f64>> = anchors.iter().chain(augments).cloned().collect();
        if let Some(bad) = cols.iter().find(|c| c.len() != d) {
            return Err(Error::dim("PairedDataset::new", d, bad.len()));
        }
        Self::from_points(DMatrix::from_columns(&cols))
    }

    /// Builds a dataset from a `d × 2N` matrix (anchors, then augments).
    pub fn from_points(points: DMatrix<f64>) -> Result<Self> {
        let cols = points.ncols();
        if cols == 0 || cols % 2 != 0 || points.nrows() == 0 {
            return Err(Error::dim("PairedDataset::from_points", "d x 2N with N >= 1", format!("{}x{}", points.nrows(), cols)));
        }
        for (i, c) in points.column_iter().enumerate() {
            let dev = (c.norm() - 1.0).abs();
            if !(dev <= UNIT_NORM_TOL) {
                return Err(Error::Invariant(format!("point {i} has norm deviating from 1 by {dev:e}")));
            }
        }
        Ok(Self { n: cols / 2, points })
    }

    /// Number of pairs `N`.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> DVectorView<'_, f64> {
        self.points.column(i)
    }

    pub fn anchor(&self, n: usize) -> DVectorView<'_, f64> {
        self.points.column(n)
    }

    pub fn augment(&self, n: usize) -> DVectorView<'_, f64> {
        self.points.column(self.n + n)
    }

    /// Keeps the listed pairs, in the given order.
    pub fn select(&self, pairs: &[usize]) -> Result<Self> {
        if let Some(&bad) = pairs.iter().find(|&&p| p >= self.n) {
            return Err(Error::InvalidArgument(format!("pair index {bad} out of range for N = {}", self.n)));
        }
        let cols: Vec<_> = pairs
            .iter()
            .map(|&p| self.anchor(p).into_owned())
            .chain(pairs.iter().map(|&p| self.augment(p).into_owned()))
            .collect();
        Self::from_points(DMatrix::from_columns(&cols))
    }

    /// Gram matrix `ZᵀZ` of all 2N points.
    pub fn gram(&self) -> DMatrix<f64> {
        self.points.transpose() * &self.points
    }

    /// Largest `|‖x‖ − 1|` over all points.
    pub fn max_norm_deviation(&self) -> f64 {
        self.points.column_iter().map(|c| (c.norm() - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn normalized(v: DVector<f64>, what: impl FnOnce() -> String) -> Result<DVector<f64>> {
    let norm = v.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Degenerate(format!("{} has zero or non-finite norm", what())));
    }
    Ok(v / norm)
}

fn gaussian_vector<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// Anchors uniform on the sphere, augments `normalize(anchor + noise·g)`.
///
/// Anchors and augmentation noise come from separate RNG streams, so the anchors
/// for a given seed do not depend on `noise`.
pub fn synthetic_pairs(n: usize, d: usize, noise: f64, seed: u64) -> Result<PairedDataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!("synthetic_pairs needs N >= 1 and d >= 1 (got N={n}, d={d})")));
    }
    let aug = AugmentSpec::new(noise)?;
    let mut data_rng = seeding::rng(seed, Stream::Data);
    let mut noise_rng = seeding::rng(seed, Stream::Augment);
    let mut anchors = Vec::with_capacity(n);
    let mut augments = Vec::with_capacity(n);
    for i in 0..n {
        let anchor = normalized(gaussian_vector(&mut data_rng, d), || format!("anchor {i}"))?;
        let augment = if aug.noise_scale == 0.0 {
            anchor.clone()
        } else {
            let jitter = gaussian_vector(&mut noise_rng, d) * aug.noise_scale;
            normalized(&anchor + jitter, || format!("augment {i}"))?
        };
        anchors.push(anchor);
        augments.push(augment);
    }
    PairedDataset::new(&anchors, &augments)
}

/// Builds `count` positive pairs from the first `count` images of an IDX file.
///
/// Each image is flattened row-major and scaled to `[0, 1]`; both views receive
/// independent Gaussian jitter of scale `augmentation.noise_scale` and are then
/// renormalized.
pub fn load_mnist_pairs(
    images_path: impl AsRef<Path>,
    count: usize,
    augmentation: AugmentSpec,
    seed: u64,
) -> Result<PairedDataset> {
    let idx = idx::read_idx(images_path)?;
    pairs_from_idx(&idx, count, augmentation, seed)
}

pub fn pairs_from_idx(idx: &IdxFile, count: usize, augmentation: AugmentSpec, seed: u64) -> Result<PairedDataset> {
    let available = match idx {
        IdxFile::Images { count, .. } => *count,
        IdxFile::Labels { .. } => {
            return Err(Error::Format("expected an image file (magic 0x00000803), got a label file".into()))
        }
    };
    if count == 0 || count > available {
        return Err(Error::InvalidArgument(format!("requested {count} images, file holds {available}")));
    }
    AugmentSpec::new(augmentation.noise_scale)?;
    let mut rng = seeding::rng(seed, Stream::Augment);
    let mut anchors = Vec::with_capacity(count);
    let mut augments = Vec::with_capacity(count);
    for i in 0..count {
        let img = idx.image(i).expect("index checked against count");
        let base = DVector::from_iterator(img.len(), img.iter().map(|&p| f64::from(p) / 255.0));
        let mut view = |which: &str| -> Result<DVector<f64>> {
            let v = if augmentation.noise_scale == 0.0 {
                base.clone()
            } else {
                &base + gaussian_vector(&mut rng, base.len()) * augmentation.noise_scale
            };
            normalized(v, || format!("{which} view of image {i}"))
        };
        anchors.push(view("first")?);
        augments.push(view("second")?);
    }
    PairedDataset::new(&anchors, &augments)
}
