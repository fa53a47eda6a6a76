//! Barlow Twins on wide two-layer networks, seen through the neural tangent kernel.
//!
//! The crate trains `f(x) = (1/√M) Σ_m w_m φ(v_mᵀx)` on positive pairs under the
//! cross-moment loss `‖C − I‖²_F`, measures how far the empirical NTK moves until
//! convergence, trains the matching frozen-kernel model, simulates linearized
//! gradient flow and evaluates the kernel-trick generalization bounds.
//!
//! Conventions used everywhere:
//!
//! * Points of a [`PairedDataset`] are columns of a `d × 2N` matrix, anchors first.
//! * Representations are `K × 2N` matrices with one column per point in the same order.
//! * Flattened representation vectors (and the rows of [`NtkMatrix`]) are ordered
//!   point-major with the output index `k` running fastest.
//! * The parameter vector θ lists `W` (M×K) row-major, then `V` (M×d) row-major.

pub mod bounds;
pub mod bt_loss;
pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod lindyn;
pub mod linear_model;
pub mod network;
pub mod ntk;
pub mod seeding;
pub mod trainer;

pub use bt_loss::{CrossMoment, RepGradient};
pub use data::{AugmentSpec, PairedDataset};
pub use error::{Error, Result};
pub use network::{Activation, NetworkParams};
pub use ntk::NtkMatrix;
pub use trainer::{RunResult, TrainConfig, Trajectory, TrajectoryRecord};
