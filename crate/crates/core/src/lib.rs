//! Hyperspherical large-angular-margin softmax losses.
//!
//! The crate covers the full pipeline of a margin-based embedding study:
//!
//! * [`margins`]: target/non-target angular activations, characteristic
//!   functions and their derivatives, with and without characteristic
//!   gradient detachment (CGD).
//! * [`geometry`]: angles, feature-magnitude schemes (NFN/HFN/SFN) and
//!   similarity scores.
//! * [`loss`]: per-sample forward/backward passes and scale/landscape sweeps.
//! * [`trainer`]: synthetic hypersphere data, SGD with momentum, the binary
//!   margin-geometry experiment and checkpoints.
//! * [`eval`]: ROC, partial AUC, TAR@FAR and open-set identification.
//! * [`gradcheck`]: finite-difference verification of every loss gradient.
//!
//! All arithmetic is `f64`.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod margins;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{FnScheme, HeadState};
pub use linalg::Matrix;
pub use loss::{LossConfig, LossGrad};
pub use margins::{Angle, Family, MarginSpec};
