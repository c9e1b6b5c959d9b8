//! Angles between features and classifier weights, feature-magnitude
//! schemes, the soft-normalization penalty and pairwise similarity scores.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::margins::Angle;

/// Norms at or below this are treated as degenerate.
pub const NORM_EPS: f64 = 1e-12;

/// Cosines are clamped to `[-1 + COS_CLAMP, 1 - COS_CLAMP]` before `acos`.
pub const COS_CLAMP: f64 = 1e-7;

/// How the feature magnitude enters the logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FnScheme {
    /// Keep ‖x‖ as the logit scale.
    Nfn,
    /// Replace ‖x‖ by the constant `s`.
    Hfn { s: f64 },
    /// Keep ‖x‖ and add the penalty `t·(‖x‖ − s)²`.
    Sfn { s: f64, t: f64 },
}

impl FnScheme {
    pub fn hfn(s: f64) -> Result<Self> {
        check_scale(s)?;
        Ok(Self::Hfn { s })
    }

    pub fn sfn(s: f64, t: f64) -> Result<Self> {
        check_scale(s)?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Domain {
                what: "t",
                value: t,
            });
        }
        Ok(Self::Sfn { s, t })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Nfn => "nfn",
            Self::Hfn { .. } => "hfn",
            Self::Sfn { .. } => "sfn",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Nfn => Ok(()),
            Self::Hfn { s } => Self::hfn(s).map(drop),
            Self::Sfn { s, t } => Self::sfn(s, t).map(drop),
        }
    }
}

impl fmt::Display for FnScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Nfn => write!(f, "nfn"),
            Self::Hfn { s } => write!(f, "hfn(s={s})"),
            Self::Sfn { s, t } => write!(f, "sfn(s={s},t={t})"),
        }
    }
}

fn check_scale(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "s",
            value: s,
        })
    }
}

/// Classifier weights, one row per class.
///
/// Rows built through [`HeadState::new`] have unit norm. Angle computations
/// divide by each row's norm anyway, so a head built with
/// [`HeadState::from_raw`] (e.g. a finite-difference perturbation) is still
/// well defined.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadState {
    weights: Matrix,
}

impl HeadState {
    /// Normalizes every row of `weights`.
    pub fn new(weights: Matrix) -> Result<Self> {
        normalize_weights(weights)
    }

    /// Uses `weights` as given, without normalizing.
    pub fn from_raw(weights: Matrix) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn into_weights(self) -> Matrix {
        self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// Rescales every row back to unit norm.
    pub fn renormalize(&mut self) -> Result<()> {
        for i in 0..self.weights.rows() {
            let row = self.weights.row_mut(i);
            let mut n = norm(row);
            if n == f64::INFINITY && row.iter().all(|v| v.is_finite()) {
                // ‖row‖² overflowed; the direction is still well defined.
                let big = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                row.iter_mut().for_each(|v| *v /= big);
                n = norm(row);
            }
            if !(n > NORM_EPS && n.is_finite()) {
                return Err(Error::DegenerateRow { row: i, norm: n });
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(())
    }
}

/// Scales each row of `weights` to unit norm.
pub fn normalize_weights(weights: Matrix) -> Result<HeadState> {
    let mut head = HeadState { weights };
    head.renormalize()?;
    Ok(head)
}

/// `‖x‖`, rejecting non-finite entries and norms at or below [`NORM_EPS`].
pub fn feature_norm(x: &[f64]) -> Result<f64> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFeature { norm: f64::NAN });
    }
    let n = norm(x);
    if n > NORM_EPS {
        Ok(n)
    } else {
        Err(Error::DegenerateFeature { norm: n })
    }
}

pub(crate) fn clamp_cos(c: f64) -> f64 {
    c.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
}

/// Angle between `x` and the unit vector `w`, from the clamped cosine; the
/// result always lies strictly inside (0, π).
pub fn angle_between(x: &[f64], w: &[f64]) -> Result<Angle> {
    if x.len() != w.len() {
        return Err(Error::Shape {
            expected: w.len(),
            got: x.len(),
        });
    }
    let nx = feature_norm(x)?;
    Angle::new(clamp_cos(dot(x, w) / nx).acos())
}

/// Effective logit scale and unit direction of `x` under `scheme`.
pub fn apply_fn(x: &[f64], scheme: FnScheme) -> Result<(f64, Vec<f64>)> {
    let n = feature_norm(x)?;
    let dir = x.iter().map(|v| v / n).collect();
    let magnitude = match scheme {
        FnScheme::Hfn { s } => s,
        FnScheme::Nfn | FnScheme::Sfn { .. } => n,
    };
    Ok((magnitude, dir))
}

/// Soft-normalization penalty `t·(‖x‖ − s)²` and its gradient in `x`.
pub fn sfn_regularizer(x: &[f64], s: f64, t: f64) -> Result<(f64, Vec<f64>)> {
    let n = feature_norm(x)?;
    let gap = n - s;
    let coef = 2.0 * t * gap / n;
    Ok((t * gap * gap, x.iter().map(|v| coef * v).collect()))
}

/// Action of the Jacobian of `x ↦ s·x/‖x‖` on `v`:
/// `(s/‖x‖)·(v − x̂⟨x̂, v⟩)`. The Jacobian is symmetric, so this is also the
/// vector-Jacobian product used to pull gradients back through HFN.
pub fn hfn_jacobian_apply(x: &[f64], s: f64, v: &[f64]) -> Result<Vec<f64>> {
    let n = feature_norm(x)?;
    let along = dot(x, v) / (n * n);
    Ok(x.iter()
        .zip(v)
        .map(|(xi, vi)| s / n * (vi - along * xi))
        .collect())
}

pub fn cosine_score(x1: &[f64], x2: &[f64]) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::Shape {
            expected: x1.len(),
            got: x2.len(),
        });
    }
    let n1 = feature_norm(x1)?;
    let n2 = feature_norm(x2)?;
    Ok((dot(x1, x2) / (n1 * n2)).clamp(-1.0, 1.0))
}

/// Magnitude-aware score `(‖x1‖·‖x2‖)^t · cos θ₁₂`; `t = 0` is the cosine.
pub fn generalized_score(x1: &[f64], x2: &[f64], t: f64) -> Result<f64> {
    let cos = cosine_score(x1, x2)?;
    if t == 0.0 {
        return Ok(cos);
    }
    // Product first so the value is symmetric bit-for-bit.
    let g = (norm(x1) * norm(x2)).powf(t);
    Ok(g * cos)
}
