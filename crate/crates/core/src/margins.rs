//! Angular activations for the target class (ψ) and the non-target classes
//! (η), the characteristic function Δ(θ) = η(θ) − ψ(θ), and the per-class
//! loss characteristics built on top of them.
//!
//! Every margin family in this module keeps Δ(θ) ≥ 0 on its domain except
//! ArcFace (and CombinedMargin with an additive angle), whose Δ turns negative
//! close to π.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Distance to a non-differentiable point below which a derivative is
/// reported as being at the kink.
pub const KINK_TOLERANCE: f64 = 1e-9;

/// An angle in radians, restricted to `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Angle(f64);

impl Angle {
    pub fn new(theta: f64) -> Result<Self> {
        if theta.is_finite() && (0.0..=PI).contains(&theta) {
            Ok(Self(theta))
        } else {
            Err(Error::Domain {
                what: "theta",
                value: theta,
            })
        }
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    NormFace,
    CosFace,
    ArcFace,
    SphereFace,
    SphereFaceRv1,
    SphereFaceRv2,
    ExpMargin,
    CombinedMargin,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::NormFace,
        Family::CosFace,
        Family::ArcFace,
        Family::SphereFace,
        Family::SphereFaceRv1,
        Family::SphereFaceRv2,
        Family::ExpMargin,
        Family::CombinedMargin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::NormFace => "normface",
            Family::CosFace => "cosface",
            Family::ArcFace => "arcface",
            Family::SphereFace => "sphereface",
            Family::SphereFaceRv1 => "sphereface_r_v1",
            Family::SphereFaceRv2 => "sphereface_r_v2",
            Family::ExpMargin => "exp_margin",
            Family::CombinedMargin => "combined_margin",
        }
    }

    /// Families whose margin lives in the non-target function. CGD detaches
    /// Δ from η for these and from ψ for everything else.
    pub fn modifies_nontarget(self) -> bool {
        matches!(self, Family::SphereFaceRv2)
    }

    pub fn is_multiplicative(self) -> bool {
        matches!(
            self,
            Family::SphereFace | Family::SphereFaceRv1 | Family::SphereFaceRv2 | Family::ExpMargin
        )
    }

    pub fn is_additive(self) -> bool {
        matches!(self, Family::CosFace | Family::ArcFace)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let family = match key.as_str() {
            "normface" => Family::NormFace,
            "cosface" => Family::CosFace,
            "arcface" => Family::ArcFace,
            "sphereface" => Family::SphereFace,
            "sphereface_r_v1" | "spherefacerv1" | "v1" => Family::SphereFaceRv1,
            "sphereface_r_v2" | "spherefacerv2" | "v2" => Family::SphereFaceRv2,
            "exp_margin" | "expmargin" | "exp" => Family::ExpMargin,
            "combined_margin" | "combinedmargin" | "combined" => Family::CombinedMargin,
            _ => return Err(Error::InvalidParam(format!("unknown margin family `{s}`"))),
        };
        Ok(family)
    }
}

/// A margin family together with its hyperparameters.
///
/// Construct through [`MarginSpec::new`] or [`MarginSpec::combined`]; both
/// validate the parameter ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginSpec {
    family: Family,
    m: f64,
    m1: f64,
    m2: f64,
    m3: f64,
}

impl MarginSpec {
    /// Builds a single-parameter family. `m` is ignored for NormFace.
    /// CombinedMargin needs three parameters; use [`MarginSpec::combined`].
    pub fn new(family: Family, m: f64) -> Result<Self> {
        let bad = |why: &str| Err(Error::InvalidParam(format!("{family}: m = {m} {why}")));
        match family {
            Family::NormFace => return Ok(Self::norm_face()),
            Family::CombinedMargin => {
                return Err(Error::InvalidParam(
                    "combined_margin takes (m1, m2, m3); use MarginSpec::combined".into(),
                ))
            }
            _ => {}
        }
        if !m.is_finite() {
            return bad("is not finite");
        }
        if family.is_additive() && m < 0.0 {
            return bad("must be >= 0");
        }
        if family.is_multiplicative() && m < 1.0 {
            return bad("must be >= 1");
        }
        if family == Family::SphereFace && m > 2.0 {
            return bad("must be <= 2 for the two-branch target function");
        }
        Ok(Self {
            family,
            m,
            m1: 1.0,
            m2: 0.0,
            m3: 0.0,
        })
    }

    pub fn norm_face() -> Self {
        Self {
            family: Family::NormFace,
            m: 0.0,
            m1: 1.0,
            m2: 0.0,
            m3: 0.0,
        }
    }

    /// ψ(θ) = cos(m1·θ + m2) − m3 with η(θ) = cos θ.
    pub fn combined(m1: f64, m2: f64, m3: f64) -> Result<Self> {
        if !(m1.is_finite() && m2.is_finite() && m3.is_finite()) {
            return Err(Error::InvalidParam(
                "combined margin parameters must be finite".into(),
            ));
        }
        if m1 < 1.0 || m2 < 0.0 || m3 < 0.0 {
            return Err(Error::InvalidParam(format!(
                "combined margin needs m1 >= 1, m2 >= 0, m3 >= 0 (got {m1}, {m2}, {m3})"
            )));
        }
        Ok(Self {
            family: Family::CombinedMargin,
            m: 0.0,
            m1,
            m2,
            m3,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn combined_params(&self) -> (f64, f64, f64) {
        (self.m1, self.m2, self.m3)
    }

    /// Upper end of the angular domain. ExpMargin is only monotone on
    /// `[0, π/2]`; every other family accepts the full `[0, π]`.
    pub fn domain_max(&self) -> f64 {
        if self.family == Family::ExpMargin {
            FRAC_PI_2
        } else {
            PI
        }
    }

    /// Non-differentiable point of ψ, if the family has one inside (0, π).
    pub fn kink(&self) -> Option<f64> {
        match self.family {
            Family::SphereFace | Family::SphereFaceRv1 if self.m > 1.0 => Some(PI / self.m),
            _ => None,
        }
    }

    pub(crate) fn check(&self, theta: f64) -> Result<f64> {
        if theta.is_finite() && (0.0..=self.domain_max()).contains(&theta) {
            Ok(theta)
        } else {
            Err(Error::Domain {
                what: "theta",
                value: theta,
            })
        }
    }

    /// Target angular function ψ(θ).
    pub fn target_psi(&self, theta: Angle) -> Result<f64> {
        self.check(theta.0).map(|t| self.psi_raw(t))
    }

    /// Non-target angular function η(θ).
    pub fn nontarget_eta(&self, theta: Angle) -> Result<f64> {
        self.check(theta.0).map(|t| self.eta_raw(t))
    }

    /// Characteristic function Δ(θ) = η(θ) − ψ(θ).
    pub fn characteristic_delta(&self, theta: Angle) -> Result<f64> {
        self.check(theta.0).map(|t| self.delta_raw(t))
    }

    /// dψ/dθ. Under CGD, target-modified families use η′ in place of ψ′.
    pub fn psi_derivative(&self, theta: Angle, cgd: bool) -> Result<f64> {
        let t = self.check(theta.0)?;
        self.psi_prime_eff(t, cgd, true)
    }

    /// dη/dθ. Under CGD, SphereFace-R v2 uses ψ′ in place of η′.
    pub fn eta_derivative(&self, theta: Angle, cgd: bool) -> Result<f64> {
        let t = self.check(theta.0)?;
        Ok(self.eta_prime_eff(t, cgd))
    }

    pub(crate) fn psi_raw(&self, t: f64) -> f64 {
        let m = self.m;
        match self.family {
            Family::NormFace | Family::SphereFaceRv2 => t.cos(),
            Family::CosFace => t.cos() - m,
            Family::ArcFace => (t + m).cos(),
            Family::SphereFace => {
                if t * m <= PI {
                    (m * t).cos()
                } else {
                    -(m * t).cos() - 2.0
                }
            }
            // min{m, π/θ}·θ saturates at π once mθ ≥ π; θ = 0 falls in the
            // first branch, giving the continuous limit cos(0) = 1.
            Family::SphereFaceRv1 => {
                if t * m >= PI {
                    -1.0
                } else {
                    (m * t).cos()
                }
            }
            Family::ExpMargin => signed_pow((2.0 * t).cos(), m),
            Family::CombinedMargin => (self.m1 * t + self.m2).cos() - self.m3,
        }
    }

    pub(crate) fn eta_raw(&self, t: f64) -> f64 {
        match self.family {
            Family::SphereFaceRv2 => (t / self.m).cos(),
            Family::ExpMargin => (2.0 * t).cos(),
            _ => t.cos(),
        }
    }

    pub(crate) fn delta_raw(&self, t: f64) -> f64 {
        self.eta_raw(t) - self.psi_raw(t)
    }

    pub(crate) fn psi_prime_raw(&self, t: f64) -> f64 {
        let m = self.m;
        match self.family {
            Family::NormFace | Family::CosFace | Family::SphereFaceRv2 => -t.sin(),
            Family::ArcFace => -(t + m).sin(),
            Family::SphereFace => {
                if t * m <= PI {
                    -m * (m * t).sin()
                } else {
                    m * (m * t).sin()
                }
            }
            Family::SphereFaceRv1 => {
                if t * m >= PI {
                    0.0
                } else {
                    -m * (m * t).sin()
                }
            }
            Family::ExpMargin => {
                let c = (2.0 * t).cos();
                -2.0 * m * c.abs().powf(m - 1.0) * (2.0 * t).sin()
            }
            Family::CombinedMargin => -self.m1 * (self.m1 * t + self.m2).sin(),
        }
    }

    pub(crate) fn eta_prime_raw(&self, t: f64) -> f64 {
        match self.family {
            Family::SphereFaceRv2 => -(t / self.m).sin() / self.m,
            Family::ExpMargin => -2.0 * (2.0 * t).sin(),
            _ => -t.sin(),
        }
    }

    /// Like [`psi_derivative`](Self::psi_derivative) on a raw angle, but a
    /// kink yields its left-limit value instead of an error.
    pub(crate) fn psi_prime_eff(&self, t: f64, cgd: bool, strict: bool) -> Result<f64> {
        if cgd && !self.family.modifies_nontarget() {
            return Ok(self.eta_prime_raw(t));
        }
        if let Some(kink) = self.kink() {
            if (t - kink).abs() < KINK_TOLERANCE {
                let left_limit = self.psi_prime_raw(kink);
                if strict {
                    return Err(Error::Kink {
                        theta: t,
                        kink,
                        left_limit,
                    });
                }
                return Ok(left_limit);
            }
        }
        Ok(self.psi_prime_raw(t))
    }

    pub(crate) fn eta_prime_eff(&self, t: f64, cgd: bool) -> f64 {
        if cgd && self.family.modifies_nontarget() {
            self.psi_prime_raw(t)
        } else {
            self.eta_prime_raw(t)
        }
    }
}

impl fmt::Display for MarginSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::NormFace => write!(f, "normface"),
            Family::CombinedMargin => {
                write!(
                    f,
                    "combined_margin(m1={},m2={},m3={})",
                    self.m1, self.m2, self.m3
                )
            }
            fam => write!(f, "{fam}(m={})", self.m),
        }
    }
}

/// `sign(c)·|c|^m`, the odd extension of `c^m`. Agrees with `c^m` for
/// `c ≥ 0` and keeps the ExpMargin target monotone where cos 2θ < 0.
fn signed_pow(c: f64, m: f64) -> f64 {
    c.signum() * c.abs().powf(m)
}

/// Loss characteristic Q(θ_y, θ_i, s) = s·(η(θ_i) − η(θ_y) + Δ(θ_y)).
pub fn q_characteristics(theta_y: Angle, theta_i: Angle, s: f64, spec: &MarginSpec) -> Result<f64> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::Domain {
            what: "s",
            value: s,
        });
    }
    let ty = spec.check(theta_y.0)?;
    let ti = spec.check(theta_i.0)?;
    Ok(s * (spec.eta_raw(ti) - spec.eta_raw(ty) + spec.delta_raw(ty)))
}

/// Gradient weights ρ_i = exp(Q_i) / (1 + Σ_j exp(Q_j)), the softmax
/// probabilities of the non-target classes with the target's logit at 0.
pub fn grad_weighting_rho(q_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = q_values.iter().find(|q| !q.is_finite()) {
        return Err(Error::Domain {
            what: "Q",
            value: bad,
        });
    }
    Ok(rho_unchecked(q_values))
}

pub(crate) fn rho_unchecked(q: &[f64]) -> Vec<f64> {
    let shift = q.iter().copied().fold(0.0_f64, f64::max);
    let exps: Vec<f64> = q.iter().map(|v| (v - shift).exp()).collect();
    let denom = (-shift).exp() + exps.iter().sum::<f64>();
    exps.into_iter().map(|e| e / denom).collect()
}
