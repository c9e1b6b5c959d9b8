//! Forward and backward passes of the generalized large-margin softmax
//! objective
//!
//! ```text
//! L = log(1 + Σ_{i≠y} exp(Q_i)),   Q_i = M·(η(θ_i) − η(θ_y) + Δ(θ_y))
//! ```
//!
//! where `M` is ‖x‖ (NFN/SFN) or `s` (HFN). SphereFace-R v2 carries its margin
//! in η, so its exponent is evaluated as `M·(ψ(θ_i) − ψ(θ_y) + Δ(θ_i))`.
//!
//! With CGD the forward value is unchanged and Δ drops out of the backward
//! pass: target-modified families differentiate ψ as η, v2 differentiates η
//! as ψ. The rules are written out in closed form; there is no autodiff.

use crate::error::{Error, Result};
use crate::geometry::{
    clamp_cos, feature_norm, hfn_jacobian_apply, sfn_regularizer, FnScheme, HeadState, COS_CLAMP,
};
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::margins::{rho_unchecked, Angle, MarginSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub margin: MarginSpec,
    pub scheme: FnScheme,
    pub cgd: bool,
}

impl LossConfig {
    pub fn new(margin: MarginSpec, scheme: FnScheme, cgd: bool) -> Result<Self> {
        scheme.validate()?;
        Ok(Self {
            margin,
            scheme,
            cgd,
        })
    }
}

/// Loss value and gradients for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_feature: Vec<f64>,
    pub grad_weights: Matrix,
    /// Q_i for every non-target class, in class order with `y` skipped.
    pub per_sample_q: Vec<f64>,
}

/// Gradients of the margin loss with respect to the angles and the logit
/// scale.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrad {
    pub loss: f64,
    /// Non-target exponents, class order with the target skipped.
    pub q: Vec<f64>,
    /// ρ_i for the same classes as `q`.
    pub rho: Vec<f64>,
    /// dL/dθ_i for every class, including the target.
    pub d_theta: Vec<f64>,
    /// dL/dM.
    pub d_scale: f64,
}

/// `log(1 + Σ exp(q_i))` without overflow or loss of precision for very
/// negative exponents.
pub fn log1p_sum_exp(q: &[f64]) -> f64 {
    let shift = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if shift <= 0.0 {
        return q.iter().map(|v| v.exp()).sum::<f64>().ln_1p();
    }
    shift + ((-shift).exp() + q.iter().map(|v| (v - shift).exp()).sum::<f64>()).ln()
}

fn check_target(y: usize, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidParam(format!(
            "need at least 2 classes, got {k}"
        )));
    }
    if y >= k {
        return Err(Error::Index { index: y, len: k });
    }
    Ok(())
}

fn check_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "scale",
            value: scale,
        })
    }
}

fn raw_angles(margin: &MarginSpec, thetas: &[Angle]) -> Result<Vec<f64>> {
    thetas.iter().map(|a| margin.check(a.radians())).collect()
}

/// Exponents Q_i. `frozen`, when given, replaces Δ evaluated at the live
/// angles by stored values (indexed by class).
fn exponents(
    thetas: &[f64],
    y: usize,
    scale: f64,
    margin: &MarginSpec,
    frozen: Option<&[f64]>,
) -> Vec<f64> {
    let others = (0..thetas.len()).filter(|&i| i != y);
    if margin.family().modifies_nontarget() {
        let psi_y = margin.psi_raw(thetas[y]);
        others
            .map(|i| {
                let delta_i = frozen.map_or_else(|| margin.delta_raw(thetas[i]), |f| f[i]);
                scale * (margin.psi_raw(thetas[i]) - psi_y + delta_i)
            })
            .collect()
    } else {
        let eta_y = margin.eta_raw(thetas[y]);
        let delta_y = frozen.map_or_else(|| margin.delta_raw(thetas[y]), |f| f[y]);
        others
            .map(|i| scale * (margin.eta_raw(thetas[i]) - eta_y + delta_y))
            .collect()
    }
}

/// Loss from the angles to every class, the target index and the logit
/// scale `M`.
pub fn angular_loss(thetas: &[Angle], y: usize, scale: f64, margin: &MarginSpec) -> Result<f64> {
    check_target(y, thetas.len())?;
    check_scale(scale)?;
    let t = raw_angles(margin, thetas)?;
    Ok(log1p_sum_exp(&exponents(&t, y, scale, margin, None)))
}

/// The same loss written as softmax cross-entropy over the logits
/// `M·ψ(θ_y)` and `M·η(θ_i)`.
pub fn softmax_form_loss(
    thetas: &[Angle],
    y: usize,
    scale: f64,
    margin: &MarginSpec,
) -> Result<f64> {
    check_target(y, thetas.len())?;
    check_scale(scale)?;
    let t = raw_angles(margin, thetas)?;
    let logits: Vec<f64> = t
        .iter()
        .enumerate()
        .map(|(i, &th)| {
            scale
                * if i == y {
                    margin.psi_raw(th)
                } else {
                    margin.eta_raw(th)
                }
        })
        .collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + logits.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
    Ok(lse - logits[y])
}

/// Loss plus dL/dθ and dL/dM.
pub fn angular_backward(
    thetas: &[Angle],
    y: usize,
    scale: f64,
    margin: &MarginSpec,
    cgd: bool,
) -> Result<AngularGrad> {
    check_target(y, thetas.len())?;
    check_scale(scale)?;
    let t = raw_angles(margin, thetas)?;
    angular_backward_raw(&t, y, scale, margin, cgd, true)
}

fn angular_backward_raw(
    t: &[f64],
    y: usize,
    scale: f64,
    margin: &MarginSpec,
    cgd: bool,
    strict_kinks: bool,
) -> Result<AngularGrad> {
    let q = exponents(t, y, scale, margin, None);
    let loss = log1p_sum_exp(&q);
    let rho = rho_unchecked(&q);
    let rho_total: f64 = rho.iter().sum();

    // Q_i depends on θ_i through η (v2 under CGD: ψ) and on θ_y through ψ
    // (target-modified families under CGD: η).
    let mut d_theta = vec![0.0; t.len()];
    let mut d_scale = 0.0;
    for ((i, r), qi) in (0..t.len()).filter(|&i| i != y).zip(&rho).zip(&q) {
        d_theta[i] = r * scale * margin.eta_prime_eff(t[i], cgd);
        d_scale += r * qi / scale;
    }
    d_theta[y] = -rho_total * scale * margin.psi_prime_eff(t[y], cgd, strict_kinks)?;

    Ok(AngularGrad {
        loss,
        q,
        rho,
        d_theta,
        d_scale,
    })
}

/// Per-row geometry of a feature against the head.
struct Geometry {
    norm_x: f64,
    xhat: Vec<f64>,
    norm_w: Vec<f64>,
    cos_raw: Vec<f64>,
    thetas: Vec<f64>,
}

fn geometry(x: &[f64], head: &HeadState, margin: &MarginSpec) -> Result<Geometry> {
    let w = head.weights();
    if x.len() != w.cols() {
        return Err(Error::Shape {
            expected: w.cols(),
            got: x.len(),
        });
    }
    let norm_x = feature_norm(x)?;
    let xhat: Vec<f64> = x.iter().map(|v| v / norm_x).collect();
    let mut norm_w = Vec::with_capacity(w.rows());
    let mut cos_raw = Vec::with_capacity(w.rows());
    let mut thetas = Vec::with_capacity(w.rows());
    for (i, row) in w.iter_rows().enumerate() {
        let n = norm(row);
        if !(n > crate::geometry::NORM_EPS) {
            return Err(Error::DegenerateRow { row: i, norm: n });
        }
        let c = dot(&xhat, row) / n;
        thetas.push(margin.check(clamp_cos(c).acos())?);
        norm_w.push(n);
        cos_raw.push(c);
    }
    Ok(Geometry {
        norm_x,
        xhat,
        norm_w,
        cos_raw,
        thetas,
    })
}

fn logit_scale(scheme: FnScheme, norm_x: f64) -> f64 {
    match scheme {
        FnScheme::Hfn { s } => s,
        FnScheme::Nfn | FnScheme::Sfn { .. } => norm_x,
    }
}

/// Sample loss, including the SFN penalty when that scheme is selected.
/// The value does not depend on `cfg.cgd`.
pub fn loss_forward(x: &[f64], head: &HeadState, y: usize, cfg: &LossConfig) -> Result<f64> {
    forward_impl(x, head, y, cfg, None)
}

/// Surrogate forward pass in which Δ is held at the values in `frozen`
/// (one per class, see [`characteristic_values`]). Its exact gradient is
/// what the CGD backward pass computes.
pub fn loss_forward_detached(
    x: &[f64],
    head: &HeadState,
    y: usize,
    cfg: &LossConfig,
    frozen: &[f64],
) -> Result<f64> {
    if frozen.len() != head.num_classes() {
        return Err(Error::Shape {
            expected: head.num_classes(),
            got: frozen.len(),
        });
    }
    forward_impl(x, head, y, cfg, Some(frozen))
}

/// Δ(θ_i) for every class at the current feature.
pub fn characteristic_values(x: &[f64], head: &HeadState, cfg: &LossConfig) -> Result<Vec<f64>> {
    let geo = geometry(x, head, &cfg.margin)?;
    Ok(geo
        .thetas
        .iter()
        .map(|&t| cfg.margin.delta_raw(t))
        .collect())
}

fn forward_impl(
    x: &[f64],
    head: &HeadState,
    y: usize,
    cfg: &LossConfig,
    frozen: Option<&[f64]>,
) -> Result<f64> {
    check_target(y, head.num_classes())?;
    let geo = geometry(x, head, &cfg.margin)?;
    let scale = logit_scale(cfg.scheme, geo.norm_x);
    let mut loss = log1p_sum_exp(&exponents(&geo.thetas, y, scale, &cfg.margin, frozen));
    if let FnScheme::Sfn { s, t } = cfg.scheme {
        loss += sfn_regularizer(x, s, t)?.0;
    }
    Ok(loss)
}

/// Loss and exact gradients with respect to the feature and every
/// classifier row. Fails with [`Error::Kink`] when `cfg.cgd` is off and the
/// target angle sits on a non-differentiable point of ψ.
pub fn loss_backward(x: &[f64], head: &HeadState, y: usize, cfg: &LossConfig) -> Result<LossGrad> {
    backward_impl(x, head, y, cfg, true)
}

/// As [`loss_backward`], but a kink contributes its left-limit derivative.
pub(crate) fn loss_backward_lenient(
    x: &[f64],
    head: &HeadState,
    y: usize,
    cfg: &LossConfig,
) -> Result<LossGrad> {
    backward_impl(x, head, y, cfg, false)
}

fn backward_impl(
    x: &[f64],
    head: &HeadState,
    y: usize,
    cfg: &LossConfig,
    strict: bool,
) -> Result<LossGrad> {
    check_target(y, head.num_classes())?;
    let geo = geometry(x, head, &cfg.margin)?;
    let scale = logit_scale(cfg.scheme, geo.norm_x);
    let ag = angular_backward_raw(&geo.thetas, y, scale, &cfg.margin, cfg.cgd, strict)?;

    let w = head.weights();
    let d = w.cols();
    let mut grad_weights = Matrix::zeros(w.rows(), d);
    // Σ_i dL/dc_i · ŵ_i, where c_i = ⟨x̂, ŵ_i⟩.
    let mut pull = vec![0.0; d];
    for (i, row) in w.iter_rows().enumerate() {
        let c = geo.cos_raw[i];
        let dtheta_dc = if c.abs() >= 1.0 - COS_CLAMP {
            0.0
        } else {
            -1.0 / (1.0 - c * c).sqrt()
        };
        let g = ag.d_theta[i] * dtheta_dc;
        if g == 0.0 {
            continue;
        }
        let nw = geo.norm_w[i];
        axpy(g / nw, row, &mut pull);
        // dc/dw = (x̂ − c·ŵ)/‖w‖
        let gw = grad_weights.row_mut(i);
        axpy(g / nw, &geo.xhat, gw);
        axpy(-g * c / (nw * nw), row, gw);
    }

    let mut grad_feature = match cfg.scheme {
        FnScheme::Hfn { s } => {
            // The logits see z = s·x̂ through c_i = ⟨z, ŵ_i⟩/s.
            let dz: Vec<f64> = pull.iter().map(|v| v / s).collect();
            hfn_jacobian_apply(x, s, &dz)?
        }
        FnScheme::Nfn | FnScheme::Sfn { .. } => {
            let mut g = hfn_jacobian_apply(x, 1.0, &pull)?;
            axpy(ag.d_scale, &geo.xhat, &mut g);
            g
        }
    };

    let mut loss = ag.loss;
    if let FnScheme::Sfn { s, t } = cfg.scheme {
        let (value, grad) = sfn_regularizer(x, s, t)?;
        loss += value;
        axpy(1.0, &grad, &mut grad_feature);
    }

    Ok(LossGrad {
        loss,
        grad_feature,
        grad_weights,
        per_sample_q: ag.q,
    })
}

/// Loss under HFN with the given angles for each `s` in `s_grid`; the target
/// is the first class.
pub fn scale_limit_curve(
    theta_y: Angle,
    thetas_other: &[Angle],
    spec: &MarginSpec,
    s_grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if thetas_other.is_empty() {
        return Err(Error::EmptySet("non-target angles"));
    }
    if s_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParam(
            "s grid must be strictly ascending".into(),
        ));
    }
    let mut thetas = Vec::with_capacity(thetas_other.len() + 1);
    thetas.push(theta_y);
    thetas.extend_from_slice(thetas_other);
    s_grid
        .iter()
        .map(|&s| Ok((s, angular_loss(&thetas, 0, s, spec)?)))
        .collect()
}

/// Binary loss as a function of the target angle, against one fixed
/// non-target angle, at scale `s`.
pub fn loss_landscape_curve(
    theta_grid: &[Angle],
    theta_other: Angle,
    spec: &MarginSpec,
    s: f64,
) -> Result<Vec<(f64, f64)>> {
    theta_grid
        .iter()
        .map(|&ty| Ok((ty.radians(), angular_loss(&[ty, theta_other], 0, s, spec)?)))
        .collect()
}
