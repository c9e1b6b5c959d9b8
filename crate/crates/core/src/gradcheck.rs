//! Finite-difference verification of [`loss_backward`](crate::loss::loss_backward).
//!
//! Without CGD the analytic gradient is compared with central differences of
//! [`loss_forward`]. With CGD it is compared with central differences of the
//! surrogate [`loss_forward_detached`], where Δ is frozen at the base point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::geometry::{FnScheme, HeadState};
use crate::linalg::{norm, Matrix};
use crate::loss::{
    characteristic_values, loss_backward, loss_forward, loss_forward_detached, LossConfig, LossGrad,
};
use crate::margins::{Family, MarginSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub trials: usize,
    pub dim: usize,
    pub classes: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            dim: 8,
            classes: 5,
            step: 1e-6,
            tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub family: Family,
    pub scheme: &'static str,
    pub cgd: bool,
    pub trials: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Central differences of `f` at `point`, one coordinate at a time.
pub fn central_difference<F>(f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut p = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = p[i];
        p[i] = orig + step;
        let up = f(&p)?;
        p[i] = orig - step;
        let down = f(&p)?;
        p[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

/// Checks every family × FN scheme × CGD combination with the library's
/// own backward pass.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<Vec<GradcheckRow>> {
    run_gradcheck_with(opts, loss_backward)
}

/// Same as [`run_gradcheck`] with a caller-supplied backward pass.
pub fn run_gradcheck_with<B>(opts: &GradcheckOptions, backward: B) -> Result<Vec<GradcheckRow>>
where
    B: Fn(&[f64], &HeadState, usize, &LossConfig) -> Result<LossGrad>,
{
    let mut rows = Vec::new();
    for (fi, &family) in Family::ALL.iter().enumerate() {
        for si in 0..3 {
            for cgd in [false, true] {
                let combo = (fi * 6 + si * 2 + cgd as usize) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(
                    opts.seed ^ combo.wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                let mut worst = 0.0f64;
                for _ in 0..opts.trials {
                    let case = random_case(&mut rng, family, si, cgd, opts)?;
                    worst = worst.max(check_case(&case, opts.step, &backward)?);
                }
                rows.push(GradcheckRow {
                    family,
                    scheme: ["nfn", "hfn", "sfn"][si],
                    cgd,
                    trials: opts.trials,
                    max_rel_error: worst,
                    passed: worst < opts.tolerance,
                });
            }
        }
    }
    Ok(rows)
}

struct Case {
    x: Vec<f64>,
    head: HeadState,
    y: usize,
    cfg: LossConfig,
}

fn check_case<B>(case: &Case, step: f64, backward: &B) -> Result<f64>
where
    B: Fn(&[f64], &HeadState, usize, &LossConfig) -> Result<LossGrad>,
{
    let Case { x, head, y, cfg } = case;
    let grad = backward(x, head, *y, cfg)?;
    let frozen = if cfg.cgd {
        Some(characteristic_values(x, head, cfg)?)
    } else {
        None
    };
    let eval = |x: &[f64], head: &HeadState| match &frozen {
        Some(f) => loss_forward_detached(x, head, *y, cfg, f),
        None => loss_forward(x, head, *y, cfg),
    };

    let fd_x = central_difference(|p| eval(p, head), x, step)?;
    let (k, d) = (head.num_classes(), head.dim());
    let fd_w = central_difference(
        |p| {
            let w = Matrix::from_vec(k, d, p.to_vec())?;
            eval(x, &HeadState::from_raw(w))
        },
        head.weights().as_slice(),
        step,
    )?;

    let mut analytic = grad.grad_feature.clone();
    analytic.extend_from_slice(grad.grad_weights.as_slice());
    let mut numeric = fd_x;
    numeric.extend(fd_w);
    Ok(relative_error(&analytic, &numeric))
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn random_margin(rng: &mut ChaCha8Rng, family: Family) -> Result<MarginSpec> {
    match family {
        Family::NormFace => Ok(MarginSpec::norm_face()),
        Family::CosFace | Family::ArcFace => MarginSpec::new(family, rng.random_range(0.1..0.5)),
        Family::SphereFace | Family::SphereFaceRv1 | Family::SphereFaceRv2 => {
            MarginSpec::new(family, rng.random_range(1.1..2.0))
        }
        Family::ExpMargin => MarginSpec::new(family, rng.random_range(1.5..3.0)),
        Family::CombinedMargin => MarginSpec::combined(
            rng.random_range(1.0..1.5),
            rng.random_range(0.0..0.3),
            rng.random_range(0.0..0.2),
        ),
    }
}

/// Draws a configuration away from the cosine clamp, from ψ's kink and,
/// for ExpMargin, inside (0, π/2) and away from the cusp of |cos 2θ|^(m−1).
fn random_case(
    rng: &mut ChaCha8Rng,
    family: Family,
    scheme_idx: usize,
    cgd: bool,
    opts: &GradcheckOptions,
) -> Result<Case> {
    let (k, d) = (opts.classes, opts.dim);
    loop {
        let margin = random_margin(rng, family)?;
        let positive = family == Family::ExpMargin;
        let draw = |rng: &mut ChaCha8Rng| {
            let mut v = gaussian(rng, d);
            if positive {
                v.iter_mut().for_each(|e| *e = e.abs());
            }
            v
        };
        let dir = draw(rng);
        let rows: Vec<Vec<f64>> = (0..k).map(|_| draw(rng)).collect();
        let head = HeadState::new(Matrix::from_rows(&rows)?)?;
        let y = rng.random_range(0..k);
        let magnitude = rng.random_range(1.0..8.0);
        let n = norm(&dir);
        let x: Vec<f64> = dir.iter().map(|v| v * magnitude / n).collect();
        let scheme = match scheme_idx {
            0 => FnScheme::Nfn,
            1 => FnScheme::Hfn {
                s: rng.random_range(2.0..32.0),
            },
            _ => FnScheme::Sfn {
                s: rng.random_range(2.0..16.0),
                t: rng.random_range(0.01..1.0),
            },
        };

        let thetas: Vec<f64> = head
            .weights()
            .iter_rows()
            .map(|w| {
                (crate::linalg::dot(&x, w) / magnitude)
                    .clamp(-1.0, 1.0)
                    .acos()
            })
            .collect();
        let near_clamp = thetas.iter().any(|t| t.cos().abs() > 1.0 - 1e-5);
        let near_kink = !cgd
            && margin
                .kink()
                .is_some_and(|kk| (thetas[y] - kk).abs() < 1e-4);
        let exp_bad = family == Family::ExpMargin
            && (thetas
                .iter()
                .any(|&t| t > std::f64::consts::FRAC_PI_2 - 1e-3)
                || (thetas[y] - std::f64::consts::FRAC_PI_4).abs() < 1e-3);
        if near_clamp || near_kink || exp_bad {
            continue;
        }
        return Ok(Case {
            x,
            head,
            y,
            cfg: LossConfig::new(margin, scheme, cgd)?,
        });
    }
}
