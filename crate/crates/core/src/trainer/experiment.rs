use std::f64::consts::PI;

use super::model::ModelState;
use super::synthetic::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::margins::{Angle, Family, MarginSpec};

const BISECTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMargin {
    /// Class-1 boundary, as an angle from W₁.
    pub boundary_1: f64,
    /// Class-2 boundary, as an angle from W₁.
    pub boundary_2: f64,
    pub empirical: f64,
    pub theoretical: f64,
}

/// Root of `f` in `[lo, hi]` by bisection. Requires a sign change.
fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, iters: usize) -> Result<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if !(flo.signum() != fhi.signum()) || !flo.is_finite() || !fhi.is_finite() {
        return Err(Error::NoRoot);
    }
    let lo_positive = flo > 0.0;
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < BISECTION_TOL {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Two unit weights at angle `theta_12` with multiplicative margin `m`.
///
/// A feature between them at angle θ₁ from W₁ and θ₂ = θ₁₂ − θ₁ from W₂ is
/// assigned to class 1 once ψ(θ₁) = cos θ₂, and to class 2 once
/// ψ(θ₂) = cos θ₁. Each boundary is found by bisection on `[0, min(θ₁₂, π/m)]`;
/// the empirical margin is the angular gap between them.
pub fn binary_margin_experiment(m: f64, theta_12: Angle, iters: usize) -> Result<BinaryMargin> {
    if !(1.0..=2.0).contains(&m) {
        return Err(Error::Domain {
            what: "m",
            value: m,
        });
    }
    let t12 = theta_12.radians();
    if !(t12 > 0.0 && t12 < PI) {
        return Err(Error::Domain {
            what: "theta_12",
            value: t12,
        });
    }
    let spec = MarginSpec::new(Family::SphereFace, m)?;
    let hi = t12.min(PI / m);
    let boundary = |own: f64| spec.psi_raw(own) - (t12 - own).cos();
    let r1 = bisect(boundary, 0.0, hi, iters)?;
    // The class-2 equation is the same with the roles swapped, so its root
    // measured from W₂ is r1 as well.
    let boundary_2 = t12 - r1;
    Ok(BinaryMargin {
        boundary_1: r1,
        boundary_2,
        empirical: boundary_2 - r1,
        theoretical: (m - 1.0) / (m + 1.0) * t12,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats {
    pub count: usize,
    pub mean_angle: f64,
    pub max_angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    /// Largest angle from any embedding to its class mean direction.
    pub max_intra: f64,
    /// Smallest angle between two class mean directions.
    pub min_inter: f64,
    pub per_class: Vec<ClassStats>,
}

impl Separation {
    /// `min_inter − max_intra`; positive when the classes are separated by a
    /// margin.
    pub fn gap(&self) -> f64 {
        self.min_inter - self.max_intra
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0).acos()
}

/// Angular statistics of the model's embeddings grouped by training label.
/// Class means are the normalized sum of normalized embeddings; classes
/// without samples are skipped.
pub fn measure_angular_separation(model: &ModelState, dataset: &Dataset) -> Separation {
    let embeds: Vec<Vec<f64>> = dataset
        .inputs
        .iter()
        .enumerate()
        .map(|(i, x)| unit(&model.embed(i, x)))
        .collect();
    let d = embeds.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; d]; dataset.classes];
    let mut counts = vec![0usize; dataset.classes];
    for (e, &c) in embeds.iter().zip(&dataset.labels) {
        sums[c].iter_mut().zip(e).for_each(|(s, v)| *s += v);
        counts[c] += 1;
    }
    let means: Vec<Option<Vec<f64>>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| (n > 0 && norm(s) > 0.0).then(|| unit(s)))
        .collect();

    let mut per_class = vec![
        ClassStats {
            count: 0,
            mean_angle: 0.0,
            max_angle: 0.0,
        };
        dataset.classes
    ];
    for (e, &c) in embeds.iter().zip(&dataset.labels) {
        if let Some(mean) = &means[c] {
            let a = angle(e, mean);
            let st = &mut per_class[c];
            st.count += 1;
            st.mean_angle += a;
            st.max_angle = st.max_angle.max(a);
        }
    }
    for st in &mut per_class {
        if st.count > 0 {
            st.mean_angle /= st.count as f64;
        }
    }

    let present: Vec<&Vec<f64>> = means.iter().flatten().collect();
    let mut min_inter = PI;
    for i in 0..present.len() {
        for j in 0..i {
            min_inter = min_inter.min(angle(present[i], present[j]));
        }
    }
    Separation {
        max_intra: per_class.iter().map(|s| s.max_angle).fold(0.0, f64::max),
        min_inter,
        per_class,
    }
}
