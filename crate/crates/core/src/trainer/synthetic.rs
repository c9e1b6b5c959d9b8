use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// Concentrations at or above this collapse every class onto its mean.
pub const KAPPA_POINT_MASS: f64 = 1e9;

pub const MAX_REJECTION_ATTEMPTS: usize = 100_000;

/// Recipe for a labelled point cloud on the hypersphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    /// Spread around each class mean; the tangent-space perturbation has
    /// standard deviation `1/√κ`. `0` gives uniform directions.
    pub kappa: f64,
    pub seed: u64,
    pub magnitude_range: (f64, f64),
    /// Fraction of samples whose label is replaced by a different class.
    pub label_noise: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if self.classes < 2 {
            return bad(format!("classes must be >= 2, got {}", self.classes));
        }
        if self.dim < 2 {
            return bad(format!("dim must be >= 2, got {}", self.dim));
        }
        if self.n_per_class == 0 {
            return bad("n_per_class must be positive".into());
        }
        if !(self.kappa >= 0.0) {
            return bad(format!("kappa must be >= 0, got {}", self.kappa));
        }
        let (lo, hi) = self.magnitude_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!(
                "magnitude range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            ));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad(format!(
                "label_noise must be in [0, 1], got {}",
                self.label_noise
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    /// Training labels, after label noise.
    pub labels: Vec<usize>,
    /// Class each sample was actually drawn from.
    pub source_labels: Vec<usize>,
    pub means: Vec<Vec<f64>>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// Copy with every input multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for x in &mut out.inputs {
            x.iter_mut().for_each(|v| *v *= factor);
        }
        out
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0).acos()
}

/// Draws class means with pairwise angle ≥ π/(2K), then samples around
/// them. Samples are ordered class by class.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    generate_with_limit(spec, MAX_REJECTION_ATTEMPTS)
}

fn generate_with_limit(spec: &SyntheticSpec, max_attempts: usize) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (k, d) = (spec.classes, spec.dim);
    let min_sep = PI / (2.0 * k as f64);

    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while means.len() < k {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::RejectionFailure {
                classes: k,
                attempts,
            });
        }
        let cand = unit_gaussian(&mut rng, d);
        if means.iter().all(|m| angle(m, &cand) >= min_sep) {
            means.push(cand);
        }
    }

    let sigma = if spec.kappa > 0.0 {
        spec.kappa.sqrt().recip()
    } else {
        0.0
    };
    let (lo, hi) = spec.magnitude_range;
    let n = k * spec.n_per_class;
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..spec.n_per_class {
            let dir = if spec.kappa >= KAPPA_POINT_MASS {
                mean.clone()
            } else if spec.kappa == 0.0 {
                unit_gaussian(&mut rng, d)
            } else {
                let g: Vec<f64> = (0..d)
                    .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let radial = dot(&g, mean);
                let p: Vec<f64> = mean
                    .iter()
                    .zip(&g)
                    .map(|(m, gi)| m + gi - radial * m)
                    .collect();
                let pn = norm(&p);
                p.into_iter().map(|v| v / pn).collect()
            };
            let r = if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            };
            inputs.push(dir.into_iter().map(|v| v * r).collect());
            labels.push(c);
        }
    }

    let source_labels = labels.clone();
    let flips = (spec.label_noise * n as f64).round() as usize;
    if flips > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in &order[..flips] {
            let shift = rng.random_range(1..k);
            labels[i] = (labels[i] + shift) % k;
        }
    }

    Ok(Dataset {
        inputs,
        labels,
        source_labels,
        means,
        classes: k,
    })
}
