use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::model::{EmbedGrad, EmbedKind, Embedding, ModelState};
use super::synthetic::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{clamp_cos, HeadState};
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::loss::{loss_backward_lenient, LossConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub lr: f64,
    pub momentum: f64,
    pub iters: usize,
    pub batch: usize,
    /// Steps at which the learning rates are multiplied by `lr_decay_factor`.
    pub lr_decay_steps: Vec<usize>,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub embed: EmbedKind,
    /// Learning rate for embedding parameters.
    pub embed_lr: f64,
    /// Worker threads for per-sample gradients; results are summed in batch
    /// order, so the value does not change the outcome.
    pub threads: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(self.embed_lr >= 0.0 && self.embed_lr.is_finite()) {
            return bad(format!(
                "embed_lr must be finite and >= 0, got {}",
                self.embed_lr
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad(format!(
                "lr_decay_factor must be positive, got {}",
                self.lr_decay_factor
            ));
        }
        self.loss.scheme.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    /// Mean loss over the batch, evaluated before the update.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    pub final_accuracy: f64,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Mean loss over the last `n` recorded steps.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let n = n.min(self.records.len()).max(1);
        let tail = &self.records[self.records.len().saturating_sub(n)..];
        tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64
    }
}

fn random_unit_rows(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Result<HeadState> {
    let data = (0..k * d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    HeadState::new(Matrix::from_vec(k, d, data)?)
}

/// Fresh model for `dataset`: head rows uniform on the sphere, embedding
/// initialized per [`EmbedKind`].
pub fn init_model(dataset: &Dataset, cfg: &TrainConfig) -> Result<ModelState> {
    if dataset.is_empty() {
        return Err(Error::EmptySet("training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let head = random_unit_rows(&mut rng, dataset.classes, dataset.dim())?;
    let embedding = Embedding::init(cfg.embed, &dataset.inputs, &mut rng)?;
    Ok(ModelState::new(embedding, head))
}

/// Trains a fresh model. See [`train_model`].
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<(ModelState, TrainHistory)> {
    let mut model = init_model(dataset, cfg)?;
    let history = train_model(&mut model, dataset, cfg)?;
    Ok((model, history))
}

struct SampleResult {
    loss: f64,
    grad_w: Matrix,
    grad_embed: Option<EmbedGrad>,
}

fn sample_step(
    model: &ModelState,
    dataset: &Dataset,
    index: usize,
    cfg: &LossConfig,
) -> Result<SampleResult> {
    let input = &dataset.inputs[index];
    let (e, cache) = match &model.embedding {
        Some(emb) => {
            let (e, c) = emb.forward(index, input);
            (e, Some(c))
        }
        None => (input.clone(), None),
    };
    let g = loss_backward_lenient(&e, &model.head, dataset.labels[index], cfg)?;
    let grad_embed = match (&model.embedding, cache) {
        (Some(emb), Some(c)) => emb.backward(index, input, &c, &g.grad_feature),
        _ => None,
    };
    Ok(SampleResult {
        loss: g.loss,
        grad_w: g.grad_weights,
        grad_embed,
    })
}

/// Mini-batch SGD with classical momentum (`v ← μv − lr·g`, `p ← p + v`).
///
/// The head gradient and dense embedding gradients are batch means. A free
/// per-sample embedding only appears in its own loss term, so it is updated
/// with that term's gradient. Head rows are renormalized after every step.
///
/// Fails with [`Error::Divergence`] when the mean loss turns non-finite, or
/// with a NaN loss when an update overflows the parameters.
pub fn train_model(
    model: &mut ModelState,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptySet("training set"));
    }
    let n = dataset.len();
    let batch = cfg.batch.min(n);
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::InvalidParam(e.to_string()))?,
        )
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_BA7C_0000_0001);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut lr = cfg.lr;
    let mut embed_lr = cfg.embed_lr;
    let mut records = Vec::with_capacity(cfg.iters);

    for step in 0..cfg.iters {
        if cfg.lr_decay_steps.contains(&step) {
            lr *= cfg.lr_decay_factor;
            embed_lr *= cfg.lr_decay_factor;
        }
        if cursor + batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;

        let eval = |&i: &usize| sample_step(model, dataset, i, &cfg.loss);
        let results: Vec<Result<SampleResult>> = match &pool {
            Some(p) => p.install(|| idx.par_iter().map(eval).collect()),
            None => idx.iter().map(eval).collect(),
        };

        let inv_b = 1.0 / batch as f64;
        let mut loss_sum = 0.0;
        let mut grad_w = Matrix::zeros(model.head.num_classes(), model.head.dim());
        let mut dense = vec![0.0; model.embed_velocity.len()];
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for r in results {
            let r = r?;
            loss_sum += r.loss;
            grad_w.add_scaled(1.0, &r.grad_w);
            match r.grad_embed {
                Some(EmbedGrad::Dense(g)) => axpy(1.0, &g, &mut dense),
                Some(EmbedGrad::Row { index, grad }) => rows.push((index, grad)),
                None => {}
            }
        }
        let mean_loss = loss_sum * inv_b;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: mean_loss,
            });
        }
        records.push(StepRecord {
            step,
            lr,
            loss: mean_loss,
        });

        let mu = cfg.momentum;
        for (v, g) in model
            .head_velocity
            .as_mut_slice()
            .iter_mut()
            .zip(grad_w.as_slice())
        {
            *v = mu * *v - lr * g * inv_b;
        }
        let vel = model.head_velocity.clone();
        model.head.weights_mut().add_scaled(1.0, &vel);
        if !all_finite(model.head.weights().as_slice()) {
            return Err(Error::Divergence {
                step,
                loss: f64::NAN,
            });
        }
        model.head.renormalize()?;

        if let Some(emb) = model.embedding.as_mut() {
            match emb.kind {
                EmbedKind::Free => {
                    let d = emb.out_dim;
                    for (i, g) in rows {
                        let v = &mut model.embed_velocity[i * d..(i + 1) * d];
                        let p = &mut emb.params[i * d..(i + 1) * d];
                        for ((vj, pj), gj) in v.iter_mut().zip(p.iter_mut()).zip(&g) {
                            *vj = mu * *vj - embed_lr * gj;
                            *pj += *vj;
                        }
                    }
                }
                EmbedKind::Linear | EmbedKind::Mlp { .. } => {
                    for ((v, p), g) in model
                        .embed_velocity
                        .iter_mut()
                        .zip(emb.params.iter_mut())
                        .zip(&dense)
                    {
                        *v = mu * *v - embed_lr * g * inv_b;
                        *p += *v;
                    }
                }
                EmbedKind::Fixed => {}
            }
            if !all_finite(&emb.params) {
                return Err(Error::Divergence {
                    step,
                    loss: f64::NAN,
                });
            }
        }
    }

    Ok(TrainHistory {
        records,
        final_accuracy: accuracy(model, dataset, cfg)?,
    })
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Fraction of samples whose largest η(θ_i) belongs to their label.
pub fn accuracy(model: &ModelState, dataset: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptySet("dataset"));
    }
    let margin = &cfg.loss.margin;
    let correct = dataset
        .inputs
        .iter()
        .enumerate()
        .filter(|(i, x)| {
            let e = model.embed(*i, x);
            let ne = norm(&e);
            let best = model
                .head
                .weights()
                .iter_rows()
                .map(|w| margin.eta_raw(clamp_cos(dot(&e, w) / (ne * norm(w))).acos()))
                .enumerate()
                .fold((usize::MAX, f64::NEG_INFINITY), |acc, (c, v)| {
                    if v > acc.1 {
                        (c, v)
                    } else {
                        acc
                    }
                });
            best.0 == dataset.labels[*i]
        })
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}
