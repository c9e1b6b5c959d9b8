use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::HeadState;
use crate::linalg::{dot, norm, Matrix};

/// How inputs are turned into embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedKind {
    /// The input is the embedding; only the head trains.
    Fixed,
    /// One free vector per training sample, initialized to its input.
    Free,
    /// `e = A x` with `A` initialized at the identity.
    Linear,
    /// `e = W₂·tanh(W₁ x + b₁) + b₂`.
    Mlp { hidden: usize },
}

impl EmbedKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Fixed => "fixed",
            Self::Free => "free",
            Self::Linear => "linear",
            Self::Mlp { .. } => "mlp",
        }
    }
}

/// Learnable embedding parameters, stored flat.
///
/// Layouts: `Free` is `n × d` row-major; `Linear` is `A` (`d × in`);
/// `Mlp` is `W₁ (h × in)`, `b₁ (h)`, `W₂ (d × h)`, `b₂ (d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub(crate) kind: EmbedKind,
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) params: Vec<f64>,
}

/// Per-sample embedding gradient.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum EmbedGrad {
    Row { index: usize, grad: Vec<f64> },
    Dense(Vec<f64>),
}

pub(crate) struct Cache {
    hidden: Vec<f64>,
}

impl Embedding {
    pub(crate) fn init(
        kind: EmbedKind,
        inputs: &[Vec<f64>],
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Self>> {
        let in_dim = inputs.first().map_or(0, Vec::len);
        let out_dim = in_dim;
        let params = match kind {
            EmbedKind::Fixed => return Ok(None),
            EmbedKind::Free => inputs.iter().flatten().copied().collect(),
            EmbedKind::Linear => Matrix::identity(in_dim).as_slice().to_vec(),
            EmbedKind::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::InvalidParam(
                        "mlp hidden width must be positive".into(),
                    ));
                }
                let mut p =
                    Vec::with_capacity(hidden * in_dim + hidden + out_dim * hidden + out_dim);
                let s1 = (in_dim as f64).sqrt().recip();
                p.extend((0..hidden * in_dim).map(|_| s1 * rng.sample::<f64, _>(StandardNormal)));
                p.extend(std::iter::repeat_n(0.0, hidden));
                let s2 = (hidden as f64).sqrt().recip();
                p.extend((0..out_dim * hidden).map(|_| s2 * rng.sample::<f64, _>(StandardNormal)));
                p.extend(std::iter::repeat_n(0.0, out_dim));
                p
            }
        };
        Ok(Some(Self {
            kind,
            in_dim,
            out_dim,
            params,
        }))
    }

    pub fn kind(&self) -> EmbedKind {
        self.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub(crate) fn from_parts(
        kind: EmbedKind,
        in_dim: usize,
        out_dim: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let expected = match kind {
            EmbedKind::Fixed => 0,
            EmbedKind::Free => {
                if out_dim == 0 || !params.len().is_multiple_of(out_dim) {
                    return Err(Error::Format(
                        "free embedding size is not a multiple of d".into(),
                    ));
                }
                params.len()
            }
            EmbedKind::Linear => out_dim * in_dim,
            EmbedKind::Mlp { hidden } => hidden * in_dim + hidden + out_dim * hidden + out_dim,
        };
        if params.len() != expected {
            return Err(Error::Shape {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            kind,
            in_dim,
            out_dim,
            params,
        })
    }

    pub(crate) fn forward(&self, index: usize, input: &[f64]) -> (Vec<f64>, Cache) {
        let d = self.out_dim;
        match self.kind {
            EmbedKind::Fixed => (input.to_vec(), Cache { hidden: Vec::new() }),
            EmbedKind::Free => (
                self.params[index * d..(index + 1) * d].to_vec(),
                Cache { hidden: Vec::new() },
            ),
            EmbedKind::Linear => {
                let out = self
                    .params
                    .chunks_exact(self.in_dim)
                    .map(|r| dot(r, input))
                    .collect();
                (out, Cache { hidden: Vec::new() })
            }
            EmbedKind::Mlp { hidden } => {
                let (w1, rest) = self.params.split_at(hidden * self.in_dim);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(d * hidden);
                let h: Vec<f64> = w1
                    .chunks_exact(self.in_dim)
                    .zip(b1)
                    .map(|(r, b)| (dot(r, input) + b).tanh())
                    .collect();
                let out = w2
                    .chunks_exact(hidden)
                    .zip(b2)
                    .map(|(r, b)| dot(r, &h) + b)
                    .collect();
                (out, Cache { hidden: h })
            }
        }
    }

    pub(crate) fn backward(
        &self,
        index: usize,
        input: &[f64],
        cache: &Cache,
        grad_out: &[f64],
    ) -> Option<EmbedGrad> {
        match self.kind {
            EmbedKind::Fixed => None,
            EmbedKind::Free => Some(EmbedGrad::Row {
                index,
                grad: grad_out.to_vec(),
            }),
            EmbedKind::Linear => {
                let mut g = Vec::with_capacity(self.params.len());
                for go in grad_out {
                    g.extend(input.iter().map(|x| go * x));
                }
                Some(EmbedGrad::Dense(g))
            }
            EmbedKind::Mlp { hidden } => {
                let d = self.out_dim;
                let w2 = &self.params
                    [hidden * self.in_dim + hidden..hidden * self.in_dim + hidden + d * hidden];
                let h = &cache.hidden;
                // Pre-activation gradient of the hidden layer.
                let mut ga = vec![0.0; hidden];
                for (row, go) in w2.chunks_exact(hidden).zip(grad_out) {
                    for (a, w) in ga.iter_mut().zip(row) {
                        *a += go * w;
                    }
                }
                for (a, hv) in ga.iter_mut().zip(h) {
                    *a *= 1.0 - hv * hv;
                }
                let mut g = Vec::with_capacity(self.params.len());
                for a in &ga {
                    g.extend(input.iter().map(|x| a * x));
                }
                g.extend_from_slice(&ga);
                for go in grad_out {
                    g.extend(h.iter().map(|hv| go * hv));
                }
                g.extend_from_slice(grad_out);
                Some(EmbedGrad::Dense(g))
            }
        }
    }
}

/// Trainable state: optional embedding, classifier head and momentum
/// buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub embedding: Option<Embedding>,
    pub head: HeadState,
    pub(crate) head_velocity: Matrix,
    pub(crate) embed_velocity: Vec<f64>,
}

impl ModelState {
    pub fn new(embedding: Option<Embedding>, head: HeadState) -> Self {
        let head_velocity = Matrix::zeros(head.num_classes(), head.dim());
        let embed_velocity = vec![0.0; embedding.as_ref().map_or(0, |e| e.params.len())];
        Self {
            embedding,
            head,
            head_velocity,
            embed_velocity,
        }
    }

    /// Embedding of training sample `index` with input `input`.
    pub fn embed(&self, index: usize, input: &[f64]) -> Vec<f64> {
        match &self.embedding {
            Some(e) => e.forward(index, input).0,
            None => input.to_vec(),
        }
    }

    /// Largest deviation of any head row norm from 1.
    pub fn head_norm_error(&self) -> f64 {
        self.head
            .weights()
            .iter_rows()
            .map(|r| (norm(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::gradcheck::{central_difference, relative_error};

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = vec![vec![0.3, -0.8, 1.1]];
        let emb = Embedding::init(EmbedKind::Mlp { hidden: 5 }, &inputs, &mut rng)
            .unwrap()
            .unwrap();
        let mut emb = emb;
        emb.params
            .iter_mut()
            .enumerate()
            .for_each(|(i, p)| *p += 0.01 * i as f64);
        let probe = [0.7, -0.2, 0.4];
        let (_, cache) = emb.forward(0, &inputs[0]);
        let Some(EmbedGrad::Dense(g)) = emb.backward(0, &inputs[0], &cache, &probe) else {
            panic!("dense gradient expected");
        };
        let fd = central_difference(
            |p| {
                let e = Embedding {
                    params: p.to_vec(),
                    ..emb.clone()
                };
                Ok(dot(&e.forward(0, &inputs[0]).0, &probe))
            },
            &emb.params,
            1e-6,
        )
        .unwrap();
        assert!(relative_error(&g, &fd) < 1e-7);
    }

    #[test]
    fn linear_starts_at_identity_and_free_copies_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inputs = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        let lin = Embedding::init(EmbedKind::Linear, &inputs, &mut rng)
            .unwrap()
            .unwrap();
        assert_eq!(lin.forward(1, &inputs[1]).0, inputs[1]);
        let free = Embedding::init(EmbedKind::Free, &inputs, &mut rng)
            .unwrap()
            .unwrap();
        assert_eq!(free.forward(1, &[9.0, 9.0]).0, inputs[1]);
        assert!(Embedding::init(EmbedKind::Fixed, &inputs, &mut rng)
            .unwrap()
            .is_none());
    }
}
