//! Run configuration: a TOML document with one table per concern.
//!
//! Every key has a default, unknown keys are rejected, and the fully
//! resolved document is what gets echoed back to the user.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use hsmargin::trainer::{EmbedKind, SyntheticSpec, TrainConfig};
use hsmargin::{Family, FnScheme, LossConfig, MarginSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginSection {
    pub family: String,
    pub m: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

impl Default for MarginSection {
    fn default() -> Self {
        Self {
            family: "sphereface_r_v2".into(),
            m: 1.4,
            m1: 1.0,
            m2: 0.3,
            m3: 0.2,
        }
    }
}

impl MarginSection {
    pub fn spec(&self) -> Result<MarginSpec, CliError> {
        let family: Family = self.family.parse().map_err(CliError::config)?;
        let spec = match family {
            Family::NormFace => MarginSpec::norm_face(),
            Family::CombinedMargin => MarginSpec::combined(self.m1, self.m2, self.m3)?,
            f => MarginSpec::new(f, self.m)?,
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FnSection {
    /// `nfn`, `hfn` or `sfn`.
    pub scheme: String,
    pub s: f64,
    pub t: f64,
}

impl Default for FnSection {
    fn default() -> Self {
        Self {
            scheme: "hfn".into(),
            s: 16.0,
            t: 0.1,
        }
    }
}

impl FnSection {
    pub fn scheme(&self) -> Result<FnScheme, CliError> {
        Ok(match self.scheme.as_str() {
            "nfn" => FnScheme::Nfn,
            "hfn" => FnScheme::hfn(self.s)?,
            "sfn" => FnScheme::sfn(self.s, self.t)?,
            other => {
                return Err(CliError::config(format!(
                    "unknown fn scheme {other:?} (nfn, hfn, sfn)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub cgd: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        Self { cgd: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub kappa: f64,
    pub seed: u64,
    pub magnitude_lo: f64,
    pub magnitude_hi: f64,
    pub label_noise: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            classes: 8,
            dim: 2,
            n_per_class: 300,
            kappa: 30.0,
            seed: 7,
            magnitude_lo: 1.0,
            magnitude_hi: 1.0,
            label_noise: 0.0,
        }
    }
}

impl DataSection {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes,
            dim: self.dim,
            n_per_class: self.n_per_class,
            kappa: self.kappa,
            seed: self.seed,
            magnitude_range: (self.magnitude_lo, self.magnitude_hi),
            label_noise: self.label_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub lr: f64,
    pub momentum: f64,
    pub iters: usize,
    pub batch: usize,
    pub lr_decay_steps: Vec<usize>,
    pub lr_decay_factor: f64,
    pub seed: u64,
    /// `fixed`, `free`, `linear` or `mlp`.
    pub embed: String,
    pub hidden: usize,
    pub embed_lr: f64,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            iters: 3000,
            batch: 64,
            lr_decay_steps: vec![2000],
            lr_decay_factor: 0.1,
            seed: 7,
            embed: "free".into(),
            hidden: 64,
            embed_lr: 0.03,
        }
    }
}

impl TrainerSection {
    pub fn embed_kind(&self) -> Result<EmbedKind, CliError> {
        Ok(match self.embed.as_str() {
            "fixed" => EmbedKind::Fixed,
            "free" => EmbedKind::Free,
            "linear" => EmbedKind::Linear,
            "mlp" => EmbedKind::Mlp {
                hidden: self.hidden,
            },
            other => {
                return Err(CliError::config(format!(
                    "unknown embed {other:?} (fixed, free, linear, mlp)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    /// Exponent of the magnitude factor in the pair score; 0 is cosine.
    pub t: f64,
    pub auc_x: Vec<f64>,
    pub far_levels: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gallery: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probes: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distractors: Option<PathBuf>,
    pub fpir_levels: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc_out: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            embeddings: None,
            pairs: None,
            t: 0.0,
            auc_x: vec![0.0005, 0.001, 0.01, 1.0],
            far_levels: vec![1e-4, 1e-3, 1e-2],
            gallery: None,
            probes: None,
            distractors: None,
            fpir_levels: vec![1e-2, 1e-1],
            roc_out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSection {
    pub grid: usize,
    /// Curves for `plot-delta`, each `family:m`, `normface` or
    /// `combined:m1:m2:m3`.
    pub curves: Vec<String>,
    /// Angle of the competing class for `plot-q`.
    pub theta_other: f64,
    /// Scales for `plot-q`, one column each.
    pub s: Vec<f64>,
}

impl Default for PlotSection {
    fn default() -> Self {
        Self {
            grid: 181,
            curves: [
                "normface",
                "cosface:0.4",
                "arcface:0.5",
                "sphereface:1.4",
                "sphereface_r_v1:1.4",
                "sphereface_r_v2:1.4",
            ]
            .map(String::from)
            .to_vec(),
            theta_other: PI / 2.0,
            s: vec![1.0, 10.0, 30.0, 64.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Multipliers for `margin-exp`.
    pub m: Vec<f64>,
    /// Weight angles for `margin-exp`.
    pub theta_12: Vec<f64>,
    pub bisection_iters: usize,
    /// Target angle for `scale-limit`.
    pub theta_y: f64,
    /// Non-target angles for `scale-limit`.
    pub theta_others: Vec<f64>,
    pub s_grid: Vec<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            m: vec![1.4],
            theta_12: vec![PI / 2.0],
            bisection_iters: 200,
            theta_y: PI / 3.0,
            theta_others: vec![PI / 2.0],
            s_grid: vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub seed: u64,
    pub trials: usize,
    pub dim: usize,
    pub classes: usize,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            dim: 8,
            classes: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub margin: MarginSection,
    #[serde(rename = "fn")]
    pub fn_: FnSection,
    pub loss: LossSection,
    pub data: DataSection,
    pub trainer: TrainerSection,
    pub eval: EvalSection,
    pub plot: PlotSection,
    pub experiment: ExperimentSection,
    pub gradcheck: GradcheckSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Replaces every seed in the document.
    pub fn override_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.trainer.seed = seed;
        self.gradcheck.seed = seed;
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn loss_config(&self) -> Result<LossConfig, CliError> {
        Ok(LossConfig::new(
            self.margin.spec()?,
            self.fn_.scheme()?,
            self.loss.cgd,
        )?)
    }

    pub fn train_config(&self, threads: usize) -> Result<TrainConfig, CliError> {
        let t = &self.trainer;
        let cfg = TrainConfig {
            loss: self.loss_config()?,
            lr: t.lr,
            momentum: t.momentum,
            iters: t.iters,
            batch: t.batch,
            lr_decay_steps: t.lr_decay_steps.clone(),
            lr_decay_factor: t.lr_decay_factor,
            seed: t.seed,
            embed: t.embed_kind()?,
            embed_lr: t.embed_lr,
            threads,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses a `plot-delta` curve label.
pub fn parse_curve(label: &str) -> Result<MarginSpec, CliError> {
    let parts: Vec<&str> = label.split(':').collect();
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| CliError::config(format!("curve {label:?}: bad number {s:?}")))
    };
    let family: Family = parts[0].parse().map_err(CliError::config)?;
    let spec = match (family, &parts[1..]) {
        (Family::NormFace, []) => MarginSpec::norm_face(),
        (Family::CombinedMargin, [a, b, c]) => MarginSpec::combined(num(a)?, num(b)?, num(c)?)?,
        (f, [m]) if f != Family::NormFace && f != Family::CombinedMargin => {
            MarginSpec::new(f, num(m)?)?
        }
        _ => {
            return Err(CliError::config(format!(
                "curve {label:?}: expected family:m, normface or combined:m1:m2:m3"
            )))
        }
    };
    Ok(spec)
}
