//! Experiment configuration files.
//!
//! Relative paths are resolved against the directory holding the config
//! file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dpbn_core::{ActivationKind, Decoder, GradMode, Hyperparams, NetworkConfig};
use serde::Deserialize;

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum RangeName {
    Reals,
    Positives,
    Unit,
}

impl RangeName {
    /// The MaxEnt kind used for training data in this range.
    pub fn kind(self) -> ActivationKind {
        match self {
            RangeName::Reals => ActivationKind::linear(),
            RangeName::Positives => ActivationKind::trunc_gauss(),
            RangeName::Unit => ActivationKind::Ted,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum DecoderName {
    Dpbn,
    Aec,
}

impl From<DecoderName> for Decoder {
    fn from(d: DecoderName) -> Self {
        match d {
            DecoderName::Dpbn => Decoder::Dpbn,
            DecoderName::Aec => Decoder::Aec,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum GradModeName {
    Implicit,
    Unrolled,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    #[serde(default = "default_classes")]
    pub classes: Vec<u8>,
    #[serde(default = "default_per_class")]
    pub per_class_train: usize,
    /// Only the first `test_limit` test samples are used when set.
    pub test_limit: Option<usize>,
    /// Dither seed for the training split; the test split uses seed + 1.
    #[serde(default = "default_dither_seed")]
    pub dither_seed: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub range: RangeName,
    pub nodes: Vec<usize>,
    /// σ² of every layer's input activation, bottom-up. Only meaningful
    /// for the reals and positives ranges.
    pub sigma_sq: Option<Vec<f64>>,
    pub decoder: DecoderName,
    #[serde(default = "one")]
    pub init_scale: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub l2_weight: f64,
    #[serde(default = "default_grad_mode")]
    pub grad_mode: GradModeName,
    #[serde(default = "default_unroll")]
    pub unroll_k: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

fn default_classes() -> Vec<u8> {
    vec![3, 8, 9]
}
fn default_per_class() -> usize {
    500
}
fn default_dither_seed() -> u64 {
    1
}
fn one() -> f64 {
    1.0
}
fn default_momentum() -> f64 {
    0.9
}
fn default_batch() -> usize {
    20
}
fn default_grad_mode() -> GradModeName {
    GradModeName::Implicit
}
fn default_unroll() -> usize {
    3
}
fn default_eval_every() -> usize {
    1
}

impl ExperimentConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", e.message().trim()))?;
        for p in [
            &mut cfg.data.train_images,
            &mut cfg.data.train_labels,
            &mut cfg.data.test_images,
            &mut cfg.data.test_labels,
            &mut cfg.output.dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.network()?;
        cfg.hyperparams().validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn network(&self) -> Result<NetworkConfig> {
        let m = &self.model;
        if m.nodes.is_empty() {
            bail!("model.nodes must list at least one layer");
        }
        let base = m.range.kind();
        let kinds = match &m.sigma_sq {
            None => vec![base; m.nodes.len()],
            Some(s) => {
                if m.range == RangeName::Unit {
                    bail!("model.sigma_sq does not apply to the unit range");
                }
                if s.len() != m.nodes.len() {
                    bail!("model.sigma_sq has {} entries for {} layers", s.len(), m.nodes.len());
                }
                s.iter().map(|&v| base.with_sigma_sq(v)).collect::<dpbn_core::Result<Vec<_>>>()?
            }
        };
        Ok(NetworkConfig { input_dim: 784, nodes: m.nodes.clone(), kinds, init_scale: m.init_scale })
    }

    /// The kind of the visible data.
    pub fn data_kind(&self) -> Result<ActivationKind> {
        Ok(self.network()?.kinds[0])
    }

    pub fn decoder(&self) -> Decoder {
        self.model.decoder.into()
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let t = &self.train;
        Hyperparams {
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            batch_size: t.batch_size,
            epochs: t.epochs,
            l2_weight: t.l2_weight,
            grad_mode: match t.grad_mode {
                GradModeName::Implicit => GradMode::ImplicitAdjoint,
                GradModeName::Unrolled => GradMode::UnrolledLastK(t.unroll_k),
            },
            seed: self.seed,
            eval_every: t.eval_every,
        }
    }
}
