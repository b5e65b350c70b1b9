//! Run configuration: a flat TOML table of `key = value` lines, overridden
//! key by key by command-line flags.
//!
//! Every run writes its resolved configuration as `run.toml` next to the
//! checkpoint; later commands rebuild the model from that file.

use std::path::{Path, PathBuf};

use invauto_core::data::SyntheticKind;
use invauto_core::models::{ModelKind, ReconArch};
use invauto_core::optim::AdamConfig;
use invauto_core::train::{GanConfig, ReconConfig};
use invauto_core::translator::TranslatorConfig;
use serde::{Deserialize, Serialize};

use crate::error::{read, write, IoError, Result};

/// Name of the configuration written beside every checkpoint.
pub const SIDECAR: &str = "run.toml";
pub const CHECKPOINT: &str = "checkpoint.ivae";

/// Unset fields fall back to the command's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<String>,
    pub arch: Option<String>,
    pub data: Option<String>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub iterations: Option<usize>,
    pub batch: Option<usize>,
    pub lambda: Option<f64>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub weight_decay: Option<f64>,
    pub image_size: Option<usize>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub f64: Option<bool>,
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:ident, $over:ident, $($f:ident),*) => {
        RunConfig { $($f: $over.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| IoError::Config(format!("{}: not UTF-8", path.display())))?;
        Self::parse(&text).map_err(|e| IoError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("a flat table of scalars always serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, self.to_toml().as_bytes())
    }

    /// Fields set in `over` win.
    pub fn overlay(self, over: RunConfig) -> RunConfig {
        let base = self;
        overlay!(
            base, over, model, arch, data, seed, epochs, iterations, batch, lambda, lr, beta1, beta2, weight_decay,
            image_size, n_train, n_test, f64, out
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn use_f64(&self) -> bool {
        self.f64.unwrap_or(false)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        Ok(ModelKind::from_name(self.model.as_deref().unwrap_or("invauto"))?)
    }

    pub fn recon_arch(&self) -> Result<ReconArch> {
        parse_recon_arch(self.arch.as_deref().unwrap_or("mlp"))
    }

    fn adam(&self, base: AdamConfig) -> AdamConfig {
        AdamConfig {
            lr: self.lr.unwrap_or(base.lr),
            beta1: self.beta1.unwrap_or(base.beta1),
            beta2: self.beta2.unwrap_or(base.beta2),
            eps: base.eps,
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
        }
    }

    pub fn recon(&self) -> ReconConfig {
        let d = ReconConfig::default();
        ReconConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch: self.batch.unwrap_or(d.batch),
            seed: self.seed(),
            adam: self.adam(d.adam),
        }
    }

    pub fn gan(&self) -> GanConfig {
        let d = GanConfig::default();
        GanConfig {
            iterations: self.iterations.unwrap_or(d.iterations),
            batch: self.batch.unwrap_or(d.batch),
            lambda: self.lambda.unwrap_or(d.lambda),
            seed: self.seed(),
            adam: self.adam(d.adam),
            gen_loss: d.gen_loss,
        }
    }

    pub fn translator(&self) -> Result<TranslatorConfig> {
        let mut t = TranslatorConfig::from_name(self.arch.as_deref().unwrap_or("desk"))?;
        if let Some(s) = self.image_size {
            t.image_size = s;
        }
        Ok(t)
    }

    pub fn domains(&self) -> Result<DomainSource> {
        DomainSource::parse(self.data.as_deref().unwrap_or("synthetic-invert"))
    }
}

/// `mlp`, `conv`, `mlp:784-256-64` or `conv:1x28x28-4-8` (3x3 kernels,
/// stride 2, padding 1).
pub fn parse_recon_arch(s: &str) -> Result<ReconArch> {
    let Some((kind, dims)) = s.split_once(':') else {
        return Ok(ReconArch::from_name(s)?);
    };
    let bad = || IoError::Config(format!("bad architecture {s:?}"));
    let mut parts = dims.split('-');
    let head = parts.next().ok_or_else(bad)?;
    let rest: Vec<usize> = parts.map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
    if rest.is_empty() || rest.contains(&0) {
        return Err(bad());
    }
    match kind {
        "mlp" => Ok(ReconArch::Mlp {
            input: head.parse().map_err(|_| bad())?,
            hidden: rest,
        }),
        "conv" => {
            let d: Vec<usize> = head.split('x').map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
            let input: [usize; 3] = d.try_into().map_err(|_| bad())?;
            Ok(ReconArch::Conv {
                input,
                channels: rest,
                k: 3,
                stride: 2,
                pad: 1,
            })
        }
        _ => Err(bad()),
    }
}

/// Where reconstruction images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ReconSource {
    /// IDX files `{train,t10k}-images-idx3-ubyte` in a directory.
    Mnist(PathBuf),
    /// Grayscale PGM images; the same folder serves both splits.
    Folder(PathBuf),
}

/// Default MNIST directory: `$INVAUTO_MNIST`, else `data/mnist`.
pub fn default_mnist_dir() -> PathBuf {
    std::env::var_os("INVAUTO_MNIST").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data/mnist"))
}

impl ReconSource {
    /// `mnist`, `mnist:DIR` or `folder:DIR`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "mnist" => Ok(ReconSource::Mnist(default_mnist_dir())),
            Some(("mnist", dir)) => Ok(ReconSource::Mnist(dir.into())),
            Some(("folder", dir)) => Ok(ReconSource::Folder(dir.into())),
            _ => Err(IoError::Config(format!("unknown reconstruction data {s:?}"))),
        }
    }
}

/// Where the two translation domains come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainSource {
    /// Generated pairs with retained ground truth.
    Synthetic(SyntheticKind),
    /// One folder per domain; no pairing is known.
    Folders { a: PathBuf, b: PathBuf },
}

impl DomainSource {
    /// `synthetic-<kind>` or `folder:DIR_A,DIR_B`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(kind) = s.strip_prefix("synthetic-") {
            return Ok(DomainSource::Synthetic(SyntheticKind::from_name(kind)?));
        }
        match s.strip_prefix("folder:").and_then(|r| r.split_once(',')) {
            Some((a, b)) => Ok(DomainSource::Folders { a: a.into(), b: b.into() }),
            None => Err(IoError::Config(format!("unknown domain data {s:?}"))),
        }
    }
}
