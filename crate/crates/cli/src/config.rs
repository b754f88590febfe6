use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use oocs_core::builder::{build_oocs_network, mnist_base, mnist_oocs_config};
use oocs_core::kernels::KernelProfile;
use oocs_core::nn::{param_count, NetworkSpec};
use oocs_core::{OocsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetworkVariant {
    Base,
    /// DoG responses with the configured kernel size and ratio.
    Oocs,
    /// Flat (uniform center, uniform surround) kernels.
    OocsFlat,
    /// DoG responses pinned to 3x3, gamma 1/2.
    Oocs3x3,
}

impl NetworkVariant {
    pub fn is_oocs(self) -> bool {
        self != NetworkVariant::Base
    }
}

impl fmt::Display for NetworkVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkVariant::Base => "base",
            NetworkVariant::Oocs => "oocs",
            NetworkVariant::OocsFlat => "oocs-flat",
            NetworkVariant::Oocs3x3 => "oocs-3x3",
        })
    }
}

impl FromStr for NetworkVariant {
    type Err = OocsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(NetworkVariant::Base),
            "oocs" => Ok(NetworkVariant::Oocs),
            "oocs-flat" => Ok(NetworkVariant::OocsFlat),
            "oocs-3x3" => Ok(NetworkVariant::Oocs3x3),
            other => Err(OocsError::Domain(format!(
                "unknown network `{other}` (expected base, oocs, oocs-flat or oocs-3x3)"
            ))),
        }
    }
}

pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_EPOCHS: usize = 10;
pub const DEFAULT_KERNEL_SIZE: usize = 3;
pub const DEFAULT_GAMMA: f64 = 0.5;
pub const DEFAULT_INSERTION: &str = "relu1";
pub const VALIDATION_HOLDOUT: usize = 5000;
pub const VALIDATION_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub network: NetworkVariant,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub kernel_size: usize,
    pub gamma: f64,
    /// `conv1` (before the pathway ReLU) or `relu1` (after it).
    pub insertion: String,
    pub checkpoint: PathBuf,
    /// Defaults to `<checkpoint>.history.csv`.
    pub history: Option<PathBuf>,
    /// Use only the first `n` training samples (after the validation split).
    pub train_subset: Option<usize>,
    pub validation: usize,
}

impl TrainConfig {
    pub fn new(network: NetworkVariant, seed: u64, checkpoint: impl Into<PathBuf>) -> Self {
        Self {
            network,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH,
            learning_rate: DEFAULT_LR,
            seed,
            kernel_size: DEFAULT_KERNEL_SIZE,
            gamma: DEFAULT_GAMMA,
            insertion: DEFAULT_INSERTION.into(),
            checkpoint: checkpoint.into(),
            history: None,
            train_subset: None,
            validation: VALIDATION_HOLDOUT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(OocsError::Domain("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(OocsError::Domain("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OocsError::Domain(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.kernel_size.is_multiple_of(2) || self.kernel_size < 3 {
            return Err(OocsError::EvenKernelSize(self.kernel_size));
        }
        if self.train_subset == Some(0) {
            return Err(OocsError::Domain("training subset must be non-empty".into()));
        }
        Ok(())
    }

    pub fn history_path(&self) -> PathBuf {
        self.history
            .clone()
            .unwrap_or_else(|| sidecar(&self.checkpoint, "history.csv"))
    }

    pub fn spec(&self) -> Result<NetworkSpec> {
        self.validate()?;
        let (size, gamma, profile) = match self.network {
            NetworkVariant::Base => return Ok(mnist_base()),
            NetworkVariant::Oocs => (self.kernel_size, self.gamma, KernelProfile::Dog),
            NetworkVariant::OocsFlat => (self.kernel_size, self.gamma, KernelProfile::Flat),
            NetworkVariant::Oocs3x3 => (3, 0.5, KernelProfile::Dog),
        };
        if !matches!(self.insertion.as_str(), "conv1" | "relu1") {
            return Err(OocsError::Domain(format!(
                "insertion point must be conv1 or relu1, got `{}`",
                self.insertion
            )));
        }
        let mut cfg = mnist_oocs_config(size, gamma, profile)?;
        cfg.insertion_node = self.insertion.clone();
        let spec = build_oocs_network(&mnist_base(), &cfg)?;
        // the split must not change capacity
        let (b, o) = (param_count(&mnist_base())?, param_count(&spec)?);
        if b != o {
            return Err(OocsError::Spec(format!(
                "oocs network has {o} parameters, base has {b}"
            )));
        }
        Ok(spec)
    }
}

/// `<path>.<suffix>` next to a checkpoint.
pub fn sidecar(checkpoint: &std::path::Path, suffix: &str) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_round_trip() {
        for v in [
            NetworkVariant::Base,
            NetworkVariant::Oocs,
            NetworkVariant::OocsFlat,
            NetworkVariant::Oocs3x3,
        ] {
            assert_eq!(v.to_string().parse::<NetworkVariant>().unwrap(), v);
        }
        assert!("resnet".parse::<NetworkVariant>().is_err());
    }

    #[test]
    fn every_variant_has_the_base_count() {
        let base = param_count(&mnist_base()).unwrap();
        for v in [NetworkVariant::Oocs, NetworkVariant::OocsFlat, NetworkVariant::Oocs3x3] {
            let cfg = TrainConfig::new(v, 0, "m.ckpt");
            assert_eq!(param_count(&cfg.spec().unwrap()).unwrap(), base);
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = TrainConfig::new(NetworkVariant::Oocs, 0, "m.ckpt");
        cfg.kernel_size = 4;
        assert!(matches!(cfg.spec(), Err(OocsError::EvenKernelSize(4))));
        let mut cfg = TrainConfig::new(NetworkVariant::Oocs, 0, "m.ckpt");
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::new(NetworkVariant::Oocs, 0, "m.ckpt");
        cfg.insertion = "fc1".into();
        assert!(cfg.spec().is_err());
    }

    #[test]
    fn sidecar_appends() {
        assert_eq!(sidecar(std::path::Path::new("out/m.ckpt"), "net"), PathBuf::from("out/m.ckpt.net"));
    }
}
