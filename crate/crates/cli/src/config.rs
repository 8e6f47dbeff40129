//! The versioned run configuration. Values come from built-in defaults, then
//! an optional TOML file, then command-line flags; the resolved result is
//! written next to every output it produced.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ecg_recon::ingest::SplitSpec;
use ecg_recon::metrics::R2Variant;
use ecg_recon::models::{ModelFamily, ModelSpec};
use ecg_recon::preprocess::PreprocessConfig;
use ecg_recon::training::TrainConfig;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Single source of randomness: split shuffle, weight init, batch order, dropout.
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    pub split: SplitFractions,
    pub train: TrainConfig,
    /// Full architecture override; when absent the family default is used.
    pub model: Option<ModelSpec>,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            preprocess: PreprocessConfig::default(),
            split: SplitFractions::default(),
            train: TrainConfig::default(),
            model: None,
            evaluate: EvaluateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        let s = SplitSpec::default();
        Self {
            train: s.train,
            val: s.val,
            test: s.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub r2_variant: R2Variant,
    pub subgroups: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            r2_variant: R2Variant::Conventional,
            subgroups: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!(
                "{}: config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                path.display(),
                cfg.schema_version
            );
        }
        Ok(cfg)
    }

    /// `path` if given, else defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).context("serializing config")?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// Propagates the top-level seed into the module configs.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.train.r2_variant = self.evaluate.r2_variant;
        self.preprocess.validate()?;
        self.train.validate()?;
        self.split_spec()?;
        Ok(self)
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        Ok(SplitSpec::new(self.split.train, self.split.val, self.split.test, self.seed)?)
    }

    /// The configured architecture when it matches `family`, else the family default.
    pub fn model_spec(&self, family: Option<ModelFamily>) -> Result<ModelSpec> {
        match (&self.model, family) {
            (Some(spec), None) => Ok(spec.clone()),
            (Some(spec), Some(f)) if spec.family() == f => Ok(spec.clone()),
            (_, Some(f)) => Ok(ModelSpec::default_for(f)),
            (None, None) => bail!("no model family given (use --family or a [model] table)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 4\n[train]\nmax_epochs = 2\npatience = 1\n").unwrap();
        let cfg = cfg.resolve().unwrap();
        assert_eq!((cfg.train.max_epochs, cfg.train.seed), (2, 4));
        assert_eq!(cfg.train.lambda_recon, 100.0);
        assert_eq!(cfg.preprocess, PreprocessConfig::default());
    }

    #[test]
    fn model_table_selects_architecture() {
        let text = "[model]\nfamily = \"LSTM\"\n[model.lstm]\nhidden = 4\n";
        let cfg: RunConfig = toml::from_str(text).unwrap();
        let spec = cfg.model_spec(None).unwrap();
        assert_eq!(spec.family(), ModelFamily::Lstm);
        assert_eq!(cfg.model_spec(Some(ModelFamily::Pix2PixGan)).unwrap().family(), ModelFamily::Pix2PixGan);
    }

    #[test]
    fn family_alone_uses_default_architecture() {
        for family in [ModelFamily::Pix2PixGan, ModelFamily::Lstm, ModelFamily::LstmUnet] {
            let text = format!("[model]\nfamily = \"{}\"\n", family.name());
            let cfg: RunConfig = toml::from_str(&text).unwrap();
            let spec = cfg.model_spec(None).unwrap();
            assert_eq!(spec.family(), family);
            let built = ecg_recon::models::Model::new(spec, 0).unwrap().parameter_count();
            let default = ecg_recon::models::Model::new(ModelSpec::default_for(family), 0).unwrap().parameter_count();
            assert_eq!(built, default);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 4\n").is_err());
    }
}
