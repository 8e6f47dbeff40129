//! Model-ready matrices from canonical records: resampling, baseline removal,
//! [-1, 1] scaling, cropping and windowing.

mod baseline;
mod resample;
mod scaling;
mod windows;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use baseline::{moving_median, remove_baseline, remove_baseline_with};
pub use resample::{rational_ratio, resample};
pub use scaling::{normalize, LeadScale, ScalingInfo};
pub use windows::{crop_to_multiple, make_windows, split_leads, Window, WindowedDataset};

use crate::error::{Error, Result};
use crate::ingest::{DatasetManifest, EcgRecord, Split};

/// Generator downsampling factor (2^7).
pub const LENGTH_MULTIPLE: usize = 128;
pub const WINDOW_LENGTH: usize = 4992;
pub const CANONICAL_FS: f32 = 500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub fs_target: f32,
    pub remove_baseline: bool,
    pub baseline_short_s: f32,
    pub baseline_long_s: f32,
    pub crop_multiple: usize,
    pub window_length: usize,
    pub window_stride: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            fs_target: CANONICAL_FS,
            remove_baseline: true,
            baseline_short_s: baseline::SHORT_WINDOW_S,
            baseline_long_s: baseline::LONG_WINDOW_S,
            crop_multiple: LENGTH_MULTIPLE,
            window_length: WINDOW_LENGTH,
            window_stride: WINDOW_LENGTH / 2,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_multiple == 0 || self.window_length % self.crop_multiple != 0 {
            return Err(Error::Config(format!(
                "window length {} must be a positive multiple of {}",
                self.window_length, self.crop_multiple
            )));
        }
        if self.window_stride == 0 {
            return Err(Error::Config("window stride must be positive".into()));
        }
        if !(self.fs_target > 0.0) {
            return Err(Error::Config("target sampling rate must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over the fields that change what the model sees. Window
    /// stride is excluded: it affects training only.
    pub fn hash(&self) -> String {
        let key = serde_json::json!({
            "fs_target": self.fs_target,
            "remove_baseline": self.remove_baseline,
            "baseline_short_s": self.baseline_short_s,
            "baseline_long_s": self.baseline_long_s,
            "crop_multiple": self.crop_multiple,
        });
        hex::encode(Sha256::digest(key.to_string().as_bytes()))
    }
}

/// Resample, remove baseline, normalize, crop. The returned record carries its
/// [`ScalingInfo`].
pub fn prepare_record(rec: &EcgRecord, cfg: &PreprocessConfig) -> Result<EcgRecord> {
    let rec = resample(rec, cfg.fs_target)?;
    let rec = if cfg.remove_baseline {
        remove_baseline_with(&rec, cfg.baseline_short_s, cfg.baseline_long_s)?
    } else {
        rec
    };
    let (rec, _) = normalize(&rec)?;
    crop_to_multiple(&rec, cfg.crop_multiple)
}

/// Model-ready records of one split. A manifest written by `prepare` already
/// holds preprocessed records, which are used as stored once their hash is
/// checked; otherwise every record goes through [`prepare_record`].
pub fn prepare_split(
    manifest: &DatasetManifest,
    base: &Path,
    split: Split,
    cfg: &PreprocessConfig,
) -> Result<Vec<EcgRecord>> {
    let records = manifest.load_split(base, split)?;
    if records.is_empty() {
        return Err(Error::EmptySplit(split));
    }
    match &manifest.preprocess_hash {
        Some(stored) if *stored != cfg.hash() => Err(Error::ConfigHashMismatch {
            expected: stored.clone(),
            found: cfg.hash(),
        }),
        Some(_) => Ok(records),
        None => records.iter().map(|r| prepare_record(r, cfg)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SyntheticEcg;

    #[test]
    fn pipeline_shapes() {
        let raw = SyntheticEcg::default().record("p", 10_000, 1000.0, 5);
        let out = prepare_record(&raw, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.fs(), 500.0);
        assert_eq!(out.signal().nrows(), 12);
        assert_eq!(out.len(), 4992);
        assert!(out.signal().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(out.scaling.is_some());
    }

    #[test]
    fn hash_ignores_stride() {
        let a = PreprocessConfig::default();
        let b = PreprocessConfig {
            window_stride: 4992,
            ..a.clone()
        };
        let c = PreprocessConfig {
            baseline_long_s: 0.8,
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn config_validation() {
        assert!(PreprocessConfig::default().validate().is_ok());
        let bad = PreprocessConfig {
            window_length: 5000,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
