//! Loading source recordings into the canonical record format and partitioning
//! them into patient-disjoint splits.

mod formats;
mod manifest;
mod record;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use formats::{load_record, save_csv, RecordFormat};
pub use manifest::{
    build_manifest, read_labels, DatasetManifest, ManifestEntry, SplitSpec, MANIFEST_FILE,
    METADATA_FILE,
};
pub use record::{
    file_stem_for, load_canonical, save_canonical, sidecar_path, EcgRecord, RecordSidecar, CANONICAL_EXT,
    CANONICAL_MAGIC, FORMAT_VERSION,
};

/// Diagnostic subgroup of a record.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "UPPERCASE")]
pub enum Subgroup {
    /// Healthy controls.
    HC,
    /// Bundle branch block.
    BB,
    /// Hypertrophy, cardiomyopathy and heart failure.
    HY,
    /// Myocardial infarction.
    MI,
    /// Valvular disease, myocarditis and miscellaneous.
    VA,
    /// No diagnostic data.
    ND,
    /// No label supplied at ingestion.
    #[default]
    Unknown,
}

impl Subgroup {
    /// Labelled subgroups in reporting order (excludes `Unknown`).
    pub const LABELLED: [Subgroup; 6] = [
        Subgroup::HC,
        Subgroup::BB,
        Subgroup::HY,
        Subgroup::MI,
        Subgroup::VA,
        Subgroup::ND,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Subgroup::HC => "HC",
            Subgroup::BB => "BB",
            Subgroup::HY => "HY",
            Subgroup::MI => "MI",
            Subgroup::VA => "VA",
            Subgroup::ND => "ND",
            Subgroup::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for Subgroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Subgroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HC" => Ok(Subgroup::HC),
            "BB" => Ok(Subgroup::BB),
            "HY" => Ok(Subgroup::HY),
            "MI" => Ok(Subgroup::MI),
            "VA" => Ok(Subgroup::VA),
            "ND" => Ok(Subgroup::ND),
            "UNKNOWN" | "" => Ok(Subgroup::Unknown),
            other => Err(format!("unknown subgroup code {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}
