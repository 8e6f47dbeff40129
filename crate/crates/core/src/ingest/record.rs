use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Subgroup;
use crate::error::{Error, Result};
use crate::preprocess::ScalingInfo;

pub const CANONICAL_MAGIC: &[u8; 4] = b"ECGR";
pub const FORMAT_VERSION: u32 = 1;
pub const CANONICAL_EXT: &str = "ecgr";

const HEADER_LEN: usize = 16;
const N_LEADS: usize = 12;

/// One patient recording with all 12 leads in canonical row order.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub patient_id: String,
    pub subgroup: Subgroup,
    pub source_db: String,
    /// Normalization parameters, present once the record has been normalized.
    pub scaling: Option<ScalingInfo>,
    signal: Array2<f32>,
    fs: f32,
}

impl EcgRecord {
    /// `signal` must be 12 × L in [`LeadSet::ALL_12`](crate::leads::LeadSet) order,
    /// in millivolts.
    pub fn new(
        record_id: impl Into<String>,
        patient_id: impl Into<String>,
        signal: Array2<f32>,
        fs: f32,
    ) -> Result<Self> {
        validate_signal(&signal, fs)?;
        Ok(Self {
            record_id: record_id.into(),
            patient_id: patient_id.into(),
            subgroup: Subgroup::Unknown,
            source_db: String::new(),
            scaling: None,
            signal,
            fs,
        })
    }

    pub fn with_subgroup(mut self, subgroup: Subgroup) -> Self {
        self.subgroup = subgroup;
        self
    }

    pub fn with_source_db(mut self, source_db: impl Into<String>) -> Self {
        self.source_db = source_db.into();
        self
    }

    pub fn signal(&self) -> &Array2<f32> {
        &self.signal
    }

    pub fn fs(&self) -> f32 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.signal.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.ncols() == 0
    }

    pub fn lead(&self, lead: crate::leads::Lead) -> ndarray::ArrayView1<'_, f32> {
        self.signal.row(lead.row())
    }

    /// Same metadata, new samples and rate.
    pub fn with_signal(&self, signal: Array2<f32>, fs: f32) -> Result<Self> {
        validate_signal(&signal, fs)?;
        Ok(Self {
            signal,
            fs,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        Self {
            record_id: self.record_id.clone(),
            patient_id: self.patient_id.clone(),
            subgroup: self.subgroup,
            source_db: self.source_db.clone(),
            scaling: self.scaling.clone(),
            signal: Array2::zeros((0, 0)),
            fs: self.fs,
        }
    }

    pub fn sidecar(&self) -> RecordSidecar {
        RecordSidecar {
            format_version: FORMAT_VERSION,
            record_id: self.record_id.clone(),
            patient_id: self.patient_id.clone(),
            subgroup: self.subgroup,
            source_db: self.source_db.clone(),
            scaling: self.scaling.clone(),
        }
    }
}

fn validate_signal(signal: &Array2<f32>, fs: f32) -> Result<()> {
    if signal.nrows() != N_LEADS {
        return Err(Error::InvalidRecord(format!(
            "expected {N_LEADS} leads, got {}",
            signal.nrows()
        )));
    }
    if signal.ncols() == 0 {
        return Err(Error::InvalidRecord("record has no samples".into()));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::InvalidRecord(format!("sampling rate {fs} is not positive")));
    }
    if let Some(pos) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidRecord(format!(
            "non-finite sample at lead row {}, index {}",
            pos / signal.ncols(),
            pos % signal.ncols()
        )));
    }
    Ok(())
}

/// JSON metadata stored next to each canonical record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSidecar {
    pub format_version: u32,
    pub record_id: String,
    pub patient_id: String,
    #[serde(default)]
    pub subgroup: Subgroup,
    #[serde(default)]
    pub source_db: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingInfo>,
}

pub fn sidecar_path(record_path: &Path) -> PathBuf {
    record_path.with_extension("json")
}

/// File stem used for a record id; path separators become `__`.
pub fn file_stem_for(record_id: &str) -> String {
    record_id.replace(['/', '\\'], "__")
}

/// Writes the binary record and its JSON sidecar. Returns the record path.
pub fn save_canonical(rec: &EcgRecord, path: &Path) -> Result<PathBuf> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let n = rec.len();
    let n_u32 = u32::try_from(n)
        .map_err(|_| Error::InvalidRecord(format!("record length {n} exceeds u32")))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * N_LEADS * n);
    buf.extend_from_slice(CANONICAL_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&rec.fs.to_le_bytes());
    buf.extend_from_slice(&n_u32.to_le_bytes());
    for row in rec.signal.rows() {
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))?;

    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&rec.sidecar())?;
    fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))?;
    Ok(path.to_path_buf())
}

/// Reads a canonical record. Without a sidecar the id defaults to the file stem.
pub fn load_canonical(path: &Path) -> Result<EcgRecord> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::unparseable(path, "truncated header"));
    }
    if &bytes[0..4] != CANONICAL_MAGIC {
        return Err(Error::unparseable(path, "bad magic"));
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().expect("4-byte slice") };
    let version = u32::from_le_bytes(word(4));
    if version != FORMAT_VERSION {
        return Err(Error::unparseable(
            path,
            format!("unsupported format version {version}"),
        ));
    }
    let fs_hz = f32::from_le_bytes(word(8));
    let n = u32::from_le_bytes(word(12)) as usize;
    let expected = HEADER_LEN + 4 * N_LEADS * n;
    if bytes.len() != expected {
        return Err(Error::unparseable(
            path,
            format!("expected {expected} bytes for L={n}, found {}", bytes.len()),
        ));
    }
    let samples: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    let signal = Array2::from_shape_vec((N_LEADS, n), samples)
        .map_err(|e| Error::unparseable(path, e.to_string()))?;

    let side = sidecar_path(path);
    let meta = if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        serde_json::from_str::<RecordSidecar>(&text)
            .map_err(|e| Error::unparseable(&side, e.to_string()))?
    } else {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        RecordSidecar {
            format_version: FORMAT_VERSION,
            record_id: stem.clone(),
            patient_id: stem,
            subgroup: Subgroup::Unknown,
            source_db: String::new(),
            scaling: None,
        }
    };

    let mut rec = EcgRecord::new(meta.record_id, meta.patient_id, signal, fs_hz)
        .map_err(|e| Error::unparseable(path, e.to_string()))?
        .with_subgroup(meta.subgroup)
        .with_source_db(meta.source_db);
    rec.scaling = meta.scaling;
    Ok(rec)
}
