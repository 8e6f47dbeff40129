use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::record::load_canonical;
use super::{EcgRecord, Split, Subgroup, CANONICAL_EXT, FORMAT_VERSION};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
/// Default name of the `record_id,subgroup` label table looked up under the dataset root.
pub const METADATA_FILE: &str = "metadata.csv";

/// Split fractions and the seed for the patient shuffle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            train,
            val,
            test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(format!("split fractions must be >= 0: {f:?}")));
        }
        let total: f64 = f.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {total}"
            )));
        }
        Ok(())
    }

    fn fractions(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub record_id: String,
    pub patient_id: String,
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub subgroup: Subgroup,
    pub split: Split,
    /// SHA-256 of the record file, so the manifest hash covers signal content.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub fs_canonical: f32,
    pub split_spec: SplitSpec,
    /// Hash of the preprocessing config that produced the records, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess_hash: Option<String>,
    pub records: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.records.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries(split).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::unparseable(path, e.to_string()))
    }

    /// SHA-256 of the serialized manifest; identifies the dataset a run used.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn resolve(&self, base: &Path, entry: &ManifestEntry) -> PathBuf {
        base.join(&entry.path)
    }

    pub fn load_split(&self, base: &Path, split: Split) -> Result<Vec<EcgRecord>> {
        self.entries(split)
            .map(|e| {
                let mut rec = load_canonical(&self.resolve(base, e))?;
                rec.subgroup = e.subgroup;
                Ok(rec)
            })
            .collect()
    }

    /// Checks id uniqueness, patient disjointness and that every file parses.
    pub fn validate(&self, base: &Path) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut patient_split: BTreeMap<&str, Split> = BTreeMap::new();
        for e in &self.records {
            if !ids.insert(e.record_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate record id {}", e.record_id)));
            }
            match patient_split.insert(e.patient_id.as_str(), e.split) {
                Some(prev) if prev != e.split => {
                    return Err(Error::Manifest(format!(
                        "patient {} appears in both {prev} and {}",
                        e.patient_id, e.split
                    )))
                }
                _ => {}
            }
            let rec = load_canonical(&self.resolve(base, e))?;
            if rec.record_id != e.record_id {
                return Err(Error::Manifest(format!(
                    "{} holds record {}, manifest says {}",
                    e.path, rec.record_id, e.record_id
                )));
            }
        }
        Ok(())
    }
}

/// Scans `root` (recursively) for canonical records and assigns
/// patient-disjoint splits.
///
/// Subgroup labels come from `metadata` (a `record_id,subgroup` CSV), or from
/// `root/metadata.csv` when `metadata` is `None` and that file exists. Records
/// without a table entry keep the label stored in their sidecar.
pub fn build_manifest(
    root: &Path,
    spec: &SplitSpec,
    metadata: Option<&Path>,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut files = Vec::new();
    collect_records(root, &mut files)?;
    files.sort();

    let labels = match metadata {
        Some(p) => read_labels(p)?,
        None => {
            let default = root.join(METADATA_FILE);
            if default.exists() {
                read_labels(&default)?
            } else {
                BTreeMap::new()
            }
        }
    };

    let mut entries = Vec::with_capacity(files.len());
    let mut fs_canonical = None;
    for file in &files {
        let rec = load_canonical(file)?;
        let bytes = fs::read(file).map_err(|e| Error::io(file, e))?;
        fs_canonical.get_or_insert(rec.fs());
        let rel = file
            .strip_prefix(root)
            .unwrap_or(file)
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        let subgroup = labels.get(&rec.record_id).copied().unwrap_or(rec.subgroup);
        entries.push(ManifestEntry {
            record_id: rec.record_id,
            patient_id: rec.patient_id,
            path: rel,
            subgroup,
            split: Split::Train,
            sha256: Some(hex::encode(Sha256::digest(&bytes))),
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    entries.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    for w in entries.windows(2) {
        if w[0].record_id == w[1].record_id {
            return Err(Error::Manifest(format!("duplicate record id {}", w[0].record_id)));
        }
    }

    let patients: BTreeSet<&str> = entries.iter().map(|e| e.patient_id.as_str()).collect();
    let mut patients: Vec<String> = patients.into_iter().map(str::to_string).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    patients.shuffle(&mut rng);
    let counts = allocate(patients.len(), spec.fractions());

    let mut assignment = BTreeMap::new();
    let mut it = patients.iter();
    for (split, n) in Split::ALL.into_iter().zip(counts) {
        for p in it.by_ref().take(n) {
            assignment.insert(p.clone(), split);
        }
    }
    for e in &mut entries {
        e.split = assignment[&e.patient_id];
    }

    Ok(DatasetManifest {
        format_version: FORMAT_VERSION,
        fs_canonical: fs_canonical.unwrap_or(500.0),
        split_spec: spec.clone(),
        preprocess_hash: None,
        records: entries,
    })
}

/// Largest-remainder allocation of `n` patients; every split with a positive
/// fraction gets at least one patient when there are enough to go round.
fn allocate(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| f * n as f64);
    let mut counts = exact.map(|x| x.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle().take(3 * n.max(1)) {
        if left == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    for i in 0..3 {
        if fractions[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            if counts[donor] > 1 {
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
    }
    counts
}

fn collect_records(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_records(&path, out)?;
        } else if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case(CANONICAL_EXT))
        {
            out.push(path);
        }
    }
    Ok(())
}

/// Reads a `record_id,subgroup` table (header row optional).
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, Subgroup>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::unparseable(path, e.to_string()))?;
    let mut labels = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::unparseable(path, e.to_string()))?;
        let (Some(id), Some(code)) = (row.get(0), row.get(1)) else {
            return Err(Error::unparseable(path, format!("row {} needs two columns", i + 1)));
        };
        if i == 0 && id.eq_ignore_ascii_case("record_id") {
            continue;
        }
        let sg = code
            .parse::<Subgroup>()
            .map_err(|e| Error::unparseable(path, e))?;
        labels.insert(id.to_string(), sg);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::record::save_canonical;
    use ndarray::Array2;

    fn write_records(dir: &Path, ids: &[(&str, &str)]) {
        for (i, (rid, pid)) in ids.iter().enumerate() {
            let sig = Array2::from_elem((12, 16), i as f32);
            let rec = EcgRecord::new(*rid, *pid, sig, 500.0).unwrap();
            save_canonical(&rec, &dir.join(format!("{rid}.ecgr"))).unwrap();
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<(String, String)> = (0..10)
            .map(|i| (format!("r{i:02}"), format!("p{i:02}")))
            .collect();
        let refs: Vec<(&str, &str)> = ids.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        write_records(dir.path(), &refs);
        let spec = SplitSpec::new(0.8, 0.1, 0.1, 7).unwrap();
        let a = build_manifest(dir.path(), &spec, None).unwrap();
        let b = build_manifest(dir.path(), &spec, None).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.count(Split::Train), 8);
        assert_eq!(a.count(Split::Val), 1);
        assert_eq!(a.count(Split::Test), 1);
        a.validate(dir.path()).unwrap();

        let other = build_manifest(dir.path(), &SplitSpec { seed: 8, ..spec }, None).unwrap();
        assert_ne!(a.records, other.records);
    }

    #[test]
    fn shared_patient_stays_together() {
        let dir = tempfile::tempdir().unwrap();
        write_records(dir.path(), &[("a", "same"), ("b", "same")]);
        let spec = SplitSpec::new(0.5, 0.0, 0.5, 1).unwrap();
        let m = build_manifest(dir.path(), &spec, None).unwrap();
        assert_eq!(m.records[0].split, m.records[1].split);
    }

    #[test]
    fn empty_root() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            build_manifest(dir.path(), &SplitSpec::default(), None),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn labels_from_metadata_table() {
        let dir = tempfile::tempdir().unwrap();
        write_records(dir.path(), &[("a", "1"), ("b", "2"), ("c", "3")]);
        fs::write(dir.path().join(METADATA_FILE), "record_id,subgroup\na,MI\nb,hc\n").unwrap();
        let m = build_manifest(dir.path(), &SplitSpec::default(), None).unwrap();
        let sg: Vec<_> = m.records.iter().map(|e| e.subgroup).collect();
        assert_eq!(sg, [Subgroup::MI, Subgroup::HC, Subgroup::Unknown]);
    }

    #[test]
    fn small_datasets_fill_every_split() {
        assert_eq!(allocate(3, [0.8, 0.1, 0.1]), [1, 1, 1]);
        assert_eq!(allocate(10, [0.8, 0.1, 0.1]), [8, 1, 1]);
        assert_eq!(allocate(1, [0.8, 0.1, 0.1]), [1, 0, 0]);
        assert_eq!(allocate(4, [1.0, 0.0, 0.0]), [4, 0, 0]);
        assert_eq!(allocate(7, [0.5, 0.25, 0.25]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn validate_catches_patient_overlap() {
        let dir = tempfile::tempdir().unwrap();
        write_records(dir.path(), &[("a", "p"), ("b", "p")]);
        let mut m = build_manifest(dir.path(), &SplitSpec::default(), None).unwrap();
        m.records[1].split = Split::Test;
        m.records[0].split = Split::Train;
        assert!(matches!(m.validate(dir.path()), Err(Error::Manifest(_))));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn patients_never_span_splits(
            patients in proptest::collection::vec(0u8..6, 1..14),
            seed in 0u64..1000,
        ) {
            let dir = tempfile::tempdir().unwrap();
            let ids: Vec<(String, String)> = patients
                .iter()
                .enumerate()
                .map(|(i, p)| (format!("r{i}"), format!("p{p}")))
                .collect();
            let refs: Vec<(&str, &str)> = ids.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            write_records(dir.path(), &refs);
            let m = build_manifest(dir.path(), &SplitSpec { seed, ..SplitSpec::default() }, None).unwrap();
            let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
            for e in &m.records {
                let prev = seen.insert(&e.patient_id, e.split);
                proptest::prop_assert!(prev.is_none() || prev == Some(e.split));
            }
        }
    }
}
