//! Text ingestion adapters.
//!
//! Two text layouts are supported besides the canonical binary format:
//!
//! * `csv`: a header row of lead names followed by one row per sample.
//! * `wfdb_text`: the tab- or comma-separated export written by WFDB's
//!   `rdsamp -p -v` (quoted names, a units row, an elapsed-time column).
//!
//! Both accept leading `# key: value` comment lines. Recognised keys are
//! `fs`, `record_id`, `patient_id`, `source_db` and `subgroup`. When `fs` is
//! absent it is derived from an elapsed-time column in seconds.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::record::load_canonical;
use super::{EcgRecord, Subgroup};
use crate::error::{Error, Result};
use crate::leads::{Lead, LeadSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFormat {
    WfdbText,
    Csv,
    Canonical,
}

impl RecordFormat {
    /// Guess from the file extension: `.ecgr` is canonical, `.txt` is a WFDB
    /// text export, anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case(super::CANONICAL_EXT) => RecordFormat::Canonical,
            Some(e) if e.eq_ignore_ascii_case("txt") => RecordFormat::WfdbText,
            _ => RecordFormat::Csv,
        }
    }
}

impl FromStr for RecordFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "wfdb_text" | "wfdb-text" => Ok(RecordFormat::WfdbText),
            "csv" => Ok(RecordFormat::Csv),
            "canonical" => Ok(RecordFormat::Canonical),
            other => Err(format!("unknown record format {other:?}")),
        }
    }
}

/// Loads a record and reorders its leads into canonical order.
pub fn load_record(path: &Path, format: RecordFormat) -> Result<EcgRecord> {
    match format {
        RecordFormat::Canonical => load_canonical(path),
        RecordFormat::Csv | RecordFormat::WfdbText => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let (meta, body) = split_comment_header(&text);
            let table = parse_table(path, body, format)?;
            assemble(path, &meta, table)
        }
    }
}

fn split_comment_header(text: &str) -> (BTreeMap<String, String>, &str) {
    let mut meta = BTreeMap::new();
    let mut rest = text;
    loop {
        let line_end = rest.find('\n').map_or(rest.len(), |i| i + 1);
        let line = rest[..line_end].trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once([':', '=']) {
                meta.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
            }
            rest = &rest[line_end..];
        } else if line.is_empty() && line_end > 0 {
            rest = &rest[line_end..];
        } else {
            break;
        }
    }
    (meta, rest)
}

struct Table {
    names: Vec<String>,
    units: Vec<Option<String>>,
    columns: Vec<Vec<f64>>,
}

fn parse_table(path: &Path, body: &str, format: RecordFormat) -> Result<Table> {
    let first_line = body.lines().next().unwrap_or("");
    let (delimiter, quote) = match format {
        RecordFormat::WfdbText if first_line.contains('\t') => (b'\t', b'\''),
        RecordFormat::WfdbText => (b',', b'\''),
        _ => (b',', b'"'),
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .quote(quote)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());

    let mut rows = reader.records();
    let header = match rows.next() {
        Some(r) => r.map_err(|e| Error::unparseable(path, e.to_string()))?,
        None => return Err(Error::unparseable(path, "no header row")),
    };
    let names: Vec<String> = header.iter().map(|s| unquote(s).to_string()).collect();
    let mut units = vec![None; names.len()];
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    // Column i has ended once an empty cell is seen.
    let mut ended = vec![false; names.len()];

    for (line_no, row) in rows.enumerate() {
        let row = row.map_err(|e| Error::unparseable(path, e.to_string()))?;
        if row.iter().all(|c| c.is_empty()) {
            continue;
        }
        let is_units_row = line_no == 0
            && row
                .iter()
                .filter(|c| !c.is_empty())
                .all(|c| unquote(c).parse::<f64>().is_err());
        if is_units_row {
            for (u, cell) in units.iter_mut().zip(row.iter()) {
                *u = Some(unquote(cell).to_string());
            }
            continue;
        }
        for (i, col) in columns.iter_mut().enumerate() {
            let cell = row.get(i).map(unquote).unwrap_or("");
            if cell.is_empty() {
                ended[i] = true;
                continue;
            }
            if ended[i] {
                return Err(Error::unparseable(
                    path,
                    format!("gap in column {:?} at data row {}", names[i], line_no + 1),
                ));
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::unparseable(
                    path,
                    format!("bad value {cell:?} in column {:?}", names[i]),
                )
            })?;
            col.push(v);
        }
    }
    Ok(Table {
        names,
        units,
        columns,
    })
}

fn unquote(s: &str) -> &str {
    s.trim().trim_matches(|c| c == '\'' || c == '"')
}

fn unit_scale(unit: Option<&str>) -> f64 {
    match unit.map(|u| u.to_ascii_lowercase()) {
        Some(u) if u == "uv" || u == "µv" => 1e-3,
        Some(u) if u == "v" => 1e3,
        _ => 1.0,
    }
}

/// Writes a record in the `csv` layout read by [`load_record`], values in
/// millivolts with shortest round-trip formatting.
pub fn save_csv(rec: &EcgRecord, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = format!(
        "# fs: {}\n# record_id: {}\n# patient_id: {}\n# subgroup: {}\n",
        rec.fs(),
        rec.record_id,
        rec.patient_id,
        rec.subgroup
    );
    if !rec.source_db.is_empty() {
        out.push_str(&format!("# source_db: {}\n", rec.source_db));
    }
    let mut w = csv::Writer::from_writer(out.into_bytes());
    w.write_record(LeadSet::ALL_12.iter().map(|l| l.name()))?;
    for col in rec.signal().columns() {
        w.write_record(col.iter().map(|v| v.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn assemble(path: &Path, meta: &BTreeMap<String, String>, table: Table) -> Result<EcgRecord> {
    let mut lead_cols: BTreeMap<Lead, usize> = BTreeMap::new();
    let mut time_col = None;
    for (i, name) in table.names.iter().enumerate() {
        if let Ok(lead) = name.parse::<Lead>() {
            if lead_cols.insert(lead, i).is_some() {
                return Err(Error::unparseable(path, format!("duplicate lead {lead}")));
            }
        } else if name.to_ascii_lowercase().contains("time") {
            time_col = Some(i);
        }
    }
    for lead in LeadSet::ALL_12 {
        if !lead_cols.contains_key(&lead) {
            return Err(Error::MissingLead(lead.name().to_string()));
        }
    }

    let expected = LeadSet::ALL_12
        .iter()
        .map(|l| table.columns[lead_cols[l]].len())
        .max()
        .unwrap_or(0);
    for lead in LeadSet::ALL_12 {
        let len = table.columns[lead_cols[&lead]].len();
        if len != expected {
            return Err(Error::InconsistentLength {
                lead: lead.name().to_string(),
                len,
                expected,
            });
        }
    }
    if expected == 0 {
        return Err(Error::unparseable(path, "no samples"));
    }

    let fs = match meta.get("fs") {
        Some(v) => v
            .trim_end_matches(|c: char| c.is_alphabetic() || c.is_whitespace())
            .parse::<f64>()
            .map_err(|_| Error::unparseable(path, format!("bad fs {v:?}")))?,
        None => {
            let col = time_col
                .map(|i| &table.columns[i])
                .filter(|c| c.len() >= 2)
                .ok_or_else(|| {
                    Error::unparseable(path, "sampling rate not given and no time column")
                })?;
            let span = col[col.len() - 1] - col[0];
            if span <= 0.0 {
                return Err(Error::unparseable(path, "time column is not increasing"));
            }
            // Exports round the time column, so estimate over the whole span.
            let fs = (col.len() - 1) as f64 / span;
            (fs * 1000.0).round() / 1000.0
        }
    };

    let mut signal = Array2::<f32>::zeros((12, expected));
    for (row, lead) in LeadSet::ALL_12.iter().enumerate() {
        let i = lead_cols[lead];
        let scale = unit_scale(table.units[i].as_deref());
        for (dst, &v) in signal.row_mut(row).iter_mut().zip(&table.columns[i]) {
            *dst = (v * scale) as f32;
        }
    }

    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let record_id = meta.get("record_id").cloned().unwrap_or(stem);
    let patient_id = meta
        .get("patient_id")
        .cloned()
        .unwrap_or_else(|| record_id.clone());
    let subgroup = match meta.get("subgroup") {
        Some(s) => s
            .parse::<Subgroup>()
            .map_err(|e| Error::unparseable(path, e))?,
        None => Subgroup::Unknown,
    };
    let rec = EcgRecord::new(record_id, patient_id, signal, fs as f32)
        .map_err(|e| Error::unparseable(path, e.to_string()))?
        .with_subgroup(subgroup)
        .with_source_db(meta.get("source_db").cloned().unwrap_or_default());
    Ok(rec)
}
