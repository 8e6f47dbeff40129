//! CSV and markdown renderings of a [`MetricsReport`].

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MetricsReport;
use crate::error::{Error, Result};
use crate::ingest::Subgroup;
use crate::leads::LeadSet;
use crate::metrics::{CellMean, MetricsTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            _ => Err(Error::Config(format!("unknown table format {s:?} (expected csv or markdown)"))),
        }
    }
}

const AVG: &str = "Avg";

/// Row labels: the 9 target leads then Avg.
fn row_labels() -> Vec<String> {
    LeadSet::TARGET_9
        .iter()
        .map(|l| l.name().to_string())
        .chain([AVG.to_string()])
        .collect()
}

fn cell(table: Option<&MetricsTable>, row: usize) -> Option<CellMean> {
    let t = table?;
    if row < t.leads.len() {
        t.leads[row]
    } else {
        t.avg
    }
}

fn sections(report: &MetricsReport) -> Vec<Option<Subgroup>> {
    std::iter::once(None).chain(report.subgroups().into_iter().map(Some)).collect()
}

/// Long format, one line per (table, row, column):
/// `lead,model,dataset,subgroup,r2,rx,n_records`. The overall table uses
/// subgroup `ALL`. Numbers are printed in shortest round-trip form, so the
/// output is byte-stable for a given report.
pub fn to_csv(report: &MetricsReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lead", "model", "dataset", "subgroup", "r2", "rx", "n_records"])?;
    for sg in sections(report) {
        let tables = report.tables(sg);
        let sg_name = sg.map_or("ALL", Subgroup::code);
        for (row, label) in row_labels().iter().enumerate() {
            for (col, table) in report.columns.iter().zip(&tables) {
                if let Some(c) = cell(*table, row) {
                    w.write_record([
                        label.as_str(),
                        &col.model,
                        &col.dataset,
                        sg_name,
                        &c.r2.to_string(),
                        &c.rx.to_string(),
                        &c.n_records.to_string(),
                    ])?;
                }
            }
        }
    }
    let bytes = w.into_inner().expect("in-memory writer cannot fail");
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// One table per section: a column per
/// (model, dataset) for R², then the same for rₓ. Within each dataset the
/// best model per row and metric is bold.
pub fn to_markdown(report: &MetricsReport) -> String {
    let mut out = String::new();
    let headers: Vec<String> = report
        .columns
        .iter()
        .map(|c| {
            if c.dataset.is_empty() {
                c.model.clone()
            } else {
                format!("{} ({})", c.model, c.dataset)
            }
        })
        .collect();
    for sg in sections(report) {
        let tables = report.tables(sg);
        let title = match sg {
            None => "Overall".to_string(),
            Some(sg) => format!("Subgroup {sg}"),
        };
        let _ = writeln!(out, "### {title}\n");
        let mut header = String::from("| Lead |");
        let mut rule = String::from("|---|");
        for metric in ["R²", "rₓ"] {
            for h in &headers {
                let _ = write!(header, " {metric} {h} |");
                rule.push_str("---:|");
            }
        }
        let _ = writeln!(out, "{header}\n{rule}");
        for (row, label) in row_labels().iter().enumerate() {
            let cells: Vec<Option<CellMean>> = tables.iter().map(|t| cell(*t, row)).collect();
            let mut line = format!("| {label} |");
            for pick in [|c: &CellMean| c.r2, |c: &CellMean| c.rx] {
                for (k, c) in cells.iter().enumerate() {
                    let text = match c {
                        None => "–".to_string(),
                        Some(c) => {
                            let v = pick(c);
                            let best = report
                                .columns
                                .iter()
                                .zip(&cells)
                                .filter(|(col, _)| col.dataset == report.columns[k].dataset)
                                .filter_map(|(_, o)| o.as_ref().map(pick))
                                .fold(f64::NEG_INFINITY, f64::max);
                            if report.columns.len() > 1 && v == best {
                                format!("**{v:.4}**")
                            } else {
                                format!("{v:.4}")
                            }
                        }
                    };
                    let _ = write!(line, " {text} |");
                }
            }
            let _ = writeln!(out, "{line}");
        }
        out.push('\n');
    }
    out
}

pub fn render_table(report: &MetricsReport, format: TableFormat, path: &Path) -> Result<()> {
    let text = match format {
        TableFormat::Csv => to_csv(report)?,
        TableFormat::Markdown => to_markdown(report),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
