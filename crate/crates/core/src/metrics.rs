//! Reconstruction quality indices and their aggregation.
//!
//! All sums are accumulated in `f64` whatever the storage precision.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Subgroup;
use crate::leads::LeadSet;

/// Which algebraic form of R² to compute.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum R2Variant {
    /// `1 − Σ(xᵢ − yᵢ)² / Σ(xᵢ − x̄)²`; equals 1 at perfect reconstruction.
    #[default]
    Conventional,
    /// `1 − Σ(xᵢ − ȳ)² / Σ(yᵢ − ȳ)²`, kept for audits. It is 0, not 1, when y = x.
    PaperLiteral,
}

impl FromStr for R2Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "conventional" => Ok(R2Variant::Conventional),
            "paper-literal" => Ok(R2Variant::PaperLiteral),
            other => Err(format!("unknown R² variant {other:?}")),
        }
    }
}

fn check_pair<T: Copy + Into<f64>>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Precondition(format!(
            "need at least 2 samples, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|&v| !v.into().is_finite()) {
        return Err(Error::Precondition("non-finite sample".into()));
    }
    Ok(())
}

fn mean<T: Copy + Into<f64>>(v: &[T]) -> f64 {
    v.iter().map(|&a| a.into()).sum::<f64>() / v.len() as f64
}

fn centered_sum_sq<T: Copy + Into<f64>>(v: &[T], center: f64) -> f64 {
    v.iter().map(|&a| (a.into() - center).powi(2)).sum()
}

/// Coefficient of determination of reconstruction `y` against original `x`.
pub fn compute_r2<T: Copy + Into<f64>>(x: &[T], y: &[T]) -> Result<f64> {
    compute_r2_variant(x, y, R2Variant::Conventional)
}

pub fn compute_r2_variant<T: Copy + Into<f64>>(x: &[T], y: &[T], variant: R2Variant) -> Result<f64> {
    check_pair(x, y)?;
    match variant {
        R2Variant::Conventional => {
            let total = centered_sum_sq(x, mean(x));
            if total == 0.0 {
                return Err(Error::ConstantReference);
            }
            let residual: f64 = x
                .iter()
                .zip(y)
                .map(|(&a, &b)| (a.into() - b.into()).powi(2))
                .sum();
            Ok(1.0 - residual / total)
        }
        R2Variant::PaperLiteral => {
            let y_bar = mean(y);
            let denom = centered_sum_sq(y, y_bar);
            if denom == 0.0 {
                return Err(Error::ConstantInput);
            }
            Ok(1.0 - centered_sum_sq(x, y_bar) / denom)
        }
    }
}

/// Pearson correlation between `x` and `y`.
pub fn compute_rx<T: Copy + Into<f64>>(x: &[T], y: &[T]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a.into() - mx, b.into() - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    // sqrt of the product keeps rx(x, x) == 1 exactly
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadMetrics {
    pub r2: f64,
    pub rx: f64,
}

impl LeadMetrics {
    pub fn compute<T: Copy + Into<f64>>(x: &[T], y: &[T], variant: R2Variant) -> Result<Self> {
        Ok(Self {
            r2: compute_r2_variant(x, y, variant)?,
            rx: compute_rx(x, y)?,
        })
    }

    /// Evaluation form: `None` when the reference lead is constant (neither
    /// metric is defined), and rx = 0 when only the reconstruction is constant.
    pub fn evaluate<T: Copy + Into<f64>>(x: &[T], y: &[T], variant: R2Variant) -> Result<Option<Self>> {
        let r2 = match compute_r2_variant(x, y, variant) {
            Ok(v) => v,
            Err(Error::ConstantReference) => return Ok(None),
            Err(e) => return Err(e),
        };
        let rx = match compute_rx(x, y) {
            Ok(v) => v,
            Err(Error::ConstantInput) => 0.0,
            Err(e) => return Err(e),
        };
        Ok(Some(Self { r2, rx }))
    }
}

/// Metrics of the 9 target leads of one record, in `LeadSet::TARGET_9` order.
/// `None` marks a lead whose reference is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub record_id: String,
    pub subgroup: Subgroup,
    pub leads: Vec<Option<LeadMetrics>>,
}

/// Mean of one (lead, subgroup) cell over records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub r2: f64,
    pub rx: f64,
    pub n_records: usize,
}

/// One results block: a row per target lead plus the Avg row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    /// `None` is the overall table across every record.
    pub subgroup: Option<Subgroup>,
    /// `LeadSet::TARGET_9` order; `None` marks an empty cell.
    pub leads: Vec<Option<CellMean>>,
    /// Mean of the 9 per-lead means; absent if any lead cell is empty.
    pub avg: Option<CellMean>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub overall: MetricsTable,
    /// Labelled subgroups that have at least one record. `Unknown` records
    /// only count towards `overall`.
    pub subgroups: BTreeMap<Subgroup, MetricsTable>,
}

/// Unweighted means over records per (lead, subgroup) cell.
pub fn aggregate(records: &[RecordMetrics]) -> Aggregate {
    let overall = table(None, records.iter());
    let mut subgroups = BTreeMap::new();
    for sg in Subgroup::LABELLED {
        if records.iter().any(|r| r.subgroup == sg) {
            subgroups.insert(sg, table(Some(sg), records.iter().filter(|r| r.subgroup == sg)));
        }
    }
    Aggregate { overall, subgroups }
}

fn table<'a>(subgroup: Option<Subgroup>, records: impl Iterator<Item = &'a RecordMetrics>) -> MetricsTable {
    let n_leads = LeadSet::TARGET_9.len();
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); n_leads];
    let mut n_records = 0;
    for rec in records {
        n_records += 1;
        for (s, m) in sums.iter_mut().zip(&rec.leads) {
            let Some(m) = m else { continue };
            s.0 += m.r2;
            s.1 += m.rx;
            s.2 += 1;
        }
    }
    let leads: Vec<Option<CellMean>> = sums
        .into_iter()
        .map(|(r2, rx, n)| {
            (n > 0).then(|| CellMean {
                r2: r2 / n as f64,
                rx: rx / n as f64,
                n_records: n,
            })
        })
        .collect();
    let avg = leads.iter().copied().collect::<Option<Vec<_>>>().map(|cells| CellMean {
        r2: cells.iter().map(|c| c.r2).sum::<f64>() / cells.len() as f64,
        rx: cells.iter().map(|c| c.rx).sum::<f64>() / cells.len() as f64,
        n_records,
    });
    MetricsTable {
        subgroup,
        leads,
        avg,
    }
}
