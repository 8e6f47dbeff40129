//! Per-lead min-max scaling to [-1, 1].

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::EcgRecord;
use crate::leads::Lead;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadScale {
    /// mV
    pub min: f32,
    /// mV
    pub max: f32,
    /// `max == min`; the lead was mapped to zeros.
    pub degenerate: bool,
}

impl LeadScale {
    fn from_samples<'a>(samples: impl Iterator<Item = &'a f32>) -> Self {
        let (min, max) = samples.fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        LeadScale {
            min,
            max,
            degenerate: max <= min,
        }
    }

    pub fn normalize(&self, x: f32) -> f32 {
        if self.degenerate {
            return 0.0;
        }
        let range = self.max as f64 - self.min as f64;
        let y = 2.0 * (x as f64 - self.min as f64) / range - 1.0;
        y.clamp(-1.0, 1.0) as f32
    }

    pub fn denormalize(&self, y: f32) -> f32 {
        if self.degenerate {
            return self.min;
        }
        let range = self.max as f64 - self.min as f64;
        ((y as f64 + 1.0) / 2.0 * range + self.min as f64) as f32
    }
}

/// Normalization parameters for the 12 leads of one record, captured after
/// baseline correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingInfo {
    pub leads: Vec<LeadScale>,
}

impl ScalingInfo {
    pub fn lead(&self, lead: Lead) -> &LeadScale {
        &self.leads[lead.row()]
    }

    /// Maps normalized rows back to millivolts. `leads` names the lead of each
    /// row of `data`, so a 9-row reconstruction can be passed with
    /// [`LeadSet::TARGET_9`](crate::leads::LeadSet).
    pub fn denormalize(&self, data: ArrayView2<'_, f32>, leads: &[Lead]) -> Result<Array2<f32>> {
        if data.nrows() != leads.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows but {} lead names",
                data.nrows(),
                leads.len()
            )));
        }
        let mut out = data.to_owned();
        for (mut row, lead) in out.rows_mut().into_iter().zip(leads) {
            let s = self.lead(*lead);
            row.mapv_inplace(|v| s.denormalize(v));
        }
        Ok(out)
    }
}

/// Maps each lead affinely so its minimum becomes -1 and its maximum +1.
/// Constant leads become all zeros and are flagged degenerate.
pub fn normalize(rec: &EcgRecord) -> Result<(EcgRecord, ScalingInfo)> {
    let leads: Vec<LeadScale> = rec
        .signal()
        .rows()
        .into_iter()
        .map(|r| LeadScale::from_samples(r.iter()))
        .collect();
    let mut out = rec.signal().clone();
    for (mut row, s) in out.rows_mut().into_iter().zip(&leads) {
        row.mapv_inplace(|v| s.normalize(v));
    }
    let info = ScalingInfo { leads };
    let mut normalized = rec.with_signal(out, rec.fs())?;
    normalized.scaling = Some(info.clone());
    Ok((normalized, info))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leads::LeadSet;
    use proptest::prelude::*;

    fn record_with_lead0(values: &[f32]) -> EcgRecord {
        let mut sig = Array2::from_shape_fn((12, values.len()), |(r, c)| (r * c) as f32);
        sig.row_mut(0).assign(&ndarray::ArrayView1::from(values));
        EcgRecord::new("n", "n", sig, 500.0).unwrap()
    }

    #[test]
    fn endpoints() {
        let (out, info) = normalize(&record_with_lead0(&[-2.0, 0.0, 2.0])).unwrap();
        assert_eq!(out.signal().row(0).to_vec(), vec![-1.0, 0.0, 1.0]);
        assert!(!info.leads[0].degenerate);
        assert_eq!(out.scaling.as_ref(), Some(&info));
    }

    #[test]
    fn constant_lead_is_degenerate() {
        let (out, info) = normalize(&record_with_lead0(&[0.3, 0.3, 0.3])).unwrap();
        assert_eq!(out.signal().row(0).to_vec(), vec![0.0, 0.0, 0.0]);
        assert!(info.leads[0].degenerate);
        assert!(!info.leads[1].degenerate);
    }

    #[test]
    fn denormalize_checks_shape() {
        let (out, info) = normalize(&record_with_lead0(&[1.0, 2.0, 3.0])).unwrap();
        assert!(info.denormalize(out.signal().view(), &LeadSet::TARGET_9).is_err());
        let back = info.denormalize(out.signal().view(), &LeadSet::ALL_12).unwrap();
        assert_eq!(back.row(0).to_vec(), vec![1.0, 2.0, 3.0]);
    }

    proptest! {
        #[test]
        fn range_and_round_trip(values in proptest::collection::vec(-50.0f32..50.0, 2..300)) {
            let rec = record_with_lead0(&values);
            let (out, info) = normalize(&rec).unwrap();
            let s = info.leads[0];
            prop_assume!(!s.degenerate);
            let row = out.signal().row(0);
            prop_assert!(row.iter().all(|v| (-1.0..=1.0).contains(v)));
            prop_assert!(row.iter().any(|&v| v == -1.0));
            prop_assert!(row.iter().any(|&v| v == 1.0));
            let back = info.denormalize(out.signal().view(), &LeadSet::ALL_12).unwrap();
            let scale = s.min.abs().max(s.max.abs()) as f64;
            for (a, b) in back.row(0).iter().zip(&values) {
                prop_assert!(((a - b) as f64).abs() <= 1e-6 * scale);
            }
        }
    }
}
