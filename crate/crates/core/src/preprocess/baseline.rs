//! Baseline wander removal by two cascaded moving medians.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ingest::EcgRecord;

pub const SHORT_WINDOW_S: f32 = 0.2;
pub const LONG_WINDOW_S: f32 = 0.6;

/// Subtracts a baseline estimated by a 0.2 s moving median (suppresses QRS and
/// P waves) followed by a 0.6 s moving median (suppresses T waves).
pub fn remove_baseline(rec: &EcgRecord) -> Result<EcgRecord> {
    remove_baseline_with(rec, SHORT_WINDOW_S, LONG_WINDOW_S)
}

pub fn remove_baseline_with(rec: &EcgRecord, short_s: f32, long_s: f32) -> Result<EcgRecord> {
    let short = window_samples(short_s, rec.fs());
    let long = window_samples(long_s, rec.fs());
    let required = (long_s * rec.fs()).round() as usize;
    if rec.len() < required {
        return Err(Error::RecordTooShort {
            len: rec.len(),
            required,
        });
    }
    let mut out = Array2::<f32>::zeros(rec.signal().raw_dim());
    for (src, mut dst) in rec.signal().rows().into_iter().zip(out.rows_mut()) {
        let x: Vec<f32> = src.to_vec();
        let baseline = moving_median(&moving_median(&x, short), long);
        for ((d, v), b) in dst.iter_mut().zip(&x).zip(baseline) {
            *d = v - b;
        }
    }
    rec.with_signal(out, rec.fs())
}

/// Odd window length closest to `seconds * fs`.
fn window_samples(seconds: f32, fs: f32) -> usize {
    let n = (seconds * fs).round().max(1.0) as usize;
    n | 1
}

/// Centered moving median of odd width with edge replication.
pub fn moving_median(x: &[f32], width: usize) -> Vec<f32> {
    debug_assert!(width % 2 == 1);
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let half = width / 2;
    let at = |i: isize| -> f32 { x[i.clamp(0, n as isize - 1) as usize] };
    let mut window: Vec<f32> = (-(half as isize)..=half as isize).map(at).collect();
    window.sort_by(f32::total_cmp);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(window[half]);
        if i + 1 == n {
            break;
        }
        let leaving = at(i as isize - half as isize);
        let entering = at(i as isize + half as isize + 1);
        let pos = window
            .binary_search_by(|p| p.total_cmp(&leaving))
            .expect("leaving sample is in the window");
        window.remove(pos);
        let ins = window.partition_point(|p| p.total_cmp(&entering).is_lt());
        window.insert(ins, entering);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use std::f64::consts::PI;

    fn brute_median(x: &[f32], width: usize) -> Vec<f32> {
        let half = (width / 2) as isize;
        let n = x.len() as isize;
        (0..n)
            .map(|i| {
                let mut w: Vec<f32> = (i - half..=i + half)
                    .map(|j| x[j.clamp(0, n - 1) as usize])
                    .collect();
                w.sort_by(f32::total_cmp);
                w[w.len() / 2]
            })
            .collect()
    }

    #[test]
    fn sliding_median_matches_brute_force() {
        let x: Vec<f32> = (0..257).map(|i| ((i * 37 % 101) as f32).sin() * 3.0).collect();
        for width in [1, 3, 7, 31, 301] {
            assert_eq!(moving_median(&x, width), brute_median(&x, width), "width {width}");
        }
    }

    #[test]
    fn zero_stays_zero() {
        let rec = EcgRecord::new("z", "z", Array2::zeros((12, 1000)), 500.0).unwrap();
        let out = remove_baseline(&rec).unwrap();
        assert!(out.signal().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short() {
        let rec = EcgRecord::new("z", "z", Array2::zeros((12, 100)), 500.0).unwrap();
        assert!(matches!(
            remove_baseline(&rec),
            Err(Error::RecordTooShort { len: 100, required: 300 })
        ));
    }

    fn drift(i: usize, fs: f64) -> f64 {
        (2.0 * PI * 0.5 * i as f64 / fs).sin()
    }

    #[test]
    fn drift_only_input_is_flattened() {
        let fs = 500.0;
        let n = 5000; // 10 s
        let sig = Array2::from_shape_fn((12, n), |(_, i)| drift(i, fs) as f32);
        let rec = EcgRecord::new("d", "d", sig, fs as f32).unwrap();
        let out = remove_baseline(&rec).unwrap();
        let mean: f64 = out.signal().row(0).iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "residual mean {mean}");
    }

    #[test]
    fn drift_power_mostly_removed() {
        let fs = 500.0f32;
        let clean = synthetic::SyntheticEcg::default().record("c", 5000, fs, 11);
        let mut drifted = clean.signal().clone();
        for mut row in drifted.rows_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                *v += drift(i, fs as f64) as f32;
            }
        }
        let rec = clean.with_signal(drifted, fs).unwrap();
        let out = remove_baseline(&rec).unwrap();
        let drift_power = (0..5000).map(|i| drift(i, fs as f64).powi(2)).sum::<f64>();
        for row in 0..12 {
            let residual: f64 = out
                .signal()
                .row(row)
                .iter()
                .zip(clean.signal().row(row))
                .map(|(&o, &c)| (o as f64 - c as f64).powi(2))
                .sum();
            assert!(
                residual <= 0.05 * drift_power,
                "row {row}: residual {residual:.2} vs drift {drift_power:.2}"
            );
        }
    }
}
