//! Polyphase rational resampling.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ingest::EcgRecord;

/// Kaiser window shape for the anti-aliasing filter.
const KAISER_BETA: f64 = 5.0;
/// Filter half-length in units of the larger of the two rate factors.
const HALF_LEN_FACTOR: usize = 10;

/// Resamples every lead to `fs_target`. Identical rates return the record unchanged.
pub fn resample(rec: &EcgRecord, fs_target: f32) -> Result<EcgRecord> {
    if !(fs_target.is_finite() && fs_target > 0.0) {
        return Err(Error::Precondition(format!(
            "target rate {fs_target} is not positive"
        )));
    }
    if rec.fs() == fs_target {
        return Ok(rec.clone());
    }
    let (up, down) = rational_ratio(rec.fs() as f64, fs_target as f64)?;
    let filter = design_filter(up, down);
    let n_out = ((rec.len() as f64) * up as f64 / down as f64).round().max(1.0) as usize;

    let mut out = Array2::<f32>::zeros((12, n_out));
    for (src, mut dst) in rec.signal().rows().into_iter().zip(out.rows_mut()) {
        let x: Vec<f64> = src.iter().map(|&v| v as f64).collect();
        let y = resample_poly(&x, up, down, &filter, n_out);
        for (d, v) in dst.iter_mut().zip(y) {
            *d = v as f32;
        }
    }
    rec.with_signal(out, fs_target)
}

/// `fs_to / fs_from` as a reduced fraction `up / down`. Rates are resolved to
/// the millihertz.
pub fn rational_ratio(fs_from: f64, fs_to: f64) -> Result<(usize, usize)> {
    let to_milli = |f: f64| -> Result<u64> {
        let m = f * 1000.0;
        if (m - m.round()).abs() > 1e-3 * m.abs().max(1.0) || m.round() < 1.0 {
            return Err(Error::Precondition(format!(
                "sampling rate {f} Hz is not a whole number of millihertz"
            )));
        }
        Ok(m.round() as u64)
    };
    let a = to_milli(fs_from)?;
    let b = to_milli(fs_to)?;
    let g = gcd(a, b);
    Ok(((b / g) as usize, (a / g) as usize))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Windowed-sinc low-pass at `min(fs_in, fs_out) / 2`, scaled by `up` so the
/// zero-stuffed signal keeps unit gain.
fn design_filter(up: usize, down: usize) -> Vec<f64> {
    let max_rate = up.max(down);
    let cutoff = 1.0 / max_rate as f64; // fraction of the upsampled Nyquist
    let half = HALF_LEN_FACTOR * max_rate;
    let n_taps = 2 * half + 1;
    let i0_beta = bessel_i0(KAISER_BETA);
    let mut h: Vec<f64> = (0..n_taps)
        .map(|n| {
            let m = n as f64 - half as f64;
            let r = m / half as f64;
            let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
            cutoff * sinc(cutoff * m) * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    for v in &mut h {
        *v *= up as f64 / sum;
    }
    h
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Upsample by `up` (zero stuffing), filter, downsample by `down`, with the
/// filter delay removed. The input is extended past both ends by odd
/// reflection so edge samples do not see a step to zero.
fn resample_poly(x: &[f64], up: usize, down: usize, h: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as i64;
    let half = (h.len() / 2) as i64;
    let up_i = up as i64;
    let at = |j: i64| -> f64 {
        if n == 1 {
            return x[0];
        }
        if j < 0 {
            let k = (-j).min(n - 1);
            2.0 * x[0] - x[k as usize]
        } else if j >= n {
            let k = (2 * (n - 1) - j).max(0);
            2.0 * x[(n - 1) as usize] - x[k as usize]
        } else {
            x[j as usize]
        }
    };
    (0..n_out)
        .map(|k| {
            // position in the upsampled stream, delay-compensated
            let t = k as i64 * down as i64 + half;
            let j_hi = t.div_euclid(up_i);
            let j_lo = (t - h.len() as i64 + 1 + up_i - 1).div_euclid(up_i);
            (j_lo..=j_hi)
                .map(|j| h[(t - j * up_i) as usize] * at(j))
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::compute_rx;

    fn sine_record(fs: f32, n: usize, freq: f64) -> EcgRecord {
        let sig = Array2::from_shape_fn((12, n), |(r, i)| {
            ((2.0 * std::f64::consts::PI * freq * i as f64 / fs as f64) + r as f64 * 0.3).sin()
                as f32
        });
        EcgRecord::new("s", "s", sig, fs).unwrap()
    }

    #[test]
    fn ratio_reduction() {
        assert_eq!(rational_ratio(1000.0, 500.0).unwrap(), (1, 2));
        assert_eq!(rational_ratio(257.0, 500.0).unwrap(), (500, 257));
        assert_eq!(rational_ratio(500.0, 500.0).unwrap(), (1, 1));
        assert!(rational_ratio(500.0, 0.0).is_err());
    }

    #[test]
    fn equal_rate_is_identity() {
        let rec = sine_record(500.0, 700, 3.0);
        assert_eq!(resample(&rec, 500.0).unwrap(), rec);
    }

    #[test]
    fn halves_ptb_length() {
        let rec = sine_record(1000.0, 30_000, 10.0);
        let out = resample(&rec, 500.0).unwrap();
        assert_eq!(out.fs(), 500.0);
        assert_eq!(out.len(), 15_000);
    }

    #[test]
    fn sinusoid_matches_analytic_samples() {
        let rec = sine_record(1000.0, 4000, 10.0);
        let out = resample(&rec, 500.0).unwrap();
        for (row, lead) in out.signal().rows().into_iter().enumerate() {
            let oracle: Vec<f64> = (0..out.len())
                .map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / 500.0 + row as f64 * 0.3).sin())
                .collect();
            let got: Vec<f64> = lead.iter().map(|&v| v as f64).collect();
            let r = compute_rx(&oracle, &got).unwrap();
            assert!(r >= 0.999, "lead row {row}: r = {r}");
        }
    }

    #[test]
    fn upsampling_odd_rates() {
        let rec = sine_record(257.0, 257 * 4, 5.0);
        let out = resample(&rec, 500.0).unwrap();
        assert_eq!(out.len(), 2000);
        let oracle: Vec<f64> = (0..out.len())
            .map(|i| (2.0 * std::f64::consts::PI * 5.0 * i as f64 / 500.0).sin())
            .collect();
        let got: Vec<f64> = out.signal().row(0).iter().map(|&v| v as f64).collect();
        assert!(compute_rx(&oracle, &got).unwrap() > 0.999);
    }

    #[test]
    fn removes_content_above_new_nyquist() {
        // 400 Hz at 1000 Hz aliases to 100 Hz without filtering; the output Nyquist is 250 Hz.
        let rec = sine_record(1000.0, 4000, 400.0);
        let out = resample(&rec, 500.0).unwrap();
        let row = out.signal().row(0);
        let interior = &row.as_slice().unwrap()[100..1900];
        let rms = (interior.iter().map(|v| (*v as f64).powi(2)).sum::<f64>()
            / interior.len() as f64)
            .sqrt();
        assert!(rms < 0.01, "alias rms {rms}");
    }
}
