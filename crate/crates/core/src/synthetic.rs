//! Synthetic 12-lead records generated from a moving cardiac dipole.
//!
//! Every lead is a fixed linear projection of one 3-D heart vector, so the
//! limb leads satisfy the Einthoven/Goldberger identities exactly and all nine
//! target leads are linear functions of leads I, II and V2. Used by tests,
//! the acceptance suite and the `synth` CLI command.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::{EcgRecord, Subgroup};
use crate::leads::Lead;

/// One wave of the beat: Gaussian in time, fixed direction in space.
#[derive(Debug, Clone, Copy)]
struct Wave {
    offset_s: f64,
    sigma_s: f64,
    amplitude_mv: f64,
    direction: [f64; 3],
}

const WAVES: [Wave; 5] = [
    // P
    Wave { offset_s: -0.20, sigma_s: 0.025, amplitude_mv: 0.15, direction: [0.6, 0.7, 0.2] },
    // Q
    Wave { offset_s: -0.03, sigma_s: 0.008, amplitude_mv: 0.15, direction: [-0.4, -0.2, 0.5] },
    // R
    Wave { offset_s: 0.0, sigma_s: 0.012, amplitude_mv: 1.2, direction: [0.7, 0.6, -0.3] },
    // S
    Wave { offset_s: 0.035, sigma_s: 0.010, amplitude_mv: 0.4, direction: [-0.3, -0.4, 0.8] },
    // T
    Wave { offset_s: 0.28, sigma_s: 0.045, amplitude_mv: 0.35, direction: [0.6, 0.6, -0.2] },
];

/// Precordial lead vectors (x: left, y: inferior, z: anterior).
const PRECORDIAL: [(Lead, [f64; 3]); 6] = [
    (Lead::V1, [-0.45, 0.1, 0.9]),
    (Lead::V2, [-0.1, 0.1, 1.0]),
    (Lead::V3, [0.3, 0.15, 0.9]),
    (Lead::V4, [0.6, 0.2, 0.7]),
    (Lead::V5, [0.85, 0.2, 0.4]),
    (Lead::V6, [1.0, 0.2, 0.1]),
];

#[derive(Debug, Clone)]
pub struct SyntheticEcg {
    pub heart_rate_bpm: f64,
    /// Beat-to-beat RR variability, as a fraction of the mean RR.
    pub rr_jitter: f64,
    /// Per-record spread of wave amplitudes and directions.
    pub morphology_spread: f64,
    /// Independent Gaussian noise per lead, mV. Zero keeps leads exactly dipole-consistent.
    pub noise_mv: f64,
}

impl Default for SyntheticEcg {
    fn default() -> Self {
        Self {
            heart_rate_bpm: 72.0,
            rr_jitter: 0.03,
            morphology_spread: 0.2,
            noise_mv: 0.0,
        }
    }
}

impl SyntheticEcg {
    /// Heart vector, 3 × n.
    pub fn dipole(&self, n: usize, fs: f32, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fs = fs as f64;
        let waves: Vec<Wave> = WAVES
            .iter()
            .map(|w| {
                let mut w = *w;
                w.amplitude_mv *= 1.0 + self.morphology_spread * rng.random_range(-1.0..1.0);
                for d in &mut w.direction {
                    *d += self.morphology_spread * rng.random_range(-0.5..0.5);
                }
                w
            })
            .collect();

        let rr = 60.0 / self.heart_rate_bpm;
        let duration = n as f64 / fs;
        let mut beats = Vec::new();
        let mut t = rng.random_range(0.25..0.25 + rr);
        while t < duration + 0.5 {
            beats.push(t);
            t += rr * (1.0 + self.rr_jitter * rng.random_range(-1.0..1.0));
        }

        let mut d = Array2::<f64>::zeros((3, n));
        for i in 0..n {
            let ti = i as f64 / fs;
            for &b in &beats {
                if (ti - b).abs() > 0.6 {
                    continue;
                }
                for w in &waves {
                    let z = (ti - b - w.offset_s) / w.sigma_s;
                    let g = w.amplitude_mv * (-0.5 * z * z).exp();
                    for k in 0..3 {
                        d[[k, i]] += g * w.direction[k];
                    }
                }
            }
        }
        d
    }

    /// Projects a heart vector onto the 12 leads.
    pub fn project(dipole: &Array2<f64>) -> Array2<f32> {
        let n = dipole.ncols();
        let cos60 = 0.5;
        let sin60 = 3f64.sqrt() / 2.0;
        let mut out = Array2::<f32>::zeros((12, n));
        for i in 0..n {
            let (x, y, z) = (dipole[[0, i]], dipole[[1, i]], dipole[[2, i]]);
            let l1 = x;
            let l2 = x * cos60 + y * sin60;
            let limb = limb_from(l1, l2);
            out[[Lead::I.row(), i]] = l1 as f32;
            out[[Lead::II.row(), i]] = l2 as f32;
            for (lead, v) in [Lead::III, Lead::AVR, Lead::AVL, Lead::AVF].into_iter().zip(limb) {
                out[[lead.row(), i]] = v as f32;
            }
            for (lead, v) in PRECORDIAL {
                out[[lead.row(), i]] = (v[0] * x + v[1] * y + v[2] * z) as f32;
            }
        }
        out
    }

    pub fn record(&self, record_id: &str, n: usize, fs: f32, seed: u64) -> EcgRecord {
        let mut signal = Self::project(&self.dipole(n, fs, seed));
        if self.noise_mv > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            let normal = Normal::new(0.0, self.noise_mv).expect("finite noise level");
            for v in signal.iter_mut() {
                *v += normal.sample(&mut rng) as f32;
            }
        }
        EcgRecord::new(record_id, record_id, signal, fs)
            .expect("synthetic records are valid")
            .with_source_db("synthetic")
    }

    /// `count` records with ids `syn000`, `syn001`, …; subgroups cycle through
    /// the labelled set.
    pub fn dataset(&self, count: usize, n: usize, fs: f32, seed: u64) -> Vec<EcgRecord> {
        (0..count)
            .map(|i| {
                self.record(&format!("syn{i:03}"), n, fs, seed.wrapping_add(i as u64))
                    .with_subgroup(Subgroup::LABELLED[i % Subgroup::LABELLED.len()])
            })
            .collect()
    }
}

/// III, aVR, aVL, aVF from I and II.
fn limb_from(i: f64, ii: f64) -> [f64; 4] {
    [ii - i, -(i + ii) / 2.0, i - ii / 2.0, ii - i / 2.0]
}
