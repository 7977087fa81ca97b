//! Integrated loudness after ITU-R BS.1770-4 (mono): K-weighting, 400 ms
//! blocks at 75 % overlap, -70 LUFS absolute gate, -10 LU relative gate.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const ABSOLUTE_GATE_LUFS: f64 = -70.0;
const RELATIVE_GATE_LU: f64 = -10.0;
const OFFSET: f64 = -0.691;

/// Direct-form I biquad, `a0 = 1`.
#[derive(Clone, Copy, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    // Stage 1 and 2 designs as parameterized by pyloudnorm, recomputed for
    // an arbitrary sample rate.
    fn high_shelf(fs: f64) -> Self {
        let gain_db = 3.999_843_853_97;
        let q = 0.707_175_236_955_419_3;
        let center_hz = 1_681.974_450_955_532;
        let k = (PI * center_hz / fs).tan();
        let vh = 10f64.powf(gain_db / 20.0);
        let vb = vh.powf(0.499_666_774_155);
        let a0 = 1.0 + k / q + k * k;
        Biquad {
            b: [
                (vh + vb * k / q + k * k) / a0,
                2.0 * (k * k - vh) / a0,
                (vh - vb * k / q + k * k) / a0,
            ],
            a: [2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0],
        }
    }

    fn high_pass(fs: f64) -> Self {
        let q = 0.500_327_037_325_395_3;
        let center_hz = 38.135_470_876_139_82;
        let k = (PI * center_hz / fs).tan();
        let a0 = 1.0 + k / q + k * k;
        Biquad {
            b: [1.0, -2.0, 1.0],
            a: [2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0],
        }
    }

    fn filter(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

pub fn k_weight(signal: &[f64], sample_rate_hz: u32) -> Vec<f64> {
    let fs = sample_rate_hz as f64;
    Biquad::high_pass(fs).filter(&Biquad::high_shelf(fs).filter(signal))
}

fn block_loudness(mean_square: f64) -> f64 {
    OFFSET + 10.0 * mean_square.log10()
}

/// Gated integrated loudness in LUFS.
pub fn measure_loudness(signal: &[f64], sample_rate_hz: u32) -> Result<f64> {
    let block = (0.4 * sample_rate_hz as f64).round() as usize;
    let step = block / 4;
    if signal.len() < block || block == 0 {
        return Err(Error::TooShortForLoudness { samples: signal.len() });
    }
    let weighted = k_weight(signal, sample_rate_hz);
    let powers: Vec<f64> = (0..=(weighted.len() - block) / step)
        .map(|j| {
            let s = &weighted[j * step..j * step + block];
            s.iter().map(|v| v * v).sum::<f64>() / block as f64
        })
        .collect();
    let above_abs: Vec<f64> = powers
        .iter()
        .copied()
        .filter(|&z| z > 0.0 && block_loudness(z) > ABSOLUTE_GATE_LUFS)
        .collect();
    if above_abs.is_empty() {
        return Err(Error::FullyGated);
    }
    let relative_gate = block_loudness(mean(&above_abs)) + RELATIVE_GATE_LU;
    let kept: Vec<f64> = above_abs
        .into_iter()
        .filter(|&z| block_loudness(z) > relative_gate)
        .collect();
    Ok(block_loudness(mean(&kept)))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub signal: Vec<f64>,
    /// Linear gain that was applied.
    pub gain: f64,
    /// Samples whose magnitude exceeds 1.0 after scaling (kept, not clipped).
    pub over_full_scale: usize,
}

/// Linear gain that moves a signal of loudness `measured` to `target`.
pub fn gain_for(measured_lufs: f64, target_lufs: f64) -> f64 {
    10f64.powf((target_lufs - measured_lufs) / 20.0)
}

/// Scales `signal` by a single gain so that its loudness equals `target_lufs`.
pub fn normalize_loudness(signal: &[f64], sample_rate_hz: u32, target_lufs: f64) -> Result<Normalized> {
    let gain = gain_for(measure_loudness(signal, sample_rate_hz)?, target_lufs);
    let signal: Vec<f64> = signal.iter().map(|v| v * gain).collect();
    let over_full_scale = signal.iter().filter(|v| v.abs() > 1.0).count();
    Ok(Normalized {
        signal,
        gain,
        over_full_scale,
    })
}
