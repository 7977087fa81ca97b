//! Synthetic speech-like takes for tests, demos and corpus-free runs.
//!
//! Each take is a sequence of syllables separated by pauses. Voiced
//! syllables are additive harmonic series with a gliding fundamental and a
//! three-formant envelope; unvoiced ones are high-passed noise bursts. A
//! -60 dB noise floor runs underneath, as in real recordings.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [530.0, 1840.0, 2480.0],
    [270.0, 2290.0, 3010.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
];

fn formant_gain(freq: f64, formants: &[f64; 3]) -> f64 {
    formants
        .iter()
        .zip([80.0, 110.0, 160.0])
        .zip([1.0, 0.6, 0.3])
        .map(|((&fc, bw), amp)| amp / (1.0 + ((freq - fc) / bw).powi(2)))
        .sum::<f64>()
        + 0.01
}

fn envelope(n: usize, len: usize) -> f64 {
    let ramp = (len / 5).max(1);
    if n < ramp {
        0.5 - 0.5 * (PI * n as f64 / ramp as f64).cos()
    } else if n >= len - ramp {
        0.5 - 0.5 * (PI * (len - n) as f64 / ramp as f64).cos()
    } else {
        1.0
    }
}

/// Speech-like signal of `duration_s` seconds with peak level near 0.5.
pub fn speech_like(seed: u64, duration_s: f64, sample_rate_hz: u32) -> Vec<f64> {
    let fs = sample_rate_hz as f64;
    let len = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let base_f0: f64 = rng.random_range(95.0..230.0);

    // short leading pause, then syllables
    let mut pos = (rng.random_range(0.02..0.15) * fs) as usize;
    while pos < len {
        let syl = ((rng.random_range(0.12..0.32) * fs) as usize).min(len - pos);
        let level: f64 = rng.random_range(0.3..1.0);
        if rng.random_bool(0.8) {
            let formants = VOWELS[rng.random_range(0..VOWELS.len())];
            let f0_start = base_f0 * rng.random_range(0.85..1.15);
            let f0_end = f0_start * rng.random_range(0.8..1.2);
            let mut phase = 0.0;
            let harmonics = ((fs / 2.0 - 200.0) / f0_start.max(f0_end)).floor() as usize;
            let gains: Vec<f64> = (1..=harmonics)
                .map(|h| formant_gain(h as f64 * f0_start, &formants) / (h as f64).sqrt())
                .collect();
            for n in 0..syl {
                let f0 = f0_start + (f0_end - f0_start) * n as f64 / syl as f64;
                phase += 2.0 * PI * f0 / fs;
                let v: f64 = gains
                    .iter()
                    .enumerate()
                    .map(|(h, g)| g * ((h + 1) as f64 * phase).sin())
                    .sum();
                out[pos + n] += level * 0.25 * v * envelope(n, syl);
            }
        } else {
            let mut prev = 0.0;
            for n in 0..syl {
                let w: f64 = StandardNormal.sample(&mut rng);
                out[pos + n] += level * 0.15 * (w - prev) * envelope(n, syl);
                prev = w;
            }
        }
        pos += syl;
        let pause = if rng.random_bool(0.15) {
            rng.random_range(0.2..0.45)
        } else {
            rng.random_range(0.03..0.12)
        };
        pos += (pause * fs) as usize;
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let floor = 0.5e-3;
    for v in out.iter_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v = *v * 0.5 / peak + floor * n;
    }
    out
}
