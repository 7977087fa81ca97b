//! Anechoic multi-source scene rendering: microphone mixtures, per-source
//! direct sound at the reference mic, and the noise-free VDM target.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::directivity::DirectivityPattern;
use crate::error::{Error, Result};
use crate::geometry::{distance, ArrayGeometry, SourcePlacement, SPEED_OF_SOUND};

/// Half-length of the windowed-sinc fractional delay (64 taps total).
pub const SINC_HALF_TAPS: usize = 32;

/// Dry takes keyed by take id, already at the scene sample rate.
pub type Takes = BTreeMap<String, Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSource {
    pub take_id: String,
    pub placement: SourcePlacement,
    /// Linear gain applied to the dry take before rendering.
    #[serde(default = "unit_gain")]
    pub gain: f64,
}

fn unit_gain() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub sources: Vec<SceneSource>,
    /// Sensor-noise SNR in dB; `None` renders a noise-free scene.
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: u32,
}

fn default_rate() -> u32 {
    16_000
}

impl SceneSpec {
    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn doas(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.placement.azimuth_deg).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedScene {
    pub mic_signals: Vec<Vec<f64>>,
    /// Direct sound of each source at the reference microphone.
    pub per_source_ref_direct: Vec<Vec<f64>>,
    /// Noise-free target; empty until [`render_vdm_target`] fills it.
    pub vdm_target: Vec<f64>,
}

impl RenderedScene {
    pub fn len(&self) -> usize {
        self.mic_signals.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Hann-windowed sinc taps for a delay of `frac` in `[0, 1)` samples; tap
/// `j` multiplies `x[n - int_delay - (j - HALF + 1)]`.
fn fractional_delay_taps(frac: f64) -> [f64; 2 * SINC_HALF_TAPS] {
    let half = SINC_HALF_TAPS as f64;
    let mut taps = [0.0; 2 * SINC_HALF_TAPS];
    for (j, tap) in taps.iter_mut().enumerate() {
        let k = j as f64 - half + 1.0;
        let u = k - frac;
        let sinc = if u == 0.0 { 1.0 } else { (PI * u).sin() / (PI * u) };
        let window = if u.abs() >= half {
            0.0
        } else {
            0.5 + 0.5 * (PI * u / half).cos()
        };
        *tap = sinc * window;
    }
    taps
}

/// Delays `x` by `delay_samples` (fractional) and scales by `gain`,
/// producing `len` output samples.
pub fn delay_and_scale(x: &[f64], delay_samples: f64, gain: f64, len: usize) -> Vec<f64> {
    let int_delay = delay_samples.floor();
    let frac = delay_samples - int_delay;
    let int_delay = int_delay as isize;
    let taps = fractional_delay_taps(frac);
    let offset = SINC_HALF_TAPS as isize - 1;
    let mut y = vec![0.0; len];
    for (n, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, tap) in taps.iter().enumerate() {
            let m = n as isize - int_delay - (j as isize - offset);
            if m >= 0 && (m as usize) < x.len() {
                acc += x[m as usize] * tap;
            }
        }
        *out = acc * gain;
    }
    y
}

fn lookup_take<'a>(takes: &'a Takes, id: &str) -> Result<&'a [f64]> {
    let take = takes
        .get(id)
        .ok_or_else(|| Error::Scene(format!("missing take `{id}`")))?;
    if take.is_empty() {
        return Err(Error::Scene(format!("take `{id}` has zero length")));
    }
    Ok(take)
}

fn render_to_point(take: &[f64], source: &SceneSource, point: &[f64; 3], fs: f64, len: usize) -> Result<Vec<f64>> {
    let d = distance(&source.placement.position(), point);
    if d == 0.0 {
        return Err(Error::CoincidentSource {
            mic: usize::MAX,
            distance_m: source.placement.distance_m,
        });
    }
    let delay = d / SPEED_OF_SOUND * fs;
    Ok(delay_and_scale(take, delay, source.gain / (4.0 * PI * d), len))
}

fn validate_spec(spec: &SceneSpec) -> Result<()> {
    if spec.sources.is_empty() {
        return Err(Error::Scene("scene has no sources".into()));
    }
    if spec.num_samples() == 0 {
        return Err(Error::Scene("scene duration is zero".into()));
    }
    Ok(())
}

/// Renders every source to every microphone and sums (noise-free). The
/// returned scene has an empty `vdm_target`.
pub fn render_mics(spec: &SceneSpec, geometry: &ArrayGeometry, takes: &Takes) -> Result<RenderedScene> {
    validate_spec(spec)?;
    let len = spec.num_samples();
    let fs = spec.sample_rate_hz as f64;
    let q = geometry.num_mics();
    let mut mic_signals = vec![vec![0.0; len]; q];
    let mut per_source_ref_direct = Vec::with_capacity(spec.sources.len());
    for source in &spec.sources {
        let take = lookup_take(takes, &source.take_id)?;
        for (ch, mic) in geometry.mic_positions.iter().enumerate() {
            let rendered = render_to_point(take, source, mic, fs, len).map_err(|e| match e {
                Error::CoincidentSource { distance_m, .. } => Error::CoincidentSource { mic: ch, distance_m },
                other => other,
            })?;
            for (acc, v) in mic_signals[ch].iter_mut().zip(&rendered) {
                *acc += v;
            }
            if ch == geometry.reference_index {
                per_source_ref_direct.push(rendered);
            }
        }
    }
    Ok(RenderedScene {
        mic_signals,
        per_source_ref_direct,
        vdm_target: Vec::new(),
    })
}

/// Renders the noise-free VDM target: every source's direct sound at the
/// VDM position scaled by the pattern gain towards that source.
pub fn render_vdm_target(
    spec: &SceneSpec,
    geometry: &ArrayGeometry,
    pattern: &DirectivityPattern,
    takes: &Takes,
) -> Result<Vec<f64>> {
    validate_spec(spec)?;
    let len = spec.num_samples();
    let fs = spec.sample_rate_hz as f64;
    let point = geometry.vdm_position();
    let mut target = vec![0.0; len];
    for source in &spec.sources {
        let take = lookup_take(takes, &source.take_id)?;
        let s = pattern.evaluate(source.placement.azimuth_deg);
        let rendered = render_to_point(take, source, &point, fs, len)?;
        for (acc, v) in target.iter_mut().zip(&rendered) {
            *acc += s * v;
        }
    }
    Ok(target)
}

/// Full noise-free rendering: mics, per-source direct sound, and target.
pub fn render_scene(
    spec: &SceneSpec,
    geometry: &ArrayGeometry,
    pattern: &DirectivityPattern,
    takes: &Takes,
) -> Result<RenderedScene> {
    let mut scene = render_mics(spec, geometry, takes)?;
    scene.vdm_target = render_vdm_target(spec, geometry, pattern, takes)?;
    Ok(scene)
}

/// Adds independent white Gaussian noise to every microphone channel so that
/// each channel's SNR against its own noise-free mixture equals `snr_db`.
/// An infinite SNR leaves the scene unchanged.
pub fn add_sensor_noise(mut scene: RenderedScene, snr_db: f64, seed: u64) -> Result<RenderedScene> {
    if snr_db == f64::INFINITY {
        return Ok(scene);
    }
    if !snr_db.is_finite() {
        return Err(Error::Scene(format!("invalid SNR {snr_db}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (ch, signal) in scene.mic_signals.iter_mut().enumerate() {
        let power = signal.iter().map(|v| v * v).sum::<f64>() / signal.len().max(1) as f64;
        if power == 0.0 {
            return Err(Error::SilentMixture(ch));
        }
        // one stream per channel keeps channels independent of each other's length
        rng.set_stream(ch as u64);
        rng.set_word_pos(0);
        let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        for v in signal.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * n;
        }
    }
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directivity::Preset;
    use crate::geometry::build_uca;

    fn tone_mix(len: usize, fs: f64, shift: f64) -> Vec<f64> {
        (0..len)
            .map(|n| {
                let t = (n as f64 - shift) / fs;
                (2.0 * PI * 300.0 * t).sin() + 0.5 * (2.0 * PI * 1100.0 * t).sin() + 0.25 * (2.0 * PI * 2500.0 * t).sin()
            })
            .collect()
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn source(id: &str, az: f64, dist: f64) -> SceneSource {
        SceneSource {
            take_id: id.into(),
            placement: SourcePlacement::new(az, dist).unwrap(),
            gain: 1.0,
        }
    }

    fn spec(sources: Vec<SceneSource>, duration_s: f64) -> SceneSpec {
        SceneSpec {
            sources,
            snr_db: None,
            seed: 0,
            duration_s,
            sample_rate_hz: 16_000,
        }
    }

    #[test]
    fn single_mic_delay_and_scale_oracle() {
        let fs = 16_000.0;
        let geometry = build_uca(0.03, 0, true).unwrap();
        let len = 8000;
        let mut takes = Takes::new();
        takes.insert("a".into(), tone_mix(len, fs, 0.0));
        let scene = render_mics(&spec(vec![source("a", 30.0, 3.0)], 0.5), &geometry, &takes).unwrap();
        let delay = 3.0 / SPEED_OF_SOUND * fs;
        let expected: Vec<f64> = tone_mix(len, fs, delay).iter().map(|v| v / (12.0 * PI)).collect();
        // skip the onset and the truncated tail
        let range = 200..len - 40;
        let err: f64 = range.clone().map(|n| (scene.mic_signals[0][n] - expected[n]).powi(2)).sum();
        let sig: f64 = range.map(|n| expected[n].powi(2)).sum();
        let err_db = 10.0 * (err / sig).log10();
        assert!(err_db <= -60.0, "truncation error {err_db:.1} dB");
    }

    #[test]
    fn integer_delay_is_exact_shift() {
        let x = noise(100, 1);
        let y = delay_and_scale(&x, 7.0, 2.0, 100);
        for n in 7..100 {
            assert!((y[n] - 2.0 * x[n - 7]).abs() < 1e-12);
        }
        assert!(y[..7].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn superposition_and_reference_bookkeeping() {
        let g = build_uca(0.03, 3, true).unwrap();
        let mut takes = Takes::new();
        takes.insert("a".into(), noise(4000, 2));
        takes.insert("b".into(), noise(4000, 3));
        let sa = source("a", 10.0, 1.5);
        let sb = source("b", 200.0, 1.5);
        let both = render_mics(&spec(vec![sa.clone(), sb.clone()], 0.25), &g, &takes).unwrap();
        let only_a = render_mics(&spec(vec![sa], 0.25), &g, &takes).unwrap();
        let only_b = render_mics(&spec(vec![sb], 0.25), &g, &takes).unwrap();
        for ch in 0..4 {
            for n in 0..4000 {
                let sum = only_a.mic_signals[ch][n] + only_b.mic_signals[ch][n];
                assert!((both.mic_signals[ch][n] - sum).abs() < 1e-12);
            }
        }
        for n in 0..4000 {
            let direct: f64 = both.per_source_ref_direct.iter().map(|s| s[n]).sum();
            assert_eq!(direct, both.mic_signals[0][n]);
        }
    }

    #[test]
    fn cardioid_targets() {
        let g = build_uca(0.03, 3, true).unwrap();
        let pattern = DirectivityPattern::preset(Preset::Cardioid, 0.0);
        let mut takes = Takes::new();
        takes.insert("a".into(), noise(2000, 4));
        takes.insert("b".into(), noise(2000, 5));
        let front = spec(vec![source("a", 0.0, 1.5)], 0.125);
        let scene = render_scene(&front, &g, &pattern, &takes).unwrap();
        assert_eq!(scene.vdm_target, scene.per_source_ref_direct[0]);

        let back = spec(vec![source("b", 180.0, 1.5)], 0.125);
        let target = render_vdm_target(&back, &g, &pattern, &takes).unwrap();
        assert!(target.iter().all(|&v| v == 0.0));

        let both = spec(vec![source("a", 0.0, 1.5), source("b", 180.0, 1.5)], 0.125);
        let scene = render_scene(&both, &g, &pattern, &takes).unwrap();
        assert_eq!(scene.vdm_target, scene.per_source_ref_direct[0]);
    }

    #[test]
    fn all_ones_pattern_target_is_reference_channel() {
        let g = build_uca(0.03, 3, true).unwrap();
        let omni = DirectivityPattern::new(vec![1.0], 0.0).unwrap();
        let mut takes = Takes::new();
        takes.insert("a".into(), noise(2000, 6));
        takes.insert("b".into(), noise(2000, 7));
        let s = spec(vec![source("a", 40.0, 1.5), source("b", 250.0, 1.5)], 0.125);
        let scene = render_scene(&s, &g, &omni, &takes).unwrap();
        assert_eq!(scene.vdm_target, scene.mic_signals[g.reference_index]);
    }

    #[test]
    fn render_errors() {
        let g = build_uca(0.03, 3, true).unwrap();
        let mut takes = Takes::new();
        takes.insert("empty".into(), vec![]);
        let missing = render_mics(&spec(vec![source("nope", 0.0, 1.5)], 0.1), &g, &takes);
        assert!(matches!(missing, Err(Error::Scene(_))));
        let empty = render_mics(&spec(vec![source("empty", 0.0, 1.5)], 0.1), &g, &takes);
        assert!(matches!(empty, Err(Error::Scene(_))));
    }

    fn noisy_fixture() -> RenderedScene {
        let g = build_uca(0.03, 3, true).unwrap();
        let mut takes = Takes::new();
        takes.insert("a".into(), noise(64_000, 8));
        let s = spec(vec![source("a", 75.0, 1.5)], 4.0);
        render_scene(&s, &g, &DirectivityPattern::preset(Preset::Cardioid, 0.0), &takes).unwrap()
    }

    #[test]
    fn sensor_noise_hits_target_snr() {
        let clean = noisy_fixture();
        let noisy = add_sensor_noise(clean.clone(), 30.0, 11).unwrap();
        let mut noises = Vec::new();
        for ch in 0..4 {
            let n: Vec<f64> = noisy.mic_signals[ch]
                .iter()
                .zip(&clean.mic_signals[ch])
                .map(|(a, b)| a - b)
                .collect();
            let ps: f64 = clean.mic_signals[ch].iter().map(|v| v * v).sum();
            let pn: f64 = n.iter().map(|v| v * v).sum();
            let snr = 10.0 * (ps / pn).log10();
            assert!((snr - 30.0).abs() <= 0.2, "channel {ch}: {snr}");
            noises.push(n);
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                let dot: f64 = noises[i].iter().zip(&noises[j]).map(|(a, b)| a * b).sum();
                let ni: f64 = noises[i].iter().map(|v| v * v).sum::<f64>().sqrt();
                let nj: f64 = noises[j].iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((dot / (ni * nj)).abs() <= 0.05);
            }
        }
        assert_eq!(noisy.vdm_target, clean.vdm_target);
        assert_eq!(noisy.per_source_ref_direct, clean.per_source_ref_direct);
    }

    #[test]
    fn sensor_noise_determinism_and_sentinels() {
        let clean = noisy_fixture();
        let a = add_sensor_noise(clean.clone(), 30.0, 5).unwrap();
        let b = add_sensor_noise(clean.clone(), 30.0, 5).unwrap();
        assert_eq!(a, b);
        let c = add_sensor_noise(clean.clone(), 30.0, 6).unwrap();
        assert_ne!(a, c);
        assert_eq!(add_sensor_noise(clean.clone(), f64::INFINITY, 5).unwrap(), clean);
        let mut silent = clean;
        silent.mic_signals[2].iter_mut().for_each(|v| *v = 0.0);
        assert!(matches!(add_sensor_noise(silent, 30.0, 1), Err(Error::SilentMixture(2))));
    }
}
