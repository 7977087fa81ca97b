//! Square-root-Hann STFT analysis and overlap-add synthesis at 50 % overlap.
//!
//! Framing: no centering pre-pad; the signal is zero-padded at the tail to a
//! whole number of hops (and at least one frame). Frame `t` covers samples
//! `[t * hop, t * hop + frame_len)`. Analysis and synthesis both use the
//! square root of a periodic Hann window, whose square sums to one at 50 %
//! overlap, so every sample covered by two frames is reconstructed exactly.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameConfig {
    pub sample_rate_hz: u32,
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for FrameConfig {
    /// 16 kHz, 32 ms frames, 50 % overlap.
    fn default() -> Self {
        FrameConfig {
            sample_rate_hz: 16_000,
            frame_len: 512,
            hop: 256,
        }
    }
}

impl FrameConfig {
    /// A config with the given (even) frame length at 16 kHz.
    pub fn with_frame_len(frame_len: usize) -> Result<Self> {
        let cfg = FrameConfig {
            sample_rate_hz: 16_000,
            frame_len,
            hop: frame_len / 2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || !self.frame_len.is_multiple_of(2) || self.hop * 2 != self.frame_len {
            return Err(Error::Config(format!(
                "frame_len must be even and hop = frame_len / 2 (got {} / {})",
                self.frame_len, self.hop
            )));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate_hz as f64 / self.frame_len as f64
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        let padded = len.div_ceil(self.hop).max(2) * self.hop;
        padded / self.hop - 1
    }

    /// Number of samples produced by synthesis from `frames` frames.
    pub fn synthesis_len(&self, frames: usize) -> usize {
        frames * self.hop + self.frame_len - self.hop
    }

    /// `sqrt(0.5 - 0.5 cos(2 pi k / N))`, periodic.
    pub fn window(&self) -> Vec<f64> {
        let n = self.frame_len as f64;
        (0..self.frame_len)
            .map(|k| (0.5 - 0.5 * (2.0 * PI * k as f64 / n).cos()).max(0.0).sqrt())
            .collect()
    }
}

/// One-sided complex spectrogram, stored row-major by `(bin, frame)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    bins: usize,
    frames: usize,
    data: Vec<Complex64>,
    config: FrameConfig,
}

impl ComplexSpectrogram {
    pub fn zeros(config: FrameConfig, frames: usize) -> Self {
        let bins = config.bins();
        ComplexSpectrogram {
            bins,
            frames,
            data: vec![Complex64::new(0.0, 0.0); bins * frames],
            config,
        }
    }

    pub fn from_data(config: FrameConfig, frames: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != config.bins() * frames {
            return Err(Error::Shape(format!(
                "spectrogram data of length {} does not match {} bins x {frames} frames",
                data.len(),
                config.bins()
            )));
        }
        Ok(ComplexSpectrogram {
            bins: config.bins(),
            frames,
            data,
            config,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn config(&self) -> FrameConfig {
        self.config
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bins, self.frames)
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }

    pub fn set(&mut self, bin: usize, frame: usize, value: Complex64) {
        self.data[bin * self.frames + frame] = value;
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn same_shape(&self, other: &ComplexSpectrogram) -> bool {
        self.shape() == other.shape() && self.config == other.config
    }

    pub(crate) fn check_same_shape(&self, other: &ComplexSpectrogram, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    /// Elementwise map producing a new spectrogram of the same shape.
    pub fn map(&self, mut f: impl FnMut(usize, usize, Complex64) -> Complex64) -> Self {
        let mut out = self.clone();
        for b in 0..self.bins {
            for t in 0..self.frames {
                let i = b * self.frames + t;
                out.data[i] = f(b, t, self.data[i]);
            }
        }
        out
    }
}

/// Complex gain per time-frequency bin, stored like a spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMask {
    bins: usize,
    frames: usize,
    data: Vec<Complex64>,
}

impl ComplexMask {
    pub fn from_data(bins: usize, frames: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != bins * frames {
            return Err(Error::Shape(format!(
                "{} mask values for {bins} x {frames}",
                data.len()
            )));
        }
        Ok(ComplexMask { bins, frames, data })
    }

    pub fn constant(bins: usize, frames: usize, value: Complex64) -> Self {
        ComplexMask {
            bins,
            frames,
            data: vec![value; bins * frames],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bins, self.frames)
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// Elementwise product with a spectrogram of the same shape.
    pub fn apply(&self, spec: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        if spec.shape() != self.shape() {
            return Err(Error::Shape(format!(
                "mask {:?} vs spectrogram {:?}",
                self.shape(),
                spec.shape()
            )));
        }
        Ok(spec.map(|b, t, v| v * self.data[b * self.frames + t]))
    }
}

/// Reusable analysis/synthesis engine holding the FFT plans and window.
#[derive(Clone)]
pub struct Stft {
    config: FrameConfig,
    window: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: FrameConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Stft {
            config,
            window: config.window(),
            forward: planner.plan_fft_forward(config.frame_len),
            inverse: planner.plan_fft_inverse(config.frame_len),
        })
    }

    pub fn config(&self) -> FrameConfig {
        self.config
    }

    pub fn analyze(&self, signal: &[f64]) -> Result<ComplexSpectrogram> {
        if signal.is_empty() {
            return Err(Error::EmptySignal);
        }
        let cfg = self.config;
        let frames = cfg.num_frames(signal.len());
        let mut spec = ComplexSpectrogram::zeros(cfg, frames);
        let mut buf = self.forward.make_input_vec();
        let mut out = self.forward.make_output_vec();
        for t in 0..frames {
            let start = t * cfg.hop;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = signal.get(start + k).copied().unwrap_or(0.0) * self.window[k];
            }
            self.forward
                .process(&mut buf, &mut out)
                .expect("forward FFT buffers sized by planner");
            for (bin, v) in out.iter().enumerate() {
                spec.data[bin * frames + t] = *v;
            }
        }
        Ok(spec)
    }

    pub fn synthesize(&self, spec: &ComplexSpectrogram) -> Result<Vec<f64>> {
        let cfg = self.config;
        if spec.config != cfg || spec.bins != cfg.bins() {
            return Err(Error::Shape(format!(
                "spectrogram with {} bins does not match frame length {}",
                spec.bins, cfg.frame_len
            )));
        }
        let frames = spec.frames;
        let mut out = vec![0.0; cfg.synthesis_len(frames)];
        let mut bins = self.inverse.make_input_vec();
        let mut buf = self.inverse.make_output_vec();
        let scale = 1.0 / cfg.frame_len as f64;
        let last = bins.len() - 1;
        for t in 0..frames {
            for (bin, b) in bins.iter_mut().enumerate() {
                *b = spec.data[bin * frames + t];
            }
            // the inverse real FFT ignores (and rejects) imaginary DC/Nyquist parts
            bins[0].im = 0.0;
            bins[last].im = 0.0;
            self.inverse
                .process(&mut bins, &mut buf)
                .expect("inverse FFT buffers sized by planner");
            let start = t * cfg.hop;
            for (k, v) in buf.iter().enumerate() {
                out[start + k] += v * scale * self.window[k];
            }
        }
        Ok(out)
    }

    /// `synthesize(analyze(signal))` cut to the input length: the signal
    /// as seen through the analysis-synthesis chain, edges included.
    pub fn roundtrip(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.synthesize(&self.analyze(signal)?)?;
        out.truncate(signal.len());
        Ok(out)
    }

    /// Vector-Jacobian product of [`Stft::synthesize`]: given the gradient of
    /// a real loss with respect to the synthesized samples, returns the
    /// gradient with respect to the real and imaginary parts of every bin,
    /// packed as `re + i*im`.
    pub fn synthesize_vjp(&self, grad_signal: &[f64], frames: usize) -> ComplexSpectrogram {
        let cfg = self.config;
        let mut grad = ComplexSpectrogram::zeros(cfg, frames);
        let mut buf = self.forward.make_input_vec();
        let mut out = self.forward.make_output_vec();
        let n = cfg.frame_len as f64;
        let last = cfg.bins() - 1;
        for t in 0..frames {
            let start = t * cfg.hop;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = grad_signal.get(start + k).copied().unwrap_or(0.0) * self.window[k];
            }
            self.forward
                .process(&mut buf, &mut out)
                .expect("forward FFT buffers sized by planner");
            for (bin, v) in out.iter().enumerate() {
                let mult = if bin == 0 || bin == last { 1.0 } else { 2.0 };
                // d x[n] / d Re X_k =  c_k cos(2 pi k n / N) / N
                // d x[n] / d Im X_k = -c_k sin(2 pi k n / N) / N
                // and rfft(g)_k = sum g cos - i sum g sin
                let mut g = *v * (mult / n);
                if bin == 0 || bin == last {
                    g.im = 0.0;
                }
                grad.data[bin * frames + t] = g;
            }
        }
        grad
    }
}

pub fn stft(signal: &[f64], cfg: FrameConfig) -> Result<ComplexSpectrogram> {
    Stft::new(cfg)?.analyze(signal)
}

pub fn istft(spec: &ComplexSpectrogram) -> Result<Vec<f64>> {
    Stft::new(spec.config)?.synthesize(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn interior_rel_err(x: &[f64], y: &[f64], hop: usize) -> f64 {
        let end = x.len() - hop;
        let num: f64 = (hop..end).map(|i| (x[i] - y[i]).powi(2)).sum();
        let den: f64 = (hop..end).map(|i| x[i] * x[i]).sum();
        (num / den).sqrt()
    }

    #[test]
    fn window_is_sqrt_periodic_hann() {
        let w = FrameConfig::default().window();
        assert_eq!(w.len(), 512);
        assert_eq!(w[0], 0.0);
        assert!((w[256] - 1.0).abs() < 1e-15);
        for k in 0..256 {
            // power complementary at 50 % overlap
            assert!((w[k] * w[k] + w[k + 256] * w[k + 256] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn framing_arithmetic() {
        let c = FrameConfig::default();
        assert_eq!(c.bins(), 257);
        assert_eq!(c.num_frames(512), 1);
        assert_eq!(c.num_frames(1), 1);
        assert_eq!(c.num_frames(16_000), 62);
        assert_eq!(c.synthesis_len(62), 16_128);
        assert!(FrameConfig { hop: 200, ..c }.validate().is_err());
    }

    #[test]
    fn zeros_give_zero_bins() {
        let s = stft(&[0.0; 512], FrameConfig::default()).unwrap();
        assert_eq!(s.shape(), (257, 1));
        assert!(s.data().iter().all(|v| v.norm() == 0.0));
        assert!(matches!(stft(&[], FrameConfig::default()), Err(Error::EmptySignal)));
    }

    #[test]
    fn sine_peaks_at_bin_32() {
        let x: Vec<f64> = (0..16_000)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin())
            .collect();
        let s = stft(&x, FrameConfig::default()).unwrap();
        for t in 1..s.frames() - 1 {
            let peak = (0..s.bins())
                .max_by(|&a, &b| s.get(a, t).norm().total_cmp(&s.get(b, t).norm()))
                .unwrap();
            assert_eq!(peak, 32, "frame {t}");
        }
    }

    #[test]
    fn roundtrip_white_noise() {
        let x = noise(16_000, 1);
        let y = istft(&stft(&x, FrameConfig::default()).unwrap()).unwrap();
        assert!(interior_rel_err(&x, &y, 256) <= 1e-6);
        // samples covered by two frames are exact
        for i in 256..15_872 {
            assert!((x[i] - y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_spectrogram_synthesizes_silence() {
        let s = ComplexSpectrogram::zeros(FrameConfig::default(), 5);
        let y = istft(&s).unwrap();
        assert_eq!(y.len(), 5 * 256 + 256);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn synthesis_rejects_mismatched_config() {
        let s = ComplexSpectrogram::zeros(FrameConfig::with_frame_len(16).unwrap(), 3);
        let engine = Stft::new(FrameConfig::default()).unwrap();
        assert!(matches!(engine.synthesize(&s), Err(Error::Shape(_))));
        assert!(ComplexSpectrogram::from_data(FrameConfig::default(), 2, vec![]).is_err());
    }

    #[test]
    fn synthesis_is_linear() {
        let cfg = FrameConfig::default();
        let a = stft(&noise(4000, 2), cfg).unwrap();
        let b = stft(&noise(4000, 3), cfg).unwrap();
        let (alpha, beta) = (0.7, -1.3);
        let mix = ComplexSpectrogram::from_data(
            cfg,
            a.frames(),
            a.data().iter().zip(b.data()).map(|(x, y)| x * alpha + y * beta).collect(),
        )
        .unwrap();
        let ya = istft(&a).unwrap();
        let yb = istft(&b).unwrap();
        let ym = istft(&mix).unwrap();
        for i in 0..ym.len() {
            assert!((ym[i] - (alpha * ya[i] + beta * yb[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn vjp_matches_dense_jacobian() {
        // adjoint identity: <g, synth(X)> = <vjp(g), X> over re/im parts
        let cfg = FrameConfig::with_frame_len(16).unwrap();
        let engine = Stft::new(cfg).unwrap();
        let frames = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = ComplexSpectrogram::from_data(
            cfg,
            frames,
            (0..cfg.bins() * frames)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap();
        let g: Vec<f64> = (0..cfg.synthesis_len(frames)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = engine.synthesize(&x).unwrap();
        let lhs: f64 = g.iter().zip(&y).map(|(a, b)| a * b).sum();
        let vjp = engine.synthesize_vjp(&g, frames);
        let last = cfg.bins() - 1;
        let rhs: f64 = (0..cfg.bins())
            .flat_map(|b| (0..frames).map(move |t| (b, t)))
            .map(|(b, t)| {
                let v = x.get(b, t);
                let im = if b == 0 || b == last { 0.0 } else { v.im };
                vjp.get(b, t).re * v.re + vjp.get(b, t).im * im
            })
            .sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn reconstruction_and_energy(seed in 0u64..1000, len in 1024usize..6000) {
            let x = noise(len, seed);
            let y = istft(&stft(&x, FrameConfig::default()).unwrap()).unwrap();
            proptest::prop_assert!(y.len() >= x.len());
            proptest::prop_assert!(interior_rel_err(&x, &y, 256) <= 1e-6);
            let ex: f64 = x[256..len - 256].iter().map(|v| v * v).sum();
            let ey: f64 = y[256..len - 256].iter().map(|v| v * v).sum();
            proptest::prop_assert!(((ex - ey) / ex).abs() <= 1e-6);
        }
    }
}
