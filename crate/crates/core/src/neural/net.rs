//! Mask network: a bidirectional LSTM across frequency inside every frame,
//! a causal LSTM across frames inside every bin, and an affine map with a
//! per-component tanh to the real and imaginary mask parts.
//!
//! Since both mask parts lie in `(-1, 1)`, `|M| < sqrt(2)`: the network can
//! never amplify a bin by more than about 3 dB.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{self, LstmCache, LstmShape, OutSlot, SeqLayout};
use super::scalar::{gemm, Scalar, View};
use crate::error::{Error, Result};
use crate::metrics::{neg_tsdr_and_grad, TsdrParams};
use crate::spectral::{ComplexMask, ComplexSpectrogram, Stft};

/// Below this reference RMS the features are left unscaled.
pub const MIN_FEATURE_SCALE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskNetConfig {
    pub q_channels: usize,
    pub bins: usize,
    /// Per direction.
    pub hidden_freq: usize,
    pub hidden_time: usize,
    pub seed: u64,
}

impl MaskNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q_channels == 0 || self.bins == 0 || self.hidden_freq == 0 || self.hidden_time == 0 {
            return Err(Error::Config(format!("network sizes must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        2 * self.q_channels
    }

    pub(crate) fn freq_shape(&self) -> LstmShape {
        LstmShape {
            input: self.input_width(),
            hidden: self.hidden_freq,
        }
    }

    pub(crate) fn time_shape(&self) -> LstmShape {
        LstmShape {
            input: 2 * self.hidden_freq,
            hidden: self.hidden_time,
        }
    }

    fn head_count(&self) -> usize {
        2 * self.hidden_time + 2
    }

    pub fn param_count(&self) -> usize {
        2 * self.freq_shape().param_count() + self.time_shape().param_count() + self.head_count()
    }

    /// Offsets of the forward-frequency, backward-frequency, time and head blocks.
    fn offsets(&self) -> [usize; 4] {
        let f = self.freq_shape().param_count();
        let t = self.time_shape().param_count();
        [0, f, 2 * f, 2 * f + t]
    }
}

/// Network parameters, flattened in block order (frequency forward,
/// frequency backward, time, head).
#[derive(Clone, Debug, PartialEq)]
pub struct MaskNet<S = f32> {
    config: MaskNetConfig,
    params: Vec<S>,
}

/// Real features, one row of `2Q` values per `(frame, bin)`, row `t * F + f`.
#[derive(Clone, Debug, PartialEq)]
pub struct Features<S = f32> {
    pub bins: usize,
    pub frames: usize,
    pub width: usize,
    pub data: Vec<S>,
    /// Reference-channel magnitude RMS the inputs were divided by.
    pub sigma: f64,
}

impl<S: Scalar> Features<S> {
    pub fn get(&self, bin: usize, frame: usize, channel: usize) -> S {
        self.data[(frame * self.bins + bin) * self.width + channel]
    }
}

/// Stacks `[Re Y_1, Im Y_1, ..., Re Y_Q, Im Y_Q]` and divides by the RMS of
/// the first (reference) channel's magnitudes.
pub fn featurize<S: Scalar>(mic_specs: &[ComplexSpectrogram]) -> Result<Features<S>> {
    let first = mic_specs
        .first()
        .ok_or_else(|| Error::Shape("no microphone spectrograms".into()))?;
    for s in &mic_specs[1..] {
        first.check_same_shape(s, "microphone spectrograms")?;
    }
    let (bins, frames) = first.shape();
    let width = 2 * mic_specs.len();
    let power: f64 = first.data().iter().map(|v| v.norm_sqr()).sum::<f64>() / first.data().len().max(1) as f64;
    let rms = power.sqrt();
    let sigma = if rms < MIN_FEATURE_SCALE { 1.0 } else { rms };
    let mut data = vec![S::zero(); bins * frames * width];
    for (q, spec) in mic_specs.iter().enumerate() {
        for b in 0..bins {
            for t in 0..frames {
                let v = spec.get(b, t);
                let row = (t * bins + b) * width;
                data[row + 2 * q] = S::from_f64(v.re / sigma);
                data[row + 2 * q + 1] = S::from_f64(v.im / sigma);
            }
        }
    }
    Ok(Features {
        bins,
        frames,
        width,
        data,
        sigma,
    })
}

/// Everything the backward pass needs from one forward pass.
pub(crate) struct ForwardPass<S> {
    bins: usize,
    frames: usize,
    fwd: LstmCache<S>,
    bwd: LstmCache<S>,
    h1: Vec<S>,
    time: LstmCache<S>,
    h2: Vec<S>,
    /// `rows x 2` after tanh.
    mask: Vec<S>,
}

impl<S: Scalar> ForwardPass<S> {
    pub fn mask(&self) -> ComplexMask {
        let mut data = vec![Complex64::new(0.0, 0.0); self.bins * self.frames];
        for t in 0..self.frames {
            for f in 0..self.bins {
                let r = t * self.bins + f;
                data[f * self.frames + t] = Complex64::new(self.mask[2 * r].as_f64(), self.mask[2 * r + 1].as_f64());
            }
        }
        ComplexMask::from_data(self.bins, self.frames, data).expect("mask shape")
    }
}

impl<S: Scalar> MaskNet<S> {
    /// Uniform `(-1/sqrt(H), 1/sqrt(H))` initialization from `config.seed`.
    pub fn new(config: MaskNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::with_capacity(config.param_count());
        let blocks = [
            (config.freq_shape().param_count(), config.hidden_freq),
            (config.freq_shape().param_count(), config.hidden_freq),
            (config.time_shape().param_count(), config.hidden_time),
            (config.head_count(), config.hidden_time),
        ];
        for (count, fan) in blocks {
            let k = 1.0 / (fan as f64).sqrt();
            params.extend((0..count).map(|_| S::from_f64(rng.random_range(-k..k))));
        }
        Ok(MaskNet { config, params })
    }

    pub fn zeros(config: MaskNetConfig) -> Result<Self> {
        config.validate()?;
        Ok(MaskNet {
            config,
            params: vec![S::zero(); config.param_count()],
        })
    }

    pub fn from_params(config: MaskNetConfig, params: Vec<S>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::Config(format!(
                "{} parameters for a network needing {}",
                params.len(),
                config.param_count()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("non-finite network parameter".into()));
        }
        Ok(MaskNet { config, params })
    }

    pub fn config(&self) -> &MaskNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn cast<T: Scalar>(&self) -> MaskNet<T> {
        MaskNet {
            config: self.config,
            params: self.params.iter().map(|p| T::from_f64(p.as_f64())).collect(),
        }
    }

    fn blocks(&self) -> (&[S], &[S], &[S], &[S]) {
        let [_, b, t, h] = self.config.offsets();
        let p = &self.params;
        (&p[..b], &p[b..t], &p[t..h], &p[h..])
    }

    fn check_features(&self, x: &Features<S>) -> Result<()> {
        if x.width != self.config.input_width() || x.bins != self.config.bins {
            return Err(Error::Shape(format!(
                "features {} bins x {} channels, network expects {} x {}",
                x.bins,
                x.width,
                self.config.bins,
                self.config.input_width()
            )));
        }
        if x.frames == 0 {
            return Err(Error::Shape("features with zero frames".into()));
        }
        Ok(())
    }

    pub(crate) fn forward_pass(&self, x: &Features<S>) -> Result<ForwardPass<S>> {
        self.check_features(x)?;
        let cfg = &self.config;
        let (bins, frames) = (x.bins, x.frames);
        let rows = bins * frames;
        let (p_fwd, p_bwd, p_time, p_head) = self.blocks();
        let along_freq = SeqLayout {
            batch: frames,
            steps: bins,
            batch_stride: bins,
            step_stride: 1,
        };
        let along_time = SeqLayout {
            batch: bins,
            steps: frames,
            batch_stride: 1,
            step_stride: bins,
        };
        let hf = cfg.hidden_freq;
        let mut h1 = vec![S::zero(); rows * 2 * hf];
        let fwd = lstm::forward(cfg.freq_shape(), p_fwd, along_freq, false, &x.data, &mut h1, OutSlot { width: 2 * hf, col: 0 });
        let bwd = lstm::forward(cfg.freq_shape(), p_bwd, along_freq, true, &x.data, &mut h1, OutSlot { width: 2 * hf, col: hf });
        let ht = cfg.hidden_time;
        let mut h2 = vec![S::zero(); rows * ht];
        let time = lstm::forward(cfg.time_shape(), p_time, along_time, false, &h1, &mut h2, OutSlot { width: ht, col: 0 });
        let (w_out, b_out) = p_head.split_at(2 * ht);
        let mut mask = vec![S::zero(); rows * 2];
        for row in mask.chunks_exact_mut(2) {
            row.copy_from_slice(b_out);
        }
        gemm(rows, ht, 2, S::one(), &h2, View::rows(0, ht), w_out, View::transposed(0, ht), S::one(), &mut mask, View::rows(0, 2));
        for v in mask.iter_mut() {
            *v = v.tanh();
        }
        Ok(ForwardPass {
            bins,
            frames,
            fwd,
            bwd,
            h1,
            time,
            h2,
            mask,
        })
    }

    /// Complex mask `F x T` for the given features.
    pub fn forward(&self, x: &Features<S>) -> Result<ComplexMask> {
        Ok(self.forward_pass(x)?.mask())
    }

    /// Parameter gradient given `d loss / d mask` packed as `re + i*im`.
    pub(crate) fn backward(&self, x: &Features<S>, pass: &ForwardPass<S>, d_mask: &ComplexMask) -> Vec<S> {
        let cfg = &self.config;
        let (bins, frames) = (pass.bins, pass.frames);
        let rows = bins * frames;
        let (p_fwd, p_bwd, p_time, p_head) = self.blocks();
        let [_, o_b, o_t, o_h] = cfg.offsets();
        let mut grads = vec![S::zero(); cfg.param_count()];
        let (g_freq, rest) = grads.split_at_mut(o_t);
        let (g_fwd, g_bwd) = g_freq.split_at_mut(o_b);
        let (g_time, g_head) = rest.split_at_mut(o_h - o_t);
        let ht = cfg.hidden_time;
        let hf = cfg.hidden_freq;

        let mut d_pre = vec![S::zero(); rows * 2];
        for t in 0..frames {
            for f in 0..bins {
                let r = t * bins + f;
                let g = d_mask.get(f, t);
                let (mr, mi) = (pass.mask[2 * r], pass.mask[2 * r + 1]);
                d_pre[2 * r] = S::from_f64(g.re) * (S::one() - mr * mr);
                d_pre[2 * r + 1] = S::from_f64(g.im) * (S::one() - mi * mi);
            }
        }
        let (w_out, _) = p_head.split_at(2 * ht);
        let (gw_out, gb_out) = g_head.split_at_mut(2 * ht);
        gemm(2, rows, ht, S::one(), &d_pre, View::transposed(0, 2), &pass.h2, View::rows(0, ht), S::one(), gw_out, View::rows(0, ht));
        for row in d_pre.chunks_exact(2) {
            gb_out[0] = gb_out[0] + row[0];
            gb_out[1] = gb_out[1] + row[1];
        }
        let mut d_h2 = vec![S::zero(); rows * ht];
        gemm(rows, 2, ht, S::one(), &d_pre, View::rows(0, 2), w_out, View::rows(0, ht), S::zero(), &mut d_h2, View::rows(0, ht));

        let along_freq = SeqLayout {
            batch: frames,
            steps: bins,
            batch_stride: bins,
            step_stride: 1,
        };
        let along_time = SeqLayout {
            batch: bins,
            steps: frames,
            batch_stride: 1,
            step_stride: bins,
        };
        let mut d_h1 = vec![S::zero(); rows * 2 * hf];
        lstm::backward(
            cfg.time_shape(),
            p_time,
            along_time,
            false,
            &pass.h1,
            &pass.time,
            &pass.h2,
            &d_h2,
            OutSlot { width: ht, col: 0 },
            g_time,
            Some(&mut d_h1),
        );
        lstm::backward(
            cfg.freq_shape(),
            p_fwd,
            along_freq,
            false,
            &x.data,
            &pass.fwd,
            &pass.h1,
            &d_h1,
            OutSlot { width: 2 * hf, col: 0 },
            g_fwd,
            None,
        );
        lstm::backward(
            cfg.freq_shape(),
            p_bwd,
            along_freq,
            true,
            &x.data,
            &pass.bwd,
            &pass.h1,
            &d_h1,
            OutSlot { width: 2 * hf, col: hf },
            g_bwd,
            None,
        );
        grads
    }
}

/// One supervised example: features, reference spectrogram and the target
/// waveform the masked reference is compared against after synthesis.
#[derive(Clone, Debug)]
pub struct TrainExample<S = f32> {
    pub features: Features<S>,
    pub reference: ComplexSpectrogram,
    pub target: Vec<f64>,
}

impl<S: Scalar> TrainExample<S> {
    pub fn new(mic_specs: &[ComplexSpectrogram], reference_index: usize, target: Vec<f64>) -> Result<Self> {
        let reference = mic_specs
            .get(reference_index)
            .ok_or_else(|| Error::Shape(format!("no reference channel {reference_index}")))?
            .clone();
        let synth_len = reference.config().synthesis_len(reference.frames());
        if target.len() > synth_len {
            return Err(Error::Shape(format!(
                "target of {} samples longer than the {synth_len} a {}-frame synthesis yields",
                target.len(),
                reference.frames()
            )));
        }
        Ok(TrainExample {
            features: featurize(&reference_first(mic_specs, reference_index)?)?,
            reference,
            target,
        })
    }
}

/// Reorders channels so that the reference microphone comes first, which is
/// the channel feature scaling is taken from.
pub fn reference_first(mic_specs: &[ComplexSpectrogram], reference_index: usize) -> Result<Vec<ComplexSpectrogram>> {
    let reference = mic_specs
        .get(reference_index)
        .ok_or_else(|| Error::Shape(format!("no reference channel {reference_index}")))?;
    let mut ordered = Vec::with_capacity(mic_specs.len());
    ordered.push(reference.clone());
    ordered.extend(
        mic_specs
            .iter()
            .enumerate()
            .filter(|(q, _)| *q != reference_index)
            .map(|(_, s)| s.clone()),
    );
    Ok(ordered)
}

/// Mask for a multichannel recording, reference channel `reference_index`.
pub fn infer_mask<S: Scalar>(net: &MaskNet<S>, mic_specs: &[ComplexSpectrogram], reference_index: usize) -> Result<ComplexMask> {
    net.forward(&featurize(&reference_first(mic_specs, reference_index)?)?)
}

/// Masks the reference spectrogram.
pub fn apply_mask(mask: &ComplexMask, reference: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    mask.apply(reference)
}

/// `-tSDR` of one example and, optionally, its parameter gradient.
pub(crate) fn example_loss<S: Scalar>(
    net: &MaskNet<S>,
    ex: &TrainExample<S>,
    stft: &Stft,
    p: &TsdrParams,
    with_grad: bool,
) -> Result<(f64, Option<Vec<S>>)> {
    let pass = net.forward_pass(&ex.features)?;
    let mask = pass.mask();
    let estimate_spec = mask.apply(&ex.reference)?;
    let full = stft.synthesize(&estimate_spec)?;
    let len = ex.target.len();
    let (loss, grad_sig) = neg_tsdr_and_grad(&ex.target, &full[..len], p)?;
    if !with_grad {
        return Ok((loss, None));
    }
    let mut padded = grad_sig;
    padded.resize(full.len(), 0.0);
    let d_spec = stft.synthesize_vjp(&padded, ex.reference.frames());
    // Zh = M Y  =>  dL/dM = dL/dZh * conj(Y) in re + i*im packing
    let d_mask_data = d_spec
        .data()
        .iter()
        .zip(ex.reference.data())
        .map(|(g, y)| g * y.conj())
        .collect();
    let (bins, frames) = mask.shape();
    let d_mask = ComplexMask::from_data(bins, frames, d_mask_data)?;
    Ok((loss, Some(net.backward(&ex.features, &pass, &d_mask))))
}

/// Mean `-tSDR` over a batch with its mean gradient; gradients are reduced
/// in example order.
pub fn loss_and_grad<S: Scalar>(
    net: &MaskNet<S>,
    batch: &[TrainExample<S>],
    stft: &Stft,
    p: &TsdrParams,
) -> Result<(f64, Vec<S>)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("empty batch".into()));
    }
    let mut total = 0.0;
    let mut grads = vec![S::zero(); net.params.len()];
    for ex in batch {
        let (loss, g) = example_loss(net, ex, stft, p, true)?;
        total += loss;
        for (acc, v) in grads.iter_mut().zip(g.expect("gradient requested")) {
            *acc = *acc + v;
        }
    }
    let n = S::from_f64(batch.len() as f64);
    grads.iter_mut().for_each(|g| *g = *g / n);
    Ok((total / batch.len() as f64, grads))
}
