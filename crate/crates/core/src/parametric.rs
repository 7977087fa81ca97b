//! Oracle-DOA parametric baseline: one DOA per time-frequency bin from the
//! power-weighted circular mean of the active sources, then a real gain from
//! the target pattern applied to the reference microphone.

use num_complex::Complex64;

use crate::directivity::DirectivityPattern;
use crate::error::{Error, Result};
use crate::geometry::wrap_deg;
use crate::spectral::{ComplexMask, ComplexSpectrogram};

/// Bins whose total source power is below this fall back to the look direction.
pub const SILENT_BIN_POWER: f64 = 1e-12;

/// Per-bin DOA in degrees, row-major by `(bin, frame)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DoaMap {
    bins: usize,
    frames: usize,
    data: Vec<f64>,
}

impl DoaMap {
    pub fn constant(bins: usize, frames: usize, azimuth_deg: f64) -> Self {
        DoaMap {
            bins,
            frames,
            data: vec![wrap_deg(azimuth_deg); bins * frames],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bins, self.frames)
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.data[bin * self.frames + frame]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Circular mean of the source DOAs weighted by each source's power in the
/// bin: `arg sum_n |X_n|^2 (cos theta_n, sin theta_n)`.
pub fn oracle_doa_map(per_source_ref_specs: &[ComplexSpectrogram], doas_deg: &[f64], look_deg: f64) -> Result<DoaMap> {
    let first = per_source_ref_specs
        .first()
        .ok_or_else(|| Error::Shape("oracle DOA map needs at least one source".into()))?;
    if per_source_ref_specs.len() != doas_deg.len() {
        return Err(Error::Shape(format!(
            "{} source spectrograms but {} DOAs",
            per_source_ref_specs.len(),
            doas_deg.len()
        )));
    }
    for s in &per_source_ref_specs[1..] {
        first.check_same_shape(s, "source spectrograms")?;
    }
    let units: Vec<(f64, f64)> = doas_deg
        .iter()
        .map(|d| {
            let r = d.to_radians();
            (r.cos(), r.sin())
        })
        .collect();
    let (bins, frames) = first.shape();
    let look = wrap_deg(look_deg);
    let data = (0..bins * frames)
        .map(|i| {
            let (mut x, mut y, mut total) = (0.0, 0.0, 0.0);
            for (spec, (c, s)) in per_source_ref_specs.iter().zip(&units) {
                let p = spec.data()[i].norm_sqr();
                x += p * c;
                y += p * s;
                total += p;
            }
            if total < SILENT_BIN_POWER {
                look
            } else {
                wrap_deg(y.atan2(x).to_degrees())
            }
        })
        .collect();
    Ok(DoaMap { bins, frames, data })
}

/// Real gain per bin from evaluating the pattern at the mapped DOA.
pub fn gain_map(map: &DoaMap, pattern: &DirectivityPattern) -> Vec<f64> {
    map.data.iter().map(|&d| pattern.evaluate(d)).collect()
}

/// The parametric system as a real-valued complex mask.
pub fn parametric_mask(map: &DoaMap, pattern: &DirectivityPattern) -> ComplexMask {
    let data = gain_map(map, pattern).into_iter().map(|g| Complex64::new(g, 0.0)).collect();
    ComplexMask::from_data(map.bins, map.frames, data).expect("gain map has the map's shape")
}

pub fn apply_parametric(ref_spec: &ComplexSpectrogram, map: &DoaMap, pattern: &DirectivityPattern) -> Result<ComplexSpectrogram> {
    if ref_spec.shape() != map.shape() {
        return Err(Error::Shape(format!(
            "reference spectrogram {:?} vs DOA map {:?}",
            ref_spec.shape(),
            map.shape()
        )));
    }
    let frames = map.frames;
    Ok(ref_spec.map(|b, t, v| v * pattern.evaluate(map.data[b * frames + t])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directivity::Preset;
    use crate::spectral::{stft, FrameConfig};

    fn flat(value: f64) -> ComplexSpectrogram {
        let cfg = FrameConfig::with_frame_len(8).unwrap();
        ComplexSpectrogram::from_data(cfg, 3, vec![Complex64::new(value, 0.0); 15]).unwrap()
    }

    #[test]
    fn single_source_gives_constant_map() {
        let x: Vec<f64> = (0..2000).map(|n| (n as f64 * 0.37).sin()).collect();
        let s = stft(&x, FrameConfig::default()).unwrap();
        let map = oracle_doa_map(&[s], &[42.5], 0.0).unwrap();
        assert!(map.data().iter().all(|&d| (d - 42.5).abs() < 1e-9));
    }

    #[test]
    fn equal_power_means() {
        let map = oracle_doa_map(&[flat(1.0), flat(1.0)], &[10.0, 30.0], 0.0).unwrap();
        assert!((map.get(0, 0) - 20.0).abs() < 1e-9);
        let wrapped = oracle_doa_map(&[flat(1.0), flat(1.0)], &[350.0, 10.0], 0.0).unwrap();
        let d = wrapped.get(2, 1);
        assert!(d.min(360.0 - d) < 1e-9, "{d}");
    }

    #[test]
    fn silent_bins_fall_back_to_look() {
        let map = oracle_doa_map(&[flat(0.0)], &[123.0], 0.0).unwrap();
        assert!(map.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn permutation_invariance() {
        let a = flat(1.0);
        let b = flat(2.0);
        let m1 = oracle_doa_map(&[a.clone(), b.clone()], &[40.0, 100.0], 0.0).unwrap();
        let m2 = oracle_doa_map(&[b, a], &[100.0, 40.0], 0.0).unwrap();
        for (x, y) in m1.data().iter().zip(m2.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gains_applied() {
        let s = ComplexSpectrogram::from_data(
            FrameConfig::with_frame_len(8).unwrap(),
            3,
            (0..15).map(|k| Complex64::new(k as f64, -(k as f64) * 0.5)).collect(),
        )
        .unwrap();
        let cardioid = DirectivityPattern::preset(Preset::Cardioid, 0.0);
        let third = DirectivityPattern::preset(Preset::ThirdOrderDma, 0.0);
        for p in [&cardioid, &third] {
            let out = apply_parametric(&s, &DoaMap::constant(5, 3, 0.0), p).unwrap();
            assert_eq!(out, s);
        }
        let nulled = apply_parametric(&s, &DoaMap::constant(5, 3, 180.0), &cardioid).unwrap();
        assert!(nulled.data().iter().all(|v| v.norm() == 0.0));
        let half = apply_parametric(&s, &DoaMap::constant(5, 3, 90.0), &cardioid).unwrap();
        for (o, i) in half.data().iter().zip(s.data()) {
            // real positive gain keeps the phase
            if i.norm() > 0.0 {
                assert!((o.arg() - i.arg()).abs() < 1e-12);
            }
        }
        assert!(apply_parametric(&s, &DoaMap::constant(4, 3, 0.0), &cardioid).is_err());
    }

    #[test]
    fn shape_errors() {
        let other = ComplexSpectrogram::zeros(FrameConfig::with_frame_len(8).unwrap(), 4);
        assert!(oracle_doa_map(&[flat(1.0), other], &[0.0, 1.0], 0.0).is_err());
        assert!(oracle_doa_map(&[flat(1.0)], &[0.0, 1.0], 0.0).is_err());
        assert!(oracle_doa_map(&[], &[], 0.0).is_err());
    }
}
