//! Signal-to-distortion measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reporting cap for an SDR of `+inf` (zero distortion).
pub const SDR_REPORT_CAP_DB: f64 = 300.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsdrParams {
    pub threshold_db: f64,
    pub eps: f64,
}

impl Default for TsdrParams {
    fn default() -> Self {
        TsdrParams {
            threshold_db: 30.0,
            eps: 1.2e-7,
        }
    }
}

impl TsdrParams {
    pub fn tau(&self) -> f64 {
        10f64.powf(-self.threshold_db / 10.0)
    }
}

fn check_lengths(target: &[f64], estimate: &[f64]) -> Result<()> {
    if target.len() != estimate.len() {
        return Err(Error::Shape(format!(
            "target has {} samples, estimate {}",
            target.len(),
            estimate.len()
        )));
    }
    Ok(())
}

/// Plain SDR without any scaling or projection of the estimate. Returns
/// `f64::INFINITY` for a perfect estimate.
pub fn sdr(target: &[f64], estimate: &[f64]) -> Result<f64> {
    check_lengths(target, estimate)?;
    let signal: f64 = target.iter().map(|z| z * z).sum();
    if signal == 0.0 {
        return Err(Error::ZeroTarget);
    }
    let distortion: f64 = target.iter().zip(estimate).map(|(z, e)| (z - e).powi(2)).sum();
    if distortion == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / distortion).log10())
}

/// Clamps an SDR for reporting (tables, CSVs).
pub fn report_db(value: f64) -> f64 {
    value.min(SDR_REPORT_CAP_DB)
}

/// Thresholded SDR, softly capped at `threshold_db` and finite for both
/// perfect reconstruction and silence:
/// `10 log10((|z|^2 + eps) / (|z - zh|^2 + tau |z|^2 + eps))`.
pub fn tsdr(target: &[f64], estimate: &[f64], p: &TsdrParams) -> Result<f64> {
    check_lengths(target, estimate)?;
    let (signal, distortion) = energies(target, estimate);
    Ok(tsdr_from_energies(signal, distortion, p))
}

pub(crate) fn energies(target: &[f64], estimate: &[f64]) -> (f64, f64) {
    target
        .iter()
        .zip(estimate)
        .fold((0.0, 0.0), |(s, d), (z, e)| (s + z * z, d + (z - e).powi(2)))
}

pub(crate) fn tsdr_from_energies(signal: f64, distortion: f64, p: &TsdrParams) -> f64 {
    10.0 * ((signal + p.eps) / (distortion + p.tau() * signal + p.eps)).log10()
}

/// Gradient of `-tsdr` with respect to the estimate, plus the loss value.
pub fn neg_tsdr_and_grad(target: &[f64], estimate: &[f64], p: &TsdrParams) -> Result<(f64, Vec<f64>)> {
    check_lengths(target, estimate)?;
    let (signal, distortion) = energies(target, estimate);
    let loss = -tsdr_from_energies(signal, distortion, p);
    let denom = distortion + p.tau() * signal + p.eps;
    // d/d zh of 10 log10(denom) = 10 / ln 10 * (-2 (z - zh)) / denom
    let k = 10.0 / std::f64::consts::LN_10 * 2.0 / denom;
    let grad = target.iter().zip(estimate).map(|(z, e)| k * (e - z)).collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(len: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| scale * { let v: f64 = StandardNormal.sample(&mut rng); v })
            .collect::<Vec<f64>>()
    }

    #[test]
    fn sdr_reference_points() {
        let z = noise(16_000, 1, 0.1);
        assert_eq!(sdr(&z, &z).unwrap(), f64::INFINITY);
        assert_eq!(report_db(sdr(&z, &z).unwrap()), 300.0);
        assert!(sdr(&z, &vec![0.0; z.len()]).unwrap().abs() < 1e-12);
        assert!(matches!(sdr(&[0.0; 4], &[1.0; 4]), Err(Error::ZeroTarget)));
        assert!(sdr(&[1.0; 3], &[1.0; 4]).is_err());
    }

    #[test]
    fn sdr_at_thirty_db() {
        let z = noise(64_000, 2, 0.1);
        let pz: f64 = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
        let n = noise(64_000, 3, (pz / 1000.0).sqrt());
        let zh: Vec<f64> = z.iter().zip(&n).map(|(a, b)| a + b).collect();
        let v = sdr(&z, &zh).unwrap();
        assert!((v - 30.0).abs() <= 0.1, "{v}");
    }

    #[test]
    fn tsdr_reference_points() {
        let p = TsdrParams::default();
        let z = noise(16_000, 4, 0.1);
        assert!((tsdr(&z, &z, &p).unwrap() - 30.0).abs() <= 0.01);
        assert_eq!(tsdr(&[0.0; 100], &[0.0; 100], &p).unwrap(), 0.0);
        let silent = tsdr(&z, &vec![0.0; z.len()], &p).unwrap();
        let expected = 10.0 * (1.0 / (1.0 + p.tau())).log10();
        assert!((silent - expected).abs() < 1e-6);
        assert!((silent + 0.004).abs() < 0.001);
    }

    #[test]
    fn tsdr_gradient_matches_finite_differences() {
        let p = TsdrParams::default();
        let z = noise(64, 5, 0.3);
        let e = noise(64, 6, 0.3);
        let (_, g) = neg_tsdr_and_grad(&z, &e, &p).unwrap();
        let h = 1e-6;
        for i in [0, 17, 63] {
            let mut up = e.clone();
            up[i] += h;
            let mut dn = e.clone();
            dn[i] -= h;
            let fd = (-tsdr(&z, &up, &p).unwrap() + tsdr(&z, &dn, &p).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }

    proptest::proptest! {
        #[test]
        fn tsdr_soft_cap(seed in 0u64..500, scale in 1e-4..10.0f64, err in 0.0..2.0f64) {
            let p = TsdrParams::default();
            let z = noise(256, seed, scale);
            let e: Vec<f64> = z.iter().zip(noise(256, seed + 1, scale * err)).map(|(a, b)| a + b).collect();
            let energy: f64 = z.iter().map(|v| v * v).sum();
            let cap = p.threshold_db + 10.0 * (1.0 + p.eps / energy).log10();
            proptest::prop_assert!(tsdr(&z, &e, &p).unwrap() <= cap + 1e-12);
        }

        #[test]
        fn tsdr_tracks_sdr_far_below_threshold(seed in 0u64..500, err in 0.4..3.0f64) {
            let p = TsdrParams::default();
            let z = noise(512, seed, 0.5);
            let e: Vec<f64> = z.iter().zip(noise(512, seed + 7, 0.5 * err)).map(|(a, b)| a + b).collect();
            let s = sdr(&z, &e).unwrap();
            proptest::prop_assume!(s <= p.threshold_db - 10.0);
            proptest::prop_assert!((tsdr(&z, &e, &p).unwrap() - s).abs() <= 0.1);
        }

        #[test]
        fn joint_time_shift_invariance(seed in 0u64..500, shift in 0usize..100) {
            let p = TsdrParams::default();
            let z = noise(300, seed, 1.0);
            let e = noise(300, seed + 3, 1.0);
            let mut zs = vec![0.0; shift];
            zs.extend(&z);
            let mut es = vec![0.0; shift];
            es.extend(&e);
            proptest::prop_assert!((sdr(&z, &e).unwrap() - sdr(&zs, &es).unwrap()).abs() < 1e-9);
            proptest::prop_assert!((tsdr(&z, &e, &p).unwrap() - tsdr(&zs, &es, &p).unwrap()).abs() < 1e-9);
        }
    }
}
