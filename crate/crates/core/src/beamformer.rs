//! Fixed least-squares beamformer matching a target pattern on an azimuth
//! control grid, with diagonal loading chosen per bin so that the white
//! noise gain stays above a floor.
//!
//! Per bin the design solves `min_w |D^H w - s|^2 + lambda |w|^2`, i.e.
//! `w = (D D^H + lambda I)^-1 D s`, where the columns of `D` are relative
//! transfer functions towards the grid azimuths and `s` holds the desired
//! gains. `lambda` is the smallest value (bisected in `log10` over
//! `[-12, 4]`) whose solution meets the WNG floor.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directivity::DirectivityPattern;
use crate::error::{Error, Result};
use crate::geometry::{steering_matrix, ArrayGeometry};
use crate::spectral::{ComplexSpectrogram, FrameConfig};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"VDMW";
pub const WEIGHTS_VERSION: u32 = 1;

const LOG_LAMBDA_RANGE: (f64, f64) = (-12.0, 4.0);
const BISECTION_STEPS: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignOptions {
    pub wng_floor_db: f64,
    pub grid_deg: f64,
    /// Distance of the control-grid sources (spherical propagation).
    pub distance_m: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            wng_floor_db: -15.0,
            grid_deg: 1.0,
            distance_m: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignMetadata {
    pub pattern: DirectivityPattern,
    pub options: DesignOptions,
    pub sample_rate_hz: u32,
    pub frame_len: usize,
    pub loading: Vec<f64>,
    pub achieved_wng_db: Vec<f64>,
    /// `|D^H w - s|` per bin.
    pub residual: Vec<f64>,
    /// `|D^H w - s| / |s|` per bin.
    pub relative_residual: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamformerWeights {
    /// `weights[bin][mic]`.
    pub weights: Vec<Vec<Complex64>>,
    pub meta: Option<DesignMetadata>,
    pub sample_rate_hz: u32,
}

impl BeamformerWeights {
    pub fn bins(&self) -> usize {
        self.weights.len()
    }

    pub fn num_mics(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Selects microphone `mic` in every bin.
    pub fn selector(bins: usize, num_mics: usize, mic: usize, sample_rate_hz: u32) -> Self {
        let mut w = vec![Complex64::new(0.0, 0.0); num_mics];
        w[mic] = Complex64::new(1.0, 0.0);
        BeamformerWeights {
            weights: vec![w; bins],
            meta: None,
            sample_rate_hz,
        }
    }

    /// Writes the binary weights file and, if present, a JSON metadata
    /// sidecar next to it (`<path>.json`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(20 + self.bins() * self.num_mics() * 8);
        buf.extend_from_slice(WEIGHTS_MAGIC);
        for v in [WEIGHTS_VERSION, self.num_mics() as u32, self.bins() as u32, self.sample_rate_hz] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for bin in &self.weights {
            for w in bin {
                buf.extend_from_slice(&(w.re as f32).to_le_bytes());
                buf.extend_from_slice(&(w.im as f32).to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))?;
        if let Some(meta) = &self.meta {
            let side = sidecar_path(path);
            let json = serde_json::to_string_pretty(meta).map_err(|source| Error::Json {
                path: side.clone(),
                source,
            })?;
            std::fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 20 || &bytes[..4] != WEIGHTS_MAGIC {
            return Err(Error::format(path, "not a VDMW weights file"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let (version, q, f, fs) = (word(0), word(1) as usize, word(2) as usize, word(3));
        if version != WEIGHTS_VERSION {
            return Err(Error::format(path, format!("unsupported weights version {version}")));
        }
        let payload = &bytes[20..];
        if payload.len() != q * f * 8 {
            return Err(Error::format(
                path,
                format!("payload of {} bytes, expected {}", payload.len(), q * f * 8),
            ));
        }
        let vals: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let weights = vals
            .chunks_exact(2 * q.max(1))
            .take(f)
            .map(|bin| bin.chunks_exact(2).map(|p| Complex64::new(p[0] as f64, p[1] as f64)).collect())
            .collect();
        let side = sidecar_path(path);
        let meta = match std::fs::read_to_string(&side) {
            Ok(text) => Some(serde_json::from_str(&text).map_err(|source| Error::Json { path: side, source })?),
            Err(_) => None,
        };
        Ok(BeamformerWeights {
            weights,
            meta,
            sample_rate_hz: fs,
        })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// White noise gain `|w^H d0|^2 / (w^H w)` in dB for a look direction.
pub fn wng_db(
    weights: &[Complex64],
    geometry: &ArrayGeometry,
    look_deg: f64,
    distance_m: f64,
    freq_hz: f64,
) -> Result<f64> {
    let d0 = steering_matrix(geometry, &[look_deg], distance_m, freq_hz)?;
    wng_with_steering(weights, d0.column(0).as_slice())
}

fn wng_with_steering(weights: &[Complex64], d0: &[Complex64]) -> Result<f64> {
    let norm: f64 = weights.iter().map(|w| w.norm_sqr()).sum();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroWeights);
    }
    let response: Complex64 = weights.iter().zip(d0).map(|(w, d)| w.conj() * d).sum();
    Ok(10.0 * (response.norm_sqr() / norm).log10())
}

/// Control grid `0, grid, 2 grid, ...` below 360 degrees.
pub fn control_grid(grid_deg: f64) -> Result<Vec<f64>> {
    let m = 360.0 / grid_deg;
    if !(grid_deg > 0.0) || (m - m.round()).abs() > 1e-9 {
        return Err(Error::Config(format!("grid spacing {grid_deg} does not divide 360")));
    }
    Ok((0..m.round() as usize).map(|k| k as f64 * grid_deg).collect())
}

/// Per-bin least-squares problem.
struct BinProblem {
    d: DMatrix<Complex64>,
    s: DVector<Complex64>,
    gram: DMatrix<Complex64>,
    rhs: DVector<Complex64>,
    look: Vec<Complex64>,
}

impl BinProblem {
    fn new(d: DMatrix<Complex64>, desired: &[f64], look: Vec<Complex64>) -> Self {
        let s = DVector::from_iterator(desired.len(), desired.iter().map(|&v| Complex64::new(v, 0.0)));
        let gram = &d * d.adjoint();
        let rhs = &d * &s;
        BinProblem { d, s, gram, rhs, look }
    }

    /// `None` when the loaded Gram matrix is numerically singular.
    fn solve(&self, lambda: f64) -> Option<Vec<Complex64>> {
        let q = self.gram.nrows();
        let a = &self.gram + DMatrix::<Complex64>::identity(q, q) * Complex64::new(lambda, 0.0);
        let w = a.lu().solve(&self.rhs)?;
        w.iter().all(|v| v.re.is_finite() && v.im.is_finite()).then(|| w.iter().copied().collect())
    }

    fn wng(&self, w: &Option<Vec<Complex64>>) -> f64 {
        match w {
            Some(w) => wng_with_steering(w, &self.look).unwrap_or(f64::NEG_INFINITY),
            None => f64::NEG_INFINITY,
        }
    }

    fn residual(&self, w: &[Complex64]) -> f64 {
        let wv = DVector::from_column_slice(w);
        (self.d.adjoint() * wv - &self.s).norm()
    }
}

struct BinDesign {
    weights: Vec<Complex64>,
    loading: f64,
    wng_db: f64,
    residual: f64,
    relative_residual: f64,
}

fn design_bin(problem: &BinProblem, floor_db: f64, bin: usize) -> Result<BinDesign> {
    let accept = |w: Option<Vec<Complex64>>, lambda: f64| -> Option<BinDesign> {
        let wng = problem.wng(&w);
        if wng >= floor_db {
            let w = w?;
            let residual = problem.residual(&w);
            Some(BinDesign {
                relative_residual: residual / problem.s.norm().max(f64::MIN_POSITIVE),
                weights: w,
                loading: lambda,
                wng_db: wng,
                residual,
            })
        } else {
            None
        }
    };
    if let Some(found) = accept(problem.solve(0.0), 0.0) {
        return Ok(found);
    }
    let (mut lo, mut hi) = LOG_LAMBDA_RANGE;
    // the large-loading limit is the matched response w ~ D s
    let limit_wng = problem.wng(&Some(problem.rhs.iter().copied().collect()));
    if limit_wng < floor_db {
        return Err(Error::WngUnsatisfiable {
            bin,
            floor_db,
            achieved_db: limit_wng,
        });
    }
    while problem.wng(&problem.solve(10f64.powf(hi))) < floor_db {
        lo = hi;
        hi += 2.0;
        if hi > 40.0 {
            return Err(Error::WngUnsatisfiable {
                bin,
                floor_db,
                achieved_db: limit_wng,
            });
        }
    }
    if problem.wng(&problem.solve(10f64.powf(lo))) >= floor_db {
        hi = lo;
    } else {
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if problem.wng(&problem.solve(10f64.powf(mid))) >= floor_db {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let lambda = 10f64.powf(hi);
    accept(problem.solve(lambda), lambda).ok_or(Error::WngUnsatisfiable {
        bin,
        floor_db,
        achieved_db: limit_wng,
    })
}

/// Designs one weight vector per STFT bin.
pub fn design_ls(
    geometry: &ArrayGeometry,
    pattern: &DirectivityPattern,
    cfg: &FrameConfig,
    options: &DesignOptions,
) -> Result<BeamformerWeights> {
    cfg.validate()?;
    let grid = control_grid(options.grid_deg)?;
    let desired: Vec<f64> = grid.iter().map(|&a| pattern.evaluate(a)).collect();
    let designs = (0..cfg.bins())
        .into_par_iter()
        .map(|bin| {
            let freq = cfg.bin_hz(bin);
            let d = steering_matrix(geometry, &grid, options.distance_m, freq)?;
            let look = steering_matrix(geometry, &[pattern.steer_deg], options.distance_m, freq)?;
            let problem = BinProblem::new(d, &desired, look.column(0).iter().copied().collect());
            design_bin(&problem, options.wng_floor_db, bin)
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = DesignMetadata {
        pattern: pattern.clone(),
        options: options.clone(),
        sample_rate_hz: cfg.sample_rate_hz,
        frame_len: cfg.frame_len,
        loading: designs.iter().map(|d| d.loading).collect(),
        achieved_wng_db: designs.iter().map(|d| d.wng_db).collect(),
        residual: designs.iter().map(|d| d.residual).collect(),
        relative_residual: designs.iter().map(|d| d.relative_residual).collect(),
    };
    Ok(BeamformerWeights {
        weights: designs.into_iter().map(|d| d.weights).collect(),
        meta: Some(meta),
        sample_rate_hz: cfg.sample_rate_hz,
    })
}

/// Response `w^H d(theta)` of one bin's weights towards each azimuth.
pub fn response(
    weights: &[Complex64],
    geometry: &ArrayGeometry,
    azimuths_deg: &[f64],
    distance_m: f64,
    freq_hz: f64,
) -> Result<Vec<Complex64>> {
    let d = steering_matrix(geometry, azimuths_deg, distance_m, freq_hz)?;
    Ok((0..d.ncols())
        .map(|m| weights.iter().zip(d.column(m).iter()).map(|(w, v)| w.conj() * v).sum())
        .collect())
}

/// Filter-and-sum: `Z[f, t] = sum_q conj(w_q(f)) Y_q[f, t]`.
pub fn apply_beamformer(weights: &BeamformerWeights, mic_specs: &[ComplexSpectrogram]) -> Result<ComplexSpectrogram> {
    let first = mic_specs
        .first()
        .ok_or_else(|| Error::Shape("no microphone spectrograms".into()))?;
    if mic_specs.len() != weights.num_mics() {
        return Err(Error::Shape(format!(
            "{} microphone spectrograms for {}-channel weights",
            mic_specs.len(),
            weights.num_mics()
        )));
    }
    if first.bins() != weights.bins() {
        return Err(Error::Shape(format!(
            "{} bins in spectrogram, {} in weights",
            first.bins(),
            weights.bins()
        )));
    }
    for s in &mic_specs[1..] {
        first.check_same_shape(s, "microphone spectrograms")?;
    }
    Ok(first.map(|b, t, _| {
        weights.weights[b]
            .iter()
            .zip(mic_specs)
            .map(|(w, y)| w.conj() * y.get(b, t))
            .sum()
    }))
}
