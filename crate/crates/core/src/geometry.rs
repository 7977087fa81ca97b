//! Array construction, direct-path transfer functions and steering matrices.
//!
//! Azimuth is measured counter-clockwise from the +x axis in the horizontal
//! plane. All sources are coplanar with the array (elevation 0).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of sound in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Microphone layout with the reference microphone and the position of the
/// virtual directional microphone (which always coincides with a physical
/// microphone).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    pub mic_positions: Vec<[f64; 3]>,
    pub reference_index: usize,
    pub vdm_index: usize,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<[f64; 3]>, reference_index: usize, vdm_index: usize) -> Result<Self> {
        let g = ArrayGeometry {
            mic_positions,
            reference_index,
            vdm_index,
        };
        g.validate()?;
        Ok(g)
    }

    /// Checks the structural invariants; used after deserialization too.
    pub fn validate(&self) -> Result<()> {
        let q = self.mic_positions.len();
        if q == 0 {
            return Err(Error::Geometry("array has no microphones".into()));
        }
        if self.reference_index >= q {
            return Err(Error::Geometry(format!(
                "reference index {} out of range for {q} microphones",
                self.reference_index
            )));
        }
        if self.vdm_index >= q {
            return Err(Error::Geometry(format!(
                "VDM index {} out of range for {q} microphones",
                self.vdm_index
            )));
        }
        for (i, p) in self.mic_positions.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Geometry(format!("microphone {i} has a non-finite coordinate")));
            }
            for (j, other) in self.mic_positions.iter().enumerate().skip(i + 1) {
                if distance(p, other) == 0.0 {
                    return Err(Error::Geometry(format!("microphones {i} and {j} share a position")));
                }
            }
        }
        Ok(())
    }

    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn vdm_position(&self) -> [f64; 3] {
        self.mic_positions[self.vdm_index]
    }

    /// Largest pairwise microphone spacing in meters (0 for a single mic).
    pub fn max_spacing(&self) -> f64 {
        self.pair_spacings().fold(0.0, f64::max)
    }

    /// Smallest pairwise microphone spacing in meters (0 for a single mic).
    pub fn min_spacing(&self) -> f64 {
        self.pair_spacings().reduce(f64::min).unwrap_or(0.0)
    }

    fn pair_spacings(&self) -> impl Iterator<Item = f64> + '_ {
        let m = &self.mic_positions;
        (0..m.len()).flat_map(move |i| ((i + 1)..m.len()).map(move |j| distance(&m[i], &m[j])))
    }
}

/// Frequency above which a microphone pair with the given spacing aliases:
/// half a wavelength equals the spacing.
pub fn spatial_aliasing_hz(spacing_m: f64) -> f64 {
    SPEED_OF_SOUND / (2.0 * spacing_m)
}

/// Source on the horizontal circle around the array origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcePlacement {
    pub azimuth_deg: f64,
    pub distance_m: f64,
}

impl SourcePlacement {
    pub fn new(azimuth_deg: f64, distance_m: f64) -> Result<Self> {
        if !(distance_m > 0.0) || !distance_m.is_finite() {
            return Err(Error::Geometry(format!("source distance must be positive, got {distance_m}")));
        }
        if !azimuth_deg.is_finite() {
            return Err(Error::Geometry("non-finite azimuth".into()));
        }
        Ok(SourcePlacement {
            azimuth_deg: wrap_deg(azimuth_deg),
            distance_m,
        })
    }

    pub fn position(&self) -> [f64; 3] {
        let a = self.azimuth_deg.to_radians();
        [self.distance_m * a.cos(), self.distance_m * a.sin(), 0.0]
    }
}

/// Wraps an angle in degrees to `[0, 360)`.
pub fn wrap_deg(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Shortest angular distance between two azimuths, in `[0, 180]`.
pub fn circular_distance_deg(a: f64, b: f64) -> f64 {
    let d = wrap_deg(a - b);
    d.min(360.0 - d)
}

pub(crate) fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Uniform circular array in the horizontal plane, optionally with a center
/// microphone. The center mic (if any) is index 0 and serves as both the
/// reference and the VDM position; otherwise ring mic 0 does.
pub fn build_uca(ring_diameter_m: f64, ring_count: usize, with_center: bool) -> Result<ArrayGeometry> {
    if !(ring_diameter_m > 0.0) {
        return Err(Error::Geometry(format!("ring diameter must be positive, got {ring_diameter_m}")));
    }
    if ring_count == 0 && !with_center {
        return Err(Error::Geometry("array has no microphones".into()));
    }
    let radius = ring_diameter_m / 2.0;
    let mut mics = Vec::with_capacity(ring_count + usize::from(with_center));
    if with_center {
        mics.push([0.0, 0.0, 0.0]);
    }
    for k in 0..ring_count {
        let a = 2.0 * PI * k as f64 / ring_count as f64;
        mics.push([radius * a.cos(), radius * a.sin(), 0.0]);
    }
    ArrayGeometry::new(mics, 0, 0)
}

/// Direct-path transfer function of a point source to every microphone:
/// `exp(-i 2 pi f d_q / c) / (4 pi d_q)`.
pub fn dptf(geometry: &ArrayGeometry, placement: &SourcePlacement, freq_hz: f64) -> Result<Vec<Complex64>> {
    let src = placement.position();
    geometry
        .mic_positions
        .iter()
        .enumerate()
        .map(|(q, mic)| {
            let d = distance(&src, mic);
            if d == 0.0 {
                return Err(Error::CoincidentSource {
                    mic: q,
                    distance_m: placement.distance_m,
                });
            }
            let phase = -2.0 * PI * freq_hz * d / SPEED_OF_SOUND;
            Ok(Complex64::from_polar(1.0 / (4.0 * PI * d), phase))
        })
        .collect()
}

/// Q x M matrix of relative transfer functions (reference entry 1 + 0i) for
/// sources at the given azimuths and common distance.
pub fn steering_matrix(
    geometry: &ArrayGeometry,
    azimuths_deg: &[f64],
    distance_m: f64,
    freq_hz: f64,
) -> Result<DMatrix<Complex64>> {
    if azimuths_deg.is_empty() {
        return Err(Error::Geometry("steering matrix needs at least one azimuth".into()));
    }
    let q = geometry.num_mics();
    let mut d = DMatrix::zeros(q, azimuths_deg.len());
    for (m, &az) in azimuths_deg.iter().enumerate() {
        let h = dptf(geometry, &SourcePlacement::new(az, distance_m)?, freq_hz)?;
        let r = h[geometry.reference_index];
        for (row, hq) in h.iter().enumerate() {
            d[(row, m)] = hq / r;
        }
        d[(geometry.reference_index, m)] = Complex64::new(1.0, 0.0);
    }
    Ok(d)
}
