//! Differential-microphone-array style directivity patterns
//! `S(theta) = sum_r a_r cos^r(theta - theta0)`, frequency independent.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Cardioid,
    ThirdOrderDma,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::Cardioid, Preset::ThirdOrderDma];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Cardioid => "cardioid",
            Preset::ThirdOrderDma => "third-order-dma",
        }
    }

    pub fn coefficients(self) -> Vec<f64> {
        match self {
            Preset::Cardioid => vec![0.5, 0.5],
            Preset::ThirdOrderDma => vec![0.0, 1.0 / 6.0, 0.5, 1.0 / 3.0],
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cardioid" => Ok(Preset::Cardioid),
            "third-order-dma" | "third_order_dma" => Ok(Preset::ThirdOrderDma),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

/// Polynomial in `cos(theta - steer)`. Gains are signed; nothing is clamped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectivityPattern {
    pub coefficients: Vec<f64>,
    pub steer_deg: f64,
}

impl DirectivityPattern {
    pub fn new(coefficients: Vec<f64>, steer_deg: f64) -> Result<Self> {
        if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("pattern needs at least one finite coefficient".into()));
        }
        Ok(DirectivityPattern {
            coefficients,
            steer_deg,
        })
    }

    pub fn preset(preset: Preset, steer_deg: f64) -> Self {
        DirectivityPattern {
            coefficients: preset.coefficients(),
            steer_deg,
        }
    }

    pub fn order(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }

    /// Gain towards `azimuth_deg`. Summed in increasing powers so the look
    /// direction reproduces `look_gain()` bit for bit.
    pub fn evaluate(&self, azimuth_deg: f64) -> f64 {
        let c = cos_deg(azimuth_deg - self.steer_deg);
        let mut power = 1.0;
        let mut acc = 0.0;
        for a in &self.coefficients {
            acc += a * power;
            power *= c;
        }
        acc
    }

    pub fn look_gain(&self) -> f64 {
        self.coefficients.iter().sum()
    }
}

/// Preset lookup by its CLI/config name.
pub fn preset(name: &str, steer_deg: f64) -> Result<DirectivityPattern> {
    Ok(DirectivityPattern::preset(name.parse()?, steer_deg))
}

/// Cosine of an angle in degrees with exact values on multiples of 30 and 45
/// degrees where they are representable (0, +-1/2, +-1), so that pattern
/// nulls at those angles evaluate to exactly zero.
fn cos_deg(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w == 0.0 {
        1.0
    } else if w == 60.0 || w == 300.0 {
        0.5
    } else if w == 90.0 || w == 270.0 {
        0.0
    } else if w == 120.0 || w == 240.0 {
        -0.5
    } else if w == 180.0 {
        -1.0
    } else {
        w.to_radians().cos()
    }
}
