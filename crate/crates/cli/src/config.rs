//! Run configuration file: one JSON document for geometry, pattern,
//! corpus, dataset, network, training, LS design and evaluation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vdm_core::beamformer::DesignOptions;
use vdm_core::corpus::{Corpus, DatasetConfig, SplitCounts};
use vdm_core::directivity::{DirectivityPattern, Preset};
use vdm_core::geometry::{build_uca, ArrayGeometry};
use vdm_core::neural::TrainConfig;
use vdm_core::spectral::FrameConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub ring_diameter_m: f64,
    pub ring_count: usize,
    pub with_center: bool,
    /// Explicit positions; overrides the circular layout when given.
    pub mic_positions: Option<Vec<[f64; 3]>>,
    pub reference_index: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            ring_diameter_m: 0.03,
            ring_count: 3,
            with_center: true,
            mic_positions: None,
            reference_index: 0,
        }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> Result<ArrayGeometry> {
        let g = match &self.mic_positions {
            Some(p) => ArrayGeometry::new(p.clone(), self.reference_index, self.reference_index)?,
            None => {
                let mut g = build_uca(self.ring_diameter_m, self.ring_count, self.with_center)?;
                g.reference_index = self.reference_index;
                g.vdm_index = self.reference_index;
                g.validate()?;
                g
            }
        };
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternConfig {
    pub preset: Option<Preset>,
    /// Polynomial coefficients in `cos(theta - steer)`; used when no preset.
    pub coefficients: Option<Vec<f64>>,
    pub steer_deg: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        PatternConfig {
            preset: Some(Preset::Cardioid),
            coefficients: None,
            steer_deg: 0.0,
        }
    }
}

impl PatternConfig {
    pub fn build(&self) -> Result<DirectivityPattern> {
        match (&self.preset, &self.coefficients) {
            (Some(p), None) => Ok(DirectivityPattern::preset(*p, self.steer_deg)),
            (None, Some(c)) => Ok(DirectivityPattern::new(c.clone(), self.steer_deg)?),
            _ => bail!("pattern needs exactly one of `preset` and `coefficients`"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpus {
    pub counts: SplitCounts,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        SyntheticCorpus {
            counts: SplitCounts {
                train: 100,
                validation: 30,
                test: 30,
            },
            duration_s: 3.0,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// `path,split` listing of WAV takes; the synthetic corpus is used when absent.
    pub listing: Option<PathBuf>,
    pub synthetic: SyntheticCorpus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden_freq: usize,
    pub hidden_time: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden_freq: 32,
            hidden_time: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub trials: usize,
    pub duration_s: f64,
    pub snr_db: Option<f64>,
    pub loudness_lufs: f64,
    pub heatmap_step_deg: f64,
    pub pattern_step_deg: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            trials: 3,
            duration_s: 1.0,
            snr_db: None,
            loudness_lufs: -29.0,
            heatmap_step_deg: 10.0,
            pattern_step_deg: 5.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub geometry: GeometryConfig,
    pub pattern: PatternConfig,
    pub frame: FrameConfig,
    pub corpus: CorpusConfig,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub ls: DesignOptions,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Reads a config; relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if let Some(l) = &cfg.corpus.listing {
            if l.is_relative() {
                cfg.corpus.listing = Some(base.join(l));
            }
        }
        // checkpoints are placed by the train command itself
        cfg.train.checkpoint = None;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn corpus(&self) -> Result<Corpus> {
        let fs = self.dataset.sample_rate_hz;
        match &self.corpus.listing {
            Some(l) => Ok(Corpus::from_listing(l, fs)?),
            None => {
                let s = &self.corpus.synthetic;
                Ok(Corpus::synthetic(&s.counts, s.duration_s, s.seed, fs))
            }
        }
    }

    pub fn frame(&self) -> Result<FrameConfig> {
        let f = self.frame;
        if f.sample_rate_hz != self.dataset.sample_rate_hz {
            bail!(
                "frame sample rate {} differs from dataset sample rate {}",
                f.sample_rate_hz,
                self.dataset.sample_rate_hz
            );
        }
        f.validate()?;
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"dataset": {"n_max": 1}, "bogus": 3}"#).unwrap();
        assert!(RunConfig::load(&p).is_err());
        std::fs::write(&p, r#"{"dataset": {"n_maxx": 1}}"#).unwrap();
        assert!(RunConfig::load(&p).is_err());
    }

    #[test]
    fn listing_resolved_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"corpus": {"listing": "takes/splits.txt"}, "seed": 4}"#).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.corpus.listing.unwrap(), dir.path().join("takes/splits.txt"));
        assert_eq!(c.seed, Some(4));
    }

    #[test]
    fn pattern_choice_is_exclusive() {
        let both = PatternConfig {
            preset: Some(Preset::Cardioid),
            coefficients: Some(vec![1.0]),
            steer_deg: 0.0,
        };
        assert!(both.build().is_err());
        let coeffs = PatternConfig {
            preset: None,
            coefficients: Some(vec![0.5, 0.5]),
            steer_deg: 30.0,
        };
        assert_eq!(coeffs.build().unwrap().evaluate(30.0), 1.0);
    }
}
