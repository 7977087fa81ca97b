use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("source at distance {distance_m} m coincides with microphone {mic}")]
    CoincidentSource { mic: usize, distance_m: f64 },

    #[error("empty signal")]
    EmptySignal,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown pattern preset `{0}` (expected `cardioid` or `third-order-dma`)")]
    UnknownPreset(String),

    #[error("scene: {0}")]
    Scene(String),

    #[error("silent mixture on channel {0}: SNR is undefined")]
    SilentMixture(usize),

    #[error("signal of {samples} samples is shorter than one 400 ms loudness block")]
    TooShortForLoudness { samples: usize },

    #[error("signal is fully gated (silence); loudness undefined")]
    FullyGated,

    #[error("infeasible DOA sampling: {0}")]
    InfeasibleSampling(String),

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("WNG constraint of {floor_db} dB unsatisfiable at bin {bin}: best achieved {achieved_db:.3} dB")]
    WngUnsatisfiable {
        bin: usize,
        floor_db: f64,
        achieved_db: f64,
    },

    #[error("zero-norm beamformer weights")]
    ZeroWeights,

    #[error("zero-energy target")]
    ZeroTarget,

    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("incompatible configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("WAV error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
