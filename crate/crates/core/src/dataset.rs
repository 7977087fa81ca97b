//! On-disk datasets: one directory per example holding the microphone
//! mixture, the VDM target, the clean per-source reference signals and a
//! `scene.json`, plus a top-level `manifest.json`.
//!
//! Every example is generated from its own seed, so the written bytes do
//! not depend on how many worker threads produced them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_mono, write_wav};
use crate::corpus::{example_seed, generate_example, AssembledExample, Corpus, DatasetConfig, Split};
use crate::directivity::DirectivityPattern;
use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::neural::{Scalar, TrainExample};
use crate::scene::{RenderedScene, SceneSpec};
use crate::spectral::Stft;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCENE_FILE: &str = "scene.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRecord {
    pub split: Split,
    pub index: usize,
    pub seed: u64,
    pub spec: SceneSpec,
    pub target_lufs: Vec<f64>,
    pub offsets: Vec<i64>,
    pub over_full_scale: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub master_seed: u64,
    pub config: DatasetConfig,
    pub geometry: ArrayGeometry,
    pub pattern: DirectivityPattern,
    pub examples: BTreeMap<Split, usize>,
    pub over_full_scale_examples: usize,
    /// Free-form provenance added by front ends (e.g. the full run config).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<serde_json::Value>,
}

/// An example read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredExample {
    pub record: ExampleRecord,
    pub scene: RenderedScene,
}

pub fn example_dir(root: &Path, split: Split, index: usize) -> PathBuf {
    root.join(split.name()).join(format!("{index:05}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_example(dir: &Path, record: &ExampleRecord, ex: &AssembledExample, fs: u32) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_wav(&dir.join("mics.wav"), &ex.scene.mic_signals, fs)?;
    write_mono(&dir.join("target.wav"), &ex.scene.vdm_target, fs)?;
    for (n, s) in ex.scene.per_source_ref_direct.iter().enumerate() {
        write_mono(&dir.join(format!("source-{n}.wav")), s, fs)?;
    }
    write_json(&dir.join(SCENE_FILE), record)
}

/// Generates and writes every split of `cfg.counts` under `out`.
pub fn generate_dataset(
    out: &Path,
    cfg: &DatasetConfig,
    corpus: &Corpus,
    geometry: &ArrayGeometry,
    pattern: &DirectivityPattern,
    master_seed: u64,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    geometry.validate()?;
    let jobs: Vec<(Split, usize)> = Split::ALL
        .iter()
        .flat_map(|&s| (0..cfg.counts.get(s)).map(move |i| (s, i)))
        .collect();
    let over = jobs
        .par_iter()
        .map(|&(split, index)| {
            let ex = generate_example(cfg, corpus, geometry, pattern, split, index, master_seed)?;
            let record = ExampleRecord {
                split,
                index,
                seed: example_seed(master_seed, split, index),
                spec: ex.spec.clone(),
                target_lufs: ex.target_lufs.clone(),
                offsets: ex.offsets.clone(),
                over_full_scale: ex.over_full_scale,
            };
            write_example(&example_dir(out, split, index), &record, &ex, cfg.sample_rate_hz)?;
            Ok(usize::from(ex.over_full_scale > 0))
        })
        .collect::<Result<Vec<usize>>>()?;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        master_seed,
        config: cfg.clone(),
        geometry: geometry.clone(),
        pattern: pattern.clone(),
        examples: Split::ALL.iter().map(|&s| (s, cfg.counts.get(s))).collect(),
        over_full_scale_examples: over.iter().sum(),
        run: None,
    };
    write_manifest(out, &manifest)?;
    Ok(manifest)
}

/// Generates the examples of one split in memory, in index order.
pub fn generate_split(
    cfg: &DatasetConfig,
    corpus: &Corpus,
    geometry: &ArrayGeometry,
    pattern: &DirectivityPattern,
    split: Split,
    master_seed: u64,
) -> Result<Vec<AssembledExample>> {
    cfg.validate()?;
    (0..cfg.counts.get(split))
        .into_par_iter()
        .map(|i| generate_example(cfg, corpus, geometry, pattern, split, i, master_seed))
        .collect()
}

pub fn write_manifest(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    write_json(&root.join(MANIFEST_FILE), manifest)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = read_json(&root.join(MANIFEST_FILE))?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format(
            root.join(MANIFEST_FILE),
            format!("dataset format {}, expected {DATASET_FORMAT_VERSION}", m.format_version),
        ));
    }
    Ok(m)
}

pub fn read_example(dir: &Path) -> Result<StoredExample> {
    let record: ExampleRecord = read_json(&dir.join(SCENE_FILE))?;
    let fs = record.spec.sample_rate_hz;
    let check_rate = |path: &Path, rate: u32| {
        if rate == fs {
            Ok(())
        } else {
            Err(Error::format(path, format!("{rate} Hz, scene says {fs} Hz")))
        }
    };
    let mics_path = dir.join("mics.wav");
    let (mic_signals, rate) = read_wav(&mics_path)?;
    check_rate(&mics_path, rate)?;
    let target_path = dir.join("target.wav");
    let (mut target, rate) = read_wav(&target_path)?;
    check_rate(&target_path, rate)?;
    if target.len() != 1 {
        return Err(Error::format(&target_path, "target must be mono"));
    }
    let mut per_source = Vec::with_capacity(record.spec.sources.len());
    for n in 0..record.spec.sources.len() {
        let path = dir.join(format!("source-{n}.wav"));
        let (mut s, rate) = read_wav(&path)?;
        check_rate(&path, rate)?;
        per_source.push(s.swap_remove(0));
    }
    Ok(StoredExample {
        record,
        scene: RenderedScene {
            mic_signals,
            per_source_ref_direct: per_source,
            vdm_target: target.swap_remove(0),
        },
    })
}

/// Reads every example of `split` listed in the manifest, in index order.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<StoredExample>> {
    let manifest = read_manifest(root)?;
    let count = manifest.examples.get(&split).copied().unwrap_or(0);
    (0..count)
        .into_par_iter()
        .map(|i| read_example(&example_dir(root, split, i)))
        .collect()
}

/// Network training pair for a rendered scene; the target is passed
/// through the same analysis-synthesis chain the estimate goes through.
pub fn train_example<S: Scalar>(scene: &RenderedScene, stft: &Stft, reference_index: usize) -> Result<TrainExample<S>> {
    let specs = scene
        .mic_signals
        .iter()
        .map(|s| stft.analyze(s))
        .collect::<Result<Vec<_>>>()?;
    TrainExample::new(&specs, reference_index, stft.roundtrip(&scene.vdm_target)?)
}
