//! Source-take ingestion, DOA-disjoint scene sampling and example assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio;
use crate::directivity::DirectivityPattern;
use crate::error::{Error, Result};
use crate::geometry::{circular_distance_deg, distance, ArrayGeometry, SourcePlacement, SPEED_OF_SOUND};
use crate::loudness::{gain_for, measure_loudness};
use crate::scene::{add_sensor_noise, delay_and_scale, render_scene, RenderedScene, SceneSource, SceneSpec, Takes};
use crate::synth;

/// Rejection-sampling budget for DOA sets.
pub const MAX_DOA_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    /// Position-disjoint DOA grids: 36 train points on multiples of 10
    /// degrees, 36 validation points offset by 5, and 72 test points offset
    /// by 2.5 on a 5 degree raster.
    pub fn doa_grid(self) -> Vec<f64> {
        match self {
            Split::Train => (0..36).map(|k| 10.0 * k as f64).collect(),
            Split::Validation => (0..36).map(|k| 5.0 + 10.0 * k as f64).collect(),
            Split::Test => (0..72).map(|k| 2.5 + 5.0 * k as f64).collect(),
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Validation => 2,
            Split::Test => 3,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Corpus(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub take_id: String,
    pub path: PathBuf,
    pub split: Split,
    pub duration_s: f64,
}

/// Dry takes with their split tags, held in memory.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
    pub takes: Takes,
    pub sample_rate_hz: u32,
}

impl Corpus {
    /// Loads a split listing (`path,split` per line, paths relative to the
    /// listing file; blank lines and `#` comments ignored) and every take.
    pub fn from_listing(listing: &Path, sample_rate_hz: u32) -> Result<Self> {
        let text = std::fs::read_to_string(listing).map_err(|e| Error::io(listing, e))?;
        let base = listing.parent().unwrap_or_else(|| Path::new("."));
        let mut entries = Vec::new();
        let mut takes = Takes::new();
        let mut seen_paths = BTreeSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (rel, split) = line.rsplit_once(',').ok_or_else(|| {
                Error::Corpus(format!("{}:{}: expected `path,split`", listing.display(), lineno + 1))
            })?;
            let rel = rel.trim();
            let split: Split = split.parse()?;
            if !seen_paths.insert(rel.to_string()) {
                return Err(Error::Corpus(format!("file `{rel}` listed more than once")));
            }
            let take_id = Path::new(rel).with_extension("").to_string_lossy().replace('\\', "/");
            if takes.contains_key(&take_id) {
                return Err(Error::Corpus(format!("duplicate take id `{take_id}`")));
            }
            let path = base.join(rel);
            let signal = audio::read_mono(&path, sample_rate_hz)?;
            if signal.is_empty() {
                return Err(Error::Corpus(format!("take `{take_id}` is empty")));
            }
            entries.push(CorpusEntry {
                take_id: take_id.clone(),
                path: PathBuf::from(rel),
                split,
                duration_s: signal.len() as f64 / sample_rate_hz as f64,
            });
            takes.insert(take_id, signal);
        }
        Ok(Corpus {
            entries,
            takes,
            sample_rate_hz,
        })
    }

    /// In-memory corpus of synthetic speech-like takes.
    pub fn synthetic(counts: &SplitCounts, duration_s: f64, seed: u64, sample_rate_hz: u32) -> Self {
        let mut corpus = Corpus {
            sample_rate_hz,
            ..Default::default()
        };
        for split in Split::ALL {
            for k in 0..counts.get(split) {
                let take_id = format!("{}-{k:05}", split.name());
                let take_seed = derive_seed(seed, split.tag() + 16, k as u64);
                let signal = synth::speech_like(take_seed, duration_s, sample_rate_hz);
                corpus.entries.push(CorpusEntry {
                    take_id: take_id.clone(),
                    path: PathBuf::from(format!("{take_id}.wav")),
                    split,
                    duration_s,
                });
                corpus.takes.insert(take_id, signal);
            }
        }
        corpus
    }

    /// Writes every take plus a `splits.txt` listing under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut listing = String::new();
        for e in &self.entries {
            let path = dir.join(&e.path);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
            }
            audio::write_mono(&path, &self.takes[&e.take_id], self.sample_rate_hz)?;
            listing.push_str(&format!("{},{}\n", e.path.display(), e.split));
        }
        let path = dir.join("splits.txt");
        std::fs::write(&path, listing).map_err(|e| Error::io(&path, e))
    }

    pub fn take_ids(&self, split: Split) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.take_id.clone())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizeStage {
    /// Normalize the dry take before spatialization.
    Dry,
    /// Normalize each source's direct sound at the reference microphone.
    PostRender,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Maximum number of concurrent sources; N is drawn from `1..=n_max`.
    pub n_max: usize,
    /// Fixed source count (test sets); overrides `n_max` when set.
    pub n_fixed: Option<usize>,
    pub min_sep_deg: f64,
    pub loudness_lufs: [f64; 2],
    pub duration_s: f64,
    pub source_distance_m: f64,
    pub snr_db: Option<f64>,
    pub counts: SplitCounts,
    pub normalize_stage: NormalizeStage,
    pub sample_rate_hz: u32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_max: 2,
            n_fixed: None,
            min_sep_deg: 10.0,
            loudness_lufs: [-33.0, -25.0],
            duration_s: 4.0,
            source_distance_m: 1.5,
            snr_db: Some(30.0),
            counts: SplitCounts {
                train: 200,
                validation: 50,
                test: 50,
            },
            normalize_stage: NormalizeStage::PostRender,
            sample_rate_hz: 16_000,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let max_n = self.n_fixed.unwrap_or(self.n_max);
        if !(1..=6).contains(&self.n_max) || !(1..=6).contains(&max_n) {
            return Err(Error::Config(format!("source count must lie in 1..=6, got {max_n}")));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::Config("duration must be positive".into()));
        }
        if !(self.source_distance_m > 0.0) {
            return Err(Error::Config("source distance must be positive".into()));
        }
        if !(self.min_sep_deg >= 0.0) {
            return Err(Error::Config("minimum separation must be non-negative".into()));
        }
        if self.loudness_lufs[0] > self.loudness_lufs[1] {
            return Err(Error::Config("loudness range is reversed".into()));
        }
        for split in Split::ALL {
            let cap = max_sources_on_grid(&split.doa_grid(), self.min_sep_deg);
            if max_n > cap {
                return Err(Error::InfeasibleSampling(format!(
                    "{max_n} sources at {} degree separation do not fit the {split} grid (max {cap})",
                    self.min_sep_deg
                )));
            }
        }
        Ok(())
    }

    fn draw_count(&self, rng: &mut impl Rng) -> usize {
        self.n_fixed.unwrap_or_else(|| rng.random_range(1..=self.n_max))
    }
}

/// Upper bound on sources that fit a uniform circular grid at `min_sep`.
fn max_sources_on_grid(grid: &[f64], min_sep_deg: f64) -> usize {
    if grid.len() < 2 {
        return grid.len();
    }
    let step = 360.0 / grid.len() as f64;
    let occupied = (min_sep_deg / step - 1e-9).ceil().max(1.0) as usize;
    grid.len() / occupied
}

/// Mixes a master seed with a stream tag and an index (splitmix64 finalizer).
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut z = master
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of example `index` in `split` under `master`.
pub fn example_seed(master: u64, split: Split, index: usize) -> u64 {
    derive_seed(master, split.tag(), index as u64)
}

/// Draws DOAs on the split grid with pairwise circular separation of at
/// least `min_sep_deg`, by rejection.
pub fn sample_doas(grid: &[f64], count: usize, min_sep_deg: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if count > grid.len() {
        return Err(Error::InfeasibleSampling(format!(
            "{count} DOAs requested from a grid of {}",
            grid.len()
        )));
    }
    for _ in 0..MAX_DOA_ATTEMPTS {
        let doas: Vec<f64> = index::sample(rng, grid.len(), count).iter().map(|i| grid[i]).collect();
        let ok = doas
            .iter()
            .enumerate()
            .all(|(i, a)| doas[i + 1..].iter().all(|b| circular_distance_deg(*a, *b) >= min_sep_deg - 1e-9));
        if ok {
            return Ok(doas);
        }
    }
    Err(Error::InfeasibleSampling(format!(
        "no {count} DOAs with {min_sep_deg} degree separation after {MAX_DOA_ATTEMPTS} attempts"
    )))
}

/// Samples a scene: a source count, DOAs on the split grid and distinct takes.
pub fn sample_scene(cfg: &DatasetConfig, split: Split, take_ids: &[String], rng: &mut impl Rng) -> Result<SceneSpec> {
    cfg.validate()?;
    let n = cfg.draw_count(rng);
    let doas = sample_doas(&split.doa_grid(), n, cfg.min_sep_deg, rng)?;
    if take_ids.len() < n {
        return Err(Error::Corpus(format!(
            "{split} partition has {} takes, scene needs {n}",
            take_ids.len()
        )));
    }
    let picks = index::sample(rng, take_ids.len(), n);
    let sources = doas
        .iter()
        .zip(picks.iter())
        .map(|(&az, i)| {
            Ok(SceneSource {
                take_id: take_ids[i].clone(),
                placement: SourcePlacement::new(az, cfg.source_distance_m)?,
                gain: 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneSpec {
        sources,
        snr_db: cfg.snr_db,
        seed: rng.next_u64(),
        duration_s: cfg.duration_s,
        sample_rate_hz: cfg.sample_rate_hz,
    })
}

/// Fits a take to `len` samples: trims a random segment from longer takes,
/// zero-pads shorter ones with a random split of the padding between the
/// beginning and the end. Returns the segment and its signed offset
/// (positive: samples of leading padding, negative: trimmed start).
pub fn fit_to_length(take: &[f64], len: usize, rng: &mut impl Rng) -> (Vec<f64>, i64) {
    if take.len() >= len {
        let start = rng.random_range(0..=take.len() - len);
        (take[start..start + len].to_vec(), -(start as i64))
    } else {
        let pad = len - take.len();
        let begin = rng.random_range(0..=pad);
        let mut out = vec![0.0; len];
        out[begin..begin + take.len()].copy_from_slice(take);
        (out, begin as i64)
    }
}

/// A scene ready to be written or fed to a system.
#[derive(Clone, Debug, PartialEq)]
pub struct AssembledExample {
    /// Scene with per-source loudness gains filled in.
    pub spec: SceneSpec,
    /// Noisy microphone signals, clean per-source direct sound and target.
    pub scene: RenderedScene,
    pub target_lufs: Vec<f64>,
    pub offsets: Vec<i64>,
    pub over_full_scale: usize,
}

/// Loudness-normalizes, fits, renders and adds sensor noise for one scene.
pub fn assemble_example(
    spec: &SceneSpec,
    cfg: &DatasetConfig,
    corpus: &Corpus,
    geometry: &ArrayGeometry,
    pattern: &DirectivityPattern,
) -> Result<AssembledExample> {
    let len = spec.num_samples();
    let fs = spec.sample_rate_hz;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut spec = spec.clone();
    let mut segments = Takes::new();
    let mut target_lufs = Vec::with_capacity(spec.sources.len());
    let mut offsets = Vec::with_capacity(spec.sources.len());
    let reference = geometry.mic_positions[geometry.reference_index];
    for source in spec.sources.iter_mut() {
        let take = corpus
            .takes
            .get(&source.take_id)
            .ok_or_else(|| Error::Corpus(format!("take `{}` not in corpus", source.take_id)))?;
        let (segment, offset) = fit_to_length(take, len, &mut rng);
        let lufs = rng.random_range(cfg.loudness_lufs[0]..=cfg.loudness_lufs[1]);
        let measured = match cfg.normalize_stage {
            NormalizeStage::Dry => measure_loudness(&segment, fs)?,
            NormalizeStage::PostRender => {
                let d = distance(&source.placement.position(), &reference);
                let direct = delay_and_scale(
                    &segment,
                    d / SPEED_OF_SOUND * fs as f64,
                    1.0 / (4.0 * std::f64::consts::PI * d),
                    len,
                );
                measure_loudness(&direct, fs)?
            }
        };
        source.gain = gain_for(measured, lufs);
        target_lufs.push(lufs);
        offsets.push(offset);
        if segments.insert(source.take_id.clone(), segment).is_some() {
            return Err(Error::Scene(format!("take `{}` used twice in one scene", source.take_id)));
        }
    }
    let mut scene = render_scene(&spec, geometry, pattern, &segments)?;
    if let Some(snr) = spec.snr_db {
        scene = add_sensor_noise(scene, snr, rng.next_u64())?;
    }
    let over_full_scale = scene
        .mic_signals
        .iter()
        .flatten()
        .filter(|v| v.abs() > 1.0)
        .count();
    Ok(AssembledExample {
        spec,
        scene,
        target_lufs,
        offsets,
        over_full_scale,
    })
}

/// Samples and assembles example `index` of `split`.
pub fn generate_example(
    cfg: &DatasetConfig,
    corpus: &Corpus,
    geometry: &ArrayGeometry,
    pattern: &DirectivityPattern,
    split: Split,
    index: usize,
    master_seed: u64,
) -> Result<AssembledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(example_seed(master_seed, split, index));
    let ids = corpus.take_ids(split);
    let spec = sample_scene(cfg, split, &ids, &mut rng)?;
    assemble_example(&spec, cfg, corpus, geometry, pattern)
}

/// Per-split take counts of a corpus.
pub fn split_sizes(corpus: &Corpus) -> BTreeMap<Split, usize> {
    let mut m = BTreeMap::new();
    for e in &corpus.entries {
        *m.entry(e.split).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directivity::Preset;
    use crate::geometry::build_uca;

    fn small_corpus() -> Corpus {
        Corpus::synthetic(
            &SplitCounts {
                train: 4,
                validation: 2,
                test: 3,
            },
            1.0,
            42,
            16_000,
        )
    }

    #[test]
    fn grids_are_disjoint() {
        let sets: Vec<BTreeSet<u64>> = Split::ALL
            .iter()
            .map(|s| s.doa_grid().iter().map(|v| (v * 10.0) as u64).collect())
            .collect();
        assert_eq!(sets[0].len(), 36);
        assert_eq!(sets[1].len(), 36);
        assert_eq!(sets[2].len(), 72);
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert!(sets[i].is_disjoint(&sets[j]));
            }
        }
    }

    #[test]
    fn single_source_test_doa_on_grid() {
        let cfg = DatasetConfig {
            n_max: 1,
            ..Default::default()
        };
        let ids = vec!["t".to_string()];
        let grid = Split::Test.doa_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let spec = sample_scene(&cfg, Split::Test, &ids, &mut rng).unwrap();
            assert_eq!(spec.sources.len(), 1);
            assert!(grid.contains(&spec.sources[0].placement.azimuth_deg));
            assert_eq!(spec.sources[0].placement.distance_m, 1.5);
        }
    }

    #[test]
    fn separation_and_uniform_counts() {
        let cfg = DatasetConfig {
            n_max: 6,
            ..Default::default()
        };
        let ids: Vec<String> = (0..10).map(|k| k.to_string()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut hist = [0usize; 7];
        let draws = 10_000;
        for _ in 0..draws {
            let spec = sample_scene(&cfg, Split::Train, &ids, &mut rng).unwrap();
            let doas = spec.doas();
            for i in 0..doas.len() {
                for j in (i + 1)..doas.len() {
                    assert!(circular_distance_deg(doas[i], doas[j]) >= 10.0);
                }
            }
            let takes: BTreeSet<_> = spec.sources.iter().map(|s| &s.take_id).collect();
            assert_eq!(takes.len(), doas.len());
            hist[doas.len()] += 1;
        }
        for (n, &count) in hist.iter().enumerate().skip(1) {
            let freq = count as f64 / draws as f64;
            assert!((freq - 1.0 / 6.0).abs() <= 0.02, "N={n}: {freq}");
        }
    }

    #[test]
    fn infeasible_and_exhausted() {
        let cfg = DatasetConfig {
            n_max: 6,
            min_sep_deg: 70.0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InfeasibleSampling(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = DatasetConfig {
            n_fixed: Some(3),
            ..Default::default()
        };
        let ids = vec!["a".to_string()];
        assert!(matches!(sample_scene(&cfg, Split::Test, &ids, &mut rng), Err(Error::Corpus(_))));
        assert!(sample_doas(&[0.0, 10.0], 3, 0.0, &mut rng).is_err());
    }

    #[test]
    fn fit_to_length_pads_and_trims() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let take: Vec<f64> = (1..=100).map(f64::from).collect();
        let (padded, offset) = fit_to_length(&take, 250, &mut rng);
        assert!((0..=150).contains(&offset));
        let o = offset as usize;
        assert_eq!(&padded[o..o + 100], &take[..]);
        assert!(padded[..o].iter().chain(&padded[o + 100..]).all(|&v| v == 0.0));
        let (trimmed, offset) = fit_to_length(&take, 40, &mut rng);
        let s = (-offset) as usize;
        assert_eq!(&trimmed[..], &take[s..s + 40]);
    }

    #[test]
    fn assembled_example_properties() {
        let corpus = small_corpus();
        let geometry = build_uca(0.03, 3, true).unwrap();
        let pattern = DirectivityPattern::preset(Preset::Cardioid, 0.0);
        let cfg = DatasetConfig {
            n_max: 2,
            duration_s: 1.0,
            ..Default::default()
        };
        let a = generate_example(&cfg, &corpus, &geometry, &pattern, Split::Train, 3, 9).unwrap();
        let b = generate_example(&cfg, &corpus, &geometry, &pattern, Split::Train, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scene.mic_signals.len(), 4);
        assert!(a.scene.mic_signals.iter().all(|c| c.len() == 16_000));
        assert_eq!(a.scene.vdm_target.len(), 16_000);
        let grid = Split::Train.doa_grid();
        assert!(a.spec.doas().iter().all(|d| grid.contains(d)));
        for (direct, lufs) in a.scene.per_source_ref_direct.iter().zip(&a.target_lufs) {
            let l = measure_loudness(direct, 16_000).unwrap();
            assert!((l - lufs).abs() < 0.5);
            assert!((-33.5..=-24.5).contains(&l));
        }
        // sensor noise reaches the mics but not the target
        let clean: Vec<f64> = (0..16_000)
            .map(|n| a.scene.per_source_ref_direct.iter().map(|s| s[n]).sum())
            .collect();
        assert_ne!(clean, a.scene.mic_signals[0]);
    }

    #[test]
    fn dry_normalization_stage() {
        let corpus = small_corpus();
        let geometry = build_uca(0.03, 3, true).unwrap();
        let pattern = DirectivityPattern::preset(Preset::Cardioid, 0.0);
        let cfg = DatasetConfig {
            n_fixed: Some(1),
            duration_s: 1.0,
            normalize_stage: NormalizeStage::Dry,
            snr_db: None,
            ..Default::default()
        };
        let ex = generate_example(&cfg, &corpus, &geometry, &pattern, Split::Test, 0, 1).unwrap();
        let take = &corpus.takes[&ex.spec.sources[0].take_id];
        let l = measure_loudness(&take.iter().map(|v| v * ex.spec.sources[0].gain).collect::<Vec<_>>(), 16_000).unwrap();
        assert!((l - ex.target_lufs[0]).abs() < 0.5);
    }

    #[test]
    fn short_take_is_padded_nonzero_span_preserved() {
        let mut corpus = small_corpus();
        let short = synth::speech_like(77, 0.5, 16_000);
        corpus.takes.insert("short".into(), short.clone());
        let geometry = build_uca(0.03, 0, true).unwrap();
        let pattern = DirectivityPattern::new(vec![1.0], 0.0).unwrap();
        let cfg = DatasetConfig {
            n_fixed: Some(1),
            duration_s: 1.0,
            snr_db: None,
            normalize_stage: NormalizeStage::Dry,
            ..Default::default()
        };
        let spec = SceneSpec {
            sources: vec![SceneSource {
                take_id: "short".into(),
                placement: SourcePlacement::new(0.0, 1.5).unwrap(),
                gain: 1.0,
            }],
            snr_db: None,
            seed: 5,
            duration_s: 1.0,
            sample_rate_hz: 16_000,
        };
        let ex = assemble_example(&spec, &cfg, &corpus, &geometry, &pattern).unwrap();
        assert!(ex.offsets[0] >= 0 && ex.offsets[0] <= 8000);
        assert_eq!(ex.scene.mic_signals[0].len(), 16_000);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (segment, offset) = fit_to_length(&short, 16_000, &mut rng);
        assert_eq!(offset, ex.offsets[0]);
        let o = offset as usize;
        assert_eq!(&segment[o..o + 8000], &short[..]);
    }

    #[test]
    fn listing_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = small_corpus();
        corpus.write(dir.path()).unwrap();
        let loaded = Corpus::from_listing(&dir.path().join("splits.txt"), 16_000).unwrap();
        assert_eq!(loaded.entries.len(), 9);
        assert_eq!(loaded.take_ids(Split::Test), corpus.take_ids(Split::Test));
        for (id, take) in &loaded.takes {
            let orig = &corpus.takes[id];
            assert!(take.iter().zip(orig).all(|(a, b)| (a - b).abs() < 1e-6));
        }
        let sizes = split_sizes(&loaded);
        assert_eq!(sizes[&Split::Train], 4);

        std::fs::write(dir.path().join("dup.txt"), "train-00000.wav,train\ntrain-00000.wav,test\n").unwrap();
        assert!(Corpus::from_listing(&dir.path().join("dup.txt"), 16_000).is_err());
        std::fs::write(dir.path().join("bad.txt"), "train-00000.wav\n").unwrap();
        assert!(Corpus::from_listing(&dir.path().join("bad.txt"), 16_000).is_err());
    }
}
