//! Realized-pattern estimation, SDR tables and two-source SDR heatmaps for
//! the four systems (reference microphone, parametric, LS beamformer,
//! neural mask), with CSV export.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::beamformer::{apply_beamformer, BeamformerWeights};
use crate::corpus::{assemble_example, derive_seed, Corpus, DatasetConfig, Split};
use crate::directivity::DirectivityPattern;
use crate::error::{Error, Result};
use crate::geometry::{circular_distance_deg, ArrayGeometry, SourcePlacement};
use crate::metrics::{report_db, sdr};
use crate::neural::{infer_mask, MaskNet};
use crate::parametric::{apply_parametric, oracle_doa_map, parametric_mask, SILENT_BIN_POWER};
use crate::scene::{RenderedScene, SceneSource, SceneSpec};
use crate::spectral::{ComplexMask, ComplexSpectrogram, Stft};

/// Floor for dB values of targets and estimates.
pub const DB_FLOOR: f64 = -60.0;

#[derive(Clone, Debug)]
pub enum System {
    ReferenceMic,
    Parametric,
    Ls(BeamformerWeights),
    Neural(MaskNet<f32>),
}

impl System {
    pub fn name(&self) -> &'static str {
        match self {
            System::ReferenceMic => "reference_mic",
            System::Parametric => "parametric",
            System::Ls(_) => "ls",
            System::Neural(_) => "neural",
        }
    }
}

/// What every system needs besides the scene itself.
#[derive(Clone, Debug)]
pub struct EvalContext {
    pub stft: Stft,
    pub geometry: ArrayGeometry,
    pub pattern: DirectivityPattern,
}

impl EvalContext {
    fn analyze_all(&self, signals: &[Vec<f64>]) -> Result<Vec<ComplexSpectrogram>> {
        signals.iter().map(|s| self.stft.analyze(s)).collect()
    }
}

/// Estimated VDM spectrogram of one scene.
pub fn estimate_spectrogram(system: &System, ctx: &EvalContext, spec: &SceneSpec, scene: &RenderedScene) -> Result<ComplexSpectrogram> {
    let mics = ctx.analyze_all(&scene.mic_signals)?;
    let r = ctx.geometry.reference_index;
    let reference = mics
        .get(r)
        .ok_or_else(|| Error::Shape(format!("scene has no reference channel {r}")))?;
    match system {
        System::ReferenceMic => Ok(reference.clone()),
        System::Parametric => {
            let sources = ctx.analyze_all(&scene.per_source_ref_direct)?;
            let map = oracle_doa_map(&sources, &spec.doas(), ctx.pattern.steer_deg)?;
            apply_parametric(reference, &map, &ctx.pattern)
        }
        System::Ls(w) => apply_beamformer(w, &mics),
        System::Neural(net) => infer_mask(net, &mics, r)?.apply(reference),
    }
}

/// Estimated VDM waveform, cut to the scene length.
pub fn estimate_signal(system: &System, ctx: &EvalContext, spec: &SceneSpec, scene: &RenderedScene) -> Result<Vec<f64>> {
    let mut out = ctx.stft.synthesize(&estimate_spectrogram(system, ctx, spec, scene)?)?;
    out.truncate(scene.len());
    Ok(out)
}

/// Mask the system applies to the reference microphone. For the
/// beamformer this is the equivalent mask `Z / Y_1` (zero where `Y_1`
/// vanishes).
pub fn system_mask(system: &System, ctx: &EvalContext, spec: &SceneSpec, scene: &RenderedScene) -> Result<ComplexMask> {
    let mics = ctx.analyze_all(&scene.mic_signals)?;
    let r = ctx.geometry.reference_index;
    let reference = &mics[r];
    let (bins, frames) = reference.shape();
    match system {
        System::ReferenceMic => Ok(ComplexMask::constant(bins, frames, Complex64::new(1.0, 0.0))),
        System::Parametric => {
            let sources = ctx.analyze_all(&scene.per_source_ref_direct)?;
            let map = oracle_doa_map(&sources, &spec.doas(), ctx.pattern.steer_deg)?;
            Ok(parametric_mask(&map, &ctx.pattern))
        }
        System::Neural(net) => infer_mask(net, &mics, r),
        System::Ls(w) => {
            let z = apply_beamformer(w, &mics)?;
            let data = z
                .data()
                .iter()
                .zip(reference.data())
                .map(|(z, y)| if y.norm_sqr() > 0.0 { z / y } else { Complex64::new(0.0, 0.0) })
                .collect();
            ComplexMask::from_data(bins, frames, data)
        }
    }
}

/// SDR of a system on one scene against the target seen through the same
/// analysis-synthesis chain, capped for reporting.
pub fn scene_sdr(system: &System, ctx: &EvalContext, spec: &SceneSpec, scene: &RenderedScene) -> Result<f64> {
    let target = ctx.stft.roundtrip(&scene.vdm_target)?;
    let estimate = estimate_signal(system, ctx, spec, scene)?;
    Ok(report_db(sdr(&target, &estimate)?))
}

/// Per-source realized gain:
/// `sqrt(mean_t |M X_n|^2 / mean_t |X_n|^2)` per bin, averaged over the
/// bins where the source has energy.
pub fn estimate_pattern(mask: &ComplexMask, per_source_ref_specs: &[ComplexSpectrogram]) -> Result<Vec<f64>> {
    per_source_ref_specs
        .iter()
        .enumerate()
        .map(|(n, x)| {
            if x.shape() != mask.shape() {
                return Err(Error::Shape(format!("source {n} {:?} vs mask {:?}", x.shape(), mask.shape())));
            }
            let (bins, frames) = x.shape();
            let mut sum = 0.0;
            let mut used = 0usize;
            for b in 0..bins {
                let mut before = 0.0;
                let mut after = 0.0;
                for t in 0..frames {
                    let v = x.get(b, t);
                    before += v.norm_sqr();
                    after += (mask.get(b, t) * v).norm_sqr();
                }
                let before = before / frames as f64;
                if before >= SILENT_BIN_POWER {
                    sum += (after / frames as f64 / before).sqrt();
                    used += 1;
                }
            }
            if used == 0 {
                return Err(Error::SilentMixture(n));
            }
            Ok(sum / used as f64)
        })
        .collect()
}

/// Gains aggregated per DOA across trials.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternEstimate {
    pub doas_deg: Vec<f64>,
    pub mean_gain: Vec<f64>,
    pub std_gain: Vec<f64>,
    pub mean_db: Vec<f64>,
    pub std_db: Vec<f64>,
}

pub fn to_db(gain: f64) -> f64 {
    if gain <= 0.0 {
        DB_FLOOR
    } else {
        (20.0 * gain.log10()).max(DB_FLOOR)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl PatternEstimate {
    /// Groups `(doa, gain)` samples by DOA, in ascending DOA order.
    pub fn from_samples(samples: &[(f64, f64)]) -> Self {
        let mut groups: BTreeMap<i64, (f64, Vec<f64>)> = BTreeMap::new();
        for &(doa, gain) in samples {
            let key = (doa * 1e6).round() as i64;
            groups.entry(key).or_insert((doa, Vec::new())).1.push(gain);
        }
        let mut est = PatternEstimate {
            doas_deg: Vec::new(),
            mean_gain: Vec::new(),
            std_gain: Vec::new(),
            mean_db: Vec::new(),
            std_db: Vec::new(),
        };
        for (_, (doa, gains)) in groups {
            let (m, s) = mean_std(&gains);
            let dbs: Vec<f64> = gains.iter().map(|&g| to_db(g)).collect();
            let (_, sd) = mean_std(&dbs);
            est.doas_deg.push(doa);
            est.mean_gain.push(m);
            est.std_gain.push(s);
            est.mean_db.push(to_db(m));
            est.std_db.push(sd);
        }
        est
    }

    pub fn gain_at(&self, doa_deg: f64) -> Option<f64> {
        self.doas_deg
            .iter()
            .position(|&d| circular_distance_deg(d, doa_deg) < 1e-9)
            .map(|i| self.mean_gain[i])
    }
}

/// Scenes that share one loudness and exactly fitting takes, so that the
/// result does not depend on the order sources are listed in.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub duration_s: f64,
    pub loudness_lufs: f64,
    pub snr_db: Option<f64>,
    pub distance_m: f64,
    pub trials: usize,
    pub seed: u64,
    pub min_sep_deg: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            duration_s: 1.0,
            loudness_lufs: -29.0,
            snr_db: None,
            distance_m: 1.5,
            trials: 3,
            seed: 0,
            min_sep_deg: 10.0,
        }
    }
}

struct Prober<'a> {
    corpus: Corpus,
    ids: Vec<String>,
    cfg: DatasetConfig,
    probe: &'a ProbeConfig,
}

impl<'a> Prober<'a> {
    fn new(corpus: &Corpus, probe: &'a ProbeConfig) -> Result<Self> {
        let len = (probe.duration_s * corpus.sample_rate_hz as f64).round() as usize;
        let ids = corpus.take_ids(Split::Test);
        if ids.is_empty() {
            return Err(Error::Corpus("no test takes to probe with".into()));
        }
        let mut trimmed = corpus.clone();
        for id in &ids {
            let take = trimmed.takes.get_mut(id).expect("listed take");
            take.resize(len, 0.0);
        }
        let cfg = DatasetConfig {
            loudness_lufs: [probe.loudness_lufs; 2],
            duration_s: probe.duration_s,
            source_distance_m: probe.distance_m,
            snr_db: probe.snr_db,
            sample_rate_hz: corpus.sample_rate_hz,
            ..Default::default()
        };
        Ok(Prober {
            corpus: trimmed,
            ids,
            cfg,
            probe,
        })
    }

    fn scene(&self, placements: &[(f64, usize)], seed: u64, ctx: &EvalContext) -> Result<(SceneSpec, RenderedScene)> {
        let sources = placements
            .iter()
            .map(|&(doa, take)| {
                Ok(SceneSource {
                    take_id: self.ids[take % self.ids.len()].clone(),
                    placement: SourcePlacement::new(doa, self.probe.distance_m)?,
                    gain: 1.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = SceneSpec {
            sources,
            snr_db: self.probe.snr_db,
            seed,
            duration_s: self.probe.duration_s,
            sample_rate_hz: self.corpus.sample_rate_hz,
        };
        let ex = assemble_example(&spec, &self.cfg, &self.corpus, &ctx.geometry, &ctx.pattern)?;
        Ok((ex.spec, ex.scene))
    }
}

/// Realized pattern of a system from single-source scenes at every DOA,
/// `trials` takes per DOA.
pub fn probe_pattern(system: &System, ctx: &EvalContext, corpus: &Corpus, doas_deg: &[f64], probe: &ProbeConfig) -> Result<PatternEstimate> {
    if doas_deg.is_empty() || probe.trials == 0 {
        return Err(Error::Config("pattern probe needs DOAs and at least one trial".into()));
    }
    let prober = Prober::new(corpus, probe)?;
    let jobs: Vec<(usize, usize)> = (0..doas_deg.len()).flat_map(|d| (0..probe.trials).map(move |k| (d, k))).collect();
    let samples = jobs
        .par_iter()
        .map(|&(d, k)| {
            let seed = derive_seed(probe.seed, d as u64, k as u64);
            let (spec, scene) = prober.scene(&[(doas_deg[d], k)], seed, ctx)?;
            let mask = system_mask(system, ctx, &spec, &scene)?;
            let sources = ctx.analyze_all(&scene.per_source_ref_direct)?;
            Ok((doas_deg[d], estimate_pattern(&mask, &sources)?[0]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatternEstimate::from_samples(&samples))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub system: String,
    /// `None` for the row average.
    pub n_test: Option<usize>,
    pub mean_sdr_db: f64,
}

/// Mean SDR per source count plus the average over source counts.
pub fn sdr_table(
    system: &System,
    ctx: &EvalContext,
    testsets: &BTreeMap<usize, Vec<(SceneSpec, RenderedScene)>>,
) -> Result<Vec<TableRow>> {
    if testsets.is_empty() || testsets.values().any(Vec::is_empty) {
        return Err(Error::EmptyDataset("every test set needs at least one scene".into()));
    }
    let mut rows = Vec::with_capacity(testsets.len() + 1);
    for (&n, scenes) in testsets {
        let sdrs = scenes
            .par_iter()
            .map(|(spec, scene)| scene_sdr(system, ctx, spec, scene))
            .collect::<Result<Vec<_>>>()?;
        rows.push(TableRow {
            system: system.name().to_string(),
            n_test: Some(n),
            mean_sdr_db: sdrs.iter().sum::<f64>() / sdrs.len() as f64,
        });
    }
    let av = rows.iter().map(|r| r.mean_sdr_db).sum::<f64>() / rows.len() as f64;
    rows.push(TableRow {
        system: system.name().to_string(),
        n_test: None,
        mean_sdr_db: av,
    });
    Ok(rows)
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut s = String::from("system,n_test,mean_sdr_db\n");
    for r in rows {
        let n = r.n_test.map_or_else(|| "av".to_string(), |n| n.to_string());
        writeln!(s, "{},{},{:.6}", r.system, n, r.mean_sdr_db).unwrap();
    }
    s
}

/// `values[i][j]`: mean SDR with the first source at `grid[i]` and the
/// second at `grid[j]`; NaN where the two are closer than the minimum
/// separation.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub grid_deg: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Two-source SDR over all ordered DOA pairs. `take_pair` picks the test
/// takes of the two sources for trial `k` (as offsets into the test
/// partition); cell seeds depend only on the unordered pair and trial.
pub fn sdr_heatmap(
    system: &System,
    ctx: &EvalContext,
    corpus: &Corpus,
    grid_deg: &[f64],
    probe: &ProbeConfig,
    take_pair: impl Fn(usize) -> (usize, usize) + Sync,
) -> Result<Heatmap> {
    if grid_deg.is_empty() {
        return Err(Error::Config("heatmap grid is empty".into()));
    }
    if probe.trials == 0 {
        return Err(Error::Config("heatmap needs at least one trial".into()));
    }
    let prober = Prober::new(corpus, probe)?;
    let g = grid_deg.len();
    let cells: Vec<(usize, usize)> = (0..g).flat_map(|i| (0..g).map(move |j| (i, j))).collect();
    let values = cells
        .par_iter()
        .map(|&(i, j)| {
            if circular_distance_deg(grid_deg[i], grid_deg[j]) < probe.min_sep_deg {
                return Ok(f64::NAN);
            }
            let pair = (i.min(j) * g + i.max(j)) as u64;
            let mut total = 0.0;
            for k in 0..probe.trials {
                let (a, b) = take_pair(k);
                let seed = derive_seed(probe.seed, pair, k as u64);
                let (spec, scene) = prober.scene(&[(grid_deg[i], a), (grid_deg[j], b)], seed, ctx)?;
                total += scene_sdr(system, ctx, &spec, &scene)?;
            }
            Ok(total / probe.trials as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Heatmap {
        grid_deg: grid_deg.to_vec(),
        values: values.chunks(g).map(<[f64]>::to_vec).collect(),
    })
}

/// Default take assignment: consecutive takes of the test partition.
pub fn consecutive_takes(k: usize) -> (usize, usize) {
    (2 * k, 2 * k + 1)
}

pub fn heatmap_csv(h: &Heatmap) -> String {
    let mut s = String::from("theta1,theta2,sdr_db\n");
    for (i, row) in h.values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let v = if v.is_nan() { "nan".to_string() } else { format!("{v:.6}") };
            writeln!(s, "{:.6},{:.6},{v}", h.grid_deg[i], h.grid_deg[j]).unwrap();
        }
    }
    s
}

/// Polar rows of a target pattern, floored at -60 dB.
pub fn pattern_polar(pattern: &DirectivityPattern, resolution_deg: f64) -> Result<Vec<(f64, f64, f64)>> {
    let m = 360.0 / resolution_deg;
    if !(resolution_deg > 0.0) || (m - m.round()).abs() > 1e-9 {
        return Err(Error::Config(format!("resolution {resolution_deg} does not divide 360")));
    }
    Ok((0..m.round() as usize)
        .map(|k| {
            let a = k as f64 * resolution_deg;
            (a, to_db(pattern.evaluate(a).abs()), 0.0)
        })
        .collect())
}

pub fn estimate_polar(est: &PatternEstimate) -> Vec<(f64, f64, f64)> {
    est.doas_deg
        .iter()
        .zip(&est.mean_db)
        .zip(&est.std_db)
        .map(|((&a, &g), &s)| (a, g, s))
        .collect()
}

pub fn polar_csv(rows: &[(f64, f64, f64)]) -> String {
    let mut s = String::from("angle_deg,gain_db,std_db\n");
    for (a, g, sd) in rows {
        writeln!(s, "{a:.6},{g:.6},{sd:.6}").unwrap();
    }
    s
}
