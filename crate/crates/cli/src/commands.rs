use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::Serialize;
use serde_json::json;
use vdm_core::audio::{read_wav, write_mono, write_wav};
use vdm_core::beamformer::{design_ls, BeamformerWeights};
use vdm_core::corpus::{derive_seed, Split};
use vdm_core::dataset::{self, generate_dataset, load_split, read_manifest, write_manifest, DatasetManifest};
use vdm_core::evaluation::{
    consecutive_takes, estimate_polar, estimate_signal, heatmap_csv, pattern_polar, polar_csv, probe_pattern,
    scene_sdr, sdr_heatmap, sdr_table, table_csv, EvalContext, ProbeConfig, System,
};
use vdm_core::geometry::ArrayGeometry;
use vdm_core::metrics::report_db;
use vdm_core::neural::{
    infer_mask, load_checkpoint, save_checkpoint, train, write_history, MaskNet, MaskNetConfig, TrainConfig,
    TrainExample,
};
use vdm_core::scene::{add_sensor_noise, render_scene, SceneSpec, Takes};
use vdm_core::spectral::Stft;
use vdm_core::directivity::DirectivityPattern;

use crate::config::RunConfig;
use crate::{BaselineKind, Cli, Command, Common, CorpusCommand, DatasetCommand, EvalCommand, PatternCommand, SystemArgs, SystemKind};

/// Errors that should exit with the usage status.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

struct Ctx {
    verbose: bool,
    jobs: usize,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<String> {
    let ctx = Ctx {
        verbose: cli.verbose,
        jobs: cli.jobs,
    };
    if cli.jobs == 0 {
        return Err(UsageError("--jobs must be at least 1".into()).into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .context("building worker pool")?;
    pool.install(|| match cli.command {
        Command::Corpus(CorpusCommand::Synth { common }) => corpus_synth(&ctx, &common),
        Command::Dataset(DatasetCommand::Generate { common }) => dataset_generate(&ctx, &common),
        Command::Simulate { common, scene } => simulate(&ctx, &common, &scene),
        Command::DesignLs {
            common,
            wng_floor_db,
            grid_deg,
        } => design(&ctx, &common, wng_floor_db, grid_deg),
        Command::Baseline {
            kind,
            common,
            data,
            weights,
        } => baseline(&ctx, kind, &common, &data, weights.as_deref()),
        Command::Train { common, data, epochs } => train_cmd(&ctx, &common, &data, epochs),
        Command::Infer {
            common,
            checkpoint,
            input,
        } => infer(&ctx, &common, &checkpoint, &input),
        Command::Eval(EvalCommand::Sdr { common, system, data }) => eval_sdr(&ctx, &common, &system, &data),
        Command::Eval(EvalCommand::Pattern { common, system }) => eval_pattern(&ctx, &common, &system),
        Command::Eval(EvalCommand::Heatmap { common, system }) => eval_heatmap(&ctx, &common, &system),
        Command::Pattern(PatternCommand::Eval { preset, theta, steer }) => {
            let v = DirectivityPattern::preset(preset, steer).evaluate(theta);
            // avoid printing a negative zero
            let v = if v.abs() < 5e-7 { 0.0 } else { v };
            Ok(format!("{v:.6}"))
        }
    })
}

fn seed(common: &Common, cfg: &RunConfig) -> Result<u64> {
    common
        .seed
        .or(cfg.seed)
        .ok_or_else(|| UsageError("this command needs --seed (or VDM_SEED, or `seed` in the config)".into()).into())
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn manifest(out: &Path, command: &str, cfg: &RunConfig, seed: Option<u64>, extra: serde_json::Value) -> Result<()> {
    write_json(
        &out.join("manifest.json"),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "config": cfg,
            "details": extra,
        }),
    )
}

fn corpus_synth(ctx: &Ctx, common: &Common) -> Result<String> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    let seed = seed(common, &cfg)?;
    cfg.corpus.synthetic.seed = seed;
    cfg.corpus.listing = None;
    prepare_out(&common.out)?;
    let corpus = cfg.corpus()?;
    ctx.log(format!("writing {} takes", corpus.entries.len()));
    corpus.write(&common.out)?;
    manifest(&common.out, "corpus synth", &cfg, Some(seed), json!({ "listing": "splits.txt" }))?;
    Ok(format!("wrote {} takes to {}", corpus.entries.len(), common.out.display()))
}

fn dataset_generate(ctx: &Ctx, common: &Common) -> Result<String> {
    let cfg = RunConfig::load_or_default(common.config.as_deref())?;
    let seed = seed(common, &cfg)?;
    let geometry = cfg.geometry.build()?;
    let pattern = cfg.pattern.build()?;
    let corpus = cfg.corpus()?;
    prepare_out(&common.out)?;
    ctx.log(format!("generating with {} worker(s)", ctx.jobs));
    let mut m = generate_dataset(&common.out, &cfg.dataset, &corpus, &geometry, &pattern, seed)?;
    let mut run = serde_json::to_value(&cfg)?;
    if let Some(listing) = run.pointer_mut("/corpus/listing") {
        // absolute paths would make the manifest depend on the working directory
        if let Some(l) = &cfg.corpus.listing {
            *listing = json!(l.file_name().map(|f| f.to_string_lossy().to_string()));
        }
    }
    m.run = Some(json!({ "command": "dataset generate", "version": env!("CARGO_PKG_VERSION"), "config": run }));
    write_manifest(&common.out, &m)?;
    let total: usize = m.examples.values().sum();
    Ok(format!("wrote {total} examples to {}", common.out.display()))
}

fn simulate(ctx: &Ctx, common: &Common, scene_path: &Path) -> Result<String> {
    let cfg = RunConfig::load_or_default(common.config.as_deref())?;
    let text = std::fs::read_to_string(scene_path).with_context(|| format!("reading {}", scene_path.display()))?;
    let spec: SceneSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", scene_path.display()))?;
    let geometry = cfg.geometry.build()?;
    let pattern = cfg.pattern.build()?;
    let corpus = cfg.corpus()?;
    let len = spec.num_samples();
    let mut takes = Takes::new();
    for s in &spec.sources {
        let take = corpus
            .takes
            .get(&s.take_id)
            .ok_or_else(|| anyhow!("take `{}` not in corpus", s.take_id))?;
        let mut t = take.clone();
        t.resize(len, 0.0);
        takes.insert(s.take_id.clone(), t);
    }
    let mut scene = render_scene(&spec, &geometry, &pattern, &takes)?;
    if let Some(snr) = spec.snr_db {
        scene = add_sensor_noise(scene, snr, spec.seed)?;
    }
    prepare_out(&common.out)?;
    let fs = spec.sample_rate_hz;
    write_wav(&common.out.join("mics.wav"), &scene.mic_signals, fs)?;
    write_mono(&common.out.join("target.wav"), &scene.vdm_target, fs)?;
    for (n, s) in scene.per_source_ref_direct.iter().enumerate() {
        write_mono(&common.out.join(format!("source-{n}.wav")), s, fs)?;
    }
    ctx.log(format!("{} sources, {len} samples", spec.sources.len()));
    manifest(&common.out, "simulate", &cfg, Some(spec.seed), json!({ "scene": spec }))?;
    Ok(format!("rendered {} channels to {}", scene.mic_signals.len(), common.out.display()))
}

fn design(ctx: &Ctx, common: &Common, floor: Option<f64>, grid: Option<f64>) -> Result<String> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(f) = floor {
        cfg.ls.wng_floor_db = f;
    }
    if let Some(g) = grid {
        cfg.ls.grid_deg = g;
    }
    let geometry = cfg.geometry.build()?;
    let pattern = cfg.pattern.build()?;
    let w = design_ls(&geometry, &pattern, &cfg.frame()?, &cfg.ls)?;
    prepare_out(&common.out)?;
    w.save(&common.out.join("weights.vdmw"))?;
    let meta = w.meta.as_ref().expect("designed weights carry metadata");
    let min_wng = meta.achieved_wng_db.iter().copied().fold(f64::INFINITY, f64::min);
    ctx.log(format!("loaded bins: {}", meta.loading.iter().filter(|&&l| l > 0.0).count()));
    manifest(
        &common.out,
        "design-ls",
        &cfg,
        None,
        json!({ "weights": "weights.vdmw", "min_wng_db": min_wng }),
    )?;
    Ok(format!("designed {} bins, min WNG {min_wng:.2} dB", w.bins()))
}

fn eval_context(cfg: &RunConfig, geometry: ArrayGeometry, pattern: DirectivityPattern) -> Result<EvalContext> {
    Ok(EvalContext {
        stft: Stft::new(cfg.frame()?)?,
        geometry,
        pattern,
    })
}

fn dataset_context(cfg: &RunConfig, data: &Path) -> Result<(DatasetManifest, EvalContext)> {
    let m = read_manifest(data)?;
    let ectx = eval_context(cfg, m.geometry.clone(), m.pattern.clone())?;
    Ok((m, ectx))
}

fn ls_weights(cfg: &RunConfig, ectx: &EvalContext, weights: Option<&Path>) -> Result<BeamformerWeights> {
    match weights {
        Some(p) => Ok(BeamformerWeights::load(p)?),
        None => Ok(design_ls(&ectx.geometry, &ectx.pattern, &ectx.stft.config(), &cfg.ls)?),
    }
}

fn baseline(ctx: &Ctx, kind: BaselineKind, common: &Common, data: &Path, weights: Option<&Path>) -> Result<String> {
    let cfg = RunConfig::load_or_default(common.config.as_deref())?;
    let (m, ectx) = dataset_context(&cfg, data)?;
    let system = match kind {
        BaselineKind::Parametric => System::Parametric,
        BaselineKind::Ls => System::Ls(ls_weights(&cfg, &ectx, weights)?),
    };
    let examples = load_split(data, Split::Test)?;
    ensure!(!examples.is_empty(), "dataset has no test examples");
    prepare_out(&common.out)?;
    let mut csv = String::from("index,n_sources,sdr_db\n");
    let mut total = 0.0;
    for ex in &examples {
        let est = estimate_signal(&system, &ectx, &ex.record.spec, &ex.scene)?;
        write_mono(
            &common.out.join(format!("{:05}.wav", ex.record.index)),
            &est,
            m.config.sample_rate_hz,
        )?;
        let s = scene_sdr(&system, &ectx, &ex.record.spec, &ex.scene)?;
        total += s;
        csv.push_str(&format!("{},{},{s:.6}\n", ex.record.index, ex.record.spec.sources.len()));
        ctx.log(format!("{:05}: {s:.2} dB", ex.record.index));
    }
    write_text(&common.out.join("sdr.csv"), &csv)?;
    manifest(
        &common.out,
        &format!("baseline {}", system.name()),
        &cfg,
        None,
        json!({ "data": data.file_name().map(|f| f.to_string_lossy().to_string()), "examples": examples.len() }),
    )?;
    Ok(format!(
        "{}: mean SDR {:.2} dB over {} examples",
        system.name(),
        total / examples.len() as f64,
        examples.len()
    ))
}

fn train_cmd(ctx: &Ctx, common: &Common, data: &Path, epochs: Option<usize>) -> Result<String> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    let seed = seed(common, &cfg)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let (m, ectx) = dataset_context(&cfg, data)?;
    let reference = ectx.geometry.reference_index;
    let load = |split| -> Result<Vec<TrainExample<f32>>> {
        load_split(data, split)?
            .iter()
            .map(|ex| Ok(dataset::train_example(&ex.scene, &ectx.stft, reference)?))
            .collect()
    };
    let train_set = load(Split::Train)?;
    let val_set = load(Split::Validation)?;
    ctx.log(format!("{} train / {} validation examples", train_set.len(), val_set.len()));
    let net_cfg = MaskNetConfig {
        q_channels: m.geometry.num_mics(),
        bins: ectx.stft.config().bins(),
        hidden_freq: cfg.network.hidden_freq,
        hidden_time: cfg.network.hidden_time,
        seed: derive_seed(seed, 0x6e6574, 0),
    };
    let net = MaskNet::<f32>::new(net_cfg)?;
    prepare_out(&common.out)?;
    let tc = TrainConfig {
        seed: derive_seed(seed, 0x747261696e, 0),
        checkpoint: None,
        ..cfg.train.clone()
    };
    let outcome = train(net, &train_set, &val_set, &ectx.stft, &tc, |r| {
        ctx.log(format!(
            "epoch {:3}: train {:.3} dB, validation {:.3} dB",
            r.epoch, -r.train_loss, -r.val_loss
        ))
    })?;
    save_checkpoint(&outcome.best, &common.out.join("best.vdmn"))?;
    write_history(&common.out.join("history.csv"), &outcome.history)?;
    let best_val = outcome.history[outcome.best_epoch - 1].val_loss;
    manifest(
        &common.out,
        "train",
        &cfg,
        Some(seed),
        json!({
            "network": net_cfg,
            "best_epoch": outcome.best_epoch,
            "best_val_loss": best_val,
            "checkpoint": "best.vdmn",
            "history": "history.csv",
        }),
    )?;
    Ok(format!(
        "best epoch {} of {}, validation tSDR {:.2} dB",
        outcome.best_epoch,
        outcome.history.len(),
        -best_val
    ))
}

fn infer(ctx: &Ctx, common: &Common, checkpoint: &Path, input: &Path) -> Result<String> {
    let cfg = RunConfig::load_or_default(common.config.as_deref())?;
    let net = load_checkpoint(checkpoint)?;
    let stft = Stft::new(cfg.frame()?)?;
    let (channels, fs) = read_wav(input)?;
    ensure!(
        fs == stft.config().sample_rate_hz,
        "{} is {fs} Hz, expected {} Hz",
        input.display(),
        stft.config().sample_rate_hz
    );
    ensure!(
        channels.len() == net.config().q_channels,
        "{} has {} channels, network expects {}",
        input.display(),
        channels.len(),
        net.config().q_channels
    );
    let specs = channels.iter().map(|c| stft.analyze(c)).collect::<vdm_core::Result<Vec<_>>>()?;
    let reference = cfg.geometry.reference_index;
    let mask = infer_mask(&net, &specs, reference)?;
    let mut est = stft.synthesize(&mask.apply(&specs[reference])?)?;
    est.truncate(channels[0].len());
    prepare_out(&common.out)?;
    write_mono(&common.out.join("estimate.wav"), &est, fs)?;
    ctx.log(format!("{} frames", specs[0].frames()));
    manifest(
        &common.out,
        "infer",
        &cfg,
        None,
        json!({ "input": input.file_name().map(|f| f.to_string_lossy().to_string()), "output": "estimate.wav" }),
    )?;
    Ok(format!("wrote {}", common.out.join("estimate.wav").display()))
}

fn build_system(cfg: &RunConfig, ectx: &EvalContext, args: &SystemArgs) -> Result<System> {
    Ok(match args.system {
        SystemKind::ReferenceMic => System::ReferenceMic,
        SystemKind::Parametric => System::Parametric,
        SystemKind::Ls => System::Ls(ls_weights(cfg, ectx, args.weights.as_deref())?),
        SystemKind::Neural => {
            let path = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| UsageError("--system neural needs --checkpoint".into()))?;
            System::Neural(load_checkpoint(path)?)
        }
    })
}

fn eval_sdr(ctx: &Ctx, common: &Common, args: &SystemArgs, data: &[PathBuf]) -> Result<String> {
    let cfg = RunConfig::load_or_default(common.config.as_deref())?;
    let (first, ectx) = dataset_context(&cfg, &data[0])?;
    let mut sets = BTreeMap::new();
    for d in data {
        let m = read_manifest(d)?;
        if m.geometry != first.geometry || m.pattern != first.pattern {
            bail!("{} uses a different geometry or pattern than {}", d.display(), data[0].display());
        }
        for ex in load_split(d, Split::Test)? {
            let n = ex.record.spec.sources.len();
            sets.entry(n).or_insert_with(Vec::new).push((ex.record.spec, ex.scene));
        }
    }
    let system = build_system(&cfg, &ectx, args)?;
    let rows = sdr_table(&system, &ectx, &sets)?;
    prepare_out(&common.out)?;
    write_text(&common.out.join("table.csv"), &table_csv(&rows))?;
    for r in &rows {
        ctx.log(format!("{:?}: {:.2} dB", r.n_test, r.mean_sdr_db));
    }
    manifest(
        &common.out,
        "eval sdr",
        &cfg,
        None,
        json!({ "system": system.name(), "scenes": sets.iter().map(|(n, v)| (n.to_string(), v.len())).collect::<BTreeMap<_, _>>() }),
    )?;
    let av = rows.last().expect("average row").mean_sdr_db;
    Ok(format!("{}: average SDR {:.2} dB", system.name(), report_db(av)))
}

fn probe_config(cfg: &RunConfig, seed: u64) -> ProbeConfig {
    ProbeConfig {
        duration_s: cfg.eval.duration_s,
        loudness_lufs: cfg.eval.loudness_lufs,
        snr_db: cfg.eval.snr_db,
        distance_m: cfg.dataset.source_distance_m,
        trials: cfg.eval.trials,
        seed,
        min_sep_deg: cfg.dataset.min_sep_deg,
    }
}

fn grid(step: f64) -> Result<Vec<f64>> {
    let m = 360.0 / step;
    if step.is_nan() || step <= 0.0 || (m - m.round()).abs() > 1e-9 {
        return Err(UsageError(format!("step {step} does not divide 360")).into());
    }
    Ok((0..m.round() as usize).map(|k| k as f64 * step).collect())
}

fn eval_pattern(ctx: &Ctx, common: &Common, args: &SystemArgs) -> Result<String> {
    let cfg = RunConfig::load_or_default(common.config.as_deref())?;
    let seed = seed(common, &cfg)?;
    let ectx = eval_context(&cfg, cfg.geometry.build()?, cfg.pattern.build()?)?;
    let system = build_system(&cfg, &ectx, args)?;
    let corpus = cfg.corpus()?;
    let doas = grid(cfg.eval.pattern_step_deg)?;
    let est = probe_pattern(&system, &ectx, &corpus, &doas, &probe_config(&cfg, seed))?;
    prepare_out(&common.out)?;
    write_text(&common.out.join("polar.csv"), &polar_csv(&estimate_polar(&est)))?;
    write_text(
        &common.out.join("target_polar.csv"),
        &polar_csv(&pattern_polar(&ectx.pattern, cfg.eval.pattern_step_deg)?),
    )?;
    ctx.log(format!("{} DOAs x {} trials", doas.len(), cfg.eval.trials));
    manifest(&common.out, "eval pattern", &cfg, Some(seed), json!({ "system": system.name() }))?;
    let look = est.gain_at(ectx.pattern.steer_deg).unwrap_or(f64::NAN);
    Ok(format!("{}: look-direction gain {:.2} dB", system.name(), 20.0 * look.log10()))
}

fn eval_heatmap(ctx: &Ctx, common: &Common, args: &SystemArgs) -> Result<String> {
    let cfg = RunConfig::load_or_default(common.config.as_deref())?;
    let seed = seed(common, &cfg)?;
    let ectx = eval_context(&cfg, cfg.geometry.build()?, cfg.pattern.build()?)?;
    let system = build_system(&cfg, &ectx, args)?;
    let corpus = cfg.corpus()?;
    let g = grid(cfg.eval.heatmap_step_deg)?;
    let h = sdr_heatmap(&system, &ectx, &corpus, &g, &probe_config(&cfg, seed), consecutive_takes)?;
    prepare_out(&common.out)?;
    write_text(&common.out.join("heatmap.csv"), &heatmap_csv(&h))?;
    ctx.log(format!("{} x {} cells", g.len(), g.len()));
    manifest(&common.out, "eval heatmap", &cfg, Some(seed), json!({ "system": system.name() }))?;
    Ok(format!("{}: {}x{} heatmap", system.name(), g.len(), g.len()))
}
