//! The `crds` command line: argument structs, option resolution and one
//! function per subcommand. Every command returns a JSON summary.

mod inspect;
mod viz;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use inspect::{binarized_residual, codec_motion_field, inspect_mv, MvInspection};
pub use viz::{draw_motion, gray_png, histogram_png, Canvas};

use crate::error::{Error, Result};
use crate::media_io::{delta_metrics_on, load_clip, psnr, save_clip, to_frames, write_atomic, MetricPlane, RawClip};
use crate::noise_model::uniformity_stats;
use crate::pdis_net::crds_forward;
use crate::synth::SynthConfig;
use crate::toy_codec::{encode_clip, noise_samples, CodecConfig, CodecMetadata};
use crate::train_harness::{
    build_model, evaluate_model_on, pretrain_autoencoder, stage_psnr, train, AutoencoderJob, CheckpointState, Dataset,
    TrainConfig, TrainOptions, CHECKPOINT_DIR, LOSS_TRACE, SEED_ENV,
};

#[derive(Debug, Parser)]
#[command(name = "crds", version, about = "Toy codec and compressed-video enhancement")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a raw clip; writes the decoded clip and codec metadata.
    Codec(CodecArgs),
    /// Build a paired GT/LQ dataset from synthetic or existing clips.
    MakeDataset(MakeDatasetArgs),
    /// Quantization-noise statistics and histogram from codec metadata.
    NoiseStats(NoiseStatsArgs),
    /// Pretrain the latent autoencoder.
    Pretrain(PretrainArgs),
    /// Train the enhancement network.
    Train(TrainArgs),
    /// Enhance a compressed clip.
    Enhance(EnhanceArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare codec motion vectors with attention motion.
    InspectMv(InspectArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Codec(_) => "codec",
            Command::MakeDataset(_) => "make-dataset",
            Command::NoiseStats(_) => "noise-stats",
            Command::Pretrain(_) => "pretrain",
            Command::Train(_) => "train",
            Command::Enhance(_) => "enhance",
            Command::Eval(_) => "eval",
            Command::InspectMv(_) => "inspect-mv",
        }
    }
}

/// Flags every command accepts.
#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// JSON file of option values; command-line flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

macro_rules! flags {
    ($(#[$m:meta])* pub struct $name:ident { $($(#[$fm:meta])* $f:ident : $t:ty,)* }) => {
        $(#[$m])*
        #[derive(Debug, Args, Serialize)]
        pub struct $name {
            #[command(flatten)]
            #[serde(flatten)]
            pub common: Common,
            $(
                $(#[$fm])*
                #[arg(long)]
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $f: Option<$t>,
            )*
        }
    };
}

flags! {
    pub struct CodecArgs {
        /// Raw clip to encode.
        input: PathBuf,
        qp: u32,
        block: usize,
        /// Motion search range in pixels.
        range: usize,
    }
}

flags! {
    pub struct MakeDatasetArgs {
        /// Directory of GT clips; synthetic clips when absent.
        src: PathBuf,
        clips: usize,
        frames: usize,
        height: usize,
        width: usize,
        seed: u64,
        qp: u32,
        /// Per-frame noise std of synthetic clips, in 8-bit steps.
        grain: f64,
        /// Texture amplitude of synthetic clips, in 8-bit steps.
        texture: f64,
    }
}

flags! {
    pub struct NoiseStatsArgs {
        /// Codec metadata (`meta.json`).
        meta: PathBuf,
        bins: usize,
    }
}

flags! {
    pub struct PretrainArgs {
        dataset: PathBuf,
        /// Network size preset: desk, tiny or full.
        preset: String,
        iters: usize,
        batch: usize,
        lr: f64,
        seed: u64,
        patch: usize,
        patches_per_clip: usize,
    }
}

flags! {
    pub struct TrainArgs {
        dataset: PathBuf,
        /// Pretrained autoencoder checkpoint directory.
        ldrae: PathBuf,
        preset: String,
        /// Total iterations; the stage boundaries are rescaled to match.
        iters: usize,
        lr: f64,
        batch: usize,
        seed: u64,
        lambda_i: f64,
        /// Attention window size (odd).
        window: usize,
        /// Stop after this many iterations.
        stop_at: usize,
        /// Checkpoint directory to resume from.
        resume: PathBuf,
    }
}

flags! {
    pub struct EnhanceArgs {
        /// Compressed clip.
        input: PathBuf,
        /// Training checkpoint; a fresh (identity) network when absent.
        ckpt: PathBuf,
        preset: String,
        /// Ground truth, for reporting metrics.
        gt: PathBuf,
        /// Metric samples: luma or all.
        plane: String,
    }
}

flags! {
    pub struct EvalArgs {
        dataset: PathBuf,
        ckpt: PathBuf,
        preset: String,
        /// Also report per-stage PSNR.
        stages: bool,
        /// Metric samples: luma or all.
        plane: String,
    }
}

flags! {
    pub struct InspectArgs {
        /// Clip to inspect: ground truth, or the codec output when `--meta` is given.
        clip: PathBuf,
        ckpt: PathBuf,
        /// Codec metadata of `--clip`.
        meta: PathBuf,
        preset: String,
        frame: usize,
        qp: u32,
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CodecOpts {
    out: Option<PathBuf>,
    input: Option<PathBuf>,
    qp: u32,
    block: usize,
    range: usize,
}

impl Default for CodecOpts {
    fn default() -> Self {
        let c = CodecConfig::default();
        CodecOpts {
            out: None,
            input: None,
            qp: c.qp,
            block: c.block,
            range: c.search_range,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MakeDatasetOpts {
    out: Option<PathBuf>,
    src: Option<PathBuf>,
    clips: usize,
    frames: usize,
    height: usize,
    width: usize,
    seed: u64,
    qp: u32,
    grain: f64,
    texture: f64,
}

impl Default for MakeDatasetOpts {
    fn default() -> Self {
        let s = SynthConfig::default();
        MakeDatasetOpts {
            out: None,
            src: None,
            clips: 8,
            frames: s.frames,
            height: s.height,
            width: s.width,
            seed: 0,
            qp: CodecConfig::default().qp,
            grain: s.grain,
            texture: s.texture,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct NoiseStatsOpts {
    out: Option<PathBuf>,
    meta: Option<PathBuf>,
    bins: usize,
}

impl Default for NoiseStatsOpts {
    fn default() -> Self {
        NoiseStatsOpts {
            out: None,
            meta: None,
            bins: 48,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PretrainOpts {
    out: Option<PathBuf>,
    dataset: Option<PathBuf>,
    preset: String,
    iters: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    patch: Option<usize>,
    patches_per_clip: Option<usize>,
    /// Full job description; the flags above override its fields.
    job: Option<Value>,
}

impl Default for PretrainOpts {
    fn default() -> Self {
        PretrainOpts {
            out: None,
            dataset: None,
            preset: "tiny".into(),
            iters: None,
            batch: None,
            lr: None,
            seed: None,
            patch: None,
            patches_per_clip: None,
            job: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainOpts {
    out: Option<PathBuf>,
    dataset: Option<PathBuf>,
    ldrae: Option<PathBuf>,
    preset: String,
    iters: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
    seed: Option<u64>,
    lambda_i: Option<f64>,
    window: Option<usize>,
    stop_at: Option<usize>,
    resume: Option<PathBuf>,
    /// Training configuration; the flags above override its fields.
    train: Option<Value>,
}

impl Default for TrainOpts {
    fn default() -> Self {
        TrainOpts {
            out: None,
            dataset: None,
            ldrae: None,
            preset: "tiny".into(),
            iters: None,
            lr: None,
            batch: None,
            seed: None,
            lambda_i: None,
            window: None,
            stop_at: None,
            resume: None,
            train: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EnhanceOpts {
    out: Option<PathBuf>,
    input: Option<PathBuf>,
    ckpt: Option<PathBuf>,
    preset: String,
    gt: Option<PathBuf>,
    plane: MetricPlane,
}

impl Default for EnhanceOpts {
    fn default() -> Self {
        EnhanceOpts {
            out: None,
            input: None,
            ckpt: None,
            preset: "tiny".into(),
            gt: None,
            plane: MetricPlane::Luma,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalOpts {
    out: Option<PathBuf>,
    dataset: Option<PathBuf>,
    ckpt: Option<PathBuf>,
    preset: String,
    stages: bool,
    plane: MetricPlane,
}

impl Default for EvalOpts {
    fn default() -> Self {
        EvalOpts {
            out: None,
            dataset: None,
            ckpt: None,
            preset: "tiny".into(),
            stages: true,
            plane: MetricPlane::Luma,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InspectOpts {
    out: Option<PathBuf>,
    clip: Option<PathBuf>,
    ckpt: Option<PathBuf>,
    meta: Option<PathBuf>,
    preset: String,
    frame: usize,
    qp: u32,
}

impl Default for InspectOpts {
    fn default() -> Self {
        InspectOpts {
            out: None,
            clip: None,
            ckpt: None,
            meta: None,
            preset: "tiny".into(),
            frame: 1,
            qp: CodecConfig::default().qp,
        }
    }
}

/// Overlay `top` onto `base`, recursing into objects.
fn merge_json(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Flag > config file > default.
fn resolve<T: DeserializeOwned>(config: Option<&Path>, flags: &impl Serialize) -> Result<T> {
    let mut v = match config {
        Some(p) => read_json(p)?,
        None => json!({}),
    };
    if !v.is_object() {
        return Err(Error::InvalidInput("config file must hold a JSON object".into()));
    }
    merge_json(&mut v, serde_json::to_value(flags)?);
    serde_json::from_value(v).map_err(|e| Error::InvalidInput(format!("options: {e}")))
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("--{flag} is required")))
}

fn prepare_out(out: &Option<PathBuf>, command: &str, opts: &impl Serialize) -> Result<PathBuf> {
    let dir = required(out, "out")?.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let snapshot = json!({ "command": command, "options": opts });
    write_atomic(
        &dir.join("cli_config.json"),
        serde_json::to_string_pretty(&snapshot)?.as_bytes(),
    )?;
    Ok(dir)
}

fn mean_psnr(a: &RawClip, b: &RawClip) -> Result<f64> {
    let (fa, fb) = (to_frames(a), to_frames(b));
    let mut sum = 0.0;
    for (x, y) in fa.iter().zip(&fb) {
        sum += psnr(x, y)?;
    }
    Ok(sum / fa.len().max(1) as f64)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Run one parsed command.
pub fn run(cli: &Cli) -> Result<Value> {
    match &cli.command {
        Command::Codec(a) => codec(resolve(a.common.config.as_deref(), a)?),
        Command::MakeDataset(a) => make_dataset(resolve(a.common.config.as_deref(), a)?),
        Command::NoiseStats(a) => noise_stats(resolve(a.common.config.as_deref(), a)?),
        Command::Pretrain(a) => pretrain_cmd(resolve(a.common.config.as_deref(), a)?),
        Command::Train(a) => train_cmd(resolve(a.common.config.as_deref(), a)?, a.seed.is_some()),
        Command::Enhance(a) => enhance(resolve(a.common.config.as_deref(), a)?),
        Command::Eval(a) => eval_cmd(resolve(a.common.config.as_deref(), a)?),
        Command::InspectMv(a) => inspect_cmd(resolve(a.common.config.as_deref(), a)?),
    }
}

fn codec(o: CodecOpts) -> Result<Value> {
    let cfg = CodecConfig {
        block: o.block,
        search_range: o.range,
        qp: o.qp,
        ..Default::default()
    };
    let input = required(&o.input, "input")?.clone();
    let out = prepare_out(&o.out, "codec", &o)?;
    let clip = load_clip(&input)?;
    let (lq, meta) = encode_clip(&clip, &cfg)?;
    let lq_path = out.join("lq.craw");
    save_clip(&lq, &lq_path)?;
    let meta_path = out.join("meta.json");
    meta.save(&meta_path)?;
    let inter = meta
        .frames
        .iter()
        .flat_map(|f| &f.motions)
        .filter(|m| m.mode == crate::toy_codec::PredMode::Inter)
        .count();
    Ok(json!({
        "frames": lq.frame_count(),
        "qp": cfg.qp,
        "qstep": meta.qstep,
        "psnr": mean_psnr(&lq, &clip)?,
        "inter_blocks": inter,
        "lq": path_str(&lq_path),
        "meta": path_str(&meta_path),
    }))
}

fn make_dataset(o: MakeDatasetOpts) -> Result<Value> {
    let codec = CodecConfig {
        qp: o.qp,
        ..Default::default()
    };
    let out = prepare_out(&o.out, "make-dataset", &o)?;
    let ds = match &o.src {
        Some(src) => Dataset::from_dir(src, codec)?,
        None => {
            let synth = SynthConfig {
                height: o.height,
                width: o.width,
                frames: o.frames,
                grain: o.grain,
                texture: o.texture,
                ..Default::default()
            };
            Dataset::synthesize(o.clips, &synth, codec, o.seed)?
        }
    };
    ds.save(&out)?;
    let mut psnr_sum = 0.0;
    for c in &ds.clips {
        psnr_sum += mean_psnr(&c.lq, &c.gt)?;
    }
    Ok(json!({
        "clips": ds.len(),
        "qp": codec.qp,
        "lq_psnr": psnr_sum / ds.len().max(1) as f64,
        "manifest": path_str(&out.join("manifest.json")),
    }))
}

fn noise_stats(o: NoiseStatsOpts) -> Result<Value> {
    let meta_path = required(&o.meta, "meta")?.clone();
    let out = prepare_out(&o.out, "noise-stats", &o)?;
    let meta = CodecMetadata::load(&meta_path)?;
    let samples = noise_samples(&meta)?;
    let stats = uniformity_stats(&samples, meta.qstep)?;
    let half = 0.75 * meta.qstep;
    let hist = out.join("noise_histogram.png");
    histogram_png(&hist, &samples, -half, half, o.bins)?;
    write_atomic(
        &out.join("noise_stats.json"),
        serde_json::to_string_pretty(&stats)?.as_bytes(),
    )?;
    let mut v = serde_json::to_value(&stats)?;
    v["histogram"] = json!(path_str(&hist));
    Ok(v)
}

fn pretrain_cmd(o: PretrainOpts) -> Result<Value> {
    let dataset = required(&o.dataset, "dataset")?.clone();
    let preset = TrainConfig::preset(&o.preset)?;
    let mut job = serde_json::to_value(AutoencoderJob {
        model: preset.model.ldrae,
        stages: preset.model.stages,
        ..Default::default()
    })?;
    if let Some(j) = &o.job {
        merge_json(&mut job, j.clone());
    }
    let mut job: AutoencoderJob = serde_json::from_value(job).map_err(|e| Error::InvalidInput(format!("job: {e}")))?;
    if let Some(v) = o.iters {
        job.train.iters = v;
    }
    if let Some(v) = o.batch {
        job.train.batch = v;
    }
    if let Some(v) = o.lr {
        job.train.lr = v;
    }
    if let Some(v) = o.seed {
        job.train.seed = v;
    }
    if let Some(v) = o.patch {
        job.patch = v;
    }
    if let Some(v) = o.patches_per_clip {
        job.patches_per_clip = v;
    }
    let out = prepare_out(&o.out, "pretrain", &o)?;
    write_atomic(&out.join("job.json"), serde_json::to_string_pretty(&job)?.as_bytes())?;
    let ds = Dataset::load(&dataset)?;
    let (ckpt, report) = pretrain_autoencoder(&ds, &job)?;
    let dir = out.join(CHECKPOINT_DIR);
    ckpt.save(&dir)?;
    let trace: String = std::iter::once("iter_block,loss\n".to_string())
        .chain(report.loss_trace.iter().enumerate().map(|(i, l)| format!("{i},{l}\n")))
        .collect();
    write_atomic(&out.join("pretrain_loss.csv"), trace.as_bytes())?;
    Ok(json!({
        "iters": job.train.iters,
        "eval_loss": report.eval_loss,
        "zero_baseline": report.zero_baseline,
        "checkpoint": path_str(&dir),
    }))
}

/// Scale the stage boundaries of `cfg` to a new iteration count.
pub fn rescale_iters(cfg: &mut TrainConfig, total: usize) {
    let old = cfg.total_iters.max(1) as f64;
    let f = |v: usize| ((v as f64) * total as f64 / old).round() as usize;
    cfg.interm_iters = f(cfg.interm_iters);
    cfg.encoder_freeze_iters = f(cfg.encoder_freeze_iters);
    cfg.flow_freeze_iters = f(cfg.flow_freeze_iters);
    cfg.checkpoint_every = f(cfg.checkpoint_every).max(1);
    cfg.log_every = f(cfg.log_every).max(1);
    cfg.total_iters = total;
}

fn train_config(o: &TrainOpts, seed_flag: bool) -> Result<TrainConfig> {
    let mut v = serde_json::to_value(TrainConfig::preset(&o.preset)?)?;
    if let Some(t) = &o.train {
        merge_json(&mut v, t.clone());
    }
    let mut cfg: TrainConfig = serde_json::from_value(v).map_err(|e| Error::InvalidInput(format!("train: {e}")))?;
    if let Some(n) = o.iters {
        rescale_iters(&mut cfg, n);
    }
    if let Some(v) = o.lr {
        cfg.lr_main = v;
    }
    if let Some(v) = o.batch {
        cfg.batch = v;
    }
    if let Some(v) = o.lambda_i {
        cfg.lambda_i = v;
    }
    if let Some(v) = o.window {
        cfg.model.muna.window = v;
    }
    // A seed flag beats the environment, which beats the config file.
    match (seed_flag, o.seed) {
        (true, Some(s)) => cfg.seed = s,
        _ => {
            if let Some(s) = o.seed {
                cfg.seed = s;
            }
            cfg.apply_seed_env()?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(o: TrainOpts, seed_flag: bool) -> Result<Value> {
    let dataset = required(&o.dataset, "dataset")?.clone();
    let cfg = train_config(&o, seed_flag)?;
    let ldrae = match (&o.ldrae, &o.resume) {
        (Some(p), _) => Some(crate::nn::Checkpoint::load(p)?),
        (None, Some(_)) => None,
        (None, None) => return Err(Error::InvalidInput("--ldrae is required unless resuming".into())),
    };
    let out = prepare_out(&o.out, "train", &o)?;
    let ds = Dataset::load(&dataset)?;
    let opts = TrainOptions {
        out_dir: Some(out.clone()),
        stop_at: o.stop_at,
        resume: o.resume.clone(),
    };
    let state = train(&ds, ldrae.as_ref(), &cfg, &opts)?;
    let last = state.loss_history.last();
    Ok(json!({
        "iterations": state.iteration,
        "total_iters": cfg.total_iters,
        "seed": cfg.seed,
        "config_hash": state.config_hash,
        "final_l_m": last.map(|r| r.l_m),
        "checkpoint": path_str(&out.join(CHECKPOINT_DIR)),
        "loss_trace": path_str(&out.join(LOSS_TRACE)),
        "env_seed_var": SEED_ENV,
    }))
}

fn load_model(ckpt: &Option<PathBuf>, preset: &str) -> Result<(crate::pdis_net::Crds, crate::nn::ParamStore)> {
    match ckpt {
        Some(p) => CheckpointState::load(p)?.model(),
        None => {
            log::warn!("no checkpoint given; using a freshly initialised network");
            build_model(&TrainConfig::preset(preset)?)
        }
    }
}

fn enhance(o: EnhanceOpts) -> Result<Value> {
    let input = required(&o.input, "input")?.clone();
    let out = prepare_out(&o.out, "enhance", &o)?;
    let (model, store) = load_model(&o.ckpt, &o.preset)?;
    let lq = load_clip(&input)?;
    let (enhanced, _) = crds_forward(&store, &model, &lq, false)?;
    let path = out.join("enhanced.craw");
    save_clip(&enhanced, &path)?;
    let mut v = json!({
        "frames": enhanced.frame_count(),
        "output": path_str(&path),
        "checkpoint": o.ckpt.as_deref().map(path_str),
    });
    if let Some(gt) = &o.gt {
        let r = delta_metrics_on(&enhanced, &lq, &load_clip(gt)?, o.plane)?;
        v["delta_psnr"] = json!(r.delta_psnr);
        v["delta_ssim"] = json!(r.delta_ssim);
    }
    Ok(v)
}

fn eval_cmd(o: EvalOpts) -> Result<Value> {
    let dataset = required(&o.dataset, "dataset")?.clone();
    let out = prepare_out(&o.out, "eval", &o)?;
    let (model, store) = load_model(&o.ckpt, &o.preset)?;
    let ds = Dataset::load(&dataset)?;
    let ev = evaluate_model_on(&store, &model, &ds, Some(&out), o.plane)?;
    let mut v = json!({
        "clips": ev.clips.len(),
        "delta_psnr": ev.pooled.delta_psnr,
        "delta_ssim": ev.pooled.delta_ssim,
        "psnr": ev.pooled.mean_psnr(),
        "psnr_compressed": ev.pooled.mean_psnr_compressed(),
        "metrics": path_str(&out.join("metrics.json")),
    });
    if o.stages {
        let sp = stage_psnr(&store, &model, &ds)?;
        write_atomic(
            &out.join("stage_psnr.json"),
            serde_json::to_string_pretty(&sp)?.as_bytes(),
        )?;
        v["stage_psnr"] = json!(sp);
    }
    Ok(v)
}

fn inspect_cmd(o: InspectOpts) -> Result<Value> {
    let clip_path = required(&o.clip, "clip")?.clone();
    let out = prepare_out(&o.out, "inspect-mv", &o)?;
    let (model, store) = load_model(&o.ckpt, &o.preset)?;
    let clip = load_clip(&clip_path)?;
    let (lq, meta) = match &o.meta {
        Some(m) => (clip, CodecMetadata::load(m)?),
        None => encode_clip(
            &clip,
            &CodecConfig {
                qp: o.qp,
                ..Default::default()
            },
        )?,
    };
    let r = inspect_mv(&store, &model, &lq, &meta, o.frame, Some(&out))?;
    Ok(serde_json::to_value(r)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_config_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"qp": 30, "block": 4}"#).unwrap();
        let cli = Cli::try_parse_from(["crds", "codec", "--config", cfg.to_str().unwrap(), "--qp", "40"]).unwrap();
        let Command::Codec(a) = &cli.command else { panic!() };
        let o: CodecOpts = resolve(a.common.config.as_deref(), a).unwrap();
        assert_eq!((o.qp, o.block, o.range), (40, 4, 8));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"qpp": 30}"#).unwrap();
        let cli = Cli::try_parse_from(["crds", "codec", "--config", cfg.to_str().unwrap()]).unwrap();
        let Command::Codec(a) = &cli.command else { panic!() };
        let e = resolve::<CodecOpts>(a.common.config.as_deref(), a).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn nested_train_config_merges() {
        let o = TrainOpts {
            train: Some(json!({"model": {"muna": {"heads": 2}}, "lambda_i": 0.5})),
            window: Some(1),
            ..Default::default()
        };
        let cfg = train_config(&o, false).unwrap();
        assert_eq!(cfg.model.muna.heads, 2);
        assert_eq!(cfg.model.muna.window, 1);
        assert_eq!(cfg.lambda_i, 0.5);
        assert_eq!(cfg.model.ldrae, TrainConfig::tiny().model.ldrae);
    }

    #[test]
    fn iteration_rescale_keeps_proportions() {
        let mut c = TrainConfig::tiny();
        rescale_iters(&mut c, 600);
        assert_eq!((c.total_iters, c.interm_iters, c.encoder_freeze_iters), (600, 300, 40));
        assert!(c.validate().is_ok());
    }
}
