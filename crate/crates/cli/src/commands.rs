use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use hairshift_core::checkpoint::{load_generator, save_generator};
use hairshift_core::data_synth::{build_hair_bank, generate_portrait_video_sized, PortraitSpec, PortraitVideo};
use hairshift_core::frame::HairMask;
use hairshift_core::metrics::{amortized_cost, evaluate, CostModel, EvalVideo, IdentityEmbedder};
use hairshift_core::model::Generator;
use hairshift_core::pipeline::{run_inference, PipelineConfig, Reference};
use hairshift_core::training::trainer::TrainSinks;
use hairshift_core::training::{run_ablation, train, TrainConfig, TrainingData};
use hairshift_core::video_io::{frame_path, hair_path, load_video, save_video, VideoManifest, VideoReader};

/// Invalid configuration or arguments (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "hairshift", version, about = "Anchor-guided video hair transfer on synthetic portraits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic portrait videos and reference hairstyles.
    Synth(SynthArgs),
    /// Train the animation network (warm-up, then decoupling).
    Train(TrainArgs),
    /// Transfer a reference hairstyle onto a driving video.
    Infer(InferArgs),
    /// Score a generated video against its driving video.
    Eval(EvalArgs),
    /// Train and evaluate one ablation setting.
    Ablate(AblateArgs),
    /// Print the amortised per-frame cost table.
    Cost(CostArgs),
}

#[derive(Args, Debug)]
pub struct Overrides {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Driving video directory.
    #[arg(long)]
    pub video: PathBuf,
    /// Single-frame directory holding the reference hairstyle.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print peak resident memory when done.
    #[arg(long)]
    pub report_memory: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub driving: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    pub setting: u8,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Held-out samples to evaluate.
    #[arg(long, default_value_t = 200)]
    pub eval_samples: usize,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct CostArgs {
    #[arg(long, num_args = 1.., default_values_t = vec![1u64, 10, 100, 1000])]
    pub frames: Vec<u64>,
    #[arg(long, default_value_t = 2)]
    pub precision: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Cost(a) => cost(a),
    }
}

fn read_config(path: &Option<PathBuf>) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).map_err(|e| config_err(format!("cannot read config {}: {e}", p.display()))),
        None => Ok(String::new()),
    }
}

fn split_kv(kv: &str) -> Result<(&str, &str)> {
    kv.split_once('=').ok_or_else(|| config_err(format!("override {kv:?} is not key=value")))
}

fn as_config(e: hairshift_core::error::Error) -> anyhow::Error {
    config_err(e.to_string())
}

/// Dataset generation settings.
#[derive(Clone, Debug)]
struct SynthConfig {
    seed: u64,
    videos: usize,
    frames: usize,
    size: usize,
    references: usize,
}

impl SynthConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let num = |k: &str| v.parse::<u64>().map_err(|_| config_err(format!("{k}: cannot parse {v:?}")));
        match key.trim() {
            "seed" => self.seed = num("seed")?,
            "videos" => self.videos = num("videos")? as usize,
            "frames" => self.frames = num("frames")? as usize,
            "size" => self.size = num("size")? as usize,
            "references" => self.references = num("references")? as usize,
            other => bail!(ConfigError(format!("unknown synth key {other:?}"))),
        }
        Ok(())
    }
}

fn apply_lines(text: &str, mut set: impl FnMut(&str, &str) -> Result<()>) -> Result<()> {
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| config_err(format!("config line {}: expected key = value", n + 1)))?;
        set(k, v)?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut c = SynthConfig { seed: 0, videos: 4, frames: 16, size: 64, references: 8 };
    apply_lines(&read_config(&a.overrides.config)?, |k, v| c.set(k, v))?;
    for kv in &a.overrides.set {
        let (k, v) = split_kv(kv)?;
        c.set(k, v)?;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if c.videos == 0 || c.frames == 0 || c.size < 8 || c.size % 8 != 0 {
        bail!(ConfigError("videos and frames must be positive and size a multiple of 8 (at least 8)".into()));
    }
    for i in 0..c.videos {
        let spec = PortraitSpec::random(c.seed.wrapping_mul(1_000_003).wrapping_add(i as u64), c.frames);
        let v = generate_portrait_video_sized(&spec, c.frames, c.size)?;
        save_video(&a.out.join("videos").join(format!("video_{i:03}")), &v)?;
    }
    let bank = build_hair_bank(c.seed ^ 0x5eed, c.size);
    let step = (bank.len() / c.references.max(1)).max(1);
    for (j, e) in bank.iter().step_by(step).take(c.references).enumerate() {
        let spec = PortraitSpec {
            identity_seed: 0,
            hair_color: e.style.color,
            hair_shape_id: e.style.shape_id,
            face_color: [0.8, 0.6, 0.5],
            pose_trajectory: vec![e.pose],
            background_pattern_id: 0,
        };
        let v = PortraitVideo {
            frames: vec![e.frame.clone()],
            hair_masks: vec![e.hair_mask.clone()],
            face_masks: vec![e.face_mask.clone()],
            poses: vec![e.pose],
            spec,
        };
        save_video(&a.out.join("references").join(format!("ref_{j:03}")), &v)?;
    }
    info!("wrote {} videos and {} references to {}", c.videos, c.references.min(bank.len()), a.out.display());
    Ok(())
}

fn train_config(o: &Overrides, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    cfg.apply_text(&read_config(&o.config)?).map_err(as_config)?;
    for kv in &o.set {
        let (k, v) = split_kv(kv)?;
        cfg.set(k, v).map_err(as_config)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(as_config)?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a.overrides, a.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("config.txt"), cfg.to_text())?;
    let data = TrainingData::generate(cfg.seed, cfg.num_videos, cfg.video_length, cfg.image_size)?;
    let mut csv = std::io::BufWriter::new(fs::File::create(a.out.join("loss.csv"))?);
    let mut sinks = TrainSinks { loss_csv: Some(&mut csv), checkpoint_dir: Some(a.out.clone()) };
    let (_, reports) = train(&cfg, &data, &mut sinks)?;
    csv.flush()?;
    if let Some(r) = reports.last() {
        println!("trained {} steps; final total loss {:.5}", reports.len(), r.total);
    }
    println!("checkpoint {}", a.out.join("final.ckpt").display());
    Ok(())
}

fn load_reference(dir: &Path) -> Result<Reference> {
    let reader = VideoReader::open(dir).with_context(|| format!("reading reference {}", dir.display()))?;
    let rec = reader.read_frame(0)?;
    let (h, w) = rec.frame.dims();
    Ok(Reference {
        hair_mask: rec.hair_mask.clone().with_context(|| format!("reference {} has no hair mask", dir.display()))?,
        face_mask: rec.face_mask.clone().unwrap_or_else(|| HairMask::zeros(h, w)),
        pose: rec.pose,
        frame: rec.frame,
    })
}

/// Peak resident set size in KiB, from `/proc/self/status`.
pub fn peak_rss_kib() -> Option<u64> {
    let s = fs::read_to_string("/proc/self/status").ok()?;
    let line = s.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn infer(a: InferArgs) -> Result<()> {
    let mut cfg = PipelineConfig::default();
    cfg.apply_text(&read_config(&a.overrides.config)?).map_err(as_config)?;
    for kv in &a.overrides.set {
        let (k, v) = split_kv(kv)?;
        cfg.set(k, v).map_err(as_config)?;
    }
    if let Some(c) = &a.checkpoint {
        cfg.checkpoint = c.clone();
    }
    if let Some(o) = &a.out {
        cfg.output_dir = o.clone();
    }
    if cfg.checkpoint.as_os_str().is_empty() {
        bail!(ConfigError("no checkpoint given (--checkpoint or checkpoint = ...)".into()));
    }
    if !cfg.checkpoint.is_file() {
        bail!("checkpoint {} does not exist", cfg.checkpoint.display());
    }
    let mut model: Generator<f32> = load_generator(&cfg.checkpoint)?;
    cfg.configure(&mut model);
    let reference = load_reference(&a.reference)?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = VideoReader::open(&a.video)?.manifest().clone();
    let n = run_inference(&model, &a.video, &reference, &cfg, |t, f| {
        f.frame.save_png(&frame_path(&out, t))?;
        f.hair_mask.save_png(&hair_path(&out, t))?;
        Ok(())
    })?;
    VideoManifest { len: n, height: manifest.height, width: manifest.width, spec: None, poses: manifest.poses.clone() }.write(&out)?;
    println!("generated {n} frames in {}", out.display());
    if a.report_memory {
        match peak_rss_kib() {
            Some(k) => println!("peak_rss_kib {k}"),
            None => println!("peak_rss_kib unavailable"),
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let driving = load_video(&a.driving)?;
    let reader = VideoReader::open(&a.generated)?;
    let generated = reader.map(|r| r.map(|r| r.frame)).collect::<hairshift_core::error::Result<Vec<_>>>()?;
    if generated.len() != driving.len() {
        bail!("generated video has {} frames, driving has {}", generated.len(), driving.len());
    }
    let nonhair: Vec<HairMask> = driving.hair_masks.iter().map(HairMask::complement).collect();
    let fg: Vec<HairMask> = driving.hair_masks.iter().zip(&driving.face_masks).map(|(h, f)| h.union(f)).collect();
    let embedder = IdentityEmbedder::bundled()?;
    let report = evaluate(
        &[EvalVideo { name: a.generated.display().to_string(), generated: &generated, driving: &driving.frames, nonhair: &nonhair, foreground: &fg }],
        &embedder,
    )?;
    print!("{}", report.table());
    if let Some(p) = &a.json {
        fs::write(p, report.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = train_config(&a.overrides, a.seed)?;
    let data = TrainingData::generate(cfg.seed, cfg.num_videos, cfg.video_length, cfg.image_size)?;
    let held_out = TrainingData::generate(cfg.seed ^ 0xdead_beef, cfg.num_videos.min(16), cfg.video_length, cfg.image_size)?;
    let outcome = run_ablation(a.setting, &cfg, &data, &held_out, a.eval_samples)?;
    fs::create_dir_all(&a.out)?;
    save_generator(&a.out.join(format!("setting_{}.ckpt", a.setting)), &outcome.model)?;
    let json = serde_json::to_string_pretty(&outcome.stats)?;
    fs::write(a.out.join(format!("setting_{}.json", a.setting)), &json)?;
    println!("{json}");
    Ok(())
}

fn cost(a: CostArgs) -> Result<()> {
    let m = CostModel::default();
    println!("{:>10}  {:>16}", "frames", "tflops_per_frame");
    for n in &a.frames {
        let c = amortized_cost(*n, &m).map_err(as_config)?;
        println!("{:>10}  {:>16.*}", n, a.precision, c);
    }
    Ok(())
}
