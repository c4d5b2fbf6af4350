use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use boxedit::app::EditContext;
use boxedit::denoiser::{Model, ModelConfig};
use boxedit::edit::EditSpec;
use boxedit::eval::{evaluate, EvalOptions};
use boxedit::geometry::{render_pose_image_with, PoseRenderOptions, ProjectionMode, DEFAULT_FACE_GRID, DEFAULT_MAX_DEPTH};
use boxedit::image::write_gray16_pages_png;
use boxedit::scene::{build_object_bank, generate_dataset, Dataset, DatasetConfig, Split};
use boxedit::service;
use boxedit::train::{Checkpoint, TrainConfig, Trainer};
use boxedit::{Error, Result};

#[derive(Parser)]
#[command(name = "boxedit", version, about = "Box-conditioned video object editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample synthetic scenes and write a dataset directory.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Two-stage training; writes the checkpoint named in the config.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run one EditSpec and write the edited frames and a report.
    Edit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "edit_out")]
        out: PathBuf,
    },
    /// Evaluate every task on validation clips and write a JSON report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "eval_report.json")]
        out: PathBuf,
    },
    /// Render the pose image of an object box as stacked 16-bit pages.
    RenderPose {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "pose.png")]
        out: PathBuf,
    },
    /// Serve the editor API.
    Serve {
        #[command(flatten)]
        common: Common,
    },
}

/// Shared configuration of `edit`, `eval` and `serve`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    dataset: PathBuf,
    /// Trained weights; without one a freshly initialised `model` is used.
    checkpoint: Option<PathBuf>,
    model: ModelConfig,
    steps: usize,
    addr: String,
    /// Where the service stores job outputs.
    results: Option<PathBuf>,
    eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            checkpoint: None,
            model: ModelConfig::desk(),
            steps: 12,
            addr: service::DEFAULT_ADDR.to_string(),
            results: None,
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RenderPoseConfig {
    dataset: PathBuf,
    scene_id: String,
    object_id: usize,
    frame: usize,
    mode: ProjectionMode,
    grid: usize,
    max_depth: f64,
}

impl Default for RenderPoseConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            scene_id: String::new(),
            object_id: 0,
            frame: 0,
            mode: ProjectionMode::Depth,
            grid: DEFAULT_FACE_GRID,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::validation("config", e.to_string()))
        }
        None => Ok(T::default()),
    }
}

fn load_model(cfg: &RunConfig, seed: u64) -> Result<Model> {
    match &cfg.checkpoint {
        Some(p) => Ok(Checkpoint::load(p)?.model),
        None => Model::new(cfg.model.clone(), seed),
    }
}

fn gen_data(c: &Common, out: &Path) -> Result<()> {
    let cfg: DatasetConfig = load_config(c.config.as_deref())?;
    let seed = c.seed.unwrap_or(0);
    let (scenes, clips) = generate_dataset(&cfg, seed)?;
    std::fs::create_dir_all(out)?;
    Dataset::write(out, &scenes, &clips)?;
    let digest = hex::encode(Sha256::digest(std::fs::read(out.join("clips.jsonl"))?));
    println!(
        "{}",
        serde_json::json!({"scenes": scenes.len(), "clips": clips.len(), "clips_sha256": digest})
    );
    Ok(())
}

fn train(c: &Common, resume: Option<&Path>) -> Result<()> {
    let mut cfg: TrainConfig = load_config(c.config.as_deref())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let ds = Dataset::open(&cfg.dataset)?;
    let clips = cfg.load_clips(&ds)?;
    let mut trainer = match resume {
        Some(p) => {
            let mut ck = Checkpoint::load(p)?;
            ck.train = Some(cfg.clone());
            Trainer::resume(ck, clips)?
        }
        None => Trainer::new(cfg.clone(), clips)?,
    };
    let losses = trainer.run()?;
    trainer.checkpoint().save(&cfg.output)?;
    let tail = &losses[losses.len().saturating_sub(100)..];
    let mean = if tail.is_empty() { f64::NAN } else { tail.iter().sum::<f64>() / tail.len() as f64 };
    println!(
        "{}",
        serde_json::json!({"steps": trainer.step, "final_loss_mean": mean, "checkpoint": cfg.output})
    );
    Ok(())
}

fn read_spec(path: &Path) -> Result<EditSpec> {
    let text = std::fs::read_to_string(path)?;
    let spec: EditSpec = serde_json::from_str(&text).map_err(|e| Error::validation("spec", e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

fn edit(c: &Common, spec: &Path, out: &Path) -> Result<()> {
    let cfg: RunConfig = load_config(c.config.as_deref())?;
    let spec = read_spec(spec)?;
    let seed = c.seed.unwrap_or(0);
    let ctx = EditContext::new(Dataset::open(&cfg.dataset)?, load_model(&cfg, seed)?, cfg.steps, seed)?;
    let outcome = ctx.run(&spec)?;
    outcome.write(out)?;
    println!("{}", serde_json::to_string(&outcome.report)?);
    Ok(())
}

fn eval(c: &Common, out: &Path) -> Result<()> {
    let cfg: RunConfig = load_config(c.config.as_deref())?;
    let mut opts = cfg.eval.clone();
    if let Some(s) = c.seed {
        opts.seed = s;
    }
    let ds = Dataset::open(&cfg.dataset)?;
    let model = load_model(&cfg, opts.seed)?;
    let bank = build_object_bank(&ds.load_clips(Split::Train)?);
    let val = ds.load_clips(Split::Val)?;
    let report = evaluate(&model, &val, &ds.scenes, &bank, &opts)?;
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(out, &text)?;
    println!("{text}");
    Ok(())
}

fn render_pose(c: &Common, out: &Path) -> Result<()> {
    let cfg: RenderPoseConfig = load_config(c.config.as_deref())?;
    let ds = Dataset::open(&cfg.dataset)?;
    let scene = ds.scene(&cfg.scene_id)?;
    let obj = scene.object(cfg.object_id)?;
    if cfg.frame >= scene.num_frames {
        return Err(Error::validation("frame", format!("scene has {} frames", scene.num_frames)));
    }
    let opts = PoseRenderOptions {
        grid: cfg.grid,
        max_depth: cfg.max_depth,
        mode: cfg.mode,
    };
    let img = render_pose_image_with(obj.boxes.get(cfg.frame), &scene.intrinsics, &opts)?;
    let pages: Vec<&[f64]> = (0..6).map(|c| img.channel(c)).collect();
    write_gray16_pages_png(out, &pages, img.height, img.width)?;
    let nonzero = img.data.iter().filter(|v| **v > 0.0).count();
    println!("{}", serde_json::json!({"output": out, "nonzero": nonzero}));
    Ok(())
}

fn serve(c: &Common) -> Result<()> {
    let cfg: RunConfig = load_config(c.config.as_deref())?;
    let seed = c.seed.unwrap_or(0);
    let addr = service::bind_addr(&cfg.addr)?;
    let ctx = EditContext::new(Dataset::open(&cfg.dataset)?, load_model(&cfg, seed)?, cfg.steps, seed)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(ctx, addr, cfg.results.clone()))
}

/// Input problems exit with 2, everything else with 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation { .. }
        | Error::Config(_)
        | Error::Json(_)
        | Error::MissingReference(_)
        | Error::MissingTargetBoxes(_)
        | Error::UnknownScene(_)
        | Error::UnknownObject(_)
        | Error::UnknownBankEntry(_)
        | Error::EmptyProjection => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData { common, out } => gen_data(common, out),
        Command::Train { common, resume } => train(common, resume.as_deref()),
        Command::Edit { common, spec, out } => edit(common, spec, out),
        Command::Eval { common, out } => eval(common, out),
        Command::RenderPose { common, out } => render_pose(common, out),
        Command::Serve { common } => serve(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            if matches!(cli.command, Command::Edit { .. }) && exit_code(&e) == 2 {
                eprintln!(
                    "EditSpec schema: {}",
                    service::schema_document()["components"]["schemas"]["EditSpec"]
                );
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
