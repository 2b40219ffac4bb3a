//! Implementations behind the `eyefield` subcommands. Each command is an
//! ordinary function over a typed option struct: the binary only parses
//! arguments and maps the error class to an exit code.
//!
//! Primary outputs (datasets, checkpoints, loss logs, rendered images) are
//! bit-identical across repeated runs with the same seed and inputs.
//! Metrics files are append-only JSON lines, each record carrying the
//! configuration hash and seed that produced it.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use nalgebra::Vector3;
use serde::Serialize;

use eyefield::checkpoint;
use eyefield::config::{AppConfig, TrainConfig};
use eyefield::cornea::CorneaModel;
use eyefield::eval::{
    center_errors, held_out_scores, mean_psnr, mean_ssim, orbit_cameras, render_field_view,
    texture_rms,
};
use eyefield::img::{save_gray8, save_rgb16};
use eyefield::ingest::{build_train_set, load_dataset, load_sidecar, GroundTruthSidecar, LoadedDataset};
use eyefield::synth::{capture_intrinsics, default_trajectory, make_dataset, preset_world, ObservationRecord};
use eyefield::train::{TrainSet, TrainState};
use eyefield::{Error, Result};

/// Turntable views written by `render`.
pub const ORBIT_VIEWS: usize = 12;
/// Lattice side for the texture-versus-reference RMS report.
pub const TEXTURE_RMS_GRID: usize = 64;

#[derive(Debug, Clone, Args)]
pub struct SynthOpts {
    /// Configuration file; built-in defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory the dataset is written into.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Override the synthesis seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Override the radius corruption level sigma.
    #[arg(long, value_name = "SIGMA")]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainOpts {
    /// Configuration file; built-in defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Dataset directory to fit.
    #[arg(long, value_name = "PATH")]
    pub dataset: PathBuf,
    /// Run directory for checkpoint, loss log, and metrics.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Override the training seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Override the training step count.
    #[arg(long, value_name = "N")]
    pub steps: Option<u64>,
    /// Pin the iris texture to black: reflection-only fitting.
    #[arg(long)]
    pub no_texture: bool,
    /// Freeze per-frame cornea poses at their initial placement.
    #[arg(long)]
    pub no_pose_opt: bool,
    /// Drop the rotation-invariance prior on the iris texture.
    #[arg(long)]
    pub no_radial: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RenderOpts {
    /// Trained (or fresh) checkpoint to render.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Directory the image pairs are written into.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalOpts {
    /// Checkpoint to score.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Dataset directory; must carry a ground-truth sidecar.
    #[arg(long, value_name = "PATH")]
    pub dataset: PathBuf,
    /// Directory the metrics report is appended in.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AblateOpts {
    /// Configuration file; built-in defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory for the per-cell datasets, runs, and the sweep report.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Override both the synthesis and training seeds.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Override the per-cell training step count.
    #[arg(long, value_name = "N")]
    pub steps: Option<u64>,
}

fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    match path {
        Some(p) => AppConfig::load(p),
        None => Ok(AppConfig::default()),
    }
}

fn append_record<T: Serialize>(path: &Path, record: &T) -> Result<()> {
    let line = serde_json::to_string(record)
        .map_err(|e| Error::State(format!("metrics record does not serialize: {e}")))?;
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, &e))?;
    writeln!(file, "{line}").map_err(|e| Error::io(path, &e))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub out: PathBuf,
    pub seed: u64,
    pub noise: f64,
    pub records: Vec<ObservationRecord>,
}

pub fn cmd_synth(opts: &SynthOpts) -> Result<SynthSummary> {
    let mut cfg = load_config(opts.config.as_deref())?.synth;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(noise) = opts.noise {
        cfg.radius_noise = noise;
    }
    cfg.validate()?;
    let (scene, iris) = preset_world(cfg.preset, cfg.ambient);
    let trajectory = default_trajectory(cfg.frames);
    let intr = capture_intrinsics(&cfg);
    let model = CorneaModel::default();
    let records = make_dataset(
        &scene,
        &iris,
        &trajectory,
        &model,
        &intr,
        cfg.radius_noise,
        cfg.seed,
        &opts.out,
    )?;
    println!("dataset: {}", opts.out.display());
    println!(
        "  frames {}  image {}x{}  focal {} px  noise sigma {}  seed {}",
        records.len(),
        cfg.image_size[0],
        cfg.image_size[1],
        cfg.focal_px,
        cfg.radius_noise,
        cfg.seed
    );
    for r in &records {
        println!(
            "  frame {:04}: center ({:8.3}, {:8.3}) px  radius {:7.3} px",
            r.frame, r.center_x, r.center_y, r.radius_px
        );
    }
    Ok(SynthSummary { out: opts.out.clone(), seed: cfg.seed, noise: cfg.radius_noise, records })
}

#[derive(Debug, Serialize)]
struct TrainRecord {
    command: &'static str,
    config_hash: String,
    seed: u64,
    steps: u64,
    frames: usize,
    rays: usize,
    final_total_loss: f64,
    masked_psnr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub set: TrainSet,
    pub masked_psnr: f64,
    pub checkpoint: PathBuf,
}

pub fn cmd_train(opts: &TrainOpts) -> Result<TrainOutcome> {
    let mut cfg = load_config(opts.config.as_deref())?.train;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = opts.steps {
        cfg.steps = steps;
    }
    if opts.no_texture {
        cfg.texture_enabled = false;
    }
    if opts.no_pose_opt {
        cfg.pose_opt_enabled = false;
    }
    if opts.no_radial {
        cfg.radial_weight = 0.0;
    }
    run_training(&cfg, &opts.dataset, &opts.out)
}

/// Fit one training configuration to a dataset directory, writing the
/// checkpoint, the per-step loss log, and a metrics record into `out`.
pub fn run_training(cfg: &TrainConfig, dataset: &Path, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_dataset(dataset, cfg.pose_source)?;
    let model = CorneaModel::default();
    let set = build_train_set(&model, &data, &cfg.bbox())?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, &e))?;

    let mut state = TrainState::new(cfg, set.frames)?;
    log::info!("fitting {} rays over {} frames for {} steps", set.rays.len(), set.frames, cfg.steps);
    let mut loss_log = String::from("step,total,recon,radial\n");
    let mut final_total = f64::NAN;
    let log_every = cfg.log_every.max(1);
    state.fit(&set, |r| {
        loss_log.push_str(&format!("{},{},{},{}\n", r.step, r.total, r.recon, r.radial));
        final_total = r.total;
        if r.step % log_every == 0 || r.step + 1 == cfg.steps {
            log::info!(
                "step {:>6}  total {:.6}  recon {:.6}  radial {:.6}",
                r.step,
                r.total,
                r.recon,
                r.radial
            );
        }
    })?;

    let loss_path = out.join("loss.csv");
    fs::write(&loss_path, loss_log).map_err(|e| Error::io(&loss_path, &e))?;
    let checkpoint_path = out.join("checkpoint.bin");
    checkpoint::save(&state, &checkpoint_path)?;
    let masked_psnr = state.masked_psnr(&set)?;
    append_record(
        &out.join("metrics.jsonl"),
        &TrainRecord {
            command: "train",
            config_hash: cfg.hash(),
            seed: cfg.seed,
            steps: cfg.steps,
            frames: set.frames,
            rays: set.rays.len(),
            final_total_loss: final_total,
            masked_psnr,
        },
    )?;
    println!("checkpoint: {}", checkpoint_path.display());
    println!("loss log:   {}", loss_path.display());
    println!("masked training PSNR: {masked_psnr:.2} dB");
    Ok(TrainOutcome { state, set, masked_psnr, checkpoint: checkpoint_path })
}

pub fn cmd_render(opts: &RenderOpts) -> Result<Vec<(PathBuf, PathBuf)>> {
    let state = checkpoint::load(&opts.checkpoint)?;
    fs::create_dir_all(&opts.out).map_err(|e| Error::io(&opts.out, &e))?;
    let cameras = orbit_cameras(state.scene.bbox(), ORBIT_VIEWS)?;
    let mut pairs = Vec::new();
    for (i, camera) in cameras.iter().enumerate() {
        let (image, opacity) = render_field_view(&state.scene, camera, state.config.samples_per_ray)?;
        let color_path = opts.out.join(format!("view_{i:02}.png"));
        let acc_path = opts.out.join(format!("accumulation_{i:02}.png"));
        save_rgb16(&image, &color_path)?;
        save_gray8(&opacity, image.width(), image.height(), &acc_path)?;
        pairs.push((color_path, acc_path));
    }
    println!("rendered {} orbit views into {}", pairs.len(), opts.out.display());
    Ok(pairs)
}

/// One evaluation of a checkpoint against its dataset's exact references.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub view_psnr: Vec<f64>,
    pub view_ssim: Vec<f64>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub center_error_initial: f64,
    pub center_error_refined: f64,
    /// Absent when the run was trained without a texture.
    pub texture_rms: Option<f64>,
}

pub fn cmd_eval(opts: &EvalOpts) -> Result<EvalReport> {
    let state = checkpoint::load(&opts.checkpoint)?;
    if !opts.dataset.join("ground_truth").is_dir() {
        return Err(Error::Config(format!(
            "{} has no ground_truth sidecar: real captures carry no exact references to score \
             against, so evaluation only applies to synthetic datasets",
            opts.dataset.display()
        )));
    }
    let sidecar = load_sidecar(&opts.dataset)?;
    let data = load_dataset(&opts.dataset, state.config.pose_source)?;
    evaluate(&state, &data, &sidecar, &opts.out)
}

/// Score a trained state against exact references and append the report.
pub fn evaluate(
    state: &TrainState,
    data: &LoadedDataset,
    sidecar: &GroundTruthSidecar,
    out: &Path,
) -> Result<EvalReport> {
    let scores = held_out_scores(&state.scene, &sidecar.scene, state.config.samples_per_ray)?;
    let model = CorneaModel::default();
    let centers: Vec<Vector3<f64>> =
        sidecar.trajectory.frames.iter().map(|f| Vector3::from(f.center)).collect();
    let errors = center_errors(&model, &data.intrinsics, &data.records, &state.twists, &centers)?;
    let texture = if state.config.texture_enabled {
        Some(texture_rms(&state.texture, &sidecar.iris, TEXTURE_RMS_GRID)?)
    } else {
        None
    };
    let report = EvalReport {
        command: "eval",
        config_hash: state.config.hash(),
        seed: state.config.seed,
        view_psnr: scores.iter().map(|s| s.psnr).collect(),
        view_ssim: scores.iter().map(|s| s.ssim).collect(),
        mean_psnr: mean_psnr(&scores),
        mean_ssim: mean_ssim(&scores),
        center_error_initial: errors.initial,
        center_error_refined: errors.refined,
        texture_rms: texture,
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, &e))?;
    append_record(&out.join("metrics.jsonl"), &report)?;
    for (i, s) in scores.iter().enumerate() {
        println!("view {i}: PSNR {:6.2} dB  SSIM {:7.4}", s.psnr, s.ssim);
    }
    println!("held-out means: PSNR {:.2} dB  SSIM {:.4}", report.mean_psnr, report.mean_ssim);
    println!(
        "cornea center error: initial {:.4}  refined {:.4}",
        report.center_error_initial, report.center_error_refined
    );
    if let Some(rms) = report.texture_rms {
        println!("texture RMS vs reference iris: {rms:.4}");
    }
    Ok(report)
}

/// One cell of the noise-versus-pose-optimization sweep.
#[derive(Debug, Clone, Serialize)]
pub struct AblateCell {
    pub command: &'static str,
    pub noise: f64,
    pub pose_opt: bool,
    pub config_hash: String,
    pub seed: u64,
    pub masked_psnr: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub center_error_initial: f64,
    pub center_error_refined: f64,
}

pub fn cmd_ablate(opts: &AblateOpts) -> Result<Vec<AblateCell>> {
    let mut cfg = load_config(opts.config.as_deref())?;
    if let Some(seed) = opts.seed {
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(steps) = opts.steps {
        cfg.ablate.steps = Some(steps);
    }
    cfg.validate()?;
    fs::create_dir_all(&opts.out).map_err(|e| Error::io(&opts.out, &e))?;

    let (scene, iris) = preset_world(cfg.synth.preset, cfg.synth.ambient);
    let trajectory = default_trajectory(cfg.synth.frames);
    let intr = capture_intrinsics(&cfg.synth);
    let model = CorneaModel::default();
    let mut cells = Vec::new();
    for (level, &noise) in cfg.ablate.noise_levels.iter().enumerate() {
        let dataset_dir = opts.out.join(format!("level_{level}")).join("dataset");
        make_dataset(&scene, &iris, &trajectory, &model, &intr, noise, cfg.synth.seed, &dataset_dir)?;
        let sidecar = load_sidecar(&dataset_dir)?;
        for pose_opt in [true, false] {
            let mut tc = cfg.train.clone();
            tc.pose_opt_enabled = pose_opt;
            // Radius corruption displaces a placement along its view ray
            // only — the ellipse center, and with it the base rotation,
            // stays exact — so the sweep refines translation alone. A
            // rotation delta acts about the world origin, a lever long
            // enough to swamp the depth signal with drift.
            tc.lr_pose_rotation = 0.0;
            tc.lr_pose_translation = cfg.ablate.lr_pose_translation;
            if let Some(steps) = cfg.ablate.steps {
                tc.steps = steps;
            }
            let arm = if pose_opt { "pose_opt" } else { "frozen" };
            let run_dir = opts.out.join(format!("level_{level}")).join(arm);
            log::info!("sweep cell: sigma {noise}, {arm}");
            let outcome = run_training(&tc, &dataset_dir, &run_dir)?;
            let data = load_dataset(&dataset_dir, tc.pose_source)?;
            let report = evaluate(&outcome.state, &data, &sidecar, &run_dir)?;
            cells.push(AblateCell {
                command: "ablate",
                noise,
                pose_opt,
                config_hash: tc.hash(),
                seed: tc.seed,
                masked_psnr: outcome.masked_psnr,
                mean_psnr: report.mean_psnr,
                mean_ssim: report.mean_ssim,
                center_error_initial: report.center_error_initial,
                center_error_refined: report.center_error_refined,
            });
        }
    }
    let table_path = opts.out.join("ablation.jsonl");
    for cell in &cells {
        append_record(&table_path, cell)?;
    }
    println!(
        "{:>7} {:>9} {:>10} {:>12} {:>8} {:>13} {:>14}",
        "noise", "pose-opt", "masked dB", "held-out dB", "SSIM", "center init", "center refined"
    );
    for c in &cells {
        println!(
            "{:>7.3} {:>9} {:>10.2} {:>12.2} {:>8.4} {:>13.4} {:>14.4}",
            c.noise,
            if c.pose_opt { "on" } else { "off" },
            c.masked_psnr,
            c.mean_psnr,
            c.mean_ssim,
            c.center_error_initial,
            c.center_error_refined
        );
    }
    println!("sweep report: {}", table_path.display());
    Ok(cells)
}
