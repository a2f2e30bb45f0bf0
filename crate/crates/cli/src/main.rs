//! `rge` — operator CLI for the expansive Gaussian-splatting pipeline.
//!
//! Stages communicate through files under the configured output directory:
//!
//! ```text
//! gen-scene    -> scene.ckpt, trajectory.txt, gt_<view>.ppm
//! train -p 1   -> model_phase1.ckpt
//! synth-priors -> prior_<view>.ppm, mask_<view>.pgm, reproj_<view>.ppm,
//!                 reproj_valid_<view>.pgm, depth_<view>.pfm, depth_valid_<view>.pgm
//! train-reward -> weights.rgen, reward_<view>.pfm, model_joint.ckpt
//! expand       -> model_final.ckpt        (classify -> seed missing -> phase 2)
//! train -p 2   -> model_phase2.ckpt       (phase 2 only, needs frozen maps)
//! eval         -> eval_views_<seed>_<hash>.jsonl, eval_summary_<seed>_<hash>.json
//! ```
//!
//! Exit codes: 0 success, 2 config error, 3 missing prerequisite,
//! 4 numerical divergence.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rge_core::img::{ImageGray, ImageRgb};
use rge_core::io::{
    read_checkpoint, read_pfm, read_pgm_mask, read_ppm, read_trajectory, write_checkpoint,
    write_pfm, write_pgm_mask, write_ppm, write_trajectory, SceneCheckpoint,
};
use rge_core::metrics::{masked_mae, psnr, reward_auroc, ssim, MetricReport, ViewMetrics};
use rge_core::nn::persist::save_weights;
use rge_core::raster::{render, render_depth, RenderOptions};
use rge_core::reward::{
    build_reward_net, joint_train, save_reward_maps, RewardConfig, RewardError, RewardMap,
};
use rge_core::splat::CameraView;
use rge_core::train::{
    calibrate_scale, classify_maturity, init_from_pointcloud, init_missing, phase1_train,
    phase2_train, TrainConfig, TrainError, MIN_CALIB_OVERLAP,
};
use rge_core::world::{
    depth_oracle, gen_scene, gen_trajectory, sample_pointcloud, synth_prior, CorruptionConfig,
    PriorSample, SceneConfig, SyntheticScene, TrajectorySet,
};

// ------------------------------------------------------------------- config

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_out_dir")]
    out_dir: PathBuf,
    scene: SceneSection,
    trajectory: TrajectorySection,
    priors: PriorsSection,
    reward: RewardSection,
    train: TrainSection,
    eval: EvalSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneSection {
    #[serde(default = "d_splat_budget")]
    splat_budget: usize,
    #[serde(default = "d_path_length")]
    path_length: f64,
    #[serde(default = "d_image_side")]
    image_width: usize,
    #[serde(default = "d_image_side")]
    image_height: usize,
    #[serde(default = "d_focal")]
    focal: f64,
}

fn d_splat_budget() -> usize { 5000 }
fn d_path_length() -> f64 { 40.0 }
fn d_image_side() -> usize { 64 }
fn d_focal() -> f64 { 51.0 }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectorySection {
    #[serde(default = "d_poses")]
    poses_per_lane: usize,
    #[serde(default = "d_lanes")]
    lane_offsets: Vec<f64>,
}

fn d_poses() -> usize { 40 }
fn d_lanes() -> Vec<f64> { vec![0.0, 3.5, 7.0] }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorsSection {
    #[serde(default = "d_severity")]
    severity: f64,
    #[serde(default = "d_pc_stride")]
    pointcloud_stride: usize,
    #[serde(default = "d_pc_cap")]
    pointcloud_cap: usize,
    #[serde(default = "d_depth_noise")]
    depth_noise: f64,
}

fn d_severity() -> f64 { 0.25 }
fn d_pc_stride() -> usize { 2 }
fn d_pc_cap() -> usize { 100_000 }
fn d_depth_noise() -> f64 { 0.1 }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardSection {
    #[serde(default = "d_lambda_reproj")]
    lambda_reproj: f64,
    #[serde(default = "d_lambda_reg")]
    lambda_reg: f64,
    #[serde(default = "d_joint_iters")]
    joint_iters: f64,
    #[serde(default = "d_channels")]
    channels: [usize; 3],
    #[serde(default)]
    anti_collapse: bool,
    #[serde(default = "d_ac_tau")]
    anti_collapse_tau: f64,
    #[serde(default = "d_ac_weight")]
    anti_collapse_weight: f64,
}

fn d_lambda_reproj() -> f64 { 0.5 }
fn d_lambda_reg() -> f64 { 0.3 }
fn d_joint_iters() -> f64 { 5000.0 }
fn d_channels() -> [usize; 3] { [16, 32, 64] }
fn d_ac_tau() -> f64 { 0.5 }
fn d_ac_weight() -> f64 { 0.1 }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    #[serde(default = "d_desk_scale")]
    desk_scale: f64,
    #[serde(default = "d_position_lr")]
    position_lr: f64,
    #[serde(default = "d_rotation_lr")]
    rotation_lr: f64,
    #[serde(default = "d_scale_lr")]
    scale_lr: f64,
    #[serde(default = "d_opacity_lr")]
    opacity_lr: f64,
    #[serde(default = "d_color_lr")]
    color_lr: f64,
    #[serde(default = "d_phase1_iters")]
    phase1_iters: f64,
    #[serde(default = "d_phase2_iters")]
    phase2_iters: f64,
    #[serde(default = "d_init_points")]
    init_points: f64,
    #[serde(default = "d_densify_window")]
    densify_window: [f64; 2],
    #[serde(default = "d_densify_interval")]
    densify_interval: usize,
    #[serde(default = "d_densify_grad_threshold")]
    densify_grad_threshold: f64,
    #[serde(default = "d_maturity_threshold")]
    maturity_threshold: f64,
    #[serde(default = "d_prune_opacity")]
    prune_opacity: f64,
    #[serde(default = "d_split_scale_fraction")]
    split_scale_fraction: f64,
}

fn d_desk_scale() -> f64 { 0.1 }
fn d_position_lr() -> f64 { 1.6e-4 }
fn d_rotation_lr() -> f64 { 1e-3 }
fn d_scale_lr() -> f64 { 5e-3 }
fn d_opacity_lr() -> f64 { 5e-2 }
fn d_color_lr() -> f64 { 2.5e-3 }
fn d_phase1_iters() -> f64 { 30_000.0 }
fn d_phase2_iters() -> f64 { 5000.0 }
fn d_init_points() -> f64 { 50_000.0 }
fn d_densify_window() -> [f64; 2] { [500.0, 15_000.0] }
fn d_densify_interval() -> usize { 100 }
fn d_densify_grad_threshold() -> f64 { 2e-4 }
fn d_maturity_threshold() -> f64 { 5e-4 }
fn d_prune_opacity() -> f64 { 0.005 }
fn d_split_scale_fraction() -> f64 { 0.01 }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSection {
    /// Original-lane views with index divisible by this stride are held out
    /// from training and used for evaluation.
    #[serde(default = "d_heldout_stride")]
    heldout_stride: usize,
    #[serde(default = "d_mae_threshold")]
    mae_threshold: f64,
}

fn d_heldout_stride() -> usize { 5 }
fn d_mae_threshold() -> f64 { 0.5 }

impl RunConfig {
    fn scene_cfg(&self) -> SceneConfig {
        SceneConfig {
            splat_budget: self.scene.splat_budget,
            path_length: self.scene.path_length,
            image_width: self.scene.image_width,
            image_height: self.scene.image_height,
            focal: self.scene.focal,
        }
    }

    fn train_cfg(&self) -> TrainConfig {
        TrainConfig {
            desk_scale: self.train.desk_scale,
            seed: self.seed,
            position_lr: self.train.position_lr,
            rotation_lr: self.train.rotation_lr,
            scale_lr: self.train.scale_lr,
            opacity_lr: self.train.opacity_lr,
            color_lr: self.train.color_lr,
            phase1_iters_ref: self.train.phase1_iters,
            phase2_iters_ref: self.train.phase2_iters,
            init_points_ref: self.train.init_points,
            densify_window_ref: (self.train.densify_window[0], self.train.densify_window[1]),
            densify_interval: self.train.densify_interval,
            densify_grad_threshold: self.train.densify_grad_threshold,
            maturity_threshold: self.train.maturity_threshold,
            prune_opacity: self.train.prune_opacity,
            split_scale_fraction: self.train.split_scale_fraction,
        }
    }

    fn reward_cfg(&self) -> RewardConfig {
        RewardConfig {
            lambda_reproj: self.reward.lambda_reproj,
            lambda_reg: self.reward.lambda_reg,
            joint_iters_ref: self.reward.joint_iters,
            channels: self.reward.channels,
            anti_collapse: self.reward.anti_collapse,
            anti_collapse_tau: self.reward.anti_collapse_tau,
            anti_collapse_weight: self.reward.anti_collapse_weight,
        }
    }
}

// --------------------------------------------------------------------- args

#[derive(Parser)]
#[command(name = "rge", about = "Expansive Gaussian-splatting reconstruction pipeline")]
struct Cli {
    /// Path to the run configuration (TOML).
    #[arg(long, global = true, default_value = "rge.toml")]
    config: PathBuf,
    /// Override the desk-scale factor (1.0 reproduces reference-scale
    /// iteration counts and point budgets).
    #[arg(long, global = true)]
    desk_scale: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic scene, trajectories and GT renders.
    GenScene,
    /// Synthesize corrupted prior images for the shifted lanes.
    SynthPriors,
    /// Run a training phase over the current artifacts.
    Train {
        #[arg(long)]
        phase: u8,
    },
    /// Jointly train the confidence network and the scene, then freeze it.
    TrainReward,
    /// Full expansion: maturity classification, missing-Gaussian seeding,
    /// phase-2 training.
    Expand,
    /// Evaluate held-out views and emit reports.
    Eval,
}

enum CliError {
    Config(String),
    Missing(String),
    Diverged(String),
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Missing(m) | CliError::Diverged(m) | CliError::Other(m) => m,
        }
    }
}

impl From<rge_core::io::IoError> for CliError {
    fn from(e: rge_core::io::IoError) -> Self {
        CliError::Other(format!("io error: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(format!("io error: {e}"))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Diverged(format!("{e}")),
            other => CliError::Other(format!("{other}")),
        }
    }
}

impl From<RewardError> for CliError {
    fn from(e: RewardError) -> Self {
        match e {
            RewardError::Diverged { .. } => CliError::Diverged(format!("{e}")),
            RewardError::Train(t) => t.into(),
            other => CliError::Other(format!("{other}")),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    // worker cap; the pipeline is serial, so anything >= 1 is accepted
    if let Ok(v) = std::env::var("RGE_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {}
            _ => return Err(CliError::Config(format!("RGE_THREADS must be a positive integer, got {v:?}"))),
        }
    }

    let raw = std::fs::read_to_string(&cli.config)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", cli.config.display())))?;
    let mut cfg: RunConfig = toml::from_str(&raw).map_err(|e| {
        let msg = e.to_string();
        let hint = for_missing_section(&msg);
        CliError::Config(format!("invalid config {}: {msg}{hint}", cli.config.display()))
    })?;
    if let Some(ds) = cli.desk_scale {
        if ds <= 0.0 {
            return Err(CliError::Config(format!("--desk-scale must be positive, got {ds}")));
        }
        cfg.train.desk_scale = ds;
    }
    validate(&cfg)?;

    // hash the effective configuration (after overrides) so artifacts record
    // exactly what produced them
    let canonical = toml::to_string(&cfg).map_err(|e| CliError::Other(format!("{e}")))?;
    let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Other(format!("cannot create {}: {e}", cfg.out_dir.display())))?;

    let ctx = Ctx { cfg, hash };
    match cli.cmd {
        Cmd::GenScene => cmd_gen_scene(&ctx),
        Cmd::SynthPriors => cmd_synth_priors(&ctx),
        Cmd::Train { phase: 1 } => cmd_train_phase1(&ctx),
        Cmd::Train { phase: 2 } => cmd_train_phase2(&ctx),
        Cmd::Train { phase } => Err(CliError::Config(format!("unknown training phase {phase}; use 1 or 2"))),
        Cmd::TrainReward => cmd_train_reward(&ctx),
        Cmd::Expand => cmd_expand(&ctx),
        Cmd::Eval => cmd_eval(&ctx),
    }
}

fn for_missing_section(msg: &str) -> String {
    for sec in ["scene", "trajectory", "priors", "reward", "train", "eval"] {
        if msg.contains(&format!("missing field `{sec}`")) {
            return format!(" (the [{sec}] section is required)");
        }
    }
    String::new()
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&cfg.priors.severity) {
        return Err(CliError::Config(format!("priors.severity must be in [0,1], got {}", cfg.priors.severity)));
    }
    if cfg.train.desk_scale <= 0.0 {
        return Err(CliError::Config("train.desk_scale must be positive".into()));
    }
    if cfg.trajectory.lane_offsets.first() != Some(&0.0) {
        return Err(CliError::Config("trajectory.lane_offsets must start with the original lane (0.0)".into()));
    }
    if cfg.eval.heldout_stride < 2 {
        return Err(CliError::Config("eval.heldout_stride must be at least 2".into()));
    }
    Ok(())
}

struct Ctx {
    cfg: RunConfig,
    hash: String,
}

impl Ctx {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn require(&self, name: &str, produced_by: &str) -> Result<PathBuf, CliError> {
        let p = self.out(name);
        if !p.exists() {
            return Err(CliError::Missing(format!(
                "missing artifact {} (run `rge {produced_by}` first)",
                p.display()
            )));
        }
        Ok(p)
    }

    fn world(&self) -> (SyntheticScene, TrajectorySet) {
        let sc = self.cfg.scene_cfg();
        let scene = gen_scene(self.cfg.seed, &sc);
        let traj = gen_trajectory(&sc, &self.cfg.trajectory.lane_offsets, self.cfg.trajectory.poses_per_lane);
        (scene, traj)
    }

    /// Original-lane views split into (training, held-out) by the eval stride.
    fn split_original(&self, scene: &SyntheticScene, traj: &TrajectorySet) -> (Views, Views) {
        let opts = RenderOptions::default();
        let mut train = Vec::new();
        let mut held = Vec::new();
        for (i, (id, cam)) in traj.original().views.iter().enumerate() {
            let gt = render(&scene.gaussians, cam, &opts).rgb;
            if i % self.cfg.eval.heldout_stride == 0 {
                held.push((id.clone(), cam.clone(), gt));
            } else {
                train.push((id.clone(), cam.clone(), gt));
            }
        }
        (train, held)
    }

    fn write_meta(&self, name: &str, extra: BTreeMap<String, serde_json::Value>) -> Result<(), CliError> {
        let mut obj = serde_json::Map::new();
        obj.insert("seed".into(), self.cfg.seed.into());
        obj.insert("config_hash".into(), self.hash.clone().into());
        for (k, v) in extra {
            obj.insert(k, v);
        }
        let bytes = serde_json::to_vec_pretty(&serde_json::Value::Object(obj))
            .map_err(|e| CliError::Other(format!("{e}")))?;
        rge_core::io::atomic_write(&self.out(name), &bytes)?;
        Ok(())
    }
}

type Views = Vec<(String, CameraView, ImageRgb)>;

fn plain_views(v: &Views) -> Vec<(CameraView, ImageRgb)> {
    v.iter().map(|(_, c, i)| (c.clone(), i.clone())).collect()
}

// ------------------------------------------------------------------- stages

fn cmd_gen_scene(ctx: &Ctx) -> Result<(), CliError> {
    let (scene, traj) = ctx.world();
    write_checkpoint(
        &SceneCheckpoint {
            gaussians: scene.gaussians.clone(),
            sh_degree: 0,
            desk_scale: ctx.cfg.train.desk_scale as f32,
            seed: ctx.cfg.seed,
        },
        &ctx.out("scene.ckpt"),
    )?;
    let all = traj.all_views();
    write_trajectory(&all, &ctx.out("trajectory.txt"))?;
    let opts = RenderOptions::default();
    for (id, cam) in &all {
        let img = render(&scene.gaussians, cam, &opts).rgb;
        write_ppm(&img, &ctx.out(&format!("gt_{id}.ppm")))?;
    }
    let mut extra = BTreeMap::new();
    extra.insert("lanes".into(), ctx.cfg.trajectory.lane_offsets.len().into());
    extra.insert("poses_per_lane".into(), ctx.cfg.trajectory.poses_per_lane.into());
    extra.insert("gaussians".into(), scene.gaussians.len().into());
    ctx.write_meta("gen_meta.json", extra)?;
    println!("gen-scene: {} gaussians, {} views", scene.gaussians.len(), all.len());
    Ok(())
}

/// Shifted-lane views get a corrupted prior plus everything needed to score
/// and calibrate it later.
fn cmd_synth_priors(ctx: &Ctx) -> Result<(), CliError> {
    ctx.require("scene.ckpt", "gen-scene")?;
    let (scene, traj) = ctx.world();
    let cloud = sample_pointcloud(
        &scene,
        traj.original(),
        ctx.cfg.priors.pointcloud_stride,
        ctx.cfg.priors.pointcloud_cap,
    );
    let mut ids = Vec::new();
    for lane in traj.lanes.iter().filter(|l| l.offset != 0.0) {
        for (vid, cam) in &lane.views {
            let view_seed = ctx.cfg.seed ^ stable_id_hash(vid);
            let prior = synth_prior(
                &scene,
                vid,
                cam,
                &cloud,
                &CorruptionConfig { severity: ctx.cfg.priors.severity },
                view_seed,
            )
            .map_err(|e| CliError::Other(format!("{e}")))?;
            write_ppm(&prior.image, &ctx.out(&format!("prior_{vid}.ppm")))?;
            write_pgm_mask(&prior.artifact_mask, &ctx.out(&format!("mask_{vid}.pgm")))?;
            write_ppm(&prior.reproj, &ctx.out(&format!("reproj_{vid}.ppm")))?;
            write_pgm_mask(&prior.reproj_valid, &ctx.out(&format!("reproj_valid_{vid}.pgm")))?;
            let (depth, dvalid) = depth_oracle(&scene, cam, ctx.cfg.priors.depth_noise, view_seed);
            write_pfm(&depth, &ctx.out(&format!("depth_{vid}.pfm")))?;
            write_pgm_mask(&dvalid, &ctx.out(&format!("depth_valid_{vid}.pgm")))?;
            ids.push(vid.clone());
        }
    }
    let mut extra = BTreeMap::new();
    extra.insert("views".into(), serde_json::to_value(&ids).unwrap());
    extra.insert("severity".into(), ctx.cfg.priors.severity.into());
    ctx.write_meta("priors_meta.json", extra)?;
    println!("synth-priors: {} prior views", ids.len());
    Ok(())
}

fn load_priors(ctx: &Ctx) -> Result<Vec<PriorSample>, CliError> {
    let meta_path = ctx.require("priors_meta.json", "synth-priors")?;
    let meta: serde_json::Value = serde_json::from_slice(
        &std::fs::read(&meta_path).map_err(|e| CliError::Other(format!("{e}")))?,
    )
    .map_err(|e| CliError::Other(format!("bad priors_meta.json: {e}")))?;
    let ids: Vec<String> = serde_json::from_value(meta["views"].clone())
        .map_err(|e| CliError::Other(format!("bad priors_meta.json: {e}")))?;
    let views = read_trajectory(&ctx.require("trajectory.txt", "gen-scene")?)?;
    let by_id: BTreeMap<&str, &CameraView> = views.iter().map(|(id, c)| (id.as_str(), c)).collect();
    let mut out = Vec::with_capacity(ids.len());
    for vid in &ids {
        let cam = by_id
            .get(vid.as_str())
            .ok_or_else(|| CliError::Missing(format!("view {vid} absent from trajectory.txt")))?;
        out.push(PriorSample {
            view_id: vid.clone(),
            cam: (*cam).clone(),
            image: read_ppm(&ctx.require(&format!("prior_{vid}.ppm"), "synth-priors")?)?,
            artifact_mask: read_pgm_mask(&ctx.require(&format!("mask_{vid}.pgm"), "synth-priors")?)?,
            reproj: read_ppm(&ctx.require(&format!("reproj_{vid}.ppm"), "synth-priors")?)?,
            reproj_valid: read_pgm_mask(&ctx.require(&format!("reproj_valid_{vid}.pgm"), "synth-priors")?)?,
            recipe: String::new(),
        });
    }
    Ok(out)
}

fn cmd_train_phase1(ctx: &Ctx) -> Result<(), CliError> {
    ctx.require("scene.ckpt", "gen-scene")?;
    let (scene, traj) = ctx.world();
    let (train_views, _) = ctx.split_original(&scene, &traj);
    let tcfg = ctx.cfg.train_cfg();
    let cloud = sample_pointcloud(
        &scene,
        traj.original(),
        ctx.cfg.priors.pointcloud_stride,
        ctx.cfg.priors.pointcloud_cap,
    );
    let mut gaussians = init_from_pointcloud(&cloud, tcfg.init_points());
    let report = phase1_train(&mut gaussians, &plain_views(&train_views), &tcfg)?;
    write_checkpoint(
        &SceneCheckpoint {
            gaussians,
            sh_degree: 0,
            desk_scale: tcfg.desk_scale as f32,
            seed: ctx.cfg.seed,
        },
        &ctx.out("model_phase1.ckpt"),
    )?;
    let mut extra = BTreeMap::new();
    extra.insert("iterations".into(), report.iterations.into());
    extra.insert("final_loss".into(), report.final_loss.into());
    extra.insert("gaussians".into(), report.gaussians.into());
    ctx.write_meta("train1_meta.json", extra)?;
    println!(
        "train phase 1: {} iterations, {} gaussians, final loss {:.6}",
        report.iterations, report.gaussians, report.final_loss
    );
    Ok(())
}

fn cmd_train_reward(ctx: &Ctx) -> Result<(), CliError> {
    let model = read_checkpoint(&ctx.require("model_phase1.ckpt", "train --phase 1")?)?;
    let priors = load_priors(ctx)?;
    let (scene, traj) = ctx.world();
    let (train_views, _) = ctx.split_original(&scene, &traj);
    let tcfg = ctx.cfg.train_cfg();
    let rcfg = ctx.cfg.reward_cfg();
    let mut gaussians = model.gaussians;
    let mut net = build_reward_net(&rcfg, ctx.cfg.seed);
    let outcome = joint_train(&mut gaussians, &plain_views(&train_views), &priors, &mut net, &rcfg, &tcfg)?;
    save_weights(&net, &ctx.out("weights.rgen")).map_err(|e| CliError::Other(format!("{e}")))?;
    save_reward_maps(&ctx.cfg.out_dir, &outcome.maps)?;
    write_checkpoint(
        &SceneCheckpoint {
            gaussians,
            sh_degree: 0,
            desk_scale: tcfg.desk_scale as f32,
            seed: ctx.cfg.seed,
        },
        &ctx.out("model_joint.ckpt"),
    )?;
    let mut extra = BTreeMap::new();
    extra.insert("iterations".into(), outcome.iterations.into());
    extra.insert("final_loss".into(), outcome.final_loss.into());
    extra.insert("mean_confidence".into(), outcome.mean_confidence.into());
    if outcome.mean_confidence < 0.3 {
        eprintln!(
            "warning: mean confidence {:.3} below the collapse guard 0.3",
            outcome.mean_confidence
        );
    }
    ctx.write_meta("reward_meta.json", extra)?;
    println!(
        "train-reward: {} iterations, mean confidence {:.3}, {} maps frozen",
        outcome.iterations, outcome.mean_confidence, outcome.maps.len()
    );
    Ok(())
}

fn load_frozen_maps(ctx: &Ctx, priors: &[PriorSample]) -> Result<Vec<RewardMap>, CliError> {
    let mut maps = Vec::with_capacity(priors.len());
    for p in priors {
        let path = ctx.require(&format!("reward_{}.pfm", p.view_id), "train-reward")?;
        maps.push(RewardMap { values: read_pfm(&path)?, source_view: p.view_id.clone(), frozen: true });
    }
    Ok(maps)
}

/// Shared tail of `expand` and `train --phase 2`.
fn run_phase2(
    ctx: &Ctx,
    gaussians: &mut Vec<rge_core::splat::GaussianPrimitive>,
    priors: &[PriorSample],
    maps: &[RewardMap],
) -> Result<rge_core::train::TrainReport, CliError> {
    let (scene, traj) = ctx.world();
    let (train_views, _) = ctx.split_original(&scene, &traj);
    let tcfg = ctx.cfg.train_cfg();
    let confs: Vec<ImageGray> = maps.iter().map(|m| m.values.clone()).collect();
    let report = phase2_train(
        gaussians,
        &plain_views(&train_views),
        priors,
        &confs,
        &tcfg,
        tcfg.phase2_iters(),
    )?;
    Ok(report)
}

fn cmd_train_phase2(ctx: &Ctx) -> Result<(), CliError> {
    let model = read_checkpoint(&ctx.require("model_joint.ckpt", "train-reward")?)?;
    let priors = load_priors(ctx)?;
    let maps = load_frozen_maps(ctx, &priors)?;
    let mut gaussians = model.gaussians;
    let report = run_phase2(ctx, &mut gaussians, &priors, &maps)?;
    write_checkpoint(
        &SceneCheckpoint {
            gaussians,
            sh_degree: 0,
            desk_scale: ctx.cfg.train.desk_scale as f32,
            seed: ctx.cfg.seed,
        },
        &ctx.out("model_phase2.ckpt"),
    )?;
    println!(
        "train phase 2: {} iterations, {} gaussians, final loss {:.6}",
        report.iterations, report.gaussians, report.final_loss
    );
    Ok(())
}

fn cmd_expand(ctx: &Ctx) -> Result<(), CliError> {
    let model = read_checkpoint(&ctx.require("model_joint.ckpt", "train-reward")?)?;
    let priors = load_priors(ctx)?;
    let maps = load_frozen_maps(ctx, &priors)?;
    let (scene, traj) = ctx.world();
    let (train_views, _) = ctx.split_original(&scene, &traj);
    let tcfg = ctx.cfg.train_cfg();
    let mut gaussians = model.gaussians;

    let (mature, immature) = classify_maturity(&mut gaussians, &plain_views(&train_views), &tcfg)?;

    // calibrate the depth estimate against the model's own rendered depth,
    // then seed Gaussians for uncovered prior pixels
    let cloud = sample_pointcloud(
        &scene,
        traj.original(),
        ctx.cfg.priors.pointcloud_stride,
        ctx.cfg.priors.pointcloud_cap,
    );
    let per_view_cap = (tcfg.init_points() / priors.len().max(1)).max(1);
    let mut seeded = 0;
    for p in &priors {
        let est = read_pfm(&ctx.require(&format!("depth_{}.pfm", p.view_id), "synth-priors")?)?;
        let est_valid = read_pgm_mask(&ctx.require(&format!("depth_valid_{}.pgm", p.view_id), "synth-priors")?)?;
        let (model_depth, model_valid) = render_depth(&gaussians, &p.cam, &RenderOptions::default());
        let scale = match calibrate_scale(&est, &est_valid, &model_depth, &model_valid, MIN_CALIB_OVERLAP) {
            Ok(s) => s,
            // a barely-covered view cannot be calibrated; fall back to unit scale
            Err(TrainError::InsufficientOverlap { .. }) => 1.0,
            Err(e) => return Err(e.into()),
        };
        seeded += init_missing(&mut gaussians, &cloud, p, &est, &est_valid, scale, per_view_cap);
    }

    let report = run_phase2(ctx, &mut gaussians, &priors, &maps)?;
    write_checkpoint(
        &SceneCheckpoint {
            gaussians,
            sh_degree: 0,
            desk_scale: tcfg.desk_scale as f32,
            seed: ctx.cfg.seed,
        },
        &ctx.out("model_final.ckpt"),
    )?;
    let mut extra = BTreeMap::new();
    extra.insert("mature".into(), mature.into());
    extra.insert("immature".into(), immature.into());
    extra.insert("seeded".into(), seeded.into());
    extra.insert("iterations".into(), report.iterations.into());
    extra.insert("final_loss".into(), report.final_loss.into());
    extra.insert("gaussians".into(), report.gaussians.into());
    ctx.write_meta("expand_meta.json", extra)?;
    println!(
        "expand: {mature} mature / {immature} immature, {seeded} seeded, {} gaussians after phase 2",
        report.gaussians
    );
    Ok(())
}

fn cmd_eval(ctx: &Ctx) -> Result<(), CliError> {
    let model_path = ctx.require("model_final.ckpt", "expand")?;
    let model = read_checkpoint(&model_path)?;
    let (scene, traj) = ctx.world();
    let (_, held) = ctx.split_original(&scene, &traj);
    let opts = RenderOptions::default();
    let mae_thr = ctx.cfg.eval.mae_threshold;

    let mut views = Vec::new();
    // held-out original-lane views
    for (id, cam, gt) in &held {
        let out = render(&model.gaussians, cam, &opts).rgb;
        views.push(ViewMetrics {
            view_id: id.clone(),
            lane_tag: cam.lane_tag.clone(),
            psnr: psnr(&out, gt),
            ssim: ssim(&out, gt),
            reward_auroc: None,
            masked_mae: None,
        });
    }
    // shifted-lane views against GT, with reward diagnostics where a frozen
    // map and artifact mask exist
    for lane in traj.lanes.iter().filter(|l| l.offset != 0.0) {
        for (id, cam) in &lane.views {
            let gt = render(&scene.gaussians, cam, &opts).rgb;
            let out = render(&model.gaussians, cam, &opts).rgb;
            let map_path = ctx.out(&format!("reward_{id}.pfm"));
            let mask_path = ctx.out(&format!("mask_{id}.pgm"));
            let (auroc, mmae) = if map_path.exists() && mask_path.exists() {
                let conf = read_pfm(&map_path)?;
                let mask = read_pgm_mask(&mask_path)?;
                let a = reward_auroc(&conf, &mask);
                let m = masked_mae(&out, &gt, &conf, mae_thr).ok();
                (Some(a), m)
            } else {
                (None, None)
            };
            views.push(ViewMetrics {
                view_id: id.clone(),
                lane_tag: cam.lane_tag.clone(),
                psnr: psnr(&out, &gt),
                ssim: ssim(&out, &gt),
                reward_auroc: auroc,
                masked_mae: mmae,
            });
        }
    }

    // wall-clock deliberately zeroed: reports must be bit-identical across
    // reruns of identical inputs
    let report = MetricReport::aggregate(ctx.cfg.seed, ctx.hash.clone(), views, model.gaussians.len(), 0.0);
    let tag = format!("{}_{}", ctx.cfg.seed, &ctx.hash[..8]);
    let mut lines = String::new();
    for v in &report.views {
        lines.push_str(&serde_json::to_string(v).map_err(|e| CliError::Other(format!("{e}")))?);
        lines.push('\n');
    }
    rge_core::io::atomic_write(&ctx.out(&format!("eval_views_{tag}.jsonl")), lines.as_bytes())?;
    let summary = serde_json::to_vec_pretty(&report).map_err(|e| CliError::Other(format!("{e}")))?;
    rge_core::io::atomic_write(&ctx.out(&format!("eval_summary_{tag}.json")), &summary)?;
    println!(
        "eval: mean PSNR {:.2} dB, mean SSIM {:.4} over {} views",
        report.mean_psnr,
        report.mean_ssim,
        report.views.len()
    );
    Ok(())
}

/// Deterministic per-view seed component (FNV-1a over the id bytes).
fn stable_id_hash(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}
