//! Command implementations behind the `voxact` binary.

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Duration;
use voxact::config::{ConfigError, DetectorMode, PolicyKind, RunConfig};
use voxact::demos::read_episode;
use voxact::detector::{DetectError, Detector};
use voxact::eval::{evaluate_records, write_csv, EvalError, EvalMetrics};
use voxact::pipeline::{self, PipelineError};
use voxact::policy::{KnnModel, Policy, PolicyError};
use voxact::roles::{AlphaMode, Task};
use voxact::sim::{oracle_plan, run_episode, NullPolicy, OraclePolicy, Outcome, ToyScene};
use voxact::voxel::{write_dump, VoxelGrid};

pub const ACTING_MODEL: &str = "acting.knn";
pub const STABILIZING_MODEL: &str = "stabilizing.knn";

#[derive(Debug, Parser)]
#[command(name = "voxact", version, about = "Object-centric voxel toolkit for bimanual keyframe policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scripted demonstrations and detector fixtures.
    GenDemos(GenArgs),
    /// Fit the acting and stabilizing k-NN models.
    Fit(CommonArgs),
    /// Score the models on a dataset's keyframes.
    Evaluate(EvalArgs),
    /// Run closed-loop toy episodes on a dataset's scenes.
    Rollout(RolloutArgs),
    /// Print the crop and occupancy histogram of one episode.
    InspectGrid(InspectArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Fixture,
    Service,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Knn,
    Oracle,
    Null,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub task: Option<String>,
    /// Fixed crop fraction (overrides the configured alpha mode).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub detector_mode: Option<ModeArg>,
    /// Report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub jitter_voxels: Option<u32>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Also write per-prediction rows here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub max_keyframes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 0)]
    pub episode: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("external service error: {0}")]
    Service(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Service(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Config(_) => CliError::Config(e.to_string()),
            PipelineError::Detect { source: DetectError::Unreachable { .. } | DetectError::Service(_), .. } => {
                CliError::Service(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Load the config file (if any) and apply flag overrides.
pub fn resolve_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = &args.task {
        cfg.task = t.parse::<Task>().map_err(|e| CliError::Config(e.to_string()))?;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = AlphaMode::Fixed { alpha: a };
    }
    if let Some(m) = args.detector_mode {
        cfg.detector.mode = match m {
            ModeArg::Fixture => DetectorMode::Fixture,
            ModeArg::Service => DetectorMode::Service,
        };
    }
    for (flag, slot) in [
        (&args.out, &mut cfg.paths.out),
        (&args.data, &mut cfg.paths.data),
        (&args.eval_data, &mut cfg.paths.eval_data),
        (&args.model, &mut cfg.paths.model),
    ] {
        if let Some(p) = flag {
            *slot = p.clone();
        }
    }
    Ok(cfg)
}

/// Detector for a dataset directory. `FIXTURE_DIR` and `DETECTOR_ENDPOINT`
/// override the config; in service mode a set `FIXTURE_DIR` becomes the
/// fallback when the service is unreachable.
pub fn build_detector(cfg: &RunConfig, dataset: &Path) -> Result<Detector, CliError> {
    let env_fixtures = std::env::var_os("FIXTURE_DIR").map(PathBuf::from);
    match cfg.detector.mode {
        DetectorMode::Fixture => {
            let dir = env_fixtures.or_else(|| cfg.detector.fixture_dir.clone()).unwrap_or_else(|| dataset.to_path_buf());
            Ok(Detector::Fixture(dir))
        }
        DetectorMode::Service => {
            let endpoint = std::env::var("DETECTOR_ENDPOINT")
                .ok()
                .or_else(|| cfg.detector.endpoint.clone())
                .ok_or_else(|| CliError::Config("service mode needs DETECTOR_ENDPOINT or detector.endpoint".into()))?;
            let service = Detector::Service {
                endpoint: endpoint.trim_end_matches('/').to_string(),
                timeout: Duration::from_secs(cfg.detector.timeout_secs),
            };
            Ok(match env_fixtures {
                Some(fixtures) => Detector::WithFallback { primary: Box::new(service), fixtures },
                None => service,
            })
        }
    }
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    config: &'a RunConfig,
    result: T,
}

/// Write `<out>/<command>.json` with the config echoed alongside the result.
fn write_report<T: Serialize>(cfg: &RunConfig, command: &str, result: T) -> Result<PathBuf, CliError> {
    let dir = &cfg.paths.out;
    std::fs::create_dir_all(dir).map_err(|e| data_err(dir, e))?;
    let path = dir.join(format!("{command}.json"));
    let text = serde_json::to_string_pretty(&Report { command, config: cfg, result }).expect("report serializes");
    std::fs::write(&path, text).map_err(|e| data_err(&path, e))?;
    Ok(path)
}

#[derive(Serialize)]
struct GenResult {
    episodes: usize,
    left_acting: usize,
    right_acting: usize,
    dataset: PathBuf,
}

pub fn gen_demos(args: &GenArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(&args.common)?;
    if let Some(n) = args.episodes {
        cfg.demos.episodes = n;
    }
    if let Some(j) = args.jitter_voxels {
        cfg.demos.jitter_voxels = j;
    }
    cfg.validate()?;
    let scenes = pipeline::generate_dataset(&cfg, &cfg.paths.data)?;
    let left = scenes.iter().filter(|s| s.tag == voxact::action::GoalTag::LeftActing).count();
    let result = GenResult { episodes: scenes.len(), left_acting: left, right_acting: scenes.len() - left, dataset: cfg.paths.data.clone() };
    println!(
        "gen-demos: {} {} episodes ({} left-acting, {} right-acting) -> {}",
        result.episodes,
        cfg.task,
        result.left_acting,
        result.right_acting,
        cfg.paths.data.display()
    );
    write_report(&cfg, "gen-demos", result)?;
    Ok(())
}

pub fn fit(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    cfg.validate()?;
    let detector = build_detector(&cfg, &cfg.paths.data)?;
    let train: Vec<_> = pipeline::load_samples(&cfg.paths.data, &detector, &cfg)?.into_iter().flatten().collect();
    let (acting, stabilizing, selection) = pipeline::fit_models(&train, &cfg)?;
    let dir = &cfg.paths.model;
    std::fs::create_dir_all(dir).map_err(|e| data_err(dir, e))?;
    acting.save(&dir.join(ACTING_MODEL))?;
    stabilizing.save(&dir.join(STABILIZING_MODEL))?;
    println!(
        "fit: {} samples, factors acting={} stabilizing={} after {} evaluations -> {}",
        selection.n_train,
        selection.acting_factor,
        selection.stabilizing_factor,
        selection.evaluations,
        dir.display()
    );
    write_report(&cfg, "fit", selection)?;
    Ok(())
}

fn load_models(cfg: &RunConfig) -> Result<(KnnModel, KnnModel), CliError> {
    let load = |name: &str| KnnModel::load(&cfg.paths.model.join(name)).map_err(|e| data_err(&cfg.paths.model.join(name), e));
    Ok((load(ACTING_MODEL)?, load(STABILIZING_MODEL)?))
}

pub fn evaluate(args: &EvalArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&args.common)?;
    cfg.validate()?;
    let (acting, stabilizing) = load_models(&cfg)?;
    let detector = build_detector(&cfg, &cfg.paths.eval_data)?;
    let data: Vec<_> = pipeline::load_samples(&cfg.paths.eval_data, &detector, &cfg)?.into_iter().flatten().collect();
    let records = evaluate_records(&acting, &stabilizing, &data)?;
    let metrics = EvalMetrics::from_records(&records)?;
    if let Some(path) = &args.csv {
        let file = std::fs::File::create(path).map_err(|e| data_err(path, e))?;
        write_csv(&records, file)?;
    }
    println!("evaluate: {}", serde_json::to_string(&metrics).expect("metrics serialize"));
    write_report(&cfg, "evaluate", metrics)?;
    Ok(())
}

#[derive(Serialize)]
struct RolloutResult {
    policy: PolicyKind,
    episodes: usize,
    successes: usize,
    success_rate: f64,
    outcomes: Vec<Outcome>,
}

pub fn rollout(args: &RolloutArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(&args.common)?;
    if let Some(p) = args.policy {
        cfg.rollout.policy = match p {
            PolicyArg::Knn => PolicyKind::Knn,
            PolicyArg::Oracle => PolicyKind::Oracle,
            PolicyArg::Null => PolicyKind::Null,
        };
    }
    if let Some(n) = args.episodes {
        cfg.rollout.episodes = n;
    }
    if let Some(k) = args.max_keyframes {
        cfg.rollout.max_keyframes = k;
    }
    cfg.validate()?;
    let rollout_cfg = cfg.rollout_config()?;
    let mut scenes = pipeline::read_scenes(&cfg.paths.eval_data)?;
    if cfg.rollout.episodes > 0 {
        scenes.truncate(cfg.rollout.episodes);
    }
    if scenes.is_empty() {
        return Err(CliError::Data(format!("no scenes in {}", cfg.paths.eval_data.display())));
    }
    let detector = build_detector(&cfg, &cfg.paths.eval_data)?;
    let models = match cfg.rollout.policy {
        PolicyKind::Knn => Some(load_models(&cfg)?),
        _ => None,
    };
    let bin_width = cfg.grid.bin_width;
    let outcomes: Vec<Outcome> = scenes
        .par_iter()
        .map(|s| -> Result<Outcome, CliError> {
            let scene = ToyScene::new(s.params).map_err(|e| CliError::Data(format!("scene {}: {e}", s.episode)))?;
            let out = match (&models, cfg.rollout.policy) {
                (Some((a, st)), _) => run_episode(a, st, scene, &detector, &rollout_cfg),
                (None, PolicyKind::Oracle) => {
                    let oracle = OraclePolicy { plan: oracle_plan(&scene, s.tag), bin_width };
                    run_episode(&oracle, &oracle, scene, &detector, &rollout_cfg)
                }
                (None, _) => {
                    let null = NullPolicy { bin_width };
                    let p: &dyn Policy = &null;
                    run_episode(p, p, scene, &detector, &rollout_cfg)
                }
            };
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    let successes = outcomes.iter().filter(|o| o.success).count();
    let result = RolloutResult {
        policy: cfg.rollout.policy,
        episodes: outcomes.len(),
        successes,
        success_rate: successes as f64 / outcomes.len() as f64,
        outcomes,
    };
    println!("rollout: {}/{} successful (rate {:.3})", successes, result.episodes, result.success_rate);
    write_report(&cfg, "rollout", result)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct HistogramBin {
    /// Inclusive occupancy range.
    pub min: u32,
    pub max: u32,
    pub voxels: usize,
}

/// Voxel counts by occupancy: `0`, `1`, `2..=3`, `4..=7`, ...
pub fn occupancy_histogram(grid: &VoxelGrid) -> Vec<HistogramBin> {
    let mut bins: Vec<HistogramBin> = Vec::new();
    for &c in &grid.occupancy {
        let k = if c == 0 { 0 } else { 32 - c.leading_zeros() as usize };
        while bins.len() <= k {
            let i = bins.len() as u32;
            let (min, max) = if i == 0 { (0, 0) } else { (1u32 << (i - 1), (1u64 << i).saturating_sub(1).min(u32::MAX as u64) as u32) };
            bins.push(HistogramBin { min, max, voxels: 0 });
        }
        bins[k].voxels += 1;
    }
    bins
}

#[derive(Serialize)]
struct InspectResult {
    episode: usize,
    origin: [f64; 3],
    span: [f64; 3],
    dims: [usize; 3],
    alpha: f64,
    voxels_per_meter: [f64; 3],
    points: u64,
    occupied: usize,
    histogram: Vec<HistogramBin>,
}

pub fn inspect_grid(args: &InspectArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&args.common)?;
    cfg.validate()?;
    let dir = cfg.paths.data.join(format!("episode_{}", args.episode));
    let ep = read_episode(&dir).map_err(|e| data_err(&dir, e))?;
    let detector = build_detector(&cfg, &cfg.paths.data)?;
    let samples = pipeline::episode_samples(&ep, args.episode, &detector, &cfg)?;
    let first = samples.first().ok_or_else(|| CliError::Data(format!("{}: no usable keyframes", dir.display())))?;
    let grid = &first.observation;
    let s = grid.spec;
    let result = InspectResult {
        episode: args.episode,
        origin: s.origin.into(),
        span: s.span.into(),
        dims: s.dims,
        alpha: s.alpha,
        voxels_per_meter: s.resolution().into(),
        points: grid.total_occupancy(),
        occupied: grid.occupied_voxels(),
        histogram: occupancy_histogram(grid),
    };
    println!("grid: origin {:?} span {:?} dims {:?} alpha {}", result.origin, result.span, result.dims, result.alpha);
    println!("resolution: {:?} voxels/m; {} points in {} voxels", result.voxels_per_meter, result.points, result.occupied);
    for b in &result.histogram {
        println!("  occupancy {:>5}..={:<5} {:>8}", b.min, b.max, b.voxels);
    }
    std::fs::create_dir_all(&cfg.paths.out).map_err(|e| data_err(&cfg.paths.out, e))?;
    let dump = cfg.paths.out.join("inspect-grid.vox");
    let file = std::fs::File::create(&dump).map_err(|e| data_err(&dump, e))?;
    write_dump(grid, std::io::BufWriter::new(file)).map_err(|e| data_err(&dump, e))?;
    write_report(&cfg, "inspect-grid", result)?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenDemos(a) => gen_demos(a),
        Command::Fit(a) => fit(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Rollout(a) => rollout(a),
        Command::InspectGrid(a) => inspect_grid(a),
    }
}
