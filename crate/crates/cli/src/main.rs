use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use scanseg::globalmap::read_snapshot;
use scanseg::metrics::{EvalPair, MetricsReport};
use scanseg::network::{
    loss_history_csv, train, AdamState, Checkpoint, EpochStats, TrainConfig, TrainState,
};
use scanseg::pipeline::{self, stage_training_batches, PipelineConfig, RunOutput};
use scanseg::pointcloud::{
    export_colored, load_environment, pca_to_rgb, write_environment, ClassLegend, ColorSource,
};
use scanseg::raytrace::{
    build_occupancy, load_trajectory, simulate_trajectory, write_scan_dataset, ScanDataset,
    ScanParams, DEFAULT_CELL_SIZE, DEFAULT_MAX_RANGE, DEFAULT_SPACING,
};
use scanseg::synthetic;
use scanseg::Vec3;

#[derive(Parser)]
#[command(name = "scanseg", version, about = "Incremental semantic and instance segmentation of simulated laser scans")]
struct Cli {
    /// Seed for every random stream
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled environment and its trajectories
    GenEnv(GenEnvArgs),
    /// Ray-trace scans along a trajectory
    GenScans(GenScansArgs),
    /// Train a network on a scan dataset
    Train(TrainArgs),
    /// Run incremental segmentation over a scan dataset
    Segment(SegmentArgs),
    /// Score a map snapshot
    Eval(EvalArgs),
    /// Accuracy and speed as a function of the context point count
    SweepContext(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    TwoRoom,
    Corridor,
    TinyBox,
}

#[derive(Args)]
struct GenEnvArgs {
    /// Output environment file
    out: PathBuf,
    #[arg(long, value_enum, default_value = "two-room")]
    scene: SceneKind,
    /// Waypoints of the training path
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Waypoints of the held-out path
    #[arg(long)]
    test_trajectory: Option<PathBuf>,
    /// Corridor length in meters
    #[arg(long, default_value_t = 20.0)]
    length: f64,
}

#[derive(Args)]
struct GenScansArgs {
    env: PathBuf,
    trajectory: PathBuf,
    out_dir: PathBuf,
    /// Distance between scans along the path in meters
    #[arg(long, default_value_t = DEFAULT_SPACING)]
    spacing: f64,
    /// Angular resolution in degrees, both axes
    #[arg(long, default_value_t = 1.0)]
    resolution: f64,
    #[arg(long, default_value_t = DEFAULT_CELL_SIZE)]
    cell_size: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_RANGE)]
    max_range: f64,
}

#[derive(Args)]
struct SceneArgs {
    /// Keep points within this distance of the sensor (meters)
    #[arg(long, default_value_t = pipeline::DEFAULT_RADIUS)]
    radius: f64,
    /// Measure the radius in 3D instead of the horizontal plane
    #[arg(long)]
    vertical: bool,
    /// Floor height; defaults to the value in the manifest
    #[arg(long)]
    floor_z: Option<f64>,
}

impl SceneArgs {
    fn floor_z(&self, dataset: &ScanDataset) -> Result<f64> {
        self.floor_z
            .or(dataset.floor_z)
            .context("manifest has no floor_z header; pass --floor-z")
    }
}

#[derive(Args)]
struct TrainArgs {
    dataset: PathBuf,
    out_checkpoint: PathBuf,
    /// key=value training config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from this checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
    /// [default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Points per batch [default: 256]
    #[arg(long)]
    batch_n: Option<usize>,
    /// Context points per point [default: 50]
    #[arg(long)]
    context_m: Option<usize>,
    /// Use multi-scale context pooling [default: true]
    #[arg(long, action = ArgAction::Set)]
    use_mcp: Option<bool>,
    /// Loss history CSV [default: <checkpoint>.loss.csv]
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[command(flatten)]
    scene: SceneArgs,
}

#[derive(Args)]
struct SegmentArgs {
    dataset: PathBuf,
    checkpoint: PathBuf,
    out_dir: PathBuf,
    /// Cosine similarity a new point needs to join a cluster
    #[arg(long, default_value_t = 0.9)]
    beta: f64,
    #[arg(long, default_value_t = 256)]
    batch_n: usize,
    #[arg(long, default_value_t = 50)]
    context_m: usize,
    #[command(flatten)]
    scene: SceneArgs,
}

#[derive(Args)]
struct EvalArgs {
    snapshot: PathBuf,
    out_report: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    dataset: PathBuf,
    /// Checkpoint path; `{M}` is replaced by each context count
    checkpoint: String,
    out_csv: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 10, 25, 50])]
    m: Vec<usize>,
    /// Runs per M; the fastest is reported
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0.9)]
    beta: f64,
    #[command(flatten)]
    scene: SceneArgs,
}

fn write_waypoints(path: &Path, points: &[Vec3]) -> Result<()> {
    let text: String = points.iter().map(|p| format!("{} {} {}\n", p.x, p.y, p.z)).collect();
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen_env(args: &GenEnvArgs, seed: u64) -> Result<()> {
    let scene = match args.scene {
        SceneKind::TwoRoom => synthetic::two_room_scene(seed)?,
        SceneKind::Corridor => synthetic::corridor_scene(seed, args.length)?,
        SceneKind::TinyBox => synthetic::Scene {
            env: synthetic::tiny_box(seed)?,
            train_path: vec![Vec3::new(0.3, 0.5, 0.5), Vec3::new(0.7, 0.5, 0.5)],
            test_path: vec![Vec3::new(0.5, 0.3, 0.5), Vec3::new(0.5, 0.7, 0.5)],
        },
    };
    write_environment(&scene.env, &args.out)?;
    if let Some(p) = &args.trajectory {
        write_waypoints(p, &scene.train_path)?;
    }
    if let Some(p) = &args.test_trajectory {
        write_waypoints(p, &scene.test_path)?;
    }
    println!("{} points", scene.env.points.len());
    Ok(())
}

fn gen_scans(args: &GenScansArgs) -> Result<()> {
    let env = load_environment(&args.env)?;
    let path = load_trajectory(&args.trajectory)?;
    let index = build_occupancy(&env, args.cell_size)?;
    let params = ScanParams {
        h_res: args.resolution,
        v_res: args.resolution,
        max_range: args.max_range,
    };
    let scans = simulate_trajectory(&path, args.spacing, &index, &params)?;
    write_scan_dataset(&args.out_dir, &scans, env.floor_z)?;
    println!("{} scans", scans.len());
    Ok(())
}

fn pipeline_config(scene: &SceneArgs, batch_n: usize, context_m: usize, use_mcp: bool, seed: u64) -> PipelineConfig {
    PipelineConfig {
        radius: scene.radius,
        horizontal: !scene.vertical,
        batch_n,
        context_m,
        use_mcp,
        seed,
        ..Default::default()
    }
}

fn train_cmd(args: &TrainArgs, seed: u64) -> Result<()> {
    let mut config = TrainConfig {
        seed,
        ..Default::default()
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        config.apply_text(&text, path)?;
    }
    let resumed = args.resume.as_ref().map(Checkpoint::load).transpose()?;
    if let Some(ck) = &resumed {
        config.use_mcp = ck.params.use_mcp();
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.lr {
        config.lr = v;
    }
    if let Some(v) = args.batch_n {
        config.batch_n = v;
    }
    if let Some(v) = args.context_m {
        config.context_m = v;
    }
    if let Some(v) = args.use_mcp {
        config.use_mcp = v;
    }
    config.validate()?;

    let mut state = match resumed {
        Some(ck) => {
            if ck.params.use_mcp() != config.use_mcp {
                bail!("checkpoint use_mcp={} conflicts with --use-mcp {}", ck.params.use_mcp(), config.use_mcp);
            }
            let adam = ck.adam.unwrap_or_else(|| AdamState::new(&ck.params, config.lr));
            TrainState {
                params: ck.params,
                adam,
                epochs_completed: ck.epochs_completed,
            }
        }
        None => TrainState::fresh(&config),
    };

    let dataset = ScanDataset::open(&args.dataset)?;
    let floor_z = args.scene.floor_z(&dataset)?;
    let scans = dataset.load_all()?;
    let pc = pipeline_config(&args.scene, config.batch_n, config.context_m, config.use_mcp, config.seed);
    let batches = stage_training_batches(&scans, floor_z, &pc)?;

    let save = |state: &TrainState, path: &Path| -> scanseg::Result<()> {
        Checkpoint {
            params: state.params.clone(),
            adam: Some(state.adam.clone()),
            epochs_completed: state.epochs_completed,
        }
        .save(path)
    };
    let every = config.checkpoint_every;
    let out = args.out_checkpoint.clone();
    let history: Vec<EpochStats> = train(&batches, &config, &mut state, |st, e| {
        eprintln!(
            "epoch {} loss {:.4} (class {:.4}, triplet {:.4}) acc {:.4}",
            e.epoch, e.total, e.classification, e.triplet, e.accuracy
        );
        if every > 0 && st.epochs_completed % every == 0 {
            save(st, &out)?;
        }
        Ok(())
    })?;
    save(&state, &args.out_checkpoint)?;
    let loss_path = args.loss_csv.clone().unwrap_or_else(|| {
        let mut s = args.out_checkpoint.clone().into_os_string();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    pipeline::write_text(&loss_path, &loss_history_csv(&history))?;
    Ok(())
}

fn segment_run(dataset: &ScanDataset, checkpoint: &Checkpoint, pc: &PipelineConfig, scene: &SceneArgs) -> Result<RunOutput> {
    let floor_z = scene.floor_z(dataset)?;
    Ok(pipeline::run(dataset, floor_z, &checkpoint.params, pc)?)
}

fn segment(args: &SegmentArgs, seed: u64) -> Result<()> {
    let dataset = ScanDataset::open(&args.dataset)?;
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let mut pc = pipeline_config(&args.scene, args.batch_n, args.context_m, checkpoint.params.use_mcp(), seed);
    pc.beta = args.beta;
    let out = segment_run(&dataset, &checkpoint, &pc, &args.scene)?;

    let dir = &args.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    out.map.write_snapshot(dir.join("snapshot.txt"))?;
    pipeline::write_text(dir.join("stats.csv"), &pipeline::stats_csv(&out.stats))?;
    pipeline::write_text(dir.join("timing.csv"), &pipeline::timing_csv(&out.stats))?;

    let legend = ClassLegend::default();
    let labeled: Vec<_> = out
        .map
        .points()
        .iter()
        .filter(|p| p.pred_class.is_some() && p.instance_id.is_some() && p.last_embedding.is_some())
        .collect();
    let classes: Vec<_> = labeled
        .iter()
        .map(|p| (p.position, ColorSource::Class(p.pred_class.unwrap())))
        .collect();
    export_colored(&classes, &legend, dir.join("classes.ply"))?;
    let instances: Vec<_> = labeled
        .iter()
        .map(|p| (p.position, ColorSource::Instance(p.instance_id.unwrap())))
        .collect();
    export_colored(&instances, &legend, dir.join("instances.ply"))?;
    let embeddings: Vec<Vec<f64>> = labeled
        .iter()
        .map(|p| p.last_embedding.clone().unwrap())
        .collect();
    let rgb = pca_to_rgb(&embeddings);
    let colored: Vec<_> = labeled
        .iter()
        .zip(rgb)
        .map(|(p, c)| (p.position, ColorSource::Embedding(c)))
        .collect();
    export_colored(&colored, &legend, dir.join("embedding.ply"))?;

    if let Some(report) = &out.report {
        report.write(&legend, dir.join("report.csv"))?;
        println!(
            "pointAcc {:.4} meanIOU {:.4} NMI {:.4} ARI {:.4}",
            report.point_accuracy, report.iou.mean, report.nmi, report.ari
        );
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let rows = read_snapshot(&args.snapshot)?;
    let pair = EvalPair::from_snapshot(&rows)?;
    let report = MetricsReport::compute(&pair);
    report.write(&ClassLegend::default(), &args.out_report)?;
    println!(
        "meanIOU {:.6} pointAcc {:.6} objAcc {:.6} NMI {:.6} AMI {:.6} ARI {:.6}",
        report.iou.mean, report.point_accuracy, report.object_accuracy, report.nmi, report.ami, report.ari
    );
    Ok(())
}

fn sweep_context(args: &SweepArgs, seed: u64) -> Result<()> {
    if args.m.is_empty() || args.repeats == 0 {
        bail!("need at least one M value and one repeat");
    }
    let dataset = ScanDataset::open(&args.dataset)?;
    let mut csv = String::from("M,accuracy,scans_per_sec\n");
    for &m in &args.m {
        let path = args.checkpoint.replace("{M}", &m.to_string());
        let checkpoint = Checkpoint::load(&path)?;
        let mut pc = pipeline_config(&args.scene, 256, m, checkpoint.params.use_mcp(), seed);
        pc.beta = args.beta;
        let mut best = f64::INFINITY;
        let mut accuracy = 0.0;
        for _ in 0..args.repeats {
            let t = Instant::now();
            let out = segment_run(&dataset, &checkpoint, &pc, &args.scene)?;
            best = best.min(t.elapsed().as_secs_f64());
            accuracy = out.report.map_or(0.0, |r| r.point_accuracy);
        }
        let rate = dataset.len() as f64 / best;
        csv.push_str(&format!("{m},{accuracy:.6},{rate:.6}\n"));
        eprintln!("M {m}: accuracy {accuracy:.4}, {rate:.2} scans/s");
    }
    pipeline::write_text(&args.out_csv, &csv)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenEnv(a) => gen_env(a, cli.seed),
        Command::GenScans(a) => gen_scans(a),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Segment(a) => segment(a, cli.seed),
        Command::Eval(a) => eval(a),
        Command::SweepContext(a) => sweep_context(a, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scanseg: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
