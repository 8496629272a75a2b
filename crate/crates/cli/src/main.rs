//! Command-line harness: pipeline runs, accuracy scoring, timing benchmarks,
//! and synthetic scenario materialization.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use sweeptrack::ingest::{Shape, SyntheticObject, SyntheticScenario};
use sweeptrack::pipeline::{
    dbscan_scaling_probe, materialize_scenario, read_ground_truth, read_track_log, run_pipeline,
    score_accuracy, AccuracyReport, PipelineConfig, PipelineError, PoseMode,
};

#[derive(Parser)]
#[command(
    name = "sweeptrack",
    version,
    about = "Training-free LiDAR object identification and tracking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the tracking pipeline over a configured frame source.
    Run(RunArgs),
    /// Score identity-preservation accuracy from a track log plus ground truth.
    Score(ScoreArgs),
    /// Measure per-stage frame times on a dense synthetic scene.
    Bench(BenchArgs),
    /// Materialize a synthetic scenario to disk in the KITTI raw layout.
    Gen(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Process at most this many frames.
    #[arg(long)]
    frames: Option<u64>,
    /// Use nav records directly instead of the EKF.
    #[arg(long)]
    pose_passthrough: bool,
}

#[derive(Args)]
struct ScoreArgs {
    /// tracks.log from a run.
    #[arg(long)]
    tracks: PathBuf,
    /// ground_truth.jsonl from a run or from `gen`.
    #[arg(long)]
    truth: PathBuf,
    /// Match radius in meters.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Approximate points per synthetic frame.
    #[arg(long, default_value_t = 100_000)]
    points: usize,
    /// Frames to average over.
    #[arg(long, default_value_t = 5)]
    frames: u64,
    /// Seed for the benchmark scene.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Base size for the clustering scaling probe (n vs 2n).
    #[arg(long, default_value_t = 50_000)]
    scaling_n: usize,
    /// Keep benchmark artifacts here instead of a temp directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for the materialized drive.
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn print_accuracy(report: &AccuracyReport) {
    println!(
        "identity-preservation accuracy over {} frames:",
        report.per_frame.len()
    );
    println!(
        "  median {:.4}  q1 {:.4}  q3 {:.4}  min {:.4}  max {:.4}",
        report.median, report.q1, report.q3, report.min, report.max
    );
}

fn cmd_run(args: RunArgs) -> Result<(), PipelineError> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.rng_seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if args.frames.is_some() {
        cfg.frames = args.frames;
    }
    if args.pose_passthrough {
        cfg.pose_mode = PoseMode::Passthrough;
    }

    let summary = run_pipeline(&cfg)?;
    println!(
        "processed {} frames, {} tracks created, {} super frames, {} discards",
        summary.frames,
        summary.tracks_created,
        summary.superframes_written,
        summary.discards.len()
    );
    for d in &summary.discards {
        println!(
            "  discarded track {} at frame {} (confidence {:.4})",
            d.id, d.frame, d.confidence
        );
    }
    println!("{}", summary.timing_report);
    if let Some(accuracy) = &summary.accuracy {
        print_accuracy(accuracy);
    }
    println!("artifacts under {}", summary.output_dir.display());
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<(), PipelineError> {
    let records = read_track_log(&args.tracks)?;
    let truth = read_ground_truth(&args.truth)?;
    let report = score_accuracy(&records, &truth, args.radius)?;
    print_accuracy(&report);
    Ok(())
}

fn bench_scenario(points: usize, frames: u64) -> SyntheticScenario {
    let per_object = 1000usize;
    let objects = vec![
        SyntheticObject {
            shape: Shape::Cylinder,
            size: [0.4, 0.0, 1.8],
            position: [10.0, 2.0, -0.7],
            velocity: [4.0, 0.0, 0.0],
        },
        SyntheticObject {
            shape: Shape::Cylinder,
            size: [0.4, 0.0, 1.8],
            position: [10.0, -2.0, -0.7],
            velocity: [4.0, 0.0, 0.0],
        },
        SyntheticObject {
            shape: Shape::Box,
            size: [4.0, 1.8, 1.5],
            position: [35.0, -5.0, -0.85],
            velocity: [-8.0, 0.0, 0.0],
        },
    ];
    SyntheticScenario {
        ground_points: points.saturating_sub(objects.len() * per_object),
        points_per_object: per_object,
        ground_extent: 45.0,
        objects,
        frames,
        ..SyntheticScenario::default()
    }
}

fn cmd_bench(args: BenchArgs) -> Result<(), PipelineError> {
    let tmp;
    let out_dir = match &args.out {
        Some(dir) => dir.clone(),
        None => {
            tmp = std::env::temp_dir().join(format!("sweeptrack-bench-{}", std::process::id()));
            tmp.clone()
        }
    };

    let scenario = bench_scenario(args.points, args.frames);
    let scenario_path = out_dir.join("bench_scenario.toml");
    std::fs::create_dir_all(&out_dir).map_err(|e| PipelineError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    std::fs::write(
        &scenario_path,
        toml::to_string(&scenario).map_err(|e| PipelineError::Config(e.to_string()))?,
    )
    .map_err(|e| PipelineError::Io {
        path: scenario_path.display().to_string(),
        source: e,
    })?;

    let mut cfg = PipelineConfig::for_synthetic(&scenario_path);
    cfg.rng_seed = args.seed;
    cfg.output_dir = out_dir.join("bench_out");

    println!(
        "benchmarking {} frames of ~{} points each...",
        args.frames, args.points
    );
    let summary = run_pipeline(&cfg)?;
    println!("{}", summary.timing_report);
    println!("reference baseline: 153.4615 ms (6.5 Hz) on a 2-core Intel i7 2.7 GHz");

    println!(
        "\nclustering scaling probe (constant density, n = {} vs {}):",
        args.scaling_n,
        2 * args.scaling_n
    );
    let (small, large) = dbscan_scaling_probe(args.scaling_n, args.seed);
    let factor = large.as_secs_f64() / small.as_secs_f64();
    println!(
        "  n:  {:>10.1} ms\n  2n: {:>10.1} ms\n  factor {:.2} (n log n expectation: < 2.4)",
        small.as_secs_f64() * 1e3,
        large.as_secs_f64() * 1e3,
        factor
    );

    if args.out.is_none() {
        let _ = std::fs::remove_dir_all(&out_dir);
    }
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<(), PipelineError> {
    let mut scenario = SyntheticScenario::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.rng_seed = seed;
    }
    let frames = materialize_scenario(scenario, &args.out)?;
    println!("wrote {} frames under {}", frames, args.out.display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Score(args) => cmd_score(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Gen(args) => cmd_gen(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
