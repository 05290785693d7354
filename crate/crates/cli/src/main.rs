use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sfm_cli::commands::{self, SolveOptions, STATE};
use sfm_cli::config::RunConfig;
use sfm_cli::ply::PlyFormat;
use sfm_cli::text::write_report;
use sfm_cli::{CliError, Result};

/// Pointmap-based structure from motion on tensor-bundle inputs.
#[derive(Parser)]
#[command(name = "sfm", version)]
struct Cli {
    /// Seed for the scene generator, retrieval and random initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Keep every output bit-reproducible (no timings).
    #[arg(long, global = true)]
    deterministic: bool,
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scene and write its image and pair bundles.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scene: Option<String>,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        depth_noise: Option<f64>,
        #[arg(long)]
        outliers: Option<f64>,
        #[arg(long)]
        pure_rotation: bool,
        #[arg(long)]
        shuffle: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Build the scene graph of an input directory.
    Graph {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// retrieval, complete, local-window or random.
        #[arg(long)]
        mode: Option<String>,
        /// Also write the similarity matrix bundle here.
        #[arg(long)]
        similarity_out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Reconstruct an input directory.
    Solve {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        similarity: Option<PathBuf>,
        /// Keep depths fixed during refinement.
        #[arg(long)]
        freeze_depth: bool,
        /// One focal per camera instead of a shared one.
        #[arg(long)]
        separate_focals: bool,
        /// Write the point cloud as ASCII PLY.
        #[arg(long)]
        ascii: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare an estimated trajectory with ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the point cloud of a solved state as PLY.
    ExportPly {
        /// A solve output directory or its state bundle.
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ascii: bool,
        /// One point per pixel instead of one per anchor.
        #[arg(long)]
        dense: bool,
    },
}

fn config(cli: &Cli, overrides: Option<&Overrides>, extra: &[(&str, String)]) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let sets = overrides.map(|o| o.set.as_slice()).unwrap_or_default();
    for (n, kv) in sets.iter().enumerate() {
        let bad = |msg: String| CliError::Config { path: "--set".into(), line: n + 1, msg };
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(bad)?;
    }
    for (k, v) in extra {
        cfg.set(k, v).map_err(|msg| CliError::Config { path: format!("--{k}"), line: 0, msg })?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string()).map_err(CliError::Invalid)?;
    }
    cfg.validate().map_err(CliError::Invalid)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { out, scene, views, depth_noise, outliers, pure_rotation, shuffle, overrides } => {
            let mut extra = Vec::new();
            scene.iter().for_each(|v| extra.push(("scene", v.clone())));
            views.iter().for_each(|v| extra.push(("n_views", v.to_string())));
            depth_noise.iter().for_each(|v| extra.push(("depth_noise", v.to_string())));
            outliers.iter().for_each(|v| extra.push(("outlier_rate", v.to_string())));
            if *pure_rotation {
                extra.push(("pure_rotation", "true".into()));
            }
            if *shuffle {
                extra.push(("shuffle", "true".into()));
            }
            let cfg = config(cli, Some(overrides), &extra)?;
            let pairs = commands::synth(&cfg, out)?;
            println!("wrote {} images and {pairs} pair bundles to {}", cfg.scene.n_views, out.display());
        }
        Command::Graph { input, out, mode, similarity_out, overrides } => {
            let extra: Vec<_> = mode.iter().map(|m| ("graph_mode", m.clone())).collect();
            let cfg = config(cli, Some(overrides), &extra)?;
            let g = commands::graph_to_files(input, &cfg, out, similarity_out.as_deref())?;
            println!("{} images, {} edges", g.n, g.edges.len());
        }
        Command::Solve { input, out, graph, similarity, freeze_depth, separate_focals, ascii, overrides } => {
            let mut extra = Vec::new();
            if *freeze_depth {
                extra.push(("freeze_depth", "true".into()));
            }
            if *separate_focals {
                extra.push(("shared_focal", "false".into()));
            }
            let cfg = config(cli, Some(overrides), &extra)?;
            let opts = SolveOptions {
                graph: graph.clone(),
                similarity: similarity.clone(),
                ascii_ply: *ascii,
                deterministic: cli.deterministic,
            };
            let (sol, summary) = commands::solve_dir(input, &cfg, &opts, out)?;
            println!("solved {} cameras, final loss {}, {} points", summary.poses.len(), sol.final_loss, summary.cloud.len());
        }
        Command::Eval { est, gt, out } => {
            let report = write_report(&commands::eval_files(est, gt)?);
            print!("{report}");
            if let Some(path) = out {
                std::fs::write(path, report).map_err(CliError::io(path))?;
            }
        }
        Command::ExportPly { state, out, ascii, dense } => {
            let dir = if state.join(STATE).is_dir() { state.join(STATE) } else { state.clone() };
            let format = if *ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
            let n = commands::export_ply(&dir, out, format, *dense)?;
            println!("wrote {n} vertices to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
