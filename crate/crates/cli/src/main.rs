use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rigidbrown::harness::{emit_plot_data, io::read_json, run_experiment, Construction, ExperimentConfig, Pipeline, StatisticsReport};
use rigidbrown::{Error, Result};

#[derive(Parser)]
#[command(name = "rigidbrown", version, about = "Brownian motion of rigid crystals at low temperature")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the crystal and report its rigidity spectrum.
    Rigidity {
        #[command(flatten)]
        run: RunArgs,
        /// Use this crystal JSON instead of the configured construction.
        #[arg(long)]
        crystal: Option<PathBuf>,
    },
    /// Simulate the path ensemble.
    Simulate(RunArgs),
    /// Compute statistics from a finished simulation in the output directory.
    Analyze(RunArgs),
    /// Sample the reference Brownian motion on SO(d).
    Refbm(RunArgs),
    /// Rigidity, simulation, analysis and reference run in sequence.
    Full(RunArgs),
    /// Flatten a statistics report into CSV tables.
    PlotData {
        #[arg(long)]
        stats: PathBuf,
        /// Defaults to the directory holding the report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `dynamics.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `dynamics.paths`.
    #[arg(long)]
    paths: Option<usize>,
}

fn run(args: &RunArgs, pipeline: Pipeline, crystal: Option<&Path>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.dynamics.seed = s;
    }
    if let Some(m) = args.paths {
        cfg.dynamics.paths = m;
    }
    if let Some(p) = crystal {
        cfg.crystal.construction = Construction::File { path: p.to_path_buf() };
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let outcome = run_experiment(&cfg, pipeline, &out)?;
    for f in &outcome.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Rigidity { run: a, crystal } => run(a, Pipeline::Rigidity, crystal.as_deref()),
        Command::Simulate(a) => run(a, Pipeline::Simulate, None),
        Command::Analyze(a) => run(a, Pipeline::Analyze, None),
        Command::Refbm(a) => run(a, Pipeline::Refbm, None),
        Command::Full(a) => run(a, Pipeline::Full, None),
        Command::PlotData { stats, out } => read_json::<StatisticsReport>(stats).and_then(|rep| {
            let dir = out
                .clone()
                .unwrap_or_else(|| stats.parent().map(Path::to_path_buf).unwrap_or_default());
            for f in emit_plot_data(&rep, &dir)? {
                println!("{}", f.display());
            }
            Ok(())
        }),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(list)) => {
            eprintln!("invalid configuration ({} problems):", list.len());
            for (i, e) in list.iter().enumerate() {
                eprintln!("  [{}] {e}", i + 1);
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
