use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rewardsim::harness::{compare_runs, run_stages, ExperimentConfig, Stage};
use rewardsim::{Error, Result};

#[derive(Parser)]
#[command(name = "rewardsim", version, about = "Reward-model ensemble and alignment simulator")]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides `output_dir` from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override as name=value; may be repeated.
    #[arg(long = "seed-override", global = true)]
    seed_override: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate preference data, splits and evaluation prompts.
    Gen,
    /// Train the reward-model grid and write ensemble manifests.
    TrainRms,
    /// Best-of-n sweep over n and ensembles.
    AlignBon,
    /// Policy-gradient sweep over lambda and ensembles, with the
    /// rank-correlation trace.
    AlignRl,
    /// Cross-scoring, top-1 agreement and preference-data statistics.
    Diagnose,
    /// Plots from the exported metrics; finalizes the run directory.
    Report,
    /// Every stage in order.
    RunAll,
    /// Per-metric differences between two runs with permutation p-values.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        permutations: usize,
    },
    /// Print the effective configuration as TOML.
    PrintConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for s in &cli.seed_override {
        cfg.apply_seed_override(s)?;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::config("--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("cannot set up {n} worker threads: {e}")))?;
    }
    let cfg = load_config(cli)?;
    let stages: &[Stage] = match &cli.command {
        Command::Gen => &[Stage::Gen],
        Command::TrainRms => &[Stage::TrainRms],
        Command::AlignBon => &[Stage::AlignBon],
        Command::AlignRl => &[Stage::AlignRl],
        Command::Diagnose => &[Stage::Diagnose],
        Command::Report => &[Stage::Report],
        Command::RunAll => &Stage::ALL,
        Command::PrintConfig => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
        Command::Compare {
            run_a,
            run_b,
            permutations,
        } => {
            let report = compare_runs(run_a, run_b, *permutations, cfg.seeds.eval_seed)?;
            let csv = report.to_table().to_csv()?;
            match &cli.out {
                Some(p) => std::fs::write(p, csv)?,
                None => print!("{csv}"),
            }
            return Ok(());
        }
    };
    let record = run_stages(&cfg, &cfg.output_dir, stages)?;
    for n in &record.notices {
        eprintln!("notice: {n}");
    }
    eprintln!(
        "{}: {} artifacts in {}{}",
        record.run_id,
        record.artifacts.len(),
        cfg.output_dir.display(),
        if record.finalized { " (finalized)" } else { "" }
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
