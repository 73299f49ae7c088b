use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tnt_harness::acceptance::{self, Outcome};
use tnt_harness::compare::{compare_runs, read_series};
use tnt_harness::{load_config, parse_config, resolve_threads, run_experiment, ExperimentConfig, ExperimentKind, HarnessError};

#[derive(Parser)]
#[command(name = "tnt", version, about = "Two-component BEC spin-squeezing experiments")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trajectories: Option<usize>,
    /// Worker threads; falls back to TNT_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named by `kind` in the config.
    Run,
    #[command(name = "ground_state")]
    GroundState,
    #[command(name = "single_mode_exact")]
    SingleModeExact,
    #[command(name = "single_mode_tw")]
    SingleModeTw,
    Gpe,
    #[command(name = "multimode_tw")]
    MultimodeTw,
    #[command(name = "calibrate_chi")]
    CalibrateChi,
    #[command(name = "scan_omega")]
    ScanOmega,
    #[command(name = "q_function")]
    QFunction,
    /// Run the acceptance suite (all criteria unless some are listed).
    Verify { criteria: Vec<u32> },
    /// Compare one column of two result tables in units of combined standard error.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "var_y")]
        metric: String,
    },
}

impl Command {
    fn kind(&self) -> Option<ExperimentKind> {
        Some(match self {
            Command::GroundState => ExperimentKind::GroundState,
            Command::SingleModeExact => ExperimentKind::SingleModeExact,
            Command::SingleModeTw => ExperimentKind::SingleModeTw,
            Command::Gpe => ExperimentKind::Gpe,
            Command::MultimodeTw => ExperimentKind::MultimodeTw,
            Command::CalibrateChi => ExperimentKind::CalibrateChi,
            Command::ScanOmega => ExperimentKind::ScanOmega,
            Command::QFunction => ExperimentKind::QFunction,
            _ => return None,
        })
    }
}

fn experiment(cli: &Cli, kind: Option<ExperimentKind>) -> Result<(), HarnessError> {
    let mut cfg: ExperimentConfig = match &cli.config {
        Some(p) => load_config(p)?,
        None => parse_config("{}")?,
    };
    if let Some(k) = kind {
        if cfg.kind.is_some_and(|c| c != k) {
            return Err(HarnessError::Config(format!(
                "config kind `{}` does not match subcommand `{}`",
                cfg.kind.unwrap().name(),
                k.name()
            )));
        }
        cfg.kind = Some(k);
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.trajectories.is_some() {
        cfg.n_traj = cli.trajectories;
    }
    let name = cfg.kind.map_or("run", |k| k.name());
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("out").join(name));
    let manifest = run_experiment(&cfg, &out)?;
    if !cli.quiet {
        for w in &manifest.warnings {
            eprintln!("warning: {w}");
        }
        println!("{} complete: {} files in {}", name, manifest.files.len(), out.display());
    }
    Ok(())
}

fn verify(cli: &Cli, criteria: &[u32]) -> Result<(), HarnessError> {
    let ids: Vec<u32> = if criteria.is_empty() { acceptance::ALL.to_vec() } else { criteria.to_vec() };
    let outcomes: Vec<Outcome> = ids
        .iter()
        .map(|&id| {
            let o = acceptance::criterion(id);
            if !cli.quiet || !o.passed {
                println!("{}", o.line());
            }
            o
        })
        .collect();
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Acceptance(format!("failed criteria: {}", failed.join(", "))))
    }
}

fn compare(cli: &Cli, a: &Path, b: &Path, metric: &str) -> Result<(), HarnessError> {
    let r = compare_runs(&read_series(a, metric)?, &read_series(b, metric)?)?;
    if cli.quiet {
        println!("{}", r.max_deviation);
    } else {
        println!("{}", serde_json::to_string_pretty(&r).expect("report serialises"));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve_threads(cli.threads, std::env::var("TNT_THREADS").ok().as_deref()).and_then(|n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        match &cli.command {
            Command::Verify { criteria } => verify(&cli, criteria),
            Command::Compare { a, b, metric } => compare(&cli, a, b, metric),
            c => experiment(&cli, c.kind()),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
