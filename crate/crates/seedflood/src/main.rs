use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seedflood::{execute, ExperimentSpec, Overrides};

const DEFAULT_OUT: &str = "seedflood-out";

#[derive(Parser)]
#[command(name = "seedflood", version, about = "Simulate decentralized zeroth-order training with seed flooding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every variant of a config without a sweep block.
    Run(RunArgs),
    /// Expand the sweep block of a config and run every point.
    Sweep(RunArgs),
    /// Parse and validate a config, then list its variants.
    Validate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Output directory [env: SEEDFLOOD_OUT; then the config's `out`; then ./seedflood-out]
    #[arg(long, env = "SEEDFLOOD_OUT", hide_env = true)]
    out: Option<PathBuf>,
    /// Overrides every variant's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Variants run concurrently (default: one per core).
    #[arg(long)]
    jobs: Option<usize>,
}

fn load(config: &Path, seed: Option<u64>) -> Result<ExperimentSpec, ExitCode> {
    ExperimentSpec::from_file(config, Overrides { seed }).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}

fn run(args: RunArgs, sweep: bool) -> Result<(), ExitCode> {
    let spec = load(&args.config, args.seed)?;
    if spec.has_sweep != sweep {
        eprintln!(
            "error: {}: {}",
            args.config.display(),
            if sweep {
                "no `sweep` block; use `seedflood run`"
            } else {
                "config has a `sweep` block; use `seedflood sweep`"
            }
        );
        return Err(ExitCode::from(2));
    }
    let out = args
        .out
        .or_else(|| spec.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let total = spec.variants.len();
    let report = execute(&spec, &out, args.jobs, |name, result| match result {
        Ok(s) => eprintln!("{name}: final train loss {:.6}, {} bytes", s.final_train_loss, s.total_bytes),
        Err(e) => eprintln!("{name}: FAILED: {e}"),
    })
    .map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })?;
    let failed = report.failed();
    eprintln!(
        "{} of {total} variants completed; results in {}",
        total - failed,
        out.display()
    );
    if failed > 0 {
        return Err(ExitCode::FAILURE);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args, false),
        Command::Sweep(args) => run(args, true),
        Command::Validate { config, seed } => load(&config, seed).map(|spec| {
            for v in &spec.variants {
                println!("{}", v.name);
            }
            eprintln!("{}: {} variants, all valid", config.display(), spec.variants.len());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
