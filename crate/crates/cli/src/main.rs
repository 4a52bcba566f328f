use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gameflow_cli::commands::{self, Command};
use gameflow_cli::config::ExperimentConfig;
use gameflow_cli::{CliError, CliResult};

/// Game dynamics experiments: stability analysis, integrator runs,
/// step-size sweeps and domain-adversarial training.
#[derive(Parser)]
#[command(name = "gameflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Equilibrium certificate, spectrum and step-size thresholds.
    Analyze(Common),
    /// One trajectory CSV per configured arm.
    Run(Common),
    /// Stability map over a step-size grid.
    Sweep(Common),
    /// Domain-adversarial training arms with accuracy metrics.
    Dal(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named example game; replaces the config's [game].
    #[arg(long)]
    game: Option<String>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for concurrent arms.
    #[arg(long)]
    jobs: Option<usize>,
    /// Replace existing output files.
    #[arg(long)]
    overwrite: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn run(cmd: Command, opts: Common) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(opts.config.as_deref(), opts.game.as_deref())?;
    if let Some(seed) = opts.seed {
        cfg = cfg.with_seed(seed);
    }
    let names = commands::planned_files(cmd, &cfg)?;
    if !opts.overwrite {
        if let Some(existing) = names.iter().map(|n| opts.out.join(n)).find(|p| p.exists()) {
            return Err(CliError::Config(format!(
                "{} exists; pass --overwrite to replace it",
                existing.display()
            )));
        }
    }
    if opts.jobs == Some(0) {
        return Err(CliError::Config("--jobs must be >= 1".into()));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let output = pool.install(|| commands::execute(cmd, &cfg))?;

    std::fs::create_dir_all(&opts.out).map_err(io_err(&opts.out))?;
    for (name, contents) in &output.files {
        let path = opts.out.join(name);
        let tmp = opts.out.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, contents).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
    }
    print!("{}", output.stdout);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, opts) = match cli.command {
        Sub::Analyze(o) => (Command::Analyze, o),
        Sub::Run(o) => (Command::Run, o),
        Sub::Sweep(o) => (Command::Sweep, o),
        Sub::Dal(o) => (Command::Dal, o),
    };
    match run(cmd, opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gameflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
