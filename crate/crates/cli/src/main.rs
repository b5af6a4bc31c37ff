use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gapmodes::bloch::GapReport;
use gapmodes_cli::report::{emit_bands, emit_reports};
use gapmodes_cli::{parse_config, run_bands, run_pipeline, CliError, CliResult, Format, RunConfig};
use log::{error, warn};

#[derive(Parser)]
#[command(name = "gapmodes", version, about = "Count defect eigenvalues in photonic band gaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true, env = "GAPMODES_THREADS")]
    threads: Option<usize>,

    /// Report formats (overrides the config).
    #[arg(long, global = true, value_delimiter = ',')]
    format: Option<Vec<Format>>,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: bands, gap, both counts and the verdict.
    Run { config: PathBuf },
    /// Band structure and gap report only.
    Bands { config: PathBuf },
    /// Counts only, reusing the gap written by a previous `bands` run.
    Count { config: PathBuf },
}

fn settings(cli: &Cli, cfg: &RunConfig) -> (PathBuf, Vec<Format>) {
    let dir = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let formats = cli.format.clone().unwrap_or_else(|| cfg.output.formats.clone());
    (dir, formats)
}

fn cached_gap(dir: &Path) -> CliResult<(f64, f64)> {
    let path = dir.join("gap.json");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(path.clone(), e))?;
    let g: GapReport = serde_json::from_str(&text).map_err(|e| CliError::Report(format!("{}: {e}", path.display())))?;
    Ok((g.lambda0, g.lambda1))
}

fn execute(cli: &Cli) -> CliResult<u8> {
    let path = match &cli.command {
        Command::Run { config } | Command::Bands { config } | Command::Count { config } => config,
    };
    let mut cfg = parse_config(path)?;
    for w in &cfg.warnings {
        warn!("{w}");
    }
    let (dir, formats) = settings(cli, &cfg);
    match &cli.command {
        Command::Bands { .. } => {
            let out = run_bands(&cfg)?;
            for w in &out.warnings {
                warn!("{w}");
            }
            emit_bands(&dir, &out.bands, out.gap.as_ref(), &formats)?;
            Ok(0)
        }
        Command::Run { .. } | Command::Count { .. } => {
            if matches!(cli.command, Command::Count { .. }) {
                cfg.gap = Some(cached_gap(&dir)?);
            }
            let bundle = run_pipeline(&cfg, Some((&dir, &formats)))?;
            emit_reports(&bundle, &formats, &dir)?;
            println!("{}", bundle.verdict_label);
            Ok(bundle.verdict.exit_code())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("thread pool: {e}");
        }
    }
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}
