//! Batch experiment runner behind the `plaplab` binary.

pub mod config;
pub mod field_io;
pub mod report;
pub mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
pub use config::{ExperimentConfig, ExperimentKind};
pub use field_io::{export_field, import_field, LoadedField};
pub use report::Report;
pub use run::run;

/// Environment variable consulted for the output directory when neither
/// `--out` nor `output.dir` is given.
pub const OUT_ENV: &str = "PLAPLAB_OUT";

pub const DEFAULT_OUT: &str = "plaplab-out";

#[derive(Debug, Parser)]
#[command(name = "plaplab", version, about = "Regularized singular p-Laplace laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment configuration (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory; overrides `output.dir` and $PLAPLAB_OUT.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Seed for the random campaigns; overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Solve the regularized equation once.
    Solve,
    /// ε-sweep with the convergence functionals.
    Sweep,
    /// ε-sweep with every regime-appropriate estimate.
    Verify,
    /// Grid refinement study at fixed ε.
    Refine,
    /// Random campaigns for the pointwise inequalities.
    Proptest,
}

impl Command {
    pub fn kind(self) -> ExperimentKind {
        match self {
            Command::Solve => ExperimentKind::Solve,
            Command::Sweep => ExperimentKind::Sweep,
            Command::Verify => ExperimentKind::Verify,
            Command::Refine => ExperimentKind::Refine,
            Command::Proptest => ExperimentKind::PropertyTests,
        }
    }
}

/// `--out`, then the config's `output.dir`, then `$PLAPLAB_OUT`, then [`DEFAULT_OUT`].
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &ExperimentConfig, env: Option<String>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Loads and validates the configuration, applying command-line overrides.
pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?,
        None => String::new(),
    };
    let mut cfg = ExperimentConfig::parse(&text, cli.command.kind())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<Report> {
    let cfg = load_config(cli)?;
    let out = resolve_out_dir(cli.out.as_deref(), &cfg, std::env::var(OUT_ENV).ok());
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(Error::Config {
                path: "--threads".into(),
                message: "must be at least 1".into(),
            });
        }
        pool = pool.num_threads(k);
    }
    let pool = pool.build().map_err(|e| Error::Internal(e.to_string()))?;
    pool.install(|| run(&cfg, &out)).inspect_err(|e| {
        if let Some(log) = solve_log(e) {
            let _ = std::fs::create_dir_all(&out);
            if let Ok(json) = serde_json::to_string_pretty(log) {
                let _ = std::fs::write(out.join("failed_solve_log.json"), json);
            }
        }
    })
}

fn solve_log(e: &Error) -> Option<&crate::solver::SolveLog> {
    match e {
        Error::SolverFailure { log, .. } => Some(log),
        Error::SweepFailure { source, .. } => solve_log(source),
        _ => None,
    }
}

/// Exit codes: 0 when every verdict passes, 2 when some verdict fails,
/// 1 on configuration, solver or IO errors.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(report) => {
            for v in report.verdicts.iter().filter(|v| !v.pass) {
                eprintln!("{}", v.summary());
            }
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(log) = solve_log(&e) {
                if let Ok(json) = serde_json::to_string(log) {
                    eprintln!("solve log: {json}");
                }
            }
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dir_priority() {
        let mut cfg = ExperimentConfig::parse("", ExperimentKind::Solve).unwrap();
        let env = || Some("from-env".to_string());
        assert_eq!(resolve_out_dir(None, &cfg, None), PathBuf::from(DEFAULT_OUT));
        assert_eq!(resolve_out_dir(None, &cfg, env()), PathBuf::from("from-env"));
        cfg.output_dir = Some("from-config".into());
        assert_eq!(resolve_out_dir(None, &cfg, env()), PathBuf::from("from-config"));
        assert_eq!(resolve_out_dir(Some(Path::new("flag")), &cfg, env()), PathBuf::from("flag"));
    }

    #[test]
    fn cli_parses_global_flags() {
        let cli = Cli::try_parse_from(["plaplab", "sweep", "--seed", "7", "--threads", "2", "--out", "o"]).unwrap();
        assert!(matches!(cli.command, Command::Sweep));
        assert_eq!(cli.seed, Some(7));
        assert_eq!(cli.threads, Some(2));
        assert!(Cli::try_parse_from(["plaplab", "bogus"]).is_err());
    }
}
