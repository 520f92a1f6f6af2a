use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gmsfem::cli::{self, read_pairs, RunConfig};
use gmsfem::indicator::IndicatorKind;
use gmsfem::Result;

/// Adaptive GMsFEM for 2D high-contrast elliptic problems.
#[derive(Parser)]
#[command(name = "gmsfem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adaptive enrichment run.
    Run(Common),
    /// Single solve with the same number of eigenfunctions in every region.
    Uniform {
        #[command(flatten)]
        common: Common,
        /// Eigenfunctions per region, clamped to the snapshot count.
        #[arg(long)]
        count: usize,
    },
    /// Adaptive runs with two indicators on the same field, side by side.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Indicator for the second run.
        #[arg(long, default_value = "l2")]
        against: IndicatorKind,
    },
}

/// Flags mirror the configuration keys and override the file.
#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Coarse cells, `NxM` or `N`.
    #[arg(long)]
    coarse: Option<String>,
    /// Fine cells per coarse cell, `NxM` or `N`.
    #[arg(long)]
    sub: Option<String>,
    /// `uniform`, `channels` or a path to a text matrix.
    #[arg(long)]
    field: Option<String>,
    #[arg(long)]
    contrast: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Constant source term.
    #[arg(long)]
    source: Option<String>,
    /// Affine boundary data `a,b,c` for `g = a + b x + c y`.
    #[arg(long, value_name = "A,B,C")]
    lift: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    /// `l2`, `h1w`, `h1w-snap` or `exact`.
    #[arg(long)]
    indicator: Option<String>,
    /// `harmonic` or `nodal`.
    #[arg(long)]
    snapshots: Option<String>,
    #[arg(long = "init-basis")]
    init_basis: Option<String>,
    /// Eigenfunctions added per marked region.
    #[arg(long)]
    s: Option<String>,
    /// Grow each increment until the eigenvalue ratio reaches this, or `off`.
    #[arg(long = "gap-ratio")]
    gap_ratio: Option<String>,
    /// `exact:P`, `literal:P`, `tol:EPS`, `error:PCT`, `max-dim:N` or `max-iter`.
    #[arg(long)]
    terminate: Option<String>,
    #[arg(long = "max-iter")]
    max_iter: Option<String>,
    /// `consistent` or `paper`.
    #[arg(long = "q-formula")]
    q_formula: Option<String>,
    /// Record zero wall time so repeated runs give identical files.
    #[arg(long = "no-timing")]
    no_timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut pairs = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| gmsfem::Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                read_pairs(&text, path)?
            }
            None => Vec::new(),
        };
        let flags = [
            ("coarse", &self.coarse),
            ("sub", &self.sub),
            ("field", &self.field),
            ("contrast", &self.contrast),
            ("seed", &self.seed),
            ("source", &self.source),
            ("theta", &self.theta),
            ("indicator", &self.indicator),
            ("snapshots", &self.snapshots),
            ("init_basis", &self.init_basis),
            ("s", &self.s),
            ("gap_ratio", &self.gap_ratio),
            ("terminate", &self.terminate),
            ("max_iter", &self.max_iter),
            ("q_formula", &self.q_formula),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                pairs.push((key.to_string(), v.clone()));
            }
        }
        if let Some(lift) = &self.lift {
            let parts: Vec<&str> = lift.split(',').collect();
            if parts.len() != 3 {
                return Err(gmsfem::Error::Config {
                    key: "lift".into(),
                    message: format!("expected A,B,C, got `{lift}`"),
                });
            }
            for (key, v) in ["lift_a", "lift_b", "lift_c"].into_iter().zip(parts) {
                pairs.push((key.to_string(), v.to_string()));
            }
        }
        if self.no_timing {
            pairs.push(("timing".into(), "false".into()));
        }
        if let Some(out) = &self.out {
            pairs.push(("out".into(), out.display().to_string()));
        }
        RunConfig::from_pairs(&pairs)
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(common) => {
            let config = common.config()?;
            let history = cli::run(&config)?;
            print!("{}", cli::report(&history));
            println!("outputs in {}", config.out.display());
        }
        Command::Uniform { common, count } => {
            let config = common.config()?;
            let history = cli::uniform(&config, count)?;
            print!("{}", cli::report(&history));
            println!("outputs in {}", config.out.display());
        }
        Command::Compare { common, against } => {
            let config = common.config()?;
            let (a, b) = cli::compare(&config, against)?;
            print!("{}", cli::report(&a));
            print!("{}", cli::report(&b));
            println!("outputs in {}", config.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
