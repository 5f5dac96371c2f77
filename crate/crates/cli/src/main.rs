//! `contraction` — feedforward synthesis and verification of incremental
//! exponential stability for affine-in-control systems.
//!
//! Exit codes: 0 success, 1 check failure, 2 configuration error,
//! 3 numeric failure.

mod config;
mod expr;
mod figures;
mod pipeline;
mod svg;

use clap::{Args, Parser, Subcommand};
use config::{InitialConditions, RunConfig};
use contraction_core::{Error, ErrorCategory};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "contraction",
    version,
    about = "Synthesize and verify feedforward inputs that make a system contractive"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Detect the sign-definite interval structure of R(t,·) over the window
    Analyze(CommonArgs),
    /// Build the piecewise-smooth input and Lyapunov gain
    Synthesize(CommonArgs),
    /// Integrate a trajectory ensemble and write CSV/SVG artifacts
    Simulate(CommonArgs),
    /// Run the verification checks and write a report
    Verify(CommonArgs),
    /// Regenerate one of the bundled figures (fig1..fig4)
    #[command(name = "reproduce-figure")]
    ReproduceFigure {
        /// Figure id: fig1, fig2, fig3 or fig4
        #[arg(long)]
        figure: String,
        /// Output directory (default: out)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides outputDir from the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override alpha from the config
    #[arg(long)]
    alpha: Option<f64>,
    /// Override the definiteness threshold m from the config
    #[arg(long)]
    m: Option<f64>,
    /// Override margin from the config
    #[arg(long)]
    margin: Option<f64>,
    /// Override the RNG seed (random initial conditions and random pairs)
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonArgs {
    fn load(&self) -> contraction_core::Result<(RunConfig, PathBuf)> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(a) = self.alpha {
            cfg.alpha = Some(a);
        }
        if let Some(m) = self.m {
            cfg.m = Some(m);
        }
        if let Some(g) = self.margin {
            cfg.margin = Some(g);
        }
        if let Some(s) = self.seed {
            cfg.verify.seed = Some(s);
            if let Some(InitialConditions::Random { seed, .. }) = cfg.initial_conditions.as_mut()
            {
                *seed = s;
            }
        }
        let out = self
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(cfg.output_dir()));
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> contraction_core::Result<()> {
    match cli.cmd {
        Cmd::Analyze(args) => {
            let (cfg, out) = args.load()?;
            pipeline::cmd_analyze(&cfg, &out)?;
            Ok(())
        }
        Cmd::Synthesize(args) => {
            let (cfg, out) = args.load()?;
            pipeline::cmd_synthesize(&cfg, &out)?;
            Ok(())
        }
        Cmd::Simulate(args) => {
            let (cfg, out) = args.load()?;
            pipeline::cmd_simulate(&cfg, &out)?;
            Ok(())
        }
        Cmd::Verify(args) => {
            let (cfg, out) = args.load()?;
            let report = pipeline::cmd_verify(&cfg, &out)?;
            if report.pass() {
                Ok(())
            } else {
                let failing: Vec<&str> = report
                    .checks
                    .iter()
                    .filter(|c| !c.pass)
                    .map(|c| c.name.as_str())
                    .collect();
                Err(Error::VerificationFailed(failing.join("; ")))
            }
        }
        Cmd::ReproduceFigure { figure, out } => {
            let out = out.unwrap_or_else(|| PathBuf::from("out"));
            pipeline::cmd_reproduce_figure(&figure, &out)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::CheckFailure => 1u8,
                ErrorCategory::Configuration => 2u8,
                ErrorCategory::Numeric => 3u8,
            })
        }
    }
}
