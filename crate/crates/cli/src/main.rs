//! `ratetip`: rate-induced tipping scans, folded singularities and canards
//! from the command line.

mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ratetip::model::ForcingKind;
use ratetip::scan::Side;

use config::{ConfigError, RunConfig};
use output::{write_atomic, Sink};

#[derive(Parser)]
#[command(name = "ratetip", version, about = "Rate-induced tipping through folded singularities and canards")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Rate parameter of the forcing.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Timescale ratio of the fast variable.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Grid resolution as `NX,NLAMBDA`.
    #[arg(long, global = true, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Lambda of the band transect (and canard section).
    #[arg(long, global = true, allow_hyphen_values = true)]
    transect: Option<f64>,
    /// Add columns relative to the moving stable state.
    #[arg(long, global = true)]
    comoving: bool,
    /// Which sheet of the critical manifold seeds start on.
    #[arg(long, global = true, value_enum)]
    side: Option<SideArg>,
    /// Also print every table to stdout.
    #[arg(long, global = true)]
    pretty: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Sa,
    Sr,
}

#[derive(Subcommand)]
enum Command {
    /// Fold curve, stable state and a slice of the critical manifold.
    Manifold,
    /// Folded singularities with eigenvalues and classification.
    Singularities,
    /// Singular critical rate, optionally with empirical rates over delta.
    CriticalRate {
        /// Bisect the full system too, at the configured deltas.
        #[arg(long)]
        empirical: bool,
    },
    /// One trajectory of the full or reduced system.
    Trajectory {
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        lambda0: Option<f64>,
        /// Follow the reduced flow on the critical manifold.
        #[arg(long)]
        reduced: bool,
    },
    /// Singular, maximal, secondary and composite canards.
    Canards,
    /// Tipping verdict over an `(x, lambda)` grid, with an SVG rendering.
    Scan,
    /// Regenerate one of the pinned figure recipes.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    Fig2a,
    Fig3a,
    Fig3b,
    Fig3c,
    Fig3d,
    Fig4,
    Fig5,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected NX,NLAMBDA")?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((n(a)?, n(b)?))
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Core(ratetip::Error),
    Io(std::io::Error),
}

impl From<ratetip::Error> for CliError {
    fn from(e: ratetip::Error) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(e) => write!(f, "{e}"),
            Self::Core(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "i/o: {e}"),
        }
    }
}

impl CliError {
    /// 1 usage or schema, 2 violated model assumption, 3 numerical failure.
    fn exit_code(&self) -> u8 {
        use ratetip::Error::*;
        match self {
            Self::Config(_) | Self::Io(_) => 1,
            Self::Core(e) if e.is_assumption() => 2,
            Self::Core(Invalid(_) | UnknownSystem { .. } | Domain { .. } | InverseForcing { .. }) => 1,
            Self::Core(_) => 3,
        }
    }
}

/// Pinned settings for each figure; command-line overrides still apply.
fn recipe(fig: Figure, cfg: &mut RunConfig) -> (&'static str, Vec<fn(commands::Ctx) -> Result<(), CliError>>) {
    cfg.system.delta = 0.01;
    cfg.forcing.lambda_max = 2.5;
    cfg.forcing.kind = ForcingKind::LogisticTanh;
    cfg.scan.side = Side::Sa;
    cfg.scan.x_range = (-2.5, 0.45);
    cfg.scan.lambda_range = (-2.45, 2.45);
    cfg.scan.n_x = 200;
    cfg.scan.n_lambda = 200;
    match fig {
        Figure::Fig2a => {
            cfg.forcing.epsilon = 0.06;
            cfg.scan.x_range = (-0.25, 0.25);
            cfg.scan.lambda_range = (-2.49, -2.0);
            cfg.scan.n_x = 100;
            cfg.scan.n_lambda = 100;
            ("fig2a", vec![commands::scan])
        }
        Figure::Fig3a => {
            cfg.forcing.epsilon = 0.201;
            ("fig3a", vec![commands::scan])
        }
        Figure::Fig3b => {
            cfg.forcing.epsilon = 0.212;
            ("fig3b", vec![commands::scan])
        }
        Figure::Fig3c => {
            cfg.forcing.epsilon = 0.216;
            ("fig3c", vec![commands::singularities, commands::scan])
        }
        Figure::Fig3d => {
            cfg.forcing.epsilon = 0.270;
            ("fig3d", vec![commands::singularities, commands::scan])
        }
        Figure::Fig4 => {
            cfg.forcing.epsilon = 0.204;
            cfg.scan.transect = Some(-0.7);
            cfg.scan.transect_x_range = Some((-2.0, 0.45));
            (
                "fig4",
                vec![commands::singularities, commands::canards, commands::scan],
            )
        }
        Figure::Fig5 => {
            cfg.forcing.kind = ForcingKind::ExponentialApproach;
            cfg.forcing.epsilon = 1.0;
            cfg.integrator.max_step = 0.01;
            cfg.scan.lambda_range = (0.05, 2.45);
            cfg.canards.maximal.section_lambda = Some(0.1);
            (
                "fig5",
                vec![commands::singularities, commands::canards, commands::scan],
            )
        }
    }
}

fn apply_overrides(g: &Global, cfg: &mut RunConfig) {
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(e) = g.epsilon {
        cfg.forcing.epsilon = e;
    }
    if let Some(d) = g.delta {
        cfg.system.delta = d;
    }
    if let Some((nx, nl)) = g.grid {
        cfg.scan.n_x = nx;
        cfg.scan.n_lambda = nl;
    }
    if let Some(t) = g.transect {
        cfg.scan.transect = Some(t);
    }
    if let Some(s) = g.side {
        cfg.scan.side = match s {
            SideArg::Sa => Side::Sa,
            SideArg::Sr => Side::Sr,
        };
    }
    if let Some(o) = &g.out {
        cfg.output.dir = o.clone();
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p).map_err(CliError::Config)?,
        None => RunConfig::default(),
    };
    let steps: Vec<fn(commands::Ctx) -> Result<(), CliError>> = match cli.command {
        Command::Manifold => vec![commands::manifold],
        Command::Singularities => vec![commands::singularities],
        Command::CriticalRate { empirical } => {
            cfg.critical_rate.empirical |= empirical;
            vec![commands::critical_rate]
        }
        Command::Trajectory { x0, lambda0, reduced } => {
            cfg.trajectory.x0 = x0.unwrap_or(cfg.trajectory.x0);
            cfg.trajectory.lambda0 = lambda0.unwrap_or(cfg.trajectory.lambda0);
            cfg.trajectory.reduced |= reduced;
            vec![commands::trajectory]
        }
        Command::Canards => vec![commands::canards],
        Command::Scan => vec![commands::scan],
        Command::Reproduce { figure } => {
            let (name, steps) = recipe(figure, &mut cfg);
            let base = cli.global.out.clone().unwrap_or(cfg.output.dir.clone());
            cfg.output.dir = base.join(name);
            apply_overrides(&Global { out: None, ..cli.global }, &mut cfg);
            return execute(&cfg, &steps, cli.global.comoving, cli.global.pretty);
        }
    };
    apply_overrides(&cli.global, &mut cfg);
    execute(&cfg, &steps, cli.global.comoving, cli.global.pretty)
}

fn execute(
    cfg: &RunConfig,
    steps: &[fn(commands::Ctx) -> Result<(), CliError>],
    comoving: bool,
    pretty: bool,
) -> Result<(), CliError> {
    let mut sink = Sink::new(cfg.output.dir.clone(), pretty);
    write_atomic(&sink.dir, "run.toml", cfg.to_toml().as_bytes())?;
    for step in steps {
        step(commands::Ctx {
            cfg,
            sink: &mut sink,
            comoving,
        })?;
    }
    for p in &sink.written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
