//! `swapsim`: configuration-driven front end for the entanglement-swapping
//! simulator. Every artifact carries the config hash, seed and tool version.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Format, RunConfig};
use swapsim::mc::{Arrangement, Line};
use swapsim::tomography::Pol;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] swapsim::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> u8 {
        use swapsim::Error as E;
        match self {
            Self::Config(_) => 1,
            Self::Io { .. } => 3,
            Self::Core(e) => match e {
                E::NonConvergence { .. } | E::VanishingHerald(_) => 2,
                E::Io(_) | E::Json(_) | E::Parse(_) | E::EmptyStream => 3,
                _ => 1,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "swapsim",
    version,
    about = "Entanglement swapping with quantum-dot photon pairs: predictions, event-level simulation and analysis"
)]
struct Cli {
    /// TOML configuration (JSON when the file ends in `.json`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `[output] dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides `[output] format`.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Unit detection efficiency and no dead time for simulated runs.
    #[arg(long, global = true)]
    ideal_detectors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Heralded state versus BSM gate width.
    SwapPredict {
        /// Gate widths in ps as start:stop:step, inclusive.
        #[arg(long, value_parser = parse_range, default_value = "10:500:10")]
        gates: Grid,
        /// Append an ungated row.
        #[arg(long)]
        ungated: bool,
    },
    /// Two-qubit state tomography.
    Tomo {
        #[command(subcommand)]
        action: TomoAction,
    },
    /// Simulate a timestamp stream (binary records plus JSON sidecar).
    McRun {
        /// hbt-x, hbt-xx, hom-co, hom-cross or swap-<a><b> with analyzers from HVDARL.
        #[arg(long, value_parser = parse_arrangement)]
        arrangement: Arrangement,
        /// Acquisition time in seconds.
        #[arg(long, default_value_t = 0.01)]
        duration: f64,
        /// Base file name; derived from the arrangement when omitted.
        #[arg(long)]
        name: Option<String>,
    },
    /// Intensity autocorrelation of one emission line.
    G2(G2Args),
    /// Two-photon interference histograms and visibility.
    Hom(HomArgs),
    /// Co- and cross-diagonal four-folds versus interferometer delay.
    FourfoldScan {
        /// Delays in ps as start:stop:step, inclusive.
        #[arg(long, value_parser = parse_range, default_value = "-400:400:40", allow_hyphen_values = true)]
        delays: Grid,
        /// BSM gate in ps; the configured gate when omitted.
        #[arg(long)]
        gate: Option<f64>,
        /// Acquisition time per delay and diagonal setting, in seconds.
        #[arg(long, default_value_t = 0.005)]
        duration: f64,
    },
    /// Analytic and Monte Carlo summary of the headline quantities.
    Report {
        /// Gate in ps for the gated prediction; the configured gate, else 47 ps.
        #[arg(long)]
        gate: Option<f64>,
        /// Laser periods per Monte Carlo run; tomography uses a fifth per setting.
        #[arg(long, default_value_t = 1_000_000)]
        periods: u64,
        /// Skip the Monte Carlo section.
        #[arg(long)]
        analytic_only: bool,
    },
}

#[derive(Debug, Subcommand)]
enum TomoAction {
    /// Maximum-likelihood reconstruction with bootstrap errors; always JSON.
    Reconstruct {
        /// CSV with columns setting_a, setting_b, counts, exposure.
        #[arg(long)]
        input: PathBuf,
        /// Expected number of settings (16 or 36).
        #[arg(long)]
        settings: Option<usize>,
        /// Bootstrap resamples (at least 100).
        #[arg(long)]
        bootstrap: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct G2Args {
    #[arg(long, value_enum, default_value = "x")]
    line: LineArg,
    /// Analyze an existing stream instead of simulating.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 0.03)]
    duration: f64,
    #[arg(long, default_value_t = 100.0)]
    bin: f64,
    /// Half-width of the histogram in laser periods.
    #[arg(long, default_value_t = 5.5)]
    window_periods: f64,
}

#[derive(Debug, Args)]
struct HomArgs {
    /// Existing co-polarized stream; requires `--cross`.
    #[arg(long, requires = "cross")]
    co: Option<PathBuf>,
    #[arg(long, requires = "co")]
    cross: Option<PathBuf>,
    #[arg(long, default_value_t = 0.015)]
    duration: f64,
    #[arg(long, default_value_t = 50.0)]
    bin: f64,
    /// Allowed interferometer delay mismatch in ps.
    #[arg(long, default_value_t = 30.0)]
    tolerance: f64,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum LineArg {
    X,
    Xx,
}

impl From<LineArg> for Line {
    fn from(l: LineArg) -> Self {
        match l {
            LineArg::X => Line::X,
            LineArg::Xx => Line::Xx,
        }
    }
}

/// Inclusive `start:stop:step` grid.
#[derive(Debug, Clone)]
struct Grid(Vec<f64>);

fn parse_range(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [start, stop, step] = parts[..] else {
        return Err(format!("`{s}` is not start:stop:step"));
    };
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
    if step.is_nan() || step <= 0.0 || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(format!("`{s}` needs a positive step and stop >= start"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    if n >= 1_000_000 {
        return Err(format!("`{s}` has too many points"));
    }
    Ok(Grid((0..=n).map(|k| start + step * k as f64).collect()))
}

fn parse_arrangement(s: &str) -> Result<Arrangement, String> {
    match s {
        "hbt-x" => Ok(Arrangement::Hbt { line: Line::X }),
        "hbt-xx" => Ok(Arrangement::Hbt { line: Line::Xx }),
        "hom-co" => Ok(Arrangement::Hom { copolarized: true }),
        "hom-cross" => Ok(Arrangement::Hom { copolarized: false }),
        _ => {
            let pols =
                s.strip_prefix("swap-").filter(|p| p.len() == 2).ok_or_else(|| format!("unknown arrangement `{s}`"))?;
            let (a, b) = pols.split_at(1);
            let pol = |t: &str| t.parse::<Pol>().map_err(|e| e.to_string());
            Ok(Arrangement::Swap { alice: pol(a)?, bob: pol(b)? })
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("SWAPSIM_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("SWAPSIM_THREADS = `{value}` is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.out_dir {
        cfg.output.dir = dir;
    }
    if let Some(format) = cli.format {
        cfg.output.format = format;
    }
    if cli.ideal_detectors {
        cfg.apparatus.efficiency = Some([1.0; 4]);
        cfg.apparatus.dead_time_ns = 0.0;
    }
    let ctx = commands::Context::new(cfg)?;
    match cli.command {
        Command::SwapPredict { gates, ungated } => commands::swap_predict(&ctx, &gates.0, ungated),
        Command::Tomo { action: TomoAction::Reconstruct { input, settings, bootstrap } } => {
            commands::tomo_reconstruct(&ctx, &input, settings, bootstrap)
        }
        Command::McRun { arrangement, duration, name } => commands::mc_run(&ctx, arrangement, duration, name),
        Command::G2(a) => commands::g2(&ctx, a.line.into(), a.input.as_deref(), a.duration, a.bin, a.window_periods),
        Command::Hom(a) => {
            let inputs = a.co.as_deref().zip(a.cross.as_deref());
            commands::hom(&ctx, inputs, a.duration, a.bin, a.tolerance)
        }
        Command::FourfoldScan { delays, gate, duration } => commands::fourfold_scan(&ctx, &delays.0, gate, duration),
        Command::Report { gate, periods, analytic_only } => commands::report(&ctx, gate, periods, analytic_only),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_are_inclusive() {
        let g = parse_range("10:500:10").unwrap().0;
        assert_eq!(g.len(), 50);
        assert_eq!((g[0], g[49]), (10.0, 500.0));
        assert_eq!(parse_range("-400:400:40").unwrap().0.len(), 21);
        assert_eq!(parse_range("5:5:1").unwrap().0, vec![5.0]);
        for bad in ["1:2", "1:0:1", "0:1:0", "a:b:c", "0:1:-1"] {
            assert!(parse_range(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn arrangements_parse() {
        assert_eq!(parse_arrangement("hom-cross").unwrap(), Arrangement::Hom { copolarized: false });
        assert_eq!(parse_arrangement("swap-DA").unwrap(), Arrangement::Swap { alice: Pol::D, bob: Pol::A });
        assert!(parse_arrangement("swap-DQ").is_err());
        assert!(parse_arrangement("hbt").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 1);
        assert_eq!(CliError::from(swapsim::Error::InvalidParameter("x".into())).exit_code(), 1);
        assert_eq!(CliError::from(swapsim::Error::NonConvergence { iterations: 1, grad_norm: 1.0 }).exit_code(), 2);
        assert_eq!(CliError::from(swapsim::Error::Parse("x".into())).exit_code(), 3);
        assert_eq!(CliError::io(Path::new("f"), std::io::Error::other("x")).exit_code(), 3);
    }
}
