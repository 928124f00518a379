//! `glioma`: simulations, virtual trials, sweeps and analyses.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

mod analyze;
mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "glioma", version, about = "Glioma CAR-T/TMZ simulator and in-silico trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each one overrides the configuration.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Master seed of the virtual cohort.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cohort size.
    #[arg(long)]
    pub patients: Option<usize>,
    /// Resistant growth scenario, r2 / r1.
    #[arg(long, value_parser = parse_ratio)]
    pub r2_ratio: Option<f64>,
    /// Upper end of the rho4 sampling range.
    #[arg(long)]
    pub rho4_max: Option<f64>,
    /// Total CAR-T cells per protocol; a comma list gives several dose arms.
    #[arg(long, value_delimiter = ',')]
    pub total_cart: Vec<f64>,
    /// CAR-T injections (L2): adds an "L2 C" protocol, or sets the sweep's split.
    #[arg(long)]
    pub injections: Option<u32>,
    /// Days between CAR-T injections.
    #[arg(long)]
    pub gap: Option<f64>,
    /// TMZ cycles (L1): adds an "L1 T" protocol, or sets the sweep's last cycle count.
    #[arg(long)]
    pub cycles: Option<u32>,
    /// Simulation horizon in days.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file merged over the built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_ratio(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(r) if [0.5, 1.0, 2.0].contains(&r) => Ok(r),
        _ => Err(format!("r2 ratio must be 0.5, 1 or 2, got {s}")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one patient under one protocol and write its trajectory.
    Simulate(SimulateArgs),
    /// Run protocols over a virtual cohort: outcomes, KM curves, summary.
    Trial(TrialArgs),
    /// Median survival over a parameter grid.
    Sweep(SweepArgs),
    /// Statistics over outcome files from earlier trials.
    Analyze(AnalyzeArgs),
    /// Closed-form eradication thresholds, optionally checked by integration.
    CheckEradication(EradicationArgs),
    /// Write the virtual cohort as CSV.
    Cohort(CohortArgs),
    /// Scale the T0 range until the untreated median hits a target.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// "mvp", "worst-case", or a TOML file of parameters over the MVP.
    #[arg(long, default_value = "mvp")]
    pub patient: String,
    #[arg(long, default_value = "NT")]
    pub protocol: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args)]
pub struct TrialArgs {
    /// Comma-separated protocols (default from the configuration).
    #[arg(long, value_delimiter = ',')]
    pub protocols: Option<Vec<String>>,
    /// Protocol that gains are measured against.
    #[arg(long)]
    pub control: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum SweepKindArg {
    TmzCycles,
    CartDose,
    CartSplit,
    CartGap,
    Rho4Max,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub kind: SweepKindArg,
    /// Grid values, overriding the configured grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// r2 ratios for the TMZ cycle sweep.
    #[arg(long, value_delimiter = ',', value_parser = parse_ratio)]
    pub ratios: Option<Vec<f64>>,
    /// Protocol for the rho4-max sweep.
    #[arg(long)]
    pub protocol: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnalyzeMode {
    Correlate,
    Compare,
    Equivalence,
    MedianShift,
    Logrank,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub mode: AnalyzeMode,
    /// Outcome CSVs written by `trial`.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub outcomes: Vec<PathBuf>,
    /// Cohort CSV; by default the cohort is regenerated from the trial manifest.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Equivalence margin as a fraction.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Smallest equivalence-set size in the median-shift subgroup.
    #[arg(long)]
    pub min_set: Option<usize>,
    /// Largest equivalence-set size in the median-shift subgroup.
    #[arg(long)]
    pub max_set: Option<usize>,
    /// Keep correlations that fail the |r| and p filters.
    #[arg(long)]
    pub all: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args)]
pub struct EradicationArgs {
    /// "mvp", "worst-case", or a TOML file of parameters over the MVP.
    #[arg(long, default_value = "worst-case")]
    pub patient: String,
    /// Constant CAR-T infusion rates (cells/day).
    #[arg(long, value_delimiter = ',')]
    pub v: Vec<f64>,
    /// Infusion rates as multiples of the critical rate.
    #[arg(long, value_delimiter = ',')]
    pub v_factor: Vec<f64>,
    /// Constant drug input.
    #[arg(long, default_value_t = 1.0)]
    pub e0: f64,
    /// Rescale alpha1 and eps1 so their sum is this multiple of the chemo threshold.
    #[arg(long)]
    pub chemo_factor: Option<f64>,
    /// Integrate the constant-treatment system for each rate.
    #[arg(long)]
    pub simulate: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args)]
pub struct CohortArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args)]
pub struct CalibrateArgs {
    /// Target untreated median (days).
    #[arg(long)]
    pub target: Option<f64>,
    /// Accepted distance from the target (days).
    #[arg(long)]
    pub tol: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

/// A usage error: bad flags or an empty selection. Exit code 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

impl Common {
    /// The configuration with these flags applied.
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.cohort.seed = s;
        }
        if let Some(n) = self.patients {
            cfg.cohort.n_patients = n;
        }
        if let Some(r) = self.r2_ratio {
            cfg.cohort.r2_ratio = r;
        }
        if let Some(m) = self.rho4_max {
            cfg.cohort.rho4_max = m;
        }
        if let Some(&t) = self.total_cart.first() {
            cfg.dose.total_cart = t;
            cfg.trial.total_carts = self.total_cart.clone();
        }
        if let Some(g) = self.gap {
            cfg.dose.cart_gap = g;
        }
        if let Some(h) = self.horizon {
            cfg.integrator.horizon = h;
        }
        if let Some(l2) = self.injections {
            cfg.sweep.injections = l2;
        }
        if let Some(l1) = self.cycles {
            cfg.sweep.tmz_cycles = (0..=l1).collect();
        }
        cfg.cohort.validate()?;
        cfg.dose.validate()?;
        cfg.integrator.validate()?;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|e| e.downcast_ref::<glioma_core::Error>().is_some_and(glioma_core::Error::is_numerical));
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let args = &argv[1..];
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a, args),
        Command::Trial(a) => commands::trial(&a, args),
        Command::Sweep(a) => commands::sweep(&a, args),
        Command::Analyze(a) => analyze::run(&a, args),
        Command::CheckEradication(a) => commands::check_eradication(&a, args),
        Command::Cohort(a) => commands::cohort(&a, args),
        Command::Calibrate(a) => commands::calibrate(&a, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
