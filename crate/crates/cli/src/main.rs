//! `dream` — trace-driven DRAM controller simulation with run-time
//! address-mapping prediction and on-demand row migration.
//!
//! Exit codes: 0 success, 2 usage/configuration error, 3 internal
//! invariant breach.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dream_core::dramsim::SimError;
use dream_core::migration::{CostScenario, MigrationError};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "dream",
    version,
    about = "DRAM address-mapping prediction and migration simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostModelArg {
    InDram,
    OfflineReboot,
    NvdimmBulk,
    NanoCommit,
}

impl From<CostModelArg> for CostScenario {
    fn from(v: CostModelArg) -> Self {
        match v {
            CostModelArg::InDram => CostScenario::InDram,
            CostModelArg::OfflineReboot => CostScenario::OfflineReboot,
            CostModelArg::NvdimmBulk => CostScenario::NvdimmBulk,
            CostModelArg::NanoCommit => CostScenario::NanoCommit,
        }
    }
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// JSON run-configuration file (flags below override it)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Requests per monitoring window
    #[arg(long, global = true)]
    window: Option<u64>,
    /// Adoption threshold as a fraction (e.g. 0.07)
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Consecutive qualifying windows required before adoption
    #[arg(long, global = true)]
    consistency: Option<u32>,
    /// Migration cost scenario
    #[arg(long, global = true, value_enum)]
    cost_model: Option<CostModelArg>,
    /// Seed for synthetic workloads
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (most commands) or file (gen-trace); stdout if
    /// omitted
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl CommonOpts {
    fn run_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        commands::apply_overrides(
            &mut cfg,
            self.window,
            self.threshold,
            self.consistency,
            self.cost_model.map(Into::into),
            self.seed,
        );
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Profile a trace into per-window bit-change signatures (CSV)
    Profile {
        #[command(flatten)]
        common: CommonOpts,
        /// Trace file (optionally gzip-compressed)
        #[arg(long)]
        trace: PathBuf,
    },
    /// Simulate a trace under a controller and emit the report (JSON)
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        /// Trace file(s); multiple files interleave as one thread each
        #[arg(long, required = true)]
        trace: Vec<PathBuf>,
        /// fixed:<scheme>, dream-online or dream-offline, where <scheme> is
        /// baseline, permutation, minimalist or a scheme-file path
        #[arg(long)]
        controller: String,
        /// Predefined scheme for the dream controllers
        #[arg(long, default_value = "baseline")]
        scheme: String,
    },
    /// Run a scheme matrix over traces and emit the normalized table (CSV)
    Compare {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, required = true)]
        trace: Vec<PathBuf>,
        /// Schemes/controllers to compare (comma-separated); dream-offline
        /// and dream-online are accepted alongside scheme names
        #[arg(long, value_delimiter = ',', default_value = "baseline,permutation,minimalist")]
        schemes: Vec<String>,
        /// Scheme every workload is normalized against
        #[arg(long, default_value = "baseline")]
        baseline: String,
        /// Predefined scheme for any dream controllers in the matrix
        #[arg(long, default_value = "baseline")]
        scheme: String,
    },
    /// Correlate bit-change improvement with performance improvement over
    /// the bundled synthetic workload suite
    Correlate {
        #[command(flatten)]
        common: CommonOpts,
        /// Limit the suite to its first N workloads
        #[arg(long)]
        workloads: Option<usize>,
        /// Requests per synthetic workload
        #[arg(long, default_value_t = 150_000)]
        requests: u64,
        /// Scheme the study runs against
        #[arg(long, default_value = "baseline")]
        scheme: String,
    },
    /// Generate a synthetic trace
    GenTrace {
        #[command(flatten)]
        common: CommonOpts,
        /// sequential, strided or random (use --spec for mixes/phases)
        #[arg(long, default_value = "sequential")]
        kind: String,
        /// Requests to generate
        #[arg(long, default_value_t = 1000)]
        n: u64,
        /// Start address
        #[arg(long, default_value_t = 0)]
        start: u64,
        /// Stride in bytes (strided kind)
        #[arg(long, default_value_t = 64)]
        stride: u64,
        /// Address bit toggled on every other request (strided kind)
        #[arg(long)]
        hot_bit: Option<u32>,
        /// JSON trace-spec file for arbitrary patterns
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

fn real_main(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Profile { common, trace } => {
            let cfg = common.run_config()?;
            commands::profile(&cfg, &trace, &common.out)
        }
        Command::Simulate {
            common,
            trace,
            controller,
            scheme,
        } => {
            let cfg = common.run_config()?;
            commands::simulate(&cfg, &trace, &controller, &scheme, &common.out)
        }
        Command::Compare {
            common,
            trace,
            schemes,
            baseline,
            scheme,
        } => {
            let cfg = common.run_config()?;
            commands::compare(&cfg, &trace, &schemes, &baseline, &scheme, &common.out)
        }
        Command::Correlate {
            common,
            workloads,
            requests,
            scheme,
        } => {
            let cfg = common.run_config()?;
            commands::correlate(&cfg, workloads, requests, &scheme, &common.out)
        }
        Command::GenTrace {
            common,
            kind,
            n,
            start,
            stride,
            hot_bit,
            spec,
        } => {
            let cfg = common.run_config()?;
            commands::gen_trace(
                &cfg,
                &kind,
                n,
                start,
                stride,
                hot_bit,
                spec.as_deref(),
                &common.out,
            )
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(sim) = cause.downcast_ref::<SimError>() {
            if sim.is_integrity_failure() {
                return 3;
            }
        }
        if let Some(MigrationError::IntegrityFailure(_)) = cause.downcast_ref::<MigrationError>() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
