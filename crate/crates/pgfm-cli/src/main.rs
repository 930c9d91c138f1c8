//! `pgfm` — prototype-guided flow-matching distillation pipeline.
//!
//! Subcommands mirror the pipeline stages (`gen-data`, `prototypes`,
//! `sample`, `evaluate`, `report`) plus the end-to-end `pipeline`. Exit
//! codes: 0 success, 2 config error, 3 data error, 4 numerical divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pgfm::Result;
use pgfm_cli::config::RunConfig;
use pgfm_cli::stages;

#[derive(Parser)]
#[command(name = "pgfm", version, about = "Prototype-guided flow-matching dataset distillation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample the configured mixture scenario (or canonicalize a dataset
    /// file) into the run directory.
    GenData(StageArgs),
    /// Fit the standardizer and cluster per-class prototypes.
    Prototypes(StageArgs),
    /// Integrate the guided flow (and unguided baseline) into synthetic sets.
    Sample(StageArgs),
    /// Score the synthetic sets: hit rate, coverage, representativeness,
    /// moment errors, linear probe.
    Evaluate(StageArgs),
    /// Verify the manifest and emit the summary table and scatter SVGs.
    Report {
        /// Run directory holding a completed pipeline.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Run every stage end to end and write the artifact manifest.
    Pipeline(StageArgs),
}

/// Common stage arguments: a config file plus single-knob overrides for the
/// usual ablation sweeps.
#[derive(Args)]
struct StageArgs {
    /// Key-value config file; defaults apply for omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for all artifacts.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Guidance strength override.
    #[arg(long)]
    lambda: Option<f64>,
    /// Guidance phase end override.
    #[arg(long)]
    s_end: Option<f64>,
    /// Initial trust-region ratio override.
    #[arg(long)]
    rho0: Option<f64>,
    /// Final trust-region ratio override.
    #[arg(long)]
    rho_min: Option<f64>,
    /// Warm-start strength override.
    #[arg(long)]
    eta_init: Option<f64>,
    /// Solver step count override.
    #[arg(long)]
    steps: Option<usize>,
    /// Solver substep count override.
    #[arg(long)]
    substeps: Option<usize>,
    /// Classifier-free-guidance scale override (0 disables the extra query).
    #[arg(long)]
    cfg_scale: Option<f64>,
    /// Synthetic samples per class (also the prototype count K).
    #[arg(long)]
    ipc: Option<usize>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for synthesis (0 = one per core).
    #[arg(long)]
    workers: Option<usize>,
}

impl StageArgs {
    fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.lambda {
            cfg.guidance.lambda = v;
        }
        if let Some(v) = self.s_end {
            cfg.guidance.s_end = v;
        }
        if let Some(v) = self.rho0 {
            cfg.guidance.rho0 = v;
        }
        if let Some(v) = self.rho_min {
            cfg.guidance.rho_min = v;
        }
        if let Some(v) = self.eta_init {
            cfg.guidance.eta_init = v;
        }
        if let Some(v) = self.steps {
            cfg.solver.steps = v;
        }
        if let Some(v) = self.substeps {
            cfg.solver.substeps = v;
        }
        if let Some(v) = self.cfg_scale {
            cfg.guidance.cfg_scale = v;
        }
        if let Some(v) = self.ipc {
            cfg.ipc = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData(args) => stages::gen_data(&args.effective_config()?, &args.out),
        Cmd::Prototypes(args) => stages::prototypes(&args.effective_config()?, &args.out),
        Cmd::Sample(args) => stages::sample(&args.effective_config()?, &args.out),
        Cmd::Evaluate(args) => stages::evaluate(&args.effective_config()?, &args.out),
        Cmd::Report { out } => stages::report(&out),
        Cmd::Pipeline(args) => stages::pipeline(&args.effective_config()?, &args.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successful exits; real usage errors
            // map to the config exit code.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
