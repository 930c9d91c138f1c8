//! Run configuration: a flat key-value text file plus command-line overrides.
//!
//! Every key has a documented default; unknown keys are rejected so typos
//! cannot silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pgfm::prototypes::PrototypeMode;
use pgfm::sampler::{GuidanceConfig, Method, SolverConfig};
use pgfm::{Error, Result};

/// Which velocity field drives sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// Closed-form marginal velocity of the configured mixture scenario.
    Oracle,
    /// Small MLP trained on the pool with the conditional flow-matching loss.
    Trained,
}

impl FieldKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FieldKind::Oracle => "oracle",
            FieldKind::Trained => "trained",
        }
    }
}

/// Effective configuration of one run. Defaults reproduce the reference
/// hyperparameters: 48x4 Heun, cfg_scale 0.3, lambda 0.5, s_end 0.6,
/// rho 0.5 -> 0.1, eta_init 0.09, k-means tolerance 1e-4 / 300 iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Bundled scenario name used when no dataset file is given.
    pub scenario: String,
    /// Optional dataset file; overrides the scenario as the data source.
    pub dataset: Option<PathBuf>,
    /// Pool size per class drawn from the scenario.
    pub samples_per_class: usize,
    /// Synthetic images (latents) per class; also the k-means K.
    pub ipc: usize,
    pub guidance: GuidanceConfig,
    pub solver: SolverConfig,
    pub clustering: PrototypeMode,
    pub field: FieldKind,
    /// Epochs for the trained field (ignored for the oracle).
    pub train_epochs: usize,
    pub seed: u64,
    /// Probe-training seeds for the evaluation report.
    pub eval_seeds: usize,
    /// Nearest real neighbors in the representativeness score.
    pub k_nn: usize,
    /// Decoder scale of the identity codec.
    pub s_vae: f64,
    /// Also synthesize and evaluate an unguided baseline variant.
    pub baseline: bool,
    /// Worker threads for synthesis; 0 = one per core. Outputs do not
    /// depend on this value.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: "desk8".into(),
            dataset: None,
            samples_per_class: 500,
            ipc: 8,
            guidance: GuidanceConfig::default(),
            solver: SolverConfig::default(),
            clustering: PrototypeMode::Centroid,
            field: FieldKind::Oracle,
            train_epochs: 20,
            seed: 0,
            eval_seeds: 20,
            k_nn: 50,
            s_vae: 1.0,
            baseline: true,
            workers: 0,
        }
    }
}

fn parse_key<T: std::str::FromStr>(key: &str, val: &str) -> Result<T> {
    val.parse()
        .map_err(|_| Error::Config(format!("config key '{key}': cannot parse value '{val}'")))
}

impl RunConfig {
    /// Parse a `key = value` config file. Lines starting with `#` and blank
    /// lines are ignored; any unknown key is a config error.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected 'key = value'", lineno + 1))
            })?;
            let (key, val) = (key.trim(), val.trim());
            match key {
                "scenario" => cfg.scenario = val.to_string(),
                "dataset" => cfg.dataset = Some(PathBuf::from(val)),
                "samples_per_class" => cfg.samples_per_class = parse_key(key, val)?,
                "ipc" => cfg.ipc = parse_key(key, val)?,
                "lambda" => cfg.guidance.lambda = parse_key(key, val)?,
                "s_end" => cfg.guidance.s_end = parse_key(key, val)?,
                "rho0" => cfg.guidance.rho0 = parse_key(key, val)?,
                "rho_min" => cfg.guidance.rho_min = parse_key(key, val)?,
                "c" => cfg.guidance.c = parse_key(key, val)?,
                "eta_init" => cfg.guidance.eta_init = parse_key(key, val)?,
                "cfg_scale" => cfg.guidance.cfg_scale = parse_key(key, val)?,
                "steps" => cfg.solver.steps = parse_key(key, val)?,
                "substeps" => cfg.solver.substeps = parse_key(key, val)?,
                "method" => cfg.solver.method = parse_method(val)?,
                "clustering" => cfg.clustering = PrototypeMode::parse(val)?,
                "field" => cfg.field = parse_field(val)?,
                "train_epochs" => cfg.train_epochs = parse_key(key, val)?,
                "seed" => cfg.seed = parse_key(key, val)?,
                "eval_seeds" => cfg.eval_seeds = parse_key(key, val)?,
                "k_nn" => cfg.k_nn = parse_key(key, val)?,
                "s_vae" => cfg.s_vae = parse_key(key, val)?,
                "baseline" => cfg.baseline = parse_key(key, val)?,
                "workers" => cfg.workers = parse_key(key, val)?,
                other => {
                    return Err(Error::Config(format!(
                        "config line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.guidance.validate()?;
        self.solver.validate()?;
        if self.ipc == 0 {
            return Err(Error::Config("ipc must be at least 1".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be at least 1".into()));
        }
        if self.eval_seeds == 0 {
            return Err(Error::Config("eval_seeds must be at least 1".into()));
        }
        if !(self.s_vae.is_finite() && self.s_vae > 0.0) {
            return Err(Error::Config("s_vae must be finite and positive".into()));
        }
        if self.field == FieldKind::Oracle && self.dataset.is_some() {
            return Err(Error::Config(
                "field = oracle needs a mixture scenario; use field = trained for file datasets"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Every effective parameter, including defaults, as a stable map —
    /// enough to re-run the pipeline bit-exactly.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("scenario", self.scenario.clone());
        put(
            "dataset",
            self.dataset
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        put("samples_per_class", self.samples_per_class.to_string());
        put("ipc", self.ipc.to_string());
        put("lambda", format!("{}", self.guidance.lambda));
        put("s_end", format!("{}", self.guidance.s_end));
        put("rho0", format!("{}", self.guidance.rho0));
        put("rho_min", format!("{}", self.guidance.rho_min));
        put("c", format!("{}", self.guidance.c));
        put("eta_init", format!("{}", self.guidance.eta_init));
        put("cfg_scale", format!("{}", self.guidance.cfg_scale));
        put("steps", self.solver.steps.to_string());
        put("substeps", self.solver.substeps.to_string());
        put(
            "method",
            match self.solver.method {
                Method::Euler => "euler".into(),
                Method::Heun => "heun".into(),
            },
        );
        put("clustering", self.clustering.as_str().to_string());
        put("field", self.field.as_str().to_string());
        put("train_epochs", self.train_epochs.to_string());
        put("seed", self.seed.to_string());
        put("eval_seeds", self.eval_seeds.to_string());
        put("k_nn", self.k_nn.to_string());
        put("s_vae", format!("{}", self.s_vae));
        put("baseline", self.baseline.to_string());
        put("workers", self.workers.to_string());
        m
    }
}

fn parse_method(val: &str) -> Result<Method> {
    match val {
        "euler" => Ok(Method::Euler),
        "heun" => Ok(Method::Heun),
        other => Err(Error::Config(format!(
            "method must be 'euler' or 'heun', got '{other}'"
        ))),
    }
}

fn parse_field(val: &str) -> Result<FieldKind> {
    match val {
        "oracle" => Ok(FieldKind::Oracle),
        "trained" => Ok(FieldKind::Trained),
        other => Err(Error::Config(format!(
            "field must be 'oracle' or 'trained', got '{other}'"
        ))),
    }
}
