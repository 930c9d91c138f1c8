//! Pipeline stages behind the CLI commands: data generation, prototype
//! construction, synthesis, evaluation, reporting, and the end-to-end run.
//!
//! Every stage reads and writes files under one run directory, so stages can
//! be invoked individually or chained by `pipeline`. All randomness derives
//! from the configured seed; outputs are byte-identical across re-runs and
//! worker counts.

use std::fmt::Write as _;
use std::path::Path;

use pgfm::latent::{
    fit_standardizer, load_dataset, save_dataset, sample_mixture_dataset, standardize, ClassPool,
    Direction, LatentCodec, MixtureSpec, Standardizer,
};
use pgfm::metrics::{
    coverage, hit_rate, moment_error, nfe_report, probe_eval, representativeness, CoverageReport,
    EvalReport,
};
use pgfm::prototypes::{assign_prototypes, build_prototypes, load_prototypes, save_prototypes};
use pgfm::sampler::{synthesize_set, trajectory_csv, GuidanceConfig, SynthesisResult};
use pgfm::scenario::{by_name, load_mixture_spec, save_mixture_spec};
use pgfm::train::{train_field, TrainConfig};
use pgfm::velocity::{OracleMixtureField, VelocityField};
use pgfm::{Error, Result};

use crate::config::{FieldKind, RunConfig};
use crate::manifest::Manifest;
use crate::svg::{scatter, Marker, Series};

pub const DATA_FILE: &str = "data.txt";
pub const MIXTURE_FILE: &str = "mixture.txt";
pub const STANDARDIZER_FILE: &str = "standardizer.json";
pub const PROTOTYPES_FILE: &str = "prototypes.txt";
pub const EVAL_REPORT_FILE: &str = "eval_report.csv";
pub const METRICS_FILE: &str = "metrics.txt";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Synthesis variants a run can produce.
fn variants(cfg: &RunConfig) -> Vec<&'static str> {
    if cfg.baseline {
        vec!["guided", "unguided"]
    } else {
        vec!["guided"]
    }
}

pub fn synthetic_file(variant: &str) -> String {
    format!("synthetic_{variant}.txt")
}

pub fn trajectories_file(variant: &str) -> String {
    format!("trajectories_{variant}.csv")
}

pub fn coverage_file(variant: &str) -> String {
    format!("coverage_{variant}.csv")
}

/// All artifact names the pipeline is expected to produce for this config.
pub fn expected_artifacts(cfg: &RunConfig) -> Vec<String> {
    let mut names = vec![DATA_FILE.to_string()];
    if cfg.dataset.is_none() {
        names.push(MIXTURE_FILE.to_string());
    }
    names.push(STANDARDIZER_FILE.to_string());
    names.push(PROTOTYPES_FILE.to_string());
    for v in variants(cfg) {
        names.push(synthetic_file(v));
        names.push(trajectories_file(v));
        names.push(coverage_file(v));
    }
    names.push(EVAL_REPORT_FILE.to_string());
    names.push(METRICS_FILE.to_string());
    names
}

fn codec(cfg: &RunConfig) -> LatentCodec {
    LatentCodec::Identity { s_vae: cfg.s_vae }
}

/// Scale a raw-space mixture through the identity codec so the oracle field
/// lives in the same (encoded) space as the pool latents.
fn encode_spec(spec: &MixtureSpec, s_vae: f64) -> MixtureSpec {
    let classes = spec
        .classes
        .iter()
        .map(|comps| {
            comps
                .iter()
                .map(|c| pgfm::latent::MixtureComponent {
                    mean: c.mean.iter().map(|m| m * s_vae).collect(),
                    std: c.std * s_vae,
                    weight: c.weight,
                })
                .collect()
        })
        .collect();
    MixtureSpec { classes }
}

fn load_standardizer(out: &Path) -> Result<Standardizer> {
    let path = out.join(STANDARDIZER_FILE);
    let text = std::fs::read_to_string(&path).map_err(|_| {
        Error::Data(format!(
            "no standardizer at {}; run the prototypes stage first",
            path.display()
        ))
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("malformed standardizer: {e}")))
}

fn save_standardizer(s: &Standardizer, out: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(s)
        .map_err(|e| Error::Data(format!("standardizer serialization failed: {e}")))?;
    std::fs::write(out.join(STANDARDIZER_FILE), text + "\n")?;
    Ok(())
}

/// Encode the raw pool through the codec and standardize it.
fn standardized_pool(pool: &ClassPool, cfg: &RunConfig, s: &Standardizer) -> Result<ClassPool> {
    let codec = codec(cfg);
    let mut out = ClassPool::new(pool.dim(), pool.num_classes());
    for item in pool.iter() {
        let encoded = codec.encode(&item.z)?;
        let z = standardize(&encoded, s, Direction::Forward)?;
        out.push(pgfm::latent::LabeledLatent { z, y: item.y })?;
    }
    Ok(out)
}

/// Stage 1: materialize the labeled pool (`data.txt`), either by sampling the
/// configured mixture scenario (also writing `mixture.txt`) or by copying a
/// dataset file into canonical form.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    match &cfg.dataset {
        Some(path) => {
            let pool = load_dataset(path)?;
            save_dataset(&pool, &out.join(DATA_FILE))?;
        }
        None => {
            let spec = by_name(&cfg.scenario)?;
            let pool = sample_mixture_dataset(&spec, cfg.samples_per_class, cfg.seed)?;
            save_dataset(&pool, &out.join(DATA_FILE))?;
            save_mixture_spec(&spec, &out.join(MIXTURE_FILE))?;
        }
    }
    Ok(())
}

/// Stage 2: fit the standardizer on the encoded pool and cluster each class
/// into `ipc` prototypes (`standardizer.json`, `prototypes.txt`).
pub fn prototypes(cfg: &RunConfig, out: &Path) -> Result<()> {
    let pool = load_dataset(&out.join(DATA_FILE))?;
    let codec = codec(cfg);
    let encoded = {
        let mut p = ClassPool::new(pool.dim(), pool.num_classes());
        for item in pool.iter() {
            p.push(pgfm::latent::LabeledLatent { z: codec.encode(&item.z)?, y: item.y })?;
        }
        p
    };
    let standardizer = fit_standardizer(&encoded)?;
    save_standardizer(&standardizer, out)?;
    let std_pool = encoded.map_latents(|z| {
        standardize(z, &standardizer, Direction::Forward).expect("dims match by construction")
    });
    let protos = build_prototypes(&std_pool, cfg.ipc, cfg.clustering, cfg.seed)?;
    save_prototypes(&protos, &out.join(PROTOTYPES_FILE))?;
    Ok(())
}

fn build_field(cfg: &RunConfig, out: &Path, std_pool: &ClassPool) -> Result<Box<dyn VelocityField>> {
    match cfg.field {
        FieldKind::Oracle => {
            let spec = load_mixture_spec(&out.join(MIXTURE_FILE)).map_err(|_| {
                Error::Data(format!(
                    "field = oracle needs {MIXTURE_FILE} in the run directory; \
                     was the data generated from a scenario?"
                ))
            })?;
            let standardizer = load_standardizer(out)?;
            let encoded = encode_spec(&spec, cfg.s_vae);
            Ok(Box::new(OracleMixtureField::from_spec_standardized(&encoded, &standardizer)?))
        }
        FieldKind::Trained => {
            let tcfg = TrainConfig { epochs: cfg.train_epochs, ..TrainConfig::default() };
            let outcome = train_field(std_pool, &tcfg, cfg.seed)?;
            Ok(Box::new(outcome.field))
        }
    }
}

fn synthesize_variant(
    cfg: &RunConfig,
    variant: &str,
    field: &dyn VelocityField,
    standardizer: &Standardizer,
    protos: &pgfm::prototypes::PrototypeSet,
) -> Result<SynthesisResult> {
    let gcfg = match variant {
        "guided" => cfg.guidance.clone(),
        // The baseline keeps solver and CFG settings so the comparison
        // isolates guidance itself.
        "unguided" => GuidanceConfig { lambda: 0.0, eta_init: 0.0, ..cfg.guidance.clone() },
        other => return Err(Error::Config(format!("unknown variant '{other}'"))),
    };
    let result = synthesize_set(
        standardizer,
        &codec(cfg),
        protos,
        field,
        &gcfg,
        &cfg.solver,
        cfg.ipc,
        cfg.seed,
    )?;
    // Cross-check the per-trajectory NFE counters against the closed form.
    nfe_report(&result.records, &cfg.solver, cfg.guidance.cfg_scale > 0.0)?;
    Ok(result)
}

/// Stage 3: integrate the guided flow (and the unguided baseline when
/// configured), writing per-variant synthetic sets and trajectory logs.
pub fn sample(cfg: &RunConfig, out: &Path) -> Result<()> {
    let pool = load_dataset(&out.join(DATA_FILE))?;
    let standardizer = load_standardizer(out)?;
    let protos = load_prototypes(&out.join(PROTOTYPES_FILE))?;
    let std_pool = standardized_pool(&pool, cfg, &standardizer)?;
    let field = build_field(cfg, out, &std_pool)?;
    let thread_pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    for variant in variants(cfg) {
        let result = thread_pool
            .install(|| synthesize_variant(cfg, variant, field.as_ref(), &standardizer, &protos))?;
        save_dataset(&result.decoded, &out.join(synthetic_file(variant)))?;
        std::fs::write(out.join(trajectories_file(variant)), trajectory_csv(&result.records))?;
    }
    Ok(())
}

/// Empirical moment errors against the real pool when no analytic mixture is
/// available: mean L2 distance and covariance Frobenius distance, both in
/// standardized space.
fn empirical_moment_error(synthetic: &[Vec<f64>], real: &[Vec<f64>]) -> Result<(f64, f64)> {
    let dim = real.first().map(|z| z.len()).ok_or_else(|| {
        Error::Data("empirical moments need a non-empty real class".into())
    })?;
    let stats = |points: &[Vec<f64>]| -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = points.len() as f64;
        let mut mean = vec![0.0; dim];
        for p in points {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / n;
            }
        }
        let mut cov = vec![vec![0.0; dim]; dim];
        for p in points {
            for i in 0..dim {
                for j in 0..dim {
                    cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / n;
                }
            }
        }
        (mean, cov)
    };
    let (ms, cs) = stats(synthetic);
    let (mr, cr) = stats(real);
    let mean_err = ms.iter().zip(&mr).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let cov_err = cs
        .iter()
        .flatten()
        .zip(cr.iter().flatten())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok((mean_err, cov_err))
}

struct VariantEval {
    variant: &'static str,
    report: CoverageReport,
    probe: EvalReport,
}

fn evaluate_variant(
    cfg: &RunConfig,
    out: &Path,
    variant: &'static str,
    real_std: &ClassPool,
    spec: Option<&MixtureSpec>,
    protos: &pgfm::prototypes::PrototypeSet,
) -> Result<VariantEval> {
    let decoded = load_dataset(&out.join(synthetic_file(variant)))?;
    if decoded.num_classes() != protos.num_classes() {
        return Err(Error::Data(format!(
            "synthetic set has {} classes but prototypes have {}",
            decoded.num_classes(),
            protos.num_classes()
        )));
    }
    let standardizer = load_standardizer(out)?;
    let synth_std = standardized_pool(&decoded, cfg, &standardizer)?;
    let num_classes = protos.num_classes();
    let by_class: Vec<Vec<Vec<f64>>> =
        (0..num_classes).map(|y| synth_std.class(y).to_vec()).collect();
    for (y, class) in by_class.iter().enumerate() {
        if class.len() != cfg.ipc {
            return Err(Error::Data(format!(
                "class {y} has {} synthetic samples, expected ipc = {}",
                class.len(),
                cfg.ipc
            )));
        }
    }
    // Assignments are the deterministic round-robin schedule, identical to
    // the one used at synthesis time.
    let schedule = assign_prototypes(protos.k, cfg.ipc)?.indices();
    let assignments: Vec<Vec<usize>> = vec![schedule; num_classes];
    let (per_class_hit_rate, average_hit_rate) = hit_rate(&by_class, &assignments, protos)?;
    let mut per_class_coverage = Vec::with_capacity(num_classes);
    let mut per_class_representativeness = Vec::with_capacity(num_classes);
    let mut per_class_mean_error = Vec::with_capacity(num_classes);
    let mut per_class_cov_error = Vec::with_capacity(num_classes);
    for y in 0..num_classes {
        per_class_coverage.push(coverage(&by_class[y], &protos.centers[y]));
        per_class_representativeness.push(representativeness(
            &by_class[y],
            real_std.class(y),
            cfg.k_nn.min(real_std.class(y).len()),
        )?);
        let (me, ce) = match spec {
            Some(spec) => moment_error(decoded.class(y), spec, y)?,
            None => empirical_moment_error(&by_class[y], real_std.class(y))?,
        };
        per_class_mean_error.push(me);
        per_class_cov_error.push(ce);
    }
    let cfg_active = cfg.guidance.cfg_scale > 0.0;
    let total_nfe =
        cfg.solver.nfe_per_sample(cfg_active) * (num_classes * cfg.ipc) as u64;
    let report = CoverageReport {
        per_class_hit_rate,
        average_hit_rate,
        per_class_coverage,
        per_class_representativeness,
        per_class_mean_error,
        per_class_cov_error,
        total_nfe,
    };
    let probe = probe_eval(&synth_std, real_std, cfg.eval_seeds)?;
    Ok(VariantEval { variant, report, probe })
}

/// Stage 4: score each synthetic variant (hit rate, coverage,
/// representativeness, moment errors, linear probe) and write
/// `coverage_<variant>.csv`, `eval_report.csv`, and `metrics.txt`.
pub fn evaluate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let pool = load_dataset(&out.join(DATA_FILE))?;
    let standardizer = load_standardizer(out)?;
    let protos = load_prototypes(&out.join(PROTOTYPES_FILE))?;
    let real_std = standardized_pool(&pool, cfg, &standardizer)?;
    let spec = if cfg.dataset.is_none() {
        Some(load_mixture_spec(&out.join(MIXTURE_FILE))?)
    } else {
        None
    };
    let mut evals = Vec::new();
    for variant in variants(cfg) {
        let eval = evaluate_variant(cfg, out, variant, &real_std, spec.as_ref(), &protos)?;
        std::fs::write(out.join(coverage_file(variant)), eval.report.to_csv())?;
        evals.push(eval);
    }
    let mut eval_csv = String::from("variant,seeds,mean_accuracy,std_accuracy,degenerate\n");
    for e in &evals {
        let _ = writeln!(
            eval_csv,
            "{},{},{},{},{}",
            e.variant,
            e.probe.per_seed_accuracy.len(),
            e.probe.mean_accuracy,
            e.probe.std_accuracy,
            e.probe.degenerate
        );
    }
    std::fs::write(out.join(EVAL_REPORT_FILE), eval_csv)?;
    let mut metrics = String::new();
    for e in &evals {
        let _ = writeln!(metrics, "{}_hit_rate_pct = {}", e.variant, e.report.average_hit_rate);
        let _ = writeln!(
            metrics,
            "{}_coverage = {}",
            e.variant,
            mean(&e.report.per_class_coverage)
        );
        let _ = writeln!(
            metrics,
            "{}_representativeness = {}",
            e.variant,
            mean(&e.report.per_class_representativeness)
        );
        let _ = writeln!(metrics, "{}_probe_accuracy = {}", e.variant, e.probe.mean_accuracy);
        let _ = writeln!(metrics, "{}_total_nfe = {}", e.variant, e.report.total_nfe);
    }
    std::fs::write(out.join(METRICS_FILE), metrics)?;
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Stage 5: verify the manifest, then write `summary.txt` and, for 2-D runs,
/// per-class and combined scatter SVGs overlaying real points, prototypes,
/// and synthetic samples.
pub fn report(out: &Path) -> Result<()> {
    let manifest = Manifest::load(out)?;
    manifest.verify(out)?;
    let cfg = manifest.run_config()?;
    let mut summary = String::from("variant      hit_rate_pct  coverage  representativeness  probe_accuracy  nfe\n");
    for variant in variants(&cfg) {
        let metrics = parse_metrics(&std::fs::read_to_string(out.join(METRICS_FILE))?)?;
        let get = |k: &str| -> Result<f64> {
            metrics
                .get(&format!("{variant}_{k}"))
                .copied()
                .ok_or_else(|| Error::Data(format!("metrics.txt is missing {variant}_{k}")))
        };
        let _ = writeln!(
            summary,
            "{variant:<12} {:>12.2}  {:>8.4}  {:>18.4}  {:>14.4}  {:>6.0}",
            get("hit_rate_pct")?,
            get("coverage")?,
            get("representativeness")?,
            get("probe_accuracy")?,
            get("total_nfe")?,
        );
    }
    let pool = load_dataset(&out.join(DATA_FILE))?;
    if pool.dim() == 2 {
        write_scatter_svgs(&cfg, out, &pool)?;
    } else {
        let notice = format!(
            "note: scatter SVGs skipped (latent dimension {} > 2)\n",
            pool.dim()
        );
        summary.push_str(&notice);
        print!("{notice}");
    }
    std::fs::write(out.join(SUMMARY_FILE), summary)?;
    Ok(())
}

fn parse_metrics(text: &str) -> Result<std::collections::BTreeMap<String, f64>> {
    let mut m = std::collections::BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("metrics.txt: bad value in '{line}'")))?;
            m.insert(k.trim().to_string(), v);
        }
    }
    Ok(m)
}

fn write_scatter_svgs(cfg: &RunConfig, out: &Path, pool: &ClassPool) -> Result<()> {
    let standardizer = load_standardizer(out)?;
    let protos = load_prototypes(&out.join(PROTOTYPES_FILE))?;
    let synthetic = load_dataset(&out.join(synthetic_file("guided")))?;
    let codec = codec(cfg);
    // Plot in raw coordinates; prototypes live in standardized latent space
    // and are mapped back through the standardizer and codec.
    let proto_raw = |y: usize| -> Result<Vec<(f64, f64)>> {
        protos.centers[y]
            .iter()
            .map(|c| {
                let latent = standardize(c, &standardizer, Direction::Inverse)?;
                let raw = codec.decode(&latent)?;
                Ok((raw[0], raw[1]))
            })
            .collect()
    };
    let pts = |zs: &[Vec<f64>]| zs.iter().map(|z| (z[0], z[1])).collect::<Vec<_>>();
    let class_series = |y: usize| -> Result<Vec<Series>> {
        Ok(vec![
            Series {
                name: format!("real (class {y})"),
                color: "#9e9e9e".into(),
                marker: Marker::HollowCircle,
                points: pts(pool.class(y)),
            },
            Series {
                name: "prototypes".into(),
                color: "#d32f2f".into(),
                marker: Marker::Cross,
                points: proto_raw(y)?,
            },
            Series {
                name: "synthetic".into(),
                color: "#1976d2".into(),
                marker: Marker::FilledCircle,
                points: pts(synthetic.class(y)),
            },
        ])
    };
    let mut combined = Vec::new();
    for y in 0..pool.num_classes() {
        let series = class_series(y)?;
        let svg = scatter(&format!("class {y}"), &series);
        std::fs::write(out.join(format!("scatter_class_{y}.svg")), svg)?;
        combined.extend(series);
    }
    std::fs::write(out.join("scatter_combined.svg"), scatter("all classes", &combined))?;
    Ok(())
}

fn tag_stage(stage: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("stage {stage}: {m}")),
        Error::Data(m) => Error::Data(format!("stage {stage}: {m}")),
        Error::Shape(m) => Error::Shape(format!("stage {stage}: {m}")),
        Error::Divergence { step, msg } => {
            Error::Divergence { step, msg: format!("stage {stage}: {msg}") }
        }
        Error::Io(e) => Error::Data(format!("stage {stage}: io error: {e}")),
    }
}

/// End-to-end run: all stages in order, then a manifest hashing every
/// artifact, then the human-readable report. A stage failure writes a
/// manifest marked `failed` with the stage name and propagates the error.
pub fn pipeline(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let stage_list: [(&str, fn(&RunConfig, &Path) -> Result<()>); 4] = [
        ("gen-data", gen_data),
        ("prototypes", prototypes),
        ("sample", sample),
        ("evaluate", evaluate),
    ];
    let names = expected_artifacts(cfg);
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    for (stage, run) in stage_list {
        if let Err(e) = run(cfg, out) {
            Manifest::failed(cfg, out, stage, &name_refs)?.save(out)?;
            return Err(tag_stage(stage, e));
        }
    }
    Manifest::complete(cfg, out, &name_refs)?.save(out)?;
    report(out).map_err(|e| tag_stage("report", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.samples_per_class = 100;
        cfg.ipc = 2;
        cfg.solver.steps = 8;
        cfg.solver.substeps = 2;
        cfg.eval_seeds = 3;
        cfg
    }

    #[test]
    fn pipeline_smoke_run_produces_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        pipeline(&cfg, dir.path()).unwrap();
        for name in expected_artifacts(&cfg) {
            assert!(dir.path().join(&name).is_file(), "missing {name}");
        }
        assert!(dir.path().join(SUMMARY_FILE).is_file());
        assert!(dir.path().join("scatter_combined.svg").is_file());
        assert!(dir.path().join("scatter_class_0.svg").is_file());
        assert!(dir.path().join("scatter_class_1.svg").is_file());
        let synth = load_dataset(&dir.path().join(synthetic_file("guided"))).unwrap();
        assert_eq!(synth.len(), 4); // 2 classes x ipc 2
        Manifest::load(dir.path()).unwrap().verify(dir.path()).unwrap();
    }

    #[test]
    fn pipeline_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        pipeline(&cfg, dir.path()).unwrap();
        let first = std::fs::read(dir.path().join(synthetic_file("guided"))).unwrap();
        let first_manifest = std::fs::read(dir.path().join("manifest.json")).unwrap();
        pipeline(&cfg, dir.path()).unwrap();
        let second = std::fs::read(dir.path().join(synthetic_file("guided"))).unwrap();
        let second_manifest = std::fs::read(dir.path().join("manifest.json")).unwrap();
        assert_eq!(first, second);
        assert_eq!(first_manifest, second_manifest);
    }

    #[test]
    fn failed_stage_is_recorded_in_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.scenario = "desk8".into();
        gen_data(&cfg, dir.path()).unwrap();
        // Sabotage: remove the data file so the prototypes stage fails.
        std::fs::remove_file(dir.path().join(DATA_FILE)).unwrap();
        // Recreate the directory state the pipeline expects, then corrupt the
        // scenario name so gen-data itself fails inside the pipeline.
        cfg.scenario = "no-such-scenario".into();
        let err = pipeline(&cfg, dir.path()).unwrap_err();
        assert!(err.to_string().contains("stage gen-data"));
        let manifest = Manifest::load(dir.path()).unwrap();
        assert_eq!(manifest.status, "failed");
        assert_eq!(manifest.failed_stage.as_deref(), Some("gen-data"));
        assert!(manifest.verify(dir.path()).is_err());
    }

    #[test]
    fn report_rejects_tampered_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        pipeline(&cfg, dir.path()).unwrap();
        std::fs::write(dir.path().join(METRICS_FILE), "tampered").unwrap();
        let err = report(dir.path()).unwrap_err();
        assert!(err.to_string().contains("hash mismatch"));
    }

    #[test]
    fn empirical_moment_error_is_zero_on_identical_sets() {
        let a = vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.0, 0.5]];
        let (me, ce) = empirical_moment_error(&a, &a).unwrap();
        assert!(me < 1e-12 && ce < 1e-12);
    }
}
