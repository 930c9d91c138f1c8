//! The guided sampling engine: warm start, schedules, prototype control with
//! a trust region, explicit ODE integration, and decode-latent selection.
//!
//! A trajectory starts from warm-started Gaussian noise and integrates
//! `dz/dt = u_phi + g(t) * alpha(t) * u_proto` over a uniform grid of
//! `steps * substeps` increments. Guidance is evaluated at every substep.
//! The trust region caps the control term at `rho(s) * ||u_phi||`, `rho`
//! decays linearly until the early-stop gate shuts guidance off at `s_end`.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::latent::{standardize, ClassPool, Direction, LabeledLatent, LatentCodec, Standardizer};
use crate::prototypes::{assign_prototypes, PrototypeSet};
use crate::rng::derive_rng;
use crate::velocity::{cfg_combine, clean_from_velocity, VelocityField, EPS_T};

/// All knobs of the prototype-guidance mechanism.
///
/// `cfg_scale` is the classifier-free guidance scale; `0` disables the
/// unconditional query entirely (one field evaluation per velocity), any
/// positive value doubles the evaluation count.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    /// Path strength of the prototype control term.
    pub lambda: f64,
    /// Progress threshold past which guidance is gated off.
    pub s_end: f64,
    /// Initial trust-region radius.
    pub rho0: f64,
    /// Terminal trust-region radius reached at `s_end`.
    pub rho_min: f64,
    /// Stabilizer added to the control norm in the trust-region ratio.
    pub c: f64,
    /// Warm-start pull of the initial noise toward the assigned prototype.
    pub eta_init: f64,
    /// Classifier-free guidance scale; 0 = off.
    pub cfg_scale: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            lambda: 0.5,
            s_end: 0.6,
            rho0: 0.5,
            rho_min: 0.1,
            c: 1e-8,
            eta_init: 0.09,
            cfg_scale: 0.3,
        }
    }
}

impl GuidanceConfig {
    /// Fully disabled guidance: plain flow-matching sampling.
    pub fn unguided() -> Self {
        GuidanceConfig {
            lambda: 0.0,
            eta_init: 0.0,
            ..GuidanceConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.lambda,
            self.s_end,
            self.rho0,
            self.rho_min,
            self.c,
            self.eta_init,
            self.cfg_scale,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("guidance config has non-finite fields".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(self.s_end > 0.0 && self.s_end <= 1.0) {
            return Err(Error::Config("s_end must lie in (0, 1]".into()));
        }
        if self.rho0 <= 0.0 {
            return Err(Error::Config("rho0 must be positive".into()));
        }
        if self.rho_min < 0.0 || self.rho_min > self.rho0 {
            return Err(Error::Config("rho_min must lie in [0, rho0]".into()));
        }
        if self.c <= 0.0 {
            return Err(Error::Config("c must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eta_init) {
            return Err(Error::Config("eta_init must lie in [0, 1]".into()));
        }
        if self.cfg_scale < 0.0 {
            return Err(Error::Config("cfg_scale must be >= 0".into()));
        }
        Ok(())
    }

    fn cfg_active(&self) -> bool {
        self.cfg_scale > 0.0
    }
}

/// Explicit integration method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Euler,
    Heun,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Euler => "euler",
            Method::Heun => "heun",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "heun" => Ok(Method::Heun),
            other => Err(Error::Config(format!("unknown solver method '{other}'"))),
        }
    }

    /// Field-velocity evaluations per substep (before the CFG multiplier).
    pub fn evals_per_substep(&self) -> u64 {
        match self {
            Method::Euler => 1,
            Method::Heun => 2,
        }
    }
}

/// Uniform-grid solver configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub steps: usize,
    pub substeps: usize,
    pub method: Method,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            steps: 48,
            substeps: 4,
            method: Method::Heun,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.substeps == 0 {
            return Err(Error::Config("steps and substeps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn grid_len(&self) -> usize {
        self.steps * self.substeps
    }

    /// Closed-form NFE for one trajectory under this solver and CFG setting.
    pub fn nfe_per_sample(&self, cfg_active: bool) -> u64 {
        self.grid_len() as u64 * self.method.evals_per_substep() * if cfg_active { 2 } else { 1 }
    }
}

/// Convex pull of the initial noise toward the assigned prototype.
pub fn warm_start(z0: &[f64], mu: &[f64], eta: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("eta must lie in [0, 1], got {eta}")));
    }
    if z0.len() != mu.len() {
        return Err(Error::Shape("warm start dim mismatch".into()));
    }
    Ok(z0
        .iter()
        .zip(mu)
        .map(|(z, m)| (1.0 - eta) * z + eta * m)
        .collect())
}

/// Progress variable; the identity map on the uniform grid.
pub fn progress(t: f64) -> f64 {
    t
}

/// Early-stop gate: 1 while `s <= s_end` (inclusive), 0 afterwards.
pub fn gate(s: f64, s_end: f64) -> u8 {
    u8::from(s <= s_end)
}

/// Linear trust-radius decay from `rho0` at s=0 to `rho_min` at `s_end`.
pub fn rho_schedule(s: f64, cfg: &GuidanceConfig) -> f64 {
    cfg.rho0 + (cfg.rho_min - cfg.rho0) * s / cfg.s_end
}

/// Prototype control velocity `lambda * (mu - z1_hat)`.
pub fn prototype_control(zhat1: &[f64], mu: &[f64], lambda: f64) -> Vec<f64> {
    zhat1.iter().zip(mu).map(|(z, m)| lambda * (m - z)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Trust-region factor `min(1, rho ||u_phi|| / (||u_proto|| + c))`, which
/// bounds the scaled control at `rho * ||u_phi||`.
pub fn trust_region_scale(u_phi: &[f64], u_proto: &[f64], rho: f64, c: f64) -> f64 {
    (rho * norm(u_phi) / (norm(u_proto) + c)).min(1.0)
}

/// Per-substep diagnostics recorded along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub t: f64,
    pub norm_u_phi: f64,
    pub norm_u_proto: f64,
    pub alpha: f64,
    pub g: u8,
}

/// One trajectory's outputs: final solver state, final clean prediction,
/// the substep log, and the field evaluations consumed.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub class: usize,
    pub k: usize,
    pub final_z: Vec<f64>,
    pub final_zhat: Vec<f64>,
    pub log: Vec<StepLog>,
    pub nfe: u64,
}

struct GuidedEval {
    velocity: Vec<f64>,
    zhat: Vec<f64>,
    diag: StepLog,
    evals: u64,
}

/// Assemble the guided velocity at one state: base field (with CFG when
/// configured), clean prediction, prototype control, trust region, gate.
fn eval_guided(
    t: f64,
    z: &[f64],
    y: usize,
    mu: &[f64],
    field: &dyn VelocityField,
    cfg: &GuidanceConfig,
) -> Result<GuidedEval> {
    let u_cond = field.eval(t, z, Some(y))?;
    let (u_phi, evals) = if cfg.cfg_active() {
        let u_uncond = field.eval(t, z, None)?;
        (cfg_combine(&u_cond, &u_uncond, cfg.cfg_scale), 2)
    } else {
        (u_cond, 1)
    };
    let zhat = clean_from_velocity(t, z, &u_phi);
    let s = progress(t);
    let g = gate(s, cfg.s_end);
    let u_proto = prototype_control(&zhat, mu, cfg.lambda);
    let (alpha, velocity) = if g == 1 {
        let rho = rho_schedule(s, cfg);
        let alpha = trust_region_scale(&u_phi, &u_proto, rho, cfg.c);
        let v = u_phi
            .iter()
            .zip(&u_proto)
            .map(|(a, b)| a + alpha * b)
            .collect();
        (alpha, v)
    } else {
        (0.0, u_phi.clone())
    };
    Ok(GuidedEval {
        velocity,
        diag: StepLog {
            t,
            norm_u_phi: norm(&u_phi),
            norm_u_proto: norm(&u_proto),
            alpha,
            g,
        },
        zhat,
        evals,
    })
}

/// Guided velocity and diagnostics at a single state; 1-based prototype
/// index `k`.
pub fn guided_velocity(
    t: f64,
    z: &[f64],
    y: usize,
    k: usize,
    field: &dyn VelocityField,
    protos: &PrototypeSet,
    cfg: &GuidanceConfig,
) -> Result<(Vec<f64>, StepLog)> {
    let out = eval_guided(t, z, y, protos.center(y, k), field, cfg)?;
    Ok((out.velocity, out.diag))
}

/// Integrate the guided ODE from a warm-started latent to t = 1.
pub fn integrate(
    z0: &[f64],
    y: usize,
    k: usize,
    field: &dyn VelocityField,
    protos: &PrototypeSet,
    gcfg: &GuidanceConfig,
    scfg: &SolverConfig,
) -> Result<TrajectoryRecord> {
    integrate_with_observer(z0, y, k, field, protos, gcfg, scfg, |_, _, _| {})
}

/// Like [`integrate`], invoking `observe(substep, t, state)` at every grid
/// node before the step is taken.
#[allow(clippy::too_many_arguments)]
pub fn integrate_with_observer(
    z0: &[f64],
    y: usize,
    k: usize,
    field: &dyn VelocityField,
    protos: &PrototypeSet,
    gcfg: &GuidanceConfig,
    scfg: &SolverConfig,
    mut observe: impl FnMut(usize, f64, &[f64]),
) -> Result<TrajectoryRecord> {
    gcfg.validate()?;
    scfg.validate()?;
    let mu = protos.center(y, k);
    let total = scfg.grid_len();
    let h = 1.0 / total as f64;
    let mut z = z0.to_vec();
    let mut log = Vec::with_capacity(total);
    let mut nfe = 0;
    let mut final_zhat = z.clone();
    for i in 0..total {
        // Every field query clamps to the terminal guard so grids finer than
        // eps_t keep their interior nodes legal.
        let t = (i as f64 / total as f64).min(1.0 - EPS_T);
        observe(i, t, &z);
        let pred = eval_guided(t, &z, y, mu, field, gcfg)?;
        nfe += pred.evals;
        final_zhat = pred.zhat;
        log.push(pred.diag);
        match scfg.method {
            Method::Euler => {
                for (zi, ui) in z.iter_mut().zip(&pred.velocity) {
                    *zi += h * ui;
                }
            }
            Method::Heun => {
                let t_next = ((i + 1) as f64 / total as f64).min(1.0 - EPS_T);
                let z_pred: Vec<f64> = z
                    .iter()
                    .zip(&pred.velocity)
                    .map(|(zi, ui)| zi + h * ui)
                    .collect();
                let corr = eval_guided(t_next, &z_pred, y, mu, field, gcfg)?;
                nfe += corr.evals;
                for ((zi, u1), u2) in z.iter_mut().zip(&pred.velocity).zip(&corr.velocity) {
                    *zi += 0.5 * h * (u1 + u2);
                }
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: i,
                msg: format!("non-finite state in class {y} trajectory"),
            });
        }
    }
    observe(total, 1.0, &z);
    Ok(TrajectoryRecord {
        class: y,
        k,
        final_z: z,
        final_zhat,
        log,
        nfe,
    })
}

/// Unguided reference sampler: plain flow-matching integration with no
/// guidance code on the path. Kept separate so the guidance off-switch can be
/// checked against an implementation that cannot be influenced by it.
pub fn integrate_unguided(
    z0: &[f64],
    y: usize,
    field: &dyn VelocityField,
    cfg_scale: f64,
    scfg: &SolverConfig,
) -> Result<Vec<f64>> {
    scfg.validate()?;
    let total = scfg.grid_len();
    let h = 1.0 / total as f64;
    let base = |t: f64, z: &[f64]| -> Result<Vec<f64>> {
        let u = field.eval(t, z, Some(y))?;
        if cfg_scale > 0.0 {
            let u_un = field.eval(t, z, None)?;
            Ok(cfg_combine(&u, &u_un, cfg_scale))
        } else {
            Ok(u)
        }
    };
    let mut z = z0.to_vec();
    for i in 0..total {
        let t = (i as f64 / total as f64).min(1.0 - EPS_T);
        let u1 = base(t, &z)?;
        match scfg.method {
            Method::Euler => {
                for (zi, ui) in z.iter_mut().zip(&u1) {
                    *zi += h * ui;
                }
            }
            Method::Heun => {
                let t_next = ((i + 1) as f64 / total as f64).min(1.0 - EPS_T);
                let z_pred: Vec<f64> = z.iter().zip(&u1).map(|(zi, ui)| zi + h * ui).collect();
                let u2 = base(t_next, &z_pred)?;
                for ((zi, a), b) in z.iter_mut().zip(&u1).zip(&u2) {
                    *zi += 0.5 * h * (a + b);
                }
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: i,
                msg: "non-finite state in unguided trajectory".into(),
            });
        }
    }
    Ok(z)
}

/// Which candidate set a batch decode selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeChoice {
    SolverState,
    CleanPrediction,
}

impl DecodeChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecodeChoice::SolverState => "solver_state",
            DecodeChoice::CleanPrediction => "clean_prediction",
        }
    }
}

fn norm_std(batch: &[Vec<f64>]) -> f64 {
    let norms: Vec<f64> = batch.iter().map(|z| norm(z)).collect();
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    (norms.iter().map(|n| (n - mean) * (n - mean)).sum::<f64>() / norms.len() as f64).sqrt()
}

/// Pick the decode candidate with the smaller batch-wise scatter of latent
/// norms; exact ties (and singleton batches) prefer the solver state.
pub fn select_decode_latent(
    batch_z1: &[Vec<f64>],
    batch_zhat1: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, DecodeChoice)> {
    if batch_z1.is_empty() || batch_z1.len() != batch_zhat1.len() {
        return Err(Error::Data("decode selection needs equal non-empty batches".into()));
    }
    if batch_z1.len() == 1 {
        return Ok((batch_z1.to_vec(), DecodeChoice::SolverState));
    }
    let std_z1 = norm_std(batch_z1);
    let std_zhat = norm_std(batch_zhat1);
    if std_zhat < std_z1 {
        Ok((batch_zhat1.to_vec(), DecodeChoice::CleanPrediction))
    } else {
        Ok((batch_z1.to_vec(), DecodeChoice::SolverState))
    }
}

/// Distilled synthetic set plus everything needed to evaluate it.
#[derive(Debug, Clone)]
pub struct SynthesisResult {
    /// Decoded samples (raw coordinates, after de-standardization and codec).
    pub decoded: ClassPool,
    /// Selected latents per class, still in standardized space.
    pub standardized: Vec<Vec<Vec<f64>>>,
    /// 1-based assigned prototype index per (class, sample).
    pub assignments: Vec<Vec<usize>>,
    /// Per-class decode choice.
    pub choices: Vec<DecodeChoice>,
    pub records: Vec<TrajectoryRecord>,
}

impl SynthesisResult {
    pub fn total_nfe(&self) -> u64 {
        self.records.iter().map(|r| r.nfe).sum()
    }
}

/// Run the full guided synthesis loop: per (class, k) draw noise from the
/// (seed, class, k) stream, warm start, integrate, then select decode latents
/// per class batch and map them back through the standardizer and codec.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_set(
    standardizer: &Standardizer,
    codec: &LatentCodec,
    protos: &PrototypeSet,
    field: &dyn VelocityField,
    gcfg: &GuidanceConfig,
    scfg: &SolverConfig,
    ipc: usize,
    seed: u64,
) -> Result<SynthesisResult> {
    gcfg.validate()?;
    scfg.validate()?;
    let dim = protos.dim();
    let num_classes = protos.num_classes();
    let assignment = assign_prototypes(protos.k, ipc)?;
    let mut decoded = ClassPool::new(dim, num_classes);
    let mut standardized = Vec::with_capacity(num_classes);
    let mut assignments = Vec::with_capacity(num_classes);
    let mut choices = Vec::with_capacity(num_classes);
    let mut records = Vec::with_capacity(num_classes * ipc);
    // One independent job per (class, sample); RNG streams are keyed by the
    // job coordinates, so any parallel schedule reproduces the sequential
    // output bit for bit.
    let jobs: Vec<(usize, usize, usize)> = (0..num_classes)
        .flat_map(|y| {
            let assignment = &assignment;
            (0..ipc).map(move |i| (y, i, assignment.prototype_for(i)))
        })
        .collect();
    let all_records: Vec<TrajectoryRecord> = jobs
        .par_iter()
        .map(|&(y, i, k)| {
            let mut rng = derive_rng(seed, &[0x5A17, y as u64, i as u64]);
            let z0: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let z0 = warm_start(&z0, protos.center(y, k), gcfg.eta_init)?;
            integrate(&z0, y, k, field, protos, gcfg, scfg).map_err(|e| match e {
                Error::Divergence { step, msg } => Error::Divergence {
                    step,
                    msg: format!("class {y}, sample {i}: {msg}"),
                },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let mut record_iter = all_records.into_iter();
    for y in 0..num_classes {
        let mut batch_z1 = Vec::with_capacity(ipc);
        let mut batch_zhat = Vec::with_capacity(ipc);
        let mut class_assign = Vec::with_capacity(ipc);
        for i in 0..ipc {
            let rec = record_iter.next().expect("one record per job");
            debug_assert_eq!((rec.class, rec.k), (y, assignment.prototype_for(i)));
            batch_z1.push(rec.final_z.clone());
            batch_zhat.push(rec.final_zhat.clone());
            class_assign.push(rec.k);
            records.push(rec);
        }
        let (selected, choice) = select_decode_latent(&batch_z1, &batch_zhat)?;
        for z in &selected {
            let raw = standardize(z, standardizer, Direction::Inverse)?;
            let sample = codec.decode(&raw)?;
            decoded.push(LabeledLatent { z: sample, y })?;
        }
        standardized.push(selected);
        assignments.push(class_assign);
        choices.push(choice);
    }
    Ok(SynthesisResult {
        decoded,
        standardized,
        assignments,
        choices,
        records,
    })
}

/// Render trajectory logs as CSV with one row per substep.
pub fn trajectory_csv(records: &[TrajectoryRecord]) -> String {
    let mut out = String::from("class,k,step,t,norm_u_phi,norm_u_proto,alpha,g\n");
    for r in records {
        for (step, l) in r.log.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.class, r.k, step, l.t, l.norm_u_phi, l.norm_u_proto, l.alpha, l.g
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{MixtureComponent, MixtureSpec};
    use crate::velocity::OracleMixtureField;
    use std::sync::atomic::{AtomicU64, Ordering};

    /// Constant-velocity test field.
    struct ConstField {
        v: Vec<f64>,
        nfe: AtomicU64,
    }

    impl ConstField {
        fn new(v: Vec<f64>) -> Self {
            ConstField { v, nfe: AtomicU64::new(0) }
        }
    }

    impl VelocityField for ConstField {
        fn dim(&self) -> usize {
            self.v.len()
        }
        fn eval(&self, _t: f64, _z: &[f64], _class: Option<usize>) -> Result<Vec<f64>> {
            self.nfe.fetch_add(1, Ordering::Relaxed);
            Ok(self.v.clone())
        }
        fn nfe(&self) -> u64 {
            self.nfe.load(Ordering::Relaxed)
        }
        fn reset_nfe(&self) {
            self.nfe.store(0, Ordering::Relaxed);
        }
    }

    fn single_proto(mu: Vec<f64>) -> PrototypeSet {
        PrototypeSet {
            centers: vec![vec![mu]],
            k: 1,
            mode: crate::prototypes::PrototypeMode::Centroid,
        }
    }

    #[test]
    fn warm_start_cases() {
        let z0 = vec![0.0, 0.0];
        let mu = vec![1.0, 1.0];
        assert_eq!(warm_start(&z0, &mu, 0.0).unwrap(), z0);
        assert_eq!(warm_start(&z0, &mu, 1.0).unwrap(), mu);
        assert_eq!(warm_start(&z0, &mu, 0.09).unwrap(), vec![0.09, 0.09]);
        assert!(warm_start(&z0, &mu, 1.1).is_err());
        assert!(warm_start(&z0, &mu, -0.1).is_err());
    }

    #[test]
    fn progress_is_identity() {
        assert_eq!(progress(0.0), 0.0);
        assert_eq!(progress(1.0), 1.0);
        assert_eq!(progress(0.6), 0.6);
    }

    #[test]
    fn gate_boundary_inclusive() {
        assert_eq!(gate(0.0, 0.6), 1);
        assert_eq!(gate(0.6, 0.6), 1);
        assert_eq!(gate(0.6 + 1e-9, 0.6), 0);
    }

    #[test]
    fn rho_schedule_endpoints_and_midpoint() {
        let cfg = GuidanceConfig::default();
        assert_eq!(rho_schedule(0.0, &cfg), 0.5);
        assert!((rho_schedule(cfg.s_end, &cfg) - 0.1).abs() < 1e-12);
        assert!((rho_schedule(0.3, &cfg) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn prototype_control_cases() {
        assert_eq!(prototype_control(&[0.0], &[1.0], 0.0), vec![0.0]);
        assert_eq!(prototype_control(&[1.0, 0.0], &[1.0, 0.0], 0.5), vec![0.0, 0.0]);
        assert_eq!(prototype_control(&[0.0, 0.0], &[1.0, 0.0], 0.5), vec![0.5, 0.0]);
    }

    #[test]
    fn trust_region_branches() {
        let alpha = trust_region_scale(&[1.0, 0.0], &[0.1, 0.0], 0.5, 1e-8);
        assert_eq!(alpha, 1.0);
        let alpha = trust_region_scale(&[1.0, 0.0], &[10.0, 0.0], 0.5, 1e-8);
        assert!((alpha - 0.05).abs() < 1e-9);
        let alpha = trust_region_scale(&[1.0, 0.0], &[0.0, 0.0], 0.5, 1e-8);
        assert_eq!(alpha, 1.0);
    }

    #[test]
    fn guided_gate_off_equals_base() {
        let field = ConstField::new(vec![1.0, 2.0]);
        let protos = single_proto(vec![5.0, 5.0]);
        let cfg = GuidanceConfig {
            cfg_scale: 0.0,
            ..GuidanceConfig::default()
        };
        let (u, diag) = guided_velocity(0.7, &[0.0, 0.0], 0, 1, &field, &protos, &cfg).unwrap();
        assert_eq!(u, vec![1.0, 2.0]);
        assert_eq!(diag.g, 0);
    }

    #[test]
    fn guided_lambda_zero_equals_base() {
        let field = ConstField::new(vec![1.0, 2.0]);
        let protos = single_proto(vec![5.0, 5.0]);
        let cfg = GuidanceConfig {
            lambda: 0.0,
            cfg_scale: 0.0,
            ..GuidanceConfig::default()
        };
        for &t in &[0.0, 0.3, 0.59, 0.9] {
            let (u, _) = guided_velocity(t, &[0.3, -0.4], 0, 1, &field, &protos, &cfg).unwrap();
            assert_eq!(u, vec![1.0, 2.0]);
        }
    }

    #[test]
    fn guided_deviation_bounded_by_trust_region() {
        use rand::Rng;
        let spec = MixtureSpec {
            classes: vec![vec![
                MixtureComponent { mean: vec![2.0, 0.0], std: 0.3, weight: 0.5 },
                MixtureComponent { mean: vec![-2.0, 0.0], std: 0.3, weight: 0.5 },
            ]],
        };
        let field = OracleMixtureField::from_spec(&spec).unwrap();
        let protos = single_proto(vec![2.0, 0.0]);
        let cfg = GuidanceConfig {
            cfg_scale: 0.0,
            ..GuidanceConfig::default()
        };
        let mut rng = derive_rng(0, &[0x71]);
        for _ in 0..1000 {
            let t: f64 = rng.gen::<f64>() * 0.99;
            let z = vec![rng.gen::<f64>() * 6.0 - 3.0, rng.gen::<f64>() * 6.0 - 3.0];
            let (u, diag) = guided_velocity(t, &z, 0, 1, &field, &protos, &cfg).unwrap();
            let base = field.eval(t, &z, Some(0)).unwrap();
            let dev: f64 = u
                .iter()
                .zip(&base)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let rho = if diag.g == 1 { rho_schedule(t, &cfg) } else { 0.0 };
            assert!(dev <= rho * diag.norm_u_phi + 1e-9, "t={t} dev={dev}");
            assert!((0.0..=1.0).contains(&diag.alpha));
        }
    }

    #[test]
    fn integrate_zero_dynamics() {
        let field = ConstField::new(vec![0.0, 0.0]);
        let protos = single_proto(vec![1.0, 1.0]);
        let gcfg = GuidanceConfig {
            lambda: 0.0,
            cfg_scale: 0.0,
            ..GuidanceConfig::default()
        };
        let scfg = SolverConfig { steps: 10, substeps: 2, method: Method::Euler };
        let rec = integrate(&[0.5, -0.5], 0, 1, &field, &protos, &gcfg, &scfg).unwrap();
        assert_eq!(rec.final_z, vec![0.5, -0.5]);
        assert_eq!(rec.log.len(), 20);
    }

    #[test]
    fn integrate_constant_field_exact() {
        let v = vec![1.5, -2.0];
        let protos = single_proto(vec![0.0, 0.0]);
        let gcfg = GuidanceConfig {
            lambda: 0.0,
            cfg_scale: 0.0,
            ..GuidanceConfig::default()
        };
        for method in [Method::Euler, Method::Heun] {
            let field = ConstField::new(v.clone());
            let scfg = SolverConfig { steps: 7, substeps: 3, method };
            let rec = integrate(&[1.0, 1.0], 0, 1, &field, &protos, &gcfg, &scfg).unwrap();
            assert!((rec.final_z[0] - 2.5).abs() < 1e-9);
            assert!((rec.final_z[1] - (-1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn integrate_point_target_midpoint() {
        // exact flow for a point target: z(t) = (1-t) z0 + t m
        let m = vec![3.0, -1.0];
        let spec = MixtureSpec {
            classes: vec![vec![MixtureComponent { mean: m.clone(), std: 0.0, weight: 1.0 }]],
        };
        let field = OracleMixtureField::from_spec(&spec).unwrap();
        let protos = single_proto(m.clone());
        let gcfg = GuidanceConfig {
            lambda: 0.0,
            eta_init: 0.0,
            cfg_scale: 0.0,
            ..GuidanceConfig::default()
        };
        let scfg = SolverConfig { steps: 48, substeps: 4, method: Method::Heun };
        let z0 = vec![1.0, 2.0];
        let mut at_half = None;
        integrate_with_observer(&z0, 0, 1, &field, &protos, &gcfg, &scfg, |_, t, z| {
            if (t - 0.5).abs() < 1e-12 {
                at_half = Some(z.to_vec());
            }
        })
        .unwrap();
        let got = at_half.expect("t=0.5 is a grid node");
        for d in 0..2 {
            let expect = 0.5 * (z0[d] + m[d]);
            assert!((got[d] - expect).abs() < 1e-3, "dim {d}: {} vs {expect}", got[d]);
        }
    }

    #[test]
    fn nfe_matches_closed_form() {
        let protos = single_proto(vec![0.0, 0.0]);
        for method in [Method::Euler, Method::Heun] {
            for cfg_scale in [0.0, 0.3] {
                let field = ConstField::new(vec![1.0, 0.0]);
                let gcfg = GuidanceConfig { cfg_scale, ..GuidanceConfig::default() };
                let scfg = SolverConfig { steps: 6, substeps: 2, method };
                let rec = integrate(&[0.0, 0.0], 0, 1, &field, &protos, &gcfg, &scfg).unwrap();
                let expect = scfg.nfe_per_sample(cfg_scale > 0.0);
                assert_eq!(rec.nfe, expect);
                assert_eq!(field.nfe(), expect);
            }
        }
    }

    #[test]
    fn select_decode_cases() {
        // z1 norms all equal (std 0) -> z1 wins
        let z1 = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]];
        let zhat = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]];
        let (sel, choice) = select_decode_latent(&z1, &zhat).unwrap();
        assert_eq!(choice, DecodeChoice::SolverState);
        assert_eq!(sel, z1);
        // mirrored
        let (sel, choice) = select_decode_latent(&zhat, &z1).unwrap();
        assert_eq!(choice, DecodeChoice::CleanPrediction);
        assert_eq!(sel, z1);
        // exact tie -> solver state
        let (_, choice) = select_decode_latent(&z1, &z1).unwrap();
        assert_eq!(choice, DecodeChoice::SolverState);
        // singleton -> solver state by convention
        let (_, choice) = select_decode_latent(&z1[..1].to_vec(), &zhat[..1].to_vec()).unwrap();
        assert_eq!(choice, DecodeChoice::SolverState);
        assert!(select_decode_latent(&[], &[]).is_err());
    }

    fn two_class_spec() -> MixtureSpec {
        MixtureSpec {
            classes: vec![
                vec![MixtureComponent { mean: vec![2.0, 0.0], std: 0.2, weight: 1.0 }],
                vec![MixtureComponent { mean: vec![-2.0, 0.0], std: 0.2, weight: 1.0 }],
            ],
        }
    }

    fn two_class_protos() -> PrototypeSet {
        PrototypeSet {
            centers: vec![vec![vec![2.0, 0.0]], vec![vec![-2.0, 0.0]]],
            k: 1,
            mode: crate::prototypes::PrototypeMode::Centroid,
        }
    }

    fn identity_standardizer() -> Standardizer {
        Standardizer { mu: vec![0.0, 0.0], sigma: vec![1.0, 1.0] }
    }

    #[test]
    fn synthesize_counts_and_determinism() {
        let field = OracleMixtureField::from_spec(&two_class_spec()).unwrap();
        let scfg = SolverConfig { steps: 8, substeps: 2, method: Method::Heun };
        let run = || {
            synthesize_set(
                &identity_standardizer(),
                &LatentCodec::identity(),
                &two_class_protos(),
                &field,
                &GuidanceConfig::default(),
                &scfg,
                5,
                77,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.decoded.class(0).len(), 5);
        assert_eq!(a.decoded.class(1).len(), 5);
        assert_eq!(a.decoded, b.decoded);
        assert_eq!(a.records.len(), 10);
    }

    #[test]
    fn guidance_off_reduces_to_unguided() {
        let field = OracleMixtureField::from_spec(&two_class_spec()).unwrap();
        let protos = two_class_protos();
        let scfg = SolverConfig { steps: 8, substeps: 2, method: Method::Heun };
        let gcfg = GuidanceConfig::unguided();
        for seed in 0..10u64 {
            let result = synthesize_set(
                &identity_standardizer(),
                &LatentCodec::identity(),
                &protos,
                &field,
                &gcfg,
                &scfg,
                2,
                seed,
            )
            .unwrap();
            for y in 0..2 {
                for i in 0..2 {
                    let mut rng = derive_rng(seed, &[0x5A17, y as u64, i as u64]);
                    let z0: Vec<f64> =
                        (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    let plain =
                        integrate_unguided(&z0, y, &field, gcfg.cfg_scale, &scfg).unwrap();
                    let rec = &result.records[y * 2 + i];
                    assert_eq!(rec.final_z, plain, "seed {seed} class {y} sample {i}");
                }
            }
        }
    }

    #[test]
    fn trajectory_csv_shape() {
        let field = ConstField::new(vec![1.0, 0.0]);
        let protos = single_proto(vec![0.0, 0.0]);
        let scfg = SolverConfig { steps: 2, substeps: 2, method: Method::Euler };
        let rec = integrate(
            &[0.0, 0.0],
            0,
            1,
            &field,
            &protos,
            &GuidanceConfig::default(),
            &scfg,
        )
        .unwrap();
        let csv = trajectory_csv(&[rec]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5); // header + 4 substeps
        assert!(lines[0].starts_with("class,k,step,t"));
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = GuidanceConfig {
            rho_min: 0.6,
            rho0: 0.5,
            ..GuidanceConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad_solver = SolverConfig { steps: 0, substeps: 1, method: Method::Euler };
        assert!(bad_solver.validate().is_err());
    }
}
