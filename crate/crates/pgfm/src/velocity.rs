//! Velocity-field contract and the closed-form Gaussian-mixture oracle.
//!
//! A [`VelocityField`] answers two queries: the velocity `u(t, z, y)` and the
//! clean-latent prediction derived from it. Every velocity evaluation bumps an
//! atomic NFE counter; the clean prediction is a pure function of an already
//! computed velocity and costs nothing.
//!
//! The oracle implements the exact marginal velocity of the linear
//! (rectified-flow) interpolant `z_t = (1-t) z0 + t z1` with `z0 ~ N(0, I)`
//! independent of `z1 ~` class mixture. Conditioned on mixture component
//! `(m, s)`, `z_t ~ N(t m, ((1-t)^2 + t^2 s^2) I)`, so the marginal velocity
//! is a posterior-responsibility-weighted sum of per-component conditional
//! expectations `E[z1 - z0 | z_t]`.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::latent::{MixtureSpec, Standardizer};

/// Singularity guard: velocity queries require `t <= 1 - EPS_T`.
pub const EPS_T: f64 = 1e-3;

/// Time-dependent conditional velocity field with NFE accounting.
pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;

    /// Velocity at `(t, z)`; `class = None` queries the unconditional field.
    fn eval(&self, t: f64, z: &[f64], class: Option<usize>) -> Result<Vec<f64>>;

    /// Clean-latent prediction; by default one extra field evaluation.
    fn predict_clean(&self, t: f64, z: &[f64], class: Option<usize>) -> Result<Vec<f64>> {
        Ok(clean_from_velocity(t, z, &self.eval(t, z, class)?))
    }

    /// Number of velocity evaluations consumed so far.
    fn nfe(&self) -> u64;

    fn reset_nfe(&self);
}

/// x-prediction consistent with the linear interpolant: `z1_hat = z + (1-t) u`.
pub fn clean_from_velocity(t: f64, z: &[f64], u: &[f64]) -> Vec<f64> {
    z.iter().zip(u).map(|(zi, ui)| zi + (1.0 - t) * ui).collect()
}

/// Classifier-free guidance extrapolation `u_cond + gamma (u_cond - u_uncond)`.
pub fn cfg_combine(u_cond: &[f64], u_uncond: &[f64], gamma: f64) -> Vec<f64> {
    u_cond
        .iter()
        .zip(u_uncond)
        .map(|(c, u)| c + gamma * (c - u))
        .collect()
}

/// One diagonal-Gaussian component of an oracle target.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagComponent {
    pub mean: Vec<f64>,
    /// Per-dimension std; entries may be zero (point target along that axis).
    pub std: Vec<f64>,
    pub weight: f64,
}

/// Closed-form oracle for Gaussian-mixture targets.
///
/// Targets are stored per class with diagonal component covariances so that a
/// per-dimension standardization of an isotropic mixture stays exact. The
/// unconditional field mixes all classes with equal class weights.
pub struct OracleMixtureField {
    classes: Vec<Vec<DiagComponent>>,
    dim: usize,
    nfe: AtomicU64,
}

impl OracleMixtureField {
    pub fn new(classes: Vec<Vec<DiagComponent>>) -> Result<Self> {
        let dim = classes
            .iter()
            .flatten()
            .map(|c| c.mean.len())
            .next()
            .ok_or_else(|| Error::Config("oracle field needs at least one component".into()))?;
        for comps in &classes {
            for c in comps {
                if c.mean.len() != dim || c.std.len() != dim {
                    return Err(Error::Shape("oracle component dim mismatch".into()));
                }
            }
        }
        Ok(OracleMixtureField {
            classes,
            dim,
            nfe: AtomicU64::new(0),
        })
    }

    /// Build from an isotropic mixture spec in raw coordinates.
    pub fn from_spec(spec: &MixtureSpec) -> Result<Self> {
        spec.validate()?;
        let dim = spec.dim()?;
        Self::new(
            spec.classes
                .iter()
                .map(|comps| {
                    comps
                        .iter()
                        .map(|c| DiagComponent {
                            mean: c.mean.clone(),
                            std: vec![c.std; dim],
                            weight: c.weight,
                        })
                        .collect()
                })
                .collect(),
        )
    }

    /// Build from an isotropic mixture spec mapped into standardized
    /// coordinates: means shift/scale per dimension and isotropic stds become
    /// diagonal. This keeps the oracle exact for the standardized pool.
    pub fn from_spec_standardized(spec: &MixtureSpec, s: &Standardizer) -> Result<Self> {
        spec.validate()?;
        Self::new(
            spec.classes
                .iter()
                .map(|comps| {
                    comps
                        .iter()
                        .map(|c| DiagComponent {
                            mean: c
                                .mean
                                .iter()
                                .zip(&s.mu)
                                .zip(&s.sigma)
                                .map(|((m, mu), sg)| (m - mu) / sg)
                                .collect(),
                            std: s.sigma.iter().map(|sg| c.std / sg).collect(),
                            weight: c.weight,
                        })
                        .collect()
                })
                .collect(),
        )
    }

    /// Marginal velocity plus the responsibility vector used (exposed for the
    /// normalization invariant).
    pub fn velocity_with_responsibilities(
        &self,
        t: f64,
        z: &[f64],
        class: Option<usize>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        // strict: t = 1 - EPS_T is the clamp point Heun correctors query
        if t > 1.0 - EPS_T {
            return Err(Error::Config(format!(
                "velocity query at t={t} too close to the terminal singularity"
            )));
        }
        if z.len() != self.dim {
            return Err(Error::Shape("query dim mismatch".into()));
        }
        // gather (component, effective weight) over the queried classes
        let comps: Vec<(&DiagComponent, f64)> = match class {
            Some(y) => {
                let comps = self
                    .classes
                    .get(y)
                    .ok_or_else(|| Error::Data(format!("class {y} out of range")))?;
                comps.iter().map(|c| (c, c.weight)).collect()
            }
            None => {
                let class_w = 1.0 / self.classes.len() as f64;
                self.classes
                    .iter()
                    .flat_map(|comps| comps.iter().map(move |c| (c, class_w * c.weight)))
                    .collect()
            }
        };
        let omt = 1.0 - t;
        // log responsibilities, normalized by logsumexp
        let log_w: Vec<f64> = comps
            .iter()
            .map(|(c, w)| {
                let mut lp = w.ln();
                for d in 0..self.dim {
                    let v = omt * omt + t * t * c.std[d] * c.std[d];
                    let r = z[d] - t * c.mean[d];
                    lp += -0.5 * (v.ln() + r * r / v);
                }
                lp
            })
            .collect();
        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = log_w.iter().map(|l| (l - max).exp()).sum();
        let resp: Vec<f64> = log_w.iter().map(|l| (l - max).exp() / total).collect();

        let mut u = vec![0.0; self.dim];
        for ((c, _), r) in comps.iter().zip(&resp) {
            for d in 0..self.dim {
                let s2 = c.std[d] * c.std[d];
                let v = omt * omt + t * t * s2;
                // E[z1 - z0 | z_t, component] per dimension
                let cond = c.mean[d] + (t * s2 - omt) / v * (z[d] - t * c.mean[d]);
                u[d] += r * cond;
            }
        }
        Ok((u, resp))
    }
}

impl VelocityField for OracleMixtureField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, z: &[f64], class: Option<usize>) -> Result<Vec<f64>> {
        let (u, _) = self.velocity_with_responsibilities(t, z, class)?;
        self.nfe.fetch_add(1, Ordering::Relaxed);
        Ok(u)
    }

    fn nfe(&self) -> u64 {
        self.nfe.load(Ordering::Relaxed)
    }

    fn reset_nfe(&self) {
        self.nfe.store(0, Ordering::Relaxed);
    }
}

/// Exact marginal velocity for an isotropic mixture target in raw
/// coordinates. Convenience wrapper over [`OracleMixtureField`].
pub fn oracle_velocity(t: f64, z: &[f64], y: usize, spec: &MixtureSpec) -> Result<Vec<f64>> {
    let field = OracleMixtureField::from_spec(spec)?;
    field.eval(t, z, Some(y))
}
