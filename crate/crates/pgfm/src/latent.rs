//! Latent-space plumbing: labeled pools, standardization, the encode/decode
//! codec boundary, and synthetic Gaussian-mixture data sources.
//!
//! All distillation work happens on plain `Vec<f64>` latents grouped by class.
//! A [`Standardizer`] maps raw latents to zero-mean unit-variance coordinates
//! and back; clustering, guidance, and metrics all operate in standardized
//! space. The [`LatentCodec`] stands in for a frozen VAE decoder: synthetic
//! latents are de-standardized, divided by the codec scale, and mapped through
//! the decode map before they are reported as samples.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// Variance floor applied to constant dimensions when fitting a standardizer.
pub const EPS_STD: f64 = 1e-6;

/// A latent vector with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLatent {
    pub z: Vec<f64>,
    pub y: usize,
}

/// Per-class latent pool with a fixed dimension and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPool {
    classes: Vec<Vec<Vec<f64>>>,
    dim: usize,
}

impl ClassPool {
    pub fn new(dim: usize, num_classes: usize) -> Self {
        ClassPool {
            classes: vec![Vec::new(); num_classes],
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, y: usize) -> &[Vec<f64>] {
        &self.classes[y]
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(|c| c.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, latent: LabeledLatent) -> Result<()> {
        if latent.z.len() != self.dim {
            return Err(Error::Shape(format!(
                "latent dim {} does not match pool dim {}",
                latent.z.len(),
                self.dim
            )));
        }
        if latent.y >= self.classes.len() {
            return Err(Error::Data(format!(
                "label {} out of range for {} classes",
                latent.y,
                self.classes.len()
            )));
        }
        if latent.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite latent coordinate".into()));
        }
        self.classes[latent.y].push(latent.z);
        Ok(())
    }

    /// Iterate over all latents in (class, insertion) order.
    pub fn iter(&self) -> impl Iterator<Item = LabeledLatent> + '_ {
        self.classes.iter().enumerate().flat_map(|(y, zs)| {
            zs.iter().map(move |z| LabeledLatent { z: z.clone(), y })
        })
    }

    /// Map every latent through `f`, preserving grouping and order.
    pub fn map_latents(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> ClassPool {
        ClassPool {
            classes: self
                .classes
                .iter()
                .map(|zs| zs.iter().map(|z| f(z)).collect())
                .collect(),
            dim: self.dim,
        }
    }
}

/// Global mean / per-dimension std pair used to map latents to standardized
/// coordinates and back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Direction of a standardization map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Fit the global mean and per-dimension population std of a pool.
///
/// Constant dimensions get their std floored at [`EPS_STD`] so the forward
/// map stays well-defined.
pub fn fit_standardizer(pool: &ClassPool) -> Result<Standardizer> {
    let n = pool.len();
    if n == 0 {
        return Err(Error::Data("cannot fit standardizer on an empty pool".into()));
    }
    let d = pool.dim();
    let mut mu = vec![0.0; d];
    for item in pool.iter() {
        for (m, v) in mu.iter_mut().zip(&item.z) {
            *m += v;
        }
    }
    for m in mu.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for item in pool.iter() {
        for ((s, v), m) in var.iter_mut().zip(&item.z).zip(&mu) {
            let dlt = v - m;
            *s += dlt * dlt;
        }
    }
    let sigma = var
        .iter()
        .map(|s| (s / n as f64).sqrt().max(EPS_STD))
        .collect();
    Ok(Standardizer { mu, sigma })
}

/// Apply the standardizer in the given direction.
pub fn standardize(z: &[f64], s: &Standardizer, direction: Direction) -> Result<Vec<f64>> {
    if z.len() != s.mu.len() {
        return Err(Error::Shape(format!(
            "latent dim {} does not match standardizer dim {}",
            z.len(),
            s.mu.len()
        )));
    }
    Ok(match direction {
        Direction::Forward => z
            .iter()
            .zip(&s.mu)
            .zip(&s.sigma)
            .map(|((v, m), sg)| (v - m) / sg)
            .collect(),
        Direction::Inverse => z
            .iter()
            .zip(&s.mu)
            .zip(&s.sigma)
            .map(|((v, m), sg)| v * sg + m)
            .collect(),
    })
}

/// Encode/decode pair standing in for the frozen VAE boundary.
///
/// The affine variant uses a square full-rank matrix `a` and offset `b`:
/// `encode(x) = s_vae * (a x + b)`, `decode(l) = a^{-1}(l / s_vae - b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LatentCodec {
    Identity { s_vae: f64 },
    Affine { a: Vec<Vec<f64>>, b: Vec<f64>, s_vae: f64 },
}

impl LatentCodec {
    pub fn identity() -> Self {
        LatentCodec::Identity { s_vae: 1.0 }
    }

    fn s_vae(&self) -> f64 {
        match self {
            LatentCodec::Identity { s_vae } | LatentCodec::Affine { s_vae, .. } => *s_vae,
        }
    }

    fn check(&self) -> Result<()> {
        if self.s_vae() <= 0.0 {
            return Err(Error::Config(format!(
                "s_vae must be positive, got {}",
                self.s_vae()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check()?;
        match self {
            LatentCodec::Identity { s_vae } => Ok(x.iter().map(|v| v * s_vae).collect()),
            LatentCodec::Affine { a, b, s_vae } => {
                let mut out = b.clone();
                for (o, row) in out.iter_mut().zip(a) {
                    *o += row.iter().zip(x).map(|(r, v)| r * v).sum::<f64>();
                }
                Ok(out.into_iter().map(|v| v * s_vae).collect())
            }
        }
    }

    pub fn decode(&self, latent: &[f64]) -> Result<Vec<f64>> {
        self.check()?;
        let scaled: Vec<f64> = latent.iter().map(|v| v / self.s_vae()).collect();
        match self {
            LatentCodec::Identity { .. } => Ok(scaled),
            LatentCodec::Affine { a, b, .. } => {
                let rhs: Vec<f64> = scaled.iter().zip(b).map(|(v, bi)| v - bi).collect();
                solve_linear(a, &rhs)
            }
        }
    }
}

/// Decode a latent through the codec, dividing by the VAE scale first.
pub fn codec_decode(latent: &[f64], codec: &LatentCodec) -> Result<Vec<f64>> {
    codec.decode(latent)
}

/// Gaussian elimination with partial pivoting; `a` is square and full rank.
fn solve_linear(a: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(rhs)
        .map(|(row, r)| {
            let mut v = row.clone();
            v.push(*r);
            v
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[piv][col].abs() < 1e-12 {
            return Err(Error::Config("affine codec matrix is singular".into()));
        }
        m.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = m[col][n];
        for k in col + 1..n {
            acc -= m[col][k] * x[k];
        }
        x[col] = acc / m[col][col];
    }
    Ok(x)
}

/// One isotropic Gaussian component of a class mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    pub std: f64,
    pub weight: f64,
}

/// Per-class Gaussian mixture describing a synthetic target distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub classes: Vec<Vec<MixtureComponent>>,
}

impl MixtureSpec {
    pub fn dim(&self) -> Result<usize> {
        self.classes
            .iter()
            .flatten()
            .map(|c| c.mean.len())
            .next()
            .ok_or_else(|| Error::Config("mixture spec has no components".into()))
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim()?;
        for (y, comps) in self.classes.iter().enumerate() {
            if comps.is_empty() {
                return Err(Error::Config(format!("class {y} has no mixture components")));
            }
            let mut wsum = 0.0;
            for c in comps {
                if c.mean.len() != dim {
                    return Err(Error::Shape(format!(
                        "class {y} component mean dim {} != {}",
                        c.mean.len(),
                        dim
                    )));
                }
                if c.mean.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config(format!("class {y} has non-finite mean")));
                }
                if !(c.std >= 0.0) || !c.std.is_finite() {
                    return Err(Error::Config(format!("class {y} has invalid std {}", c.std)));
                }
                if !(c.weight >= 0.0) || !c.weight.is_finite() {
                    return Err(Error::Config(format!(
                        "class {y} has invalid weight {}",
                        c.weight
                    )));
                }
                wsum += c.weight;
            }
            if (wsum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "class {y} weights sum to {wsum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Analytic mean of one class mixture.
    pub fn class_mean(&self, y: usize) -> Vec<f64> {
        let d = self.classes[y][0].mean.len();
        let mut mean = vec![0.0; d];
        for c in &self.classes[y] {
            for (m, v) in mean.iter_mut().zip(&c.mean) {
                *m += c.weight * v;
            }
        }
        mean
    }

    /// Analytic covariance of one class mixture (dense, via the law of total
    /// covariance).
    pub fn class_covariance(&self, y: usize) -> Vec<Vec<f64>> {
        let mean = self.class_mean(y);
        let d = mean.len();
        let mut cov = vec![vec![0.0; d]; d];
        for c in &self.classes[y] {
            for i in 0..d {
                cov[i][i] += c.weight * c.std * c.std;
                for j in 0..d {
                    cov[i][j] += c.weight * (c.mean[i] - mean[i]) * (c.mean[j] - mean[j]);
                }
            }
        }
        cov
    }
}

/// Draw `n_per_class` latents per class from the mixture. Deterministic given
/// the seed; each class gets its own derived stream.
pub fn sample_mixture_dataset(spec: &MixtureSpec, n_per_class: usize, seed: u64) -> Result<ClassPool> {
    spec.validate()?;
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be at least 1".into()));
    }
    let dim = spec.dim()?;
    let mut pool = ClassPool::new(dim, spec.num_classes());
    for (y, comps) in spec.classes.iter().enumerate() {
        let mut rng = derive_rng(seed, &[0xDA7A, y as u64]);
        let cdf: Vec<f64> = comps
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c.weight;
                Some(*acc)
            })
            .collect();
        for _ in 0..n_per_class {
            let u: f64 = rng.gen();
            let idx = cdf.iter().position(|&c| u <= c).unwrap_or(comps.len() - 1);
            let comp = &comps[idx];
            let z: Vec<f64> = comp
                .mean
                .iter()
                .map(|m| m + comp.std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            pool.push(LabeledLatent { z, y })?;
        }
    }
    Ok(pool)
}

/// Parse the delimited-text dataset format:
///
/// ```text
/// #dim=2 classes=3
/// 0,1.0,2.0
/// ```
pub fn load_dataset(path: &Path) -> Result<ClassPool> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<ClassPool> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data("empty dataset file".into()))?;
    let (dim, classes) = parse_header(header)?;
    let mut pool = ClassPool::new(dim, classes);
    let mut saw_row = false;
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        saw_row = true;
        let mut fields = line.split(',');
        let label: usize = fields
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("line {}: bad label", i + 1)))?;
        if label >= classes {
            return Err(Error::Data(format!(
                "line {}: label {} >= declared class count {}",
                i + 1,
                label,
                classes
            )));
        }
        let z: Vec<f64> = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("line {}: bad value '{}'", i + 1, f)))
            })
            .collect::<Result<_>>()?;
        if z.len() != dim {
            return Err(Error::Data(format!(
                "line {}: expected {} coordinates, got {}",
                i + 1,
                dim,
                z.len()
            )));
        }
        pool.push(LabeledLatent { z, y: label })
            .map_err(|e| Error::Data(format!("line {}: {}", i + 1, e)))?;
    }
    if !saw_row {
        return Err(Error::Data("dataset has a header but no rows".into()));
    }
    Ok(pool)
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let h = header
        .strip_prefix('#')
        .ok_or_else(|| Error::Data("missing '#dim=D classes=C' header".into()))?;
    let mut dim = None;
    let mut classes = None;
    for tok in h.split_whitespace() {
        if let Some(v) = tok.strip_prefix("dim=") {
            dim = Some(v.parse().map_err(|_| Error::Data("bad dim in header".into()))?);
        } else if let Some(v) = tok.strip_prefix("classes=") {
            classes = Some(
                v.parse()
                    .map_err(|_| Error::Data("bad classes in header".into()))?,
            );
        }
    }
    match (dim, classes) {
        (Some(d), Some(c)) if d >= 1 && c >= 1 => Ok((d, c)),
        _ => Err(Error::Data("header must declare dim>=1 and classes>=1".into())),
    }
}

/// Serialize a pool to the dataset text format. Values carry 17 significant
/// digits so a load/save round trip is bit-exact.
pub fn format_dataset(pool: &ClassPool) -> String {
    let mut out = format!("#dim={} classes={}\n", pool.dim(), pool.num_classes());
    for item in pool.iter() {
        let _ = write!(out, "{}", item.y);
        for v in &item.z {
            let _ = write!(out, ",{:.16e}", v);
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset(pool: &ClassPool, path: &Path) -> Result<()> {
    std::fs::write(path, format_dataset(pool))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool_from(points: &[(usize, &[f64])], dim: usize, classes: usize) -> ClassPool {
        let mut p = ClassPool::new(dim, classes);
        for (y, z) in points {
            p.push(LabeledLatent { z: z.to_vec(), y: *y }).unwrap();
        }
        p
    }

    #[test]
    fn parse_single_row() {
        let pool = parse_dataset("#dim=2 classes=1\n0,1.0,2.0\n").unwrap();
        assert_eq!(pool.class(0), &[vec![1.0, 2.0]]);
    }

    #[test]
    fn parse_arity_violation_names_line() {
        let err = parse_dataset("#dim=2 classes=1\n0,1.0\n").unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("line 2")), "{err}");
    }

    #[test]
    fn parse_two_classes_counts() {
        let pool =
            parse_dataset("#dim=1 classes=2\n0,1.0\n1,2.0\n1,3.0\n").unwrap();
        assert_eq!(pool.class(0).len(), 1);
        assert_eq!(pool.class(1).len(), 2);
    }

    #[test]
    fn parse_unknown_label_rejected() {
        let err = parse_dataset("#dim=1 classes=1\n1,0.5\n").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn parse_empty_file_rejected() {
        assert!(parse_dataset("").is_err());
        assert!(parse_dataset("#dim=1 classes=1\n").is_err());
    }

    #[test]
    fn dataset_round_trip_bit_exact() {
        let spec = MixtureSpec {
            classes: vec![vec![MixtureComponent {
                mean: vec![0.3, -1.7],
                std: 1.0,
                weight: 1.0,
            }]],
        };
        let pool = sample_mixture_dataset(&spec, 20, 5).unwrap();
        let text = format_dataset(&pool);
        let reloaded = parse_dataset(&text).unwrap();
        assert_eq!(pool, reloaded);
        assert_eq!(text, format_dataset(&reloaded));
    }

    #[test]
    fn mixture_zero_variance_is_constant() {
        let spec = MixtureSpec {
            classes: vec![vec![MixtureComponent {
                mean: vec![3.0, 3.0],
                std: 0.0,
                weight: 1.0,
            }]],
        };
        let pool = sample_mixture_dataset(&spec, 5, 1).unwrap();
        for z in pool.class(0) {
            assert_eq!(z, &vec![3.0, 3.0]);
        }
    }

    #[test]
    fn mixture_determinism() {
        let spec = MixtureSpec {
            classes: vec![vec![MixtureComponent {
                mean: vec![0.0],
                std: 2.0,
                weight: 1.0,
            }]],
        };
        let a = sample_mixture_dataset(&spec, 50, 42).unwrap();
        let b = sample_mixture_dataset(&spec, 50, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mixture_moments_standard_normal() {
        let spec = MixtureSpec {
            classes: vec![vec![MixtureComponent {
                mean: vec![0.0, 0.0],
                std: 1.0,
                weight: 1.0,
            }]],
        };
        let pool = sample_mixture_dataset(&spec, 10_000, 3).unwrap();
        let s = fit_standardizer(&pool).unwrap();
        for d in 0..2 {
            assert!(s.mu[d].abs() < 0.05, "mean {}", s.mu[d]);
            assert!((s.sigma[d] * s.sigma[d] - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn mixture_empty_spec_rejected() {
        let spec = MixtureSpec { classes: vec![vec![]] };
        assert!(sample_mixture_dataset(&spec, 1, 0).is_err());
    }

    #[test]
    fn standardizer_symmetric_pair() {
        let pool = pool_from(&[(0, &[1.0, 0.0]), (0, &[-1.0, 0.0])], 2, 1);
        let s = fit_standardizer(&pool).unwrap();
        assert_eq!(s.mu, vec![0.0, 0.0]);
        assert_eq!(s.sigma, vec![1.0, EPS_STD]);
    }

    #[test]
    fn standardizer_single_point() {
        let pool = pool_from(&[(0, &[2.0, 3.0])], 2, 1);
        let s = fit_standardizer(&pool).unwrap();
        assert_eq!(s.mu, vec![2.0, 3.0]);
        assert_eq!(s.sigma, vec![EPS_STD, EPS_STD]);
    }

    #[test]
    fn standardizer_refit_is_normalized() {
        let spec = MixtureSpec {
            classes: vec![vec![MixtureComponent {
                mean: vec![4.0, -2.0],
                std: 3.0,
                weight: 1.0,
            }]],
        };
        let pool = sample_mixture_dataset(&spec, 500, 9).unwrap();
        let s = fit_standardizer(&pool).unwrap();
        let std_pool = pool.map_latents(|z| standardize(z, &s, Direction::Forward).unwrap());
        let s2 = fit_standardizer(&std_pool).unwrap();
        for d in 0..2 {
            assert!(s2.mu[d].abs() < 1e-9);
            assert!((s2.sigma[d] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn standardize_arithmetic() {
        let s = Standardizer {
            mu: vec![1.0, 1.0],
            sigma: vec![2.0, 2.0],
        };
        assert_eq!(
            standardize(&[3.0, 5.0], &s, Direction::Forward).unwrap(),
            vec![1.0, 2.0]
        );
        assert_eq!(
            standardize(&s.mu.clone(), &s, Direction::Forward).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(standardize(&[1.0], &s, Direction::Forward).is_err());
    }

    #[test]
    fn codec_identity_and_scaling() {
        let c = LatentCodec::Identity { s_vae: 1.0 };
        assert_eq!(codec_decode(&[1.0, 2.0], &c).unwrap(), vec![1.0, 2.0]);
        let c2 = LatentCodec::Identity { s_vae: 2.0 };
        assert_eq!(codec_decode(&[2.0, 4.0], &c2).unwrap(), vec![1.0, 2.0]);
        let bad = LatentCodec::Identity { s_vae: 0.0 };
        assert!(codec_decode(&[1.0], &bad).is_err());
    }

    #[test]
    fn codec_affine_round_trip() {
        // rotation by 30 degrees plus offset
        let (c30, s30) = (0.75f64.sqrt(), 0.5);
        let codec = LatentCodec::Affine {
            a: vec![vec![c30, -s30], vec![s30, c30]],
            b: vec![0.7, -0.2],
            s_vae: 1.8,
        };
        let mut rng = derive_rng(11, &[1]);
        for _ in 0..50 {
            let x: Vec<f64> = (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let back = codec.decode(&codec.encode(&x).unwrap()).unwrap();
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
