//! Per-class mode discovery: k-means++ seeding, Lloyd refinement, and the
//! sample-to-prototype assignment used by guided sampling.
//!
//! Clustering always runs on standardized latents. Each class derives its own
//! RNG stream from (seed, class id), so per-class work is order-independent.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::latent::ClassPool;
use crate::rng::derive_rng;

/// Default Lloyd convergence tolerance (max per-center displacement).
pub const LLOYD_TOL: f64 = 1e-4;
/// Default Lloyd iteration cap.
pub const LLOYD_MAX_ITER: usize = 300;

/// How a prototype represents its cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrototypeMode {
    /// The cluster centroid.
    Centroid,
    /// The class member nearest to the centroid (ties to the lowest index).
    ClosestPoint,
}

impl PrototypeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PrototypeMode::Centroid => "centroid",
            PrototypeMode::ClosestPoint => "closest_point",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "centroid" => Ok(PrototypeMode::Centroid),
            "closest_point" => Ok(PrototypeMode::ClosestPoint),
            other => Err(Error::Config(format!("unknown prototype mode '{other}'"))),
        }
    }
}

/// K prototypes per class, in standardized latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    /// `centers[y][k]` is prototype k+1 of class y.
    pub centers: Vec<Vec<Vec<f64>>>,
    pub k: usize,
    pub mode: PrototypeMode,
}

impl PrototypeSet {
    pub fn num_classes(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0][0].len()
    }

    /// Prototype with 1-based index `k` of class `y`.
    pub fn center(&self, y: usize, k: usize) -> &[f64] {
        &self.centers[y][k - 1]
    }
}

/// Round-robin map from synthetic-sample index to a 1-based prototype index.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub k: usize,
    pub ipc: usize,
}

impl Assignment {
    /// Prototype index (1-based) assigned to 0-based sample `i`.
    pub fn prototype_for(&self, i: usize) -> usize {
        (i % self.k) + 1
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.ipc).map(|i| self.prototype_for(i)).collect()
    }
}

pub fn assign_prototypes(k: usize, ipc: usize) -> Result<Assignment> {
    if k == 0 || ipc == 0 {
        return Err(Error::Config("k and ipc must be at least 1".into()));
    }
    Ok(Assignment { k, ipc })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties broken by lowest index.
pub fn nearest_center(point: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// k-means++ seeding: first center uniform, subsequent centers weighted by
/// squared distance to the nearest chosen center. Duplicate centers are
/// permitted when K exceeds the number of distinct points (all D^2 weights
/// can be zero, in which case the draw falls back to uniform).
pub fn kmeans_pp_init(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if points.is_empty() {
        return Err(Error::Data("cannot seed centers from an empty point set".into()));
    }
    let mut rng = derive_rng(seed, &[0x5EED]);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[idx].clone();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    Ok(centers)
}

/// Result of Lloyd refinement, including the per-iteration objective trace
/// (within-cluster sum of squared distances, recorded after each update).
#[derive(Debug, Clone)]
pub struct LloydResult {
    pub centers: Vec<Vec<f64>>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn kmeans_objective(points: &[Vec<f64>], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .map(|p| sq_dist(p, &centers[nearest_center(p, centers)]))
        .sum()
}

/// Lloyd's algorithm: alternate nearest-center assignment and centroid
/// updates until the max per-center displacement drops below `tol` or
/// `max_iter` is hit. Empty clusters are re-seeded to the point farthest from
/// its current center.
pub fn lloyd_refine(
    points: &[Vec<f64>],
    init: &[Vec<f64>],
    tol: f64,
    max_iter: usize,
) -> Result<LloydResult> {
    if init.is_empty() {
        return Err(Error::Config("lloyd_refine needs at least one center".into()));
    }
    if points.is_empty() {
        return Err(Error::Data("lloyd_refine needs at least one point".into()));
    }
    let dim = points[0].len();
    let k = init.len();
    let mut centers: Vec<Vec<f64>> = init.to_vec();
    let mut trace = vec![kmeans_objective(points, &centers)];
    let mut iterations = 0;
    for _ in 0..max_iter {
        let assign: Vec<usize> = points.iter().map(|p| nearest_center(p, &centers)).collect();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut new_centers = centers.clone();
        for c in 0..k {
            if counts[c] > 0 {
                for (nc, s) in new_centers[c].iter_mut().zip(&sums[c]) {
                    *nc = s / counts[c] as f64;
                }
            } else {
                // re-seed an empty cluster to the point farthest from its center
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(i, p), (j, q)| {
                        let dp = sq_dist(p, &centers[assign[*i]]);
                        let dq = sq_dist(q, &centers[assign[*j]]);
                        dp.total_cmp(&dq)
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                new_centers[c] = points[far].clone();
            }
        }
        let shift = centers
            .iter()
            .zip(&new_centers)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0f64, f64::max);
        centers = new_centers;
        iterations += 1;
        trace.push(kmeans_objective(points, &centers));
        if shift < tol {
            break;
        }
    }
    Ok(LloydResult {
        centers,
        objective_trace: trace,
        iterations,
    })
}

/// Run k-means++ + Lloyd per class and package the prototypes.
pub fn build_prototypes(
    pool: &ClassPool,
    k: usize,
    mode: PrototypeMode,
    seed: u64,
) -> Result<PrototypeSet> {
    build_prototypes_with(pool, k, mode, seed, LLOYD_TOL, LLOYD_MAX_ITER)
}

pub fn build_prototypes_with(
    pool: &ClassPool,
    k: usize,
    mode: PrototypeMode,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<PrototypeSet> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut centers = Vec::with_capacity(pool.num_classes());
    for y in 0..pool.num_classes() {
        let points = pool.class(y);
        if points.is_empty() {
            return Err(Error::Data(format!("class {y} has no points to cluster")));
        }
        let init = kmeans_pp_init(points, k, seed ^ (y as u64).wrapping_mul(0x9E37_79B9))?;
        let refined = lloyd_refine(points, &init, tol, max_iter)?.centers;
        let class_centers = match mode {
            PrototypeMode::Centroid => refined,
            PrototypeMode::ClosestPoint => refined
                .into_iter()
                .map(|c| {
                    let idx = points
                        .iter()
                        .enumerate()
                        .min_by(|(_, p), (_, q)| sq_dist(p, &c).total_cmp(&sq_dist(q, &c)))
                        .map(|(i, _)| i)
                        .unwrap();
                    points[idx].clone()
                })
                .collect(),
        };
        centers.push(class_centers);
    }
    Ok(PrototypeSet { centers, k, mode })
}

/// Serialize prototypes to the delimited-text format with header
/// `#dim=D classes=C k=K mode=<m>`.
pub fn format_prototypes(protos: &PrototypeSet) -> String {
    let mut out = format!(
        "#dim={} classes={} k={} mode={}\n",
        protos.dim(),
        protos.num_classes(),
        protos.k,
        protos.mode.as_str()
    );
    for (y, class) in protos.centers.iter().enumerate() {
        for c in class {
            let _ = write!(out, "{}", y);
            for v in c {
                let _ = write!(out, ",{:.16e}", v);
            }
            out.push('\n');
        }
    }
    out
}

pub fn save_prototypes(protos: &PrototypeSet, path: &Path) -> Result<()> {
    std::fs::write(path, format_prototypes(protos))?;
    Ok(())
}

pub fn parse_prototypes(text: &str) -> Result<PrototypeSet> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty prototype file".into()))?;
    let h = header
        .strip_prefix('#')
        .ok_or_else(|| Error::Data("missing prototype header".into()))?;
    let mut dim = None;
    let mut classes = None;
    let mut k = None;
    let mut mode = None;
    for tok in h.split_whitespace() {
        if let Some(v) = tok.strip_prefix("dim=") {
            dim = v.parse::<usize>().ok();
        } else if let Some(v) = tok.strip_prefix("classes=") {
            classes = v.parse::<usize>().ok();
        } else if let Some(v) = tok.strip_prefix("k=") {
            k = v.parse::<usize>().ok();
        } else if let Some(v) = tok.strip_prefix("mode=") {
            mode = Some(PrototypeMode::parse(v)?);
        }
    }
    let (dim, classes, k, mode) = match (dim, classes, k, mode) {
        (Some(d), Some(c), Some(k), Some(m)) => (d, c, k, m),
        _ => return Err(Error::Data("prototype header must declare dim, classes, k, mode".into())),
    };
    let mut centers = vec![Vec::new(); classes];
    for (i, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let y: usize = fields
            .next()
            .unwrap()
            .parse()
            .map_err(|_| Error::Data(format!("prototype line {}: bad label", i + 2)))?;
        if y >= classes {
            return Err(Error::Data(format!("prototype line {}: label out of range", i + 2)));
        }
        let c: Vec<f64> = fields
            .map(|f| {
                f.trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("prototype line {}: bad value", i + 2)))
            })
            .collect::<Result<_>>()?;
        if c.len() != dim {
            return Err(Error::Data(format!("prototype line {}: wrong arity", i + 2)));
        }
        centers[y].push(c);
    }
    for (y, class) in centers.iter().enumerate() {
        if class.len() != k {
            return Err(Error::Data(format!(
                "class {} has {} prototypes, expected {}",
                y,
                class.len(),
                k
            )));
        }
    }
    Ok(PrototypeSet { centers, k, mode })
}

pub fn load_prototypes(path: &Path) -> Result<PrototypeSet> {
    parse_prototypes(&std::fs::read_to_string(path)?)
}
