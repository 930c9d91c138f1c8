//! Evaluation of distilled sets: prototype hit rate, cell coverage,
//! representativeness, moment errors, a linear-probe downstream check, and
//! NFE accounting.
//!
//! All distance-based metrics operate in standardized latent space with
//! Euclidean distances. Coverage is the fraction of prototype cells (the
//! nearest-center partition) occupied by at least one synthetic sample;
//! representativeness converts the mean k-NN distance to the real pool into
//! a score `1 / (1 + d_bar)`.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::latent::{ClassPool, MixtureSpec};
use crate::prototypes::{nearest_center, PrototypeSet};
use crate::rng::derive_rng;
use crate::sampler::{SolverConfig, TrajectoryRecord};

/// Per-class metric rows plus the averages reported by a run.
#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub per_class_hit_rate: Vec<f64>,
    pub average_hit_rate: f64,
    pub per_class_coverage: Vec<f64>,
    pub per_class_representativeness: Vec<f64>,
    pub per_class_mean_error: Vec<f64>,
    pub per_class_cov_error: Vec<f64>,
    pub total_nfe: u64,
}

impl CoverageReport {
    /// CSV with one row per class plus an average row.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("class,hit_rate_pct,coverage,representativeness,mean_error,cov_error\n");
        let n = self.per_class_hit_rate.len();
        for y in 0..n {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                y,
                self.per_class_hit_rate[y],
                self.per_class_coverage[y],
                self.per_class_representativeness[y],
                self.per_class_mean_error[y],
                self.per_class_cov_error[y]
            );
        }
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let _ = writeln!(
            out,
            "average,{},{},{},{},{}",
            self.average_hit_rate,
            avg(&self.per_class_coverage),
            avg(&self.per_class_representativeness),
            avg(&self.per_class_mean_error),
            avg(&self.per_class_cov_error)
        );
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Percentage of samples whose nearest prototype equals the assigned one,
/// per class plus the average. Ties in the nearest-prototype lookup break to
/// the lowest index.
pub fn hit_rate(
    synthetic: &[Vec<Vec<f64>>],
    assignments: &[Vec<usize>],
    protos: &PrototypeSet,
) -> Result<(Vec<f64>, f64)> {
    if synthetic.len() != protos.num_classes() || assignments.len() != synthetic.len() {
        return Err(Error::Data("hit_rate inputs do not cover every class".into()));
    }
    let mut per_class = Vec::with_capacity(synthetic.len());
    for (y, (samples, assign)) in synthetic.iter().zip(assignments).enumerate() {
        if samples.len() != assign.len() {
            return Err(Error::Data(format!("class {y} is missing assignments")));
        }
        if samples.is_empty() {
            return Err(Error::Data(format!("class {y} has no synthetic samples")));
        }
        let hits = samples
            .iter()
            .zip(assign)
            .filter(|(z, &k)| nearest_center(z, &protos.centers[y]) + 1 == k)
            .count();
        per_class.push(100.0 * hits as f64 / samples.len() as f64);
    }
    let avg = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok((per_class, avg))
}

/// Fraction of prototype cells containing at least one synthetic sample.
pub fn coverage(synthetic: &[Vec<f64>], class_centers: &[Vec<f64>]) -> f64 {
    let mut occupied = vec![false; class_centers.len()];
    for z in synthetic {
        occupied[nearest_center(z, class_centers)] = true;
    }
    occupied.iter().filter(|o| **o).count() as f64 / class_centers.len() as f64
}

/// Score in (0, 1]: mean distance from each synthetic sample to its `k_nn`
/// nearest real points, converted via `1 / (1 + d_bar)`. `k_nn` is clamped to
/// the pool size.
pub fn representativeness(synthetic: &[Vec<f64>], real: &[Vec<f64>], k_nn: usize) -> Result<f64> {
    if real.is_empty() {
        return Err(Error::Data("representativeness needs a non-empty real pool".into()));
    }
    if synthetic.is_empty() {
        return Err(Error::Data("representativeness needs synthetic samples".into()));
    }
    let k = k_nn.max(1).min(real.len());
    let mut d_bar = 0.0;
    for z in synthetic {
        let mut dists: Vec<f64> = real.iter().map(|r| sq_dist(z, r).sqrt()).collect();
        dists.sort_by(f64::total_cmp);
        d_bar += dists[..k].iter().sum::<f64>() / k as f64;
    }
    d_bar /= synthetic.len() as f64;
    Ok(1.0 / (1.0 + d_bar))
}

/// Empirical-vs-analytic moment errors for one class: L2 distance of the
/// means and Frobenius distance of the covariances.
pub fn moment_error(samples: &[Vec<f64>], spec: &MixtureSpec, y: usize) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Data("moment_error needs at least 2 samples".into()));
    }
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for z in samples {
        for (m, v) in mean.iter_mut().zip(z) {
            *m += v / n;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for z in samples {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (z[i] - mean[i]) * (z[j] - mean[j]) / n;
            }
        }
    }
    let target_mean = spec.class_mean(y);
    let target_cov = spec.class_covariance(y);
    let mean_err = sq_dist(&mean, &target_mean).sqrt();
    let cov_err = cov
        .iter()
        .zip(&target_cov)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
        .sum::<f64>()
        .sqrt();
    Ok((mean_err, cov_err))
}

/// Probe accuracy over seeds.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_seed_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Set when the training set holds a single class.
    pub degenerate: bool,
}

/// Train a multinomial logistic probe by full-batch gradient descent and
/// report mean +/- std test accuracy over `seeds` runs.
pub fn probe_eval(train: &ClassPool, test: &ClassPool, seeds: usize) -> Result<EvalReport> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data("probe_eval needs non-empty train and test sets".into()));
    }
    if train.dim() != test.dim() || train.num_classes() != test.num_classes() {
        return Err(Error::Shape("probe train/test dim or class mismatch".into()));
    }
    let degenerate = (0..train.num_classes())
        .filter(|&y| !train.class(y).is_empty())
        .count()
        < 2;
    let accs: Vec<f64> = (0..seeds)
        .map(|s| probe_accuracy(train, test, s as u64))
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
    Ok(EvalReport {
        per_seed_accuracy: accs,
        mean_accuracy: mean,
        std_accuracy: var.sqrt(),
        degenerate,
    })
}

fn probe_accuracy(train: &ClassPool, test: &ClassPool, seed: u64) -> f64 {
    let d = train.dim();
    let c = train.num_classes();
    let items: Vec<(usize, &Vec<f64>)> = (0..c)
        .flat_map(|y| train.class(y).iter().map(move |z| (y, z)))
        .collect();
    let mut rng = derive_rng(seed, &[0x9802]);
    // weights[y][d], bias[y]
    let mut w: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut b = vec![0.0; c];
    let lr = 0.5;
    let n = items.len() as f64;
    for _ in 0..400 {
        let mut gw = vec![vec![0.0; d]; c];
        let mut gb = vec![0.0; c];
        for &(y, z) in &items {
            let logits: Vec<f64> = (0..c)
                .map(|k| b[k] + w[k].iter().zip(z).map(|(a, v)| a * v).sum::<f64>())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for k in 0..c {
                let p = exps[k] / sum - f64::from(k == y);
                gb[k] += p / n;
                for (g, v) in gw[k].iter_mut().zip(z) {
                    *g += p * v / n;
                }
            }
        }
        for k in 0..c {
            b[k] -= lr * gb[k];
            for (wi, g) in w[k].iter_mut().zip(&gw[k]) {
                *wi -= lr * g;
            }
        }
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for item in test.iter() {
        let pred = (0..c)
            .map(|k| b[k] + w[k].iter().zip(&item.z).map(|(a, v)| a * v).sum::<f64>())
            .enumerate()
            .max_by(|(_, a), (_, b)| a.total_cmp(b))
            .map(|(k, _)| k)
            .unwrap();
        correct += usize::from(pred == item.y);
        total += 1;
    }
    correct as f64 / total as f64
}

/// Total and per-sample NFE, cross-checked against the closed-form count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NfeReport {
    pub total: u64,
    pub per_sample: u64,
    pub samples: usize,
}

pub fn nfe_report(
    records: &[TrajectoryRecord],
    scfg: &SolverConfig,
    cfg_active: bool,
) -> Result<NfeReport> {
    if records.is_empty() {
        return Err(Error::Data("nfe_report needs at least one trajectory".into()));
    }
    let expected = scfg.nfe_per_sample(cfg_active);
    for (i, r) in records.iter().enumerate() {
        if r.nfe != expected {
            return Err(Error::Data(format!(
                "NFE accounting mismatch on trajectory {i}: counter {} vs formula {expected}",
                r.nfe
            )));
        }
    }
    Ok(NfeReport {
        total: records.iter().map(|r| r.nfe).sum(),
        per_sample: expected,
        samples: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{LabeledLatent, MixtureComponent};
    use crate::prototypes::PrototypeMode;
    use crate::sampler::Method;

    fn protos_two() -> PrototypeSet {
        PrototypeSet {
            centers: vec![vec![vec![0.0, 0.0], vec![10.0, 10.0]]],
            k: 2,
            mode: PrototypeMode::Centroid,
        }
    }

    #[test]
    fn hit_rate_exact_placement() {
        let protos = protos_two();
        let synthetic = vec![vec![vec![0.0, 0.0], vec![10.0, 10.0]]];
        let assignments = vec![vec![1, 2]];
        let (per_class, avg) = hit_rate(&synthetic, &assignments, &protos).unwrap();
        assert_eq!(per_class, vec![100.0]);
        assert_eq!(avg, 100.0);
    }

    #[test]
    fn hit_rate_half() {
        let protos = protos_two();
        let synthetic = vec![vec![
            vec![0.1, 0.0],
            vec![9.0, 9.0],
            vec![10.0, 10.0],
            vec![0.0, 0.0],
        ]];
        let assignments = vec![vec![1, 1, 2, 2]];
        let (per_class, avg) = hit_rate(&synthetic, &assignments, &protos).unwrap();
        assert_eq!(per_class, vec![50.0]);
        assert_eq!(avg, 50.0);
    }

    #[test]
    fn hit_rate_single_prototype_always_full() {
        let protos = PrototypeSet {
            centers: vec![vec![vec![1.0, 1.0]]],
            k: 1,
            mode: PrototypeMode::Centroid,
        };
        let synthetic = vec![vec![vec![-5.0, 3.0], vec![100.0, 0.0]]];
        let (_, avg) = hit_rate(&synthetic, &vec![vec![1, 1]], &protos).unwrap();
        assert_eq!(avg, 100.0);
    }

    #[test]
    fn hit_rate_missing_assignment_rejected() {
        let protos = protos_two();
        let synthetic = vec![vec![vec![0.0, 0.0], vec![1.0, 1.0]]];
        assert!(hit_rate(&synthetic, &vec![vec![1]], &protos).is_err());
    }

    #[test]
    fn coverage_cases() {
        let centers = vec![vec![0.0, 0.0], vec![10.0, 10.0]];
        assert_eq!(coverage(&centers.clone(), &centers), 1.0);
        assert_eq!(coverage(&[vec![0.1, 0.0]], &centers), 0.5);
        let samples = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![10.0, 10.0]];
        assert_eq!(coverage(&samples, &centers), 1.0);
        let ten: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 10.0, 0.0]).collect();
        assert_eq!(coverage(&[vec![0.0, 0.0]], &ten), 0.1);
    }

    #[test]
    fn representativeness_cases() {
        // coincident with a real point, k=1 -> score 1
        let real = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = representativeness(&[vec![1.0, 0.0]], &real, 1).unwrap();
        assert_eq!(s, 1.0);
        // one synthetic at origin, both neighbors at distance 1 -> score 0.5
        let s = representativeness(&[vec![0.0, 0.0]], &real, 2).unwrap();
        assert!((s - 0.5).abs() < 1e-12);
        // k_nn clamps to the pool size
        let s2 = representativeness(&[vec![0.0, 0.0]], &real, 50).unwrap();
        assert_eq!(s, s2);
        assert!(representativeness(&[vec![0.0]], &[], 1).is_err());
    }

    fn point_spec(mean: Vec<f64>, std: f64) -> MixtureSpec {
        MixtureSpec {
            classes: vec![vec![MixtureComponent { mean, std, weight: 1.0 }]],
        }
    }

    #[test]
    fn moment_error_degenerate_and_shift() {
        let spec = point_spec(vec![1.0, 2.0], 0.5);
        // all samples exactly at the mean: zero mean error, cov error = ||Sigma||_F
        let samples = vec![vec![1.0, 2.0]; 4];
        let (me, ce) = moment_error(&samples, &spec, 0).unwrap();
        assert!(me.abs() < 1e-12);
        assert!((ce - (2.0f64 * 0.0625).sqrt()).abs() < 1e-12);
        // shifted target mean
        let spec_shift = point_spec(vec![2.0, 2.0], 0.0);
        let (me, _) = moment_error(&samples, &spec_shift, 0).unwrap();
        assert!((me - 1.0).abs() < 1e-12);
        assert!(moment_error(&samples[..1], &spec, 0).is_err());
    }

    #[test]
    fn moment_error_monte_carlo() {
        let spec = point_spec(vec![0.0, 0.0], 1.0);
        let pool = crate::latent::sample_mixture_dataset(&spec, 10_000, 11).unwrap();
        let (me, ce) = moment_error(pool.class(0), &spec, 0).unwrap();
        assert!(me < 0.05, "mean error {me}");
        assert!(ce < 0.05, "cov error {ce}");
    }

    fn separable_pools() -> (ClassPool, ClassPool) {
        let mut train = ClassPool::new(2, 2);
        let mut test = ClassPool::new(2, 2);
        for i in 0..20 {
            let off = i as f64 * 0.01;
            train
                .push(LabeledLatent { z: vec![-5.0 + off, 0.0], y: 0 })
                .unwrap();
            train
                .push(LabeledLatent { z: vec![5.0 + off, 0.0], y: 1 })
                .unwrap();
            test.push(LabeledLatent { z: vec![-5.0 - off, 0.5], y: 0 }).unwrap();
            test.push(LabeledLatent { z: vec![5.0 - off, -0.5], y: 1 }).unwrap();
        }
        (train, test)
    }

    #[test]
    fn probe_separable_perfect() {
        let (train, test) = separable_pools();
        let report = probe_eval(&train, &test, 5).unwrap();
        assert_eq!(report.mean_accuracy, 1.0);
        assert_eq!(report.std_accuracy, 0.0);
        assert!(!report.degenerate);
    }

    #[test]
    fn probe_degenerate_single_class() {
        let mut train = ClassPool::new(1, 2);
        for _ in 0..5 {
            train.push(LabeledLatent { z: vec![1.0], y: 0 }).unwrap();
        }
        let mut test = ClassPool::new(1, 2);
        test.push(LabeledLatent { z: vec![1.0], y: 0 }).unwrap();
        let report = probe_eval(&train, &test, 2).unwrap();
        assert!(report.degenerate);
        assert_eq!(report.mean_accuracy, 1.0);
    }

    #[test]
    fn probe_deterministic_per_seed() {
        let (train, test) = separable_pools();
        let a = probe_eval(&train, &test, 3).unwrap();
        let b = probe_eval(&train, &test, 3).unwrap();
        assert_eq!(a.per_seed_accuracy, b.per_seed_accuracy);
    }

    #[test]
    fn nfe_report_formula() {
        let scfg = SolverConfig { steps: 48, substeps: 4, method: Method::Euler };
        let rec = TrajectoryRecord {
            class: 0,
            k: 1,
            final_z: vec![],
            final_zhat: vec![],
            log: vec![],
            nfe: 192,
        };
        let report = nfe_report(&[rec.clone()], &scfg, false).unwrap();
        assert_eq!(report.per_sample, 192);
        // CFG doubles the count
        assert!(nfe_report(&[rec.clone()], &scfg, true).is_err());
        let rec_cfg = TrajectoryRecord { nfe: 384, ..rec };
        assert_eq!(nfe_report(&[rec_cfg], &scfg, true).unwrap().per_sample, 384);
    }
}
