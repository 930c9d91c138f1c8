//! Tiny trainable velocity field and the conditional flow-matching loss.
//!
//! The field is a small fully-connected map from `(t, z, one-hot y)` to a
//! velocity vector, trained by plain SGD on the CFM regression target
//! `u* = z1 - z0` along the linear interpolant. It exists to exercise the
//! training path and gradient machinery; it is not expected to match the
//! analytic oracle.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::latent::ClassPool;
use crate::rng::derive_rng;
use crate::velocity::VelocityField;

/// One training tuple: time, interpolated state, class, target velocity.
#[derive(Debug, Clone)]
pub struct CfmSample {
    pub t: f64,
    pub z_t: Vec<f64>,
    pub y: usize,
    pub u_star: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// Row-major `out x in` weights.
    w: Vec<f64>,
    b: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Layer {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                self.b[r]
                    + self.w[r * self.cols..(r + 1) * self.cols]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Small MLP velocity field: tanh hidden layers, linear output.
pub struct TrainableField {
    layers: Vec<Layer>,
    dim: usize,
    num_classes: usize,
    hidden: Vec<usize>,
    pub steps_taken: usize,
    nfe: AtomicU64,
}

impl Clone for TrainableField {
    fn clone(&self) -> Self {
        TrainableField {
            layers: self.layers.clone(),
            dim: self.dim,
            num_classes: self.num_classes,
            hidden: self.hidden.clone(),
            steps_taken: self.steps_taken,
            nfe: AtomicU64::new(0),
        }
    }
}

impl TrainableField {
    /// Fresh field with small random weights. Input layout is
    /// `[t, z_1..z_D, one-hot class]`; the unconditional query zeroes the
    /// one-hot block.
    pub fn new(dim: usize, num_classes: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = derive_rng(seed, &[0x1217]);
        let mut sizes = vec![1 + dim + num_classes];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        let layers = sizes
            .windows(2)
            .map(|io| {
                let (cols, rows) = (io[0], io[1]);
                let scale = (1.0 / cols as f64).sqrt();
                Layer {
                    w: (0..rows * cols)
                        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                    b: vec![0.0; rows],
                    rows,
                    cols,
                }
            })
            .collect();
        TrainableField {
            layers,
            dim,
            num_classes,
            hidden: hidden.to_vec(),
            steps_taken: 0,
            nfe: AtomicU64::new(0),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} params, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let wl = l.w.len();
            l.w.copy_from_slice(&params[off..off + wl]);
            off += wl;
            let bl = l.b.len();
            l.b.copy_from_slice(&params[off..off + bl]);
            off += bl;
        }
        Ok(())
    }

    fn input(&self, t: f64, z: &[f64], class: Option<usize>) -> Vec<f64> {
        let mut x = Vec::with_capacity(1 + self.dim + self.num_classes);
        x.push(t);
        x.extend_from_slice(z);
        let mut onehot = vec![0.0; self.num_classes];
        if let Some(y) = class {
            onehot[y] = 1.0;
        }
        x.extend_from_slice(&onehot);
        x
    }

    /// Forward pass keeping pre-activation inputs of each layer for backprop.
    fn forward_trace(&self, x0: Vec<f64>) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut activations = vec![x0];
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut h = l.forward(activations.last().unwrap());
            if i != last {
                for v in h.iter_mut() {
                    *v = v.tanh();
                }
            }
            activations.push(h);
        }
        let out = activations.last().unwrap().clone();
        (activations, out)
    }

    fn forward(&self, t: f64, z: &[f64], class: Option<usize>) -> Vec<f64> {
        self.forward_trace(self.input(t, z, class)).1
    }

    /// Mean CFM loss over a batch together with the flat parameter gradient.
    pub fn loss_and_grad(
        &self,
        batch: &[CfmSample],
        weight: impl Fn(f64) -> f64,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Data("cfm batch is empty".into()));
        }
        let mut grad = vec![0.0; self.num_params()];
        let mut loss = 0.0;
        let n = batch.len() as f64;
        let last = self.layers.len() - 1;
        for sample in batch {
            let lam = weight(sample.t);
            let (acts, pred) = self.forward_trace(self.input(sample.t, &sample.z_t, Some(sample.y)));
            let resid: Vec<f64> = pred.iter().zip(&sample.u_star).map(|(p, u)| p - u).collect();
            loss += lam * resid.iter().map(|r| r * r).sum::<f64>() / n;
            // dL/d(output) for this sample
            let mut delta: Vec<f64> = resid.iter().map(|r| 2.0 * lam * r / n).collect();
            let mut off_end = self.num_params();
            for (i, l) in self.layers.iter().enumerate().rev() {
                // activation derivative of this layer's output (tanh on hidden)
                if i != last {
                    for (d, a) in delta.iter_mut().zip(&acts[i + 1]) {
                        *d *= 1.0 - a * a;
                    }
                }
                let b_off = off_end - l.b.len();
                let w_off = b_off - l.w.len();
                for r in 0..l.rows {
                    grad[b_off + r] += delta[r];
                    for c in 0..l.cols {
                        grad[w_off + r * l.cols + c] += delta[r] * acts[i][c];
                    }
                }
                // propagate to the previous layer
                let mut prev = vec![0.0; l.cols];
                for r in 0..l.rows {
                    for c in 0..l.cols {
                        prev[c] += l.w[r * l.cols + c] * delta[r];
                    }
                }
                delta = prev;
                off_end = w_off;
            }
        }
        Ok((loss, grad))
    }
}

impl VelocityField for TrainableField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, z: &[f64], class: Option<usize>) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::Shape("query dim mismatch".into()));
        }
        self.nfe.fetch_add(1, Ordering::Relaxed);
        Ok(self.forward(t, z, class))
    }

    fn nfe(&self) -> u64 {
        self.nfe.load(Ordering::Relaxed)
    }

    fn reset_nfe(&self) {
        self.nfe.store(0, Ordering::Relaxed);
    }
}

/// Mean of `lambda(t) * ||field(t, z_t, y) - u*||^2` over a batch.
pub fn cfm_loss(
    batch: &[CfmSample],
    field: &TrainableField,
    weight: impl Fn(f64) -> f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Data("cfm batch is empty".into()));
    }
    let n = batch.len() as f64;
    Ok(batch
        .iter()
        .map(|s| {
            let pred = field.forward(s.t, &s.z_t, Some(s.y));
            weight(s.t)
                * pred
                    .iter()
                    .zip(&s.u_star)
                    .map(|(p, u)| (p - u) * (p - u))
                    .sum::<f64>()
        })
        .sum::<f64>()
        / n)
}

/// Hyperparameters for [`train_field`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.05,
            hidden: vec![32, 32],
        }
    }
}

/// Draw a CFM training batch from the pool: `(z0, z1, t)` with `z1` uniform
/// over the pool and `u* = z1 - z0` along the linear interpolant.
fn draw_batch(
    pool_items: &[(usize, &Vec<f64>)],
    batch_size: usize,
    rng: &mut impl Rng,
) -> Vec<CfmSample> {
    let dim = pool_items[0].1.len();
    (0..batch_size)
        .map(|_| {
            let (y, z1) = pool_items[rng.gen_range(0..pool_items.len())];
            let t: f64 = rng.gen::<f64>() * (1.0 - 1e-6);
            let z0: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let z_t: Vec<f64> = z0
                .iter()
                .zip(z1)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect();
            let u_star: Vec<f64> = z1.iter().zip(&z0).map(|(a, b)| a - b).collect();
            CfmSample { t, z_t, y, u_star }
        })
        .collect()
}

/// Result of a training run with the first and last epoch mean losses.
pub struct TrainOutcome {
    pub field: TrainableField,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Train a fresh field on a pool by SGD over the CFM loss with `lambda = 1`.
/// Deterministic given the seed.
pub fn train_field(pool: &ClassPool, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    if pool.is_empty() {
        return Err(Error::Data("cannot train on an empty pool".into()));
    }
    let items: Vec<(usize, &Vec<f64>)> = (0..pool.num_classes())
        .flat_map(|y| pool.class(y).iter().map(move |z| (y, z)))
        .collect();
    let mut field = TrainableField::new(pool.dim(), pool.num_classes(), &cfg.hidden, seed);
    let mut rng = derive_rng(seed, &[0x7A41]);
    let probe = draw_batch(&items, cfg.batch_size.max(64), &mut rng);
    let initial_loss = cfm_loss(&probe, &field, |_| 1.0)?;
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        let batch = draw_batch(&items, cfg.batch_size, &mut rng);
        let (loss, grad) = field.loss_and_grad(&batch, |_| 1.0)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                msg: format!("non-finite training loss {loss}"),
            });
        }
        let mut params = field.params_flat();
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
        field.set_params_flat(&params)?;
        step += 1;
        field.steps_taken = step;
    }
    let final_loss = cfm_loss(&probe, &field, |_| 1.0)?;
    Ok(TrainOutcome {
        field,
        initial_loss,
        final_loss,
    })
}

/// Write parameters as a flat little-endian f64 vector plus a text sidecar
/// recording the architecture.
pub fn save_params(field: &TrainableField, bin_path: &Path, sidecar_path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    for p in field.params_flat() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    std::fs::write(bin_path, bytes)?;
    let hidden = field
        .hidden
        .iter()
        .map(|h| h.to_string())
        .collect::<Vec<_>>()
        .join(",");
    std::fs::write(
        sidecar_path,
        format!(
            "dim={}\nclasses={}\nhidden={}\nparams={}\n",
            field.dim,
            field.num_classes,
            hidden,
            field.num_params()
        ),
    )?;
    Ok(())
}

pub fn load_params(bin_path: &Path, sidecar_path: &Path) -> Result<TrainableField> {
    let sidecar = std::fs::read_to_string(sidecar_path)?;
    let mut dim = None;
    let mut classes = None;
    let mut hidden: Vec<usize> = Vec::new();
    for line in sidecar.lines() {
        if let Some(v) = line.strip_prefix("dim=") {
            dim = v.parse().ok();
        } else if let Some(v) = line.strip_prefix("classes=") {
            classes = v.parse().ok();
        } else if let Some(v) = line.strip_prefix("hidden=") {
            hidden = v
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Data("bad hidden sizes in sidecar".into()))?;
        }
    }
    let (dim, classes) = match (dim, classes) {
        (Some(d), Some(c)) => (d, c),
        _ => return Err(Error::Data("sidecar must declare dim and classes".into())),
    };
    let mut field = TrainableField::new(dim, classes, &hidden, 0);
    let bytes = std::fs::read(bin_path)?;
    if bytes.len() != field.num_params() * 8 {
        return Err(Error::Data(format!(
            "param file holds {} bytes, expected {}",
            bytes.len(),
            field.num_params() * 8
        )));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    field.set_params_flat(&params)?;
    Ok(field)
}
