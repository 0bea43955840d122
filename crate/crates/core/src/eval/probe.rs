//! Softmax linear classifier on frozen features.

use ess_tensor::ParameterSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::backbone_batch;
use crate::image::RgbImage;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 20,
            lr: 0.1,
            batch_size: 32,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
}

/// Per-dimension standardisation fitted on the training features.
struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    fn fit(xs: &[Vec<f64>]) -> Self {
        let d = xs[0].len();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in xs {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for x in xs {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let inv_std = var
            .into_iter()
            .map(|v| if v > 1e-12 { 1.0 / v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, inv_std }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }
}

struct Linear {
    w: Vec<f64>,
    b: Vec<f64>,
    d: usize,
    k: usize,
}

impl Linear {
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|c| self.b[c] + (0..self.d).map(|j| x[j] * self.w[j * self.k + c]).sum::<f64>())
            .collect()
    }

    /// Softmax probabilities and the cross-entropy against `y`.
    fn forward(&self, x: &[f64], y: usize) -> (Vec<f64>, f64) {
        let z = self.logits(x);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let loss = s.ln() + m - z[y];
        (e.into_iter().map(|v| v / s).collect(), loss)
    }

    fn evaluate(&self, xs: &[Vec<f64>], ys: &[usize]) -> (f64, f64) {
        let mut loss = 0.0;
        let mut correct = 0;
        for (x, &y) in xs.iter().zip(ys) {
            let (p, l) = self.forward(x, y);
            loss += l;
            let best = p
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a })
                .0;
            correct += usize::from(best == y);
        }
        let n = xs.len() as f64;
        (loss / n, correct as f64 / n)
    }
}

/// Trains the probe with plain minibatch SGD from zero weights.
pub fn train_probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    if train_x.is_empty() || test_x.is_empty() || train_x.len() != train_y.len() || test_x.len() != test_y.len() {
        return Err(Error::Eval("probe needs nonempty, aligned train and test sets".into()));
    }
    if let Some(y) = train_y.iter().chain(test_y).find(|&&y| y >= classes) {
        return Err(Error::Eval(format!("label {y} outside {classes} classes")));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("probe needs a positive batch size and learning rate".into()));
    }
    let d = train_x[0].len();
    let norm = Standardizer::fit(train_x);
    let tx: Vec<Vec<f64>> = train_x.iter().map(|x| norm.apply(x)).collect();
    let vx: Vec<Vec<f64>> = test_x.iter().map(|x| norm.apply(x)).collect();
    let mut model = Linear {
        w: vec![0.0; d * classes],
        b: vec![0.0; classes],
        d,
        k: classes,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..tx.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut gw = vec![0.0; d * classes];
            let mut gb = vec![0.0; classes];
            for &i in batch {
                let (mut p, _) = model.forward(&tx[i], train_y[i]);
                p[train_y[i]] -= 1.0;
                for (c, g) in p.iter().enumerate() {
                    gb[c] += g;
                    for j in 0..d {
                        gw[j * classes + c] += g * tx[i][j];
                    }
                }
            }
            let step = cfg.lr / batch.len() as f64;
            model.w.iter_mut().zip(&gw).for_each(|(w, g)| *w -= step * g);
            model.b.iter_mut().zip(&gb).for_each(|(b, g)| *b -= step * g);
        }
    }
    let (train_loss, train_accuracy) = model.evaluate(&tx, train_y);
    let (test_loss, test_accuracy) = model.evaluate(&vx, test_y);
    if !(train_loss.is_finite() && test_loss.is_finite()) {
        return Err(Error::Eval("probe loss diverged".into()));
    }
    Ok(ProbeReport {
        train_loss,
        test_loss,
        train_accuracy,
        test_accuracy,
        classes,
        train_samples: tx.len(),
        test_samples: vx.len(),
    })
}

pub fn to_f64(features: Vec<Vec<f32>>) -> Vec<Vec<f64>> {
    features
        .into_iter()
        .map(|f| f.into_iter().map(f64::from).collect())
        .collect()
}

/// Probe on backbone features of `params`, which are only read.
pub fn linear_probe(
    params: &ParameterSet<f32>,
    train: (&[&RgbImage], &[usize]),
    test: (&[&RgbImage], &[usize]),
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let train_x = to_f64(backbone_batch(params, train.0)?);
    let test_x = to_f64(backbone_batch(params, test.0)?);
    if train_x.iter().chain(&test_x).flatten().any(|v| !v.is_finite()) {
        return Err(Error::Eval("non-finite backbone features".into()));
    }
    train_probe(&train_x, train.1, &test_x, test.1, classes, cfg)
}
