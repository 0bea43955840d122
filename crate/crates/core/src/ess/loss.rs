//! Contrastive objectives over a key dictionary.
//!
//! Every loss here is a weighted cross-entropy of the softmax over
//! `sim(q, k_d) / tau` for all dictionary entries `d`: the baseline puts all
//! weight on the query's own key, the multi-binary loss spreads it evenly
//! over the pose-mined positives, and the multi-weighted loss spreads it in
//! proportion to pair proximity.

use ess_tensor::{Element, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::spatial::{pair_weight, Pose, WeightParams};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Baseline,
    Mb,
    Mw,
}

impl LossMode {
    pub fn name(&self) -> &'static str {
        match self {
            LossMode::Baseline => "baseline",
            LossMode::Mb => "mb",
            LossMode::Mw => "mw",
        }
    }
}

pub fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Temperature(tau));
    }
    Ok(())
}

pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nu * nv)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `Σ_d w_d · -log softmax(sim / tau)_d`.
pub fn weighted_infonce(q: &[f64], dictionary: &[&[f64]], weights: &[f64], tau: f64) -> Result<f64> {
    check_temperature(tau)?;
    if dictionary.is_empty() {
        return Err(Error::EmptyQueue);
    }
    if weights.len() != dictionary.len() {
        return Err(Error::Config("one weight per dictionary entry required".into()));
    }
    let logits: Vec<f64> = dictionary.iter().map(|k| cosine(q, k) / tau).collect();
    let lse = log_sum_exp(&logits);
    Ok(logits.iter().zip(weights).map(|(z, w)| w * (lse - z)).sum())
}

/// Instance discrimination: the self key against itself plus `others`.
pub fn loss_baseline(q: &[f64], self_key: &[f64], others: &[&[f64]], tau: f64) -> Result<f64> {
    let mut dictionary: Vec<&[f64]> = others.to_vec();
    dictionary.push(self_key);
    let mut weights = vec![0.0; dictionary.len()];
    weights[others.len()] = 1.0;
    weighted_infonce(q, &dictionary, &weights, tau)
}

/// Uniform weights over the positive set.
pub fn mb_weights(len: usize, positives: &[usize]) -> Result<Vec<f64>> {
    if positives.is_empty() {
        return Err(Error::NoPositives);
    }
    let mut w = vec![0.0; len];
    for &p in positives {
        w[p] += 1.0 / positives.len() as f64;
    }
    Ok(w)
}

/// Proximity weights over the positive set, normalised to sum to one.
pub fn mw_weights(query: &Pose, poses: &[Pose], positives: &[usize], wp: &WeightParams) -> Result<Vec<f64>> {
    if positives.is_empty() {
        return Err(Error::NoPositives);
    }
    let raw: Vec<f64> = positives.iter().map(|&p| pair_weight(query, &poses[p], wp)).collect();
    let total: f64 = raw.iter().sum();
    let mut w = vec![0.0; poses.len()];
    for (&p, r) in positives.iter().zip(raw) {
        w[p] += r / total;
    }
    Ok(w)
}

pub fn loss_mb(q: &[f64], dictionary: &[&[f64]], positives: &[usize], tau: f64) -> Result<f64> {
    weighted_infonce(q, dictionary, &mb_weights(dictionary.len(), positives)?, tau)
}

pub fn loss_mw(
    q: &[f64],
    dictionary: &[&[f64]],
    poses: &[Pose],
    positives: &[usize],
    query_pose: &Pose,
    wp: &WeightParams,
    tau: f64,
) -> Result<f64> {
    let w = mw_weights(query_pose, poses, positives, wp)?;
    weighted_infonce(q, dictionary, &w, tau)
}

/// Tape form of [`weighted_infonce`] for a unit query `[1, d]` and a unit-row
/// dictionary `[K, d]`.
pub fn contrastive_loss<T: Element>(
    tape: &mut Tape<T>,
    q: Var,
    dictionary: Var,
    weights: &[T],
    tau: f64,
) -> Result<Var> {
    check_temperature(tau)?;
    let d = tape.value(q).len();
    let column = tape.reshape(q, &[d, 1])?;
    let sims = tape.matmul(dictionary, column)?;
    let logits = tape.scale(sims, 1.0 / tau)?;
    Ok(tape.soft_cross_entropy(logits, weights)?)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Probability cut for calling a dictionary entry a positive.
pub const POSITIVE_CUT: f64 = 0.95;

/// 1 when the most similar entry is the query's own key.
pub fn instance_hit(sims: &[f64], self_index: usize) -> f64 {
    let best = sims
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc })
        .0;
    if best == self_index {
        1.0
    } else {
        0.0
    }
}

/// Fraction of entries where `sigmoid(sim / tau) > 0.95` agrees with the
/// pose label.
pub fn positive_agreement(sims: &[f64], labels: &[bool], tau: f64) -> f64 {
    let agree = sims
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (sigmoid(s / tau) > POSITIVE_CUT) == l)
        .count();
    agree as f64 / sims.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_cut() {
        assert!((sigmoid(5.0) - 0.9933071490757153).abs() < 1e-15);
        assert!(sigmoid(1.0 / 0.2) > POSITIVE_CUT);
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(positive_agreement(&[1.0, 0.0], &[true, false], 0.2), 1.0);
        assert_eq!(positive_agreement(&[1.0, 0.0], &[false, false], 0.2), 0.5);
    }

    #[test]
    fn instance_hit_cases() {
        assert_eq!(instance_hit(&[0.0, 1.0, 0.2], 1), 1.0);
        assert_eq!(instance_hit(&[0.9, 0.1, 0.2], 1), 0.0);
    }

    #[test]
    fn temperature_checked() {
        let q = [1.0, 0.0];
        assert!(matches!(loss_baseline(&q, &q, &[], 0.0), Err(Error::Temperature(_))));
        assert!(loss_baseline(&q, &q, &[], -1.0).is_err());
    }

    #[test]
    fn empty_positive_set_errors() {
        let q = [1.0, 0.0];
        assert!(matches!(loss_mb(&q, &[&q], &[], 0.2), Err(Error::NoPositives)));
    }
}
