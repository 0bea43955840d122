//! Finite-difference verification of every tape op and of the contrastive
//! losses, in 64-bit.

use std::time::Instant;

use ess_tensor::gradcheck::{self as fd, LossFn};
use ess_tensor::{ParameterSet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{embed, image_tensor, Architecture};
use crate::ess::loss::{contrastive_loss, mb_weights, mw_weights};
use crate::image::RgbImage;
use crate::spatial::{Pose, SimilarityThreshold, WeightParams};
use crate::Result;

pub const OP_TOLERANCE: f64 = 1e-4;
pub const LOSS_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    Op,
    Loss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub kind: CaseKind,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Coordinates compared against finite differences.
    pub coordinates: usize,
    pub wall_ms: u64,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape and data agree")
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    random(shape, rng).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// `Σ out ⊙ R` for a fixed random `R`, reducing any output to a scalar.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> ess_tensor::Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let r = random(&shape, &mut ChaCha8Rng::seed_from_u64(seed));
    let r = tape.constant(r)?;
    let m = tape.mul(out, r)?;
    tape.sum(m)
}

fn run_case(name: &str, kind: CaseKind, inputs: Vec<Tensor<f64>>, build: impl LossFn) -> Result<CaseResult> {
    let started = Instant::now();
    let err = fd::check(&inputs, &build)?;
    let tolerance = match kind {
        CaseKind::Op => OP_TOLERANCE,
        CaseKind::Loss => LOSS_TOLERANCE,
    };
    Ok(CaseResult {
        name: name.into(),
        kind,
        max_rel_error: err,
        tolerance,
        passed: err < tolerance,
        coordinates: inputs.iter().map(Tensor::len).sum(),
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

/// One case per differentiable tape op.
pub fn op_cases() -> Result<Vec<CaseResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut out = Vec::new();
    let mut op = |name: &str, inputs: Vec<Tensor<f64>>, build: &dyn Fn(&mut Tape<f64>, &[Var]) -> ess_tensor::Result<Var>| -> Result<()> {
        let seed = out.len() as u64 + 100;
        out.push(run_case(name, CaseKind::Op, inputs, |t: &mut Tape<f64>, v: &[Var]| {
            let y = build(t, v)?;
            project(t, y, seed)
        })?);
        Ok(())
    };
    op("matmul", vec![random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)], &|t, v| t.matmul(v[0], v[1]))?;
    op("conv2d", vec![random(&[2, 5, 5], &mut rng), random(&[3, 2, 3, 3], &mut rng)], &|t, v| t.conv2d(v[0], v[1], 1))?;
    op("conv2d_stride2", vec![random(&[2, 6, 6], &mut rng), random(&[2, 2, 3, 3], &mut rng)], &|t, v| {
        t.conv2d(v[0], v[1], 2)
    })?;
    op("add_bias_axis0", vec![random(&[3, 2, 2], &mut rng), random(&[3], &mut rng)], &|t, v| t.add_bias(v[0], v[1], 0))?;
    op("add_bias_axis1", vec![random(&[2, 3], &mut rng), random(&[3], &mut rng)], &|t, v| t.add_bias(v[0], v[1], 1))?;
    op("add", vec![random(&[2, 3], &mut rng), random(&[2, 3], &mut rng)], &|t, v| t.add(v[0], v[1]))?;
    op("sub", vec![random(&[2, 3], &mut rng), random(&[2, 3], &mut rng)], &|t, v| t.sub(v[0], v[1]))?;
    op("mul", vec![random(&[2, 3], &mut rng), random(&[2, 3], &mut rng)], &|t, v| t.mul(v[0], v[1]))?;
    op("scale", vec![random(&[4], &mut rng)], &|t, v| t.scale(v[0], -2.5))?;
    op("relu", vec![away_from_zero(&[2, 4], &mut rng)], &|t, v| t.relu(v[0]))?;
    op("square", vec![random(&[5], &mut rng)], &|t, v| t.square(v[0]))?;
    op("avg_pool2", vec![random(&[2, 4, 5], &mut rng)], &|t, v| t.avg_pool2(v[0]))?;
    op("reshape", vec![random(&[2, 3], &mut rng)], &|t, v| t.reshape(v[0], &[3, 2]))?;
    op("concat", vec![random(&[1, 3], &mut rng), random(&[2, 3], &mut rng)], &|t, v| t.concat(&[v[0], v[1]]))?;
    op("sum", vec![random(&[3, 2], &mut rng)], &|t, v| t.sum(v[0]))?;
    op("l2_normalize", vec![away_from_zero(&[1, 5], &mut rng)], &|t, v| t.l2_normalize(v[0]))?;
    op("log_sum_exp", vec![random(&[6], &mut rng)], &|t, v| t.log_sum_exp(v[0]))?;
    op("cross_entropy", vec![random(&[5], &mut rng)], &|t, v| t.cross_entropy(v[0], 3))?;
    op("soft_cross_entropy", vec![random(&[4], &mut rng)], &|t, v| {
        t.soft_cross_entropy(v[0], &[0.1, 0.0, 0.6, 0.3])
    })?;
    op("pick", vec![random(&[2, 3], &mut rng)], &|t, v| t.pick(v[0], 4))?;
    op("slice", vec![random(&[6], &mut rng)], &|t, v| t.slice(v[0], 1, 3))?;
    // differences of 40, 330 and 100 degrees keep clear of the kinks at 0 and 180
    op("angle_error", vec![Tensor::vector(vec![50.0, 345.0, 200.0])], &|t, v| {
        t.angle_error(v[0], &[10.0, 15.0, 100.0])
    })?;
    op("linear", vec![random(&[1, 4], &mut rng), random(&[4, 3], &mut rng), random(&[3], &mut rng)], &|t, v| {
        t.linear(v[0], v[1], v[2])
    })?;
    Ok(out)
}

fn unit_rows(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = random(&[rows, dim], rng);
    for row in t.data_mut().chunks_mut(dim) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    t
}

/// Loss of a raw query vector (normalised on the tape) against a dictionary.
fn loss_case(name: &str, weights: Vec<f64>, rng: &mut ChaCha8Rng) -> Result<CaseResult> {
    let dim = 6;
    let inputs = vec![random(&[1, dim], rng), unit_rows(weights.len(), dim, rng)];
    run_case(name, CaseKind::Loss, inputs, move |t: &mut Tape<f64>, v: &[Var]| {
        let q = t.l2_normalize(v[0])?;
        contrastive_loss(t, q, v[1], &weights, 0.2).map_err(|e| match e {
            crate::Error::Tensor(e) => e,
            other => ess_tensor::TensorError::InvalidArgument(other.to_string()),
        })
    })
}

fn grid_poses(n: usize, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    (0..n)
        .map(|_| {
            Pose::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), 1.5, rng.random_range(0.0..360.0))
                .expect("finite pose")
        })
        .collect()
}

/// The three contrastive losses with respect to query and keys.
pub fn loss_cases() -> Result<Vec<CaseResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let k = 9;
    let mut baseline = vec![0.0; k];
    baseline[k - 1] = 1.0;
    let mb = mb_weights(k, &[1, 4, 8])?;
    let poses = grid_poses(k, &mut rng);
    let query = grid_poses(1, &mut rng)[0];
    let mw = mw_weights(&query, &poses, &[0, 2, 5, 8], &WeightParams::default())?;
    Ok(vec![
        loss_case("loss_baseline", baseline, &mut rng)?,
        loss_case("loss_mb", mb, &mut rng)?,
        loss_case("loss_mw", mw, &mut rng)?,
    ])
}

fn noise_image(side: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let data = (0..side * side * 3).map(|_| rng.random::<u8>()).collect();
    RgbImage::from_raw(side, side, data).expect("sized buffer")
}

/// Mean ESS-MB loss of a micro-batch through the full encoder.
fn micro_batch_loss(
    tape: &mut Tape<f64>,
    params: &ParameterSet<f64>,
    trainable: bool,
    images: &[RgbImage],
    dict: &Tensor<f64>,
    weights: &[Vec<f64>],
) -> Result<(Var, ess_tensor::BoundParams)> {
    let bound = params.bind(tape, trainable)?;
    let d = tape.constant(dict.clone())?;
    let mut losses = Vec::new();
    for (img, w) in images.iter().zip(weights) {
        let x = tape.constant(image_tensor(img))?;
        let q = embed(tape, &bound, x)?;
        losses.push(contrastive_loss(tape, q, d, w, 0.2)?);
    }
    let all = tape.concat(&losses)?;
    let total = tape.sum(all)?;
    Ok((tape.scale(total, 1.0 / images.len() as f64)?, bound))
}

/// Full ESS-MB pass on four images. Every bias and the first conv kernel are
/// checked in full; larger weights on a seeded sample of coordinates.
pub fn micro_batch_case() -> Result<CaseResult> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let arch = Architecture {
        resolution: 8,
        embed_dim: 8,
    };
    let params = arch.init::<f64>(5)?;
    let images: Vec<RgbImage> = (0..4).map(|_| noise_image(8, &mut rng)).collect();
    let queue = 12;
    let dict = unit_rows(queue, arch.embed_dim, &mut rng);
    let poses = grid_poses(queue, &mut rng);
    let thr = SimilarityThreshold::bounded(1.0, 90.0)?;
    let weights = images
        .iter()
        .enumerate()
        .map(|(b, _)| {
            // the batch's own keys sit at the tail of the queue
            let own = queue - images.len() + b;
            let p: Vec<usize> = (0..queue)
                .filter(|&j| j == own || crate::spatial::is_positive(&poses[own], &poses[j], &thr))
                .collect();
            mb_weights(queue, &p)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut tape = Tape::new();
    let (loss, bound) = micro_batch_loss(&mut tape, &params, true, &images, &dict, &weights)?;
    let grads = params.gradients_from(&tape.backward(loss)?, &bound)?;

    let eval = |p: &ParameterSet<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let (loss, _) = micro_batch_loss(&mut tape, p, false, &images, &dict, &weights)?;
        Ok(tape.value(loss).item())
    };
    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let len = params.get(&name).map_or(0, Tensor::len);
        let picks: Vec<usize> = if len <= 512 {
            (0..len).collect()
        } else {
            (0..128).map(|_| rng.random_range(0..len)).collect()
        };
        for j in picks {
            let orig = params.get(&name).expect("listed").data()[j];
            let t = work.get_mut(&name).expect("listed");
            t.data_mut()[j] = orig + fd::STEP;
            let plus = eval(&work)?;
            work.get_mut(&name).expect("listed").data_mut()[j] = orig - fd::STEP;
            let minus = eval(&work)?;
            work.get_mut(&name).expect("listed").data_mut()[j] = orig;
            let n = (plus - minus) / (2.0 * fd::STEP);
            let a = grads.get(&name).expect("listed").data()[j];
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(fd::REL_FLOOR));
            coordinates += 1;
        }
    }
    Ok(CaseResult {
        name: "ess_mb_micro_batch".into(),
        kind: CaseKind::Loss,
        max_rel_error: worst,
        tolerance: LOSS_TOLERANCE,
        passed: worst < LOSS_TOLERANCE,
        coordinates,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

pub fn run_suite() -> Result<Vec<CaseResult>> {
    let mut all = op_cases()?;
    all.extend(loss_cases()?);
    all.push(micro_batch_case()?);
    Ok(all)
}
