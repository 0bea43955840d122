//! Pose regression head: linear map from backbone features to
//! `(x, y, z, yaw)`, trained on `L = L_pos^2 + alpha * L_rot^2`.

use ess_tensor::{kaiming_uniform, ParameterSet, Sgd, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{backbone, image_tensor, BACKBONE_DIM};
use crate::image::RgbImage;
use crate::spatial::{delta_rot, Pose};
use crate::{Error, Result};

pub const HEAD_OUTPUTS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Weight of the squared rotation error.
    pub alpha: f64,
    /// Train the backbone too; otherwise only the head moves.
    pub fine_tune: bool,
    pub seed: u64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        LocalizationConfig {
            epochs: 10,
            lr: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            alpha: 1.0 / 360.0,
            fine_tune: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub train_loss: f64,
    pub test_loss: f64,
    pub initial_position_error: f64,
    pub initial_rotation_error: f64,
    /// Mean Euclidean error on the test set, meters.
    pub position_error: f64,
    /// Mean wrapped yaw error on the test set, degrees.
    pub rotation_error: f64,
    pub position_drop: f64,
    pub rotation_drop: f64,
}

/// `(L, L_pos, L_rot)` for one prediction `[x, y, z, yaw]`.
pub fn localization_loss(pred: [f64; 4], target: &Pose, alpha: f64) -> (f64, f64, f64) {
    let p = target.position();
    let l_pos = (0..3).map(|i| (pred[i] - p[i]).powi(2)).sum::<f64>().sqrt();
    let d = (pred[3] - target.yaw()).rem_euclid(360.0);
    let l_rot = d.min(360.0 - d);
    (l_pos * l_pos + alpha * l_rot * l_rot, l_pos, l_rot)
}

fn head_init(train: &[Pose], seed: u64) -> ParameterSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParameterSet::new();
    let w: Tensor<f32> = kaiming_uniform(&[BACKBONE_DIM, HEAD_OUTPUTS], BACKBONE_DIM, &mut rng);
    // small initial weights so the first predictions sit near the bias
    p.insert("loc.weight", w.map(|v| v * 0.01));
    let n = train.len() as f64;
    let mean = |f: &dyn Fn(&Pose) -> f64| (train.iter().map(f).sum::<f64>() / n) as f32;
    p.insert(
        "loc.bias",
        Tensor::vector(vec![mean(&|q| q.x()), mean(&|q| q.y()), mean(&|q| q.z()), mean(&|q| q.yaw())]),
    );
    p
}

fn backbone_only(params: &ParameterSet<f32>) -> ParameterSet<f32> {
    let mut out = ParameterSet::new();
    for (name, t) in params.iter() {
        if !name.starts_with("proj") {
            out.insert(name, t.clone());
        }
    }
    out
}

struct Model {
    backbone: ParameterSet<f32>,
    head: ParameterSet<f32>,
}

impl Model {
    fn predict(&self, images: &[&RgbImage]) -> Result<Vec<[f64; 4]>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let mut tape = Tape::new();
            let bb = self.backbone.bind(&mut tape, false)?;
            let hd = self.head.bind(&mut tape, false)?;
            for img in chunk {
                let x = tape.constant(image_tensor(img))?;
                let f = backbone(&mut tape, &bb, x)?;
                let y = tape.linear(f, hd.get("loc.weight")?, hd.get("loc.bias")?)?;
                let v = tape.value(y).data();
                out.push([v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64]);
            }
        }
        Ok(out)
    }

    fn errors(&self, images: &[&RgbImage], poses: &[Pose], alpha: f64) -> Result<(f64, f64, f64)> {
        let preds = self.predict(images)?;
        let n = poses.len() as f64;
        let (mut l, mut p, mut r) = (0.0, 0.0, 0.0);
        for (pred, pose) in preds.iter().zip(poses) {
            let (a, b, c) = localization_loss(*pred, pose, alpha);
            l += a;
            p += b;
            r += c;
        }
        Ok((l / n, p / n, r / n))
    }
}

/// Fine-tunes a copy of the backbone with a fresh head; `params` is only
/// read.
pub fn localization_train_eval(
    params: &ParameterSet<f32>,
    train: (&[&RgbImage], &[Pose]),
    test: (&[&RgbImage], &[Pose]),
    cfg: &LocalizationConfig,
) -> Result<LocalizationReport> {
    if train.0.is_empty() || test.0.is_empty() || train.0.len() != train.1.len() || test.0.len() != test.1.len() {
        return Err(Error::Eval("localization needs nonempty, aligned train and test sets".into()));
    }
    let mut model = Model {
        backbone: backbone_only(params),
        head: head_init(train.1, cfg.seed),
    };
    let (_, init_pos, init_rot) = model.errors(test.0, test.1, cfg.alpha)?;
    let mut opt_backbone = Sgd::new(cfg.lr, cfg.momentum, 0.0)?;
    let mut opt_head = Sgd::new(cfg.lr, cfg.momentum, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.0.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = Tape::new();
            let bb = model.backbone.bind(&mut tape, cfg.fine_tune)?;
            let hd = model.head.bind(&mut tape, true)?;
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let pose = &train.1[i];
                let x = tape.constant(image_tensor(train.0[i]))?;
                let f = backbone(&mut tape, &bb, x)?;
                let y = tape.linear(f, hd.get("loc.weight")?, hd.get("loc.bias")?)?;
                let pos = tape.slice(y, 0, 3)?;
                let p = pose.position();
                let target = tape.constant(Tensor::vector(p.iter().map(|&v| v as f32).collect()))?;
                let diff = tape.sub(pos, target)?;
                let sq = tape.square(diff)?;
                let l_pos2 = tape.sum(sq)?;
                let rot = tape.slice(y, 3, 1)?;
                let err = tape.angle_error(rot, &[pose.yaw()])?;
                let err2 = tape.square(err)?;
                let l_rot2 = tape.sum(err2)?;
                let weighted = tape.scale(l_rot2, cfg.alpha)?;
                losses.push(tape.add(l_pos2, weighted)?);
            }
            let all = tape.concat(&losses)?;
            let total = tape.sum(all)?;
            let mean = tape.scale(total, 1.0 / batch.len() as f64)?;
            if !(tape.value(mean).item() as f64).is_finite() {
                return Err(Error::Eval(format!("non-finite localization loss in epoch {epoch}")));
            }
            let grads = tape.backward(mean)?;
            let gh = model.head.gradients_from(&grads, &hd)?;
            opt_head.step(&mut model.head, &gh)?;
            if cfg.fine_tune {
                let gb = model.backbone.gradients_from(&grads, &bb)?;
                opt_backbone.step(&mut model.backbone, &gb)?;
            }
        }
    }
    let (train_loss, _, _) = model.errors(train.0, train.1, cfg.alpha)?;
    let (test_loss, pos, rot) = model.errors(test.0, test.1, cfg.alpha)?;
    Ok(LocalizationReport {
        train_loss,
        test_loss,
        initial_position_error: init_pos,
        initial_rotation_error: init_rot,
        position_error: pos,
        rotation_error: rot,
        position_drop: init_pos - pos,
        rotation_drop: init_rot - rot,
    })
}

/// Wrapped rotation error between two poses, degrees.
pub fn rotation_error(a: &Pose, b: &Pose) -> f64 {
    delta_rot(a, b)
}
