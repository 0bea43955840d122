use std::collections::BTreeMap;
use std::time::Instant;

use ess_tensor::{Element, ParameterSet, Sgd, Tape, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{
    check_temperature, contrastive_loss, instance_hit, mb_weights, mw_weights, positive_agreement, LossMode,
};
use super::queue::{check_unit_norm, fallback_index, find_positives, DictionaryQueue};
use crate::augment::{augment, lighting_view, AugmentConfig, LightingChoice};
use crate::encoder::{embed, embed_images, image_tensor, Architecture};
use crate::env::dataset::Dataset;
use crate::env::render::render;
use crate::env::{lighting, FloorPlan, LightingCondition, LightingId};
use crate::image::RgbImage;
use crate::spatial::{is_positive, Pose, SimilarityThreshold, WeightParams};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnqueuePolicy {
    /// Enqueue the batch's keys, then mine positives.
    FirstEnqueue,
    /// Mine positives, then enqueue; empty positive sets fall back to the
    /// entry nearest in trajectory order.
    LastEnqueue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub mode: LossMode,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<SimilarityThreshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightParams>,
    pub policy: EnqueuePolicy,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::baseline()
    }
}

impl LossConfig {
    pub fn baseline() -> Self {
        LossConfig {
            mode: LossMode::Baseline,
            temperature: 0.2,
            threshold: None,
            weights: None,
            policy: EnqueuePolicy::FirstEnqueue,
        }
    }

    pub fn mb(threshold: SimilarityThreshold) -> Self {
        LossConfig {
            mode: LossMode::Mb,
            threshold: Some(threshold),
            ..Self::baseline()
        }
    }

    pub fn mw(threshold: SimilarityThreshold, weights: WeightParams) -> Self {
        LossConfig {
            mode: LossMode::Mw,
            threshold: Some(threshold),
            weights: Some(weights),
            ..Self::baseline()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        match self.mode {
            LossMode::Baseline => Ok(()),
            LossMode::Mb | LossMode::Mw if self.threshold.is_none() => {
                Err(Error::Config(format!("{} loss needs a similarity threshold", self.mode.name())))
            }
            LossMode::Mw if self.weights.is_none() => Err(Error::Config("mw loss needs weight parameters".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub queue_size: usize,
    /// Key-encoder blending coefficient `m`.
    pub encoder_momentum: f64,
    pub optimizer: OptimConfig,
    pub seed: u64,
    /// With several illuminants per pose, draw one per view instead of one
    /// shared by both views.
    pub independent_lighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            queue_size: 512,
            encoder_momentum: 0.999,
            optimizer: OptimConfig::default(),
            seed: 0,
            independent_lighting: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.queue_size < self.batch_size {
            return Err(Error::Config(format!(
                "queue size {} must be at least the batch size {}",
                self.queue_size, self.batch_size
            )));
        }
        if !(0.0..1.0).contains(&self.encoder_momentum) && self.encoder_momentum != 1.0 {
            return Err(Error::Config(format!("encoder momentum {}", self.encoder_momentum)));
        }
        Ok(())
    }
}

/// `key ← m·key + (1 − m)·query`, elementwise.
pub fn momentum_blend<T: Element>(key: &mut ParameterSet<T>, query: &ParameterSet<T>, m: f64) -> Result<()> {
    key.ensure_aligned(query).map_err(|e| Error::ArchitectureMismatch {
        expected: "query and key encoders with identical parameters".into(),
        found: e.to_string(),
    })?;
    let (a, b) = (T::of(m), T::of(1.0 - m));
    for ((_, k), (_, q)) in key.iter_mut().zip(query.iter()) {
        for (kv, &qv) in k.data_mut().iter_mut().zip(q.data()) {
            *kv = a * *kv + b * qv;
        }
    }
    Ok(())
}

/// Query encoder trained by gradients, key encoder following it by momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderPair {
    pub arch: Architecture,
    pub query: ParameterSet<f32>,
    pub key: ParameterSet<f32>,
    pub momentum: f64,
}

impl EncoderPair {
    pub fn new(arch: Architecture, seed: u64, momentum: f64) -> Result<Self> {
        let query = arch.init(seed)?;
        Ok(EncoderPair {
            arch,
            key: query.clone(),
            query,
            momentum,
        })
    }

    pub fn momentum_update(&mut self) -> Result<()> {
        momentum_blend(&mut self.key, &self.query, self.momentum)
    }
}

/// Source frames for pretext training. Each pose may carry renderings under
/// several illuminants.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub frames: Vec<u64>,
    pub poses: Vec<Pose>,
    pub views: Vec<BTreeMap<LightingId, RgbImage>>,
}

impl TrainingSet {
    pub fn from_dataset(ds: &Dataset) -> Self {
        TrainingSet {
            frames: ds.records.iter().map(|r| r.step).collect(),
            poses: ds.poses.clone(),
            views: ds
                .records
                .iter()
                .zip(&ds.images)
                .map(|(r, img)| BTreeMap::from([(r.lighting_id, img.clone())]))
                .collect(),
        }
    }

    /// Renders every pose under each of `ids`.
    pub fn with_lighting(
        plan: &FloorPlan,
        palette: &[LightingCondition],
        frames: &[u64],
        poses: &[Pose],
        ids: &[LightingId],
        resolution: usize,
    ) -> Result<Self> {
        let mut views = Vec::with_capacity(poses.len());
        for pose in poses {
            let mut m = BTreeMap::new();
            for &id in ids {
                m.insert(id, render(plan, pose, lighting::find(palette, id)?, resolution, resolution)?);
            }
            views.push(m);
        }
        Ok(TrainingSet {
            frames: frames.to_vec(),
            poses: poses.to_vec(),
            views,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mode: LossMode,
    pub loss: f64,
    pub pretext_acc: f64,
    pub mean_positives: f64,
    pub fallbacks: usize,
    pub wall_ms: u64,
    #[serde(skip)]
    pub batch_losses: Vec<f64>,
}

const ORDER_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;
const PREWARM_STREAM: u64 = 3;

fn stream(seed: u64, tag: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 32) | epoch as u64);
    rng
}

/// Shuffled sample order of one epoch; shared by every loss mode.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, ORDER_STREAM, epoch));
    order
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn non_finite(epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(TensorError::NonFinite { op }) => Error::NonFiniteLoss {
            epoch,
            batch,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Training state carried across epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub pair: EncoderPair,
    pub queue: DictionaryQueue,
    pub optimizer: Sgd<f32>,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub config: TrainConfig,
    epoch: usize,
}

impl Trainer {
    pub fn new(arch: Architecture, loss: LossConfig, augment: AugmentConfig, config: TrainConfig) -> Result<Self> {
        loss.validate()?;
        augment.validate()?;
        config.validate()?;
        let pair = EncoderPair::new(arch, config.seed, config.encoder_momentum)?;
        let o = &config.optimizer;
        Ok(Trainer {
            queue: DictionaryQueue::new(config.queue_size, arch.embed_dim)?,
            optimizer: Sgd::new(o.lr, o.momentum, o.weight_decay)?,
            pair,
            loss,
            augment,
            config,
            epoch: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    fn draw_views(&self, data: &TrainingSet, i: usize, rng: &mut ChaCha8Rng) -> Result<(RgbImage, RgbImage)> {
        let variants = &data.views[i];
        let (_, a) = lighting_view(variants, LightingChoice::Uniform, rng)?;
        let b = if self.config.independent_lighting {
            lighting_view(variants, LightingChoice::Uniform, rng)?.1
        } else {
            a
        };
        Ok((augment(a, &self.augment, rng), augment(b, &self.augment, rng)))
    }

    fn enqueue_keys(&mut self, data: &TrainingSet, batch: &[usize], keys: Vec<Vec<f32>>) -> Result<()> {
        for (&i, k) in batch.iter().zip(keys) {
            self.queue.enqueue(k, data.poses[i], data.frames[i])?;
        }
        Ok(())
    }

    /// Fills an empty queue with keys of the epoch's final batch, so no
    /// early query sees an empty dictionary.
    fn prewarm(&mut self, data: &TrainingSet, order: &[usize]) -> Result<()> {
        let bs = self.config.batch_size;
        let start = (order.len() - 1) / bs * bs;
        let batch = &order[start..];
        let mut rng = stream(self.config.seed, PREWARM_STREAM, self.epoch);
        let views = batch
            .iter()
            .map(|&i| Ok(self.draw_views(data, i, &mut rng)?.1))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&RgbImage> = views.iter().collect();
        let keys = embed_images(&self.pair.key, &refs)?;
        self.enqueue_keys(data, batch, keys)
    }

    pub fn train_epoch(&mut self, data: &TrainingSet) -> Result<EpochMetrics> {
        if data.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        let started = Instant::now();
        let seed = self.config.seed;
        let order = epoch_order(seed, self.epoch, data.len());
        if self.queue.is_empty() {
            self.prewarm(data, &order)?;
        }
        let mut rng = stream(seed, AUGMENT_STREAM, self.epoch);
        let (mut loss_sum, mut acc_sum, mut pos_sum, mut fallbacks) = (0.0, 0.0, 0.0, 0);
        let mut batch_losses = Vec::new();
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let r = self.train_batch(data, batch, &mut rng).map_err(non_finite(self.epoch, b))?;
            loss_sum += r.loss * batch.len() as f64;
            acc_sum += r.accuracy_sum;
            pos_sum += r.positives_sum;
            fallbacks += r.fallbacks;
            batch_losses.push(r.loss);
        }
        let n = data.len() as f64;
        let metrics = EpochMetrics {
            epoch: self.epoch,
            mode: self.loss.mode,
            loss: loss_sum / n,
            pretext_acc: acc_sum / n,
            mean_positives: pos_sum / n,
            fallbacks,
            wall_ms: started.elapsed().as_millis() as u64,
            batch_losses,
        };
        self.epoch += 1;
        Ok(metrics)
    }

    fn train_batch(&mut self, data: &TrainingSet, batch: &[usize], rng: &mut ChaCha8Rng) -> Result<BatchResult> {
        let views = batch
            .iter()
            .map(|&i| self.draw_views(data, i, rng))
            .collect::<Result<Vec<_>>>()?;
        let key_refs: Vec<&RgbImage> = views.iter().map(|v| &v.1).collect();
        let keys = embed_images(&self.pair.key, &key_refs)?;
        for k in &keys {
            check_unit_norm(k)?;
        }
        let first = self.loss.policy == EnqueuePolicy::FirstEnqueue;
        let pending = if first {
            self.enqueue_keys(data, batch, keys)?;
            None
        } else {
            Some(keys)
        };
        if self.queue.is_empty() {
            return Err(Error::EmptyQueue);
        }

        let dim = self.queue.dim();
        let k_len = self.queue.len();
        let dict = self.queue.key_matrix();
        let dict_poses: Vec<Pose> = self.queue.iter().map(|e| e.pose).collect();
        let tau = self.loss.temperature;

        let mut tape = Tape::new();
        let bound = self.pair.query.bind(&mut tape, true)?;
        let dict_var = tape.constant(Tensor::from_vec(&[k_len, dim], dict.clone())?)?;
        let mut losses = Vec::with_capacity(batch.len());
        let mut result = BatchResult::default();
        for (b, &i) in batch.iter().enumerate() {
            let x = tape.constant(image_tensor(&views[b].0))?;
            let q = embed(&mut tape, &bound, x)?;
            let qv = tape.value(q).data().to_vec();
            check_unit_norm(&qv)?;
            let sims: Vec<f64> = dict.chunks_exact(dim).map(|k| dot(k, &qv)).collect();
            let (dictionary, weights) = match self.loss.mode {
                LossMode::Baseline => {
                    let (var, self_index, sims) = match &pending {
                        None => (dict_var, k_len - batch.len() + b, sims),
                        Some(keys) => {
                            let mut rows = dict.clone();
                            rows.extend_from_slice(&keys[b]);
                            let var = tape.constant(Tensor::from_vec(&[k_len + 1, dim], rows)?)?;
                            let mut sims = sims;
                            sims.push(dot(&keys[b], &qv));
                            (var, k_len, sims)
                        }
                    };
                    let mut w = vec![0.0f32; sims.len()];
                    w[self_index] = 1.0;
                    result.accuracy_sum += instance_hit(&sims, self_index);
                    result.positives_sum += 1.0;
                    (var, w)
                }
                LossMode::Mb | LossMode::Mw => {
                    let thr = self.loss.threshold.as_ref().expect("validated");
                    let pose = &data.poses[i];
                    let labels: Vec<bool> = dict_poses.iter().map(|p| is_positive(pose, p, thr)).collect();
                    let mut positives = find_positives(pose, &self.queue, thr)?;
                    if positives.is_empty() {
                        positives.push(fallback_index(data.frames[i], &self.queue)?);
                        result.fallbacks += 1;
                    }
                    let w = match self.loss.mode {
                        LossMode::Mb => mb_weights(k_len, &positives)?,
                        _ => mw_weights(pose, &dict_poses, &positives, self.loss.weights.as_ref().expect("validated"))?,
                    };
                    result.accuracy_sum += positive_agreement(&sims, &labels, tau);
                    result.positives_sum += positives.len() as f64;
                    (dict_var, w.into_iter().map(|v| v as f32).collect())
                }
            };
            losses.push(contrastive_loss(&mut tape, q, dictionary, &weights, tau)?);
        }
        let all = tape.concat(&losses)?;
        let total = tape.sum(all)?;
        let mean = tape.scale(total, 1.0 / batch.len() as f64)?;
        let loss = tape.value(mean).item() as f64;
        if !loss.is_finite() {
            return Err(Error::Tensor(TensorError::NonFinite { op: "loss" }));
        }
        let grads = tape.backward(mean)?;
        let grads = self.pair.query.gradients_from(&grads, &bound)?;
        self.optimizer.step(&mut self.pair.query, &grads)?;
        self.pair.momentum_update()?;
        if let Some(keys) = pending {
            self.enqueue_keys(data, batch, keys)?;
        }
        result.loss = loss;
        Ok(result)
    }
}

#[derive(Default)]
struct BatchResult {
    loss: f64,
    accuracy_sum: f64,
    positives_sum: f64,
    fallbacks: usize,
}
