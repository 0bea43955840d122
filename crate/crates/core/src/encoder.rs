//! TinyConv: a two-stage convolutional backbone with an MLP projection head.
//!
//! ```text
//! [3,r,r] conv3x3(16) relu pool2 conv3x3(32) relu pool2 -> flatten
//!         linear(128) relu                       backbone features
//!         linear(64) relu linear(d) l2-normalise embedding
//! ```

use std::fs;
use std::path::Path;

use ess_tensor::{checkpoint, kaiming_uniform, BoundParams, Element, ParameterSet, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::RgbImage;
use crate::{Error, Result};

pub const CONV1_CHANNELS: usize = 16;
pub const CONV2_CHANNELS: usize = 32;
pub const BACKBONE_DIM: usize = 128;
pub const PROJECTION_HIDDEN: usize = 64;

const DESCRIPTOR_PREFIX: &str = "tinyconv-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    /// Square input side in pixels.
    pub resolution: usize,
    pub embed_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            resolution: 32,
            embed_dim: 32,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 || self.resolution % 4 != 0 || self.embed_dim == 0 {
            return Err(Error::Config(format!(
                "unsupported architecture {self:?}: resolution must be a multiple of 4 and at least 8"
            )));
        }
        Ok(())
    }

    pub fn descriptor(&self) -> String {
        format!(
            "{DESCRIPTOR_PREFIX}:res={}:conv={CONV1_CHANNELS},{CONV2_CHANNELS}:feat={BACKBONE_DIM}:proj={PROJECTION_HIDDEN},{}",
            self.resolution, self.embed_dim
        )
    }

    fn flat_dim(&self) -> usize {
        CONV2_CHANNELS * (self.resolution / 4) * (self.resolution / 4)
    }

    /// Kaiming-uniform weights, zero biases.
    pub fn init<T: Element>(&self, seed: u64) -> Result<ParameterSet<T>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParameterSet::new();
        let mut layer = |p: &mut ParameterSet<T>, name: &str, shape: &[usize], fan_in: usize, out: usize| {
            p.insert(format!("{name}.weight"), kaiming_uniform(shape, fan_in, &mut rng));
            p.insert(format!("{name}.bias"), Tensor::zeros(&[out]));
        };
        layer(&mut p, "conv1", &[CONV1_CHANNELS, 3, 3, 3], 27, CONV1_CHANNELS);
        layer(&mut p, "conv2", &[CONV2_CHANNELS, CONV1_CHANNELS, 3, 3], CONV1_CHANNELS * 9, CONV2_CHANNELS);
        let flat = self.flat_dim();
        layer(&mut p, "fc", &[flat, BACKBONE_DIM], flat, BACKBONE_DIM);
        layer(&mut p, "proj1", &[BACKBONE_DIM, PROJECTION_HIDDEN], BACKBONE_DIM, PROJECTION_HIDDEN);
        layer(&mut p, "proj2", &[PROJECTION_HIDDEN, self.embed_dim], PROJECTION_HIDDEN, self.embed_dim);
        Ok(p)
    }

    /// Fails unless `params` has exactly this architecture's names and shapes.
    pub fn check_params<T: Element>(&self, params: &ParameterSet<T>) -> Result<()> {
        let reference = self.init::<T>(0)?;
        reference.ensure_aligned(params).map_err(|e| Error::ArchitectureMismatch {
            expected: self.descriptor(),
            found: e.to_string(),
        })
    }
}

/// `[3, h, w]` tensor with values in `[0, 1]`.
pub fn image_tensor<T: Element>(img: &RgbImage) -> Tensor<T> {
    let data = img.to_chw().into_iter().map(|v| T::of(v as f64)).collect();
    Tensor::from_vec(&[3, img.height(), img.width()], data).expect("image dimensions are consistent")
}

/// Backbone features `[1, 128]` of one `[3, r, r]` image.
pub fn backbone<T: Element>(tape: &mut Tape<T>, p: &BoundParams, image: Var) -> Result<Var> {
    let x = tape.conv2d(image, p.get("conv1.weight")?, 1)?;
    let x = tape.add_bias(x, p.get("conv1.bias")?, 0)?;
    let x = tape.relu(x)?;
    let x = tape.avg_pool2(x)?;
    let x = tape.conv2d(x, p.get("conv2.weight")?, 1)?;
    let x = tape.add_bias(x, p.get("conv2.bias")?, 0)?;
    let x = tape.relu(x)?;
    let x = tape.avg_pool2(x)?;
    let flat = tape.value(x).len();
    let x = tape.reshape(x, &[1, flat])?;
    let x = tape.linear(x, p.get("fc.weight")?, p.get("fc.bias")?)?;
    Ok(tape.relu(x)?)
}

/// Unnormalised projection `[1, d]` of backbone features.
pub fn project<T: Element>(tape: &mut Tape<T>, p: &BoundParams, features: Var) -> Result<Var> {
    let x = tape.linear(features, p.get("proj1.weight")?, p.get("proj1.bias")?)?;
    let x = tape.relu(x)?;
    Ok(tape.linear(x, p.get("proj2.weight")?, p.get("proj2.bias")?)?)
}

/// Unit-norm embedding of one image.
pub fn embed<T: Element>(tape: &mut Tape<T>, p: &BoundParams, image: Var) -> Result<Var> {
    let f = backbone(tape, p, image)?;
    let z = project(tape, p, f)?;
    Ok(tape.l2_normalize(z)?)
}

/// Images per tape in forward-only passes.
const CHUNK: usize = 64;

fn forward_only(
    params: &ParameterSet<f32>,
    images: &[&RgbImage],
    head: impl Fn(&mut Tape<f32>, &BoundParams, Var) -> Result<Var>,
) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(CHUNK) {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false)?;
        for img in chunk {
            let x = tape.constant(image_tensor(img))?;
            let y = head(&mut tape, &p, x)?;
            out.push(tape.value(y).data().to_vec());
        }
    }
    Ok(out)
}

/// Forward-only unit embeddings.
pub fn embed_images(params: &ParameterSet<f32>, images: &[&RgbImage]) -> Result<Vec<Vec<f32>>> {
    forward_only(params, images, |t, p, x| embed(t, p, x))
}

/// Forward-only backbone features.
pub fn backbone_batch(params: &ParameterSet<f32>, images: &[&RgbImage]) -> Result<Vec<Vec<f32>>> {
    forward_only(params, images, |t, p, x| backbone(t, p, x))
}

pub fn embed_image(params: &ParameterSet<f32>, img: &RgbImage) -> Result<Vec<f32>> {
    Ok(embed_images(params, &[img])?.remove(0))
}

pub fn backbone_features(params: &ParameterSet<f32>, img: &RgbImage) -> Result<Vec<f32>> {
    Ok(backbone_batch(params, &[img])?.remove(0))
}

pub fn save_checkpoint(path: &Path, arch: &Architecture, params: &ParameterSet<f32>) -> Result<()> {
    fs::write(path, checkpoint::encode(&arch.descriptor(), params))?;
    Ok(())
}

/// Loads a checkpoint and checks it against `arch`.
pub fn load_checkpoint(path: &Path, arch: &Architecture) -> Result<ParameterSet<f32>> {
    let bytes = fs::read(path)?;
    let (descriptor, params) = checkpoint::decode::<f32>(&bytes)?;
    if descriptor != arch.descriptor() {
        return Err(Error::ArchitectureMismatch {
            expected: arch.descriptor(),
            found: descriptor,
        });
    }
    arch.check_params(&params)?;
    Ok(params)
}
