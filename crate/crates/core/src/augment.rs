//! Two-view stochastic augmentation: random resized crop, colour jitter,
//! grayscale, Gaussian blur and horizontal flip, plus illuminant resampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::LightingId;
use crate::image::RgbImage;
use crate::{Error, Result};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
const CROP_RATIO: [f64; 2] = [3.0 / 4.0, 4.0 / 3.0];
const CROP_ATTEMPTS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterConfig {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub probability: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        JitterConfig {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            probability: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Fraction of the source area kept by the random crop.
    pub crop_scale: [f64; 2],
    pub flip_probability: f64,
    pub jitter: JitterConfig,
    pub grayscale_probability: f64,
    pub blur_probability: f64,
    pub blur_sigma: [f64; 2],
    /// Output `[height, width]`.
    pub output_size: [usize; 2],
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_scale: [0.2, 1.0],
            flip_probability: 0.5,
            jitter: JitterConfig::default(),
            grayscale_probability: 0.2,
            blur_probability: 0.5,
            blur_sigma: [0.1, 2.0],
            output_size: [32, 32],
            seed: 0,
        }
    }
}

fn is_probability(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl AugmentConfig {
    /// Every transform disabled; `two_views` returns the source unchanged.
    pub fn identity(output_size: [usize; 2]) -> Self {
        AugmentConfig {
            crop_scale: [1.0, 1.0],
            flip_probability: 0.0,
            jitter: JitterConfig {
                probability: 0.0,
                ..JitterConfig::default()
            },
            grayscale_probability: 0.0,
            blur_probability: 0.0,
            output_size,
            ..AugmentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let j = &self.jitter;
        let probabilities = [
            self.flip_probability,
            j.probability,
            self.grayscale_probability,
            self.blur_probability,
        ];
        let [lo, hi] = self.crop_scale;
        let ok = probabilities.iter().all(|&p| is_probability(p))
            && lo > 0.0
            && lo <= hi
            && hi <= 1.0
            && [j.brightness, j.contrast, j.saturation].iter().all(|&s| (0.0..=1.0).contains(&s))
            && (0.0..=0.5).contains(&j.hue)
            && self.blur_sigma[0] > 0.0
            && self.blur_sigma[0] <= self.blur_sigma[1]
            && self.output_size.iter().all(|&n| n > 0);
        if !ok {
            return Err(Error::Config(format!("invalid augmentation config {self:?}")));
        }
        Ok(())
    }
}

/// Interleaved RGB in 0..255 floating point.
struct Buffer {
    w: usize,
    h: usize,
    px: Vec<f64>,
}

impl Buffer {
    fn from_image(img: &RgbImage) -> Self {
        Buffer {
            w: img.width(),
            h: img.height(),
            px: img.as_raw().iter().map(|&v| v as f64).collect(),
        }
    }

    fn to_image(&self) -> RgbImage {
        let data = self
            .px
            .iter()
            .map(|v| v.clamp(0.0, 255.0).round_ties_even() as u8)
            .collect();
        RgbImage::from_raw(self.w, self.h, data).expect("buffer dimensions are consistent")
    }

    fn clamp(&mut self) {
        for v in &mut self.px {
            *v = v.clamp(0.0, 255.0);
        }
    }

    fn luma(&self, i: usize) -> f64 {
        LUMA[0] * self.px[3 * i] + LUMA[1] * self.px[3 * i + 1] + LUMA[2] * self.px[3 * i + 2]
    }
}

/// Crop box `(x0, y0, w, h)` in source pixels.
fn sample_crop<R: Rng>(w: usize, h: usize, scale: [f64; 2], rng: &mut R) -> (f64, f64, f64, f64) {
    let area = (w * h) as f64;
    let (lr0, lr1) = (CROP_RATIO[0].ln(), CROP_RATIO[1].ln());
    for _ in 0..CROP_ATTEMPTS {
        let s = if scale[0] < scale[1] { rng.random_range(scale[0]..=scale[1]) } else { scale[0] };
        let ratio = rng.random_range(lr0..=lr1).exp();
        let cw = (s * area * ratio).sqrt();
        let ch = (s * area / ratio).sqrt();
        if cw <= w as f64 && ch <= h as f64 {
            let x0 = rng.random_range(0.0..=w as f64 - cw);
            let y0 = rng.random_range(0.0..=h as f64 - ch);
            return (x0, y0, cw, ch);
        }
    }
    (0.0, 0.0, w as f64, h as f64)
}

/// Bilinear resample of a box of `src` onto an `out_w` x `out_h` grid, with
/// pixel centres aligned and edges clamped.
fn resize_crop(src: &Buffer, crop: (f64, f64, f64, f64), out_w: usize, out_h: usize) -> Buffer {
    let (x0, y0, cw, ch) = crop;
    let mut px = vec![0.0; out_w * out_h * 3];
    let sample_axis = |o: usize, origin: f64, extent: f64, out: usize, limit: usize| {
        let s = origin + (o as f64 + 0.5) * extent / out as f64 - 0.5;
        let s = s.clamp(0.0, (limit - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(limit - 1);
        (i0, i1, s - i0 as f64)
    };
    for oy in 0..out_h {
        let (ya, yb, fy) = sample_axis(oy, y0, ch, out_h, src.h);
        for ox in 0..out_w {
            let (xa, xb, fx) = sample_axis(ox, x0, cw, out_w, src.w);
            for c in 0..3 {
                let at = |x: usize, y: usize| src.px[(y * src.w + x) * 3 + c];
                let top = at(xa, ya) * (1.0 - fx) + at(xb, ya) * fx;
                let bottom = at(xa, yb) * (1.0 - fx) + at(xb, yb) * fx;
                px[(oy * out_w + ox) * 3 + c] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Buffer { w: out_w, h: out_h, px }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn factor<R: Rng>(strength: f64, rng: &mut R) -> Option<f64> {
    (strength > 0.0).then(|| rng.random_range((1.0 - strength).max(0.0)..=1.0 + strength))
}

fn color_jitter<R: Rng>(buf: &mut Buffer, cfg: &JitterConfig, rng: &mut R) {
    let mut order = [0usize, 1, 2, 3];
    order.shuffle(rng);
    let n = buf.w * buf.h;
    for op in order {
        match op {
            0 => {
                if let Some(b) = factor(cfg.brightness, rng) {
                    buf.px.iter_mut().for_each(|v| *v *= b);
                }
            }
            1 => {
                if let Some(c) = factor(cfg.contrast, rng) {
                    let mean = (0..n).map(|i| buf.luma(i)).sum::<f64>() / n as f64;
                    buf.px.iter_mut().for_each(|v| *v = mean + c * (*v - mean));
                }
            }
            2 => {
                if let Some(s) = factor(cfg.saturation, rng) {
                    for i in 0..n {
                        let g = buf.luma(i);
                        for c in 0..3 {
                            let v = &mut buf.px[3 * i + c];
                            *v = g + s * (*v - g);
                        }
                    }
                }
            }
            _ => {
                if cfg.hue > 0.0 {
                    let shift = rng.random_range(-cfg.hue..=cfg.hue);
                    for i in 0..n {
                        let p = &mut buf.px[3 * i..3 * i + 3];
                        let (h, s, v) = rgb_to_hsv(p[0], p[1], p[2]);
                        let (r, g, b) = hsv_to_rgb(h + shift, s, v);
                        p.copy_from_slice(&[r, g, b]);
                    }
                }
            }
        }
        buf.clamp();
    }
}

fn grayscale(buf: &mut Buffer) {
    for i in 0..buf.w * buf.h {
        let g = buf.luma(i);
        buf.px[3 * i..3 * i + 3].fill(g);
    }
}

/// Separable Gaussian blur with reflected borders.
fn gaussian_blur(buf: &mut Buffer, sigma: f64) {
    let radius = ((3.0 * sigma).ceil() as usize).max(1);
    let kernel: Vec<f64> = {
        let raw: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let d = i as f64 - radius as f64;
                (-0.5 * d * d / (sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|k| k / total).collect()
    };
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let (w, h) = (buf.w, buf.h);
    let mut tmp = vec![0.0; buf.px.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                tmp[(y * w + x) * 3 + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| {
                        let sx = reflect(x as isize + k as isize - radius as isize, w);
                        wt * buf.px[(y * w + sx) * 3 + c]
                    })
                    .sum();
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                buf.px[(y * w + x) * 3 + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| {
                        let sy = reflect(y as isize + k as isize - radius as isize, h);
                        wt * tmp[(sy * w + x) * 3 + c]
                    })
                    .sum();
            }
        }
    }
}

/// Mirrors columns left to right.
pub fn flip_horizontal(img: &RgbImage) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.put(w - 1 - x, y, img.get(x, y));
        }
    }
    out
}

/// One augmentation draw.
pub fn augment<R: Rng>(src: &RgbImage, cfg: &AugmentConfig, rng: &mut R) -> RgbImage {
    let [out_h, out_w] = cfg.output_size;
    let base = Buffer::from_image(src);
    let crop = sample_crop(base.w, base.h, cfg.crop_scale, rng);
    let mut buf = resize_crop(&base, crop, out_w, out_h);
    if rng.random::<f64>() < cfg.jitter.probability {
        color_jitter(&mut buf, &cfg.jitter, rng);
    }
    if rng.random::<f64>() < cfg.grayscale_probability {
        grayscale(&mut buf);
    }
    if rng.random::<f64>() < cfg.blur_probability {
        let [lo, hi] = cfg.blur_sigma;
        let sigma = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        gaussian_blur(&mut buf, sigma);
    }
    let img = buf.to_image();
    if rng.random::<f64>() < cfg.flip_probability {
        flip_horizontal(&img)
    } else {
        img
    }
}

/// Two independent draws from the same source.
pub fn two_views<R: Rng>(src: &RgbImage, cfg: &AugmentConfig, rng: &mut R) -> (RgbImage, RgbImage) {
    let a = augment(src, cfg, rng);
    let b = augment(src, cfg, rng);
    (a, b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightingChoice {
    Fixed(LightingId),
    Uniform,
}

/// Picks the rendering of one pose under a drawn (or fixed) illuminant.
pub fn lighting_view<'a, R: Rng>(
    frames: &'a BTreeMap<LightingId, RgbImage>,
    choice: LightingChoice,
    rng: &mut R,
) -> Result<(LightingId, &'a RgbImage)> {
    if frames.is_empty() {
        return Err(Error::Config("no lighting variants for this pose".into()));
    }
    match choice {
        LightingChoice::Fixed(id) => frames
            .get(&id)
            .map(|img| (id, img))
            .ok_or_else(|| Error::Config(format!("lighting id {id} not rendered"))),
        LightingChoice::Uniform => {
            let k = rng.random_range(0..frames.len());
            let (id, img) = frames.iter().nth(k).expect("index in range");
            Ok((*id, img))
        }
    }
}
