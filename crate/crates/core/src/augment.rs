//! Label-preserving image transforms and the shuffling batch generator.
//!
//! A transform is drawn per sample in fixed order: horizontal flip, vertical
//! flip, then one affine resample combining rotation, shift and zoom about
//! the image centre (bilinear, `reflect` or `constant0` fill). When every
//! draw is neutral the image is returned untouched.

use serde::{Deserialize, Serialize};

use crate::data::{Origin, Sample};
use crate::error::{shape_err, value_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    /// Mirror with the edge pixel repeated (`d c b a | a b c d`).
    #[default]
    Reflect,
    Constant0,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub rotation_max_deg: f64,
    pub shift_max_frac: f64,
    pub zoom_range: (f64, f64),
    pub fill_mode: FillMode,
}

impl Default for AugmentConfig {
    /// The settings used for the augmented model family.
    fn default() -> Self {
        Self {
            horizontal_flip: true,
            vertical_flip: true,
            rotation_max_deg: 20.0,
            shift_max_frac: 0.1,
            zoom_range: (0.9, 1.1),
            fill_mode: FillMode::Reflect,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            horizontal_flip: false,
            vertical_flip: false,
            rotation_max_deg: 0.0,
            shift_max_frac: 0.0,
            zoom_range: (1.0, 1.0),
            fill_mode: FillMode::Reflect,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rotation_max_deg >= 0.0 && self.rotation_max_deg <= 180.0) {
            return Err(value_err!(
                "rotation_max_deg must be in [0, 180], got {}",
                self.rotation_max_deg
            ));
        }
        if !(0.0..=0.5).contains(&self.shift_max_frac) {
            return Err(value_err!("shift_max_frac must be in [0, 0.5], got {}", self.shift_max_frac));
        }
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.0 && lo <= hi && hi <= 2.0) {
            return Err(value_err!("zoom_range must satisfy 0 < lo <= hi <= 2, got ({lo}, {hi})"));
        }
        Ok(())
    }
}

/// One drawn transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub flip_h: bool,
    pub flip_v: bool,
    pub angle_deg: f64,
    /// Shift in pixels (x, y).
    pub shift: (f64, f64),
    pub zoom: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        flip_h: false,
        flip_v: false,
        angle_deg: 0.0,
        shift: (0.0, 0.0),
        zoom: 1.0,
    };

    fn symmetric(max: f64, rng: &mut Rng) -> f64 {
        if max > 0.0 {
            rng.uniform_range(-max, max)
        } else {
            0.0
        }
    }

    /// Draws a transform for an `h x w` image.
    pub fn draw(cfg: &AugmentConfig, h: usize, w: usize, rng: &mut Rng) -> Self {
        let flip_h = cfg.horizontal_flip && rng.bernoulli(0.5);
        let flip_v = cfg.vertical_flip && rng.bernoulli(0.5);
        let angle_deg = Self::symmetric(cfg.rotation_max_deg, rng);
        let sx = Self::symmetric(cfg.shift_max_frac, rng) * w as f64;
        let sy = Self::symmetric(cfg.shift_max_frac, rng) * h as f64;
        let (lo, hi) = cfg.zoom_range;
        let zoom = if hi > lo { rng.uniform_range(lo, hi) } else { lo };
        Self {
            flip_h,
            flip_v,
            angle_deg,
            shift: (sx, sy),
            zoom,
        }
    }

    fn has_affine(&self) -> bool {
        self.angle_deg != 0.0 || self.shift != (0.0, 0.0) || self.zoom != 1.0
    }

    /// Applies the transform to a `[C, H, W]` image; output is clamped to `[0, 1]`.
    pub fn apply(&self, image: &Tensor, fill: FillMode) -> Result<Tensor> {
        let &[c, h, w] = image.shape() else {
            return Err(shape_err!("augmentation expects [C, H, W], got {:?}", image.shape()));
        };
        if !self.flip_h && !self.flip_v && !self.has_affine() {
            return Ok(image.clone());
        }
        let mut data = image.data().to_vec();
        if self.flip_h {
            for row in data.chunks_mut(w) {
                row.reverse();
            }
        }
        if self.flip_v {
            for plane in data.chunks_mut(h * w) {
                for y in 0..h / 2 {
                    let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
                    top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
                }
            }
        }
        if self.has_affine() {
            data = self.resample(&data, c, h, w, fill);
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Tensor::from_parts(vec![c, h, w], data))
    }

    /// Forward map on centred coordinates is `p' = zoom * (R p + shift)`;
    /// each output pixel samples the source at the inverse image.
    fn resample(&self, src: &[f64], c: usize, h: usize, w: usize, fill: FillMode) -> Vec<f64> {
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let mut out = vec![0.0; c * h * w];
        for y in 0..h {
            for x in 0..w {
                let u = (x as f64 - cx) / self.zoom - self.shift.0;
                let v = (y as f64 - cy) / self.zoom - self.shift.1;
                // inverse rotation
                let sx = cos * u + sin * v + cx;
                let sy = -sin * u + cos * v + cy;
                let x0 = sx.floor();
                let y0 = sy.floor();
                let (tx, ty) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as i64, y0 as i64);
                for ch in 0..c {
                    let plane = &src[ch * h * w..][..h * w];
                    let at = |yy: i64, xx: i64| sample(plane, h, w, yy, xx, fill);
                    let top = at(y0, x0) + (at(y0, x0 + 1) - at(y0, x0)) * tx;
                    let bottom = at(y0 + 1, x0) + (at(y0 + 1, x0 + 1) - at(y0 + 1, x0)) * tx;
                    out[(ch * h + y) * w + x] = top + (bottom - top) * ty;
                }
            }
        }
        out
    }
}

fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

fn sample(plane: &[f64], h: usize, w: usize, y: i64, x: i64, fill: FillMode) -> f64 {
    match fill {
        FillMode::Reflect => plane[reflect(y, h) * w + reflect(x, w)],
        FillMode::Constant0 => {
            if (0..h as i64).contains(&y) && (0..w as i64).contains(&x) {
                plane[y as usize * w + x as usize]
            } else {
                0.0
            }
        }
    }
}

/// Draws and applies one transform; label and origin are kept.
pub fn augment_sample(sample: &Sample, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Sample> {
    cfg.validate()?;
    let &[_, h, w] = sample.image.shape() else {
        return Err(shape_err!("augmentation expects [C, H, W], got {:?}", sample.image.shape()));
    };
    let t = Transform::draw(cfg, h, w, rng);
    Ok(Sample {
        image: t.apply(&sample.image, cfg.fill_mode)?,
        label: sample.label,
        origin: sample.origin.clone(),
    })
}

/// A stacked mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, C, H, W]`
    pub images: Tensor,
    /// `[B, 1]` with 0 = normal, 1 = polyp.
    pub labels: Tensor,
    /// Index of each row in the generator's sample list.
    pub indices: Vec<usize>,
}

/// Stacks samples into a batch tensor.
pub fn stack(samples: &[&Sample], indices: Vec<usize>) -> Result<Batch> {
    let first = samples.first().ok_or_else(|| value_err!("cannot stack an empty batch"))?;
    let shape = first.image.shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * first.image.len());
    for s in samples {
        if s.image.shape() != shape.as_slice() {
            return Err(shape_err!("sample {:?} has shape {:?}, expected {shape:?}", s.origin.id, s.image.shape()));
        }
        data.extend_from_slice(s.image.data());
    }
    let mut full = vec![samples.len()];
    full.extend_from_slice(&shape);
    let labels = samples.iter().map(|s| s.label.as_f64()).collect();
    Ok(Batch {
        images: Tensor::from_parts(full, data),
        labels: Tensor::from_parts(vec![samples.len(), 1], labels),
        indices,
    })
}

/// Yields shuffled epochs of (optionally augmented) batches.
///
/// Epoch `e` draws its permutation and augmentations from
/// `Rng::new(seed).fork(e)`, so the sequence depends only on the seed.
#[derive(Debug, Clone)]
pub struct DataGenerator {
    samples: Vec<Sample>,
    augment: Option<AugmentConfig>,
    batch_size: usize,
    master: Rng,
    epoch: u64,
}

impl DataGenerator {
    pub fn new(samples: Vec<Sample>, augment: Option<AugmentConfig>, batch_size: usize, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(value_err!("training split is empty"));
        }
        if batch_size == 0 {
            return Err(value_err!("batch_size must be >= 1"));
        }
        if let Some(cfg) = &augment {
            cfg.validate()?;
        }
        Ok(Self {
            samples,
            augment,
            batch_size,
            master: Rng::new(seed),
            epoch: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Number of epochs started so far.
    pub fn epochs_started(&self) -> u64 {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.samples.len().div_ceil(self.batch_size)
    }

    /// Starts the next epoch and returns its batch iterator.
    pub fn next_epoch(&mut self) -> Epoch<'_> {
        let mut rng = self.master.fork(self.epoch);
        self.epoch += 1;
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        rng.shuffle(&mut order);
        Epoch {
            generator: self,
            order,
            pos: 0,
            rng,
        }
    }
}

pub struct Epoch<'a> {
    generator: &'a DataGenerator,
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Iterator for Epoch<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let g = self.generator;
        let end = (self.pos + g.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let batch = match &g.augment {
            None => stack(&indices.iter().map(|&i| &g.samples[i]).collect::<Vec<_>>(), indices),
            Some(cfg) => indices
                .iter()
                .map(|&i| augment_sample(&g.samples[i], cfg, &mut self.rng))
                .collect::<Result<Vec<_>>>()
                .and_then(|aug| stack(&aug.iter().collect::<Vec<_>>(), indices)),
        };
        Some(batch)
    }
}

/// Origins of a batch, for coverage checks.
pub fn batch_origins<'a>(generator: &'a DataGenerator, batch: &Batch) -> Vec<&'a Origin> {
    batch.indices.iter().map(|&i| &generator.samples[i].origin).collect()
}
