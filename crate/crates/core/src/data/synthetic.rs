//! Seeded synthetic data: bright blobs on a noisy textured background.
//!
//! [`blob_dataset`] produces ready-to-train samples (blob present = polyp).
//! [`raw_pairs`] produces full-size images with masks for the crop pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{value_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{Label, Origin, RawPair, Rect, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub count: usize,
    pub size: (usize, usize),
    pub channels: usize,
    pub positive_fraction: f64,
    /// Blob radius range as a fraction of the shorter side.
    pub radius: (f64, f64),
    /// Peak blob brightness added to the background, in `[0, 1]` units.
    pub contrast: (f64, f64),
    /// Per-pixel uniform noise amplitude.
    pub noise: f64,
    /// Probability that a negative image carries a faint decoy blob.
    pub decoy_rate: f64,
    /// Decoy peak brightness range.
    pub decoy_contrast: (f64, f64),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            count: 400,
            size: (64, 64),
            channels: 3,
            positive_fraction: 0.5,
            radius: (0.08, 0.2),
            contrast: (0.25, 0.5),
            noise: 0.1,
            decoy_rate: 0.0,
            decoy_contrast: (0.05, 0.15),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi;
        if self.size.0 < 4 || self.size.1 < 4 || self.channels == 0 {
            return Err(value_err!("synthetic images need at least 4x4 pixels and one channel"));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) || !(0.0..=1.0).contains(&self.decoy_rate) {
            return Err(value_err!("synthetic fractions must lie in [0, 1]"));
        }
        if !range_ok(self.radius) || self.radius.1 > 0.5 || self.radius.1 <= 0.0 {
            return Err(value_err!("synthetic radius range {:?} is invalid", self.radius));
        }
        if !range_ok(self.contrast) || !range_ok(self.decoy_contrast) || !(self.noise >= 0.0) {
            return Err(value_err!("synthetic contrast/noise settings are invalid"));
        }
        Ok(())
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    radius: f64,
    peak: f64,
}

impl Blob {
    fn random(h: usize, w: usize, radius: (f64, f64), peak: (f64, f64), rng: &mut Rng) -> Self {
        let side = h.min(w) as f64;
        let radius = side * draw(radius, rng);
        // keep the blob centre at least one radius from the border
        let cx = radius + (w as f64 - 2.0 * radius).max(0.0) * rng.uniform();
        let cy = radius + (h as f64 - 2.0 * radius).max(0.0) * rng.uniform();
        Self {
            cx,
            cy,
            radius,
            peak: draw(peak, rng),
        }
    }

    /// Smooth disc profile: flat core, cosine falloff over the outer third.
    fn at(&self, x: f64, y: f64) -> f64 {
        let d = ((x - self.cx).powi(2) + (y - self.cy).powi(2)).sqrt() / self.radius;
        if d <= 2.0 / 3.0 {
            self.peak
        } else if d < 1.0 {
            self.peak * 0.5 * (1.0 + (std::f64::consts::PI * (d - 2.0 / 3.0) * 3.0).cos())
        } else {
            0.0
        }
    }
}

fn draw((lo, hi): (f64, f64), rng: &mut Rng) -> f64 {
    if hi > lo {
        rng.uniform_range(lo, hi)
    } else {
        lo
    }
}

/// Background in `[0, 1]`: per-channel tint, a linear shading gradient and uniform noise.
fn background(c: usize, h: usize, w: usize, noise: f64, rng: &mut Rng) -> Vec<f64> {
    let base = rng.uniform_range(0.2, 0.45);
    let tint: Vec<f64> = (0..c).map(|_| rng.uniform_range(0.8, 1.0)).collect();
    let (gx, gy) = (rng.uniform_range(-0.1, 0.1), rng.uniform_range(-0.1, 0.1));
    let mut out = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let shade = base + gx * (x as f64 / w as f64 - 0.5) + gy * (y as f64 / h as f64 - 0.5);
            for ch in 0..c {
                let n = if noise > 0.0 { rng.uniform_range(-noise, noise) } else { 0.0 };
                out[(ch * h + y) * w + x] = shade * tint[ch] + n;
            }
        }
    }
    out
}

fn paint(img: &mut [f64], c: usize, h: usize, w: usize, blob: &Blob) {
    let x0 = (blob.cx - blob.radius).floor().max(0.0) as usize;
    let x1 = ((blob.cx + blob.radius).ceil() as usize).min(w);
    let y0 = (blob.cy - blob.radius).floor().max(0.0) as usize;
    let y1 = ((blob.cy + blob.radius).ceil() as usize).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            let v = blob.at(x as f64 + 0.5, y as f64 + 0.5);
            for ch in 0..c {
                img[(ch * h + y) * w + x] += v;
            }
        }
    }
}

/// `count` samples of size `[channels, h, w]` in `[0, 1]`. Exactly
/// `round(count * positive_fraction)` of them contain a bright blob; the
/// order is shuffled. Sample `i` has origin id `synth-{i:05}`.
pub fn blob_dataset(cfg: &SyntheticConfig, seed: u64) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let (h, w) = cfg.size;
    let c = cfg.channels;
    let n_pos = (cfg.count as f64 * cfg.positive_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..cfg.count)
        .map(|i| if i < n_pos { Label::Polyp } else { Label::Normal })
        .collect();
    let master = Rng::new(seed);
    master.fork(u64::MAX).shuffle(&mut labels);

    let mut out = Vec::with_capacity(cfg.count);
    for (i, &label) in labels.iter().enumerate() {
        let mut rng = master.fork(i as u64);
        let mut img = background(c, h, w, cfg.noise, &mut rng);
        let blob = match label {
            Label::Polyp => Some(Blob::random(h, w, cfg.radius, cfg.contrast, &mut rng)),
            Label::Normal if rng.bernoulli(cfg.decoy_rate) => {
                Some(Blob::random(h, w, cfg.radius, cfg.decoy_contrast, &mut rng))
            }
            Label::Normal => None,
        };
        if let Some(b) = &blob {
            paint(&mut img, c, h, w, b);
        }
        for v in &mut img {
            *v = v.clamp(0.0, 1.0);
        }
        out.push(Sample {
            image: Tensor::new(&[c, h, w], img)?,
            label,
            origin: Origin {
                id: format!("synth-{i:05}"),
                rect: Rect::new(0, 0, w, h),
            },
        });
    }
    Ok(out)
}

/// `count` full-size image/mask pairs (values in `[0, 255]`). Each image
/// carries 0 to 2 blobs; the mask marks every pixel within a blob's radius.
pub fn raw_pairs(cfg: &SyntheticConfig, seed: u64) -> Result<Vec<RawPair>> {
    cfg.validate()?;
    let (h, w) = cfg.size;
    let c = cfg.channels;
    let master = Rng::new(seed);
    let mut out = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let mut rng = master.fork(i as u64);
        let mut img = background(c, h, w, cfg.noise, &mut rng);
        let n_blobs = if rng.bernoulli(cfg.positive_fraction) {
            1 + rng.below(2) as usize
        } else {
            0
        };
        let mut mask = vec![0.0; h * w];
        for _ in 0..n_blobs {
            let blob = Blob::random(h, w, cfg.radius, cfg.contrast, &mut rng);
            paint(&mut img, c, h, w, &blob);
            for y in 0..h {
                for x in 0..w {
                    if blob.at(x as f64 + 0.5, y as f64 + 0.5) > 0.0 {
                        mask[y * w + x] = 1.0;
                    }
                }
            }
        }
        let img: Vec<f64> = img.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round()).collect();
        out.push(RawPair::new(
            Tensor::new(&[c, h, w], img)?,
            Tensor::new(&[h, w], mask)?,
            format!("synth{i:04}"),
        )?);
    }
    Ok(out)
}
