use serde::{Deserialize, Serialize};

use crate::error::{shape_err, value_err, Result};
use crate::rng::Rng;

use super::resize::{crop, resize_and_scale};
use super::{Label, Origin, RawPair, Rect, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropConfig {
    /// Minimum side of a polyp crop and side of every normal crop, in source pixels.
    pub crop_size: usize,
    /// Sample size `(h, w)` after resizing.
    pub output_size: (usize, usize),
    pub normals_per_image: usize,
    /// Context added to each side of a polyp bounding box, as a fraction of its extent.
    pub margin: f64,
    /// Placement attempts per requested normal crop.
    pub max_attempts: usize,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            crop_size: 64,
            output_size: (64, 64),
            normals_per_image: 1,
            margin: 0.1,
            max_attempts: 100,
        }
    }
}

impl CropConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 {
            return Err(value_err!("crop_size must be >= 1"));
        }
        if self.output_size.0 == 0 || self.output_size.1 == 0 {
            return Err(value_err!("output size {:?} has a zero extent", self.output_size));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(value_err!("margin must be >= 0, got {}", self.margin));
        }
        Ok(())
    }
}

/// Bounding boxes of the 8-connected positive regions of an `[H, W]` mask,
/// in raster order of each region's first pixel.
pub fn mask_components(mask: &crate::Tensor) -> Result<Vec<Rect>> {
    let &[h, w] = mask.shape() else {
        return Err(shape_err!("mask must be [H, W], got {:?}", mask.shape()));
    };
    let m = mask.data();
    let mut seen = vec![false; h * w];
    let mut boxes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if m[start] == 0.0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        while let Some(p) = stack.pop() {
            let (y, x) = (p / w, p % w);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let q = ny * w + nx;
                    if m[q] != 0.0 && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        boxes.push(Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1));
    }
    Ok(boxes)
}

/// Grows `[lo, hi)` by `pad` on each side, then to at least `min_len`
/// around its centre, keeping it inside `[0, extent)`.
fn grow_axis(lo: usize, hi: usize, pad: usize, min_len: usize, extent: usize) -> (usize, usize) {
    let lo = lo.saturating_sub(pad);
    let hi = (hi + pad).min(extent);
    let len = hi - lo;
    if len >= min_len {
        return (lo, hi);
    }
    let need = min_len.min(extent);
    let start = (lo + len / 2).saturating_sub(need / 2).min(extent - need);
    (start, start + need)
}

fn polyp_rect(bbox: Rect, pair: &RawPair, cfg: &CropConfig) -> Rect {
    let pad = |len: usize| (cfg.margin * len as f64).round() as usize;
    let (x0, x1) = grow_axis(bbox.x, bbox.right(), pad(bbox.w), cfg.crop_size, pair.width());
    let (y0, y1) = grow_axis(bbox.y, bbox.bottom(), pad(bbox.h), cfg.crop_size, pair.height());
    Rect::new(x0, y0, x1 - x0, y1 - y0)
}

/// Summed-area table with a zero top row and left column.
fn integral(mask: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut s = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += mask[y * w + x];
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

fn rect_sum(s: &[f64], w: usize, r: Rect) -> f64 {
    let at = |y: usize, x: usize| s[y * (w + 1) + x];
    at(r.bottom(), r.right()) - at(r.y, r.right()) - at(r.bottom(), r.x) + at(r.y, r.x)
}

/// Crops `rect` out of `pair.image`, resizes to `output_size` and scales to `[0, 1]`.
pub fn crop_to_sample(
    pair: &RawPair,
    rect: Rect,
    label: Label,
    output_size: (usize, usize),
) -> Result<Sample> {
    let image = resize_and_scale(&crop(&pair.image, rect)?, output_size)?;
    Ok(Sample {
        image,
        label,
        origin: Origin {
            id: pair.id.clone(),
            rect,
        },
    })
}

/// One polyp sample per connected mask region, then up to
/// `normals_per_image` normal samples from windows with no mask overlap.
pub fn generate_labeled_crops(pair: &RawPair, cfg: &CropConfig, rng: &mut Rng) -> Result<Vec<Sample>> {
    pair.validate()?;
    cfg.validate()?;
    let (h, w) = (pair.height(), pair.width());
    if cfg.crop_size > h || cfg.crop_size > w {
        return Err(value_err!(
            "crop_size {} exceeds image `{}` ({h}x{w})",
            cfg.crop_size,
            pair.id
        ));
    }
    let mut out = Vec::new();
    for bbox in mask_components(&pair.mask)? {
        out.push(crop_to_sample(pair, polyp_rect(bbox, pair, cfg), Label::Polyp, cfg.output_size)?);
    }

    let table = integral(pair.mask.data(), h, w);
    let c = cfg.crop_size;
    for _ in 0..cfg.normals_per_image {
        for _ in 0..cfg.max_attempts {
            let x = rng.below((w - c + 1) as u64) as usize;
            let y = rng.below((h - c + 1) as u64) as usize;
            let rect = Rect::new(x, y, c, c);
            if rect_sum(&table, w, rect) == 0.0 {
                out.push(crop_to_sample(pair, rect, Label::Normal, cfg.output_size)?);
                break;
            }
        }
    }
    Ok(out)
}
