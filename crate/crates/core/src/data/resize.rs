use crate::error::{shape_err, value_err, Result};
use crate::tensor::Tensor;

use super::Rect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

fn chw(image: &Tensor) -> Result<(usize, usize, usize)> {
    match image.shape() {
        &[c, h, w] => Ok((c, h, w)),
        other => Err(shape_err!("expected a [C, H, W] image, got {other:?}")),
    }
}

/// Half-pixel-centre source coordinate and the two taps around it.
fn taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Spatial resampling of a `[C, H, W]` image to `[C, h, w]`.
///
/// Bilinear uses half-pixel centres, so resizing to the same size is exact.
pub fn resize(image: &Tensor, size: (usize, usize), interp: Interpolation) -> Result<Tensor> {
    let (c, h, w) = chw(image)?;
    let (th, tw) = size;
    if th == 0 || tw == 0 {
        return Err(value_err!("resize target {th}x{tw} has a zero extent"));
    }
    if (th, tw) == (h, w) {
        return Ok(image.clone());
    }
    let x = image.data();
    let rows: Vec<_> = (0..th).map(|y| taps(y, h, th)).collect();
    let cols: Vec<_> = (0..tw).map(|x| taps(x, w, tw)).collect();
    let mut out = Vec::with_capacity(c * th * tw);
    for ch in 0..c {
        let plane = &x[ch * h * w..][..h * w];
        for &(y0, y1, ty) in &rows {
            for &(x0, x1, tx) in &cols {
                let v = match interp {
                    Interpolation::Bilinear => {
                        let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], tx);
                        let bottom = lerp(plane[y1 * w + x0], plane[y1 * w + x1], tx);
                        lerp(top, bottom, ty)
                    }
                    Interpolation::Nearest => {
                        let yy = if ty >= 0.5 { y1 } else { y0 };
                        let xx = if tx >= 0.5 { x1 } else { x0 };
                        plane[yy * w + xx]
                    }
                };
                out.push(v);
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, th, tw], out))
}

/// Bilinear resize to `size`, then divide by 255 (clamped to `[0, 1]`).
pub fn resize_and_scale(image: &Tensor, size: (usize, usize)) -> Result<Tensor> {
    let resized = resize(image, size, Interpolation::Bilinear)?;
    resized.map(|v| (v / 255.0).clamp(0.0, 1.0))
}

/// Copies the pixels under `rect` out of a `[C, H, W]` image.
pub fn crop(image: &Tensor, rect: Rect) -> Result<Tensor> {
    let (c, h, w) = chw(image)?;
    if rect.w == 0 || rect.h == 0 || rect.right() > w || rect.bottom() > h {
        return Err(shape_err!("crop {rect:?} does not fit a {h}x{w} image"));
    }
    let x = image.data();
    let mut out = Vec::with_capacity(c * rect.w * rect.h);
    for ch in 0..c {
        for row in rect.y..rect.bottom() {
            out.extend_from_slice(&x[(ch * h + row) * w + rect.x..][..rect.w]);
        }
    }
    Ok(Tensor::from_parts(vec![c, rect.h, rect.w], out))
}
