//! Turning colonoscopy images and their ground-truth masks into labeled,
//! scaled, split samples.

mod crops;
pub mod io;
mod resize;
mod split;
pub mod synthetic;

pub use crops::{crop_to_sample, generate_labeled_crops, mask_components, CropConfig};
pub use resize::{crop, resize, resize_and_scale, Interpolation};
pub use split::{split_dataset, split_sizes, LabeledDataset, Split, SplitRatios};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, value_err, Result};
use crate::tensor::Tensor;

/// Class label; polyp is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Polyp,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Normal => 0.0,
            Label::Polyp => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Polyp => "polyp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "normal" | "0" => Some(Label::Normal),
            "polyp" | "1" => Some(Label::Polyp),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned pixel rectangle `[x, x+w) x [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.x <= other.x
            && self.y <= other.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }
}

/// Where a sample came from: source image id and crop rectangle.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Origin {
    pub id: String,
    pub rect: Rect,
}

/// One classifier input: a `[C, h, w]` image scaled to `[0, 1]` and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: Label,
    pub origin: Origin,
}

/// A source image (`[C, H, W]`, values in `[0, 255]`) and its binary mask (`[H, W]`).
#[derive(Debug, Clone)]
pub struct RawPair {
    pub image: Tensor,
    pub mask: Tensor,
    pub id: String,
}

impl RawPair {
    pub fn new(image: Tensor, mask: Tensor, id: impl Into<String>) -> Result<Self> {
        let pair = Self {
            image,
            mask,
            id: id.into(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn height(&self) -> usize {
        self.mask.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.mask.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let &[_, h, w] = self.image.shape() else {
            return Err(shape_err!(
                "image `{}` must be [C, H, W], got {:?}",
                self.id,
                self.image.shape()
            ));
        };
        if self.mask.shape() != [h, w] {
            return Err(shape_err!(
                "mask of `{}` is {:?} but the image is {h}x{w}",
                self.id,
                self.mask.shape()
            ));
        }
        if let Some(v) = self.mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(value_err!("mask of `{}` is not binary (found {v})", self.id));
        }
        Ok(())
    }
}
