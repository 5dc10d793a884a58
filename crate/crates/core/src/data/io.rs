//! Image/mask files, dataset discovery and the prepared-dataset manifest.
//!
//! Layout: `<root>/images/<id>.<ext>` and `<root>/masks/<id>.<ext>`, paired
//! by stem. Accepted extensions: `png`, `ppm`, `pgm`, `pnm`.
//!
//! Manifest (CSV):
//!
//! ```text
//! # polypnet manifest v1
//! # seed=42
//! # output_size=64x64
//! # root=/data/cvc
//! origin_id,crop_x,crop_y,crop_w,crop_h,label,split
//! 001,12,40,64,64,polyp,train
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{format_err, shape_err, value_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::crops::{crop_to_sample, generate_labeled_crops, CropConfig};
use super::split::{split_dataset, LabeledDataset, Split, SplitRatios};
use super::{Label, RawPair, Rect};

pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

fn image_error(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    }
}

/// Loads an image as `[C, H, W]` with values in `[0, 255]`. Gray images give
/// C = 1; everything else is converted to RGB (alpha dropped).
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (c, bytes) = if img.color().has_color() {
        (3, img.to_rgb8().into_raw())
    } else {
        (1, img.to_luma8().into_raw())
    };
    // interleaved HWC -> planar CHW
    let mut data = vec![0.0; c * h * w];
    for (i, &b) in bytes.iter().enumerate() {
        let (px, ch) = (i / c, i % c);
        data[ch * h * w + px] = f64::from(b);
    }
    Tensor::new(&[c, h, w], data)
}

/// Loads a binary mask as `[H, W]`. Pixel values must be 0, 1 or 255.
pub fn load_mask(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Vec::with_capacity(h * w);
    for &b in img.to_luma8().as_raw() {
        data.push(match b {
            0 => 0.0,
            1 | 255 => 1.0,
            v => {
                return Err(value_err!(
                    "mask {} is not binary (pixel value {v}); expected 0 and 255",
                    path.display()
                ))
            }
        });
    }
    Tensor::new(&[h, w], data)
}

/// Writes a `[C, H, W]` tensor with values in `[0, 255]` (rounded, clamped).
/// C must be 1 or 3; the encoding follows the extension.
pub fn save_image(image: &Tensor, path: &Path) -> Result<()> {
    let &[c, h, w] = image.shape() else {
        return Err(shape_err!("expected [C, H, W], got {:?}", image.shape()));
    };
    let x = image.data();
    let px = |ch: usize, i: usize| x[ch * h * w + i].round().clamp(0.0, 255.0) as u8;
    let dynamic = match c {
        1 => DynamicImage::ImageLuma8(
            GrayImage::from_raw(w as u32, h as u32, (0..h * w).map(|i| px(0, i)).collect())
                .expect("buffer size"),
        ),
        3 => DynamicImage::ImageRgb8(
            RgbImage::from_raw(
                w as u32,
                h as u32,
                (0..h * w).flat_map(|i| [px(0, i), px(1, i), px(2, i)]).collect(),
            )
            .expect("buffer size"),
        ),
        _ => return Err(shape_err!("can only save 1 or 3 channels, got {c}")),
    };
    dynamic.save(path).map_err(|e| image_error(path, e))
}

/// Writes an `[H, W]` binary mask as 0/255.
pub fn save_mask(mask: &Tensor, path: &Path) -> Result<()> {
    let &[h, w] = mask.shape() else {
        return Err(shape_err!("expected [H, W], got {:?}", mask.shape()));
    };
    save_image(&mask.scale(255.0)?.reshape(&[1, h, w])?, path)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPaths {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

fn list_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
            return Err(format_err!(
                "two files share the stem `{stem}`: {} and {}",
                prev.display(),
                path.display()
            ));
        }
    }
    Ok(out)
}

/// Pairs `images/` and `masks/` under `root` by stem, sorted by id.
pub fn discover_pairs(root: &Path) -> Result<Vec<PairPaths>> {
    let images = list_by_stem(&root.join("images"))?;
    let masks = list_by_stem(&root.join("masks"))?;
    if let Some(id) = masks.keys().find(|k| !images.contains_key(*k)) {
        return Err(format_err!("mask `{id}` has no matching image"));
    }
    let mut out = Vec::with_capacity(images.len());
    for (id, image) in images {
        let Some(mask) = masks.get(&id) else {
            return Err(format_err!("image `{id}` has no matching mask"));
        };
        out.push(PairPaths {
            id,
            image,
            mask: mask.clone(),
        });
    }
    if out.is_empty() {
        return Err(value_err!("no image/mask pairs under {}", root.display()));
    }
    Ok(out)
}

pub fn load_pair(paths: &PairPaths) -> Result<RawPair> {
    RawPair::new(load_image(&paths.image)?, load_mask(&paths.mask)?, paths.id.clone())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub origin_id: String,
    pub rect: Rect,
    pub label: Label,
    pub split: Split,
}

/// Everything needed to rebuild a [`LabeledDataset`] from the source images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub seed: u64,
    pub output_size: (usize, usize),
    pub root: Option<PathBuf>,
    pub entries: Vec<ManifestEntry>,
}

const MANIFEST_HEADER: &str = "origin_id,crop_x,crop_y,crop_w,crop_h,label,split";

impl Manifest {
    pub fn from_dataset(data: &LabeledDataset, root: Option<PathBuf>) -> Result<Self> {
        let output_size = match data.samples().first().map(|s| s.image.shape()) {
            Some(&[_, h, w]) => (h, w),
            _ => return Err(value_err!("cannot build a manifest for an empty dataset")),
        };
        let entries = data
            .iter()
            .map(|(s, split)| ManifestEntry {
                origin_id: s.origin.id.clone(),
                rect: s.origin.rect,
                label: s.label,
                split,
            })
            .collect();
        Ok(Self {
            seed: data.seed(),
            output_size,
            root,
            entries,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# polypnet manifest v1\n");
        let _ = writeln!(s, "# seed={}", self.seed);
        let _ = writeln!(s, "# output_size={}x{}", self.output_size.0, self.output_size.1);
        if let Some(root) = &self.root {
            let _ = writeln!(s, "# root={}", root.display());
        }
        s.push_str(MANIFEST_HEADER);
        s.push('\n');
        for e in &self.entries {
            let r = e.rect;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                e.origin_id, r.x, r.y, r.w, r.h, e.label, e.split
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = HashMap::new();
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut header_seen = false;
        let mut entries = Vec::new();
        for (no, line) in &mut lines {
            let line = line.trim_end_matches('\r');
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if !header_seen {
                if line != MANIFEST_HEADER {
                    return Err(format_err!("manifest line {}: expected header `{MANIFEST_HEADER}`", no + 1));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let bad = || format_err!("manifest line {}: malformed row `{line}`", no + 1);
            let [id, x, y, w, h, label, split] = fields[..] else {
                return Err(bad());
            };
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
            let rect = Rect::new(num(x)?, num(y)?, num(w)?, num(h)?);
            if rect.w == 0 || rect.h == 0 {
                return Err(bad());
            }
            entries.push(ManifestEntry {
                origin_id: id.to_string(),
                rect,
                label: Label::parse(label).ok_or_else(bad)?,
                split: split.parse().map_err(|_| bad())?,
            });
        }
        if !header_seen {
            return Err(format_err!("manifest has no header row"));
        }
        let seed = meta
            .get("seed")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err!("manifest is missing a `# seed=` comment"))?;
        let output_size = meta
            .get("output_size")
            .and_then(|s| parse_size(s).ok())
            .ok_or_else(|| format_err!("manifest is missing a `# output_size=HxW` comment"))?;
        Ok(Self {
            seed,
            output_size,
            root: meta.get("root").map(PathBuf::from),
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Re-crops every entry from the source images under `root`.
    pub fn materialize(&self, root: &Path) -> Result<LabeledDataset> {
        let by_id: HashMap<String, PairPaths> = discover_pairs(root)?
            .into_iter()
            .map(|p| (p.id.clone(), p))
            .collect();
        let mut cache: HashMap<&str, RawPair> = HashMap::new();
        let mut samples = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            if !cache.contains_key(e.origin_id.as_str()) {
                let paths = by_id
                    .get(&e.origin_id)
                    .ok_or_else(|| format_err!("manifest references missing image `{}`", e.origin_id))?;
                cache.insert(&e.origin_id, load_pair(paths)?);
            }
            let pair = &cache[e.origin_id.as_str()];
            samples.push(crop_to_sample(pair, e.rect, e.label, self.output_size)?);
        }
        let splits = self.entries.iter().map(|e| e.split).collect();
        LabeledDataset::from_parts(samples, splits, self.seed)
    }
}

/// Parses `HxW` (e.g. `64x64`).
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || value_err!("expected a size like 64x64, got `{s}`");
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

/// Crops every pair (image `i` in id order uses `Rng::new(seed).fork(i)`)
/// and splits the result with `seed`.
pub fn prepare_pairs(
    pairs: &[RawPair],
    crops: &CropConfig,
    ratios: SplitRatios,
    seed: u64,
    stratified: bool,
) -> Result<LabeledDataset> {
    let master = Rng::new(seed);
    let mut samples = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        samples.extend(generate_labeled_crops(pair, crops, &mut master.fork(i as u64))?);
    }
    split_dataset(samples, ratios, seed, stratified)
}

/// Loads every pair under `root` and runs [`prepare_pairs`].
pub fn prepare_dir(
    root: &Path,
    crops: &CropConfig,
    ratios: SplitRatios,
    seed: u64,
    stratified: bool,
) -> Result<(LabeledDataset, Manifest)> {
    let pairs = discover_pairs(root)?
        .iter()
        .map(load_pair)
        .collect::<Result<Vec<_>>>()?;
    let data = prepare_pairs(&pairs, crops, ratios, seed, stratified)?;
    let root = root.canonicalize().unwrap_or_else(|_| root.to_path_buf());
    let manifest = Manifest::from_dataset(&data, Some(root))?;
    Ok((data, manifest))
}
