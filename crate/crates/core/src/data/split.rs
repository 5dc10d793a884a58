use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{value_err, Error, Result};
use crate::rng::Rng;

use super::{Label, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(value_err!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(value_err!("split ratios must be positive, got {r:?}"));
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(value_err!("split ratios must sum to 1, got {sum}"));
        }
        Ok(())
    }
}

// Guards floor() against representation error, e.g. 0.1 * 970 = 96.99999999999999.
const FLOOR_GUARD: f64 = 1e-9;

/// Floor/floor/remainder sizes for `n` samples.
pub fn split_sizes(n: usize, ratios: SplitRatios) -> (usize, usize, usize) {
    let n_train = (ratios.train * n as f64 + FLOOR_GUARD).floor() as usize;
    let n_val = ((ratios.val * n as f64 + FLOOR_GUARD).floor() as usize).min(n - n_train);
    (n_train, n_val, n - n_train - n_val)
}

/// Largest-remainder sizes: each split gets `floor(r * n)` and the leftover
/// units go to the largest fractional parts (earlier split on ties).
fn apportion(n: usize, ratios: SplitRatios) -> [usize; 3] {
    let r = [ratios.train, ratios.val, ratios.test];
    let quota: Vec<f64> = r.iter().map(|x| x * n as f64).collect();
    let mut sizes: Vec<usize> = quota.iter().map(|q| (q + FLOOR_GUARD).floor() as usize).collect();
    let mut total: usize = sizes.iter().sum();
    while total > n {
        let i = (0..3).rev().find(|&i| sizes[i] > 0).unwrap_or(0);
        sizes[i] -= 1;
        total -= 1;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quota[a] - sizes[a] as f64;
        let fb = quota[b] - sizes[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n - total) {
        sizes[i] += 1;
    }
    [sizes[0], sizes[1], sizes[2]]
}

/// Samples in shuffled order with a split assignment per sample.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    samples: Vec<Sample>,
    splits: Vec<Split>,
    seed: u64,
}

impl LabeledDataset {
    /// Assembles a dataset from an existing assignment (e.g. a manifest).
    pub fn from_parts(samples: Vec<Sample>, splits: Vec<Split>, seed: u64) -> Result<Self> {
        if samples.len() != splits.len() {
            return Err(value_err!(
                "{} samples but {} split assignments",
                samples.len(),
                splits.len()
            ));
        }
        if let Some(first) = samples.first() {
            let size = first.image.shape();
            if let Some(s) = samples.iter().find(|s| s.image.shape() != size) {
                return Err(crate::error::shape_err!(
                    "sample from `{}` is {:?}, expected {:?}",
                    s.origin.id,
                    s.image.shape(),
                    size
                ));
            }
        }
        Ok(Self { samples, splits, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
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

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Sample, Split)> {
        self.samples.iter().zip(self.splits.iter().copied())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn subset(&self, split: Split) -> Vec<Sample> {
        self.iter()
            .filter(|(_, s)| *s == split)
            .map(|(x, _)| x.clone())
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    pub fn class_count(&self, split: Split, label: Label) -> usize {
        self.iter()
            .filter(|(x, s)| *s == split && x.label == label)
            .count()
    }
}

/// Shuffles `samples` with `seed` and assigns train/val/test.
///
/// Non-stratified sizes follow [`split_sizes`]. Stratified splits apportion
/// each class separately by largest remainder, which keeps every class
/// within one sample of its exact share in each split.
pub fn split_dataset(
    samples: Vec<Sample>,
    ratios: SplitRatios,
    seed: u64,
    stratified: bool,
) -> Result<LabeledDataset> {
    ratios.validate()?;
    let n = samples.len();
    if n < 3 {
        return Err(value_err!("need at least 3 samples to split, got {n}"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);

    let mut assign = vec![Split::Train; n];
    if stratified {
        for label in [Label::Normal, Label::Polyp] {
            let members: Vec<usize> = (0..n).filter(|&p| samples[order[p]].label == label).collect();
            let [a, b, _] = apportion(members.len(), ratios);
            for (k, &p) in members.iter().enumerate() {
                assign[p] = if k < a {
                    Split::Train
                } else if k < a + b {
                    Split::Val
                } else {
                    Split::Test
                };
            }
        }
    } else {
        let (a, b, _) = split_sizes(n, ratios);
        for (p, slot) in assign.iter_mut().enumerate() {
            *slot = if p < a {
                Split::Train
            } else if p < a + b {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    for split in Split::ALL {
        if !assign.contains(&split) {
            return Err(value_err!("{split} split is empty for {n} samples"));
        }
    }

    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let shuffled: Vec<Sample> = order.iter().map(|&i| slots[i].take().expect("permutation")).collect();
    LabeledDataset::from_parts(shuffled, assign, seed)
}
