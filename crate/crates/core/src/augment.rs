//! Permutation-based input construction.
//!
//! Cell values of a column have no meaningful order, so a column is never fed
//! to the model as one fixed sequence. Instead each view is an ordered
//! selection of `r` values drawn without replacement:
//!
//! - *single-sequence*: `r` is drawn uniformly from `1..=n` and the selected
//!   values are joined by [`SEPARATOR`] into one text;
//! - *multi-sequence*: `r` is a fixed slot count and every selected value is
//!   its own text input. Columns with fewer than `r` values are either padded
//!   (masked slots) or filled by drawing with replacement.
//!
//! Training draws one fresh view per column per epoch. Inference either uses
//! one full view or a vote over `k` re-drawn views.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ColumnInstance;
use crate::rng::Rng;

/// Separator marker as it appears in constructed text.
pub const SEP_MARKER: &str = "<SEP>";
/// Escaped form of a separator marker found inside a raw cell value.
pub const SEP_ESCAPED: &str = "<\\SEP>";
/// Separator between values in single-sequence text.
pub const SEPARATOR: &str = " <SEP> ";
/// Upper bound on the multi-sequence slot count.
pub const MAX_SLOTS: usize = 512;
/// Largest column `enumerate_permutations` will expand.
pub const MAX_ENUMERATE: usize = 6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AugmentError {
    #[error("refusing to enumerate permutations of {n} values (limit {MAX_ENUMERATE})")]
    TooLarge { n: usize },
    #[error("selection size {r} is invalid for {n} values")]
    InvalidR { r: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    #[default]
    Pad,
    WithReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Single,
    Multi,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingleSequenceSample {
    pub source: usize,
    /// Value indices in sequence order.
    pub selection: Vec<usize>,
    pub text: String,
}

impl SingleSequenceSample {
    pub fn r(&self) -> usize {
        self.selection.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiSequenceSample {
    pub source: usize,
    /// Value index per slot, `None` for padding.
    pub selection: Vec<Option<usize>>,
    pub texts: Vec<String>,
    pub pad_mask: Vec<bool>,
    pub mode: FillMode,
}

impl MultiSequenceSample {
    pub fn r(&self) -> usize {
        self.texts.len()
    }

    pub fn real_slots(&self) -> usize {
        self.pad_mask.iter().filter(|m| **m).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sample {
    Single(SingleSequenceSample),
    Multi(MultiSequenceSample),
}

/// Line format of the `augment` command.
#[derive(Debug, Serialize, Deserialize)]
pub struct SampleRecord {
    pub source: usize,
    pub r: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub texts: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<u8>>,
}

impl From<&Sample> for SampleRecord {
    fn from(s: &Sample) -> Self {
        match s {
            Sample::Single(s) => SampleRecord {
                source: s.source,
                r: s.r(),
                text: Some(s.text.clone()),
                texts: None,
                mask: None,
            },
            Sample::Multi(m) => SampleRecord {
                source: m.source,
                r: m.r(),
                text: None,
                texts: Some(m.texts.clone()),
                mask: Some(m.pad_mask.iter().map(|&b| b as u8).collect()),
            },
        }
    }
}

/// Join the selected values of `instance` into one single-sequence text.
pub fn single_from_selection(
    instance: &ColumnInstance,
    source: usize,
    selection: Vec<usize>,
) -> SingleSequenceSample {
    let text = selection
        .iter()
        .map(|&i| instance.values[i].as_str())
        .collect::<Vec<_>>()
        .join(SEPARATOR);
    SingleSequenceSample {
        source,
        selection,
        text,
    }
}

/// One random view: `r` uniform in `1..=n`, then a uniform `r`-permutation.
pub fn sample_single(instance: &ColumnInstance, source: usize, rng: &mut Rng) -> SingleSequenceSample {
    let n = instance.len();
    let r = rng.random_range(1..=n);
    single_from_selection(instance, source, index::sample(rng, n, r).into_vec())
}

/// A uniform `r`-permutation for a fixed `r`.
pub fn sample_permutation(
    instance: &ColumnInstance,
    source: usize,
    r: usize,
    rng: &mut Rng,
) -> Result<SingleSequenceSample, AugmentError> {
    let n = instance.len();
    if r == 0 || r > n {
        return Err(AugmentError::InvalidR { r, n });
    }
    Ok(single_from_selection(instance, source, index::sample(rng, n, r).into_vec()))
}

/// A uniform permutation of all values.
pub fn sample_full(instance: &ColumnInstance, source: usize, rng: &mut Rng) -> SingleSequenceSample {
    let n = instance.len();
    single_from_selection(instance, source, index::sample(rng, n, n).into_vec())
}

/// Every ordered selection of `r` values, in lexicographic index order.
pub fn enumerate_permutations(
    instance: &ColumnInstance,
    source: usize,
    r: usize,
) -> Result<Vec<SingleSequenceSample>, AugmentError> {
    let n = instance.len();
    if n > MAX_ENUMERATE {
        return Err(AugmentError::TooLarge { n });
    }
    if r == 0 || r > n {
        return Err(AugmentError::InvalidR { r, n });
    }
    fn extend(n: usize, r: usize, prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == r {
            out.push(prefix.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                extend(n, r, prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut selections = Vec::new();
    extend(n, r, &mut Vec::with_capacity(r), &mut vec![false; n], &mut selections);
    Ok(selections
        .into_iter()
        .map(|s| single_from_selection(instance, source, s))
        .collect())
}

fn multi_from_selection(
    instance: &ColumnInstance,
    source: usize,
    mode: FillMode,
    selection: Vec<Option<usize>>,
) -> MultiSequenceSample {
    let texts = selection
        .iter()
        .map(|s| s.map_or_else(String::new, |i| instance.values[i].clone()))
        .collect();
    let pad_mask = selection.iter().map(Option::is_some).collect();
    MultiSequenceSample {
        source,
        selection,
        texts,
        pad_mask,
        mode,
    }
}

/// Fit an ordered selection into exactly `r` slots: truncate when too long,
/// otherwise pad or top up with draws (with replacement) from the selection.
fn fill_slots(mut chosen: Vec<usize>, r: usize, mode: FillMode, rng: &mut Rng) -> Vec<Option<usize>> {
    chosen.truncate(r);
    let m = chosen.len();
    let mut slots: Vec<Option<usize>> = chosen.iter().copied().map(Some).collect();
    while slots.len() < r {
        slots.push(match mode {
            FillMode::Pad => None,
            FillMode::WithReplacement => Some(chosen[rng.random_range(0..m)]),
        });
    }
    slots
}

/// A fixed-width view with `r` slots.
///
/// With `n >= r` the slots hold `r` distinct values in random order
/// (both modes agree). With `n < r`, pad mode places all `n` values and masks
/// the rest; with-replacement mode makes `r` independent uniform draws.
pub fn sample_multi(
    instance: &ColumnInstance,
    source: usize,
    r: usize,
    mode: FillMode,
    rng: &mut Rng,
) -> MultiSequenceSample {
    debug_assert!((1..=MAX_SLOTS).contains(&r));
    let n = instance.len();
    let selection = if n >= r {
        index::sample(rng, n, r).into_iter().map(Some).collect()
    } else {
        match mode {
            FillMode::Pad => fill_slots(index::sample(rng, n, n).into_vec(), r, mode, rng),
            FillMode::WithReplacement => (0..r).map(|_| Some(rng.random_range(0..n))).collect(),
        }
    };
    multi_from_selection(instance, source, mode, selection)
}

/// Build the views used to classify one column.
///
/// `k == 1` gives one full view: every value for single-sequence models, a
/// plain [`sample_multi`] for multi-sequence models (values beyond the slot
/// count are dropped at random). `k > 1` gives `k` independent views, each
/// with its own selection size drawn from `1..=n`; multi-sequence views then
/// fit that selection into the model's slots.
pub fn inference_inputs(
    instance: &ColumnInstance,
    source: usize,
    kind: ModelKind,
    k: usize,
    slots: usize,
    mode: FillMode,
    rng: &mut Rng,
) -> Vec<Sample> {
    let n = instance.len();
    match (kind, k) {
        (_, 0) => Vec::new(),
        (ModelKind::Single, 1) => vec![Sample::Single(sample_full(instance, source, rng))],
        (ModelKind::Multi, 1) => vec![Sample::Multi(sample_multi(instance, source, slots, mode, rng))],
        (ModelKind::Single, _) => (0..k)
            .map(|_| Sample::Single(sample_single(instance, source, rng)))
            .collect(),
        (ModelKind::Multi, _) => (0..k)
            .map(|_| {
                let m = rng.random_range(1..=n);
                let chosen = index::sample(rng, n, m).into_vec();
                let selection = fill_slots(chosen, slots, mode, rng);
                Sample::Multi(multi_from_selection(instance, source, mode, selection))
            })
            .collect(),
    }
}

/// Split single-sequence text back into its values.
pub fn split_segments(text: &str) -> Vec<&str> {
    text.split(SEPARATOR).collect()
}
