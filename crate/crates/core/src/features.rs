//! Engineered column statistics.
//!
//! Each column is summarised by 19 global statistics over its cells. The
//! definitions are conventions and are frozen by tests:
//!
//! - character classes are Unicode general categories: *numeric* is `Nd`
//!   (decimal digit), *alphabetic* is any letter category `L*`, *special* is
//!   anything that is neither of those nor whitespace;
//! - *words* are maximal whitespace-separated runs;
//! - lengths are counted in `char`s;
//! - all means and standard deviations are population statistics;
//! - *entropy* is the base-2 Shannon entropy of the distinct-value
//!   frequency distribution;
//! - skewness is the moment coefficient g1 and kurtosis the excess g2 of the
//!   cell-length distribution; both are 0 when all lengths are equal;
//! - *fraction of cells with X* counts cells holding at least one X;
//! - the median of an even count is the mean of the two middle lengths and
//!   the mode breaks ties toward the smallest length.
//!
//! Every statistic of a degenerate column is defined, so vectors are always
//! finite.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};

pub const FEATURE_COUNT: usize = 19;

/// Feature names in vector order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "std_numeric_chars",
    "std_alpha_chars",
    "entropy",
    "std_special_chars",
    "std_words",
    "mean_words",
    "mean_numeric_chars",
    "min_value_length",
    "kurtosis_length",
    "mean_special_chars",
    "number_of_values",
    "frac_cells_alpha",
    "frac_cells_numeric",
    "sum_length",
    "max_value_length",
    "skewness_length",
    "mean_alpha_chars",
    "median_length",
    "mode_length",
];

/// Positions in a [`FeatureVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Feature {
    StdNumericChars,
    StdAlphaChars,
    Entropy,
    StdSpecialChars,
    StdWords,
    MeanWords,
    MeanNumericChars,
    MinValueLength,
    KurtosisLength,
    MeanSpecialChars,
    NumberOfValues,
    FracCellsAlpha,
    FracCellsNumeric,
    SumLength,
    MaxValueLength,
    SkewnessLength,
    MeanAlphaChars,
    MedianLength,
    ModeLength,
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot fit a scaler on zero rows")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn get(&self, f: Feature) -> f64 {
        self.0[f as usize]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<Feature> for FeatureVector {
    type Output = f64;

    fn index(&self, f: Feature) -> &f64 {
        &self.0[f as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharClass {
    Numeric,
    Alphabetic,
    Whitespace,
    Special,
}

pub fn char_class(c: char) -> CharClass {
    use GeneralCategory::*;
    if c.is_whitespace() {
        return CharClass::Whitespace;
    }
    match get_general_category(c) {
        DecimalNumber => CharClass::Numeric,
        UppercaseLetter | LowercaseLetter | TitlecaseLetter | ModifierLetter | OtherLetter => {
            CharClass::Alphabetic
        }
        _ => CharClass::Special,
    }
}

#[derive(Default, Clone, Copy)]
struct CellCounts {
    numeric: usize,
    alpha: usize,
    special: usize,
    words: usize,
    length: usize,
}

fn count_cell(cell: &str) -> CellCounts {
    let mut c = CellCounts {
        words: cell.split_whitespace().count(),
        ..Default::default()
    };
    for ch in cell.chars() {
        c.length += 1;
        match char_class(ch) {
            CharClass::Numeric => c.numeric += 1,
            CharClass::Alphabetic => c.alpha += 1,
            CharClass::Special => c.special += 1,
            CharClass::Whitespace => {}
        }
    }
    c
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population central moments 2, 3 and 4.
fn central_moments(xs: &[f64]) -> (f64, f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let m = mean(xs);
    let n = xs.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

fn std(xs: &[f64]) -> f64 {
    central_moments(xs).0.sqrt()
}

fn entropy<'a>(values: impl IntoIterator<Item = &'a str>) -> f64 {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut n = 0usize;
    for v in values {
        *counts.entry(v).or_default() += 1;
        n += 1;
    }
    // sorted so the summation order (and so the rounding) is reproducible
    let mut freqs: Vec<usize> = counts.into_values().collect();
    freqs.sort_unstable();
    freqs
        .into_iter()
        .map(|c| {
            let p = c as f64 / n as f64;
            p * (1.0 / p).log2()
        })
        .sum()
}

/// Compute the 19 statistics of one column.
pub fn extract_features<S: AsRef<str>>(values: &[S]) -> FeatureVector {
    let cells: Vec<CellCounts> = values.iter().map(|v| count_cell(v.as_ref())).collect();
    let col = |f: fn(&CellCounts) -> usize| -> Vec<f64> { cells.iter().map(|c| f(c) as f64).collect() };
    let numeric = col(|c| c.numeric);
    let alpha = col(|c| c.alpha);
    let special = col(|c| c.special);
    let words = col(|c| c.words);
    let mut lengths = col(|c| c.length);
    lengths.sort_by(f64::total_cmp);

    let n = cells.len();
    let frac = |f: fn(&CellCounts) -> usize| {
        if n == 0 {
            0.0
        } else {
            cells.iter().filter(|c| f(c) > 0).count() as f64 / n as f64
        }
    };

    let (m2, m3, m4) = central_moments(&lengths);
    let (skew, kurt) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let median = match n {
        0 => 0.0,
        _ if n % 2 == 1 => lengths[n / 2],
        _ => (lengths[n / 2 - 1] + lengths[n / 2]) / 2.0,
    };
    let mut length_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for c in &cells {
        *length_counts.entry(c.length).or_default() += 1;
    }
    // BTreeMap iterates ascending; keep the first maximum
    let mode = length_counts
        .iter()
        .fold((0usize, 0usize), |best, (&len, &cnt)| if cnt > best.1 { (len, cnt) } else { best })
        .0 as f64;

    let mut v = [0.0; FEATURE_COUNT];
    let mut set = |f: Feature, x: f64| v[f as usize] = x;
    set(Feature::StdNumericChars, std(&numeric));
    set(Feature::StdAlphaChars, std(&alpha));
    set(Feature::Entropy, entropy(values.iter().map(AsRef::as_ref)));
    set(Feature::StdSpecialChars, std(&special));
    set(Feature::StdWords, std(&words));
    set(Feature::MeanWords, mean(&words));
    set(Feature::MeanNumericChars, mean(&numeric));
    set(Feature::MinValueLength, lengths.first().copied().unwrap_or(0.0));
    set(Feature::KurtosisLength, kurt);
    set(Feature::MeanSpecialChars, mean(&special));
    set(Feature::NumberOfValues, n as f64);
    set(Feature::FracCellsAlpha, frac(|c| c.alpha));
    set(Feature::FracCellsNumeric, frac(|c| c.numeric));
    set(Feature::SumLength, lengths.iter().sum());
    set(Feature::MaxValueLength, lengths.last().copied().unwrap_or(0.0));
    set(Feature::SkewnessLength, skew);
    set(Feature::MeanAlphaChars, mean(&alpha));
    set(Feature::MedianLength, median);
    set(Feature::ModeLength, mode);
    FeatureVector(v)
}

/// Per-feature z-scoring fitted on training columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: [f64; FEATURE_COUNT],
    /// Zero deviations are stored as 1 so constant features pass through centered.
    pub std: [f64; FEATURE_COUNT],
}

impl FeatureScaler {
    /// Identity scaler (mean 0, std 1).
    pub fn identity() -> Self {
        FeatureScaler {
            mean: [0.0; FEATURE_COUNT],
            std: [1.0; FEATURE_COUNT],
        }
    }

    pub fn fit(rows: &[FeatureVector]) -> Result<Self, FeatureError> {
        if rows.is_empty() {
            return Err(FeatureError::EmptyInput);
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; FEATURE_COUNT];
        let mut std = [0.0; FEATURE_COUNT];
        for j in 0..FEATURE_COUNT {
            mean[j] = rows.iter().map(|r| r.0[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.0[j] - mean[j]).powi(2)).sum::<f64>() / n;
            std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(FeatureScaler { mean, std })
    }

    pub fn transform(&self, v: &FeatureVector) -> FeatureVector {
        FeatureVector(std::array::from_fn(|j| (v.0[j] - self.mean[j]) / self.std[j]))
    }

    pub fn inverse_transform(&self, z: &FeatureVector) -> FeatureVector {
        FeatureVector(std::array::from_fn(|j| z.0[j] * self.std[j] + self.mean[j]))
    }
}
