//! Deterministic train/validation/test splits.

use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::rng::{self, stream};

pub type SplitRatios = [f64; 3];

pub const DEFAULT_RATIOS: SplitRatios = [0.6, 0.2, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// A split manifest. Index lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub stratified: bool,
    pub indices: SplitIndices,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DatasetSplit {
    pub fn train(&self) -> &[usize] {
        &self.indices.train
    }

    pub fn validation(&self) -> &[usize] {
        &self.indices.validation
    }

    pub fn test(&self) -> &[usize] {
        &self.indices.test
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (
            self.indices.train.len(),
            self.indices.validation.len(),
            self.indices.test.len(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        let text = serde_json::to_string_pretty(self).expect("split serializes");
        std::fs::write(path, text).map_err(|source| IngestError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| IngestError::Split(e.to_string()))
    }

    /// Check that the manifest partitions `0..n`.
    pub fn validate(&self, n: usize) -> Result<(), IngestError> {
        let mut seen = vec![false; n];
        for &i in self
            .indices
            .train
            .iter()
            .chain(&self.indices.validation)
            .chain(&self.indices.test)
        {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(IngestError::Split(format!(
                    "index {i} out of range or repeated for a dataset of {n}"
                )));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(IngestError::Split(format!(
                "split does not cover all {n} instances"
            )));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items over `ratios`; ties go to the
/// earlier split.
pub(crate) fn apportion(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    let quotas = ratios.map(|r| r * n as f64);
    let mut sizes = quotas.map(|q| (q + 1e-9).floor() as usize);
    let remainders = [0, 1, 2].map(|i| (quotas[i] - sizes[i] as f64).max(0.0));
    let mut order = [0usize, 1, 2];
    // stable sort keeps split order on equal remainders
    order.sort_by(|&a, &b| remainders[b].total_cmp(&remainders[a]));
    let assigned: usize = sizes.iter().sum();
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Build a split of `n` instances.
///
/// With `stratify_labels`, each class (and the group of unlabeled
/// instances) is shuffled and apportioned separately, so per-class
/// proportions stay within one instance of the ratios. Classes with fewer
/// than three members produce a warning since they cannot reach every split.
pub fn make_split(
    n: usize,
    ratios: SplitRatios,
    seed: u64,
    stratify_labels: Option<&[Option<usize>]>,
) -> Result<DatasetSplit, IngestError> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(IngestError::Split(format!(
            "ratios {ratios:?} must be in [0, 1] and sum to 1"
        )));
    }
    let mut groups: Vec<Vec<usize>> = match stratify_labels {
        Some(labels) => {
            if labels.len() != n {
                return Err(IngestError::Split(format!(
                    "{} labels for {n} instances",
                    labels.len()
                )));
            }
            let classes = labels.iter().flatten().max().map_or(0, |m| m + 1);
            // last group collects unlabeled instances
            let mut groups = vec![Vec::new(); classes + 1];
            for (i, l) in labels.iter().enumerate() {
                groups[l.unwrap_or(classes)].push(i);
            }
            groups
        }
        None => vec![(0..n).collect()],
    };

    let mut warnings = Vec::new();
    let mut indices = SplitIndices {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (g, members) in groups.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if stratify_labels.is_some() && members.len() < 3 {
            let msg = format!(
                "class group {g} has {} instance(s) and may miss a split",
                members.len()
            );
            warn!("{msg}");
            warnings.push(msg);
        }
        let mut rng = rng::derive(seed, &[stream::SPLIT, g as u64]);
        members.shuffle(&mut rng);
        let [a, b, _] = apportion(members.len(), &ratios);
        indices.train.extend_from_slice(&members[..a]);
        indices.validation.extend_from_slice(&members[a..a + b]);
        indices.test.extend_from_slice(&members[a + b..]);
    }
    indices.train.sort_unstable();
    indices.validation.sort_unstable();
    indices.test.sort_unstable();
    Ok(DatasetSplit {
        seed,
        ratios,
        stratified: stratify_labels.is_some(),
        indices,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Every triple summing to n whose entries are floor or ceil of the
    /// quota, ranked by total absolute deviation from the quotas; ties are
    /// resolved toward giving the extra item to the earlier split.
    fn brute_force_rounding(n: usize, ratios: &SplitRatios) -> [usize; 3] {
        let q = ratios.map(|r| r * n as f64);
        let mut best: Option<([usize; 3], f64)> = None;
        for a in 0..=n {
            for b in 0..=n - a {
                let c = n - a - b;
                let s = [a, b, c];
                if (0..3).any(|i| (s[i] as f64 - q[i]).abs() >= 1.0 - 1e-9) {
                    continue;
                }
                let dev: f64 = (0..3).map(|i| (s[i] as f64 - q[i]).abs()).sum();
                // enumeration order visits larger `a` later, so prefer later on ties
                if best.is_none_or(|(_, d)| dev <= d + 1e-12) {
                    best = Some((s, dev));
                }
            }
        }
        best.unwrap().0
    }

    #[test]
    fn sizes_follow_largest_remainder() {
        let s = make_split(10, DEFAULT_RATIOS, 7, None).unwrap();
        assert_eq!(s.sizes(), (6, 2, 2));
        let s = make_split(5, DEFAULT_RATIOS, 7, None).unwrap();
        assert_eq!(s.sizes(), (3, 1, 1));
        for n in 0..40 {
            assert_eq!(apportion(n, &DEFAULT_RATIOS), brute_force_rounding(n, &DEFAULT_RATIOS), "n={n}");
        }
        assert_eq!(apportion(4, &DEFAULT_RATIOS), [2, 1, 1]);
    }

    #[test]
    fn deterministic_and_partitioning() {
        let labels: Vec<Option<usize>> = (0..57).map(|i| Some(i % 4)).collect();
        let a = make_split(57, DEFAULT_RATIOS, 11, Some(&labels)).unwrap();
        let b = make_split(57, DEFAULT_RATIOS, 11, Some(&labels)).unwrap();
        assert_eq!(a, b);
        a.validate(57).unwrap();
        let c = make_split(57, DEFAULT_RATIOS, 12, Some(&labels)).unwrap();
        assert_ne!(a.indices, c.indices);
    }

    #[test]
    fn stratified_proportions_within_one() {
        let labels: Vec<Option<usize>> = (0..103).map(|i| Some(i % 3)).collect();
        let s = make_split(103, DEFAULT_RATIOS, 3, Some(&labels)).unwrap();
        for class in 0..3 {
            let count = |set: &[usize]| set.iter().filter(|&&i| labels[i] == Some(class)).count();
            let total = labels.iter().filter(|l| **l == Some(class)).count() as f64;
            for (set, r) in [(s.train(), 0.6), (s.validation(), 0.2), (s.test(), 0.2)] {
                assert!((count(set) as f64 - r * total).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn tiny_class_warns() {
        let labels = vec![Some(0), Some(0), Some(0), Some(1)];
        let s = make_split(4, DEFAULT_RATIOS, 1, Some(&labels)).unwrap();
        assert_eq!(s.warnings.len(), 1);
        s.validate(4).unwrap();
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(make_split(10, [0.5, 0.2, 0.2], 0, None).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        let s = make_split(20, DEFAULT_RATIOS, 5, None).unwrap();
        s.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"seed\"") && text.contains("\"ratios\"") && text.contains("\"indices\""));
        assert_eq!(DatasetSplit::load(&path).unwrap(), s);
    }
}
