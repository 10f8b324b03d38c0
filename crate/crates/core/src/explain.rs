//! Engineered-feature importance from the feature projection weights.
//!
//! For `W` of shape `[features, D]`, the score of feature `i` is
//! `mean_j |W[i, j]|`, normalised by the largest score. Rows are sorted by
//! score, ties by feature index. The projection bias is not used.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::ModelBundle;
use crate::features::{FEATURE_COUNT, FEATURE_NAMES};
use crate::nn::Tensor;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("feature projection has shape {found:?}, expected [{FEATURE_COUNT}, D]")]
    MissingProjection { found: Vec<usize> },
    #[error("weight matrix is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub rank: usize,
    /// Position of the feature in the input order.
    pub index: usize,
    pub feature: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub rows: Vec<ImportanceRow>,
}

/// Normalised mean absolute weight per row of `rows x cols` data.
/// Returns all zeros when every weight is zero.
pub fn importance_scores(rows: usize, cols: usize, w: &[f64]) -> Result<Vec<f64>, ExplainError> {
    if rows == 0 || cols == 0 || w.len() != rows * cols {
        return Err(ExplainError::Empty);
    }
    let means: Vec<f64> = w
        .chunks_exact(cols)
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>() / cols as f64)
        .collect();
    let max = means.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(vec![0.0; rows]);
    }
    Ok(means.into_iter().map(|m| m / max).collect())
}

/// Sorted report for a weight matrix whose rows are named by `names`.
pub fn importance_matrix(w: &Tensor, names: &[&str]) -> Result<ImportanceReport, ExplainError> {
    if w.shape().len() != 2 || w.shape()[0] != names.len() {
        return Err(ExplainError::MissingProjection {
            found: w.shape().to_vec(),
        });
    }
    let scores = importance_scores(w.shape()[0], w.shape()[1], w.data())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(ImportanceReport {
        rows: order
            .into_iter()
            .enumerate()
            .map(|(r, i)| ImportanceRow {
                rank: r + 1,
                index: i,
                feature: names[i].to_owned(),
                score: scores[i],
            })
            .collect(),
    })
}

pub fn feature_importance(bundle: &ModelBundle) -> Result<ImportanceReport, ExplainError> {
    let w = &bundle.network.params.feature_w;
    if w.shape().first() != Some(&FEATURE_COUNT) {
        return Err(ExplainError::MissingProjection {
            found: w.shape().to_vec(),
        });
    }
    importance_matrix(w, &FEATURE_NAMES)
}

impl ImportanceReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rank", "feature", "score"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([r.rank.to_string(), r.feature.clone(), format!("{:.6}", r.score)])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

impl fmt::Display for ImportanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.feature.len()).max().unwrap_or(0).max(7);
        writeln!(f, "{:>4}  {:<width$}  {:>6}", "Rank", "Feature", "Score")?;
        for r in &self.rows {
            writeln!(f, "{:>4}  {:<width$}  {:>6.3}", r.rank, r.feature, r.score)?;
        }
        Ok(())
    }
}
