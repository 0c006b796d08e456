//! Feature selection and dimensionality reduction: random-forest importance
//! ranking, PCA, and Pearson top-k correlation against the label.
//!
//! All three paths fit on training rows only and produce a
//! [`SelectionResult`] that can be re-applied to unseen rows, either as a
//! column subset or as a linear projection.

mod forest;
mod pca;

pub use forest::{rf_select, train_random_forest, RandomForestModel, RfParams, SplitNode, TreeNode};
pub use pca::{fit_pca, fit_pca_retain, pca_pick, pca_projection_result, pca_transform, PcaModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::FeatureVector;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("feature matrix has no columns")]
    DegenerateMatrix,
    #[error("k = {k} exceeds available dimensions {d}")]
    KTooLarge { k: usize, d: usize },
    #[error("shape mismatch: expected {expected} columns, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("need at least {need} rows, found {found}")]
    TooFewRows { need: usize, found: usize },
}

/// Row-major feature matrix with labels and patient groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub x: Vec<Vec<f64>>,
    pub column_names: Vec<String>,
    /// Binary labels, positive = 1.
    pub y: Vec<u8>,
    /// Patient id per row.
    pub groups: Vec<String>,
}

impl FeatureMatrix {
    /// Assemble labeled vectors (identical layouts) into a matrix,
    /// rejecting non-finite values.
    pub fn from_vectors(vectors: &[FeatureVector]) -> Result<FeatureMatrix, SelectError> {
        if vectors.is_empty() {
            return Err(SelectError::TooFewRows { need: 1, found: 0 });
        }
        let layout = &vectors[0].layout;
        if layout.is_empty() {
            return Err(SelectError::DegenerateMatrix);
        }
        let column_names = layout.iter().map(|&e| crate::stats::entry_name(e)).collect();

        let mut x = Vec::with_capacity(vectors.len());
        let mut y = Vec::with_capacity(vectors.len());
        let mut groups = Vec::with_capacity(vectors.len());
        for (row, v) in vectors.iter().enumerate() {
            if v.layout != *layout {
                return Err(SelectError::ShapeMismatch {
                    expected: layout.len(),
                    found: v.layout.len(),
                });
            }
            for (col, &val) in v.values.iter().enumerate() {
                if !val.is_finite() {
                    return Err(SelectError::NonFinite { row, col });
                }
            }
            x.push(v.values.clone());
            y.push(v.label.map(|l| l.as_u8()).unwrap_or(0));
            groups.push(v.patient_id.clone());
        }
        Ok(FeatureMatrix { x, column_names, y, groups })
    }

    pub fn n_rows(&self) -> usize {
        self.x.len()
    }

    pub fn n_cols(&self) -> usize {
        self.x.first().map(Vec::len).unwrap_or(0)
    }

    /// View of the given rows as a new matrix (used for fold splits).
    pub fn subset(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            x: rows.iter().map(|&r| self.x[r].clone()).collect(),
            column_names: self.column_names.clone(),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            groups: rows.iter().map(|&r| self.groups[r].clone()).collect(),
        }
    }

    fn check_two_classes(&self) -> Result<(), SelectError> {
        let has_pos = self.y.iter().any(|&v| v == 1);
        let has_neg = self.y.iter().any(|&v| v == 0);
        if has_pos && has_neg {
            Ok(())
        } else {
            Err(SelectError::SingleClass)
        }
    }
}

/// How a [`SelectionResult`] maps original columns to model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Reduction {
    /// Keep these original columns, in ascending index order.
    Columns(Vec<usize>),
    /// Project rows with a fitted PCA model.
    Projection(PcaModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    None,
    Rf,
    Pca,
    Correlation,
}

impl SelectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMethod::None => "none",
            SelectionMethod::Rf => "rf",
            SelectionMethod::Pca => "pca",
            SelectionMethod::Correlation => "correlation",
        }
    }
}

/// A fitted selection: the method, its per-column scores, and the chosen
/// reduction. Serializable so runs can be archived and re-applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    pub reduction: Reduction,
    /// Score per original column (importance, max |loading|, or |rho|).
    pub scores: Vec<f64>,
    /// Names of the chosen columns (empty for projections).
    pub selected_names: Vec<String>,
    /// Free-form parameter description for the archive file.
    pub params: String,
    pub seed: Option<u64>,
}

impl SelectionResult {
    /// Identity selection that keeps every column.
    pub fn identity(d: usize, names: &[String]) -> SelectionResult {
        SelectionResult {
            method: SelectionMethod::None,
            reduction: Reduction::Columns((0..d).collect()),
            scores: vec![0.0; d],
            selected_names: names.to_vec(),
            params: String::new(),
            seed: None,
        }
    }

    /// Dimension of the reduced representation.
    pub fn output_dim(&self) -> usize {
        match &self.reduction {
            Reduction::Columns(cols) => cols.len(),
            Reduction::Projection(m) => m.n_components(),
        }
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>, SelectError> {
        match &self.reduction {
            Reduction::Columns(cols) => {
                if let Some(&bad) = cols.iter().find(|&&c| c >= row.len()) {
                    return Err(SelectError::ShapeMismatch { expected: bad + 1, found: row.len() });
                }
                Ok(cols.iter().map(|&c| row[c]).collect())
            }
            Reduction::Projection(m) => m.transform_row(row),
        }
    }

    pub fn apply_matrix(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, SelectError> {
        rows.iter().map(|r| self.apply_row(r)).collect()
    }
}

/// PCA width choice for the projection mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PcaComponents {
    Fixed(usize),
    /// Smallest k reaching this cumulative explained-variance fraction.
    Retain(f64),
}

/// A full description of one selection path, fit-able on any training
/// matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SelectionSpec {
    None,
    Rf { k: usize, params: RfParams },
    PcaProject { components: PcaComponents },
    PcaPick { components: usize, k: usize },
    Correlation { k: usize },
}

impl SelectionSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionSpec::None => "none",
            SelectionSpec::Rf { .. } => "rf",
            SelectionSpec::PcaProject { .. } | SelectionSpec::PcaPick { .. } => "pca",
            SelectionSpec::Correlation { .. } => "correlation",
        }
    }
}

/// Fit the described selection on (training) data.
pub fn fit_selection(
    data: &FeatureMatrix,
    spec: &SelectionSpec,
) -> Result<SelectionResult, SelectError> {
    match spec {
        SelectionSpec::None => Ok(SelectionResult::identity(data.n_cols(), &data.column_names)),
        SelectionSpec::Rf { k, params } => {
            let model = train_random_forest(data, params)?;
            rf_select(&model, *k, data)
        }
        SelectionSpec::PcaProject { components } => {
            let model = match components {
                PcaComponents::Fixed(k) => fit_pca(data, (*k).min(data.n_rows().min(data.n_cols())))?,
                PcaComponents::Retain(r) => fit_pca_retain(data, *r)?,
            };
            Ok(pca_projection_result(model))
        }
        SelectionSpec::PcaPick { components, k } => pca_pick(data, *components, *k),
        SelectionSpec::Correlation { k } => correlation_select(data, *k),
    }
}

/// Per-column z-score transform fit on training rows. Zero-variance
/// columns keep scale 1 so they pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Standardizer {
        let n = rows.len().max(1) as f64;
        let d = rows.first().map(Vec::len).unwrap_or(0);
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..d)
            .map(|j| {
                let v = rows.iter().map(|r| (r[j] - mean[j]) * (r[j] - mean[j])).sum::<f64>() / n;
                let s = v.sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>, SelectError> {
        if row.len() != self.mean.len() {
            return Err(SelectError::ShapeMismatch { expected: self.mean.len(), found: row.len() });
        }
        Ok(row.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect())
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, SelectError> {
        rows.iter().map(|r| self.apply_row(r)).collect()
    }
}

/// Indices of the k largest scores, ties broken by lower column index.
/// Returned sorted ascending so downstream column order is stable.
pub(crate) fn top_k_by_score(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = order.into_iter().take(k).collect();
    chosen.sort_unstable();
    chosen
}

/// Pearson correlation ranking against the labels: `rho = cov(x, y) /
/// (sigma_x * sigma_y)` with population moments, ranked by `|rho|`
/// descending. Zero-variance columns score 0. Defaults to the top eight.
pub fn correlation_select(data: &FeatureMatrix, k: usize) -> Result<SelectionResult, SelectError> {
    let d = data.n_cols();
    let n = data.n_rows();
    if d == 0 {
        return Err(SelectError::DegenerateMatrix);
    }
    if k > d {
        return Err(SelectError::KTooLarge { k, d });
    }
    data.check_two_classes()?;

    let nf = n as f64;
    let y: Vec<f64> = data.y.iter().map(|&v| v as f64).collect();
    let y_mean = y.iter().sum::<f64>() / nf;
    let y_var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / nf;
    let y_std = y_var.sqrt();
    if y_std == 0.0 {
        return Err(SelectError::SingleClass);
    }

    let mut scores = vec![0.0; d];
    for j in 0..d {
        let col: Vec<f64> = data.x.iter().map(|r| r[j]).collect();
        let x_mean = col.iter().sum::<f64>() / nf;
        let x_var = col.iter().map(|v| (v - x_mean) * (v - x_mean)).sum::<f64>() / nf;
        if x_var <= 0.0 {
            continue;
        }
        let cov = col.iter().zip(&y).map(|(x, yv)| (x - x_mean) * (yv - y_mean)).sum::<f64>() / nf;
        scores[j] = (cov / (x_var.sqrt() * y_std)).abs();
    }

    let chosen = top_k_by_score(&scores, k);
    let selected_names = chosen.iter().map(|&c| data.column_names[c].clone()).collect();
    Ok(SelectionResult {
        method: SelectionMethod::Correlation,
        reduction: Reduction::Columns(chosen),
        scores,
        selected_names,
        params: format!("k={k}"),
        seed: None,
    })
}

/// Signed Pearson correlation of one column against the labels; used by the
/// report plots.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let va = a.iter().map(|v| (v - ma) * (v - ma)).sum::<f64>() / n;
    let vb = b.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>() / n;
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
    cov / (va.sqrt() * vb.sqrt())
}
