//! Principal component analysis over the sample covariance, eigensolved by
//! cyclic Jacobi rotations.
//!
//! Two usage modes exist because published feature lists name original
//! columns while the projection formula produces components:
//! [`fit_pca`]/[`pca_transform`] implement the faithful projection
//! `Z = (X - mu) W`, and [`pca_pick`] ranks original columns by their
//! largest absolute loading across the retained components.

use serde::{Deserialize, Serialize};

use super::{
    top_k_by_score, FeatureMatrix, Reduction, SelectError, SelectionMethod, SelectionResult,
};

/// A fitted PCA: the training mean, the top-k eigenvectors (rows of
/// `components`, each of length d), and their eigenvalues in descending
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` rows of length `d`; row i is the i-th principal direction.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// `z = (x - mu) W` for one row.
    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>, SelectError> {
        if row.len() != self.mean.len() {
            return Err(SelectError::ShapeMismatch { expected: self.mean.len(), found: row.len() });
        }
        Ok(self
            .components
            .iter()
            .map(|w| w.iter().zip(row).zip(&self.mean).map(|((wi, xi), mi)| wi * (xi - mi)).sum())
            .collect())
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as rows), sorted by descending
/// eigenvalue; each eigenvector's largest-magnitude entry is made positive
/// so signs are reproducible.
pub(crate) fn jacobi_eigh(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let tol = 1e-12;
    for _sweep in 0..100 {
        let mut off_max = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off_max = off_max.max(a[p][q].abs());
            }
        }
        let scale = (0..n).map(|i| a[i][i].abs()).fold(1.0f64, f64::max);
        if off_max <= tol * scale {
            break;
        }

        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for i in 0..n {
                    let (aip, aiq) = (a[i][p], a[i][q]);
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let (apj, aqj) = (a[p][j], a[q][j]);
                    a[p][j] = c * apj - s * aqj;
                    a[q][j] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let (vip, viq) = (v[i][p], v[i][q]);
                    v[i][p] = c * vip - s * viq;
                    v[i][q] = s * vip + c * viq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap().then(i.cmp(&j)));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let mut eigenvectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&col| (0..n).map(|row| v[row][col]).collect())
        .collect();
    for vec in &mut eigenvectors {
        let lead = vec
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| {
                a.abs().partial_cmp(&b.abs()).unwrap().then(j.cmp(i))
            })
            .map(|(i, _)| i)
            .unwrap();
        if vec[lead] < 0.0 {
            for x in vec.iter_mut() {
                *x = -*x;
            }
        }
    }

    (eigenvalues, eigenvectors)
}

fn covariance(data: &FeatureMatrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = data.n_rows();
    let d = data.n_cols();
    let nf = n as f64;
    let mean: Vec<f64> =
        (0..d).map(|j| data.x.iter().map(|r| r[j]).sum::<f64>() / nf).collect();

    let mut cov = vec![vec![0.0; d]; d];
    for row in &data.x {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[i][j] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = nf - 1.0;
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= denom;
            cov[j][i] = cov[i][j];
        }
    }
    (mean, cov)
}

/// Fit the top-k projection from the sample covariance (1/(n-1)) of the
/// mean-centered data. Rank deficiency is fine: trailing eigenvalues may be
/// ~0 (they are clamped at -1e-10 against rounding).
pub fn fit_pca(data: &FeatureMatrix, k: usize) -> Result<PcaModel, SelectError> {
    let n = data.n_rows();
    let d = data.n_cols();
    if d == 0 {
        return Err(SelectError::DegenerateMatrix);
    }
    if n < 2 {
        return Err(SelectError::TooFewRows { need: 2, found: n });
    }
    if k > n.min(d) {
        return Err(SelectError::KTooLarge { k, d: n.min(d) });
    }

    let (mean, cov) = covariance(data);
    let (eigenvalues, eigenvectors) = jacobi_eigh(cov);

    let eigenvalues: Vec<f64> =
        eigenvalues.into_iter().take(k).map(|l| l.max(-1e-10)).collect();
    let components: Vec<Vec<f64>> = eigenvectors.into_iter().take(k).collect();

    Ok(PcaModel { mean, components, eigenvalues })
}

/// Fit with k chosen as the smallest count whose cumulative explained
/// variance reaches `retain` (e.g. 0.95).
pub fn fit_pca_retain(data: &FeatureMatrix, retain: f64) -> Result<PcaModel, SelectError> {
    let full = fit_pca(data, data.n_rows().min(data.n_cols()))?;
    let total: f64 = full.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    if total <= 0.0 {
        return Ok(PcaModel {
            mean: full.mean,
            components: full.components.into_iter().take(1).collect(),
            eigenvalues: full.eigenvalues.into_iter().take(1).collect(),
        });
    }
    let mut cum = 0.0;
    let mut k = full.eigenvalues.len();
    for (i, &l) in full.eigenvalues.iter().enumerate() {
        cum += l.max(0.0);
        if cum / total >= retain {
            k = i + 1;
            break;
        }
    }
    Ok(PcaModel {
        mean: full.mean,
        components: full.components.into_iter().take(k).collect(),
        eigenvalues: full.eigenvalues.into_iter().take(k).collect(),
    })
}

/// Project rows: `Z = (X - mu) W`.
pub fn pca_transform(model: &PcaModel, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, SelectError> {
    rows.iter().map(|r| model.transform_row(r)).collect()
}

/// Select original columns by PCA loadings: fit `k_components`, score each
/// column by its largest absolute loading across those components, keep the
/// top `k_pick`.
pub fn pca_pick(
    data: &FeatureMatrix,
    k_components: usize,
    k_pick: usize,
) -> Result<SelectionResult, SelectError> {
    let d = data.n_cols();
    if k_pick > d {
        return Err(SelectError::KTooLarge { k: k_pick, d });
    }
    let model = fit_pca(data, k_components.min(data.n_rows().min(d)))?;

    let scores: Vec<f64> = (0..d)
        .map(|j| model.components.iter().map(|w| w[j].abs()).fold(0.0, f64::max))
        .collect();
    let chosen = top_k_by_score(&scores, k_pick);
    let selected_names = chosen.iter().map(|&c| data.column_names[c].clone()).collect();
    Ok(SelectionResult {
        method: SelectionMethod::Pca,
        reduction: Reduction::Columns(chosen),
        scores,
        selected_names,
        params: format!("mode=pick components={} k={k_pick}", model.n_components()),
        seed: None,
    })
}

/// Wrap a fitted projection as a [`SelectionResult`].
pub fn pca_projection_result(model: PcaModel) -> SelectionResult {
    let scores: Vec<f64> = (0..model.input_dim())
        .map(|j| model.components.iter().map(|w| w[j].abs()).fold(0.0, f64::max))
        .collect();
    let params = format!("mode=project k={}", model.n_components());
    SelectionResult {
        method: SelectionMethod::Pca,
        reduction: Reduction::Projection(model),
        scores,
        selected_names: Vec::new(),
        params,
        seed: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(x: Vec<Vec<f64>>) -> FeatureMatrix {
        let d = x[0].len();
        let n = x.len();
        FeatureMatrix {
            x,
            column_names: (0..d).map(|i| format!("c{i}")).collect(),
            y: (0..n).map(|i| (i % 2) as u8).collect(),
            groups: (0..n).map(|i| format!("p{i}")).collect(),
        }
    }

    #[test]
    fn collinear_points_give_the_diagonal_direction() {
        let m = matrix(vec![vec![-1.0, -1.0], vec![0.0, 0.0], vec![1.0, 1.0]]);
        let model = fit_pca(&m, 1).unwrap();
        let w = &model.components[0];
        let inv_sqrt2 = 1.0 / 2f64.sqrt();
        assert!((w[0].abs() - inv_sqrt2).abs() < 1e-12);
        assert!((w[1].abs() - inv_sqrt2).abs() < 1e-12);
        assert!((w[0] - w[1]).abs() < 1e-12); // same sign

        // the single component captures all variance
        let full = fit_pca(&m, 2).unwrap();
        assert!(full.eigenvalues[1].abs() < 1e-12);
        assert!((full.eigenvalues[0] - 2.0).abs() < 1e-12); // var of {-sqrt2,0,sqrt2} with 1/(n-1)
    }

    #[test]
    fn transform_of_training_mean_is_zero() {
        let m = matrix(vec![vec![1.0, 5.0], vec![3.0, 1.0], vec![2.0, 3.0]]);
        let model = fit_pca(&m, 2).unwrap();
        let z = model.transform_row(&model.mean.clone()).unwrap();
        for v in z {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn full_model_is_an_isometry_after_centering() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> =
            (0..8).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let m = matrix(x);
        let model = fit_pca(&m, 3).unwrap();
        for row in &m.x {
            let centered_norm: f64 = row
                .iter()
                .zip(&model.mean)
                .map(|(x, mu)| (x - mu) * (x - mu))
                .sum::<f64>()
                .sqrt();
            let z = model.transform_row(row).unwrap();
            let z_norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((centered_norm - z_norm).abs() < 1e-9);
        }
    }

    #[test]
    fn diagonal_model_projection_arithmetic() {
        let m = matrix(vec![vec![-1.0, -1.0], vec![0.0, 0.0], vec![1.0, 1.0]]);
        let model = fit_pca(&m, 1).unwrap();
        let z = model.transform_row(&[2.0, 2.0]).unwrap();
        assert!((z[0].abs() - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn isotropic_data_has_near_equal_eigenvalues_and_orthonormal_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x: Vec<Vec<f64>> = (0..4000)
            .map(|_| {
                // Box-Muller pair: isotropic 2D Gaussian
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let r = (-2.0 * u1.ln()).sqrt();
                vec![
                    r * (2.0 * std::f64::consts::PI * u2).cos(),
                    r * (2.0 * std::f64::consts::PI * u2).sin(),
                ]
            })
            .collect();
        let m = matrix(x);
        let model = fit_pca(&m, 2).unwrap();
        let ratio = model.eigenvalues[0] / model.eigenvalues[1];
        assert!(ratio < 1.1, "eigenvalue ratio {ratio}");

        for i in 0..2 {
            for j in 0..2 {
                let dot: f64 = model.components[i]
                    .iter()
                    .zip(&model.components[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn eigenvalues_match_projected_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let m = matrix(x);
        let model = fit_pca(&m, 4).unwrap();
        let z = pca_transform(&model, &m.x).unwrap();
        let n = z.len() as f64;
        for c in 0..4 {
            let mean: f64 = z.iter().map(|r| r[c]).sum::<f64>() / n;
            let var: f64 = z.iter().map(|r| (r[c] - mean) * (r[c] - mean)).sum::<f64>() / (n - 1.0);
            assert!(
                (var - model.eigenvalues[c]).abs() < 1e-8,
                "component {c}: var {var} vs eigenvalue {}",
                model.eigenvalues[c]
            );
        }
    }

    #[test]
    fn reconstruction_with_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x: Vec<Vec<f64>> =
            (0..10).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let m = matrix(x);
        let model = fit_pca(&m, 3).unwrap();
        let z = pca_transform(&model, &m.x).unwrap();
        for (row, zr) in m.x.iter().zip(&z) {
            for j in 0..3 {
                let rebuilt: f64 = model.mean[j]
                    + (0..3).map(|c| zr[c] * model.components[c][j]).sum::<f64>();
                assert!((rebuilt - row[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let model = fit_pca(&m, 1).unwrap();
        assert!(matches!(
            model.transform_row(&[1.0, 2.0, 3.0]),
            Err(SelectError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn k_too_large_rejected() {
        let m = matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(matches!(fit_pca(&m, 3), Err(SelectError::KTooLarge { .. })));
    }

    #[test]
    fn retain_rule_keeps_enough_variance() {
        // one dominant direction plus small noise
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let t: f64 = rng.gen_range(-5.0..5.0);
                vec![
                    t + rng.gen_range(-0.01..0.01),
                    t + rng.gen_range(-0.01..0.01),
                    rng.gen_range(-0.01..0.01),
                ]
            })
            .collect();
        let m = matrix(x);
        let model = fit_pca_retain(&m, 0.95).unwrap();
        assert_eq!(model.n_components(), 1);
    }

    #[test]
    fn pick_ranks_loaded_columns_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // column 1 carries the variance, columns 0 and 2 are near-constant
        let x: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                vec![
                    rng.gen_range(-0.01..0.01),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-0.01..0.01),
                ]
            })
            .collect();
        let m = matrix(x);
        let r = pca_pick(&m, 1, 1).unwrap();
        assert_eq!(r.reduction, Reduction::Columns(vec![1]));
    }
}
