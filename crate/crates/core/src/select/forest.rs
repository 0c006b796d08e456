//! Random forest for feature importance: axis-aligned threshold splits
//! chosen by Gini impurity decrease on bootstrap samples.
//!
//! Importance is mean decrease impurity: each split on feature `x_i` adds
//! its sample-weighted impurity decrease to that tree's score for `x_i`,
//! and the model importance is the arithmetic mean over trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    top_k_by_score, FeatureMatrix, Reduction, SelectError, SelectionMethod, SelectionResult,
};

/// Hyperparameters for [`train_random_forest`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for RfParams {
    fn default() -> RfParams {
        RfParams { n_trees: 200, max_depth: 8, min_leaf: 2, features_per_split: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitNode {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf { positive_fraction: f64 },
    Split(SplitNode),
}

/// One fitted tree: nodes in a flat arena, root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

/// A fitted forest with per-tree and aggregated importances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub trees: Vec<Tree>,
    /// Impurity-decrease totals per tree (rows) and feature (columns).
    pub per_tree_importance: Vec<Vec<f64>>,
    /// Mean of `per_tree_importance` over trees.
    pub importance: Vec<f64>,
    pub params: RfParams,
    pub n_features: usize,
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    params: &'a RfParams,
    features_per_split: usize,
    n_boot: usize,
    nodes: Vec<TreeNode>,
    importance: Vec<f64>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = rows.len();
        let pos = rows.iter().filter(|&&r| self.y[r] == 1).count();
        let node_gini = gini(pos, n);

        let stop = depth >= self.params.max_depth
            || n < 2 * self.params.min_leaf
            || pos == 0
            || pos == n;
        if !stop {
            if let Some((feature, threshold, decrease, left_rows, right_rows)) =
                self.best_split(&rows, node_gini, rng)
            {
                // importance credit: fraction of the bootstrap sample at this
                // node times the impurity decrease of the split
                self.importance[feature] += (n as f64 / self.n_boot as f64) * decrease;

                let idx = self.nodes.len();
                self.nodes.push(TreeNode::Leaf { positive_fraction: 0.0 }); // placeholder
                let left = self.build(left_rows, depth + 1, rng);
                let right = self.build(right_rows, depth + 1, rng);
                self.nodes[idx] = TreeNode::Split(SplitNode { feature, threshold, left, right });
                return idx;
            }
        }

        let idx = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { positive_fraction: pos as f64 / n.max(1) as f64 });
        idx
    }

    /// Best (feature, threshold) over a random feature subset; thresholds
    /// are midpoints between consecutive distinct values. Ties go to the
    /// lower feature index, then lower threshold.
    #[allow(clippy::type_complexity)]
    fn best_split(
        &self,
        rows: &[usize],
        node_gini: f64,
        rng: &mut ChaCha8Rng,
    ) -> Option<(usize, f64, f64, Vec<usize>, Vec<usize>)> {
        let d = self.x[0].len();
        let mut candidates: Vec<usize> = (0..d).collect();
        // partial Fisher-Yates, then sort for deterministic tie-breaking
        for i in 0..self.features_per_split.min(d) {
            let j = rng.gen_range(i..d);
            candidates.swap(i, j);
        }
        candidates.truncate(self.features_per_split.min(d));
        candidates.sort_unstable();

        let n = rows.len();
        let total_pos = rows.iter().filter(|&&r| self.y[r] == 1).count();

        let mut best: Option<(f64, usize, f64)> = None; // (decrease, feature, threshold)
        let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(n);
        for &f in &candidates {
            sorted.clear();
            sorted.extend(rows.iter().map(|&r| (self.x[r][f], self.y[r])));
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

            let mut left_pos = 0usize;
            for i in 0..n - 1 {
                left_pos += sorted[i].1 as usize;
                if sorted[i].0 == sorted[i + 1].0 {
                    continue;
                }
                let n_left = i + 1;
                let n_right = n - n_left;
                if n_left < self.params.min_leaf || n_right < self.params.min_leaf {
                    continue;
                }
                let g_left = gini(left_pos, n_left);
                let g_right = gini(total_pos - left_pos, n_right);
                let decrease = node_gini
                    - (n_left as f64 / n as f64) * g_left
                    - (n_right as f64 / n as f64) * g_right;
                if decrease <= 1e-15 {
                    continue;
                }
                let threshold = (sorted[i].0 + sorted[i + 1].0) / 2.0;
                let better = match best {
                    None => true,
                    Some((bd, bf, bt)) => {
                        decrease > bd || (decrease == bd && (f < bf || (f == bf && threshold < bt)))
                    }
                };
                if better {
                    best = Some((decrease, f, threshold));
                }
            }
        }

        best.map(|(decrease, feature, threshold)| {
            let (mut left, mut right) = (Vec::new(), Vec::new());
            for &r in rows {
                if self.x[r][feature] <= threshold {
                    left.push(r);
                } else {
                    right.push(r);
                }
            }
            (feature, threshold, decrease, left, right)
        })
    }
}

/// Fit a forest on bootstrap samples. Each tree draws from its own seeded
/// stream, so results are identical whether trees are built sequentially or
/// in parallel.
pub fn train_random_forest(
    data: &FeatureMatrix,
    params: &RfParams,
) -> Result<RandomForestModel, SelectError> {
    let n = data.n_rows();
    let d = data.n_cols();
    if d == 0 {
        return Err(SelectError::DegenerateMatrix);
    }
    if n < 2 {
        return Err(SelectError::TooFewRows { need: 2, found: n });
    }
    data.check_two_classes()?;

    let features_per_split =
        params.features_per_split.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).max(1);

    let mut trees = Vec::with_capacity(params.n_trees);
    let mut per_tree_importance = Vec::with_capacity(params.n_trees);
    for t in 0..params.n_trees {
        let tree_seed = params.seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);

        let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let mut builder = TreeBuilder {
            x: &data.x,
            y: &data.y,
            params,
            features_per_split,
            n_boot: n,
            nodes: Vec::new(),
            importance: vec![0.0; d],
        };
        let root = builder.build(rows, 0, &mut rng);
        debug_assert_eq!(root, 0);
        trees.push(Tree { nodes: builder.nodes });
        per_tree_importance.push(builder.importance);
    }

    let t = params.n_trees as f64;
    let importance: Vec<f64> =
        (0..d).map(|i| per_tree_importance.iter().map(|v| v[i]).sum::<f64>() / t).collect();

    Ok(RandomForestModel { trees, per_tree_importance, importance, params: *params, n_features: d })
}

/// Keep the k most important columns; ties broken by lower column index.
pub fn rf_select(model: &RandomForestModel, k: usize, data: &FeatureMatrix) -> Result<SelectionResult, SelectError> {
    if k > model.n_features {
        return Err(SelectError::KTooLarge { k, d: model.n_features });
    }
    let chosen = top_k_by_score(&model.importance, k);
    let selected_names = chosen.iter().map(|&c| data.column_names[c].clone()).collect();
    Ok(SelectionResult {
        method: SelectionMethod::Rf,
        reduction: Reduction::Columns(chosen),
        scores: model.importance.clone(),
        selected_names,
        params: format!(
            "k={k} trees={} max_depth={} min_leaf={} features_per_split={}",
            model.params.n_trees,
            model.params.max_depth,
            model.params.min_leaf,
            model.params.features_per_split.map(|v| v.to_string()).unwrap_or("sqrt".into()),
        ),
        seed: Some(model.params.seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(x: Vec<Vec<f64>>, y: Vec<u8>) -> FeatureMatrix {
        let d = x[0].len();
        FeatureMatrix {
            x,
            column_names: (0..d).map(|i| format!("c{i}")).collect(),
            y: y.clone(),
            groups: (0..y.len()).map(|i| format!("p{i}")).collect(),
        }
    }

    /// Planted dataset: y = 1 iff column 0 > 0; column 1 is seeded noise.
    fn planted(n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let signal: f64 = rng.gen_range(-1.0..1.0);
            let noise: f64 = rng.gen_range(-1.0..1.0);
            x.push(vec![signal, noise]);
            y.push(if signal > 0.0 { 1 } else { 0 });
        }
        matrix(x, y)
    }

    #[test]
    fn planted_signal_dominates_importance() {
        let mut wins = 0;
        for seed in 0..100u64 {
            let data = planted(200, 1000 + seed);
            let params = RfParams { n_trees: 50, seed, ..RfParams::default() };
            let model = train_random_forest(&data, &params).unwrap();
            if model.importance[0] > model.importance[1] {
                wins += 1;
            }
        }
        assert!(wins >= 95, "informative column won only {wins}/100 seeds");
    }

    #[test]
    fn replicated_rows_keep_the_ranking() {
        let base = planted(100, 7);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (row, label) in base.x.iter().zip(&base.y) {
            for _ in 0..3 {
                x.push(row.clone());
                y.push(*label);
            }
        }
        let data = matrix(x, y);
        let model =
            train_random_forest(&data, &RfParams { n_trees: 50, seed: 7, ..RfParams::default() })
                .unwrap();
        assert!(model.importance[0] > model.importance[1]);
    }

    #[test]
    fn single_stump_puts_all_mass_on_the_splitting_feature() {
        // y perfectly separated by col 0; col 1 constant so it can never split
        let data = matrix(
            vec![vec![-2.0, 1.0], vec![-1.0, 1.0], vec![1.0, 1.0], vec![2.0, 1.0]],
            vec![0, 0, 1, 1],
        );
        let params = RfParams {
            n_trees: 1,
            max_depth: 1,
            min_leaf: 1,
            features_per_split: Some(2),
            seed: 3,
        };
        let model = train_random_forest(&data, &params).unwrap();
        assert!(model.importance[0] > 0.0);
        assert_eq!(model.importance[1], 0.0);
    }

    #[test]
    fn eq1_mean_identity_is_exact() {
        let data = planted(80, 11);
        let model =
            train_random_forest(&data, &RfParams { n_trees: 16, seed: 5, ..RfParams::default() })
                .unwrap();
        let t = model.per_tree_importance.len() as f64;
        for i in 0..model.n_features {
            let mean = model.per_tree_importance.iter().map(|v| v[i]).sum::<f64>() / t;
            assert_eq!(model.importance[i], mean);
        }
    }

    #[test]
    fn rf_select_top_k_and_ties() {
        let data = planted(50, 2);
        let mut model =
            train_random_forest(&data, &RfParams { n_trees: 8, seed: 2, ..RfParams::default() })
                .unwrap();
        model.importance = vec![0.5, 0.3];
        let r = rf_select(&model, 2, &data).unwrap();
        assert_eq!(r.reduction, Reduction::Columns(vec![0, 1]));

        model.importance = vec![0.4, 0.4];
        let r = rf_select(&model, 1, &data).unwrap();
        assert_eq!(r.reduction, Reduction::Columns(vec![0]));

        assert!(matches!(rf_select(&model, 3, &data), Err(SelectError::KTooLarge { .. })));
    }

    #[test]
    fn planted_top_1_is_the_informative_column() {
        let data = planted(200, 31);
        let model =
            train_random_forest(&data, &RfParams { n_trees: 50, seed: 31, ..RfParams::default() })
                .unwrap();
        let r = rf_select(&model, 1, &data).unwrap();
        assert_eq!(r.reduction, Reduction::Columns(vec![0]));
    }

    #[test]
    fn single_class_and_empty_matrix_rejected() {
        let data = matrix(vec![vec![1.0], vec![2.0]], vec![1, 1]);
        assert!(matches!(
            train_random_forest(&data, &RfParams::default()),
            Err(SelectError::SingleClass)
        ));
    }

    #[test]
    fn determinism_per_seed() {
        let data = planted(60, 9);
        let params = RfParams { n_trees: 10, seed: 42, ..RfParams::default() };
        let m1 = train_random_forest(&data, &params).unwrap();
        let m2 = train_random_forest(&data, &params).unwrap();
        assert_eq!(m1.importance, m2.importance);
        assert_eq!(m1.trees, m2.trees);
    }

    /// Scaling a column by g > 0 leaves the split structure intact with
    /// thresholds scaled accordingly.
    #[test]
    fn split_structure_is_scale_equivariant() {
        let data = planted(60, 13);
        let mut scaled = data.clone();
        let g = 37.5;
        for row in &mut scaled.x {
            row[0] *= g;
        }
        let params =
            RfParams { n_trees: 5, features_per_split: Some(2), seed: 13, ..RfParams::default() };
        let m1 = train_random_forest(&data, &params).unwrap();
        let m2 = train_random_forest(&scaled, &params).unwrap();
        for (t1, t2) in m1.trees.iter().zip(&m2.trees) {
            assert_eq!(t1.nodes.len(), t2.nodes.len());
            for (n1, n2) in t1.nodes.iter().zip(&t2.nodes) {
                match (n1, n2) {
                    (TreeNode::Split(s1), TreeNode::Split(s2)) => {
                        assert_eq!(s1.feature, s2.feature);
                        let expected = if s1.feature == 0 { s1.threshold * g } else { s1.threshold };
                        assert!((s2.threshold - expected).abs() < 1e-9 * expected.abs().max(1.0));
                    }
                    (TreeNode::Leaf { positive_fraction: a }, TreeNode::Leaf { positive_fraction: b }) => {
                        assert_eq!(a, b)
                    }
                    _ => panic!("tree shapes diverged"),
                }
            }
        }
    }
}
