//! From-scratch CART decision trees and bootstrap-aggregated forests.
//!
//! Splits minimize weighted Gini impurity over a random feature subset, with
//! candidate thresholds at midpoints between consecutive sorted values. Ties
//! resolve to the lower feature index, then the lower threshold.

use super::LearnError;
use crate::rng::{derived_rng, TAG_BOOTSTRAP};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub features_per_split: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 8,
            // floor(sqrt(13))
            features_per_split: 3,
            min_leaf: 1,
            bootstrap: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feat: usize,
        thresh: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        leaf_prob: f64,
    },
}

impl TreeNode {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { leaf_prob } => *leaf_prob,
            TreeNode::Split {
                feat,
                thresh,
                left,
                right,
            } => {
                if row[*feat] <= *thresh {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }

    pub fn max_depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.max_depth().max(right.max_depth()),
        }
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

pub struct SplitChoice {
    pub feat: usize,
    pub thresh: f64,
    /// Weighted child impurity of the chosen split.
    pub impurity: f64,
}

/// Best (feature, midpoint) split of `rows` over `candidates`, by minimum
/// weighted Gini. Exposed so tests can compare against an exhaustive oracle.
pub fn best_split(
    x: &[Vec<f64>],
    y: &[bool],
    rows: &[usize],
    candidates: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = rows.len();
    let total_pos = rows.iter().filter(|&&r| y[r]).count();
    let mut best: Option<SplitChoice> = None;
    let mut sorted: Vec<(f64, bool)> = Vec::with_capacity(n);
    for &feat in candidates {
        sorted.clear();
        sorted.extend(rows.iter().map(|&r| (x[r][feat], y[r])));
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut left_n = 0usize;
        let mut left_pos = 0usize;
        for i in 0..n - 1 {
            left_n += 1;
            left_pos += sorted[i].1 as usize;
            if sorted[i].0 == sorted[i + 1].0 {
                continue;
            }
            let right_n = n - left_n;
            if left_n < min_leaf || right_n < min_leaf {
                continue;
            }
            let right_pos = total_pos - left_pos;
            let impurity = (left_n as f64 * gini(left_pos, left_n)
                + right_n as f64 * gini(right_pos, right_n))
                / n as f64;
            let thresh = (sorted[i].0 + sorted[i + 1].0) / 2.0;
            let better = match &best {
                None => true,
                Some(b) => impurity < b.impurity,
            };
            if better {
                best = Some(SplitChoice {
                    feat,
                    thresh,
                    impurity,
                });
            }
        }
    }
    best
}

/// Draw `m` distinct feature indices, returned sorted ascending.
fn sample_features(rng: &mut ChaCha8Rng, n_features: usize, m: usize) -> Vec<usize> {
    let m = m.min(n_features);
    let mut idx: Vec<usize> = (0..n_features).collect();
    for i in 0..m {
        let j = rng.gen_range(i..n_features);
        idx.swap(i, j);
    }
    idx.truncate(m);
    idx.sort_unstable();
    idx
}

fn build_node(
    x: &[Vec<f64>],
    y: &[bool],
    rows: &[usize],
    depth: usize,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
    n_root: usize,
    importance: Option<&mut [f64]>,
) -> TreeNode {
    let n = rows.len();
    let pos = rows.iter().filter(|&&r| y[r]).count();
    let leaf = || TreeNode::Leaf {
        leaf_prob: pos as f64 / n as f64,
    };
    if depth >= params.max_depth || pos == 0 || pos == n || n < 2 * params.min_leaf {
        return leaf();
    }
    let candidates = sample_features(rng, x[0].len(), params.features_per_split);
    let Some(split) = best_split(x, y, rows, &candidates, params.min_leaf) else {
        return leaf();
    };
    let node_gini = gini(pos, n);
    let mut importance = importance;
    if let Some(acc) = importance.as_deref_mut() {
        acc[split.feat] += n as f64 / n_root as f64 * (node_gini - split.impurity);
    }
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&r| x[r][split.feat] <= split.thresh);
    let left = build_node(
        x,
        y,
        &left_rows,
        depth + 1,
        params,
        rng,
        n_root,
        importance.as_deref_mut(),
    );
    let right = build_node(
        x,
        y,
        &right_rows,
        depth + 1,
        params,
        rng,
        n_root,
        importance.as_deref_mut(),
    );
    TreeNode::Split {
        feat: split.feat,
        thresh: split.thresh,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Train a single tree on the given rows. Deterministic given the RNG state.
pub fn train_tree(
    x: &[Vec<f64>],
    y: &[bool],
    rows: &[usize],
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
    importance: Option<&mut [f64]>,
) -> Result<TreeNode, LearnError> {
    if rows.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    Ok(build_node(x, y, rows, 0, params, rng, rows.len(), importance))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
}

impl Forest {
    /// Fraction of trees voting positive for `row`.
    pub fn score(&self, row: &[f64]) -> f64 {
        let votes = self
            .trees
            .iter()
            .filter(|t| t.predict(row) >= 0.5)
            .count();
        votes as f64 / self.trees.len() as f64
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(|t| t.max_depth()).max().unwrap_or(0)
    }
}

/// A trained forest plus, per tree, the in-bag flag for every training row.
pub struct TrainedForest {
    pub forest: Forest,
    pub in_bag: Vec<Vec<bool>>,
}

impl TrainedForest {
    /// Out-of-bag vote fraction per row; `None` when a row was in every bag.
    pub fn oob_scores(&self, x: &[Vec<f64>]) -> Vec<Option<f64>> {
        (0..x.len())
            .map(|r| {
                let mut votes = 0usize;
                let mut total = 0usize;
                for (tree, bag) in self.forest.trees.iter().zip(&self.in_bag) {
                    if !bag[r] {
                        total += 1;
                        votes += (tree.predict(&x[r]) >= 0.5) as usize;
                    }
                }
                (total > 0).then(|| votes as f64 / total as f64)
            })
            .collect()
    }
}

/// Train `params.n_trees` trees, each on a bootstrap resample. Tree `i`
/// derives its own RNG stream from `(params.seed, i)`, so the result is
/// independent of thread count.
pub fn train_forest(x: &[Vec<f64>], y: &[bool], params: &ForestParams) -> Result<TrainedForest, LearnError> {
    if x.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let pos = y.iter().filter(|&&b| b).count();
    if pos == 0 || pos == y.len() {
        return Err(LearnError::SingleClassDataset);
    }
    let n = x.len();
    let results: Vec<(TreeNode, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(params.seed, TAG_BOOTSTRAP, i as u64);
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut bag = vec![false; n];
            for &r in &rows {
                bag[r] = true;
            }
            let tree = train_tree(x, y, &rows, params, &mut rng, None).expect("non-empty rows");
            (tree, bag)
        })
        .collect();
    let (trees, in_bag) = results.into_iter().unzip();
    Ok(TrainedForest {
        forest: Forest { trees },
        in_bag,
    })
}

/// Mean impurity-decrease importance per feature over an `n_estimators`-tree
/// forest, normalized to sum 1.
pub fn feature_importance(
    x: &[Vec<f64>],
    y: &[bool],
    n_estimators: usize,
    seed: u64,
) -> Result<Vec<f64>, LearnError> {
    if x.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let pos = y.iter().filter(|&&b| b).count();
    if pos == 0 || pos == y.len() {
        return Err(LearnError::SingleClassDataset);
    }
    let n = x.len();
    let n_features = x[0].len();
    let params = ForestParams {
        n_trees: n_estimators,
        seed,
        ..ForestParams::default()
    };
    let per_tree: Vec<Vec<f64>> = (0..n_estimators)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(seed, TAG_BOOTSTRAP, i as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut acc = vec![0.0; n_features];
            train_tree(x, y, &rows, &params, &mut rng, Some(&mut acc)).expect("non-empty rows");
            acc
        })
        .collect();
    let mut mean = vec![0.0; n_features];
    for tree_acc in &per_tree {
        for (m, v) in mean.iter_mut().zip(tree_acc) {
            *m += v / n_estimators as f64;
        }
    }
    let total: f64 = mean.iter().sum();
    if total > 0.0 {
        for m in &mut mean {
            *m /= total;
        }
    } else {
        mean.fill(1.0 / n_features as f64);
    }
    Ok(mean)
}

/// Feature indices ranked by descending importance; ties break to the lower
/// index.
pub fn rank_features(importances: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..importances.len()).collect();
    idx.sort_by(|&a, &b| {
        importances[b]
            .partial_cmp(&importances[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derived_rng;

    fn separable_rows(n: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
        let x: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![i as f64, (i * 7 % 13) as f64, (i * 3 % 5) as f64])
            .collect();
        let y: Vec<bool> = (0..n).map(|i| (i as f64) < 10.0).collect();
        (x, y)
    }

    #[test]
    fn one_row_gives_single_leaf() {
        let x = vec![vec![1.0, 2.0]];
        let y = vec![true];
        let mut rng = derived_rng(1, TAG_BOOTSTRAP, 0);
        let tree = train_tree(&x, &y, &[0], &ForestParams::default(), &mut rng, None).unwrap();
        assert_eq!(tree, TreeNode::Leaf { leaf_prob: 1.0 });
    }

    #[test]
    fn separable_by_one_feature_trains_to_perfect_accuracy() {
        let (x, y) = separable_rows(20);
        let rows: Vec<usize> = (0..20).collect();
        let mut rng = derived_rng(3, TAG_BOOTSTRAP, 0);
        let params = ForestParams {
            features_per_split: 3,
            ..ForestParams::default()
        };
        let tree = train_tree(&x, &y, &rows, &params, &mut rng, None).unwrap();
        for (row, &label) in x.iter().zip(&y) {
            assert_eq!(tree.predict(row) >= 0.5, label);
        }
    }

    #[test]
    fn chosen_root_split_is_optimal_over_sampled_subset() {
        // brute-force oracle: enumerate all (feature, midpoint) pairs
        let (x, y) = separable_rows(20);
        let rows: Vec<usize> = (0..20).collect();
        let candidates = [0, 1, 2];
        let chosen = best_split(&x, &y, &rows, &candidates, 1).unwrap();
        let mut best_oracle = f64::INFINITY;
        for feat in candidates {
            let mut vals: Vec<f64> = rows.iter().map(|&r| x[r][feat]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for w in vals.windows(2).filter(|w| w[0] != w[1]) {
                let t = (w[0] + w[1]) / 2.0;
                let ln = rows.iter().filter(|&&r| x[r][feat] <= t).count();
                let lp = rows.iter().filter(|&&r| x[r][feat] <= t && y[r]).count();
                let rn = rows.len() - ln;
                let rp = rows.iter().filter(|&&r| y[r]).count() - lp;
                let imp =
                    (ln as f64 * gini(lp, ln) + rn as f64 * gini(rp, rn)) / rows.len() as f64;
                best_oracle = best_oracle.min(imp);
            }
        }
        assert!((chosen.impurity - best_oracle).abs() < 1e-12);
    }

    #[test]
    fn forest_respects_depth_bound_and_seed_determinism() {
        let (x, y) = separable_rows(50);
        let params = ForestParams {
            n_trees: 30,
            seed: 11,
            ..ForestParams::default()
        };
        let a = train_forest(&x, &y, &params).unwrap();
        let b = train_forest(&x, &y, &params).unwrap();
        assert!(a.forest.max_depth() <= 8);
        assert_eq!(
            serde_json::to_string(&a.forest).unwrap(),
            serde_json::to_string(&b.forest).unwrap()
        );
    }

    #[test]
    fn forest_rejects_single_class() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = vec![true, true];
        assert!(matches!(
            train_forest(&x, &y, &ForestParams::default()),
            Err(LearnError::SingleClassDataset)
        ));
    }

    #[test]
    fn importance_concentrates_on_the_informative_feature() {
        // label depends only on feature 0; features 1, 2 are noise
        let mut rng = derived_rng(5, TAG_BOOTSTRAP, 99);
        let x: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                vec![
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                ]
            })
            .collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] > 0.5).collect();
        let imp = feature_importance(&x, &y, 100, 21).unwrap();
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(imp[0] > 0.9, "{imp:?}");
        assert_eq!(rank_features(&imp)[0], 0);
    }
}
