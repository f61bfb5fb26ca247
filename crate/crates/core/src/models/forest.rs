//! Bagged Gini decision trees.
//!
//! Every tree is grown on its own bootstrap sample with a random feature
//! subset considered at each split. The forest's hit probability is the
//! mean of the trees' leaf class-1 fractions.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Prediction;
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    /// `None` means ⌈√d⌉.
    pub features_per_split: Option<usize>,
    /// `None` means unlimited.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 100,
            features_per_split: None,
            max_depth: None,
            min_leaf: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A binary tree in a flat node arena; node 0 is the root.
/// Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub features_per_split: usize,
    pub seed: u64,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn tree_outputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let outputs = self.tree_outputs(x)?;
        Ok(average_votes(&outputs))
    }
}

/// Mean of per-tree class-1 fractions; class 1 iff the mean is at least 0.5.
pub fn average_votes(outputs: &[f64]) -> Prediction {
    let probability = outputs.iter().sum::<f64>() / outputs.len() as f64;
    Prediction {
        class: u8::from(probability >= 0.5),
        probability,
    }
}

/// Gini impurity `1 - Σ p_c²` of a label multiset.
pub fn gini(labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let ones = labels.iter().filter(|&&l| l == 1).count();
    gini_counts(labels.len(), ones)
}

fn gini_counts(n: usize, ones: usize) -> f64 {
    let p = ones as f64 / n as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

struct Grower<'a> {
    data: &'a FeatureMatrix,
    features_per_split: usize,
    max_depth: Option<usize>,
    min_leaf: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Grower<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        let ones = rows.iter().filter(|&&i| self.data.label(i) == 1).count();
        let value = ones as f64 / rows.len() as f64;
        self.nodes.push(Node::Leaf { value });

        let pure = ones == 0 || ones == rows.len();
        let depth_reached = self.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_reached || rows.len() < 2 * self.min_leaf {
            return id;
        }
        let Some(best) = self.find_split(&rows, ones, rng) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.data.row(i)[best.feature] <= best.threshold);
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Lowest weighted Gini split over a random feature subset. If none of
    /// the sampled features can split the node, the rest are tried in random order.
    fn find_split(&self, rows: &[usize], ones: usize, rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let d = self.data.n_cols();
        let mut order: Vec<usize> = sample(rng, d, self.features_per_split).into_vec();
        let mut rest: Vec<usize> = (0..d).filter(|f| !order.contains(f)).collect();
        rest.shuffle(rng);
        let sampled = order.len();
        order.extend(rest);

        let mut best: Option<BestSplit> = None;
        let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(rows.len());
        for (pos, &feature) in order.iter().enumerate() {
            if pos >= sampled && best.is_some() {
                break;
            }
            sorted.clear();
            sorted.extend(rows.iter().map(|&i| (self.data.row(i)[feature], self.data.label(i))));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

            let n = sorted.len();
            let mut left_ones = 0;
            for split_at in 1..n {
                left_ones += usize::from(sorted[split_at - 1].1);
                let (lo, hi) = (sorted[split_at - 1].0, sorted[split_at].0);
                if lo == hi || split_at < self.min_leaf || n - split_at < self.min_leaf {
                    continue;
                }
                let right_n = n - split_at;
                let score = split_at as f64 * gini_counts(split_at, left_ones)
                    + right_n as f64 * gini_counts(right_n, ones - left_ones);
                if best.as_ref().is_none_or(|b| score < b.score) {
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some(BestSplit {
                        feature,
                        threshold: if mid < hi { mid } else { lo },
                        score,
                    });
                }
            }
        }
        best
    }
}

/// Grow one tree on the given rows (repeats allowed).
pub fn grow_tree(
    data: &FeatureMatrix,
    rows: Vec<usize>,
    features_per_split: usize,
    max_depth: Option<usize>,
    min_leaf: usize,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut grower = Grower {
        data,
        features_per_split,
        max_depth,
        min_leaf,
        nodes: Vec::new(),
    };
    grower.grow(rows, 0, rng);
    Tree { nodes: grower.nodes }
}

pub fn train_forest(train: &FeatureMatrix, params: &ForestParams) -> Result<ForestModel> {
    if params.trees == 0 {
        return Err(Error::Parameter("forest needs at least one tree".into()));
    }
    if params.min_leaf == 0 {
        return Err(Error::Parameter("min_leaf must be at least 1".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = train.n_cols();
    let m = params
        .features_per_split
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize);
    if m == 0 || m > d {
        return Err(Error::Parameter(format!("features_per_split must lie in 1..={d}, got {m}")));
    }
    let n = train.n_rows();
    let trees = (0..params.trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::indexed_substream(params.seed, rng::FOREST, b as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            grow_tree(train, rows, m, params.max_depth, params.min_leaf, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        trees,
        n_features: d,
        features_per_split: m,
        seed: params.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_data(seed: u64, n: usize, d: usize) -> FeatureMatrix {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(0.0..1.0)).collect()).collect();
        let labels = (0..n).map(|_| r.random_range(0..2u8)).collect();
        FeatureMatrix::from_rows(&refs, &rows, labels).unwrap()
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[0, 0, 1, 1]), 0.5);
        assert_eq!(gini(&[0, 0, 0, 0]), 0.0);
    }

    #[test]
    fn single_full_tree_memorizes() {
        let data = random_data(3, 120, 4);
        let tree = grow_tree(&data, (0..120).collect(), 4, None, 1, &mut ChaCha8Rng::seed_from_u64(0));
        for (i, row) in data.rows().enumerate() {
            assert_eq!(tree.predict(row), f64::from(data.label(i)));
        }
    }

    #[test]
    fn thresholds_within_observed_range_and_leaves_in_unit() {
        let data = random_data(5, 200, 5);
        let forest = train_forest(&data, &ForestParams { trees: 10, ..Default::default() }).unwrap();
        for tree in &forest.trees {
            for node in &tree.nodes {
                match *node {
                    Node::Leaf { value } => assert!((0.0..=1.0).contains(&value)),
                    Node::Split { feature, threshold, .. } => {
                        let col = data.rows().map(|r| r[feature]);
                        let (lo, hi) = col.fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)));
                        assert!(lo <= threshold && threshold <= hi);
                    }
                }
            }
        }
    }

    #[test]
    fn averaging_rule() {
        let p = average_votes(&[1.0, 0.0, 1.0]);
        assert!((p.probability - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.class, 1);
        assert_eq!(average_votes(&[0.5]).class, 1);
    }

    #[test]
    fn one_tree_forest_equals_tree() {
        let data = random_data(9, 60, 3);
        let forest = train_forest(&data, &ForestParams { trees: 1, seed: 4, ..Default::default() }).unwrap();
        for row in data.rows() {
            assert_eq!(forest.predict(row).unwrap().probability, forest.trees[0].predict(row));
        }
    }

    #[test]
    fn depth_and_leaf_limits() {
        let data = random_data(2, 150, 4);
        let params = ForestParams { trees: 5, max_depth: Some(3), min_leaf: 5, ..Default::default() };
        let forest = train_forest(&data, &params).unwrap();
        assert!(forest.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let data = random_data(11, 150, 6);
        let params = ForestParams { trees: 16, seed: 77, ..Default::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
                .install(|| train_forest(&data, &params).unwrap())
        };
        assert_eq!(run(1), run(8));
    }

    #[test]
    fn parameter_validation() {
        let data = random_data(1, 10, 2);
        assert!(train_forest(&data, &ForestParams { trees: 0, ..Default::default() }).is_err());
        assert!(train_forest(&data, &ForestParams { features_per_split: Some(3), ..Default::default() }).is_err());
        let forest = train_forest(&data, &ForestParams::default()).unwrap();
        assert_eq!(forest.features_per_split, 2);
        assert!(matches!(forest.predict(&[0.1]), Err(Error::DimensionMismatch { .. })));
    }
}
