//! CART decision tree over port-vector features, Gini impurity, binary
//! splits. Deterministic given the training set: features are scanned in
//! order, thresholds at midpoints between consecutive distinct values, first
//! best split wins.

use serde::{Deserialize, Serialize};

use crate::classify::AppLabel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: u16,
    pub min_leaf: usize,
    pub min_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: 12, min_leaf: 5, min_split: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { counts: Vec<u64> },
}

/// A fitted classifier. `classes` maps class indices to labels; prediction
/// is total over the feature space because every path ends in a leaf with at
/// least one training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    classes: Vec<AppLabel>,
    params: TreeParams,
    pub seed: u64,
    pub n_features: usize,
}

impl DecisionTree {
    pub fn fit(
        samples: &[Vec<f64>],
        labels: &[AppLabel],
        params: TreeParams,
        seed: u64,
    ) -> Result<DecisionTree> {
        if samples.is_empty() || samples.len() != labels.len() {
            return Err(Error::invalid("empty or mismatched training input"));
        }
        let n_features = samples[0].len();
        if samples.iter().any(|s| s.len() != n_features) {
            return Err(Error::invalid("inconsistent feature widths"));
        }

        let mut classes: Vec<AppLabel> = labels.to_vec();
        classes.sort();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::invalid("degenerate training set: fewer than 2 labels"));
        }
        let class_of = |l: &AppLabel| classes.iter().position(|c| c == l).unwrap();
        let y: Vec<usize> = labels.iter().map(class_of).collect();

        let mut tree = DecisionTree { nodes: Vec::new(), classes, params, seed, n_features };
        let indices: Vec<usize> = (0..samples.len()).collect();
        tree.grow(samples, &y, indices, 0);
        Ok(tree)
    }

    fn class_counts(&self, y: &[usize], indices: &[usize]) -> Vec<u64> {
        let mut counts = vec![0u64; self.classes.len()];
        for &i in indices {
            counts[y[i]] += 1;
        }
        counts
    }

    fn grow(&mut self, x: &[Vec<f64>], y: &[usize], indices: Vec<usize>, depth: u16) -> usize {
        let counts = self.class_counts(y, &indices);
        let n = indices.len();
        let pure = counts.iter().filter(|c| **c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || n < self.params.min_split {
            return self.push_leaf(counts);
        }
        let Some((feature, threshold)) = self.best_split(x, y, &indices) else {
            return self.push_leaf(counts);
        };

        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            indices.into_iter().partition(|&i| x[i][feature] <= threshold);
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: vec![] }); // placeholder
        let left = self.grow(x, y, left_idx, depth + 1);
        let right = self.grow(x, y, right_idx, depth + 1);
        self.nodes[slot] = Node::Split { feature, threshold, left, right };
        slot
    }

    fn push_leaf(&mut self, counts: Vec<u64>) -> usize {
        self.nodes.push(Node::Leaf { counts });
        self.nodes.len() - 1
    }

    fn best_split(&self, x: &[Vec<f64>], y: &[usize], indices: &[usize]) -> Option<(usize, f64)> {
        let n = indices.len() as f64;
        let k = self.classes.len();
        let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)

        for feature in 0..self.n_features {
            let mut order: Vec<usize> = indices.to_vec();
            order.sort_by(|a, b| {
                x[*a][feature].partial_cmp(&x[*b][feature]).unwrap().then(a.cmp(b))
            });

            let mut left = vec![0u64; k];
            let mut right = self.class_counts(y, indices);
            for (pos, window) in order.windows(2).enumerate() {
                let (i, j) = (window[0], window[1]);
                left[y[i]] += 1;
                right[y[i]] -= 1;
                if x[i][feature] == x[j][feature] {
                    continue;
                }
                let n_left = pos + 1;
                let n_right = order.len() - n_left;
                if n_left < self.params.min_leaf || n_right < self.params.min_leaf {
                    continue;
                }
                let score = (n_left as f64 * gini(&left, n_left as f64)
                    + n_right as f64 * gini(&right, n_right as f64))
                    / n;
                let threshold = x[i][feature] + (x[j][feature] - x[i][feature]) / 2.0;
                if best.map_or(true, |(s, _, _)| score < s) {
                    best = Some((score, feature, threshold));
                }
            }
        }

        // a split must actually reduce impurity over the parent
        let parent = gini(&self.class_counts(y, indices), n);
        best.filter(|(score, _, _)| *score < parent - 1e-12).map(|(_, f, t)| (f, t))
    }

    /// Predicted label and the fraction of its leaf's training samples that
    /// carry it.
    pub fn predict(&self, features: &[f64]) -> (AppLabel, f64) {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                Node::Split { feature, threshold, left, right } => {
                    node = if features[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { counts } => {
                    let total: u64 = counts.iter().sum();
                    let (best_class, best_count) = counts
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                        .expect("non-empty leaf");
                    let confidence =
                        if total > 0 { *best_count as f64 / total as f64 } else { 0.0 };
                    return (self.classes[best_class], confidence);
                }
            }
        }
    }

    pub fn classes(&self) -> &[AppLabel] {
        &self.classes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> u16 {
        fn walk(nodes: &[Node], at: usize) -> u16 {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

fn gini(counts: &[u64], n: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    1.0 - counts
        .iter()
        .map(|c| {
            let p = *c as f64 / n;
            p * p
        })
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> (Vec<Vec<f64>>, Vec<AppLabel>) {
        // two clusters separable on feature 0
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            x.push(vec![i as f64, (i % 7) as f64]);
            y.push(if i < 20 { AppLabel::Zoom } else { AppLabel::Webex });
        }
        (x, y)
    }

    #[test]
    fn separable_clusters_are_learned_exactly() {
        let (x, y) = grid();
        let tree = DecisionTree::fit(&x, &y, TreeParams::default(), 1).unwrap();
        for (f, l) in x.iter().zip(&y) {
            let (pred, conf) = tree.predict(f);
            assert_eq!(pred, *l);
            assert!(conf >= 0.99);
        }
        assert!(tree.depth() >= 1);
    }

    #[test]
    fn single_label_input_is_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        let y = vec![AppLabel::Zoom, AppLabel::Zoom];
        let err = DecisionTree::fit(&x, &y, TreeParams::default(), 1).unwrap_err();
        assert!(err.to_string().contains("degenerate"));
    }

    #[test]
    fn fitting_is_deterministic() {
        let (x, y) = grid();
        let a = DecisionTree::fit(&x, &y, TreeParams::default(), 7).unwrap();
        let b = DecisionTree::fit(&x, &y, TreeParams::default(), 7).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn min_leaf_is_respected() {
        let (x, y) = grid();
        let params = TreeParams { min_leaf: 25, ..TreeParams::default() };
        // no split can produce two children of size >= 25 from 40 samples
        let tree = DecisionTree::fit(&x, &y, params, 1).unwrap();
        assert_eq!(tree.node_count(), 1);
    }

    #[test]
    fn prediction_is_total() {
        let (x, y) = grid();
        let tree = DecisionTree::fit(&x, &y, TreeParams::default(), 1).unwrap();
        // far outside the training range still lands in a leaf
        let (label, _) = tree.predict(&[1e9, -1e9]);
        assert!(label == AppLabel::Zoom || label == AppLabel::Webex);
    }
}
