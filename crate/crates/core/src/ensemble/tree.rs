//! Bounded-depth random decision trees.
//!
//! At every internal node a random subset of `features_per_split` features
//! is drawn; the split threshold is the Gini-optimal midpoint on the best of
//! those features. A depth-1 tree is a decision stump.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub features_per_split: usize,
    pub min_samples_split: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 3,
            features_per_split: 1,
            min_samples_split: 2,
        }
    }
}

impl TreeConfig {
    pub fn stump() -> Self {
        TreeConfig {
            max_depth: 1,
            ..TreeConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        label: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    root: Node,
}

fn majority(labels: impl Iterator<Item = usize>, n_classes: usize, fallback: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    let mut any = false;
    for y in labels {
        counts[y] += 1;
        any = true;
    }
    if !any {
        return fallback;
    }
    let mut best = 0;
    for (c, &k) in counts.iter().enumerate() {
        if k > counts[best] {
            best = c;
        }
    }
    best
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&k| (k as f64 / t).powi(2)).sum::<f64>()
}

struct Builder<'a, R> {
    data: &'a Dataset,
    cfg: TreeConfig,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    /// Best threshold on `feature` as (weighted impurity, threshold).
    fn best_threshold(&self, idx: &[usize], feature: usize) -> Option<(f64, f64)> {
        let c = self.data.n_classes();
        let mut pts: Vec<(f64, usize)> = idx
            .iter()
            .map(|&i| (self.data.row(i)[feature], self.data.labels()[i]))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total = pts.len();
        let mut right = vec![0usize; c];
        for &(_, y) in &pts {
            right[y] += 1;
        }
        let mut left = vec![0usize; c];
        let mut best: Option<(f64, f64)> = None;
        for k in 0..total - 1 {
            let (v, y) = pts[k];
            left[y] += 1;
            right[y] -= 1;
            let next = pts[k + 1].0;
            if next <= v {
                continue;
            }
            let nl = k + 1;
            let nr = total - nl;
            let score = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / total as f64;
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, 0.5 * (v + next)));
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize, parent_label: usize) -> Node {
        let c = self.data.n_classes();
        let label = majority(idx.iter().map(|&i| self.data.labels()[i]), c, parent_label);
        let pure = idx
            .iter()
            .all(|&i| self.data.labels()[i] == self.data.labels()[idx[0]]);
        if depth >= self.cfg.max_depth || idx.len() < self.cfg.min_samples_split.max(2) || pure {
            return Node::Leaf { label };
        }
        let d = self.data.n_features();
        let k = self.cfg.features_per_split.clamp(1, d);
        let candidates = sample(&mut *self.rng, d, k);
        let mut best: Option<(f64, usize, f64)> = None;
        for f in candidates.iter() {
            if let Some((score, thr)) = self.best_threshold(idx, f) {
                if best.is_none_or(|(s, _, _)| score < s) {
                    best = Some((score, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return Node::Leaf { label };
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.data.row(i)[feature] <= threshold);
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.grow(&l, depth + 1, label)),
            right: Box::new(self.grow(&r, depth + 1, label)),
        }
    }
}

impl DecisionTree {
    /// Fit on the (possibly repeated) sample indices `idx`. A sample with a
    /// single class, or with no usable split, yields a constant tree.
    pub fn fit<R: Rng>(data: &Dataset, idx: &[usize], cfg: TreeConfig, rng: &mut R) -> Self {
        let mut builder = Builder { data, cfg, rng };
        DecisionTree {
            root: builder.grow(idx, 0, 0),
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { label } => return *label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(left).max(walk(right)),
            }
        }
        walk(&self.root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line_data() -> Dataset {
        let xs: Vec<f64> = (0..20).map(f64::from).collect();
        let ys = xs.iter().map(|&x| usize::from(x >= 10.0)).collect();
        Dataset::new(xs, 1, ys, vec![0.0, 1.0]).unwrap()
    }

    #[test]
    fn stump_separates_a_line() {
        let d = line_data();
        let idx: Vec<usize> = (0..d.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = DecisionTree::fit(&d, &idx, TreeConfig::stump(), &mut rng);
        assert_eq!(t.depth(), 1);
        for i in 0..d.len() {
            assert_eq!(t.predict(d.row(i)), d.labels()[i]);
        }
    }

    #[test]
    fn single_class_sample_gives_constant_tree() {
        let d = line_data();
        let idx = vec![0, 1, 2, 2, 3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = DecisionTree::fit(&d, &idx, TreeConfig::default(), &mut rng);
        assert_eq!(t.depth(), 0);
        assert_eq!(t.predict(&[15.0]), 0);
    }

    #[test]
    fn depth_is_bounded() {
        let d = line_data();
        let idx: Vec<usize> = (0..d.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = TreeConfig {
            max_depth: 2,
            ..TreeConfig::default()
        };
        assert!(DecisionTree::fit(&d, &idx, cfg, &mut rng).depth() <= 2);
    }
}
