//! Single decision tree: exact greedy CART growth shared by every family.
//!
//! Splits scan each candidate feature's sorted values and test the midpoint
//! between consecutive distinct values; rows with `value <= threshold` go
//! left. Gain ties break toward the lower feature index, then the lower
//! threshold, so growth is fully deterministic for a fixed seed.
//!
//! Two objectives drive the scan: weighted Gini impurity for
//! classification leaves (probability = weighted positive fraction) and a
//! gradient/hessian objective that covers both plain squared-error
//! regression stages (Newton leaf values) and second-order regularized
//! boosting (lambda/gamma/alpha).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    All,
    Sqrt,
}

impl std::str::FromStr for MaxFeatures {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(MaxFeatures::All),
            "sqrt" => Ok(MaxFeatures::Sqrt),
            other => Err(format!("unknown max_features `{other}` (expected `all` or `sqrt`)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature_index: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub leaf_value: f64,
    pub gain: f64,
    pub is_leaf: bool,
}

impl TreeNode {
    fn leaf(value: f64) -> Self {
        TreeNode {
            feature_index: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            leaf_value: value,
            gain: 0.0,
            is_leaf: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub max_depth: u32,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            if node.is_leaf {
                return node.leaf_value;
            }
            i = if row[node.feature_index] <= node.threshold {
                node.left
            } else {
                node.right
            };
        }
    }

    /// Internal split count; 0 for a stump that never split.
    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_leaf).count()
    }
}

/// Growth limits shared by every family.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeGrowth {
    pub max_depth: u32,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
}

/// What the split scan optimizes.
pub(crate) enum Objective<'a> {
    /// Weighted Gini impurity decrease; leaves hold the weighted positive
    /// fraction. Zero-gain splits are allowed (mirrors exhaustive CART),
    /// purity and the growth limits are the stopping rules.
    Gini { labels: &'a [u8], weights: &'a [f64] },
    /// Second-order gain
    /// `0.5 * (GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)) - gamma`;
    /// splits must improve it strictly. Leaf values come from the separate
    /// leaf statistics: `-soft_threshold(G, alpha) / max(H + lambda, eps)`,
    /// which lets squared-error stages take a Newton leaf step.
    GradHess {
        grad: &'a [f64],
        hess: &'a [f64],
        leaf_grad: &'a [f64],
        leaf_hess: &'a [f64],
        lambda: f64,
        gamma: f64,
        alpha: f64,
    },
}

const HESS_FLOOR: f64 = 1e-16;

fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

impl Objective<'_> {
    fn leaf_value(&self, samples: &[usize]) -> f64 {
        match self {
            Objective::Gini { labels, weights } => {
                let mut w = 0.0;
                let mut wy = 0.0;
                for &i in samples {
                    w += weights[i];
                    wy += weights[i] * f64::from(labels[i]);
                }
                if w > 0.0 {
                    wy / w
                } else {
                    0.0
                }
            }
            Objective::GradHess {
                leaf_grad,
                leaf_hess,
                lambda,
                alpha,
                ..
            } => {
                let mut g = 0.0;
                let mut h = 0.0;
                for &i in samples {
                    g += leaf_grad[i];
                    h += leaf_hess[i];
                }
                -soft_threshold(g, *alpha) / (h + lambda).max(HESS_FLOOR)
            }
        }
    }

    fn is_pure(&self, samples: &[usize]) -> bool {
        match self {
            Objective::Gini { labels, .. } => {
                let first = labels[samples[0]];
                samples.iter().all(|&i| labels[i] == first)
            }
            // regression nodes stop through the gain test instead
            Objective::GradHess { .. } => false,
        }
    }

    /// Per-sample accumulator pair for the split scan.
    fn stats(&self, i: usize) -> (f64, f64) {
        match self {
            Objective::Gini { labels, weights } => (weights[i], weights[i] * f64::from(labels[i])),
            Objective::GradHess { grad, hess, .. } => (grad[i], hess[i]),
        }
    }

    /// Split gain from left/total accumulator sums, or `None` when the
    /// split is not acceptable.
    fn gain(&self, left: (f64, f64), total: (f64, f64)) -> Option<f64> {
        match self {
            Objective::Gini { .. } => {
                let (w, wy) = total;
                let (wl, wyl) = left;
                let (wr, wyr) = (w - wl, wy - wyl);
                if wl <= 0.0 || wr <= 0.0 {
                    return None;
                }
                // weighted impurity mass: 2 * P * (W - P) / W
                let mass = |w: f64, p: f64| 2.0 * p * (w - p) / w;
                let gain = mass(w, wy) - mass(wl, wyl) - mass(wr, wyr);
                // shield the invariant against rounding at near-zero gains
                Some(gain.max(0.0))
            }
            Objective::GradHess { lambda, gamma, .. } => {
                let (g, h) = total;
                let (gl, hl) = left;
                let (gr, hr) = (g - gl, h - hl);
                let score = |g: f64, h: f64| g * g / (h + lambda).max(HESS_FLOOR);
                let gain = 0.5 * (score(gl, hl) + score(gr, hr) - score(g, h)) - gamma;
                (gain > 0.0).then_some(gain)
            }
        }
    }

    /// Whether a best split with this gain should be taken at all.
    fn accept(&self, _gain: f64) -> bool {
        // Gini allows zero-gain splits; GradHess filtered them in `gain`
        true
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

pub(crate) struct TreeBuilder<'a> {
    /// Column-major feature values, full dataset.
    cols: &'a [Vec<f64>],
    /// Feature indices this tree may consider (column subsampling).
    allowed: &'a [usize],
    growth: TreeGrowth,
    objective: Objective<'a>,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

impl<'a> TreeBuilder<'a> {
    pub fn new(
        cols: &'a [Vec<f64>],
        allowed: &'a [usize],
        growth: TreeGrowth,
        objective: Objective<'a>,
        seed: u64,
    ) -> Self {
        TreeBuilder {
            cols,
            allowed,
            growth,
            objective,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: Vec::new(),
        }
    }

    pub fn fit(mut self, samples: &[usize]) -> DecisionTree {
        debug_assert!(!samples.is_empty());
        self.grow(samples, 0);
        DecisionTree {
            nodes: self.nodes,
            max_depth: self.growth.max_depth,
            min_samples_split: self.growth.min_samples_split,
            max_features: self.growth.max_features,
        }
    }

    /// Candidate features for one split, ascending so ties resolve to the
    /// lowest index.
    fn candidate_features(&mut self) -> Vec<usize> {
        match self.growth.max_features {
            MaxFeatures::All => self.allowed.to_vec(),
            MaxFeatures::Sqrt => {
                let k = ((self.allowed.len() as f64).sqrt().floor() as usize).max(1);
                if k >= self.allowed.len() {
                    return self.allowed.to_vec();
                }
                let mut picked: Vec<usize> = rand::seq::index::sample(&mut self.rng, self.allowed.len(), k)
                    .into_iter()
                    .map(|i| self.allowed[i])
                    .collect();
                picked.sort_unstable();
                picked
            }
        }
    }

    fn best_split(&self, samples: &[usize], candidates: &[usize]) -> Option<BestSplit> {
        let mut total = (0.0, 0.0);
        for &i in samples {
            let (a, b) = self.objective.stats(i);
            total.0 += a;
            total.1 += b;
        }

        let mut best: Option<BestSplit> = None;
        let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(samples.len());
        for &f in candidates {
            let col = &self.cols[f];
            scratch.clear();
            scratch.extend(samples.iter().map(|&i| (col[i], i)));
            scratch.sort_by(|a, b| a.0.total_cmp(&b.0));

            let mut left = (0.0, 0.0);
            for k in 0..scratch.len() - 1 {
                let (v, i) = scratch[k];
                let (a, b) = self.objective.stats(i);
                left.0 += a;
                left.1 += b;
                let v_next = scratch[k + 1].0;
                if v == v_next {
                    continue;
                }
                let Some(gain) = self.objective.gain(left, total) else {
                    continue;
                };
                let better = match &best {
                    None => true,
                    Some(b) => gain > b.gain,
                };
                if better {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: (v + v_next) / 2.0,
                        gain,
                    });
                }
            }
        }
        best.filter(|b| self.objective.accept(b.gain))
    }

    fn grow(&mut self, samples: &[usize], depth: u32) -> usize {
        let leaf_value = self.objective.leaf_value(samples);
        if depth >= self.growth.max_depth
            || samples.len() < self.growth.min_samples_split
            || self.objective.is_pure(samples)
        {
            self.nodes.push(TreeNode::leaf(leaf_value));
            return self.nodes.len() - 1;
        }
        let candidates = self.candidate_features();
        let Some(split) = self.best_split(samples, &candidates) else {
            self.nodes.push(TreeNode::leaf(leaf_value));
            return self.nodes.len() - 1;
        };

        let col = &self.cols[split.feature];
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            samples.iter().partition(|&&i| col[i] <= split.threshold);
        debug_assert!(!left_rows.is_empty() && !right_rows.is_empty());

        let idx = self.nodes.len();
        self.nodes.push(TreeNode {
            feature_index: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
            leaf_value,
            gain: split.gain,
            is_leaf: false,
        });
        let left = self.grow(&left_rows, depth + 1);
        let right = self.grow(&right_rows, depth + 1);
        self.nodes[idx].left = left;
        self.nodes[idx].right = right;
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn columns(data: &[&[f64]]) -> Vec<Vec<f64>> {
        data.iter().map(|c| c.to_vec()).collect()
    }

    fn gini_builder<'a>(
        cols: &'a [Vec<f64>],
        allowed: &'a [usize],
        labels: &'a [u8],
        weights: &'a [f64],
        max_depth: u32,
    ) -> TreeBuilder<'a> {
        TreeBuilder::new(
            cols,
            allowed,
            TreeGrowth {
                max_depth,
                min_samples_split: 2,
                max_features: MaxFeatures::All,
            },
            Objective::Gini { labels, weights },
            0,
        )
    }

    #[test]
    fn single_feature_split_lands_between_classes() {
        let cols = columns(&[&[1.0, 2.0, 3.0, 4.0]]);
        let labels = [0, 0, 1, 1];
        let weights = [1.0; 4];
        let allowed = [0];
        let tree = gini_builder(&cols, &allowed, &labels, &weights, 1).fit(&[0, 1, 2, 3]);
        let root = &tree.nodes[0];
        assert!(!root.is_leaf);
        assert_eq!(root.feature_index, 0);
        assert_eq!(root.threshold, 2.5);
        assert_eq!(tree.predict_row(&[2.0]), 0.0);
        assert_eq!(tree.predict_row(&[3.0]), 1.0);
    }

    #[test]
    fn pure_node_stays_a_leaf() {
        let cols = columns(&[&[1.0, 2.0, 3.0]]);
        let labels = [1, 1, 1];
        let weights = [1.0; 3];
        let allowed = [0];
        let tree = gini_builder(&cols, &allowed, &labels, &weights, 5).fit(&[0, 1, 2]);
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict_row(&[9.0]), 1.0);
    }

    #[test]
    fn xor_needs_two_levels() {
        let cols = columns(&[&[0.0, 0.0, 1.0, 1.0], &[0.0, 1.0, 0.0, 1.0]]);
        let labels = [0, 1, 1, 0];
        let weights = [1.0; 4];
        let allowed = [0, 1];
        let tree = gini_builder(&cols, &allowed, &labels, &weights, 2).fit(&[0, 1, 2, 3]);
        for (x, y, want) in [(0.0, 0.0, 0.0), (0.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, 0.0)] {
            assert_eq!(tree.predict_row(&[x, y]), want, "({x},{y})");
        }
    }

    #[test]
    fn depth_limit_makes_probability_leaves() {
        let cols = columns(&[&[1.0, 2.0, 3.0, 4.0]]);
        let labels = [0, 1, 1, 1];
        let weights = [1.0; 4];
        let allowed = [0];
        let tree = gini_builder(&cols, &allowed, &labels, &weights, 0).fit(&[0, 1, 2, 3]);
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict_row(&[1.0]), 0.75);
    }

    #[test]
    fn sample_weights_shift_the_leaf_probability() {
        let cols = columns(&[&[1.0, 1.0]]);
        let labels = [0, 1];
        let weights = [3.0, 1.0];
        let allowed = [0];
        // identical feature values: nothing to split on
        let tree = gini_builder(&cols, &allowed, &labels, &weights, 3).fit(&[0, 1]);
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict_row(&[1.0]), 0.25);
    }

    #[test]
    fn gain_ties_break_to_lower_feature_and_threshold() {
        // both features separate perfectly; feature 0 must win
        let cols = columns(&[&[0.0, 0.0, 5.0, 5.0], &[1.0, 1.0, 9.0, 9.0]]);
        let labels = [0, 0, 1, 1];
        let weights = [1.0; 4];
        let allowed = [0, 1];
        let tree = gini_builder(&cols, &allowed, &labels, &weights, 1).fit(&[0, 1, 2, 3]);
        assert_eq!(tree.nodes[0].feature_index, 0);
        assert_eq!(tree.nodes[0].threshold, 2.5);
    }

    #[test]
    fn grad_hess_gain_rejects_gamma_shortfall() {
        // perfectly informative feature, but gamma exceeds the best gain
        let cols = columns(&[&[1.0, 2.0, 3.0, 4.0]]);
        let grad = [1.0, 1.0, -1.0, -1.0];
        let hess = [1.0; 4];
        let growth = TreeGrowth {
            max_depth: 3,
            min_samples_split: 2,
            max_features: MaxFeatures::All,
        };
        let allowed = [0];
        let obj = |gamma: f64| Objective::GradHess {
            grad: &grad,
            hess: &hess,
            leaf_grad: &grad,
            leaf_hess: &hess,
            lambda: 0.0,
            gamma,
            alpha: 0.0,
        };
        let with_split = TreeBuilder::new(&cols, &allowed, growth, obj(0.0), 0).fit(&[0, 1, 2, 3]);
        assert!(with_split.n_splits() > 0);
        let blocked = TreeBuilder::new(&cols, &allowed, growth, obj(1e9), 0).fit(&[0, 1, 2, 3]);
        assert_eq!(blocked.n_splits(), 0);
    }

    #[test]
    fn lambda_shrinks_leaf_values_toward_zero() {
        let cols = columns(&[&[1.0, 2.0]]);
        let grad = [-4.0, -4.0];
        let hess = [1.0, 1.0];
        let growth = TreeGrowth {
            max_depth: 0,
            min_samples_split: 2,
            max_features: MaxFeatures::All,
        };
        let allowed = [0];
        let leaf_at = |lambda: f64| {
            TreeBuilder::new(
                &cols,
                &allowed,
                growth,
                Objective::GradHess {
                    grad: &grad,
                    hess: &hess,
                    leaf_grad: &grad,
                    leaf_hess: &hess,
                    lambda,
                    gamma: 0.0,
                    alpha: 0.0,
                },
                0,
            )
            .fit(&[0, 1])
            .predict_row(&[1.0])
        };
        assert_eq!(leaf_at(0.0), 4.0);
        assert_eq!(leaf_at(2.0), 2.0);
        assert!(leaf_at(1e6) < 1e-4);
    }

    #[test]
    fn alpha_soft_thresholds_leaf_gradients() {
        let cols = columns(&[&[1.0]]);
        let grad = [-3.0];
        let hess = [1.0];
        let growth = TreeGrowth {
            max_depth: 0,
            min_samples_split: 2,
            max_features: MaxFeatures::All,
        };
        let allowed = [0];
        let leaf_at = |alpha: f64| {
            TreeBuilder::new(
                &cols,
                &allowed,
                growth,
                Objective::GradHess {
                    grad: &grad,
                    hess: &hess,
                    leaf_grad: &grad,
                    leaf_hess: &hess,
                    lambda: 0.0,
                    gamma: 0.0,
                    alpha,
                },
                0,
            )
            .fit(&[0])
            .predict_row(&[1.0])
        };
        assert_eq!(leaf_at(0.0), 3.0);
        assert_eq!(leaf_at(1.0), 2.0);
        assert_eq!(leaf_at(5.0), 0.0);
    }

    #[test]
    fn max_features_sqrt_is_deterministic_per_seed() {
        let n = 32;
        let cols: Vec<Vec<f64>> = (0..9)
            .map(|f| (0..n).map(|i| ((i * (f + 3)) % 7) as f64).collect())
            .collect();
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let weights = vec![1.0; n];
        let allowed: Vec<usize> = (0..9).collect();
        let samples: Vec<usize> = (0..n).collect();
        let growth = TreeGrowth {
            max_depth: 4,
            min_samples_split: 2,
            max_features: MaxFeatures::Sqrt,
        };
        let build = |seed: u64| {
            TreeBuilder::new(
                &cols,
                &allowed,
                growth,
                Objective::Gini {
                    labels: &labels,
                    weights: &weights,
                },
                seed,
            )
            .fit(&samples)
        };
        assert_eq!(build(11), build(11));
        // different seed explores different feature subsets
        assert_ne!(build(11), build(12));
    }
}
