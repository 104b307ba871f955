//! Depth-limited CART regression trees shared by the forest and the
//! boosting baselines.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features considered per split; `None` = all.
    pub max_features: Option<usize>,
}

/// How leaf values are computed from the rows that reach the leaf.
pub enum LeafRule<'a> {
    /// Mean target.
    Mean,
    /// `Σ target / Σ hessian`, one Newton step for the logistic loss.
    Newton(&'a [f64]),
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Fits a squared-error regression tree to `target` over rows `idx`.
    pub fn fit(
        x: &[Vec<f64>],
        target: &[f64],
        idx: Vec<usize>,
        params: TreeParams,
        leaf: LeafRule<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Tree {
        let mut tree = Tree { nodes: Vec::new() };
        let n_features = x.first().map_or(0, Vec::len);
        tree.grow(x, target, idx, 0, params, &leaf, n_features, rng);
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn grow(
        &mut self,
        x: &[Vec<f64>],
        target: &[f64],
        idx: Vec<usize>,
        depth: usize,
        params: TreeParams,
        leaf: &LeafRule<'_>,
        n_features: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: leaf_value(target, &idx, leaf),
        });
        if depth >= params.max_depth || idx.len() < 2 * params.min_samples_leaf.max(1) {
            return me;
        }
        let features: Vec<usize> = match params.max_features {
            Some(k) if k < n_features => {
                let mut f = sample(rng, n_features, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..n_features).collect(),
        };
        let Some((feature, threshold)) = best_split(x, target, &idx, &features, params.min_samples_leaf.max(1)) else {
            return me;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][feature] <= threshold);
        let left = self.grow(x, target, l, depth + 1, params, leaf, n_features, rng);
        let right = self.grow(x, target, r, depth + 1, params, leaf, n_features, rng);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

fn leaf_value(target: &[f64], idx: &[usize], leaf: &LeafRule<'_>) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let s: f64 = idx.iter().map(|&i| target[i]).sum();
    match leaf {
        LeafRule::Mean => s / idx.len() as f64,
        LeafRule::Newton(h) => {
            let hs: f64 = idx.iter().map(|&i| h[i]).sum();
            s / hs.max(1e-12)
        }
    }
}

/// Best squared-error split; `None` when no split reduces the error.
fn best_split(
    x: &[Vec<f64>],
    target: &[f64],
    idx: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64)> {
    let n = idx.len();
    let total: f64 = idx.iter().map(|&i| target[i]).sum();
    let parent = total * total / n as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order = idx.to_vec();
    for &f in features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += target[order[k]];
            let (nl, nr) = (k + 1, n - k - 1);
            let (va, vb) = (x[order[k]][f], x[order[k + 1]][f]);
            if va == vb || nl < min_leaf || nr < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - parent;
            if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, 0.5 * (va + vb)));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn step_function_is_recovered() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i < 7 { 0.0 } else { 1.0 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = TreeParams { max_depth: 3, min_samples_leaf: 1, max_features: None };
        let t = Tree::fit(&x, &y, (0..20).collect(), params, LeafRule::Mean, &mut rng);
        for i in 0..20 {
            assert_eq!(t.predict(&x[i]), y[i]);
        }
        assert!(matches!(t.nodes[0], Node::Split { threshold, .. } if threshold == 6.5));
    }

    #[test]
    fn constant_target_is_a_leaf() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 1.0]).collect();
        let y = vec![0.3; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = TreeParams { max_depth: 5, min_samples_leaf: 1, max_features: None };
        let t = Tree::fit(&x, &y, (0..10).collect(), params, LeafRule::Mean, &mut rng);
        assert_eq!(t.nodes.len(), 1);
    }
}
