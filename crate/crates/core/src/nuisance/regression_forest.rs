//! Weighted regression forests (variance-reduction splits, mean leaves).

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::survival_forest::{bootstrap_sample, distinct_sorted, route, ForestParams, Node, FOREST_VERSION};
use crate::error::{Error, Result};
use crate::rng::{self, domain, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    /// `(count, weighted mean)` per leaf.
    pub leaves: Vec<(usize, f64)>,
    /// Distinct training rows drawn for this tree, ascending.
    pub in_bag: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionForest {
    pub version: u32,
    pub n_features: usize,
    pub params: ForestParams,
    pub trees: Vec<RegressionTree>,
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    w: &'a [f64],
    params: ForestParams,
    p: usize,
}

impl Grower<'_> {
    fn mean(&self, idx: &[usize]) -> f64 {
        let (sw, swy) = idx
            .iter()
            .fold((0.0, 0.0), |(a, b), &i| (a + self.w[i], b + self.w[i] * self.y[i]));
        if sw > 0.0 {
            swy / sw
        } else {
            0.0
        }
    }

    fn best_split(&self, idx: &[usize], rng: &mut StreamRng) -> Option<(usize, f64)> {
        let leaf_min = self.params.leaf_min;
        let feats = index::sample(rng, self.p, self.params.mtry_for(self.p)).into_vec();
        let (tw, twy) = idx
            .iter()
            .fold((0.0, 0.0), |(a, b), &i| (a + self.w[i], b + self.w[i] * self.y[i]));
        if tw <= 0.0 {
            return None;
        }
        let parent = twy * twy / tw;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for f in feats {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let (mut lw, mut lwy) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let i = order[k];
                lw += self.w[i];
                lwy += self.w[i] * self.y[i];
                let (v, next) = (self.x[i][f], self.x[order[k + 1]][f]);
                if v == next || k + 1 < leaf_min || order.len() - k - 1 < leaf_min {
                    continue;
                }
                let rw = tw - lw;
                if lw <= 0.0 || rw <= 0.0 {
                    continue;
                }
                let rwy = twy - lwy;
                // Between-node sum of squares; maximising it minimises SSE.
                let gain = lwy * lwy / lw + rwy * rwy / rw - parent;
                let thr = 0.5 * (v + next);
                let better = match best {
                    None => gain > 1e-12 * parent.abs().max(1.0),
                    Some((g, bf, bt)) => gain > g || (gain == g && (f, thr) < (bf, bt)),
                };
                if better {
                    best = Some((gain, f, thr));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&self, sample: Vec<usize>, rng: &mut StreamRng) -> RegressionTree {
        let mut nodes = vec![Node::Leaf { leaf: usize::MAX }];
        let mut leaves = Vec::new();
        let mut stack = vec![(0usize, sample, 1usize)];
        while let Some((at, idx, depth)) = stack.pop() {
            let can_split = idx.len() >= 2 * self.params.leaf_min
                && self.params.max_depth.is_none_or(|m| depth < m);
            match can_split.then(|| self.best_split(&idx, rng)).flatten() {
                Some((feature, threshold)) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf { leaf: usize::MAX });
                    nodes.push(Node::Leaf { leaf: usize::MAX });
                    nodes[at] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right: left + 1,
                    };
                    stack.push((left + 1, r, depth + 1));
                    stack.push((left, l, depth + 1));
                }
                None => {
                    nodes[at] = Node::Leaf { leaf: leaves.len() };
                    leaves.push((idx.len(), self.mean(&idx)));
                }
            }
        }
        RegressionTree {
            nodes,
            leaves,
            in_bag: Vec::new(),
        }
    }
}

/// Fits a weighted regression forest; `weights` default to 1.
pub fn fit_regression_forest(
    x: &[Vec<f64>],
    y: &[f64],
    weights: Option<&[f64]>,
    params: &ForestParams,
) -> Result<RegressionForest> {
    params.validate()?;
    let n = x.len();
    if n == 0 || y.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::arg("regression forest needs aligned, non-empty data"));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::arg("ragged covariate rows"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("regression targets must be finite"));
    }
    let ones = vec![1.0; n];
    let w = weights.unwrap_or(&ones);
    if w.iter().any(|v| !(*v >= 0.0) || v.is_infinite()) {
        return Err(Error::arg("regression weights must be finite and non-negative"));
    }
    let grower = Grower {
        x,
        y,
        w,
        params: *params,
        p,
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(params.seed, &[domain::TREE, b as u64]);
            let sample = bootstrap_sample(n, params.bootstrap, &mut r);
            let mut tree = grower.grow(sample.clone(), &mut r);
            tree.in_bag = distinct_sorted(&sample);
            tree
        })
        .collect();
    Ok(RegressionForest {
        version: FOREST_VERSION,
        n_features: p,
        params: *params,
        trees,
    })
}

impl RegressionForest {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_at(x, None)
    }

    /// Average over the trees not drawn for training row `row` (all trees
    /// when `row` is `None` or was drawn for every tree).
    pub fn predict_at(&self, x: &[f64], row: Option<usize>) -> f64 {
        let mean_over = |keep: &dyn Fn(&RegressionTree) -> bool| {
            let (s, k) = self
                .trees
                .iter()
                .filter(|t| keep(t))
                .fold((0.0, 0usize), |(s, k), t| (s + t.leaves[route(&t.nodes, x)].1, k + 1));
            (k > 0).then(|| s / k as f64)
        };
        row.and_then(|i| mean_over(&|t| t.in_bag.binary_search(&i).is_err()))
            .or_else(|| mean_over(&|_| true))
            .expect("forest has trees")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn learns_step_function() {
        let mut r = rng::stream(1, &[0]);
        let x: Vec<Vec<f64>> = (0..600).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
        let y: Vec<f64> = x.iter().map(|v| if v[0] > 0.5 { 10.0 } else { 0.0 }).collect();
        let params = ForestParams {
            n_trees: 50,
            mtry: Some(2),
            ..ForestParams::default()
        };
        let f = fit_regression_forest(&x, &y, None, &params).unwrap();
        assert!(f.predict(&[0.9, 0.5]) > 9.0);
        assert!(f.predict(&[0.1, 0.5]) < 1.0);
    }

    #[test]
    fn constant_target_gives_constant_prediction() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let y = vec![3.5; 100];
        let f = fit_regression_forest(&x, &y, None, &ForestParams::default()).unwrap();
        assert!((f.predict(&[42.0]) - 3.5).abs() < 1e-12);
        assert!(f.trees.iter().all(|t| t.leaves.len() == 1));
    }

    #[test]
    fn weights_shift_leaf_means() {
        let x = vec![vec![0.0]; 4];
        let y = vec![0.0, 0.0, 0.0, 4.0];
        let w = vec![1.0, 1.0, 1.0, 3.0];
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            ..ForestParams::default()
        };
        let f = fit_regression_forest(&x, &y, Some(&w), &params).unwrap();
        assert!((f.predict(&[0.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![(i * 7 % 13) as f64, i as f64]).collect();
        let y: Vec<f64> = (0..200).map(|i| (i % 5) as f64).collect();
        let p = ForestParams {
            n_trees: 20,
            seed: 3,
            ..ForestParams::default()
        };
        let a = fit_regression_forest(&x, &y, None, &p).unwrap();
        let b = fit_regression_forest(&x, &y, None, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_bag_predictions_ignore_own_target() {
        let mut r = rng::stream(4, &[0]);
        let n = 300;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let params = ForestParams {
            n_trees: 100,
            leaf_min: 2,
            mtry: Some(2),
            seed: 1,
            ..ForestParams::default()
        };
        let f = fit_regression_forest(&x, &y, None, &params).unwrap();
        let corr = |pred: &[f64]| {
            let (my, mp) = (y.iter().sum::<f64>() / n as f64, pred.iter().sum::<f64>() / n as f64);
            let cov: f64 = y.iter().zip(pred).map(|(a, b)| (a - my) * (b - mp)).sum();
            let vy: f64 = y.iter().map(|a| (a - my).powi(2)).sum();
            let vp: f64 = pred.iter().map(|b| (b - mp).powi(2)).sum();
            cov / (vy * vp).sqrt()
        };
        let in_sample: Vec<f64> = (0..n).map(|i| f.predict(&x[i])).collect();
        let oob: Vec<f64> = (0..n).map(|i| f.predict_at(&x[i], Some(i))).collect();
        assert!(corr(&in_sample) > 0.3, "{}", corr(&in_sample));
        assert!(corr(&oob) < 0.15, "{}", corr(&oob));
    }
}
