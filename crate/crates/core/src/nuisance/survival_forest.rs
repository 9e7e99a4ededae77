//! Random survival forests with log-rank splitting. Predictions are
//! product-limit curves of the training rows weighted by leaf co-membership.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain, StreamRng};

pub const FOREST_VERSION: u32 = 3;

fn default_trees() -> usize {
    200
}

fn default_leaf_min() -> usize {
    15
}

fn default_candidates() -> usize {
    10
}

fn default_true() -> bool {
    true
}

/// Hyperparameters shared by survival and regression forests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    #[serde(default = "default_trees")]
    pub n_trees: usize,
    #[serde(default = "default_leaf_min")]
    pub leaf_min: usize,
    /// Features tried per node; `None` means `ceil(sqrt(p))`.
    #[serde(default)]
    pub mtry: Option<usize>,
    /// Random thresholds tried per feature in survival trees; 0 tries every
    /// distinct value.
    #[serde(default = "default_candidates")]
    pub split_candidates: usize,
    #[serde(default = "default_true")]
    pub bootstrap: bool,
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: default_trees(),
            leaf_min: default_leaf_min(),
            mtry: None,
            split_candidates: default_candidates(),
            bootstrap: true,
            max_depth: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::config("forest.n_trees: must be at least 1"));
        }
        if self.leaf_min == 0 {
            return Err(Error::config("forest.leaf_min: must be at least 1"));
        }
        if self.mtry == Some(0) {
            return Err(Error::config("forest.mtry: must be at least 1"));
        }
        if self.max_depth == Some(0) {
            return Err(Error::config("forest.max_depth: must be at least 1"));
        }
        Ok(())
    }

    pub fn mtry_for(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Model the recorded events.
    Event,
    /// Model censoring: indicators are flipped before fitting.
    Censoring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf: usize,
    },
}

pub(crate) fn route(nodes: &[Node], x: &[f64]) -> usize {
    let mut at = 0;
    loop {
        match nodes[at] {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => at = if x[feature] <= threshold { left } else { right },
            Node::Leaf { leaf } => return leaf,
        }
    }
}

/// Training rows (with bootstrap multiplicity) that landed in one leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub members: Vec<usize>,
}

impl Leaf {
    pub fn count(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTree {
    pub nodes: Vec<Node>,
    pub leaves: Vec<Leaf>,
    /// Distinct training rows drawn for this tree, ascending.
    pub in_bag: Vec<usize>,
}

impl SurvivalTree {
    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
                Node::Leaf { .. } => 1,
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalForest {
    pub version: u32,
    pub n_features: usize,
    pub orientation: Orientation,
    pub params: ForestParams,
    pub trees: Vec<SurvivalTree>,
    /// Training times and (oriented) event flags, and the rows in time order.
    pub time: Vec<f64>,
    pub event: Vec<bool>,
    order: Vec<usize>,
    /// Harrell's concordance of out-of-bag predictions, when computable.
    pub oob_concordance: Option<f64>,
}

/// Borrowed training data: covariate rows, times and recorded event flags.
#[derive(Debug, Clone, Copy)]
pub struct SurvivalData<'a> {
    pub x: &'a [Vec<f64>],
    pub time: &'a [f64],
    pub event: &'a [bool],
}

impl SurvivalData<'_> {
    fn check(&self) -> Result<usize> {
        let n = self.x.len();
        if n != self.time.len() || n != self.event.len() {
            return Err(Error::arg("survival data columns differ in length"));
        }
        let p = self.x.first().map_or(0, Vec::len);
        if self.x.iter().any(|r| r.len() != p) {
            return Err(Error::arg("ragged covariate rows"));
        }
        if self.time.iter().any(|t| !(*t >= 0.0) || t.is_infinite()) {
            return Err(Error::arg("survival times must be finite and non-negative"));
        }
        Ok(p)
    }
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    time: &'a [f64],
    event: Vec<bool>,
    params: ForestParams,
    p: usize,
}

impl Grower<'_> {
    fn leaf(&self, idx: &[usize]) -> Leaf {
        let mut members = idx.to_vec();
        members.sort_unstable();
        Leaf { members }
    }

    /// Log-rank chi-square statistic for the partition `left` of time-sorted `idx`.
    fn log_rank(&self, idx: &[usize], left: &[bool], n_left: usize) -> f64 {
        let mut n = idx.len() as f64;
        let mut nl = n_left as f64;
        let mut num = 0.0;
        let mut var = 0.0;
        let mut i = 0;
        while i < idx.len() {
            let t = self.time[idx[i]];
            let (mut d, mut dl, mut out, mut out_l) = (0.0, 0.0, 0.0, 0.0);
            while i < idx.len() && self.time[idx[i]] == t {
                let is_left = left[i];
                if self.event[idx[i]] {
                    d += 1.0;
                    if is_left {
                        dl += 1.0;
                    }
                }
                out += 1.0;
                if is_left {
                    out_l += 1.0;
                }
                i += 1;
            }
            if d > 0.0 {
                num += dl - nl * d / n;
                if n > 1.0 {
                    var += nl / n * (1.0 - nl / n) * (n - d) / (n - 1.0) * d;
                }
            }
            n -= out;
            nl -= out_l;
        }
        if var <= 0.0 {
            0.0
        } else {
            num * num / var
        }
    }

    fn best_split(&self, idx: &[usize], rng: &mut StreamRng) -> Option<(usize, f64)> {
        if !idx.iter().any(|&i| self.event[i]) {
            return None;
        }
        let mtry = self.params.mtry_for(self.p);
        let feats = index::sample(rng, self.p, mtry).into_vec();
        let leaf_min = self.params.leaf_min;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut left = vec![false; idx.len()];
        for f in feats {
            let mut vals: Vec<f64> = idx.iter().map(|&i| self.x[i][f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            if vals.len() < 2 {
                continue;
            }
            let splittable = &vals[..vals.len() - 1];
            let candidates: Vec<f64> = if self.params.split_candidates == 0
                || splittable.len() <= self.params.split_candidates
            {
                splittable.to_vec()
            } else {
                (0..self.params.split_candidates)
                    .map(|_| splittable[rng.random_range(0..splittable.len())])
                    .collect()
            };
            for thr in candidates {
                let mut n_left = 0;
                for (k, &i) in idx.iter().enumerate() {
                    left[k] = self.x[i][f] <= thr;
                    n_left += left[k] as usize;
                }
                if n_left < leaf_min || idx.len() - n_left < leaf_min {
                    continue;
                }
                let stat = self.log_rank(idx, &left, n_left);
                let better = match best {
                    None => stat > 0.0,
                    Some((s, bf, bt)) => stat > s || (stat == s && (f, thr) < (bf, bt)),
                };
                if better {
                    best = Some((stat, f, thr));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&self, sample: Vec<usize>, rng: &mut StreamRng) -> SurvivalTree {
        let mut root = sample;
        root.sort_by(|&a, &b| self.time[a].total_cmp(&self.time[b]).then(a.cmp(&b)));
        let mut nodes = vec![Node::Leaf { leaf: usize::MAX }];
        let mut leaves = Vec::new();
        let mut stack = vec![(0usize, root, 1usize)];
        while let Some((at, idx, depth)) = stack.pop() {
            let can_split = idx.len() >= 2 * self.params.leaf_min
                && self.params.max_depth.is_none_or(|m| depth < m);
            let split = if can_split { self.best_split(&idx, rng) } else { None };
            match split {
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
                    leaves.push(self.leaf(&idx));
                }
            }
        }
        SurvivalTree {
            nodes,
            leaves,
            in_bag: Vec::new(),
        }
    }
}

pub(crate) fn distinct_sorted(sample: &[usize]) -> Vec<usize> {
    let mut v = sample.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

pub(crate) fn bootstrap_sample(n: usize, bootstrap: bool, rng: &mut StreamRng) -> Vec<usize> {
    if bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    }
}

/// Harrell's C for risk scores (higher = earlier failure); ties in risk count half.
pub fn concordance(time: &[f64], event: &[bool], risk: &[f64]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..time.len() {
        if !event[i] {
            continue;
        }
        for j in 0..time.len() {
            if time[i] < time[j] {
                den += 1.0;
                if risk[i] > risk[j] {
                    num += 1.0;
                } else if risk[i] == risk[j] {
                    num += 0.5;
                }
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Grows `params.n_trees` survival trees. Tree `b` draws from its own stream,
/// so the forest does not depend on the thread count.
pub fn fit_survival_forest(
    data: SurvivalData<'_>,
    orientation: Orientation,
    params: &ForestParams,
) -> Result<SurvivalForest> {
    params.validate()?;
    let p = data.check()?;
    let n = data.x.len();
    if n == 0 || n < 2 * params.leaf_min {
        return Err(Error::arg(format!(
            "survival forest needs at least {} subjects, got {n}",
            2 * params.leaf_min
        )));
    }
    let event: Vec<bool> = match orientation {
        Orientation::Event => data.event.to_vec(),
        Orientation::Censoring => data.event.iter().map(|e| !e).collect(),
    };
    let grower = Grower {
        x: data.x,
        time: data.time,
        event,
        params: *params,
        p,
    };
    let trees: Vec<SurvivalTree> = (0..params.n_trees)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(params.seed, &[domain::TREE, b as u64]);
            let sample = bootstrap_sample(n, params.bootstrap, &mut r);
            let mut tree = grower.grow(sample.clone(), &mut r);
            tree.in_bag = distinct_sorted(&sample);
            tree
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.time[a].total_cmp(&data.time[b]).then(a.cmp(&b)));
    let mut forest = SurvivalForest {
        version: FOREST_VERSION,
        n_features: p,
        orientation,
        params: *params,
        trees,
        time: data.time.to_vec(),
        event: grower.event,
        order,
        oob_concordance: None,
    };
    if params.bootstrap {
        let horizon = data.time.iter().cloned().fold(0.0, f64::max);
        let risk: Vec<Option<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let w = forest.weights(&data.x[i], |tr| !tr.in_bag.binary_search(&i).is_ok());
                w.map(|w| -forest.weighted_restricted_mean(&w, horizon))
            })
            .collect();
        let keep: Vec<usize> = (0..n).filter(|&i| risk[i].is_some()).collect();
        let t: Vec<f64> = keep.iter().map(|&i| forest.time[i]).collect();
        let e: Vec<bool> = keep.iter().map(|&i| forest.event[i]).collect();
        let r: Vec<f64> = keep.iter().filter_map(|&i| risk[i]).collect();
        forest.oob_concordance = concordance(&t, &e, &r);
    }
    Ok(forest)
}

impl SurvivalForest {
    /// Forest weights of the training rows for `x`: each tree spreads unit
    /// mass evenly over the members of the leaf `x` falls in. `None` when no
    /// tree passes `use_tree`.
    fn weights(&self, x: &[f64], use_tree: impl Fn(&SurvivalTree) -> bool) -> Option<Vec<f64>> {
        let mut w = vec![0.0; self.time.len()];
        let mut used = 0usize;
        for tr in &self.trees {
            if !use_tree(tr) {
                continue;
            }
            let leaf = &tr.leaves[route(&tr.nodes, x)];
            let share = 1.0 / leaf.members.len() as f64;
            for &i in &leaf.members {
                w[i] += share;
            }
            used += 1;
        }
        (used > 0).then_some(w)
    }

    /// Calls `visit(t, s)` at each event time of the weighted product-limit
    /// curve, in increasing order, until it returns false.
    fn walk(&self, w: &[f64], mut visit: impl FnMut(f64, f64) -> bool) {
        let mut at_risk: f64 = w.iter().sum();
        let mut surv = 1.0;
        let mut j = 0;
        let n = self.order.len();
        while j < n {
            let t = self.time[self.order[j]];
            let mut d = 0.0;
            let mut leaving = 0.0;
            while j < n && self.time[self.order[j]] == t {
                let i = self.order[j];
                if self.event[i] {
                    d += w[i];
                }
                leaving += w[i];
                j += 1;
            }
            if d > 0.0 && at_risk > 0.0 {
                surv *= (1.0 - d / at_risk).max(0.0);
                if !visit(t, surv) {
                    return;
                }
            }
            at_risk -= leaving;
        }
    }

    fn weighted_survival(&self, w: &[f64], t: f64) -> f64 {
        let mut out = 1.0;
        self.walk(w, |s, v| {
            if s <= t {
                out = v;
                true
            } else {
                false
            }
        });
        out
    }

    fn weighted_restricted_mean(&self, w: &[f64], tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        let mut area = 0.0;
        let mut prev_t = 0.0;
        let mut prev_s = 1.0;
        self.walk(w, |t, s| {
            if t >= tau {
                return false;
            }
            area += prev_s * (t - prev_t);
            prev_t = t;
            prev_s = s;
            true
        });
        area + prev_s * (tau - prev_t)
    }

    /// Weights for `x`; when `row` is a training row, only the trees it was
    /// not drawn for are used (all trees if it was drawn for every one).
    fn weights_for(&self, x: &[f64], row: Option<usize>) -> Vec<f64> {
        row.and_then(|i| self.weights(x, |tr| tr.in_bag.binary_search(&i).is_err()))
            .or_else(|| self.weights(x, |_| true))
            .expect("forest has trees")
    }

    /// Product-limit curve of the training rows weighted by their forest
    /// weights for `x`; 1 for `t < 0`.
    pub fn predict_survival(&self, x: &[f64], t: f64) -> f64 {
        self.predict_survival_at(x, t, None)
    }

    /// As [`Self::predict_survival`]; `row` makes the prediction out-of-bag
    /// for that training row.
    pub fn predict_survival_at(&self, x: &[f64], t: f64, row: Option<usize>) -> f64 {
        self.weighted_survival(&self.weights_for(x, row), t)
    }

    /// `∫_0^tau` of the forest-weighted survival curve.
    pub fn restricted_mean(&self, x: &[f64], tau: f64) -> f64 {
        self.restricted_mean_at(x, tau, None)
    }

    pub fn restricted_mean_at(&self, x: &[f64], tau: f64, row: Option<usize>) -> f64 {
        self.weighted_restricted_mean(&self.weights_for(x, row), tau)
            .clamp(0.0, tau.max(0.0))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let found = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
        if found != FOREST_VERSION {
            return Err(Error::Version {
                expected: FOREST_VERSION,
                found,
            });
        }
        Ok(serde_json::from_value(v)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::km::fit_km;
    use rand_distr::{Distribution, Exp1};

    fn noise_data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<bool>) {
        let mut r = rng::stream(seed, &[0]);
        let x = (0..n).map(|_| (0..4).map(|_| r.random::<f64>()).collect()).collect();
        let t = (0..n).map(|_| Exp1.sample(&mut r)).collect();
        let e = (0..n).map(|_| r.random::<f64>() < 0.8).collect();
        (x, t, e)
    }

    fn small(seed: u64) -> ForestParams {
        ForestParams {
            n_trees: 60,
            seed,
            ..ForestParams::default()
        }
    }

    #[test]
    fn pure_noise_has_chance_concordance() {
        let (x, t, e) = noise_data(600, 3);
        let data = SurvivalData { x: &x, time: &t, event: &e };
        let f = fit_survival_forest(data, Orientation::Event, &small(1)).unwrap();
        let c = f.oob_concordance.unwrap();
        assert!((c - 0.5).abs() < 0.05, "{c}");
    }

    #[test]
    fn ordering_covariate_gives_high_concordance() {
        let mut r = rng::stream(5, &[0]);
        let n = 500;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
        let t: Vec<f64> = x.iter().map(|v| 1.0 + 10.0 * v[0]).collect();
        let e = vec![true; n];
        let data = SurvivalData { x: &x, time: &t, event: &e };
        let f = fit_survival_forest(data, Orientation::Event, &small(2)).unwrap();
        assert!(f.oob_concordance.unwrap() > 0.9, "{:?}", f.oob_concordance);
    }

    #[test]
    fn same_seed_same_serialization() {
        let (x, t, e) = noise_data(200, 9);
        let data = SurvivalData { x: &x, time: &t, event: &e };
        let a = fit_survival_forest(data, Orientation::Censoring, &small(4)).unwrap();
        let b = fit_survival_forest(data, Orientation::Censoring, &small(4)).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let back = SurvivalForest::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn prediction_contracts() {
        let (x, t, e) = noise_data(300, 11);
        let data = SurvivalData { x: &x, time: &t, event: &e };
        let f = fit_survival_forest(data, Orientation::Event, &small(6)).unwrap();
        let h = &x[0];
        assert_eq!(f.predict_survival(h, 0.0), 1.0);
        let tmax = t.iter().cloned().fold(0.0, f64::max);
        assert_eq!(f.predict_survival(h, tmax), f.predict_survival(h, tmax * 10.0));
        let mut prev = 1.0;
        for k in 0..50 {
            let s = f.predict_survival(h, k as f64 * 0.1);
            assert!(s <= prev && (0.0..=1.0).contains(&s));
            prev = s;
        }
    }

    #[test]
    fn single_leaf_matches_pooled_km() {
        let (x, t, e) = noise_data(2000, 13);
        let data = SurvivalData { x: &x, time: &t, event: &e };
        let params = ForestParams {
            n_trees: 50,
            max_depth: Some(1),
            seed: 3,
            ..ForestParams::default()
        };
        let f = fit_survival_forest(data, Orientation::Event, &params).unwrap();
        assert!(f.trees.iter().all(|tr| tr.leaves.len() == 1));
        let km = fit_km(&t, &e).unwrap();
        let sup = (0..400)
            .map(|k| k as f64 * 0.01)
            .map(|s| (f.predict_survival(&x[0], s) - km.at(s)).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.02, "{sup}");
    }

    #[test]
    fn leaf_curves_reach_zero() {
        // One group dies immediately, the other at time 10.
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![(i % 2) as f64]).collect();
        let t: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.0 } else { 10.0 }).collect();
        let e = vec![true; 100];
        let data = SurvivalData { x: &x, time: &t, event: &e };
        let f = fit_survival_forest(data, Orientation::Event, &small(5)).unwrap();
        let early = f.restricted_mean(&[0.0], 20.0);
        let late = f.restricted_mean(&[1.0], 20.0);
        assert!(early < 1.0, "{early}");
        assert!((late - 10.0).abs() < 1.0, "{late}");
    }

    #[test]
    fn out_of_bag_predictions_are_honest() {
        // Covariates carry no signal, so every row's survival is the pooled
        // curve; in-sample fits drift toward each row's own outcome.
        let (x, t, e) = noise_data(400, 21);
        let data = SurvivalData { x: &x, time: &t, event: &e };
        let params = ForestParams {
            leaf_min: 3,
            mtry: Some(4),
            ..small(7)
        };
        let f = fit_survival_forest(data, Orientation::Event, &params).unwrap();
        let km = fit_km(&t, &e).unwrap();
        let at = 0.7;
        let gap = |row: Option<usize>| {
            let rows: Vec<usize> = (0..400).filter(|&i| t[i] > at).collect();
            rows.iter()
                .map(|&i| f.predict_survival_at(&x[i], at, row.map(|_| i)) - km.at(at))
                .sum::<f64>()
                / rows.len() as f64
        };
        let in_sample = gap(None);
        let oob = gap(Some(0));
        assert!(in_sample > 0.03, "{in_sample}");
        assert!(oob.abs() < in_sample / 2.0, "{oob} vs {in_sample}");
    }

    #[test]
    fn leaves_respect_leaf_min() {
        let (x, t, e) = noise_data(400, 17);
        let data = SurvivalData { x: &x, time: &t, event: &e };
        let f = fit_survival_forest(data, Orientation::Event, &small(8)).unwrap();
        for tr in &f.trees {
            assert!(tr.leaves.iter().all(|l| l.count() >= 15));
        }
    }

    #[test]
    fn degenerate_data_gives_single_leaves() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let t = vec![2.0; 40];
        let e = vec![true; 40];
        let data = SurvivalData { x: &x, time: &t, event: &e };
        let f = fit_survival_forest(data, Orientation::Event, &small(1)).unwrap();
        assert!(f.trees.iter().all(|tr| tr.leaves.len() == 1));
    }

    #[test]
    fn too_few_subjects() {
        let (x, t, e) = noise_data(10, 1);
        let data = SurvivalData { x: &x, time: &t, event: &e };
        assert!(fit_survival_forest(data, Orientation::Event, &small(1)).is_err());
    }
}
