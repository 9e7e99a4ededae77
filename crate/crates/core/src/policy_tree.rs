//! Purity-maximising policy trees grown on CAIPW matrices.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::caipw::CaipwMatrix;
use crate::error::{Error, Result};
use crate::stats;

pub const TREE_VERSION: u32 = 1;

fn default_n0() -> usize {
    20
}

fn default_depth() -> usize {
    4
}

fn default_grid() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    /// Minimum child size.
    #[serde(default = "default_n0")]
    pub n0: usize,
    /// Minimum purity improvement; `None` means 1% of the range of the
    /// root's column means.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Maximum depth, counting the root as depth 1.
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    /// Maximum number of candidate thresholds per feature and node.
    #[serde(default = "default_grid")]
    pub threshold_grid: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n0: default_n0(),
            lambda: None,
            max_depth: default_depth(),
            threshold_grid: default_grid(),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n0 == 0 {
            return Err(Error::config("tree.n0: must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(Error::config("tree.max_depth: must be at least 1"));
        }
        if self.threshold_grid == 0 {
            return Err(Error::config("tree.threshold_grid: must be at least 1"));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) {
                return Err(Error::config("tree.lambda: must be non-negative"));
            }
        }
        Ok(())
    }

    /// Resolves an automatic `lambda` against the root matrix.
    pub fn resolve_lambda(&self, m: &CaipwMatrix) -> f64 {
        self.lambda.unwrap_or_else(|| {
            let means = m.column_means();
            let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
            0.01 * (hi - lo)
        })
    }
}

/// Best single-arm mean over the node's rows; ties go to the lowest arm.
pub fn node_value(ids: &[usize], m: &CaipwMatrix) -> Result<(f64, usize)> {
    if ids.is_empty() {
        return Err(Error::arg("node value of an empty node"));
    }
    let n = ids.len() as f64;
    let mut best = (f64::NEG_INFINITY, 0);
    for a in 0..m.arity {
        let mut s = 0.0;
        for &i in ids {
            s += m.get(i, a);
        }
        let v = s / n;
        if v > best.0 {
            best = (v, a);
        }
    }
    Ok(best)
}

/// `(|L| v(L) + |R| v(R)) / |P| - v(P)`.
pub fn purity_improvement(parent: &[usize], left: &[usize], right: &[usize], m: &CaipwMatrix) -> Result<f64> {
    if left.is_empty() || right.is_empty() || left.len() + right.len() != parent.len() {
        return Err(Error::arg("split children must be non-empty and partition the parent"));
    }
    let mut seen = vec![false; m.n_rows()];
    for &i in parent {
        seen[i] = true;
    }
    for &i in left.iter().chain(right) {
        if !std::mem::replace(&mut seen[i], false) {
            return Err(Error::arg("split children must be disjoint subsets of the parent"));
        }
    }
    Ok(improvement_unchecked(parent, left, right, m))
}

fn improvement_unchecked(parent: &[usize], left: &[usize], right: &[usize], m: &CaipwMatrix) -> f64 {
    let (vp, _) = node_value(parent, m).expect("non-empty");
    let (vl, _) = node_value(left, m).expect("non-empty");
    let (vr, _) = node_value(right, m).expect("non-empty");
    (left.len() as f64 * vl + right.len() as f64 * vr) / parent.len() as f64 - vp
}

/// Candidate thresholds of one feature within a node.
pub fn candidate_thresholds(values: &[f64], grid: usize) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut distinct = v.clone();
    distinct.dedup();
    if distinct.len() < 2 {
        return Vec::new();
    }
    if distinct.len() <= grid {
        return distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let max = *distinct.last().expect("non-empty");
    let mut out: Vec<f64> = (1..=grid)
        .map(|j| stats::quantile_sorted(&v, j as f64 / (grid + 1) as f64))
        .filter(|&t| t < max)
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub improvement: f64,
}

/// Best admissible split of a node, or `None` when the node is too small,
/// no split leaves both children with `n0` rows, or no improvement exceeds
/// `lambda`. `ids` must be ascending.
pub fn best_split(
    ids: &[usize],
    x: &[Vec<f64>],
    features: &[usize],
    m: &CaipwMatrix,
    hp: &Hyperparams,
    lambda: f64,
) -> Option<Split> {
    if ids.len() < 2 * hp.n0 {
        return None;
    }
    let per_feature: Vec<Option<Split>> = features
        .par_iter()
        .map(|&f| {
            let vals: Vec<f64> = ids.iter().map(|&i| x[i][f]).collect();
            let mut best: Option<Split> = None;
            let mut left = Vec::with_capacity(ids.len());
            let mut right = Vec::with_capacity(ids.len());
            for thr in candidate_thresholds(&vals, hp.threshold_grid) {
                left.clear();
                right.clear();
                for &i in ids {
                    if x[i][f] <= thr {
                        left.push(i);
                    } else {
                        right.push(i);
                    }
                }
                if left.len() < hp.n0 || right.len() < hp.n0 {
                    continue;
                }
                let imp = improvement_unchecked(ids, &left, &right, m);
                if best.is_none_or(|b| imp > b.improvement) {
                    best = Some(Split {
                        feature: f,
                        threshold: thr,
                        improvement: imp,
                    });
                }
            }
            best
        })
        .collect();
    let mut best: Option<Split> = None;
    for s in per_feature.into_iter().flatten() {
        let better = match best {
            None => true,
            Some(b) => {
                s.improvement > b.improvement
                    || (s.improvement == b.improvement
                        && (s.feature, s.threshold) < (b.feature, b.threshold))
            }
        };
        if better {
            best = Some(s);
        }
    }
    best.filter(|s| s.improvement > lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PolicyNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n: usize,
        improvement: f64,
    },
    Leaf {
        arm: usize,
        value: f64,
        n: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTree {
    pub version: u32,
    pub arity: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub hyperparams: Hyperparams,
    /// The `lambda` actually applied.
    pub lambda: f64,
    /// Node 0 is the root.
    pub nodes: Vec<PolicyNode>,
}

/// Grows a tree on matrix rows `0..m.n_rows()`; `x[i]` is row `i`'s history.
pub fn grow(
    x: &[Vec<f64>],
    features: &[usize],
    m: &CaipwMatrix,
    hp: &Hyperparams,
    feature_names: &[String],
) -> Result<PolicyTree> {
    hp.validate()?;
    if m.n_rows() == 0 {
        return Err(Error::arg("cannot grow a tree on an empty node"));
    }
    if x.len() != m.n_rows() {
        return Err(Error::arg("histories misaligned with the CAIPW matrix"));
    }
    let n_features = x[0].len();
    if let Some(f) = features.iter().find(|&&f| f >= n_features) {
        return Err(Error::arg(format!("feature {f} outside history")));
    }
    let lambda = hp.resolve_lambda(m);
    let mut nodes = vec![PolicyNode::Leaf {
        arm: 0,
        value: 0.0,
        n: 0,
    }];
    let mut stack = vec![(0usize, (0..m.n_rows()).collect::<Vec<usize>>(), 1usize)];
    while let Some((at, ids, depth)) = stack.pop() {
        let split = if depth < hp.max_depth {
            best_split(&ids, x, features, m, hp, lambda)
        } else {
            None
        };
        match split {
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    ids.iter().partition(|&&i| x[i][s.feature] <= s.threshold);
                let left = nodes.len();
                let placeholder = PolicyNode::Leaf {
                    arm: 0,
                    value: 0.0,
                    n: 0,
                };
                nodes.push(placeholder.clone());
                nodes.push(placeholder);
                nodes[at] = PolicyNode::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right: left + 1,
                    n: ids.len(),
                    improvement: s.improvement,
                };
                stack.push((left + 1, r, depth + 1));
                stack.push((left, l, depth + 1));
            }
            None => {
                let (value, arm) = node_value(&ids, m)?;
                nodes[at] = PolicyNode::Leaf {
                    arm,
                    value,
                    n: ids.len(),
                };
            }
        }
    }
    let names = if feature_names.len() == n_features {
        feature_names.to_vec()
    } else {
        (0..n_features).map(|j| format!("x{j}")).collect()
    };
    Ok(PolicyTree {
        version: TREE_VERSION,
        arity: m.arity,
        n_features,
        feature_names: names,
        hyperparams: *hp,
        lambda,
        nodes,
    })
}

impl PolicyTree {
    /// A single leaf recommending `arm`.
    pub fn constant(arm: usize, arity: usize, n_features: usize) -> Self {
        Self {
            version: TREE_VERSION,
            arity,
            n_features,
            feature_names: (0..n_features).map(|j| format!("x{j}")).collect(),
            hyperparams: Hyperparams::default(),
            lambda: 0.0,
            nodes: vec![PolicyNode::Leaf {
                arm,
                value: 0.0,
                n: 0,
            }],
        }
    }

    pub fn predict(&self, h: &[f64]) -> Result<usize> {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                PolicyNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    let v = *h.get(feature).ok_or_else(|| {
                        Error::arg(format!("history has no feature {feature}"))
                    })?;
                    at = if v <= threshold { left } else { right };
                }
                PolicyNode::Leaf { arm, .. } => return Ok(arm),
            }
        }
    }

    pub fn depth(&self) -> usize {
        self.node_depths().into_iter().max().unwrap_or(0)
    }

    /// Depth of every node (root = 1).
    pub fn node_depths(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes.len()];
        d[0] = 1;
        for i in 0..self.nodes.len() {
            if let PolicyNode::Split { left, right, .. } = self.nodes[i] {
                d[left] = d[i] + 1;
                d[right] = d[i] + 1;
            }
        }
        d
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, PolicyNode::Leaf { .. }))
            .count()
    }

    /// Stopping-rule violations; empty for a compliant tree.
    pub fn audit(&self) -> Vec<String> {
        let hp = &self.hyperparams;
        let mut out = Vec::new();
        for (i, (node, depth)) in self.nodes.iter().zip(self.node_depths()).enumerate() {
            if depth > hp.max_depth {
                out.push(format!("node {i}: depth {depth} exceeds max_depth {}", hp.max_depth));
            }
            match *node {
                PolicyNode::Leaf { n, .. } if n < hp.n0 && self.nodes.len() > 1 => {
                    out.push(format!("node {i}: leaf with {n} < n0 = {} subjects", hp.n0));
                }
                PolicyNode::Split { n, improvement, .. } => {
                    if n < 2 * hp.n0 {
                        out.push(format!("node {i}: split of {n} < 2 n0 subjects"));
                    }
                    if !(improvement > self.lambda) {
                        out.push(format!(
                            "node {i}: improvement {improvement} not above lambda {}",
                            self.lambda
                        ));
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let found = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
        if found != TREE_VERSION {
            return Err(Error::Version {
                expected: TREE_VERSION,
                found,
            });
        }
        let tree: PolicyTree = serde_json::from_value(v)?;
        tree.check()?;
        Ok(tree)
    }

    fn check(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Schema("policy tree has no nodes".into()));
        }
        for node in &self.nodes {
            match *node {
                PolicyNode::Split {
                    feature, left, right, ..
                } => {
                    if feature >= self.n_features || left >= self.nodes.len() || right >= self.nodes.len() {
                        return Err(Error::Schema("policy tree node out of range".into()));
                    }
                }
                PolicyNode::Leaf { arm, .. } => {
                    if arm >= self.arity {
                        return Err(Error::Schema(format!("leaf arm {arm} outside 0..{}", self.arity)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Indented if/else listing of the rules.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_node(0, 0, &mut out);
        out
    }

    fn render_node(&self, at: usize, indent: usize, out: &mut String) {
        let pad = "  ".repeat(indent);
        match self.nodes[at] {
            PolicyNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                let name = &self.feature_names[feature];
                let _ = writeln!(out, "{pad}if {name} <= {threshold:.4}:");
                self.render_node(left, indent + 1, out);
                let _ = writeln!(out, "{pad}else:");
                self.render_node(right, indent + 1, out);
            }
            PolicyNode::Leaf { arm, value, n } => {
                let _ = writeln!(out, "{pad}arm {arm}  (n = {n}, value = {value:.4})");
            }
        }
    }
}
