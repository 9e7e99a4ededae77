//! Multinomial logistic regression for treatment propensities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convergence threshold on the max-norm of the gradient of the mean
/// penalised log-likelihood.
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropensityClip {
    pub lower: f64,
    pub upper: f64,
}

impl Default for PropensityClip {
    fn default() -> Self {
        Self {
            lower: 0.01,
            upper: 0.99,
        }
    }
}

/// Softmax regression with arm 0 as reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub arity: usize,
    /// History positions used as features.
    pub features: Vec<usize>,
    /// `(arity - 1)` rows of `[intercept, slopes...]`.
    pub coefficients: Vec<Vec<f64>>,
}

fn design_row(h: &[f64], features: &[usize]) -> Vec<f64> {
    let mut x = Vec::with_capacity(features.len() + 1);
    x.push(1.0);
    x.extend(features.iter().map(|&j| h[j]));
    x
}

fn softmax_row(coefs: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut logits = Vec::with_capacity(coefs.len() + 1);
    logits.push(0.0);
    for row in coefs {
        logits.push(row.iter().zip(x).map(|(b, v)| b * v).sum());
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

impl PropensityModel {
    /// Unclipped class probabilities.
    pub fn predict_raw(&self, h: &[f64]) -> Vec<f64> {
        softmax_row(&self.coefficients, &design_row(h, &self.features))
    }

    /// Probabilities clipped to `[clip.lower, clip.upper]`, then renormalised.
    pub fn predict(&self, h: &[f64], clip: PropensityClip) -> Vec<f64> {
        clip_and_renormalize(&self.predict_raw(h), clip)
    }
}

pub fn clip_and_renormalize(p: &[f64], clip: PropensityClip) -> Vec<f64> {
    let c: Vec<f64> = p.iter().map(|v| v.clamp(clip.lower, clip.upper)).collect();
    let s: f64 = c.iter().sum();
    c.into_iter().map(|v| v / s).collect()
}

fn objective(coefs: &[Vec<f64>], xs: &[Vec<f64>], y: &[usize], ridge: f64) -> f64 {
    let n = xs.len() as f64;
    let mut ll = 0.0;
    for (x, &a) in xs.iter().zip(y) {
        let p = softmax_row(coefs, x);
        ll += p[a].max(f64::MIN_POSITIVE).ln();
    }
    let pen: f64 = coefs
        .iter()
        .map(|r| r[1..].iter().map(|b| b * b).sum::<f64>())
        .sum();
    ll / n - 0.5 * ridge * pen / n
}

/// Fits the ridge-penalised multinomial logit by damped Newton iterations.
///
/// `ridge` penalises slopes (not intercepts) with `ridge / 2 * ||beta||^2`
/// added to the negative log-likelihood.
pub fn fit_propensity(
    histories: &[Vec<f64>],
    treatments: &[usize],
    arity: usize,
    features: &[usize],
    ridge: f64,
) -> Result<PropensityModel> {
    if histories.len() != treatments.len() {
        return Err(Error::arg("histories and treatments differ in length"));
    }
    if arity < 2 {
        return Err(Error::arg("propensity model needs at least two arms"));
    }
    let mut counts = vec![0usize; arity];
    for &a in treatments {
        if a >= arity {
            return Err(Error::arg(format!("treatment {a} outside 0..{arity}")));
        }
        counts[a] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Positivity(format!("treatment arm {missing} never observed")));
    }
    if let Some(&j) = histories
        .first()
        .and_then(|h| features.iter().find(|&&j| j >= h.len()))
    {
        return Err(Error::arg(format!("feature index {j} outside history")));
    }

    let xs: Vec<Vec<f64>> = histories.iter().map(|h| design_row(h, features)).collect();
    let d = features.len() + 1;
    let m = arity - 1;
    let n = xs.len() as f64;
    let mut coefs = vec![vec![0.0; d]; m];
    let dim = m * d;

    for _ in 0..MAX_ITER {
        let mut grad = DVector::<f64>::zeros(dim);
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        for (x, &a) in xs.iter().zip(treatments) {
            let p = softmax_row(&coefs, x);
            for j in 0..m {
                let yj = if a == j + 1 { 1.0 } else { 0.0 };
                let r = yj - p[j + 1];
                for u in 0..d {
                    grad[j * d + u] += r * x[u];
                }
                for l in 0..m {
                    let w = if j == l {
                        p[j + 1] * (1.0 - p[j + 1])
                    } else {
                        -p[j + 1] * p[l + 1]
                    };
                    if w == 0.0 {
                        continue;
                    }
                    for u in 0..d {
                        let wu = w * x[u];
                        for v in 0..d {
                            hess[(j * d + u, l * d + v)] += wu * x[v];
                        }
                    }
                }
            }
        }
        for j in 0..m {
            for u in 1..d {
                grad[j * d + u] -= ridge * coefs[j][u];
                hess[(j * d + u, j * d + u)] += ridge;
            }
        }
        let gnorm = grad.amax() / n;
        if gnorm < GRADIENT_TOLERANCE {
            return Ok(PropensityModel {
                arity,
                features: features.to_vec(),
                coefficients: coefs,
            });
        }
        // hess holds the negative Hessian (positive semi-definite).
        let mut jitter = 0.0;
        let step = loop {
            let mut h = hess.clone();
            if jitter > 0.0 {
                for i in 0..dim {
                    h[(i, i)] += jitter;
                }
            }
            if let Some(ch) = h.cholesky() {
                break ch.solve(&grad);
            }
            jitter = if jitter == 0.0 { 1e-10 * n } else { jitter * 10.0 };
            if jitter > 1e6 * n {
                return Err(Error::Numerical("propensity Hessian is singular".into()));
            }
        };
        let base = objective(&coefs, &xs, treatments, ridge);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<Vec<f64>> = (0..m)
                .map(|j| (0..d).map(|u| coefs[j][u] + t * step[j * d + u]).collect())
                .collect();
            if objective(&trial, &xs, treatments, ridge) >= base - 1e-15 * base.abs() {
                coefs = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::Numerical(
        "multinomial logistic regression did not converge (separable data? raise ridge)".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn simulate(beta: &[Vec<f64>], n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut r = rng::stream(seed, &[1]);
        let p = beta[0].len() - 1;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let h: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut r)).collect();
            let probs = softmax_row(beta, &design_row(&h, &(0..p).collect::<Vec<_>>()));
            let u: f64 = r.random();
            let mut acc = 0.0;
            let mut a = probs.len() - 1;
            for (k, q) in probs.iter().enumerate() {
                acc += q;
                if u < acc {
                    a = k;
                    break;
                }
            }
            xs.push(h);
            ys.push(a);
        }
        (xs, ys)
    }

    #[test]
    fn recovers_generating_coefficients() {
        let beta = vec![vec![0.3, 0.8, -0.5], vec![-0.2, 0.4, 0.6]];
        let (xs, ys) = simulate(&beta, 20_000, 4);
        let m = fit_propensity(&xs, &ys, 3, &[0, 1], 1e-8).unwrap();
        for (row, truth) in m.coefficients.iter().zip(&beta) {
            for (b, t) in row.iter().zip(truth) {
                assert!((b - t).abs() < 0.05, "{b} vs {t}");
            }
        }
    }

    #[test]
    fn error_shrinks_with_sample_size() {
        let beta = vec![vec![0.2, 0.7]];
        let err = |n| {
            let (xs, ys) = simulate(&beta, n, 8);
            let m = fit_propensity(&xs, &ys, 2, &[0], 1e-8).unwrap();
            m.coefficients[0]
                .iter()
                .zip(&beta[0])
                .map(|(b, t)| (b - t).abs())
                .fold(0.0, f64::max)
        };
        let (small, large) = (err(2_000), err(20_000));
        assert!(large < 0.05 && small < 0.2, "{small} {large}");
    }

    #[test]
    fn no_signal_gives_flat_slope() {
        let xs: Vec<Vec<f64>> = (0..400).map(|i| vec![(i / 2) as f64 * 0.01]).collect();
        let ys: Vec<usize> = (0..400).map(|i| i % 2).collect();
        let m = fit_propensity(&xs, &ys, 2, &[0], 0.0).unwrap();
        assert!(m.coefficients[0][1].abs() < 1e-6, "{:?}", m.coefficients);
    }

    #[test]
    fn missing_arm_is_positivity_error() {
        let xs = vec![vec![1.0], vec![2.0]];
        let e = fit_propensity(&xs, &[0, 0], 2, &[0], 0.0).unwrap_err();
        assert!(e.to_string().contains("positivity"), "{e}");
    }

    #[test]
    fn prediction_contracts() {
        let zero = PropensityModel {
            arity: 3,
            features: vec![0],
            coefficients: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        };
        let p = zero.predict(&[5.0], PropensityClip::default());
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));

        let steep = PropensityModel {
            arity: 2,
            features: vec![0],
            coefficients: vec![vec![0.0, 1.0]],
        };
        assert!(steep.predict_raw(&[21.0])[1] > 1.0 - 1e-9);
        let p = steep.predict(&[21.0], PropensityClip::default());
        assert!(p[1] <= 0.99 + 1e-12 && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let p = steep.predict(&[0.4], PropensityClip::default());
        let e = 0.4f64.exp();
        assert!((p[1] - e / (1.0 + e)).abs() < 1e-12);
        assert!((p[0] - 0.4013).abs() < 1e-4);
    }
}
