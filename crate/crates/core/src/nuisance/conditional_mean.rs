//! Conditional mean outcome models `mu_{k,a}(h)`.

use serde::{Deserialize, Serialize};

use super::regression_forest::{fit_regression_forest, RegressionForest};
use super::survival_forest::{fit_survival_forest, ForestParams, Orientation, SurvivalData, SurvivalForest};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MeanForest {
    /// Residual-time survival forest; predictions are tau-restricted means.
    Survival { forest: SurvivalForest },
    /// Regression of a real-valued pseudo-outcome.
    Regression { forest: RegressionForest },
}

impl MeanForest {
    fn predict(&self, x: &[f64], elapsed: f64, tau: f64, row: Option<usize>) -> f64 {
        match self {
            MeanForest::Survival { forest } => {
                elapsed.clamp(0.0, tau) + forest.restricted_mean_at(x, tau - elapsed, row)
            }
            MeanForest::Regression { forest } => forest.predict_at(x, row).max(0.0),
        }
    }
}

/// One model per arm, falling back to a pooled model with the treatment as
/// an extra feature for arms with fewer than `min_arm_size` subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMeanModel {
    pub arity: usize,
    pub tau: f64,
    pub per_arm: Vec<Option<MeanForest>>,
    pub pooled: Option<MeanForest>,
    pub arm_sizes: Vec<usize>,
    /// Training rows of each arm, ascending.
    pub arm_rows: Vec<Vec<usize>>,
    /// Arm of each training row.
    pub treatments: Vec<usize>,
}

impl ConditionalMeanModel {
    /// `mu_a(h)`; `elapsed` is the time already survived before the stage.
    pub fn predict(&self, h: &[f64], elapsed: f64, a: usize) -> f64 {
        self.predict_at(h, elapsed, a, None)
    }

    /// As [`Self::predict`] for training row `row`: forests that saw the
    /// row predict it out-of-bag.
    pub fn predict_at(&self, h: &[f64], elapsed: f64, a: usize, row: Option<usize>) -> f64 {
        match (&self.per_arm[a], &self.pooled) {
            (Some(m), _) => {
                let r = row.filter(|&i| self.treatments[i] == a).map(|i| {
                    self.arm_rows[a]
                        .binary_search(&i)
                        .expect("training row listed under its arm")
                });
                m.predict(h, elapsed, self.tau, r)
            }
            (None, Some(m)) => {
                let mut x = h.to_vec();
                x.push(a as f64);
                m.predict(&x, elapsed, self.tau, row)
            }
            (None, None) => unreachable!("every arm has a model"),
        }
    }

    pub fn pooled_arms(&self) -> Vec<usize> {
        (0..self.arity).filter(|&a| self.per_arm[a].is_none()).collect()
    }
}

/// Training rows for a conditional mean model.
pub struct MeanData<'a> {
    pub x: &'a [Vec<f64>],
    pub treatments: &'a [usize],
    pub arity: usize,
}

pub enum MeanTarget<'a> {
    /// Residual survival `(time, event)` past the stage start.
    Survival { time: &'a [f64], event: &'a [bool] },
    /// Real-valued outcomes with optional weights.
    Regression { y: &'a [f64], weights: Option<&'a [f64]> },
}

fn fit_one(
    rows: &[usize],
    x: &[Vec<f64>],
    target: &MeanTarget<'_>,
    params: &ForestParams,
) -> Result<MeanForest> {
    let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
    match target {
        MeanTarget::Survival { time, event } => {
            let t = pick(time);
            let e: Vec<bool> = rows.iter().map(|&i| event[i]).collect();
            let data = SurvivalData { x, time: &t, event: &e };
            let leaf_min = params.leaf_min.min((rows.len() / 2).max(1));
            let params = ForestParams { leaf_min, ..*params };
            Ok(MeanForest::Survival {
                forest: fit_survival_forest(data, Orientation::Event, &params)?,
            })
        }
        MeanTarget::Regression { y, weights } => {
            let yy = pick(y);
            let ww = weights.map(|w| pick(w));
            Ok(MeanForest::Regression {
                forest: fit_regression_forest(x, &yy, ww.as_deref(), params)?,
            })
        }
    }
}

pub fn fit_conditional_mean(
    data: &MeanData<'_>,
    target: MeanTarget<'_>,
    tau: f64,
    params: &ForestParams,
    min_arm_size: usize,
) -> Result<ConditionalMeanModel> {
    let n = data.x.len();
    if data.treatments.len() != n {
        return Err(Error::arg("treatments and histories differ in length"));
    }
    if !(tau > 0.0) {
        return Err(Error::arg("tau must be positive"));
    }
    let mut arm_rows = vec![Vec::new(); data.arity];
    for (i, &a) in data.treatments.iter().enumerate() {
        arm_rows[a].push(i);
    }
    let arm_sizes: Vec<usize> = arm_rows.iter().map(Vec::len).collect();
    let mut per_arm = Vec::with_capacity(data.arity);
    for (a, rows) in arm_rows.iter().enumerate() {
        if rows.len() < min_arm_size.max(2) {
            per_arm.push(None);
            continue;
        }
        let x: Vec<Vec<f64>> = rows.iter().map(|&i| data.x[i].clone()).collect();
        let p = params.with_seed(rng::derive_seed(params.seed, &[a as u64]));
        per_arm.push(Some(fit_one(rows, &x, &target, &p)?));
    }
    let pooled = if per_arm.iter().any(Option::is_none) {
        if n < 2 {
            return Err(Error::arg("too few subjects for a pooled conditional mean model"));
        }
        let x: Vec<Vec<f64>> = data
            .x
            .iter()
            .zip(data.treatments)
            .map(|(h, &a)| {
                let mut v = h.clone();
                v.push(a as f64);
                v
            })
            .collect();
        let rows: Vec<usize> = (0..n).collect();
        let p = params.with_seed(rng::derive_seed(params.seed, &[u64::MAX]));
        Some(fit_one(&rows, &x, &target, &p)?)
    } else {
        None
    };
    Ok(ConditionalMeanModel {
        arity: data.arity,
        tau,
        per_arm,
        pooled,
        arm_sizes,
        arm_rows,
        treatments: data.treatments.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ForestParams {
        ForestParams {
            n_trees: 20,
            ..ForestParams::default()
        }
    }

    #[test]
    fn bounded_by_tau_and_monotone() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 10) as f64]).collect();
        let a: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let t: Vec<f64> = (0..200).map(|i| 1.0 + (i % 17) as f64).collect();
        let e = vec![true; 200];
        let data = MeanData { x: &x, treatments: &a, arity: 2 };
        let m = fit_conditional_mean(
            &data,
            MeanTarget::Survival { time: &t, event: &e },
            8.0,
            &params(),
            50,
        )
        .unwrap();
        for arm in 0..2 {
            let v = m.predict(&x[3], 0.0, arm);
            assert!((0.0..=8.0).contains(&v), "{v}");
        }
        assert_eq!(m.predict(&x[3], 9.0, 0), 8.0);
        assert!(m.pooled.is_none());
    }

    #[test]
    fn small_arm_uses_pooled_model() {
        let x: Vec<Vec<f64>> = (0..120).map(|i| vec![i as f64]).collect();
        let a: Vec<usize> = (0..120).map(|i| usize::from(i < 10)).collect();
        let y: Vec<f64> = (0..120).map(|i| i as f64).collect();
        let data = MeanData { x: &x, treatments: &a, arity: 2 };
        let m = fit_conditional_mean(
            &data,
            MeanTarget::Regression { y: &y, weights: None },
            200.0,
            &params(),
            50,
        )
        .unwrap();
        assert_eq!(m.pooled_arms(), vec![1]);
        assert!(m.predict(&[5.0], 0.0, 1).is_finite());
        assert_eq!(m.arm_sizes, vec![110, 10]);
    }
}
