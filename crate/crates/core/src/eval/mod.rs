//! Policy evaluation: τ-RMST, decision accuracy against the oracle rules,
//! expected counterfactual survival, and baseline policies.

pub mod benchmark;

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_history, history_from_parts, Dataset, StageRecord};
use crate::dtr::DTRPolicy;
use crate::error::{Error, Result};
use crate::nuisance::km::{fit_km, restricted_mean_steps};
use crate::rng::{self, domain};
use crate::simgen::{g1_opt, g2_opt, stage1_time, stage2_time, OracleHandle, GLUCOSE, N_COVARIATES};
use crate::stats;

/// `∫_0^tau` of the Kaplan-Meier curve.
pub fn rmst_km(times: &[f64], events: &[bool], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::arg(format!("tau must be positive, got {tau}")));
    }
    let c = fit_km(times, events)?;
    Ok(restricted_mean_steps(c.times(), c.values(), tau))
}

/// A treatment policy to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Fitted(Box<DTRPolicy>),
    /// The same arm at every stage.
    Fixed(usize),
    /// Uniform random arm; draws are keyed by `(seed, subject, stage)`.
    Random { seed: u64 },
    /// The semi-synthetic scenario's true optimal rules.
    Optimal,
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Fitted(_) => write!(f, "CA-TRL"),
            PolicySpec::Fixed(a) => write!(f, "g={a}"),
            PolicySpec::Random { .. } => write!(f, "Random"),
            PolicySpec::Optimal => write!(f, "Optimal"),
        }
    }
}

impl PolicySpec {
    /// Recommendation for `subject` at `stage` given its history.
    pub fn recommend(&self, h: &[f64], stage: usize, arity: usize, subject: usize) -> Result<usize> {
        match self {
            PolicySpec::Fitted(p) => p.recommend_history(h, stage),
            PolicySpec::Fixed(a) if *a < arity => Ok(*a),
            PolicySpec::Fixed(a) => Err(Error::arg(format!("fixed arm {a} outside 0..{arity}"))),
            PolicySpec::Random { seed } => {
                let mut r = rng::stream(*seed, &[domain::RANDOM_POLICY, subject as u64, stage as u64]);
                Ok(r.random_range(0..arity))
            }
            PolicySpec::Optimal => optimal_rule(h, stage, arity),
        }
    }
}

/// True optimal rule on scenario histories (`[X_1]` or `[X_1, A_1, R_1, X_2]`).
pub fn optimal_rule(h: &[f64], stage: usize, arity: usize) -> Result<usize> {
    let p = N_COVARIATES;
    match stage {
        0 if h.len() == p => Ok(g1_opt(h, arity)),
        1 if h.len() == 2 * p + 2 => Ok(g2_opt(h[p + 2 + GLUCOSE], h[p + 1], arity)),
        _ => Err(Error::arg("optimal rule needs a scenario history")),
    }
}

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: stats::mean(values),
            se: stats::std_error(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub tau: f64,
    pub n_eval: usize,
    pub rmst: Estimate,
    pub cdr1: Estimate,
    pub acdr: Estimate,
    pub expected_survival: Estimate,
}

/// Where counterfactual subjects come from.
#[derive(Debug, Clone, Copy)]
pub enum EvalCohort<'a> {
    /// `n` fresh draws from the oracle's covariate law.
    Fresh(usize),
    /// Given `(X_1, X_2)` rows.
    Given(&'a [(Vec<f64>, Vec<f64>)]),
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions<'a> {
    pub cohort: EvalCohort<'a>,
    pub tau: f64,
    /// Keys the covariate and noise draws; the same seed gives every policy
    /// the same subjects and noise.
    pub seed: u64,
    /// Replace the noise terms by 0.
    pub zero_noise: bool,
}

/// Per-subject counterfactual replay of a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replay {
    pub a1: usize,
    pub a2: usize,
    pub t1: f64,
    pub t2: f64,
    pub correct1: bool,
    pub correct2: bool,
}

fn subject_inputs(oracle: &OracleHandle, opts: &EvalOptions<'_>, i: usize) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let mut r = rng::stream(opts.seed, &[domain::EVAL, i as u64]);
    let (x1, x2) = match opts.cohort {
        EvalCohort::Fresh(_) => oracle.scenario.covariates.sample_subject(&mut r),
        EvalCohort::Given(rows) => rows[i].clone(),
    };
    let (e1, e2) = if opts.zero_noise {
        (0.0, 0.0)
    } else {
        (oracle.sample_noise(&mut r), oracle.sample_noise(&mut r))
    };
    (x1, x2, e1, e2)
}

/// Replays subject `i` under `policy` with the oracle's outcome model.
pub fn replay(policy: &PolicySpec, oracle: &OracleHandle, opts: &EvalOptions<'_>, i: usize) -> Result<Replay> {
    let m = oracle.arity();
    let (x1, x2, e1, e2) = subject_inputs(oracle, opts, i);
    let a1 = policy.recommend(&x1, 0, m, i)?;
    let t1 = stage1_time(&x1, a1, m, e1);
    let prev = [StageRecord {
        covariates: x1.clone(),
        treatment: a1,
        duration: t1,
        event: true,
    }];
    let h2 = history_from_parts(&prev, &x2);
    let a2 = policy.recommend(&h2, 1, m, i)?;
    let t2 = stage2_time(&x2, t1, a2, m, e2);
    Ok(Replay {
        a1,
        a2,
        t1,
        t2,
        correct1: a1 == g1_opt(&x1, m),
        correct2: a2 == g2_opt(x2[GLUCOSE], t1, m),
    })
}

/// Counterfactual evaluation without censoring against the oracle rules.
pub fn counterfactual_eval(policy: &PolicySpec, oracle: &OracleHandle, opts: &EvalOptions<'_>) -> Result<EvalReport> {
    if !(opts.tau > 0.0) {
        return Err(Error::arg(format!("tau must be positive, got {}", opts.tau)));
    }
    let n = match opts.cohort {
        EvalCohort::Fresh(n) => n,
        EvalCohort::Given(rows) => rows.len(),
    };
    if n == 0 {
        return Err(Error::arg("counterfactual evaluation of zero subjects"));
    }
    let replays: Vec<Replay> = (0..n)
        .into_par_iter()
        .map(|i| replay(policy, oracle, opts, i))
        .collect::<Result<_>>()?;
    let total: Vec<f64> = replays.iter().map(|r| r.t1 + r.t2).collect();
    if total.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numerical("counterfactual survival time overflowed".into()));
    }
    let rmst: Vec<f64> = total.iter().map(|t| t.min(opts.tau)).collect();
    let c1: Vec<f64> = replays.iter().map(|r| f64::from(u8::from(r.correct1))).collect();
    let all: Vec<f64> = replays
        .iter()
        .map(|r| f64::from(u8::from(r.correct1 && r.correct2)))
        .collect();
    Ok(EvalReport {
        policy: policy.to_string(),
        tau: opts.tau,
        n_eval: n,
        rmst: Estimate::of(&rmst),
        cdr1: Estimate::of(&c1),
        acdr: Estimate::of(&all),
        expected_survival: Estimate::of(&total),
    })
}

pub const SMALL_SAMPLE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationalValue {
    pub policy: String,
    pub tau: f64,
    /// KM τ-RMST of the concordant subgroup; absent when nobody is concordant.
    pub rmst: Option<f64>,
    pub n_concordant: usize,
    pub concordant_fraction: f64,
    /// Fewer than [`SMALL_SAMPLE`] concordant subjects.
    pub small_sample: bool,
}

/// τ-RMST among subjects whose observed treatments agree with the policy at
/// every stage they entered.
pub fn observational_value(policy: &PolicySpec, dataset: &Dataset, tau: f64) -> Result<ObservationalValue> {
    if !(tau > 0.0) {
        return Err(Error::arg(format!("tau must be positive, got {tau}")));
    }
    if dataset.is_empty() {
        return Err(Error::arg("observational value of an empty dataset"));
    }
    let schema = dataset.schema();
    let flags: Vec<bool> = dataset
        .trajectories()
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            for k in 0..t.n_entered() {
                let h = build_history(t, k)?;
                if policy.recommend(&h, k, schema.arity(k), i)? != t.stages[k].treatment {
                    return Ok(false);
                }
            }
            Ok(true)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<usize> = (0..flags.len()).filter(|&i| flags[i]).collect();
    let trajs = dataset.trajectories();
    let rmst = if rows.is_empty() {
        None
    } else {
        let times: Vec<f64> = rows.iter().map(|&i| trajs[i].total_time).collect();
        let events: Vec<bool> = rows.iter().map(|&i| trajs[i].final_event()).collect();
        Some(rmst_km(&times, &events, tau)?)
    };
    Ok(ObservationalValue {
        policy: policy.to_string(),
        tau,
        rmst,
        n_concordant: rows.len(),
        concordant_fraction: rows.len() as f64 / flags.len() as f64,
        small_sample: rows.len() < SMALL_SAMPLE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{CensoringKind, ScenarioConfig};

    #[test]
    fn rmst_examples() {
        assert!((rmst_km(&[1.0, 2.0, 3.0], &[true; 3], 3.0).unwrap() - 2.0).abs() < 1e-12);
        let v = rmst_km(&[1.0, 2.0, 3.0], &[true, false, true], 3.0).unwrap();
        assert!((v - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(rmst_km(&[5.0, 6.0], &[true, true], 2.0).unwrap(), 2.0);
        assert!(rmst_km(&[1.0], &[true], 0.0).is_err());
    }

    fn oracle() -> OracleHandle {
        generate_oracle(2)
    }

    fn generate_oracle(arity: usize) -> OracleHandle {
        let cfg = ScenarioConfig::new(50, arity, CensoringKind::None, 1);
        crate::simgen::generate(&cfg).unwrap().1
    }

    #[test]
    fn random_policy_is_right_half_the_time() {
        let o = oracle();
        let opts = EvalOptions {
            cohort: EvalCohort::Fresh(20_000),
            tau: o.tau,
            seed: 3,
            zero_noise: false,
        };
        let r = counterfactual_eval(&PolicySpec::Random { seed: 1 }, &o, &opts).unwrap();
        assert!((r.cdr1.mean - 0.5).abs() < 3.0 * r.cdr1.se, "{:?}", r.cdr1);
        assert!(r.acdr.mean <= r.cdr1.mean);
    }

    #[test]
    fn fixed_zero_cdr1_matches_rule_probability() {
        let o = oracle();
        let n = 20_000;
        let opts = EvalOptions {
            cohort: EvalCohort::Fresh(n),
            tau: o.tau,
            seed: 5,
            zero_noise: true,
        };
        let r = counterfactual_eval(&PolicySpec::Fixed(0), &o, &opts).unwrap();
        // Independent Monte-Carlo estimate of P(Cr <= 1.5 or Hb > 12).
        let mut rr = rng::stream(77, &[1]);
        let m = 200_000;
        let hits = (0..m)
            .filter(|_| {
                let (x1, _) = o.scenario.covariates.sample_subject(&mut rr);
                x1[crate::simgen::CREATININE] <= 1.5 || x1[crate::simgen::HEMOGLOBIN] > 12.0
            })
            .count();
        let p = hits as f64 / m as f64;
        let se = (r.cdr1.se.powi(2) + p * (1.0 - p) / m as f64).sqrt();
        assert!((r.cdr1.mean - p).abs() < 3.0 * se, "{} vs {p}", r.cdr1.mean);
    }

    #[test]
    fn optimal_policy_is_always_right() {
        let o = generate_oracle(3);
        let opts = EvalOptions {
            cohort: EvalCohort::Fresh(2000),
            tau: o.tau,
            seed: 2,
            zero_noise: false,
        };
        let r = counterfactual_eval(&PolicySpec::Optimal, &o, &opts).unwrap();
        assert_eq!((r.cdr1.mean, r.acdr.mean), (1.0, 1.0));
        for a in 0..3 {
            let f = counterfactual_eval(&PolicySpec::Fixed(a), &o, &opts).unwrap();
            assert!(r.expected_survival.mean >= f.expected_survival.mean - 3.0 * f.expected_survival.se);
        }
    }

    #[test]
    fn crn_makes_policies_comparable() {
        let o = oracle();
        let opts = EvalOptions {
            cohort: EvalCohort::Fresh(500),
            tau: o.tau,
            seed: 9,
            zero_noise: false,
        };
        let a = counterfactual_eval(&PolicySpec::Fixed(1), &o, &opts).unwrap();
        let b = counterfactual_eval(&PolicySpec::Fixed(1), &o, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.rmst.mean <= o.tau);
    }

    #[test]
    fn observational_value_nobody_concordant() {
        let cfg = ScenarioConfig::new(200, 2, CensoringKind::None, 4);
        let (d, _) = crate::simgen::generate(&cfg).unwrap();
        let v = observational_value(&PolicySpec::Fixed(0), &d, 10.0).unwrap();
        assert!(v.n_concordant < d.len());
        let arity3 = observational_value(&PolicySpec::Fixed(5), &d, 10.0);
        assert!(arity3.is_err());
    }
}
