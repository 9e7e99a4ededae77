//! Right-continuous survival step functions and the product-limit estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `S(t) = values[j]` for `times[j] <= t < times[j+1]`, and 1 before `times[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SurvivalCurve {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::arg("survival curve times and values differ in length"));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::arg("survival curve times must be strictly increasing"));
        }
        let mut prev = 1.0;
        for &v in &values {
            if !(0.0..=prev).contains(&v) {
                return Err(Error::arg("survival values must be non-increasing in [0, 1]"));
            }
            prev = v;
        }
        Ok(Self { times, values })
    }

    /// The curve `S = 1` everywhere.
    pub fn constant_one() -> Self {
        Self {
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, t: f64) -> f64 {
        let j = self.times.partition_point(|&s| s <= t);
        if j == 0 {
            1.0
        } else {
            self.values[j - 1]
        }
    }

    /// `∫_0^tau S(t) dt`, exact over the steps; 0 for `tau <= 0`.
    pub fn restricted_mean(&self, tau: f64) -> f64 {
        restricted_mean_steps(&self.times, &self.values, tau)
    }
}

pub(crate) fn restricted_mean_steps(times: &[f64], values: &[f64], tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    let mut area = 0.0;
    let mut prev_t = 0.0;
    let mut prev_s = 1.0;
    for (&t, &s) in times.iter().zip(values) {
        if t >= tau {
            break;
        }
        let t = t.max(0.0);
        area += prev_s * (t - prev_t);
        prev_t = t;
        prev_s = s;
    }
    area + prev_s * (tau - prev_t)
}

/// Kaplan-Meier estimate. At tied times, deaths are processed before
/// censorings, so subjects censored at `t` count as at risk at `t`.
pub fn fit_km(times: &[f64], events: &[bool]) -> Result<SurvivalCurve> {
    fit_km_weighted(times, events, None)
}

/// Weighted product-limit estimate; `weights` default to 1.
pub fn fit_km_weighted(times: &[f64], events: &[bool], weights: Option<&[f64]>) -> Result<SurvivalCurve> {
    if times.is_empty() {
        return Err(Error::arg("Kaplan-Meier estimate of empty sample"));
    }
    if times.len() != events.len() || weights.is_some_and(|w| w.len() != times.len()) {
        return Err(Error::arg("times, events and weights differ in length"));
    }
    if times.iter().any(|t| !(*t >= 0.0) || t.is_infinite()) {
        return Err(Error::arg("survival times must be finite and non-negative"));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut at_risk: f64 = (0..times.len()).map(w).sum();
    let mut s = 1.0;
    let mut out_t = Vec::new();
    let mut out_s = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut deaths = 0.0;
        let mut leaving = 0.0;
        while i < order.len() && times[order[i]] == t {
            let j = order[i];
            if events[j] {
                deaths += w(j);
            }
            leaving += w(j);
            i += 1;
        }
        if deaths > 0.0 {
            s *= if deaths >= at_risk { 0.0 } else { 1.0 - deaths / at_risk };
            out_t.push(t);
            out_s.push(s);
        }
        at_risk -= leaving;
    }
    Ok(SurvivalCurve {
        times: out_t,
        values: out_s,
    })
}
