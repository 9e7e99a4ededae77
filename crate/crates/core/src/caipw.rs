//! Censoring-adjusted AIPW estimates and the pseudo-outcome recursion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::StageNuisance;

/// Per-subject censoring-adjusted AIPW value for arm `a`:
/// `I(A=a) delta / (pi * sc) * y + (1 - I(A=a) / pi) * mu`.
pub fn caipw_value(treated: bool, delta: bool, pi: f64, sc: f64, y: f64, mu: f64) -> f64 {
    let ind = if treated { 1.0 } else { 0.0 };
    let first = if treated && delta { y / (pi * sc) } else { 0.0 };
    first + (1.0 - ind / pi) * mu
}

/// Final-stage estimator, outcome `T`, weight evaluated at `T`.
pub fn caipw_final(observed_arm: usize, delta: bool, pi: f64, sc: f64, t: f64, mu: f64, a: usize) -> f64 {
    caipw_value(observed_arm == a, delta, pi, sc, t, mu)
}

/// Intermediate-stage estimator on the pseudo-outcome `r_bar`.
pub fn caipw_intermediate(
    observed_arm: usize,
    delta: bool,
    pi: f64,
    sc: f64,
    r_bar: f64,
    mu: f64,
    a: usize,
) -> f64 {
    caipw_value(observed_arm == a, delta, pi, sc, r_bar, mu)
}

/// `R_k = d (R_{k+1} + mu_g - mu_A) + (1 - d) mu_g`, clamped at 0.
pub fn pseudo_outcome(delta_next: bool, r_bar_next: f64, mu_g_opt: f64, mu_observed: f64) -> f64 {
    let v = if delta_next {
        r_bar_next + (mu_g_opt - mu_observed)
    } else {
        mu_g_opt
    };
    v.max(0.0)
}

/// `n x M` matrix of CAIPW estimates for the entrants of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaipwMatrix {
    /// 0-based stage index.
    pub stage: usize,
    pub arity: usize,
    /// Dataset row of each matrix row.
    pub subjects: Vec<usize>,
    values: Vec<f64>,
}

impl CaipwMatrix {
    pub fn from_rows(stage: usize, subjects: Vec<usize>, rows: &[Vec<f64>]) -> Result<Self> {
        let arity = rows.first().map_or(0, Vec::len);
        if arity == 0 || rows.iter().any(|r| r.len() != arity) {
            return Err(Error::arg("CAIPW rows must be non-empty and of equal width"));
        }
        if subjects.len() != rows.len() {
            return Err(Error::arg("subject map misaligned with CAIPW rows"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite CAIPW entry".into()));
        }
        Ok(Self {
            stage,
            arity,
            subjects,
            values: rows.concat(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.subjects.len()
    }

    pub fn get(&self, i: usize, a: usize) -> f64 {
        self.values[i * self.arity + a]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.arity..(i + 1) * self.arity]
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n_rows() as f64;
        (0..self.arity)
            .map(|a| (0..self.n_rows()).map(|i| self.get(i, a)).sum::<f64>() / n)
            .collect()
    }

    /// Adds `c` to every entry.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v + c).collect(),
            ..self.clone()
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["subject".to_string()];
        header.extend((0..self.arity).map(|a| format!("arm{a}")));
        wr.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![self.subjects[i].to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Inputs of one stage's estimator, aligned by row.
pub struct CaipwInputs<'a> {
    pub stage: usize,
    pub subjects: &'a [usize],
    pub histories: &'a [Vec<f64>],
    pub treatments: &'a [usize],
    /// `delta_k` (or the outcome-observed flag at the final stage).
    pub deltas: &'a [bool],
    /// Outcome plugged into the weighted term: `T` or `R_k`.
    pub outcomes: &'a [f64],
    /// Time at which the censoring survival is evaluated.
    pub weight_times: &'a [f64],
    pub censoring_floor: f64,
}

pub fn caipw_matrix(inputs: &CaipwInputs<'_>, models: &dyn StageNuisance) -> Result<CaipwMatrix> {
    let n = inputs.subjects.len();
    let aligned = [
        inputs.histories.len(),
        inputs.treatments.len(),
        inputs.deltas.len(),
        inputs.outcomes.len(),
        inputs.weight_times.len(),
    ]
    .iter()
    .all(|&l| l == n);
    if !aligned {
        return Err(Error::arg("CAIPW inputs are misaligned"));
    }
    if n == 0 {
        return Err(Error::arg("CAIPW matrix of an empty stage"));
    }
    let m = models.arity();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let h = &inputs.histories[i];
            let pi = models.propensity(h);
            let a_obs = inputs.treatments[i];
            let sc = if inputs.deltas[i] {
                models
                    .censoring_survival_row(i, h, inputs.weight_times[i])
                    .max(inputs.censoring_floor)
            } else {
                1.0
            };
            (0..m)
                .map(|a| {
                    caipw_value(
                        a_obs == a,
                        inputs.deltas[i],
                        pi[a],
                        sc,
                        inputs.outcomes[i],
                        models.conditional_mean_row(i, h, a),
                    )
                })
                .collect()
        })
        .collect();
    CaipwMatrix::from_rows(inputs.stage, inputs.subjects.to_vec(), &rows)
}
