//! Nuisance models: treatment propensities, censoring survival and
//! conditional mean outcomes, fitted per stage on that stage's entrants.

pub mod conditional_mean;
pub mod km;
pub mod propensity;
pub mod regression_forest;
pub mod survival_forest;

use serde::{Deserialize, Serialize};

pub use conditional_mean::{ConditionalMeanModel, MeanData, MeanForest, MeanTarget};
pub use km::{fit_km, SurvivalCurve};
pub use propensity::{fit_propensity, PropensityClip, PropensityModel};
pub use regression_forest::{fit_regression_forest, RegressionForest};
pub use survival_forest::{fit_survival_forest, ForestParams, Orientation, SurvivalData, SurvivalForest};

use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// The three nuisance functions of one stage.
///
/// Times passed to `censoring_survival` are on the overall time axis
/// (measured from the start of stage 1).
pub trait StageNuisance: Send + Sync {
    fn arity(&self) -> usize;
    /// Treatment probabilities given the history; sums to 1.
    fn propensity(&self, h: &[f64]) -> Vec<f64>;
    /// `P(C > t | H = h)`, not floored.
    fn censoring_survival(&self, h: &[f64], t: f64) -> f64;
    fn conditional_mean(&self, h: &[f64], a: usize) -> f64;
    /// [`Self::censoring_survival`] for row `row` of the stage data the
    /// models were fitted on; fitted forests answer out-of-bag.
    fn censoring_survival_row(&self, row: usize, h: &[f64], t: f64) -> f64 {
        let _ = row;
        self.censoring_survival(h, t)
    }
    /// [`Self::conditional_mean`] for a training row, out-of-bag when fitted.
    fn conditional_mean_row(&self, row: usize, h: &[f64], a: usize) -> f64 {
        let _ = row;
        self.conditional_mean(h, a)
    }
    fn summary(&self) -> Option<NuisanceSummary> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CensoringModel {
    /// Random survival forest conditional on the history.
    #[default]
    Forest,
    /// Marginal Kaplan-Meier curve of the censoring times.
    Km,
}

/// Time at which censoring survival is read for intermediate-stage weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightTime {
    /// End of the stage, `elapsed + R_k`, truncated at `tau`.
    #[default]
    StageEnd,
    /// The pseudo-outcome itself.
    Pseudo,
}

fn default_ridge() -> f64 {
    1e-2
}

fn default_floor() -> f64 {
    0.05
}

fn default_min_arm() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceConfig {
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub clip: PropensityClip,
    /// Floor applied to censoring survival in weight denominators.
    #[serde(default = "default_floor")]
    pub censoring_floor: f64,
    #[serde(default)]
    pub censoring_model: CensoringModel,
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(default = "default_min_arm")]
    pub min_arm_size: usize,
    #[serde(default)]
    pub intermediate_weight_time: WeightTime,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            ridge: default_ridge(),
            clip: PropensityClip::default(),
            censoring_floor: default_floor(),
            censoring_model: CensoringModel::Forest,
            forest: ForestParams::default(),
            min_arm_size: default_min_arm(),
            intermediate_weight_time: WeightTime::StageEnd,
        }
    }
}

impl NuisanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::config("nuisance.ridge: must be non-negative"));
        }
        let c = self.clip;
        if !(c.lower > 0.0 && c.lower < c.upper && c.upper < 1.0) {
            return Err(Error::config("nuisance.clip: need 0 < lower < upper < 1"));
        }
        if !(self.censoring_floor > 0.0 && self.censoring_floor <= 1.0) {
            return Err(Error::config("nuisance.censoring_floor: must be in (0, 1]"));
        }
        self.forest.validate()
    }
}

/// Stage entrants in the form the nuisance fitters consume.
#[derive(Debug, Clone, PartialEq)]
pub struct StageData {
    pub arity: usize,
    pub histories: Vec<Vec<f64>>,
    pub treatments: Vec<usize>,
    /// Time survived before the stage started.
    pub elapsed: Vec<f64>,
    /// `elapsed + R_k`.
    pub stage_end: Vec<f64>,
    /// `delta_k`.
    pub stage_event: Vec<bool>,
    /// Observed overall time `T`.
    pub total_time: Vec<f64>,
    /// Whether `T` is an event time.
    pub final_event: Vec<bool>,
}

impl StageData {
    pub fn len(&self) -> usize {
        self.histories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.histories.is_empty()
    }

    /// Residual time past the stage start, truncated at `tau`, and whether the
    /// truncated overall time is fully observed.
    pub fn truncated_residual(&self, tau: f64) -> (Vec<f64>, Vec<bool>) {
        let time = (0..self.len())
            .map(|i| (self.total_time[i].min(tau) - self.elapsed[i]).max(0.0))
            .collect();
        let observed = (0..self.len())
            .map(|i| self.final_event[i] || self.total_time[i] >= tau)
            .collect();
        (time, observed)
    }

    /// Whether the stage outcome truncated at `tau` is known: the stage ended
    /// uncensored, or follow-up within the stage reached `tau`.
    pub fn truncated_stage_event(&self, tau: f64) -> Vec<bool> {
        (0..self.len())
            .map(|i| self.stage_event[i] || self.stage_end[i] >= tau)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CensoringFit {
    Forest { forest: SurvivalForest },
    Km { curve: SurvivalCurve },
}

impl CensoringFit {
    fn residual_survival(&self, h: &[f64], s: f64, row: Option<usize>) -> f64 {
        match self {
            CensoringFit::Forest { forest } => forest.predict_survival_at(h, s, row),
            CensoringFit::Km { curve } => curve.at(s),
        }
    }
}

/// Fitted nuisances of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedStageNuisance {
    pub arity: usize,
    pub clip: PropensityClip,
    /// History positions of earlier stage durations.
    pub elapsed_positions: Vec<usize>,
    pub propensity: PropensityModel,
    pub censoring: CensoringFit,
    pub mean: ConditionalMeanModel,
    /// Row of the conditional mean training data for each stage row.
    pub mean_rows: Vec<Option<usize>>,
}

impl FittedStageNuisance {
    fn censoring_at(&self, h: &[f64], t: f64, row: Option<usize>) -> f64 {
        let s = t - self.elapsed(h);
        if s < 0.0 {
            1.0
        } else {
            self.censoring.residual_survival(h, s, row)
        }
    }

    pub fn elapsed(&self, h: &[f64]) -> f64 {
        self.elapsed_positions.iter().map(|&j| h[j]).sum()
    }

    pub fn summary(&self) -> NuisanceSummary {
        NuisanceSummary {
            propensity_features: self.propensity.features.clone(),
            propensity_coefficients: self.propensity.coefficients.clone(),
            censoring_model: match &self.censoring {
                CensoringFit::Forest { .. } => CensoringModel::Forest,
                CensoringFit::Km { .. } => CensoringModel::Km,
            },
            censoring_oob_concordance: match &self.censoring {
                CensoringFit::Forest { forest } => forest.oob_concordance,
                CensoringFit::Km { .. } => None,
            },
            arm_sizes: self.mean.arm_sizes.clone(),
            pooled_arms: self.mean.pooled_arms(),
        }
    }
}

impl StageNuisance for FittedStageNuisance {
    fn arity(&self) -> usize {
        self.arity
    }

    fn propensity(&self, h: &[f64]) -> Vec<f64> {
        self.propensity.predict(h, self.clip)
    }

    fn censoring_survival(&self, h: &[f64], t: f64) -> f64 {
        self.censoring_at(h, t, None)
    }

    fn conditional_mean(&self, h: &[f64], a: usize) -> f64 {
        self.mean.predict(h, self.elapsed(h), a)
    }

    fn censoring_survival_row(&self, row: usize, h: &[f64], t: f64) -> f64 {
        self.censoring_at(h, t, Some(row))
    }

    fn conditional_mean_row(&self, row: usize, h: &[f64], a: usize) -> f64 {
        let r = self.mean_rows.get(row).copied().flatten();
        self.mean.predict_at(h, self.elapsed(h), a, r)
    }

    fn summary(&self) -> Option<NuisanceSummary> {
        Some(FittedStageNuisance::summary(self))
    }
}

/// Compact description of fitted nuisances, stored with a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSummary {
    pub propensity_features: Vec<usize>,
    pub propensity_coefficients: Vec<Vec<f64>>,
    pub censoring_model: CensoringModel,
    pub censoring_oob_concordance: Option<f64>,
    pub arm_sizes: Vec<usize>,
    pub pooled_arms: Vec<usize>,
}

/// What the conditional mean model regresses at this stage.
pub enum StageOutcome<'a> {
    /// Final stage: the overall time `T`, truncated at `tau`.
    Final,
    /// Earlier stage: pseudo-outcomes, defined for `delta_k = 1` rows.
    Pseudo(&'a [f64]),
}

/// Fits propensity, censoring and conditional mean models for one stage.
pub fn fit_stage_nuisance(
    data: &StageData,
    elapsed_positions: &[usize],
    propensity_features: &[usize],
    outcome: StageOutcome<'_>,
    tau: f64,
    config: &NuisanceConfig,
    seed: u64,
) -> Result<FittedStageNuisance> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidDataset("no subjects entered this stage".into()));
    }
    let propensity = fit_propensity(
        &data.histories,
        &data.treatments,
        data.arity,
        propensity_features,
        config.ridge,
    )?;

    let (res_time, observed) = data.truncated_residual(tau);
    let censoring = match config.censoring_model {
        CensoringModel::Km => {
            let censored: Vec<bool> = observed.iter().map(|o| !o).collect();
            CensoringFit::Km {
                curve: fit_km(&res_time, &censored)?,
            }
        }
        CensoringModel::Forest => {
            let params = config
                .forest
                .with_seed(rng::derive_seed(seed, &[domain::FOREST, 0]));
            let leaf_min = params.leaf_min.min((data.len() / 2).max(1));
            let sd = SurvivalData {
                x: &data.histories,
                time: &res_time,
                event: &observed,
            };
            CensoringFit::Forest {
                forest: fit_survival_forest(sd, Orientation::Censoring, &ForestParams { leaf_min, ..params })?,
            }
        }
    };

    let mean_params = config
        .forest
        .with_seed(rng::derive_seed(seed, &[domain::FOREST, 1]));
    let (mean, mean_rows) = match outcome {
        StageOutcome::Final => {
            let md = MeanData {
                x: &data.histories,
                treatments: &data.treatments,
                arity: data.arity,
            };
            let m = conditional_mean::fit_conditional_mean(
                &md,
                MeanTarget::Survival {
                    time: &res_time,
                    event: &observed,
                },
                tau,
                &mean_params,
                config.min_arm_size,
            )?;
            (m, (0..data.len()).map(Some).collect())
        }
        StageOutcome::Pseudo(pseudo) => {
            if pseudo.len() != data.len() {
                return Err(Error::arg("pseudo-outcomes misaligned with stage entrants"));
            }
            let known = data.truncated_stage_event(tau);
            let rows: Vec<usize> = (0..data.len()).filter(|&i| known[i]).collect();
            if rows.is_empty() {
                return Err(Error::InvalidDataset(
                    "no uncensored stage outcomes to fit the conditional mean".into(),
                ));
            }
            let x: Vec<Vec<f64>> = rows.iter().map(|&i| data.histories[i].clone()).collect();
            let a: Vec<usize> = rows.iter().map(|&i| data.treatments[i]).collect();
            let y: Vec<f64> = rows.iter().map(|&i| pseudo[i]).collect();
            // Inverse probability of remaining uncensored through the stage.
            let w: Vec<f64> = rows
                .iter()
                .map(|&i| {
                    let s = data.stage_end[i].min(tau) - data.elapsed[i];
                    let sc = if s < 0.0 {
                        1.0
                    } else {
                        censoring.residual_survival(&data.histories[i], s, Some(i))
                    };
                    1.0 / sc.max(config.censoring_floor)
                })
                .collect();
            let md = MeanData {
                x: &x,
                treatments: &a,
                arity: data.arity,
            };
            let m = conditional_mean::fit_conditional_mean(
                &md,
                MeanTarget::Regression {
                    y: &y,
                    weights: Some(&w),
                },
                tau,
                &mean_params,
                config.min_arm_size,
            )?;
            let mut map = vec![None; data.len()];
            for (k, &i) in rows.iter().enumerate() {
                map[i] = Some(k);
            }
            (m, map)
        }
    };

    Ok(FittedStageNuisance {
        arity: data.arity,
        clip: config.clip,
        elapsed_positions: elapsed_positions.to_vec(),
        propensity,
        censoring,
        mean,
        mean_rows,
    })
}
