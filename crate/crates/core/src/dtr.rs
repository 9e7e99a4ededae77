//! Backward-induction fitting of a multi-stage policy, persistence and
//! hyperparameter grid search.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::caipw::{caipw_matrix, pseudo_outcome, CaipwInputs, CaipwMatrix};
use crate::data::{history_from_parts, Dataset, DatasetSchema, StageRecord};
use crate::error::{Error, Result};
use crate::eval;
use crate::nuisance::{
    fit_stage_nuisance, NuisanceConfig, NuisanceSummary, StageData, StageNuisance, StageOutcome,
    WeightTime,
};
use crate::policy_tree::{grow, Hyperparams, PolicyTree};
use crate::rng::{self, domain};
use crate::simgen::TauSpec;

pub const POLICY_VERSION: u32 = 1;

/// Which history columns feed the propensity model.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropensityFeatures {
    /// Every history column.
    #[default]
    Full,
    /// Age only at stage 1 and Sodium only afterwards.
    Misspecified,
    /// Explicit history column names per stage.
    Custom(Vec<Vec<String>>),
}

impl PropensityFeatures {
    pub fn resolve(&self, schema: &DatasetSchema, stage: usize) -> Result<Vec<usize>> {
        let names = schema.history_names(stage);
        let lookup = |want: &str| {
            names.iter().position(|n| n == want).ok_or_else(|| {
                Error::config(format!(
                    "propensity: history of stage {} has no column {want}",
                    stage + 1
                ))
            })
        };
        match self {
            PropensityFeatures::Full => Ok((0..names.len()).collect()),
            PropensityFeatures::Misspecified => {
                let want = if stage == 0 {
                    "X1_Age".to_string()
                } else {
                    format!("X{}_Sodium", stage + 1)
                };
                Ok(vec![lookup(&want)?])
            }
            PropensityFeatures::Custom(per_stage) => {
                let cols = per_stage.get(stage).ok_or_else(|| {
                    Error::config(format!("propensity: no feature list for stage {}", stage + 1))
                })?;
                cols.iter().map(|c| lookup(c)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Tree hyperparameters used at every stage unless overridden.
    #[serde(default)]
    pub tree: Hyperparams,
    /// Optional per-stage overrides (index 0 = stage 1).
    #[serde(default)]
    pub stage_trees: Option<Vec<Hyperparams>>,
    #[serde(default)]
    pub nuisance: NuisanceConfig,
    #[serde(default)]
    pub propensity: PropensityFeatures,
    #[serde(default)]
    pub tau: TauSpec,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tree: Hyperparams::default(),
            stage_trees: None,
            nuisance: NuisanceConfig::default(),
            propensity: PropensityFeatures::Full,
            tau: TauSpec::Auto,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, n_stages: Option<usize>) -> Result<()> {
        self.tree.validate()?;
        if let Some(v) = &self.stage_trees {
            for hp in v {
                hp.validate()?;
            }
            if let Some(k) = n_stages {
                if v.len() != k {
                    return Err(Error::config(format!(
                        "stage_trees: expected {k} entries, got {}",
                        v.len()
                    )));
                }
            }
        }
        if let TauSpec::Value(t) = self.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config(format!("tau: must be positive, got {t}")));
            }
        }
        self.nuisance.validate()
    }

    pub fn hyperparams(&self, stage: usize) -> Hyperparams {
        self.stage_trees
            .as_ref()
            .and_then(|v| v.get(stage).copied())
            .unwrap_or(self.tree)
    }
}

/// Fitted regime: one tree per stage plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DTRPolicy {
    pub version: u32,
    pub library_version: String,
    pub schema: DatasetSchema,
    pub trees: Vec<PolicyTree>,
    pub nuisance: Vec<Option<NuisanceSummary>>,
    pub config: FitConfig,
    pub tau: f64,
    pub seed: u64,
}

impl DTRPolicy {
    pub fn n_stages(&self) -> usize {
        self.trees.len()
    }

    /// Recommendation from a full stage history vector.
    pub fn recommend_history(&self, h: &[f64], stage: usize) -> Result<usize> {
        let tree = self
            .trees
            .get(stage)
            .ok_or_else(|| Error::arg(format!("policy has no stage {}", stage + 1)))?;
        let want = self.schema.history_len(stage);
        if h.len() != want {
            return Err(Error::arg(format!(
                "stage {} history has {} entries, expected {want}",
                stage + 1,
                h.len()
            )));
        }
        tree.predict(h)
    }

    /// Recommendation at `stage` given completed earlier stages and the
    /// current stage covariates.
    pub fn recommend(&self, previous: &[StageRecord], covariates: &[f64], stage: usize) -> Result<usize> {
        if previous.len() != stage {
            return Err(Error::arg(format!(
                "stage {} needs {stage} completed stages, got {}",
                stage + 1,
                previous.len()
            )));
        }
        if stage >= self.schema.n_stages() {
            return Err(Error::arg(format!("policy has no stage {}", stage + 1)));
        }
        let expect = self.schema.stages[stage].covariates.len();
        if covariates.len() != expect {
            return Err(Error::arg(format!(
                "stage {} covariates: expected {expect}, got {}",
                stage + 1,
                covariates.len()
            )));
        }
        self.recommend_history(&history_from_parts(previous, covariates), stage)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let found = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
        if found != POLICY_VERSION {
            return Err(Error::Version {
                expected: POLICY_VERSION,
                found,
            });
        }
        let p: DTRPolicy = serde_json::from_value(v)?;
        if p.trees.len() != p.schema.n_stages() {
            return Err(Error::Schema("policy tree count differs from its schema".into()));
        }
        for (k, t) in p.trees.iter().enumerate() {
            if t.n_features != p.schema.history_len(k) || t.arity != p.schema.arity(k) {
                return Err(Error::Schema(format!("stage {} tree does not match schema", k + 1)));
            }
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Everything a nuisance provider sees when building one stage's models.
pub struct StageContext<'a> {
    /// 0-based stage.
    pub stage: usize,
    /// Dataset rows of the stage entrants.
    pub subjects: &'a [usize],
    pub data: &'a StageData,
    pub outcome: StageOutcome<'a>,
    pub tau: f64,
    pub seed: u64,
    pub elapsed_positions: &'a [usize],
    pub propensity_features: &'a [usize],
}

/// Source of per-stage nuisance models; replaced by ground truth in tests.
pub trait NuisanceProvider: Sync {
    fn build(&self, ctx: StageContext<'_>) -> Result<Box<dyn StageNuisance>>;
}

/// Fits nuisances from data.
pub struct FittedNuisances<'a>(pub &'a NuisanceConfig);

impl NuisanceProvider for FittedNuisances<'_> {
    fn build(&self, ctx: StageContext<'_>) -> Result<Box<dyn StageNuisance>> {
        Ok(Box::new(fit_stage_nuisance(
            ctx.data,
            ctx.elapsed_positions,
            ctx.propensity_features,
            ctx.outcome,
            ctx.tau,
            self.0,
            ctx.seed,
        )?))
    }
}

/// One step of the backward induction, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// 0-based stage.
    pub stage: usize,
    pub step: String,
    /// Stages whose artifacts this step consumed.
    pub uses: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub stage: usize,
    pub n_entrants: usize,
    pub n_events: usize,
    pub caipw_column_means: Vec<f64>,
    pub tree_depth: usize,
    pub tree_leaves: usize,
    pub tree_rules: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub events: Vec<TraceEvent>,
    pub stages: Vec<StageDiagnostics>,
}

/// History positions of `R_1 .. R_{stage}` within the stage history.
pub fn elapsed_positions(schema: &DatasetSchema, stage: usize) -> Vec<usize> {
    let mut pos = Vec::new();
    let mut offset = 0;
    for s in &schema.stages[..stage] {
        offset += s.covariates.len() + 2;
        pos.push(offset - 1);
    }
    pos
}

/// Builds the nuisance inputs for the entrants of `stage`.
pub fn stage_data(dataset: &Dataset, stage: usize) -> (Vec<usize>, StageData) {
    let (ids, histories) = dataset.histories(stage);
    let trajs = dataset.trajectories();
    let mut d = StageData {
        arity: dataset.schema().arity(stage),
        histories,
        treatments: Vec::with_capacity(ids.len()),
        elapsed: Vec::with_capacity(ids.len()),
        stage_end: Vec::with_capacity(ids.len()),
        stage_event: Vec::with_capacity(ids.len()),
        total_time: Vec::with_capacity(ids.len()),
        final_event: Vec::with_capacity(ids.len()),
    };
    for &i in &ids {
        let t = &trajs[i];
        let elapsed: f64 = t.stages[..stage].iter().map(|s| s.duration).sum();
        let rec = &t.stages[stage];
        d.treatments.push(rec.treatment);
        d.elapsed.push(elapsed);
        d.stage_end.push(elapsed + rec.duration);
        d.stage_event.push(rec.event);
        d.total_time.push(t.total_time);
        d.final_event.push(t.final_event());
    }
    (ids, d)
}

/// Result of [`fit_with`]: the policy plus per-stage CAIPW matrices and trace.
pub struct FitOutput {
    pub policy: DTRPolicy,
    pub trace: FitTrace,
    pub matrices: Vec<CaipwMatrix>,
}

pub fn fit(dataset: &Dataset, config: &FitConfig) -> Result<DTRPolicy> {
    Ok(fit_with(dataset, config, &FittedNuisances(&config.nuisance))?.policy)
}

/// Backward induction from the last stage to the first.
pub fn fit_with(dataset: &Dataset, config: &FitConfig, provider: &dyn NuisanceProvider) -> Result<FitOutput> {
    let k_stages = dataset.n_stages();
    config.validate(Some(k_stages))?;
    if dataset.is_empty() {
        return Err(Error::InvalidDataset("empty dataset".into()));
    }
    let schema = dataset.schema().clone();
    let trajs = dataset.trajectories();
    let totals: Vec<f64> = trajs.iter().map(|t| t.total_time).collect();
    let tau = config.tau.resolve(&totals)?;

    let mut trees: Vec<Option<PolicyTree>> = vec![None; k_stages];
    let mut summaries = vec![None; k_stages];
    let mut matrices: Vec<Option<CaipwMatrix>> = vec![None; k_stages];
    let mut diagnostics = Vec::new();
    let mut events = Vec::new();
    // Pseudo-outcome of every dataset row for the stage being fitted.
    let mut r_bar: Vec<f64> = totals.iter().map(|t| t.min(tau)).collect();

    for stage in (0..k_stages).rev() {
        let (ids, data) = stage_data(dataset, stage);
        if ids.is_empty() {
            return Err(Error::InvalidDataset(format!("no subject entered stage {}", stage + 1)));
        }
        let last = stage + 1 == k_stages;
        let elapsed_pos = elapsed_positions(&schema, stage);
        let prop_features = config.propensity.resolve(&schema, stage)?;
        let pseudo: Vec<f64> = ids.iter().map(|&i| r_bar[i]).collect();
        let seed = rng::derive_seed(config.seed, &[domain::FIT, stage as u64]);
        let outcome = if last {
            StageOutcome::Final
        } else {
            StageOutcome::Pseudo(&pseudo)
        };
        let models = provider.build(StageContext {
            stage,
            subjects: &ids,
            data: &data,
            outcome,
            tau,
            seed,
            elapsed_positions: &elapsed_pos,
            propensity_features: &prop_features,
        })?;
        let later: Vec<usize> = (stage + 1..k_stages).collect();
        events.push(TraceEvent {
            stage,
            step: "nuisance".into(),
            uses: later.clone(),
        });

        let (deltas, weight_times): (Vec<bool>, Vec<f64>) = if last {
            (
                (0..ids.len())
                    .map(|j| data.final_event[j] || data.total_time[j] >= tau)
                    .collect(),
                pseudo.clone(),
            )
        } else {
            let times = match config.nuisance.intermediate_weight_time {
                WeightTime::StageEnd => data.stage_end.iter().map(|t| t.min(tau)).collect(),
                WeightTime::Pseudo => pseudo.clone(),
            };
            (data.truncated_stage_event(tau), times)
        };
        let inputs = CaipwInputs {
            stage,
            subjects: &ids,
            histories: &data.histories,
            treatments: &data.treatments,
            deltas: &deltas,
            outcomes: &pseudo,
            weight_times: &weight_times,
            censoring_floor: config.nuisance.censoring_floor,
        };
        let matrix = caipw_matrix(&inputs, models.as_ref())?;
        events.push(TraceEvent {
            stage,
            step: "caipw".into(),
            uses: later.clone(),
        });

        let features: Vec<usize> = (0..schema.history_len(stage)).collect();
        let tree = grow(
            &data.histories,
            &features,
            &matrix,
            &config.hyperparams(stage),
            &schema.history_names(stage),
        )?;
        events.push(TraceEvent {
            stage,
            step: "tree".into(),
            uses: vec![stage],
        });
        diagnostics.push(StageDiagnostics {
            stage,
            n_entrants: ids.len(),
            n_events: data.stage_event.iter().filter(|&&e| e).count(),
            caipw_column_means: matrix.column_means(),
            tree_depth: tree.depth(),
            tree_leaves: tree.n_leaves(),
            tree_rules: tree.render(),
        });

        if stage > 0 {
            // Pseudo-outcomes for the previous stage; rows that did not enter
            // this stage keep their truncated observed time.
            let next: Vec<f64> = (0..ids.len())
                .into_par_iter()
                .map(|j| {
                    let h = &data.histories[j];
                    let g = tree.predict(h).expect("history matches tree");
                    let mu_g = models.conditional_mean_row(j, h, g);
                    let mu_a = models.conditional_mean_row(j, h, data.treatments[j]);
                    pseudo_outcome(deltas[j], pseudo[j], mu_g, mu_a)
                })
                .collect();
            r_bar = totals.iter().map(|t| t.min(tau)).collect();
            for (j, &i) in ids.iter().enumerate() {
                r_bar[i] = next[j];
            }
            events.push(TraceEvent {
                stage: stage - 1,
                step: "pseudo".into(),
                uses: vec![stage],
            });
        }
        summaries[stage] = models.summary();
        trees[stage] = Some(tree);
        matrices[stage] = Some(matrix);
    }
    diagnostics.reverse();
    let policy = DTRPolicy {
        version: POLICY_VERSION,
        library_version: crate::LIBRARY_VERSION.to_string(),
        schema,
        trees: trees.into_iter().map(|t| t.expect("every stage fitted")).collect(),
        nuisance: summaries,
        config: config.clone(),
        tau,
        seed: config.seed,
    };
    Ok(FitOutput {
        policy,
        trace: FitTrace {
            events,
            stages: diagnostics,
        },
        matrices: matrices.into_iter().map(|m| m.expect("every stage fitted")).collect(),
    })
}

/// Outcome of one grid entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub index: usize,
    pub score: Option<f64>,
    pub concordant_fraction: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub best: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub entries: Vec<GridEntry>,
}

/// Seeded subject-level split into `(train, validation)` row indices.
pub fn validation_split(n: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[domain::SPLIT]));
    let n_val = ((n as f64) * validation_fraction).round() as usize;
    let n_val = n_val.clamp(1.min(n), n.saturating_sub(1));
    let mut val = idx.split_off(n - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

/// Fits every config on a training split and scores it by the concordant
/// τ-RMST on the validation split. Ties go to the earliest config.
pub fn grid_search(
    dataset: &Dataset,
    grid: &[FitConfig],
    validation_fraction: f64,
    seed: u64,
) -> Result<(FitConfig, GridReport)> {
    if grid.is_empty() {
        return Err(Error::config("grid: must contain at least one config"));
    }
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::config("validation_fraction: must be in (0, 1)"));
    }
    for cfg in grid {
        cfg.validate(Some(dataset.n_stages()))?;
    }
    let (train_idx, val_idx) = validation_split(dataset.len(), validation_fraction, seed);
    let train = dataset.subset(&train_idx);
    let val = dataset.subset(&val_idx);
    let entries: Vec<GridEntry> = grid
        .par_iter()
        .enumerate()
        .map(|(index, cfg)| match fit(&train, cfg) {
            Ok(policy) => {
                let spec = eval::PolicySpec::Fitted(Box::new(policy));
                match eval::observational_value(&spec, &val, cfg_tau(cfg, dataset)) {
                    Ok(v) => GridEntry {
                        index,
                        score: v.rmst,
                        concordant_fraction: Some(v.concordant_fraction),
                        error: None,
                    },
                    Err(e) => GridEntry {
                        index,
                        score: None,
                        concordant_fraction: None,
                        error: Some(e.to_string()),
                    },
                }
            }
            Err(e) => GridEntry {
                index,
                score: None,
                concordant_fraction: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for e in &entries {
        if let Some(s) = e.score {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((e.index, s));
            }
        }
    }
    let (best, _) = best.ok_or_else(|| Error::config("grid: no config produced a validation score"))?;
    Ok((
        grid[best].clone(),
        GridReport {
            best,
            n_train: train.len(),
            n_validation: val.len(),
            entries,
        },
    ))
}

fn cfg_tau(cfg: &FitConfig, dataset: &Dataset) -> f64 {
    let totals: Vec<f64> = dataset.trajectories().iter().map(|t| t.total_time).collect();
    cfg.tau.resolve(&totals).unwrap_or(f64::INFINITY)
}
