//! Multi-scenario fold benchmark: generate, train on one fold, evaluate every
//! policy counterfactually on the remaining folds, and tabulate.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{counterfactual_eval, EvalCohort, EvalOptions, EvalReport, PolicySpec};
use crate::dtr::{self, FitConfig, PropensityFeatures};
use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::simgen::{self, CensoringKind, PropensityMode, ScenarioConfig, TauSpec};
use crate::stats;

fn default_arities() -> Vec<usize> {
    vec![2, 3]
}

fn default_modes() -> Vec<PropensityMode> {
    vec![PropensityMode::True, PropensityMode::Misspecified]
}

fn default_kinds() -> Vec<CensoringKind> {
    vec![
        CensoringKind::Exponential,
        CensoringKind::Conditional,
        CensoringKind::Uniform,
    ]
}

fn default_folds() -> usize {
    5
}

fn default_n() -> usize {
    10_000
}

fn default_target() -> f64 {
    0.62
}

fn default_noise() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default = "default_n")]
    pub n_subjects: usize,
    #[serde(default = "default_arities")]
    pub arities: Vec<usize>,
    #[serde(default = "default_modes")]
    pub propensity_modes: Vec<PropensityMode>,
    #[serde(default = "default_kinds")]
    pub censoring_kinds: Vec<CensoringKind>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_target")]
    pub target_censor_rate: f64,
    #[serde(default = "default_noise")]
    pub noise_rate: f64,
    #[serde(default)]
    pub tau: TauSpec,
    /// Fit settings; the propensity feature set is overridden per mode.
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_subjects: default_n(),
            arities: default_arities(),
            propensity_modes: default_modes(),
            censoring_kinds: default_kinds(),
            folds: default_folds(),
            target_censor_rate: default_target(),
            noise_rate: default_noise(),
            tau: TauSpec::Auto,
            fit: FitConfig::default(),
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arities.is_empty() || self.propensity_modes.is_empty() || self.censoring_kinds.is_empty() {
            return Err(Error::config("benchmark grid is empty"));
        }
        if self.folds < 2 {
            return Err(Error::config("folds: must be at least 2"));
        }
        if self.n_subjects < self.folds {
            return Err(Error::config("n_subjects: must be at least folds"));
        }
        for s in self.scenarios() {
            s.validate()?;
        }
        self.fit.validate(Some(2))
    }

    /// One data-generating scenario per (arity, censoring kind); both
    /// propensity modes are fitted on the same data.
    pub fn scenarios(&self) -> Vec<ScenarioConfig> {
        let mut out = Vec::new();
        for (ai, &arity) in self.arities.iter().enumerate() {
            for (ki, &kind) in self.censoring_kinds.iter().enumerate() {
                let mut s = ScenarioConfig::new(
                    self.n_subjects,
                    arity,
                    kind,
                    rng::derive_seed(self.seed, &[domain::CELL, ai as u64, ki as u64]),
                );
                if kind != CensoringKind::None {
                    s.target_censor_rate = self.target_censor_rate;
                }
                s.noise_rate = self.noise_rate;
                s.tau = self.tau;
                out.push(s);
            }
        }
        out
    }
}

/// Metrics of every policy on one fold of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub arity: usize,
    pub propensity: PropensityMode,
    pub censoring: CensoringKind,
    pub fold: usize,
    pub censored_fraction: f64,
    pub reports: Vec<EvalReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sd: f64,
}

impl MetricSummary {
    fn of(v: &[f64]) -> Self {
        Self {
            mean: stats::mean(v),
            sd: stats::sd(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub arity: usize,
    pub propensity: PropensityMode,
    pub censoring: CensoringKind,
    pub method: String,
    pub n_folds: usize,
    pub rmst: MetricSummary,
    pub cdr1: MetricSummary,
    pub acdr: MetricSummary,
    pub expected_survival: MetricSummary,
    /// Highest mean τ-RMST within the cell.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<TableRow>,
    pub folds: Vec<FoldResult>,
    pub failures: Vec<String>,
}

struct Job {
    scenario: usize,
    mode: PropensityMode,
    fold: usize,
}

fn mode_name(m: PropensityMode) -> &'static str {
    match m {
        PropensityMode::True => "true",
        PropensityMode::Misspecified => "misspecified",
    }
}

fn kind_name(k: CensoringKind) -> &'static str {
    match k {
        CensoringKind::Exponential => "exponential",
        CensoringKind::Conditional => "conditional",
        CensoringKind::Uniform => "uniform",
        CensoringKind::None => "none",
    }
}

/// Content hash identifying one fold job, used as its cache key.
fn job_key(cfg: &BenchmarkConfig, scenario: &ScenarioConfig, mode: PropensityMode, fold: usize) -> Result<String> {
    let doc = serde_json::json!({
        "library": crate::LIBRARY_VERSION,
        "benchmark": cfg,
        "scenario": scenario,
        "mode": mode,
        "fold": fold,
    });
    let bytes = serde_json::to_vec(&doc)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn run_job(
    cfg: &BenchmarkConfig,
    scenario: &ScenarioConfig,
    generated: &Result<(crate::data::Dataset, simgen::OracleHandle)>,
    mode: PropensityMode,
    fold: usize,
) -> FoldResult {
    let mut out = FoldResult {
        arity: scenario.arity,
        propensity: mode,
        censoring: scenario.censoring_kind,
        fold,
        censored_fraction: f64::NAN,
        reports: Vec::new(),
        error: None,
    };
    let (dataset, oracle) = match generated {
        Ok(g) => g,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.censored_fraction = dataset.censored_fraction();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::stream(scenario.seed, &[domain::SPLIT]));
    let mut train = Vec::new();
    let mut held_out = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if pos % cfg.folds == fold {
            train.push(i);
        } else {
            held_out.push(i);
        }
    }
    train.sort_unstable();
    held_out.sort_unstable();
    let mut fit_cfg = cfg.fit.clone();
    fit_cfg.propensity = match mode {
        PropensityMode::True => PropensityFeatures::Full,
        PropensityMode::Misspecified => PropensityFeatures::Misspecified,
    };
    fit_cfg.tau = TauSpec::Value(oracle.tau);
    fit_cfg.seed = rng::derive_seed(scenario.seed, &[domain::FIT, fold as u64]);
    let policy = match dtr::fit(&dataset.subset(&train), &fit_cfg) {
        Ok(p) => p,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let cohort: Vec<(Vec<f64>, Vec<f64>)> = held_out
        .iter()
        .map(|&i| (oracle.latents[i].x1.clone(), oracle.latents[i].x2.clone()))
        .collect();
    let opts = EvalOptions {
        cohort: EvalCohort::Given(&cohort),
        tau: oracle.tau,
        seed: rng::derive_seed(scenario.seed, &[domain::EVAL, fold as u64]),
        zero_noise: false,
    };
    let mut policies = vec![PolicySpec::Fitted(Box::new(policy))];
    policies.extend((0..scenario.arity).map(PolicySpec::Fixed));
    policies.push(PolicySpec::Random {
        seed: rng::derive_seed(scenario.seed, &[domain::RANDOM_POLICY, fold as u64]),
    });
    for p in &policies {
        match counterfactual_eval(p, oracle, &opts) {
            Ok(r) => out.reports.push(r),
            Err(e) => {
                out.error = Some(format!("{p}: {e}"));
                out.reports.clear();
                return out;
            }
        }
    }
    out
}

fn read_cache(path: &Path) -> Option<FoldResult> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs every (scenario, propensity mode, fold) job. With `cache_dir`, each
/// finished job is stored under its content hash and reused on rerun.
pub fn run_benchmark(cfg: &BenchmarkConfig, cache_dir: Option<&Path>) -> Result<BenchmarkReport> {
    cfg.validate()?;
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir)?;
    }
    let scenarios = cfg.scenarios();
    let mut jobs = Vec::new();
    for si in 0..scenarios.len() {
        for &mode in &cfg.propensity_modes {
            for fold in 0..cfg.folds {
                jobs.push(Job {
                    scenario: si,
                    mode,
                    fold,
                });
            }
        }
    }
    let keys: Vec<String> = jobs
        .iter()
        .map(|j| job_key(cfg, &scenarios[j.scenario], j.mode, j.fold))
        .collect::<Result<_>>()?;
    let cache_path = |k: &str| -> Option<PathBuf> { cache_dir.map(|d| d.join(format!("{k}.json"))) };
    let cached: Vec<Option<FoldResult>> = keys
        .iter()
        .map(|k| cache_path(k).and_then(|p| read_cache(&p)))
        .collect();

    // Generate only the datasets some pending job needs.
    let needed: Vec<bool> = (0..scenarios.len())
        .map(|si| jobs.iter().zip(&cached).any(|(j, c)| j.scenario == si && c.is_none()))
        .collect();
    let generated: Vec<Option<Result<_>>> = scenarios
        .par_iter()
        .zip(needed.par_iter())
        .map(|(s, &need)| need.then(|| simgen::generate(s)))
        .collect();

    let results: Vec<FoldResult> = jobs
        .par_iter()
        .zip(cached.into_par_iter())
        .zip(keys.par_iter())
        .map(|((j, c), k)| -> Result<FoldResult> {
            if let Some(r) = c {
                return Ok(r);
            }
            let g = generated[j.scenario].as_ref().expect("generated when needed");
            let r = run_job(cfg, &scenarios[j.scenario], g, j.mode, j.fold);
            if let Some(p) = cache_path(k) {
                write_atomic(&p, serde_json::to_string(&r)?.as_bytes())?;
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    Ok(tabulate(cfg, results))
}

fn tabulate(cfg: &BenchmarkConfig, folds: Vec<FoldResult>) -> BenchmarkReport {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for f in &folds {
        if let Some(e) = &f.error {
            failures.push(format!(
                "arity {} / {} / {} / fold {}: {e}",
                f.arity,
                mode_name(f.propensity),
                kind_name(f.censoring),
                f.fold + 1
            ));
        }
    }
    for &arity in &cfg.arities {
        for &mode in &cfg.propensity_modes {
            for &kind in &cfg.censoring_kinds {
                let cell: Vec<&FoldResult> = folds
                    .iter()
                    .filter(|f| f.arity == arity && f.propensity == mode && f.censoring == kind)
                    .filter(|f| f.error.is_none())
                    .collect();
                let Some(first) = cell.first() else { continue };
                let start = rows.len();
                for (m, rep) in first.reports.iter().enumerate() {
                    let pick = |g: &dyn Fn(&EvalReport) -> f64| -> Vec<f64> {
                        cell.iter().map(|f| g(&f.reports[m])).collect()
                    };
                    rows.push(TableRow {
                        arity,
                        propensity: mode,
                        censoring: kind,
                        method: rep.policy.clone(),
                        n_folds: cell.len(),
                        rmst: MetricSummary::of(&pick(&|r| r.rmst.mean)),
                        cdr1: MetricSummary::of(&pick(&|r| r.cdr1.mean)),
                        acdr: MetricSummary::of(&pick(&|r| r.acdr.mean)),
                        expected_survival: MetricSummary::of(&pick(&|r| r.expected_survival.mean)),
                        best: false,
                    });
                }
                let best = (start..rows.len()).fold(start, |b, i| {
                    if rows[i].rmst.mean > rows[b].rmst.mean {
                        i
                    } else {
                        b
                    }
                });
                rows[best].best = true;
            }
        }
    }
    BenchmarkReport {
        rows,
        folds,
        failures,
    }
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "arity",
            "propensity",
            "censoring",
            "method",
            "n_folds",
            "rmst_mean",
            "rmst_sd",
            "cdr1_mean",
            "cdr1_sd",
            "acdr_mean",
            "acdr_sd",
            "expected_survival_mean",
            "expected_survival_sd",
            "best",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.arity.to_string(),
                mode_name(r.propensity).to_string(),
                kind_name(r.censoring).to_string(),
                r.method.clone(),
                r.n_folds.to_string(),
                r.rmst.mean.to_string(),
                r.rmst.sd.to_string(),
                r.cdr1.mean.to_string(),
                r.cdr1.sd.to_string(),
                r.acdr.mean.to_string(),
                r.acdr.sd.to_string(),
                r.expected_survival.mean.to_string(),
                r.expected_survival.sd.to_string(),
                if r.best { "*".into() } else { String::new() },
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Fixed-width table; fractions as percentages.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:<13} {:<12} {:<8} {:>18} {:>15} {:>15} {:>22}  best",
            "arity", "propensity", "censoring", "method", "tau-RMST", "CDR1 (%)", "ACDR (%)", "E[T*]"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<6} {:<13} {:<12} {:<8} {:>18} {:>15} {:>15} {:>22}  {}",
                r.arity,
                mode_name(r.propensity),
                kind_name(r.censoring),
                r.method,
                format!("{:.2} ± {:.2}", r.rmst.mean, r.rmst.sd),
                format!("{:.2} ± {:.2}", 100.0 * r.cdr1.mean, 100.0 * r.cdr1.sd),
                format!("{:.2} ± {:.2}", 100.0 * r.acdr.mean, 100.0 * r.acdr.sd),
                format!("{:.2} ± {:.2}", r.expected_survival.mean, r.expected_survival.sd),
                if r.best { "*" } else { "" },
            );
        }
        for f in &self.failures {
            let _ = writeln!(out, "failed: {f}");
        }
        out
    }
}
