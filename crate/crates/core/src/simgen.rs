//! Semi-synthetic two-stage scenario generator.
//!
//! Stage 1 models renal/anemia management, stage 2 glycemic control. Each
//! subject draws from its own counter-based stream, so serial and parallel
//! generation are bit-identical. The generated [`Dataset`] carries only the
//! observed quantities; latent stage times, censoring times and the optimal
//! rules live in the [`OracleHandle`], which fitting code never receives.

use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CovariateSchema, Dataset, DatasetSchema, StageRecord, StageSchema, Trajectory};
use crate::error::{Error, Result};
use crate::rng::{self, domain, StreamRng};
use crate::stats;

pub const ORACLE_VERSION: u32 = 1;

pub const AGE: usize = 0;
pub const CREATININE: usize = 1;
pub const HEMOGLOBIN: usize = 2;
pub const POTASSIUM: usize = 3;
pub const SODIUM: usize = 4;
pub const GLUCOSE: usize = 5;
pub const PLATELETS: usize = 6;
pub const HEMATOCRIT: usize = 7;
pub const WBC: usize = 8;

pub const COVARIATE_NAMES: [&str; 9] = [
    "Age",
    "Creatinine",
    "Hemoglobin",
    "Potassium",
    "Sodium",
    "Glucose",
    "PlateletCount",
    "Hematocrit",
    "WBC",
];

pub const N_COVARIATES: usize = COVARIATE_NAMES.len();

/// Covariate sampler parameters.
///
/// Age (years) is uniform and shared by both stages; every lab value is
/// redrawn for stage 2. Hemoglobin (g/dL) falls with creatinine (mg/dL) so
/// that high-creatinine subjects are mostly anemic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateLaw {
    pub age_range: (f64, f64),
    pub creatinine_median: f64,
    pub creatinine_log_sd: f64,
    pub hemoglobin_intercept: f64,
    pub hemoglobin_creatinine_slope: f64,
    pub hemoglobin_sd: f64,
    pub hemoglobin_range: (f64, f64),
    pub potassium_mean: f64,
    pub potassium_sd: f64,
    pub sodium_mean: f64,
    pub sodium_sd: f64,
    pub glucose_median: f64,
    pub glucose_log_sd: f64,
    pub platelet_mean: f64,
    pub platelet_sd: f64,
    pub platelet_min: f64,
    pub hematocrit_mean: f64,
    pub hematocrit_sd: f64,
    pub wbc_median: f64,
    pub wbc_log_sd: f64,
}

impl Default for CovariateLaw {
    fn default() -> Self {
        Self {
            age_range: (40.0, 90.0),
            creatinine_median: 1.1,
            creatinine_log_sd: 0.369,
            hemoglobin_intercept: 12.75,
            hemoglobin_creatinine_slope: -4.5,
            hemoglobin_sd: 1.0,
            hemoglobin_range: (6.0, 18.0),
            potassium_mean: 4.2,
            potassium_sd: 0.5,
            sodium_mean: 139.0,
            sodium_sd: 4.0,
            glucose_median: 115.0,
            glucose_log_sd: 0.234,
            platelet_mean: 230.0,
            platelet_sd: 60.0,
            platelet_min: 10.0,
            hematocrit_mean: 38.0,
            hematocrit_sd: 5.0,
            wbc_median: 8.0,
            wbc_log_sd: 0.35,
        }
    }
}

impl CovariateLaw {
    pub fn creatinine_mean(&self) -> f64 {
        self.creatinine_median * (0.5 * self.creatinine_log_sd.powi(2)).exp()
    }

    pub fn creatinine_sd(&self) -> f64 {
        let s2 = self.creatinine_log_sd.powi(2);
        self.creatinine_mean() * (s2.exp() - 1.0).sqrt()
    }

    fn labs<R: Rng>(&self, age: f64, rng: &mut R) -> Vec<f64> {
        let mut z = || -> f64 { StandardNormal.sample(rng) };
        let cr = self.creatinine_median * (self.creatinine_log_sd * z()).exp();
        let hb = (self.hemoglobin_intercept
            + self.hemoglobin_creatinine_slope * (cr - self.creatinine_median)
            + self.hemoglobin_sd * z())
        .clamp(self.hemoglobin_range.0, self.hemoglobin_range.1);
        let k = self.potassium_mean + self.potassium_sd * z();
        let na = self.sodium_mean + self.sodium_sd * z();
        let glu = self.glucose_median * (self.glucose_log_sd * z()).exp();
        let plt = (self.platelet_mean + self.platelet_sd * z()).max(self.platelet_min);
        let hct = self.hematocrit_mean + self.hematocrit_sd * z();
        let wbc = self.wbc_median * (self.wbc_log_sd * z()).exp();
        vec![age, cr, hb, k, na, glu, plt, hct, wbc]
    }

    /// Stage-1 and stage-2 covariate blocks of one subject.
    pub fn sample_subject<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let age = rng.random_range(self.age_range.0..self.age_range.1);
        let x1 = self.labs(age, rng);
        let x2 = self.labs(age, rng);
        (x1, x2)
    }
}

/// Stage-1 and stage-2 covariate rows for `n` subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    pub stage1: Vec<Vec<f64>>,
    pub stage2: Vec<Vec<f64>>,
}

/// Draws `n` subjects' covariates; subject `i` uses stream `(seed, i)`.
pub fn sample_covariates(law: &CovariateLaw, n: usize, seed: u64) -> Result<CovariateMatrix> {
    if n == 0 {
        return Err(Error::arg("sample_covariates needs n >= 1"));
    }
    let (stage1, stage2) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[domain::SUBJECT, i as u64]);
            law.sample_subject(&mut r)
        })
        .unzip();
    Ok(CovariateMatrix { stage1, stage2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropensityMode {
    #[default]
    True,
    Misspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CensoringKind {
    Exponential,
    Conditional,
    Uniform,
    None,
}

/// `tau`: either `"auto"` (0.9-quantile of observed `T`) or a positive number.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TauSpec {
    #[default]
    Auto,
    Value(f64),
}

pub const AUTO_TAU_QUANTILE: f64 = 0.9;

impl TauSpec {
    pub fn resolve(&self, observed_times: &[f64]) -> Result<f64> {
        match *self {
            TauSpec::Value(v) if v > 0.0 && v.is_finite() => Ok(v),
            TauSpec::Value(v) => Err(Error::config(format!("tau: must be positive, got {v}"))),
            TauSpec::Auto => {
                if observed_times.is_empty() {
                    return Err(Error::arg("cannot resolve tau on empty data"));
                }
                Ok(stats::quantile(observed_times, AUTO_TAU_QUANTILE))
            }
        }
    }
}

impl Serialize for TauSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TauSpec::Auto => s.serialize_str("auto"),
            TauSpec::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for TauSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(TauSpec::Value(v)),
            Repr::Str(s) if s == "auto" => Ok(TauSpec::Auto),
            Repr::Str(s) => Err(serde::de::Error::custom(format!(
                "tau must be \"auto\" or a number, got {s:?}"
            ))),
        }
    }
}

/// Censoring-time law. `c0` is the scale (mean) of the base exponential draw;
/// `lower`/`upper` bound the uniform kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoringParams {
    pub kind: CensoringKind,
    pub c0: f64,
    pub lower: f64,
    pub upper: f64,
}

impl CensoringParams {
    pub fn none() -> Self {
        Self {
            kind: CensoringKind::None,
            c0: 0.0,
            lower: 0.0,
            upper: 0.0,
        }
    }

    pub fn exponential(c0: f64) -> Self {
        Self {
            kind: CensoringKind::Exponential,
            c0,
            lower: 0.0,
            upper: 0.0,
        }
    }

    pub fn conditional(c0: f64) -> Self {
        Self {
            kind: CensoringKind::Conditional,
            ..Self::exponential(c0)
        }
    }

    pub fn uniform(lower: f64, upper: f64) -> Self {
        Self {
            kind: CensoringKind::Uniform,
            c0: 0.0,
            lower,
            upper,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            CensoringKind::None => Ok(()),
            CensoringKind::Exponential | CensoringKind::Conditional => {
                if self.c0 > 0.0 && self.c0.is_finite() {
                    Ok(())
                } else {
                    Err(Error::config(format!("censoring.c0: must be positive, got {}", self.c0)))
                }
            }
            CensoringKind::Uniform => {
                if self.lower >= 0.0 && self.lower < self.upper && self.upper.is_finite() {
                    Ok(())
                } else {
                    Err(Error::config(format!(
                        "censoring bounds: need 0 <= lower < upper, got ({}, {})",
                        self.lower, self.upper
                    )))
                }
            }
        }
    }
}

/// Covariate multiplier of the conditional censoring kind.
pub fn conditional_censoring_factor(x1: &[f64]) -> f64 {
    (0.3 * x1[CREATININE] + 0.2 * (x1[POTASSIUM] - 4.0).abs()).exp()
}

/// Raw draws behind one subject's censoring time, fixed per subject so that
/// calibration works on common random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoringDraw {
    pub exp1: f64,
    pub unif: f64,
}

pub fn sample_censoring(params: &CensoringParams, x1: &[f64], draw: CensoringDraw) -> f64 {
    match params.kind {
        CensoringKind::None => f64::INFINITY,
        CensoringKind::Exponential => params.c0 * draw.exp1,
        CensoringKind::Conditional => params.c0 * draw.exp1 * conditional_censoring_factor(x1),
        CensoringKind::Uniform => params.lower + (params.upper - params.lower) * draw.unif,
    }
}

fn softmax_from_logits(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn check_arity(arity: usize) {
    assert!(arity == 2 || arity == 3, "scenario arity must be 2 or 3");
}

/// True stage-1 treatment probabilities; reference arm weight is 1.
pub fn stage1_propensity(x1: &[f64], arity: usize) -> Vec<f64> {
    check_arity(arity);
    let logits = if arity == 2 {
        vec![0.0, 0.2 * x1[CREATININE] + 0.2 * x1[HEMOGLOBIN]]
    } else {
        vec![
            0.0,
            0.2 * x1[CREATININE] + 0.1 * x1[POTASSIUM],
            0.2 * x1[HEMOGLOBIN] - 0.02 * x1[AGE],
        ]
    };
    softmax_from_logits(&logits)
}

/// True stage-2 treatment probabilities given stage-2 covariates and `T_1`.
pub fn stage2_propensity(x2: &[f64], t1: f64, arity: usize) -> Vec<f64> {
    check_arity(arity);
    let logits = if arity == 2 {
        vec![0.0, 0.002 * x2[GLUCOSE] + 0.005 * t1]
    } else {
        vec![
            0.0,
            0.002 * x2[GLUCOSE] + 0.002 * x2[SODIUM],
            0.005 * x2[PLATELETS] + 0.005 * t1,
        ]
    };
    softmax_from_logits(&logits)
}

fn ind(b: bool) -> usize {
    b as usize
}

pub fn g1_opt(x1: &[f64], arity: usize) -> usize {
    check_arity(arity);
    let high_cr = ind(x1[CREATININE] > 1.5);
    if arity == 2 {
        high_cr * ind(x1[HEMOGLOBIN] <= 12.0)
    } else {
        high_cr * (1 + ind(x1[HEMOGLOBIN] <= 10.0))
    }
}

/// Stage-2 optimal rule. The binary rule `I(G > 140) + I(T_1 < 3)` can reach
/// 2, so it is clamped to 1 (logical OR).
pub fn g2_opt(glucose: f64, t1: f64, arity: usize) -> usize {
    check_arity(arity);
    let high_glu = ind(glucose > 140.0);
    if arity == 2 {
        (high_glu + ind(t1 < 3.0)).min(1)
    } else {
        high_glu * (ind(t1 > 0.5) + ind(t1 > 3.0))
    }
}

/// Latent stage-1 time.
pub fn stage1_time(x1: &[f64], a1: usize, arity: usize, eps: f64) -> f64 {
    let dev = a1 as f64 - g1_opt(x1, arity) as f64;
    let penalty = (1.5 * x1[CREATININE] - 2.0).abs() * dev * dev;
    (1.5 + 0.3 * x1[POTASSIUM] - penalty + eps).exp()
}

/// Latent stage-2 time given the latent stage-1 time.
pub fn stage2_time(x2: &[f64], t1: f64, a2: usize, arity: usize, eps: f64) -> f64 {
    let dev = a2 as f64 - g2_opt(x2[GLUCOSE], t1, arity) as f64;
    let penalty = (0.5 * x2[GLUCOSE] + 2.0).abs() * dev * dev;
    (1.18 + 0.2 * t1 - penalty + eps).exp()
}

/// `(T_1, T_2)` for given treatments and noise terms.
pub fn gen_stage_times(
    x1: &[f64],
    x2: &[f64],
    a1: usize,
    a2: usize,
    arity: usize,
    eps: (f64, f64),
) -> (f64, f64) {
    let t1 = stage1_time(x1, a1, arity, eps.0);
    let t2 = stage2_time(x2, t1, a2, arity, eps.1);
    (t1, t2)
}

/// Observed bookkeeping for one subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observed {
    /// Entered stage 2.
    pub eta: bool,
    pub total: f64,
    pub r1: f64,
    /// `None` when stage 2 was not entered.
    pub r2: Option<f64>,
    pub delta1: bool,
    pub delta2: Option<bool>,
}

pub fn assemble_observed(t1: f64, t2: f64, c: f64) -> Observed {
    let eta = t1 < c;
    let t_unob = if eta { t1 + t2 } else { t1 };
    let total = t_unob.min(c);
    let r1 = if total < t1 { total } else { t1 };
    let r2 = eta.then(|| if total >= t1 { total - t1 } else { 0.0 });
    Observed {
        eta,
        total,
        r1,
        r2,
        delta1: eta,
        delta2: eta.then_some(t_unob <= c),
    }
}

fn categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs.len() - 1
}

fn sample_noise<R: Rng>(rate: f64, rng: &mut R) -> f64 {
    Exp::new(rate).expect("noise rate validated").sample(rng)
}

/// All latent quantities of one simulated subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectLatent {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub a1: usize,
    pub a2: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub t1: f64,
    pub t2: f64,
    pub censoring_draw: CensoringDraw,
    /// Censoring time; infinite when censoring is off (`null` in JSON).
    #[serde(with = "infinite_as_null")]
    pub c: f64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn draw_subject(
    law: &CovariateLaw,
    arity: usize,
    noise_rate: f64,
    seed: u64,
    stream_domain: u64,
    i: usize,
) -> SubjectLatent {
    let mut r: StreamRng = rng::stream(seed, &[stream_domain, i as u64]);
    let (x1, x2) = law.sample_subject(&mut r);
    let a1 = categorical(&stage1_propensity(&x1, arity), &mut r);
    let eps1 = sample_noise(noise_rate, &mut r);
    let t1 = stage1_time(&x1, a1, arity, eps1);
    let a2 = categorical(&stage2_propensity(&x2, t1, arity), &mut r);
    let eps2 = sample_noise(noise_rate, &mut r);
    let t2 = stage2_time(&x2, t1, a2, arity, eps2);
    let censoring_draw = CensoringDraw {
        exp1: Exp1.sample(&mut r),
        unif: r.random(),
    };
    SubjectLatent {
        x1,
        x2,
        a1,
        a2,
        eps1,
        eps2,
        t1,
        t2,
        censoring_draw,
        c: f64::INFINITY,
    }
}

fn default_target() -> f64 {
    0.62
}

fn default_noise() -> f64 {
    10.0
}

fn default_pilot() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_subjects: usize,
    /// Number of treatment options (2 or 3), shared by both stages.
    pub arity: usize,
    #[serde(default)]
    pub propensity_mode: PropensityMode,
    pub censoring_kind: CensoringKind,
    #[serde(default = "default_target")]
    pub target_censor_rate: f64,
    /// Rate of the exponential noise term.
    #[serde(default = "default_noise")]
    pub noise_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub tau: TauSpec,
    /// Explicit censoring law; skips calibration when present.
    #[serde(default)]
    pub censoring: Option<CensoringParams>,
    /// Lower bound of the uniform censoring law during calibration.
    #[serde(default)]
    pub uniform_lower: f64,
    #[serde(default = "default_pilot")]
    pub pilot_size: usize,
    #[serde(default)]
    pub covariates: CovariateLaw,
}

impl ScenarioConfig {
    pub fn new(n_subjects: usize, arity: usize, censoring_kind: CensoringKind, seed: u64) -> Self {
        Self {
            n_subjects,
            arity,
            propensity_mode: PropensityMode::True,
            censoring_kind,
            target_censor_rate: if censoring_kind == CensoringKind::None {
                0.0
            } else {
                default_target()
            },
            noise_rate: default_noise(),
            seed,
            tau: TauSpec::Auto,
            censoring: None,
            uniform_lower: 0.0,
            pilot_size: default_pilot(),
            covariates: CovariateLaw::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::config("n_subjects: must be at least 1"));
        }
        if self.arity != 2 && self.arity != 3 {
            return Err(Error::config(format!("arity: must be 2 or 3, got {}", self.arity)));
        }
        if !(0.0..1.0).contains(&self.target_censor_rate) {
            return Err(Error::config(format!(
                "target_censor_rate: must be in [0, 1), got {}",
                self.target_censor_rate
            )));
        }
        if !(self.noise_rate > 0.0 && self.noise_rate.is_finite()) {
            return Err(Error::config(format!(
                "noise_rate: must be positive, got {}",
                self.noise_rate
            )));
        }
        if let TauSpec::Value(v) = self.tau {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("tau: must be positive, got {v}")));
            }
        }
        if self.uniform_lower < 0.0 {
            return Err(Error::config("uniform_lower: must be non-negative"));
        }
        if self.pilot_size == 0 {
            return Err(Error::config("pilot_size: must be at least 1"));
        }
        if let Some(p) = &self.censoring {
            p.validate()?;
            if p.kind != self.censoring_kind {
                return Err(Error::config(
                    "censoring.kind: must match censoring_kind",
                ));
            }
        }
        Ok(())
    }

    fn draw(&self, stream_domain: u64, seed: u64, n: usize) -> Vec<SubjectLatent> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                draw_subject(
                    &self.covariates,
                    self.arity,
                    self.noise_rate,
                    seed,
                    stream_domain,
                    i,
                )
            })
            .collect()
    }

    /// Latent draws for the calibration pilot (independent of the main sample).
    pub fn pilot(&self) -> Vec<SubjectLatent> {
        self.draw(domain::PILOT, self.seed, self.pilot_size)
    }
}

/// Fraction of subjects censored before `T_1 + T_2` under `params`.
pub fn censoring_rate(params: &CensoringParams, pilot: &[SubjectLatent]) -> f64 {
    if pilot.is_empty() {
        return 0.0;
    }
    let censored = pilot
        .iter()
        .filter(|s| sample_censoring(params, &s.x1, s.censoring_draw) < s.t1 + s.t2)
        .count();
    censored as f64 / pilot.len() as f64
}

pub const CALIBRATION_TOLERANCE: f64 = 0.02;

/// Finds censoring parameters reaching `target_rate` on `pilot` by bisection
/// (on `c0` for the exponential kinds, on the upper bound for uniform).
pub fn calibrate_censoring(
    kind: CensoringKind,
    target_rate: f64,
    pilot: &[SubjectLatent],
    uniform_lower: f64,
) -> Result<CensoringParams> {
    if kind == CensoringKind::None {
        if target_rate == 0.0 {
            return Ok(CensoringParams::none());
        }
        return Err(Error::Calibration(
            "censoring kind none cannot reach a positive target".into(),
        ));
    }
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::Calibration(format!(
            "target rate must be in (0, 1), got {target_rate}"
        )));
    }
    if pilot.is_empty() {
        return Err(Error::Calibration("empty pilot sample".into()));
    }
    let make = |v: f64| match kind {
        CensoringKind::Exponential => CensoringParams::exponential(v),
        CensoringKind::Conditional => CensoringParams::conditional(v),
        CensoringKind::Uniform => CensoringParams::uniform(uniform_lower, uniform_lower + v),
        CensoringKind::None => unreachable!(),
    };
    // The censoring rate is non-increasing in v for every kind.
    let excess = |v: f64| censoring_rate(&make(v), pilot) - target_rate;

    let mut totals: Vec<f64> = pilot.iter().map(|s| s.t1 + s.t2).collect();
    totals.sort_by(f64::total_cmp);
    let scale = stats::quantile_sorted(&totals, 0.5).max(f64::MIN_POSITIVE);
    let bracket_err = || {
        Error::Calibration(format!(
            "no bracketing interval for target {target_rate} ({kind:?})"
        ))
    };
    let (mut lo, mut hi) = (scale, scale);
    let mut expansions = 0;
    while excess(lo) <= 0.0 {
        lo /= 4.0;
        expansions += 1;
        if expansions > 200 || lo < 1e-300 {
            return Err(bracket_err());
        }
    }
    expansions = 0;
    while excess(hi) >= 0.0 {
        hi *= 4.0;
        expansions += 1;
        if expansions > 200 || !hi.is_finite() {
            return Err(bracket_err());
        }
    }
    let mut best = (f64::INFINITY, lo);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        let e = excess(mid);
        if e.abs() < best.0 {
            best = (e.abs(), mid);
        }
        if e.abs() <= 1e-3 || hi / lo < 1.0 + 1e-12 {
            break;
        }
        if e > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > CALIBRATION_TOLERANCE {
        return Err(Error::Calibration(format!(
            "best achievable censoring rate misses target {target_rate} by {:.4}",
            best.0
        )));
    }
    Ok(make(best.1))
}

/// Everything the evaluation harness needs and the fitting code must not see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleHandle {
    pub version: u32,
    pub scenario: ScenarioConfig,
    pub censoring: CensoringParams,
    pub tau: f64,
    pub latents: Vec<SubjectLatent>,
}

impl OracleHandle {
    pub fn arity(&self) -> usize {
        self.scenario.arity
    }

    pub fn g1_opt(&self, x1: &[f64]) -> usize {
        g1_opt(x1, self.arity())
    }

    pub fn g2_opt(&self, x2: &[f64], t1: f64) -> usize {
        g2_opt(x2[GLUCOSE], t1, self.arity())
    }

    pub fn stage_times(&self, x1: &[f64], x2: &[f64], a1: usize, a2: usize, eps: (f64, f64)) -> (f64, f64) {
        gen_stage_times(x1, x2, a1, a2, self.arity(), eps)
    }

    /// Draws noise for counterfactual replay.
    pub fn sample_noise<R: Rng>(&self, rng: &mut R) -> f64 {
        sample_noise(self.scenario.noise_rate, rng)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let found = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
        if found != ORACLE_VERSION {
            return Err(Error::Version {
                expected: ORACLE_VERSION,
                found,
            });
        }
        Ok(serde_json::from_value(v)?)
    }
}

pub fn scenario_schema(arity: usize) -> DatasetSchema {
    let stage = StageSchema {
        covariates: CovariateSchema::new(COVARIATE_NAMES).expect("static names"),
        arity,
    };
    DatasetSchema::new(vec![stage.clone(), stage]).expect("static schema")
}

fn trajectory_of(s: &SubjectLatent) -> Trajectory {
    let o = assemble_observed(s.t1, s.t2, s.c);
    let mut stages = vec![StageRecord {
        covariates: s.x1.clone(),
        treatment: s.a1,
        duration: o.r1,
        event: o.delta1,
    }];
    if o.eta {
        stages.push(StageRecord {
            covariates: s.x2.clone(),
            treatment: s.a2,
            duration: o.r2.expect("entered"),
            event: o.delta2.expect("entered"),
        });
    }
    Trajectory {
        stages,
        total_time: o.total,
    }
}

/// Generates the observed dataset and the oracle for a scenario.
pub fn generate(config: &ScenarioConfig) -> Result<(Dataset, OracleHandle)> {
    config.validate()?;
    let censoring = match (&config.censoring, config.censoring_kind) {
        (Some(p), _) => *p,
        (None, CensoringKind::None) if config.target_censor_rate == 0.0 => CensoringParams::none(),
        (None, kind) => {
            let pilot = config.pilot();
            calibrate_censoring(kind, config.target_censor_rate, &pilot, config.uniform_lower)?
        }
    };
    let mut latents = config.draw(domain::SUBJECT, config.seed, config.n_subjects);
    for (i, s) in latents.iter_mut().enumerate() {
        if !(s.t1.is_finite() && s.t2.is_finite()) {
            return Err(Error::Numerical(format!(
                "subject {i}: latent survival time overflowed; increase noise_rate"
            )));
        }
        s.c = sample_censoring(&censoring, &s.x1, s.censoring_draw);
    }
    let trajectories: Vec<Trajectory> = latents.iter().map(trajectory_of).collect();
    let observed: Vec<f64> = trajectories.iter().map(|t| t.total_time).collect();
    let tau = config.tau.resolve(&observed)?;
    let dataset = Dataset::new(scenario_schema(config.arity), trajectories)?;
    let oracle = OracleHandle {
        version: ORACLE_VERSION,
        scenario: config.clone(),
        censoring,
        tau,
        latents,
    };
    Ok((dataset, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x_with(pairs: &[(usize, f64)]) -> Vec<f64> {
        let mut x = vec![0.0; N_COVARIATES];
        for &(i, v) in pairs {
            x[i] = v;
        }
        x
    }

    #[test]
    fn stage1_propensity_examples() {
        let p = stage1_propensity(&x_with(&[]), 2);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = stage1_propensity(&x_with(&[(CREATININE, 1.0), (HEMOGLOBIN, 1.0)]), 2);
        let e = 0.4f64.exp();
        assert!((p[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((p[0] - 0.4013).abs() < 1e-4 && (p[1] - 0.5987).abs() < 1e-4);
        let p = stage1_propensity(&x_with(&[]), 3);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn stage2_propensity_examples() {
        assert_eq!(stage2_propensity(&x_with(&[]), 0.0, 2), vec![0.5, 0.5]);
        let p = stage2_propensity(&x_with(&[(GLUCOSE, 100.0)]), 20.0, 2);
        assert!((p[0] - 0.4256).abs() < 1e-4 && (p[1] - 0.5744).abs() < 1e-4);
        let p = stage2_propensity(&x_with(&[]), 0.0, 3);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn optimal_rules() {
        assert_eq!(g1_opt(&x_with(&[(CREATININE, 2.0), (HEMOGLOBIN, 10.0)]), 2), 1);
        assert_eq!(g1_opt(&x_with(&[(CREATININE, 1.0), (HEMOGLOBIN, 10.0)]), 2), 0);
        assert_eq!(g1_opt(&x_with(&[(CREATININE, 2.0), (HEMOGLOBIN, 9.0)]), 3), 2);
        assert_eq!(g2_opt(120.0, 5.0, 2), 0);
        assert_eq!(g2_opt(150.0, 5.0, 2), 1);
        assert_eq!(g2_opt(150.0, 1.0, 2), 1);
        assert_eq!(g2_opt(120.0, 1.0, 2), 1);
        assert_eq!(g2_opt(150.0, 1.0, 3), 1);
        assert_eq!(g2_opt(150.0, 4.0, 3), 2);
    }

    #[test]
    fn stage_times_closed_forms() {
        let x1 = x_with(&[(POTASSIUM, 4.0)]);
        let t1 = stage1_time(&x1, g1_opt(&x1, 2), 2, 0.0);
        assert!((t1 - 2.7f64.exp()).abs() < 1e-12);
        assert!((t1 - 14.8797).abs() < 1e-4);
        let x2 = x_with(&[(GLUCOSE, 100.0)]);
        let t2 = stage2_time(&x2, 1.0, g2_opt(100.0, 1.0, 2), 2, 0.0);
        assert!((t2 - 1.38f64.exp()).abs() < 1e-12);
        // Cr = 2, Hb high -> optimal 0; treating with 1 costs |3 - 2| = 1.
        let x1 = x_with(&[(POTASSIUM, 4.0), (CREATININE, 2.0), (HEMOGLOBIN, 14.0)]);
        let wrong = stage1_time(&x1, 1, 2, 0.0);
        assert!((wrong - 1.7f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn censoring_draws() {
        let draw = CensoringDraw { exp1: 0.7, unif: 0.3 };
        let u = CensoringParams::uniform(2.0, 2.0 + 1e-9);
        assert!((sample_censoring(&u, &x_with(&[]), draw) - 2.0).abs() < 1e-8);
        let neutral = x_with(&[(POTASSIUM, 4.0)]);
        let cond = sample_censoring(&CensoringParams::conditional(3.0), &neutral, draw);
        let expo = sample_censoring(&CensoringParams::exponential(3.0), &neutral, draw);
        assert_eq!(cond, expo);
    }

    #[test]
    fn observed_bookkeeping_examples() {
        let o = assemble_observed(3.0, 4.0, 5.0);
        assert!(o.eta);
        assert_eq!((o.total, o.r1, o.r2, o.delta2), (5.0, 3.0, Some(2.0), Some(false)));
        let o = assemble_observed(3.0, 4.0, 2.0);
        assert!(!o.eta);
        assert_eq!((o.total, o.r1, o.r2), (2.0, 2.0, None));
        let o = assemble_observed(3.0, 4.0, 100.0);
        assert_eq!((o.total, o.r1, o.r2, o.delta2), (7.0, 3.0, Some(4.0), Some(true)));
    }

    #[test]
    fn covariates_require_subjects_and_are_deterministic() {
        let law = CovariateLaw::default();
        assert!(sample_covariates(&law, 0, 1).is_err());
        let a = sample_covariates(&law, 50, 9).unwrap();
        let b = sample_covariates(&law, 50, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn creatinine_mean_matches_law() {
        let law = CovariateLaw::default();
        let n = 10_000;
        let m = sample_covariates(&law, n, 3).unwrap();
        let emp = stats::mean(&m.stage1.iter().map(|x| x[CREATININE]).collect::<Vec<_>>());
        let se = law.creatinine_sd() / (n as f64).sqrt();
        assert!((emp - law.creatinine_mean()).abs() < 3.0 * se, "{emp}");
    }

    #[test]
    fn no_censoring_observes_everything() {
        let cfg = ScenarioConfig::new(300, 2, CensoringKind::None, 5);
        let (d, o) = generate(&cfg).unwrap();
        for (t, s) in d.trajectories().iter().zip(&o.latents) {
            assert_eq!(t.n_entered(), 2);
            assert!(t.stages.iter().all(|r| r.event));
            assert_eq!(t.total_time, s.t1 + s.t2);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ScenarioConfig::new(500, 3, CensoringKind::Exponential, 11);
        let (d1, _) = generate(&cfg).unwrap();
        let (d2, _) = generate(&cfg).unwrap();
        let mut b1 = Vec::new();
        let mut b2 = Vec::new();
        d1.write_csv(&mut b1, &[]).unwrap();
        d2.write_csv(&mut b2, &[]).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn calibration_degenerate_and_extreme_targets() {
        assert_eq!(
            calibrate_censoring(CensoringKind::None, 0.0, &[], 0.0).unwrap().kind,
            CensoringKind::None
        );
        let cfg = ScenarioConfig::new(10, 2, CensoringKind::Exponential, 2);
        let pilot = ScenarioConfig { pilot_size: 2000, ..cfg }.pilot();
        for kind in [CensoringKind::Exponential, CensoringKind::Uniform] {
            match calibrate_censoring(kind, 0.99, &pilot, 0.0) {
                Ok(p) => assert!((censoring_rate(&p, &pilot) - 0.99).abs() <= 0.02),
                Err(e) => assert!(matches!(e, Error::Calibration(_))),
            }
        }
    }

    #[test]
    fn calibration_hits_target_for_every_kind() {
        let cfg = ScenarioConfig::new(10, 2, CensoringKind::Exponential, 5);
        let pilot = ScenarioConfig { pilot_size: 4000, ..cfg }.pilot();
        for kind in [CensoringKind::Exponential, CensoringKind::Conditional, CensoringKind::Uniform] {
            let p = calibrate_censoring(kind, 0.62, &pilot, 0.0).unwrap();
            assert_eq!(p.kind, kind);
            assert!((censoring_rate(&p, &pilot) - 0.62).abs() <= CALIBRATION_TOLERANCE);
        }
    }

    #[test]
    fn config_rejects_out_of_range_rate() {
        let mut cfg = ScenarioConfig::new(10, 2, CensoringKind::Exponential, 2);
        cfg.target_censor_rate = 1.2;
        let e = cfg.validate().unwrap_err().to_string();
        assert!(e.contains("target_censor_rate"), "{e}");
    }

    #[test]
    fn tau_spec_serde() {
        let t: TauSpec = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(t, TauSpec::Auto);
        let t: TauSpec = serde_json::from_str("52").unwrap();
        assert_eq!(t, TauSpec::Value(52.0));
        assert!(serde_json::from_str::<TauSpec>("\"soon\"").is_err());
    }
}
