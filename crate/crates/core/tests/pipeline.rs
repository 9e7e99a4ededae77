//! End-to-end checks of fitting, persistence, grid search and evaluation.

use catrl::caipw::{caipw_matrix, CaipwInputs};
use catrl::data::{read_csv, Dataset};
use catrl::dtr::{fit, fit_with, grid_search, DTRPolicy, FitConfig, NuisanceProvider, StageContext};
use catrl::eval::{counterfactual_eval, EvalCohort, EvalOptions, PolicySpec};
use catrl::nuisance::{ForestParams, StageNuisance};
use catrl::simgen::{
    generate, stage1_propensity, stage2_propensity, CensoringKind, OracleHandle, ScenarioConfig, GLUCOSE,
    N_COVARIATES,
};

fn small_config() -> FitConfig {
    let mut cfg = FitConfig::default();
    cfg.nuisance.forest = ForestParams {
        n_trees: 30,
        ..ForestParams::default()
    };
    cfg
}

fn scenario(n: usize, arity: usize, kind: CensoringKind, seed: u64) -> (Dataset, OracleHandle) {
    let mut s = ScenarioConfig::new(n, arity, kind, seed);
    s.pilot_size = 2000;
    generate(&s).unwrap()
}

#[test]
fn fitting_is_deterministic() {
    let (data, _) = scenario(600, 2, CensoringKind::Exponential, 3);
    let a = fit(&data, &small_config()).unwrap().to_json().unwrap();
    let b = fit(&data, &small_config()).unwrap().to_json().unwrap();
    assert_eq!(a, b);
}

#[test]
fn policies_survive_a_save_load_round_trip() {
    let (data, _) = scenario(500, 3, CensoringKind::Uniform, 4);
    let policy = fit(&data, &small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    policy.save(&path).unwrap();
    let back = DTRPolicy::load(&path).unwrap();
    assert_eq!(back, policy);
    for t in data.trajectories() {
        for k in 0..t.n_entered() {
            let h = catrl::data::build_history(t, k).unwrap();
            assert_eq!(back.recommend_history(&h, k).unwrap(), policy.recommend_history(&h, k).unwrap());
        }
    }
}

#[test]
fn corrupted_policy_is_rejected() {
    let (data, _) = scenario(400, 2, CensoringKind::Exponential, 5);
    let json = fit(&data, &small_config()).unwrap().to_json().unwrap();
    assert!(DTRPolicy::from_json(&json.replacen("\"version\": 1", "\"version\": 99", 1)).is_err());
    assert!(DTRPolicy::from_json(&json[..json.len() / 2]).is_err());
}

#[test]
fn backward_induction_order() {
    let (data, _) = scenario(500, 2, CensoringKind::Conditional, 6);
    let cfg = small_config();
    let out = fit_with(&data, &cfg, &catrl::dtr::FittedNuisances(&cfg.nuisance)).unwrap();
    let pos = |stage: usize, step: &str| {
        out.trace
            .events
            .iter()
            .position(|e| e.stage == stage && e.step == step)
            .unwrap()
    };
    assert!(pos(1, "tree") < pos(0, "pseudo"));
    assert!(pos(0, "pseudo") < pos(0, "nuisance"));
    assert!(pos(0, "nuisance") < pos(0, "tree"));
    for e in &out.trace.events {
        assert!(e.uses.iter().all(|&u| u >= e.stage), "{e:?}");
    }
}

#[test]
fn csv_round_trip() {
    let (data, _) = scenario(300, 3, CensoringKind::Exponential, 7);
    let mut buf = Vec::new();
    data.write_csv(&mut buf, &["comment".into()]).unwrap();
    let back = read_csv(buf.as_slice(), data.schema()).unwrap();
    assert_eq!(back.trajectories(), data.trajectories());
}

/// True propensities, no censoring, constant mean.
struct Truth {
    arity: usize,
    stage: usize,
}

const MU: f64 = 5.0;

impl StageNuisance for Truth {
    fn arity(&self) -> usize {
        self.arity
    }
    fn propensity(&self, h: &[f64]) -> Vec<f64> {
        let p = N_COVARIATES;
        if self.stage == 0 {
            stage1_propensity(&h[..p], self.arity)
        } else {
            stage2_propensity(&h[p + 2..], h[p + 1], self.arity)
        }
    }
    fn censoring_survival(&self, _: &[f64], _: f64) -> f64 {
        1.0
    }
    fn conditional_mean(&self, _: &[f64], _: usize) -> f64 {
        MU
    }
}

struct TruthProvider;

impl NuisanceProvider for TruthProvider {
    fn build(&self, ctx: StageContext<'_>) -> catrl::Result<Box<dyn StageNuisance>> {
        Ok(Box::new(Truth {
            arity: ctx.data.arity,
            stage: ctx.stage,
        }))
    }
}

#[test]
fn uncensored_final_stage_is_plain_aipw() {
    let (data, _) = scenario(800, 2, CensoringKind::None, 8);
    let out = fit_with(&data, &small_config(), &TruthProvider).unwrap();
    let tau = out.policy.tau;
    let m = &out.matrices[1];
    let p = N_COVARIATES;
    for (j, &i) in m.subjects.iter().enumerate() {
        let t = &data.trajectories()[i];
        let h = catrl::data::build_history(t, 1).unwrap();
        let pi = stage2_propensity(&h[p + 2..], h[p + 1], 2);
        assert_eq!(h[p + 2 + GLUCOSE], t.stages[1].covariates[GLUCOSE]);
        let y = t.total_time.min(tau);
        for a in 0..2 {
            let ind = if t.stages[1].treatment == a { 1.0 } else { 0.0 };
            let want = ind * y / pi[a] + (1.0 - ind / pi[a]) * MU;
            assert!((m.get(j, a) - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
}

/// Row-aware models must be queried through the row methods.
struct RowAware;

impl StageNuisance for RowAware {
    fn arity(&self) -> usize {
        2
    }
    fn propensity(&self, _: &[f64]) -> Vec<f64> {
        vec![0.5, 0.5]
    }
    fn censoring_survival(&self, _: &[f64], _: f64) -> f64 {
        0.5
    }
    fn conditional_mean(&self, _: &[f64], _: usize) -> f64 {
        100.0
    }
    fn censoring_survival_row(&self, _: usize, _: &[f64], _: f64) -> f64 {
        1.0
    }
    fn conditional_mean_row(&self, row: usize, _: &[f64], _: usize) -> f64 {
        row as f64
    }
}

#[test]
fn caipw_matrix_uses_row_predictions() {
    let histories = vec![vec![0.0]; 3];
    let inputs = CaipwInputs {
        stage: 0,
        subjects: &[10, 11, 12],
        histories: &histories,
        treatments: &[0, 1, 0],
        deltas: &[true, true, false],
        outcomes: &[4.0, 6.0, 8.0],
        weight_times: &[4.0, 6.0, 8.0],
        censoring_floor: 0.05,
    };
    let m = caipw_matrix(&inputs, &RowAware).unwrap();
    // Row 0, arm 0: 4 / 0.5 + (1 - 2) * 0.
    assert_eq!(m.row(0), &[8.0, 0.0]);
    assert_eq!(m.row(1), &[1.0, 12.0 - 1.0]);
    assert_eq!(m.row(2), &[-2.0, 2.0]);
}

#[test]
fn grid_search_picks_a_scored_config() {
    let (data, _) = scenario(800, 2, CensoringKind::Exponential, 9);
    let mut shallow = small_config();
    shallow.tree.max_depth = 1;
    let grid = vec![small_config(), shallow];
    let (best, report) = grid_search(&data, &grid, 0.5, 11).unwrap();
    assert_eq!(report.entries.len(), 2);
    assert_eq!(report.n_train + report.n_validation, 800);
    let top = report.entries[report.best].score.unwrap();
    assert!(report.entries.iter().all(|e| e.score.is_none_or(|s| s <= top)));
    assert_eq!(best, grid[report.best]);
    let (_, again) = grid_search(&data, &grid, 0.5, 11).unwrap();
    assert_eq!(again, report);
    assert!(grid_search(&data, &[], 0.5, 11).is_err());
}

#[test]
fn oracle_policy_dominates_baselines() {
    for arity in [2, 3] {
        let (_, oracle) = scenario(200, arity, CensoringKind::Exponential, 12);
        let opts = EvalOptions {
            cohort: EvalCohort::Fresh(20_000),
            tau: oracle.tau,
            seed: 13,
            zero_noise: false,
        };
        let best = counterfactual_eval(&PolicySpec::Optimal, &oracle, &opts).unwrap();
        assert_eq!(best.cdr1.mean, 1.0);
        assert_eq!(best.acdr.mean, 1.0);
        let mut others: Vec<PolicySpec> = (0..arity).map(PolicySpec::Fixed).collect();
        others.push(PolicySpec::Random { seed: 14 });
        for p in &others {
            let r = counterfactual_eval(p, &oracle, &opts).unwrap();
            let se = (best.expected_survival.se.powi(2) + r.expected_survival.se.powi(2)).sqrt();
            assert!(best.expected_survival.mean + 3.0 * se >= r.expected_survival.mean, "{p}");
            assert!(r.acdr.mean <= r.cdr1.mean, "{p}");
            assert!(r.rmst.mean <= oracle.tau);
        }
        let random = counterfactual_eval(&PolicySpec::Random { seed: 15 }, &oracle, &opts).unwrap();
        let target = 1.0 / arity as f64;
        assert!((random.cdr1.mean - target).abs() <= 4.0 * random.cdr1.se, "{}", random.cdr1.mean);
    }
}
