//! Command-line front end: `generate`, `fit`, `evaluate`, `gridsearch` and
//! `benchmark`.
//!
//! Exit codes: 0 ok, 2 configuration or input error, 3 censoring calibration
//! failure, 4 fitting failure (including positivity).

mod output;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use catrl::data::{self, Dataset};
use catrl::dtr::{self, DTRPolicy, FitConfig};
use catrl::eval::benchmark::{run_benchmark, BenchmarkConfig};
use catrl::eval::{self, EvalCohort, EvalOptions, PolicySpec};
use catrl::simgen::{self, CensoringKind, OracleHandle, ScenarioConfig, TauSpec};
use catrl::Error;

use output::{sibling, write_atomic, write_json_report, Header};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CALIBRATION: i32 = 3;
pub const EXIT_FIT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "catrl", version, about = "Censoring-aware tree-based dynamic treatment regimes")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "CATRL_THREADS")]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a two-stage dataset and its oracle.
    Generate(GenerateArgs),
    /// Fit a policy on a dataset CSV.
    Fit(FitArgs),
    /// Evaluate a fitted policy against an oracle or observed data.
    Evaluate(EvaluateArgs),
    /// Select fit settings by validation τ-RMST.
    Gridsearch(GridArgs),
    /// Run the fold benchmark over simulated scenarios.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Scenario JSON; the flags below are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n_subjects: usize,
    #[arg(long, default_value_t = 2)]
    arity: usize,
    /// exponential, conditional, uniform or none.
    #[arg(long, default_value = "exponential")]
    censoring: String,
    #[arg(long)]
    target_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving `dataset.csv` and `oracle.json`.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset CSV in the wide layout.
    #[arg(long)]
    data: PathBuf,
    /// Treatment arity per stage, e.g. `2,2`; inferred from the data if absent.
    #[arg(long, value_delimiter = ',')]
    arities: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Fit settings JSON (defaults apply when absent).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Policy JSON; a fit log is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    policy: PathBuf,
    /// Oracle JSON from `generate`; enables counterfactual metrics.
    #[arg(long)]
    oracle: Option<PathBuf>,
    /// Dataset CSV; enables observational metrics.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Restriction time; defaults to the oracle's, else the policy's.
    #[arg(long)]
    tau: Option<f64>,
    /// Fresh subjects drawn for counterfactual metrics.
    #[arg(long, default_value_t = 10_000)]
    n_eval: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also evaluate fixed-arm and random policies.
    #[arg(long)]
    with_baselines: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Grid JSON: `{"configs": [...], "validation_fraction": 0.5, "seed": 0}`.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Refit the winning config on all data and save the policy here.
    #[arg(long)]
    policy_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// Benchmark JSON (defaults apply when absent).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving `benchmark.{csv,json,txt}`.
    #[arg(long)]
    out_dir: PathBuf,
    /// Job cache directory; a rerun reuses finished jobs.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    configs: Vec<FitConfig>,
    #[serde(default = "default_validation")]
    validation_fraction: f64,
    #[serde(default)]
    seed: u64,
}

fn default_validation() -> f64 {
    0.5
}

#[derive(Debug, Serialize)]
struct EvalSettings {
    policy_sha256: String,
    oracle: bool,
    data: bool,
    tau: f64,
    n_eval: usize,
    seed: u64,
    with_baselines: bool,
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    Input,
    Generate,
    Fit,
}

fn classify(phase: Phase) -> impl Fn(Error) -> Failure {
    move |e| {
        let code = match (&e, phase) {
            (Error::Calibration(_), _) => EXIT_CALIBRATION,
            (Error::Positivity(_) | Error::Numerical(_) | Error::StageNotEntered(_), _) => EXIT_FIT,
            (Error::InvalidDataset(_), Phase::Fit) => EXIT_FIT,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_CONFIG;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return EXIT_CONFIG;
        }
    }
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gridsearch(a) => cmd_gridsearch(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("invalid {what} {}: {e}", path.display())))
}

fn load_dataset(args: &DataArgs) -> CliResult<Dataset> {
    data::load_csv_inferred(&args.data, args.arities.as_deref())
        .map_err(|e| Failure::config(format!("{}: {e}", args.data.display())))
}

fn parse_kind(s: &str) -> CliResult<CensoringKind> {
    serde_json::from_value(serde_json::Value::String(s.to_lowercase()))
        .map_err(|_| Failure::config(format!("unknown censoring kind {s:?}")))
}

fn cmd_generate(a: GenerateArgs) -> CliResult<()> {
    let cfg: ScenarioConfig = match &a.config {
        Some(p) => read_json(p, "scenario config")?,
        None => {
            let kind = parse_kind(&a.censoring)?;
            let mut c = ScenarioConfig::new(a.n_subjects, a.arity, kind, a.seed);
            if let Some(r) = a.target_rate {
                c.target_censor_rate = r;
            }
            c
        }
    };
    cfg.validate().map_err(classify(Phase::Input))?;
    let header = Header::new("generate", &cfg, cfg.seed).map_err(classify(Phase::Input))?;
    info!("generating {} subjects", cfg.n_subjects);
    let (dataset, oracle) = simgen::generate(&cfg).map_err(classify(Phase::Generate))?;

    let mut csv = Vec::new();
    dataset
        .write_csv(&mut csv, &header.lines())
        .map_err(classify(Phase::Input))?;
    let io = classify(Phase::Input);
    write_atomic(&a.out_dir.join("dataset.csv"), &csv).map_err(&io)?;
    let oracle_text = serde_json::to_string_pretty(&oracle).map_err(|e| io(e.into()))?;
    write_atomic(&a.out_dir.join("oracle.json"), oracle_text.as_bytes()).map_err(&io)?;

    let c = &oracle.censoring;
    println!("subjects:          {}", dataset.len());
    println!("arity:             {}", cfg.arity);
    println!("censoring:         {:?} (c0 {:.4}, bounds [{:.4}, {:.4}])", c.kind, c.c0, c.lower, c.upper);
    println!("censored fraction: {:.4}", dataset.censored_fraction());
    println!("entered stage 2:   {}", dataset.entrants(1).len());
    println!("tau:               {:.4}", oracle.tau);
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let mut cfg: FitConfig = match &a.config {
        Some(p) => read_json(p, "fit config")?,
        None => FitConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let dataset = load_dataset(&a.data)?;
    cfg.validate(Some(dataset.n_stages())).map_err(classify(Phase::Input))?;
    if let TauSpec::Value(t) = cfg.tau {
        if t <= 0.0 {
            return Err(Failure::config("tau must be positive"));
        }
    }
    let header = Header::new("fit", &cfg, cfg.seed).map_err(classify(Phase::Input))?;
    info!("fitting on {} subjects", dataset.len());
    let out = dtr::fit_with(&dataset, &cfg, &dtr::FittedNuisances(&cfg.nuisance)).map_err(classify(Phase::Fit))?;
    let io = classify(Phase::Input);
    out.policy.save(&a.out).map_err(&io)?;
    write_json_report(&sibling(&a.out, "fitlog.json"), &header, "trace", &out.trace).map_err(&io)?;
    for (k, tree) in out.policy.trees.iter().enumerate() {
        println!("stage {} rule:\n{}", k + 1, tree.render());
    }
    println!("tau: {:.4}", out.policy.tau);
    println!("wrote {}", a.out.display());
    Ok(())
}

fn policy_set(policy: DTRPolicy, arity: usize, with_baselines: bool, seed: u64, with_optimal: bool) -> Vec<PolicySpec> {
    let mut v = vec![PolicySpec::Fitted(Box::new(policy))];
    if with_baselines {
        v.extend((0..arity).map(PolicySpec::Fixed));
        v.push(PolicySpec::Random { seed });
        if with_optimal {
            v.push(PolicySpec::Optimal);
        }
    }
    v
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    if a.oracle.is_none() && a.data.is_none() {
        return Err(Failure::config("evaluate needs --oracle and/or --data"));
    }
    let policy_text = std::fs::read_to_string(&a.policy)
        .map_err(|e| Failure::config(format!("cannot read policy {}: {e}", a.policy.display())))?;
    let policy = DTRPolicy::from_json(&policy_text).map_err(classify(Phase::Input))?;
    let oracle = match &a.oracle {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::config(format!("cannot read oracle {}: {e}", p.display())))?;
            Some(OracleHandle::from_json(&text).map_err(classify(Phase::Input))?)
        }
        None => None,
    };
    let dataset = match &a.data {
        Some(p) => Some(
            data::load_csv(p, &policy.schema).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };
    let tau = a
        .tau
        .or_else(|| oracle.as_ref().map(|o| o.tau))
        .unwrap_or(policy.tau);
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Failure::config(format!("tau must be positive, got {tau}")));
    }
    let arity = policy.schema.arity(0);
    if let Some(o) = &oracle {
        if policy.schema != simgen::scenario_schema(o.arity()) {
            return Err(Failure::config("policy schema does not match the oracle scenario"));
        }
    }
    let settings = EvalSettings {
        policy_sha256: output::config_hash(&policy_text).map_err(classify(Phase::Input))?,
        oracle: oracle.is_some(),
        data: dataset.is_some(),
        tau,
        n_eval: a.n_eval,
        seed: a.seed,
        with_baselines: a.with_baselines,
    };
    let header = Header::new("evaluate", &settings, a.seed).map_err(classify(Phase::Input))?;
    let random_seed = catrl::rng::derive_seed(a.seed, &[catrl::rng::domain::RANDOM_POLICY]);

    let mut report = serde_json::Map::new();
    let mut text = header.comment_block();
    if let Some(o) = &oracle {
        let opts = EvalOptions {
            cohort: EvalCohort::Fresh(a.n_eval),
            tau,
            seed: a.seed,
            zero_noise: false,
        };
        let mut rows = Vec::new();
        let _ = writeln!(text, "counterfactual (n = {}, tau = {tau:.4})", a.n_eval);
        for p in policy_set(policy.clone(), arity, a.with_baselines, random_seed, true) {
            let r = eval::counterfactual_eval(&p, o, &opts).map_err(classify(Phase::Fit))?;
            let _ = writeln!(
                text,
                "  {:<8} tau-RMST {:>9.3} ± {:<7.3} CDR1 {:>6.2}%  ACDR {:>6.2}%  E[T*] {:>9.3}",
                r.policy,
                r.rmst.mean,
                r.rmst.se,
                100.0 * r.cdr1.mean,
                100.0 * r.acdr.mean,
                r.expected_survival.mean
            );
            rows.push(r);
        }
        report.insert("counterfactual".into(), serde_json::to_value(rows).expect("serializable"));
    }
    if let Some(d) = &dataset {
        let mut rows = Vec::new();
        let _ = writeln!(text, "observational (n = {}, tau = {tau:.4})", d.len());
        for p in policy_set(policy.clone(), arity, a.with_baselines, random_seed, false) {
            let v = eval::observational_value(&p, d, tau).map_err(classify(Phase::Fit))?;
            let rmst = v.rmst.map_or("n/a".to_string(), |x| format!("{x:.3}"));
            let _ = writeln!(
                text,
                "  {:<8} concordant tau-RMST {:>9}  concordant {:>6.2}%{}",
                p.to_string(),
                rmst,
                100.0 * v.concordant_fraction,
                if v.small_sample { "  (small sample)" } else { "" }
            );
            rows.push(serde_json::json!({ "policy": p.to_string(), "value": v }));
        }
        report.insert("observational".into(), serde_json::Value::Array(rows));
    }
    write_json_report(&a.out, &header, "report", &report).map_err(classify(Phase::Input))?;
    print!("{text}");
    Ok(())
}

fn cmd_gridsearch(a: GridArgs) -> CliResult<()> {
    let grid: GridFile = read_json(&a.config, "grid config")?;
    if grid.configs.is_empty() {
        return Err(Failure::config("grid: must contain at least one config"));
    }
    let dataset = load_dataset(&a.data)?;
    let header = Header::new("gridsearch", &grid, grid.seed).map_err(classify(Phase::Input))?;
    info!("grid of {} configs on {} subjects", grid.configs.len(), dataset.len());
    let (best, report) = dtr::grid_search(&dataset, &grid.configs, grid.validation_fraction, grid.seed).map_err(
        |e| match e {
            Error::Config(_) => classify(Phase::Input)(e),
            other => classify(Phase::Fit)(other),
        },
    )?;
    write_json_report(&a.out, &header, "grid", &report).map_err(classify(Phase::Input))?;
    for e in &report.entries {
        match (e.score, &e.error) {
            (Some(s), _) => println!("config {:>3}: validation tau-RMST {s:.4}", e.index),
            (None, Some(err)) => println!("config {:>3}: failed: {err}", e.index),
            (None, None) => println!("config {:>3}: no concordant subjects", e.index),
        }
    }
    println!("best: config {}", report.best);
    if let Some(path) = &a.policy_out {
        let policy = dtr::fit(&dataset, &best).map_err(classify(Phase::Fit))?;
        policy.save(path).map_err(classify(Phase::Input))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_benchmark(a: BenchmarkArgs) -> CliResult<()> {
    let mut cfg: BenchmarkConfig = match &a.config {
        Some(p) => read_json(p, "benchmark config")?,
        None => BenchmarkConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(classify(Phase::Input))?;
    let header = Header::new("benchmark", &cfg, cfg.seed).map_err(classify(Phase::Input))?;
    let n_modes = cfg.propensity_modes.len();
    info!(
        "benchmark: {} scenarios x {n_modes} propensity modes x {} folds",
        cfg.scenarios().len(),
        cfg.folds
    );
    let report = run_benchmark(&cfg, a.cache.as_deref()).map_err(classify(Phase::Fit))?;
    let io = classify(Phase::Input);
    let csv = report.to_csv().map_err(&io)?;
    let mut csv_doc = header.comment_block();
    csv_doc.push_str(&csv);
    write_atomic(&a.out_dir.join("benchmark.csv"), csv_doc.as_bytes()).map_err(&io)?;
    write_json_report(&a.out_dir.join("benchmark.json"), &header, "benchmark", &report).map_err(&io)?;
    let mut txt = header.comment_block();
    txt.push_str(&report.render());
    write_atomic(&a.out_dir.join("benchmark.txt"), txt.as_bytes()).map_err(&io)?;
    print!("{}", report.render());
    if !report.failures.is_empty() {
        return Err(Failure {
            code: EXIT_FIT,
            message: format!("{} benchmark job(s) failed", report.failures.len()),
        });
    }
    Ok(())
}
