//! Trajectory data model, history construction, validation and CSV ingestion.
//!
//! Stages are indexed from 0 in code. A trajectory stores only the stages the
//! subject entered, so the entry indicator of stage `k` is `k < stages.len()`
//! and monotonicity of the entry indicators holds by construction.
//!
//! The wide CSV layout has one row per subject and per-stage column blocks
//! `X{k}_<name>, A{k}, R{k}, delta{k}, eta{k}` (1-based `k`) followed by `T`.
//! Cells of stages a subject never entered are left empty.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for `T = sum_k eta_k R_k`.
pub const TOTAL_TIME_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct CovariateSchema {
    names: Vec<String>,
}

impl CovariateSchema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Schema("covariate schema must not be empty".into()));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(Error::Schema("empty covariate name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Schema(format!("duplicate covariate name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for CovariateSchema {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<CovariateSchema> for Vec<String> {
    fn from(s: CovariateSchema) -> Self {
        s.names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSchema {
    pub covariates: CovariateSchema,
    /// Number of treatment options at this stage.
    pub arity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub stages: Vec<StageSchema>,
}

impl DatasetSchema {
    pub fn new(stages: Vec<StageSchema>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Schema("at least one stage is required".into()));
        }
        for (k, s) in stages.iter().enumerate() {
            if s.arity < 2 {
                return Err(Error::Schema(format!(
                    "stage {} has {} treatment options; at least 2 are required",
                    k + 1,
                    s.arity
                )));
            }
        }
        Ok(Self { stages })
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn arity(&self, stage: usize) -> usize {
        self.stages[stage].arity
    }

    /// Length of the stage-`stage` history vector.
    pub fn history_len(&self, stage: usize) -> usize {
        self.stages[..stage]
            .iter()
            .map(|s| s.covariates.len() + 2)
            .sum::<usize>()
            + self.stages[stage].covariates.len()
    }

    /// Column names of the stage-`stage` history, in history order.
    pub fn history_names(&self, stage: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(self.history_len(stage));
        for (k, s) in self.stages[..=stage].iter().enumerate() {
            out.extend(s.covariates.names().iter().map(|n| format!("X{}_{}", k + 1, n)));
            if k < stage {
                out.push(format!("A{}", k + 1));
                out.push(format!("R{}", k + 1));
            }
        }
        out
    }

    /// CSV header for this schema.
    pub fn csv_header(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (k, s) in self.stages.iter().enumerate() {
            let k1 = k + 1;
            out.extend(s.covariates.names().iter().map(|n| format!("X{k1}_{n}")));
            out.push(format!("A{k1}"));
            out.push(format!("R{k1}"));
            out.push(format!("delta{k1}"));
            out.push(format!("eta{k1}"));
        }
        out.push("T".into());
        out
    }

    /// Recovers a schema from a CSV header. Arities are not part of the
    /// header and must be supplied (one per stage).
    pub fn from_header(header: &[String], arities: &[usize]) -> Result<Self> {
        let mut stages = Vec::new();
        let mut pos = 0;
        let mut k = 1;
        while pos < header.len() && header[pos] != "T" {
            let prefix = format!("X{k}_");
            let mut names = Vec::new();
            while pos < header.len() {
                match header[pos].strip_prefix(&prefix) {
                    Some(n) => names.push(n.to_string()),
                    None => break,
                }
                pos += 1;
            }
            let expected = [
                format!("A{k}"),
                format!("R{k}"),
                format!("delta{k}"),
                format!("eta{k}"),
            ];
            for e in &expected {
                if header.get(pos) != Some(e) {
                    return Err(Error::Schema(format!(
                        "expected column {e:?} at position {pos}, found {:?}",
                        header.get(pos)
                    )));
                }
                pos += 1;
            }
            let arity = *arities.get(k - 1).ok_or_else(|| {
                Error::Schema(format!("no treatment arity supplied for stage {k}"))
            })?;
            stages.push(StageSchema {
                covariates: CovariateSchema::new(names)?,
                arity,
            });
            k += 1;
        }
        if pos + 1 != header.len() || header[pos] != "T" {
            return Err(Error::Schema("last column must be T".into()));
        }
        if stages.len() != arities.len() {
            return Err(Error::Schema(format!(
                "header describes {} stages but {} arities were supplied",
                stages.len(),
                arities.len()
            )));
        }
        Self::new(stages)
    }
}

/// One entered stage of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub covariates: Vec<f64>,
    pub treatment: usize,
    /// Observed stage duration `R_k`.
    pub duration: f64,
    /// `delta_k`: the stage outcome was observed (not censored).
    pub event: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Entered stages only; `eta_k = 1` iff `k < stages.len()`.
    pub stages: Vec<StageRecord>,
    /// Observed overall time `T`.
    pub total_time: f64,
}

impl Trajectory {
    pub fn entered(&self, stage: usize) -> bool {
        stage < self.stages.len()
    }

    pub fn n_entered(&self) -> usize {
        self.stages.len()
    }

    /// Indicator of the last entered stage: whether `T` is an event time.
    pub fn final_event(&self) -> bool {
        self.stages.last().map(|s| s.event).unwrap_or(false)
    }

    pub fn summed_durations(&self) -> f64 {
        self.stages.iter().map(|s| s.duration).sum()
    }
}

/// Flattened stage history `[X_1, A_1, R_1, ..., X_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct History(Vec<f64>);

impl History {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for History {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// History from completed earlier stages plus the current stage covariates.
pub fn history_from_parts(previous: &[StageRecord], current_covariates: &[f64]) -> History {
    let len = previous.iter().map(|s| s.covariates.len() + 2).sum::<usize>()
        + current_covariates.len();
    let mut v = Vec::with_capacity(len);
    for s in previous {
        v.extend_from_slice(&s.covariates);
        v.push(s.treatment as f64);
        v.push(s.duration);
    }
    v.extend_from_slice(current_covariates);
    History(v)
}

/// History of `traj` at `stage` (0-based). Fails if the stage was not entered.
pub fn build_history(traj: &Trajectory, stage: usize) -> Result<History> {
    if !traj.entered(stage) {
        return Err(Error::StageNotEntered(stage + 1));
    }
    Ok(history_from_parts(
        &traj.stages[..stage],
        &traj.stages[stage].covariates,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    NotEnteredFirstStage,
    EnteredAfterCensoring { stage: usize },
    TotalTimeMismatch,
    NegativeDuration { stage: usize },
    NonFinite { stage: usize },
    TreatmentOutOfRange { stage: usize },
    CovariateCount { stage: usize },
    TooManyStages,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = self.subject;
        match &self.kind {
            ViolationKind::NotEnteredFirstStage => write!(f, "subject {i}: eta1 must be 1"),
            ViolationKind::EnteredAfterCensoring { stage } => {
                write!(f, "subject {i}: η after censoring (stage {})", stage + 1)
            }
            ViolationKind::TotalTimeMismatch => write!(f, "subject {i}: total time mismatch"),
            ViolationKind::NegativeDuration { stage } => {
                write!(f, "subject {i}: negative duration at stage {}", stage + 1)
            }
            ViolationKind::NonFinite { stage } => {
                write!(f, "subject {i}: non-finite value at stage {}", stage + 1)
            }
            ViolationKind::TreatmentOutOfRange { stage } => {
                write!(f, "subject {i}: treatment out of range at stage {}", stage + 1)
            }
            ViolationKind::CovariateCount { stage } => {
                write!(f, "subject {i}: covariate count mismatch at stage {}", stage + 1)
            }
            ViolationKind::TooManyStages => write!(f, "subject {i}: more stages than the schema"),
        }
    }
}

/// Reports every trajectory invariant violation. Empty iff the data is consistent.
pub fn validate(schema: &DatasetSchema, trajectories: &[Trajectory]) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, t) in trajectories.iter().enumerate() {
        let mut push = |kind| out.push(Violation { subject: i, kind });
        if t.stages.is_empty() {
            push(ViolationKind::NotEnteredFirstStage);
        }
        if t.stages.len() > schema.n_stages() {
            push(ViolationKind::TooManyStages);
            continue;
        }
        for (k, s) in t.stages.iter().enumerate() {
            if s.covariates.len() != schema.stages[k].covariates.len() {
                push(ViolationKind::CovariateCount { stage: k });
            }
            if !s.duration.is_finite() || s.covariates.iter().any(|x| !x.is_finite()) {
                push(ViolationKind::NonFinite { stage: k });
            } else if s.duration < 0.0 {
                push(ViolationKind::NegativeDuration { stage: k });
            }
            if s.treatment >= schema.stages[k].arity {
                push(ViolationKind::TreatmentOutOfRange { stage: k });
            }
            if k + 1 < t.stages.len() && !s.event {
                push(ViolationKind::EnteredAfterCensoring { stage: k + 1 });
            }
        }
        let sum = t.summed_durations();
        if !t.total_time.is_finite()
            || (sum - t.total_time).abs() > TOTAL_TIME_TOLERANCE * t.total_time.abs().max(1.0)
        {
            push(ViolationKind::TotalTimeMismatch);
        }
    }
    out
}

/// Immutable, validated collection of trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    schema: DatasetSchema,
    trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(schema: DatasetSchema, trajectories: Vec<Trajectory>) -> Result<Self> {
        let violations = validate(&schema, &trajectories);
        if let Some(first) = violations.first() {
            return Err(Error::InvalidDataset(format!(
                "{} violation(s); first: {first}",
                violations.len()
            )));
        }
        Ok(Self {
            schema,
            trajectories,
        })
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_stages(&self) -> usize {
        self.schema.n_stages()
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(&self.schema, &self.trajectories)
    }

    /// Indices of subjects that entered `stage`.
    pub fn entrants(&self, stage: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.trajectories[i].entered(stage))
            .collect()
    }

    /// Histories of all entrants of `stage`, aligned with `entrants(stage)`.
    pub fn histories(&self, stage: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
        let ids = self.entrants(stage);
        let h = ids
            .iter()
            .map(|&i| {
                build_history(&self.trajectories[i], stage)
                    .expect("entrant")
                    .into_vec()
            })
            .collect();
        (ids, h)
    }

    /// Sub-dataset of the given subjects, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            trajectories: indices.iter().map(|&i| self.trajectories[i].clone()).collect(),
        }
    }

    /// Fraction of subjects whose final observed time is censored.
    pub fn censored_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let c = self.trajectories.iter().filter(|t| !t.final_event()).count();
        c as f64 / self.len() as f64
    }

    pub fn write_csv<W: Write>(&self, w: W, comments: &[String]) -> Result<()> {
        write_csv(self, w, comments)
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

/// Writes the dataset in the wide CSV layout. `comments` become leading `#` lines.
pub fn write_csv<W: Write>(dataset: &Dataset, mut w: W, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let mut wr = csv::WriterBuilder::new().from_writer(w);
    wr.write_record(dataset.schema.csv_header())?;
    let k_total = dataset.n_stages();
    for t in &dataset.trajectories {
        let mut row: Vec<String> = Vec::new();
        for k in 0..k_total {
            match t.stages.get(k) {
                Some(s) => {
                    row.extend(s.covariates.iter().map(|&x| fmt_num(x)));
                    row.push(s.treatment.to_string());
                    row.push(fmt_num(s.duration));
                    row.push(if s.event { "1" } else { "0" }.into());
                    row.push("1".into());
                }
                None => {
                    let n = dataset.schema.stages[k].covariates.len();
                    row.extend(std::iter::repeat_n(String::new(), n + 3));
                    row.push("0".into());
                }
            }
        }
        row.push(fmt_num(t.total_time));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn parse_indicator(cell: &str, row: usize, col: &str) -> Result<bool> {
    match cell {
        "1" | "1.0" => Ok(true),
        "0" | "0.0" => Ok(false),
        other => Err(Error::InvalidRecord {
            row,
            message: format!("non-binary indicator {col}={other:?}"),
        }),
    }
}

fn parse_real(cell: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| Error::InvalidRecord {
        row,
        message: format!("cannot parse {col}={cell:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::InvalidRecord {
            row,
            message: format!("non-finite value in {col}"),
        });
    }
    Ok(v)
}

/// Reads a dataset in the wide CSV layout, validating against `schema`.
pub fn read_csv<R: Read>(reader: R, schema: &DatasetSchema) -> Result<Dataset> {
    let mut rdr = csv_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected = schema.csv_header();
    if header != expected {
        return Err(Error::Schema(format!(
            "header does not match schema: expected {expected:?}, found {header:?}"
        )));
    }
    let mut trajectories = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let mut pos = 0;
        let mut stages = Vec::new();
        let mut still_in = true;
        for (k, st) in schema.stages.iter().enumerate() {
            let k1 = k + 1;
            let p = st.covariates.len();
            let cells: Vec<&str> = (pos..pos + p + 4).map(|j| &rec[j]).collect();
            pos += p + 4;
            let eta = parse_indicator(cells[p + 3], row, &format!("eta{k1}"))?;
            if k == 0 && !eta {
                return Err(Error::InvalidRecord {
                    row,
                    message: "eta1 must be 1".into(),
                });
            }
            if !eta {
                if cells[..p + 3].iter().any(|c| !c.is_empty()) {
                    return Err(Error::InvalidRecord {
                        row,
                        message: format!("stage {k1} values present although eta{k1}=0"),
                    });
                }
                still_in = false;
                continue;
            }
            if !still_in {
                return Err(Error::InvalidRecord {
                    row,
                    message: format!("eta{k1}=1 after an earlier stage was not entered"),
                });
            }
            let mut covariates = Vec::with_capacity(p);
            for (j, name) in st.covariates.names().iter().enumerate() {
                covariates.push(parse_real(cells[j], row, &format!("X{k1}_{name}"))?);
            }
            let a = parse_real(cells[p], row, &format!("A{k1}"))?;
            if a < 0.0 || a.fract() != 0.0 || a as usize >= st.arity {
                return Err(Error::InvalidRecord {
                    row,
                    message: format!("treatment A{k1}={a} outside 0..{}", st.arity),
                });
            }
            let duration = parse_real(cells[p + 1], row, &format!("R{k1}"))?;
            if duration < 0.0 {
                return Err(Error::InvalidRecord {
                    row,
                    message: format!("negative duration R{k1}={duration}"),
                });
            }
            let event = parse_indicator(cells[p + 2], row, &format!("delta{k1}"))?;
            stages.push(StageRecord {
                covariates,
                treatment: a as usize,
                duration,
                event,
            });
        }
        let total_time = parse_real(&rec[pos], row, "T")?;
        trajectories.push(Trajectory { stages, total_time });
    }
    Dataset::new(schema.clone(), trajectories)
}

pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset> {
    let f = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(f), schema)
}

/// Loads a CSV whose schema is taken from its header. Treatment arities are
/// inferred as `max(observed) + 1`, at least 2, unless given explicitly.
pub fn load_csv_inferred(path: impl AsRef<Path>, arities: Option<&[usize]>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut rdr = csv_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let n_stages = header.iter().filter(|h| h.starts_with("eta")).count();
    let arities: Vec<usize> = match arities {
        Some(a) => a.to_vec(),
        None => {
            let cols: Vec<usize> = (1..=n_stages)
                .map(|k| {
                    header
                        .iter()
                        .position(|h| *h == format!("A{k}"))
                        .ok_or_else(|| Error::Schema(format!("missing column A{k}")))
                })
                .collect::<Result<_>>()?;
            let mut max = vec![1usize; n_stages];
            for rec in rdr.records() {
                let rec = rec?;
                for (k, &c) in cols.iter().enumerate() {
                    if let Some(a) = rec.get(c).and_then(|s| s.parse::<f64>().ok()) {
                        if a >= 0.0 && a.fract() == 0.0 {
                            max[k] = max[k].max(a as usize + 1);
                        }
                    }
                }
            }
            max.into_iter().map(|m| m.max(2)).collect()
        }
    };
    let schema = DatasetSchema::from_header(&header, &arities)?;
    read_csv(text.as_bytes(), &schema)
}
