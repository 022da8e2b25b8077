//! Experiment runner behind the `foliate` binary.
//!
//! A run reads an [`ExperimentConfig`], executes the named experiment with a
//! seeded random stream, and writes `report.json` plus one CSV per result
//! table into the output directory. Files are staged in a temporary
//! directory and renamed into place, so a failed run leaves nothing behind.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::foliation::{self, FoliatedChart, LeafPseudogroup, RegularFoliation, SingularFoliationSample};
use crate::geometry::{BallChart, Chart, CoordinateVector};
use crate::learning::{self, FlowConfig, LearnerMap, LossSurface};
use crate::maml::{self, QuadraticMamlSetup};
use crate::prototypical::{self, Embedding, Episode};
use crate::relatedness::{self, Metric, RelatednessMember, RelatednessNotion, Transformation};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "FOLIATE_OUTPUT_DIR";

pub const TOOL_NAME: &str = "foliate";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("report has no tabular data")]
    NoTabularData,
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

impl From<crate::Error> for HarnessError {
    fn from(e: crate::Error) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    MamlLeaf,
    MamlCorollary,
    ProtoEpisode,
    ProtoTrain,
    LeafNavigate,
    RelatednessCheck,
    TopologyCheck,
    EquivarianceCheck,
    FoliationCheck,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::MamlLeaf,
        Experiment::MamlCorollary,
        Experiment::ProtoEpisode,
        Experiment::ProtoTrain,
        Experiment::LeafNavigate,
        Experiment::RelatednessCheck,
        Experiment::TopologyCheck,
        Experiment::EquivarianceCheck,
        Experiment::FoliationCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::MamlLeaf => "maml-leaf",
            Experiment::MamlCorollary => "maml-corollary",
            Experiment::ProtoEpisode => "proto-episode",
            Experiment::ProtoTrain => "proto-train",
            Experiment::LeafNavigate => "leaf-navigate",
            Experiment::RelatednessCheck => "relatedness-check",
            Experiment::TopologyCheck => "topology-check",
            Experiment::EquivarianceCheck => "equivariance-check",
            Experiment::FoliationCheck => "foliation-check",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("foliate-output")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            params: BTreeMap::new(),
            seed: 0,
            output_dir: default_output_dir(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn from_json_str(s: &str) -> HarnessResult<Self> {
        serde_json::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> HarnessResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}

/// One pass/fail measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    /// `"<="`, `">="` or `"=="`.
    pub relation: String,
    pub bound: f64,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= bound,
            value,
            relation: "<=".into(),
            bound,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            passed: value >= bound,
            value,
            relation: ">=".into(),
            bound,
        }
    }

    pub fn equals(name: impl Into<String>, value: f64, expected: f64) -> Self {
        Self {
            name: name.into(),
            passed: value == expected,
            value,
            relation: "==".into(),
            bound: expected,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{tag} {}: {:?} {} {:?}",
            self.name, self.value, self.relation, self.bound
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            // Debug formatting is the shortest string that round-trips,
            // switching to exponent notation for very small or large values.
            Cell::Num(v) => write!(f, "{v:?}"),
            Cell::Text(v) => f.write_str(v),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> HarnessResult<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Which table columns feed the `x,y,series` plot data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub table: String,
    pub x: String,
    pub y: String,
    /// Literal series label, used when `series_column` is absent.
    pub series: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series_column: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub passed: bool,
    pub checks: usize,
    pub failed: usize,
}

/// Everything a run produced. The wall-clock duration is kept out of the
/// serialized form so that reports are byte-identical across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub checks: Vec<Check>,
    pub tables: BTreeMap<String, Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<PlotSpec>,
    pub summary: Summary,
    #[serde(skip)]
    pub duration_secs: f64,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.summary.passed
    }

    /// 0 when every check passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn from_path(path: &Path) -> HarnessResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }
}

/// Results of one experiment before they are wrapped into a report.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub tables: BTreeMap<String, Table>,
    pub plot: Option<PlotSpec>,
}

/// Deterministic child stream for a named stage: the first 32 bytes of
/// `SHA-256(seed || stage)` seed a ChaCha8 generator.
pub fn child_rng(seed: u64, stage: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Typed access to experiment parameters. Every key must be consumed;
/// leftovers are reported as config errors.
struct Params<'a> {
    experiment: Experiment,
    map: &'a BTreeMap<String, Value>,
    allowed: &'static [&'static str],
}

impl<'a> Params<'a> {
    fn new(
        experiment: Experiment,
        map: &'a BTreeMap<String, Value>,
        allowed: &'static [&'static str],
    ) -> HarnessResult<Self> {
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(HarnessError::Config(format!(
                "unknown parameter `{k}` for {experiment}; expected one of {allowed:?}"
            )));
        }
        Ok(Self {
            experiment,
            map,
            allowed,
        })
    }

    fn bad(&self, key: &str, what: &str) -> HarnessError {
        debug_assert!(self.allowed.contains(&key));
        HarnessError::Config(format!("parameter `{key}` of {} must be {what}", self.experiment))
    }

    fn f64(&self, key: &str, default: f64) -> HarnessResult<f64> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| self.bad(key, "a finite number")),
        }
    }

    fn positive(&self, key: &str, default: f64) -> HarnessResult<f64> {
        let v = self.f64(key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(self.bad(key, "positive"))
        }
    }

    fn non_negative(&self, key: &str, default: f64) -> HarnessResult<f64> {
        let v = self.f64(key, default)?;
        if v >= 0.0 {
            Ok(v)
        } else {
            Err(self.bad(key, "non-negative"))
        }
    }

    fn usize(&self, key: &str, default: usize) -> HarnessResult<usize> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| self.bad(key, "a non-negative integer")),
        }
    }

    fn count(&self, key: &str, default: usize) -> HarnessResult<usize> {
        let v = self.usize(key, default)?;
        if v >= 1 {
            Ok(v)
        } else {
            Err(self.bad(key, "at least 1"))
        }
    }

    fn f64_list(&self, key: &str, default: &[f64]) -> HarnessResult<Vec<f64>> {
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_f64().filter(|x| x.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| self.bad(key, "a list of finite numbers")),
            Some(_) => Err(self.bad(key, "a list of finite numbers")),
        }
    }

    fn usize_list(&self, key: &str, default: &[usize]) -> HarnessResult<Vec<usize>> {
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_u64().map(|x| x as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| self.bad(key, "a list of non-negative integers")),
            Some(_) => Err(self.bad(key, "a list of non-negative integers")),
        }
    }

    fn string(&self, key: &str) -> HarnessResult<Option<String>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.bad(key, "a string")),
        }
    }

    fn metric(&self) -> HarnessResult<Metric> {
        let name = self.string("metric")?.unwrap_or_else(|| "squared-euclidean".into());
        Metric::by_name(&name).map_err(|_| self.bad("metric", "\"euclidean\" or \"squared-euclidean\""))
    }

    fn episode(&self, base: &Path) -> HarnessResult<Episode> {
        match self.string("episode")? {
            None => Ok(Episode::bundled_toy()),
            Some(p) => {
                let path = base.join(p);
                Episode::from_path(&path).map_err(|e| HarnessError::Config(e.to_string()))
            }
        }
    }
}

fn point_columns(prefix: &str, dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("{prefix}_{i}")).collect()
}

fn table_with(columns: Vec<String>) -> Table {
    Table {
        columns,
        rows: Vec::new(),
    }
}

fn maml_leaf(params: &Params, seed: u64) -> HarnessResult<Outcome> {
    let dim = params.count("dim", 2)?;
    let setup = QuadraticMamlSetup {
        dim,
        m0: CoordinateVector::zeros(dim),
        eps: params.positive("eps", 0.01)?,
        k: params.non_negative("k", 100f64.ln() / 4.0)?,
        step: params.positive("step", 1e-3)?,
        seed: child_rng(seed, "maml-leaf/directions").random(),
    };
    let n = params.count("n", 16)?;
    let tol = params.positive("tol", 1e-6)?;
    setup.validate()?;
    let report = maml::scan_leaf(&setup, n)?;

    let mut columns = vec!["task".to_string()];
    columns.extend(point_columns("t", dim));
    columns.extend(["leaf_residual", "numeric_loss", "loss_error"].map(String::from));
    let mut table = table_with(columns);
    let errors = report.loss_errors();
    for (i, t) in report.tasks.iter().enumerate() {
        let mut row = vec![Cell::from(i)];
        row.extend(t.iter().map(|v| Cell::Num(*v)));
        row.extend([report.residuals[i], report.numeric_losses[i], errors[i]].map(Cell::Num));
        table.push(row);
    }
    let worst_residual = report.residuals.iter().copied().fold(0.0, f64::max);
    Ok(Outcome {
        checks: vec![
            Check::at_most("leaf-loss-error", report.max_loss_error(), tol),
            Check::at_most(
                "leaf-relative-residual",
                worst_residual / setup.leaf_radius().powi(2).max(1.0),
                1e-9,
            ),
        ],
        tables: BTreeMap::from([("leaf".to_string(), table)]),
        plot: Some(PlotSpec {
            table: "leaf".into(),
            x: "t_1".into(),
            y: if dim > 1 { "t_2".into() } else { "numeric_loss".into() },
            series: "leaf".into(),
            series_column: None,
        }),
    })
}

fn maml_corollary(params: &Params, seed: u64) -> HarnessResult<Outcome> {
    let n = params.count("n", 100)?;
    let step = params.positive("step", 1e-3)?;
    let tol = params.positive("tol", 1e-6)?;
    let consistency_tol = params.positive("consistency_tol", 1e-9)?;
    let grid = params.count("grid", 10)?;
    let max_k = params.positive("max_k", 3.0)?;
    let grid_tol = params.positive("grid_tol", 1e-6)?;

    let loss = LossSurface::quadratic();
    let mut rng = child_rng(seed, "maml-corollary/cases");
    let mut cases = Table::new(&[
        "case",
        "t_1",
        "t_2",
        "eps",
        "k",
        "numeric_loss",
        "loss_error",
        "consistency_error",
    ]);
    let (mut worst_loss, mut worst_consistency) = (0.0f64, 0.0f64);
    for i in 0..n {
        let t = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let sq: f64 = t.iter().map(|x| x * x).sum();
        let eps = sq * 10f64.powf(-rng.random_range(0.05..3.0));
        let k = maml::time_to_accuracy(&t, eps)?;
        let cfg = FlowConfig::new(step, k.max(step))?;
        let m = learning::gradient_flow(&loss, &t, &[0.0, 0.0], k, &cfg)?;
        let numeric = loss.eval(&t, &m);
        let consistency = maml::model_at_accuracy(&t, eps)?.distance(&maml::analytic_flow(&t, k));
        worst_loss = worst_loss.max((numeric - eps).abs());
        worst_consistency = worst_consistency.max(consistency);
        cases.push(vec![
            i.into(),
            t[0].into(),
            t[1].into(),
            eps.into(),
            k.into(),
            numeric.into(),
            (numeric - eps).abs().into(),
            consistency.into(),
        ]);
    }

    let mut flow_grid = Table::new(&["t_1", "t_2", "k", "error"]);
    let mut worst_grid = 0.0f64;
    let cfg = FlowConfig::new(step, max_k.max(step))?;
    for i in 0..grid {
        let angle = std::f64::consts::TAU * i as f64 / grid as f64;
        let radius = 0.5 + 1.5 * i as f64 / grid.max(2) as f64;
        let t = [radius * angle.cos(), radius * angle.sin()];
        for j in 0..grid {
            let k = if grid == 1 {
                max_k
            } else {
                max_k * j as f64 / (grid - 1) as f64
            };
            let numeric = learning::gradient_flow(&loss, &t, &[0.0, 0.0], k, &cfg)?;
            let err = numeric.distance(&maml::analytic_flow(&t, k));
            worst_grid = worst_grid.max(err);
            flow_grid.push(vec![t[0].into(), t[1].into(), k.into(), err.into()]);
        }
    }

    Ok(Outcome {
        checks: vec![
            Check::at_most("corollary-loss-error", worst_loss, tol),
            Check::at_most("corollary-consistency", worst_consistency, consistency_tol),
            Check::at_most("flow-grid-error", worst_grid, grid_tol),
        ],
        tables: BTreeMap::from([("cases".to_string(), cases), ("flow-grid".to_string(), flow_grid)]),
        plot: Some(PlotSpec {
            table: "cases".into(),
            x: "eps".into(),
            y: "k".into(),
            series: "corollary".into(),
            series_column: None,
        }),
    })
}

fn proto_embedding(params: &Params, ep: &Episode, seed: u64, stage: &str) -> HarnessResult<Embedding> {
    let input = ep.support[0].0.dim();
    match params.map.get("layer_dims") {
        None if stage == "proto-episode/init" => Ok(Embedding::identity(input)),
        _ => {
            let dims = params.usize_list("layer_dims", &[input, 4, 2])?;
            if dims.first() != Some(&input) {
                return Err(params.bad("layer_dims", "a list starting with the episode input dimension"));
            }
            let scale = params.positive("init_scale", 0.5)?;
            Ok(Embedding::random(dims, scale, &mut child_rng(seed, stage))?)
        }
    }
}

fn proto_episode(params: &Params, seed: u64, base: &Path) -> HarnessResult<Outcome> {
    let ep = params.episode(base)?;
    let metric = params.metric()?;
    let e = proto_embedding(params, &ep, seed, "proto-episode/init")?;
    let rows = prototypical::query_probabilities(&e, &ep, &metric)?;

    let mut table = Table::new(&["query", "class", "probability"]);
    for r in &rows {
        table.push(vec![r.query.into(), r.class.into(), r.probability.into()]);
    }
    let mut worst_sum = 0.0f64;
    for q in 0..ep.query.len() {
        let s: f64 = rows.iter().filter(|r| r.query == q).map(|r| r.probability).sum();
        worst_sum = worst_sum.max((s - 1.0).abs());
    }

    // Reverse the label order and compare bit patterns.
    let classes = ep.classes();
    let (lo, hi) = (classes[0], *classes.last().expect("non-empty"));
    let flipped = ep.relabel(|y| lo + hi - y);
    let flipped_rows = prototypical::query_probabilities(&e, &flipped, &metric)?;
    let mismatches = rows
        .iter()
        .filter(|r| {
            !flipped_rows.iter().any(|f| {
                f.query == r.query && f.class == lo + hi - r.class && f.probability.to_bits() == r.probability.to_bits()
            })
        })
        .count();
    let nll = prototypical::episode_nll(&e, &ep, &metric)?;
    let mut nll_table = Table::new(&["episode", "nll"]);
    nll_table.push(vec!["input".into(), nll.into()]);

    Ok(Outcome {
        checks: vec![
            Check::at_most("probability-normalization", worst_sum, 1e-12),
            Check::equals("label-permutation-mismatches", mismatches as f64, 0.0),
        ],
        tables: BTreeMap::from([("probabilities".to_string(), table), ("nll".to_string(), nll_table)]),
        plot: Some(PlotSpec {
            table: "probabilities".into(),
            x: "query".into(),
            y: "probability".into(),
            series: "class".into(),
            series_column: Some("class".into()),
        }),
    })
}

fn proto_train(params: &Params, seed: u64, base: &Path) -> HarnessResult<Outcome> {
    let ep = params.episode(base)?;
    let metric = params.metric()?;
    let e = proto_embedding(params, &ep, seed, "proto-train/init")?;
    let steps = params.usize("steps", 50)?;
    let lr = params.non_negative("lr", 0.1)?;
    let min_reduction = params.f64("min_reduction", 0.5)?;
    let out = prototypical::train_embedding(&e, std::slice::from_ref(&ep), steps, lr, &metric)?;

    let mut trace = Table::new(&["step", "nll"]);
    for (i, v) in out.trace.iter().enumerate() {
        trace.push(vec![i.into(), (*v).into()]);
    }
    let (first, last) = (out.trace[0], *out.trace.last().expect("trace has the initial value"));
    let reduction = if first > 0.0 { 1.0 - last / first } else { 0.0 };
    let mut params_table = Table::new(&["index", "value"]);
    for (i, v) in out.embedding.params().iter().enumerate() {
        params_table.push(vec![i.into(), (*v).into()]);
    }
    Ok(Outcome {
        checks: vec![Check::at_least("nll-reduction", reduction, min_reduction)],
        tables: BTreeMap::from([("trace".to_string(), trace), ("parameters".to_string(), params_table)]),
        plot: Some(PlotSpec {
            table: "trace".into(),
            x: "step".into(),
            y: "nll".into(),
            series: "train".into(),
            series_column: None,
        }),
    })
}

fn leaf_navigate(params: &Params, seed: u64) -> HarnessResult<Outcome> {
    let centres = params.f64_list("centers", &[0.0, 1.5, 3.0])?;
    let radius = params.positive("radius", 1.0)?;
    let pairs = params.count("pairs", 100)?;
    let tol = params.positive("tol", 1e-9)?;
    if centres.is_empty() {
        return Err(params.bad("centers", "non-empty"));
    }
    let balls = centres
        .iter()
        .map(|c| BallChart::euclidean(CoordinateVector::from(&[*c][..]), radius))
        .collect::<crate::Result<Vec<_>>>()?;
    let lp = foliation::leaf_pseudogroup(balls)?;

    let lo = centres.iter().copied().fold(f64::INFINITY, f64::min) - radius;
    let hi = centres.iter().copied().fold(f64::NEG_INFINITY, f64::max) + radius;
    let mut rng = child_rng(seed, "leaf-navigate/pairs");
    let mut draw = || loop {
        let x: f64 = rng.random_range(lo..hi);
        if lp.cover().contains(&[x]) {
            break CoordinateVector::from(&[x][..]);
        }
    };
    let sample: Vec<_> = (0..pairs).map(|_| (draw(), draw())).collect();

    let mut table = Table::new(&["pair", "p", "q", "image", "endpoint_error", "inverse_error", "balls"]);
    let (mut worst_end, mut worst_inv, mut failures) = (0.0f64, 0.0f64, 0usize);
    for (i, (p, q)) in sample.iter().enumerate() {
        match lp.navigate(p, q) {
            Ok(map) => {
                let image = map.apply_unchecked(p);
                let back = map.inverse_unchecked(&image);
                let (e_end, e_inv) = (image.distance(q), back.distance(p));
                worst_end = worst_end.max(e_end);
                worst_inv = worst_inv.max(e_inv);
                let balls = lp.cover().chain(p, q).map(|c| c.balls().len()).unwrap_or(0);
                table.push(vec![
                    i.into(),
                    p[0].into(),
                    q[0].into(),
                    image[0].into(),
                    e_end.into(),
                    e_inv.into(),
                    balls.into(),
                ]);
            }
            Err(_) => failures += 1,
        }
    }
    let axioms = lp.verify_axioms()?;
    let mut axiom_table = Table::new(&["axiom", "checks", "failures", "worst_residual"]);
    for o in axioms.outcomes() {
        axiom_table.push(vec![
            o.name.into(),
            o.checks.into(),
            o.failures.into(),
            o.worst_residual.into(),
        ]);
    }
    Ok(Outcome {
        checks: vec![
            Check::equals("navigation-failures", failures as f64, 0.0),
            Check::at_most("endpoint-error", worst_end, tol),
            Check::at_most("inverse-error", worst_inv, tol),
            Check::equals("leaf-pseudogroup-axiom-failures", axioms.total_failures() as f64, 0.0),
        ],
        tables: BTreeMap::from([("pairs".to_string(), table), ("axioms".to_string(), axiom_table)]),
        plot: Some(PlotSpec {
            table: "pairs".into(),
            x: "q".into(),
            y: "image".into(),
            series: "navigate".into(),
            series_column: None,
        }),
    })
}

/// Samples spread over the square `[-r, r]^dim`.
fn uniform_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, r: f64) -> Vec<CoordinateVector> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-r..r)).collect::<Vec<_>>().into())
        .collect()
}

fn axiom_rows(table: &mut Table, label: &str, report: &relatedness::AxiomReport) {
    for o in report.outcomes() {
        table.push(vec![
            label.into(),
            o.name.into(),
            o.checks.into(),
            o.failures.into(),
            o.worst_residual.into(),
        ]);
    }
}

fn relatedness_check(params: &Params, seed: u64) -> HarnessResult<Outcome> {
    let samples = params.count("samples", 25)?;
    let mut rng = child_rng(seed, "relatedness-check/samples");
    let mut axioms = Table::new(&["pseudogroup", "axiom", "checks", "failures", "worst_residual"]);

    let translation = relatedness::translations(2, 2)?;
    let points = uniform_points(&mut rng, samples, 2, 3.0);
    let t_report = relatedness::verify_pseudogroup_axioms(&translation, &points)?;
    axiom_rows(&mut axioms, "translations", &t_report);

    let rotation = relatedness::rotations(8)?;
    let ring: Vec<CoordinateVector> = uniform_points(&mut rng, samples, 2, 2.0)
        .into_iter()
        .filter(|p| p.norm() > 0.1)
        .collect();
    let r_report = relatedness::verify_pseudogroup_axioms(&rotation, &ring)?;
    axiom_rows(&mut axioms, "rotations", &r_report);

    // Concentric circles about the origin plus the origin as its own class.
    let origin: crate::geometry::Predicate = Arc::new(|x: &[f64]| x[0] == 0.0 && x[1] == 0.0);
    let punctured: crate::geometry::Predicate = Arc::new(|x: &[f64]| x[0] != 0.0 || x[1] != 0.0);
    let notion = RelatednessNotion {
        members: vec![
            RelatednessMember {
                label: "origin".into(),
                pseudogroup: relatedness::Pseudogroup::new(vec![Transformation::identity()], 1)?,
                domain: origin,
            },
            RelatednessMember {
                label: "circles".into(),
                pseudogroup: relatedness::rotations(8)?,
                domain: punctured,
            },
        ],
        ambient_dim: 2,
    };
    let mut circle_points = vec![CoordinateVector::zeros(2)];
    for r in [0.5, 1.0, 1.5] {
        for k in 0..6 {
            let a = std::f64::consts::TAU * k as f64 / 6.0 + rng.random_range(0.0..0.5);
            circle_points.push(vec![r * a.cos(), r * a.sin()].into());
        }
    }
    let partition = relatedness::verify_relatedness(&notion, &circle_points)?;
    let mut orbits = Table::new(&["x", "y", "cell"]);
    for (ci, cell) in partition.cells.iter().enumerate() {
        for &i in cell {
            orbits.push(vec![circle_points[i][0].into(), circle_points[i][1].into(), ci.into()]);
        }
    }

    let metric_samples = uniform_points(&mut rng, samples.min(20), 2, 2.0);
    let violations = Metric::euclidean().axiom_violations(&metric_samples);

    Ok(Outcome {
        checks: vec![
            Check::equals("translation-axiom-failures", t_report.total_failures() as f64, 0.0),
            Check::equals("rotation-axiom-failures", r_report.total_failures() as f64, 0.0),
            Check::equals("circle-partition-violations", (!partition.passed()) as u8 as f64, 0.0),
            Check::equals("circle-cells", partition.cells.len() as f64, 4.0),
            Check::equals(
                "euclidean-metric-violations",
                (!violations.within(1e-12)) as u8 as f64,
                0.0,
            ),
        ],
        tables: BTreeMap::from([("axioms".to_string(), axioms), ("orbits".to_string(), orbits)]),
        plot: Some(PlotSpec {
            table: "orbits".into(),
            x: "x".into(),
            y: "y".into(),
            series: "cell".into(),
            series_column: Some("cell".into()),
        }),
    })
}

fn grid_points(n: usize, lo: f64, hi: f64) -> Vec<CoordinateVector> {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(vec![lo + step * i as f64, lo + step * j as f64].into());
        }
    }
    out
}

fn topology_check(params: &Params) -> HarnessResult<Outcome> {
    let n = params.count("grid", 41)?;
    let centres_per_axis = params.count("centers_per_axis", 5)?;
    let radii = params.f64_list("radii", &[0.05, 0.2, 0.5])?;
    let eps_grid = params.f64_list("eps_grid", &[1e-4, 1e-3, 1e-2, 0.05, 0.1])?;
    let universe = grid_points(n, -1.0, 1.0);
    // Centres sit on the universe grid so that they are members of it.
    let stride = ((n - 1) / centres_per_axis.max(2).saturating_sub(1)).max(1);
    let centres: Vec<CoordinateVector> = (0..n)
        .step_by(stride)
        .flat_map(|i| (0..n).step_by(stride).map(move |j| (i, j)))
        .map(|(i, j)| universe[i * n + j].clone())
        .collect();
    let learner = LearnerMap::exact_quadratic();

    let mut table = Table::new(&["loss", "axiom", "t_1", "t_2"]);
    let mut checks = Vec::new();
    for (loss, expect_pass) in [
        (LossSurface::quadratic(), true),
        (LossSurface::quadratic_with_step(), false),
    ] {
        let sets = learning::loss_ball_family(&loss, &learner, &universe, &centres, &radii)?;
        let report = learning::verify_topology_axioms(&loss, &learner, &universe, &sets, &eps_grid)?;
        for c in &report.counterexamples {
            let axiom = match c.axiom {
                learning::TopologyAxiom::InnerBall => "inner-ball",
                learning::TopologyAxiom::Union => "union",
                learning::TopologyAxiom::Intersection => "intersection",
            };
            table.push(vec![
                loss.name().into(),
                axiom.into(),
                c.task[0].into(),
                c.task[1].into(),
            ]);
        }
        let found = report.counterexamples.len() as f64;
        checks.push(if expect_pass {
            Check::equals(format!("{}-counterexamples", loss.name()), found, 0.0)
        } else {
            Check::at_least(format!("{}-counterexamples", loss.name()), found, 1.0)
        });
    }
    Ok(Outcome {
        checks,
        tables: BTreeMap::from([("counterexamples".to_string(), table)]),
        plot: Some(PlotSpec {
            table: "counterexamples".into(),
            x: "t_1".into(),
            y: "t_2".into(),
            series: "counterexample".into(),
            series_column: Some("axiom".into()),
        }),
    })
}

fn equivariance_check(params: &Params, seed: u64) -> HarnessResult<Outcome> {
    let n = params.count("tasks", 50)?;
    let offset = params.f64_list("offset", &[0.7, -1.3])?;
    if offset.len() != 2 {
        return Err(params.bad("offset", "a list of two numbers"));
    }
    let tol = params.positive("tol", 1e-12)?;
    let mut rng = child_rng(seed, "equivariance-check/tasks");
    let tasks = uniform_points(&mut rng, n, 2, 3.0);
    let learner = LearnerMap::exact_quadratic();
    let shift = Transformation::translation(&offset);
    let id = Transformation::identity();

    let mut table = Table::new(&["t_1", "t_2", "matched_defect", "mismatched_defect"]);
    for t in &tasks {
        let one = std::slice::from_ref(t);
        table.push(vec![
            t[0].into(),
            t[1].into(),
            learning::equivariance_defect(&learner, &shift, &shift, one)?.into(),
            learning::equivariance_defect(&learner, &shift, &id, one)?.into(),
        ]);
    }
    let matched = learning::equivariance_defect(&learner, &shift, &shift, &tasks)?;
    let mismatched = learning::equivariance_defect(&learner, &shift, &id, &tasks)?;
    let magnitude = crate::geometry::norm(&offset);
    Ok(Outcome {
        checks: vec![
            Check::at_most("matched-defect", matched, tol),
            Check::at_most("mismatched-defect-gap", (mismatched - magnitude).abs(), 1e-9),
        ],
        tables: BTreeMap::from([("tasks".to_string(), table)]),
        plot: Some(PlotSpec {
            table: "tasks".into(),
            x: "t_1".into(),
            y: "t_2".into(),
            series: "task".into(),
            series_column: None,
        }),
    })
}

/// The foliated transition `(x, y) -> (x + 1, x y)` as a chart on `x > 0`.
pub fn sheared_product_chart() -> FoliatedChart {
    let chart = Chart::new(
        2,
        Arc::new(|p| p.len() == 2 && p[0] > 0.0),
        Arc::new(|c| c.len() == 2 && c[0] > 1.0),
        Arc::new(|p| vec![p[0] + 1.0, p[0] * p[1]]),
        Arc::new(|c| vec![c[0] - 1.0, c[1] / (c[0] - 1.0)]),
    );
    FoliatedChart::new(chart, 1).expect("leaf dim 1 of 2")
}

/// The non-foliated transition `(x, y) -> (x + y, y)`.
pub fn shear_chart() -> FoliatedChart {
    let chart = Chart::new(
        2,
        Arc::new(|p| p.len() == 2),
        Arc::new(|c| c.len() == 2),
        Arc::new(|p| vec![p[0] + p[1], p[1]]),
        Arc::new(|c| vec![c[0] - c[1], c[1]]),
    );
    FoliatedChart::new(chart, 1).expect("leaf dim 1 of 2")
}

fn foliation_check(params: &Params, seed: u64) -> HarnessResult<Outcome> {
    let n = params.count("samples", 100)?;
    let mut rng = child_rng(seed, "foliation-check/samples");
    let samples: Vec<CoordinateVector> = (0..n)
        .map(|_| vec![rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0)].into())
        .collect();
    let reference = FoliatedChart::new(Chart::identity(2), 1)?;
    let fol = RegularFoliation::new(vec![reference.clone()])?;
    let good = foliation::verify_foliated_transition(&fol, &reference, &sheared_product_chart(), &samples)?;
    let bad = foliation::verify_foliated_transition(&fol, &reference, &shear_chart(), &samples)?;

    let mut table = Table::new(&["transition", "max_off_block", "foliated"]);
    table.push(vec![
        "sheared-product".into(),
        good.max_off_block.into(),
        (good.foliated as usize).into(),
    ]);
    table.push(vec![
        "shear".into(),
        bad.max_off_block.into(),
        (bad.foliated as usize).into(),
    ]);

    let singular = SingularFoliationSample::concentric_circles();
    let mut ring = vec![CoordinateVector::zeros(2)];
    for r in [0.5, 1.0, 1.5] {
        for k in 0..12 {
            let a = -1.5 + 0.25 * k as f64;
            ring.push(vec![r * a.cos(), r * a.sin()].into());
        }
    }
    let mut singular_table = Table::new(&["x_1", "x_2", "leaf_dim", "leaf_mates", "violations"]);
    let mut singular_failures = 0;
    for x in [[0.0, 0.0], [1.0, 0.0], [0.0, 0.5], [-1.5, 0.0]] {
        let r = foliation::verify_singular_distinguished_chart(&singular, &x, &ring);
        singular_failures += usize::from(!r.passed);
        singular_table.push(vec![
            x[0].into(),
            x[1].into(),
            r.leaf_dim.into(),
            r.leaf_mates.into(),
            r.slice_violations.len().into(),
        ]);
    }

    Ok(Outcome {
        checks: vec![
            Check::at_most("foliated-off-block", good.max_off_block, 1e-6),
            Check::at_least("shear-off-block", bad.max_off_block, 0.1),
            Check::equals("singular-chart-failures", singular_failures as f64, 0.0),
        ],
        tables: BTreeMap::from([
            ("transitions".to_string(), table),
            ("singular-charts".to_string(), singular_table),
        ]),
        plot: Some(PlotSpec {
            table: "singular-charts".into(),
            x: "x_1".into(),
            y: "x_2".into(),
            series: "distinguished-point".into(),
            series_column: None,
        }),
    })
}

/// Runs an experiment in memory. Relative episode paths resolve against
/// `base`.
pub fn execute(config: &ExperimentConfig, base: &Path) -> HarnessResult<Outcome> {
    let e = config.experiment;
    let p = &config.params;
    let seed = config.seed;
    match e {
        Experiment::MamlLeaf => maml_leaf(&Params::new(e, p, &["dim", "eps", "k", "n", "step", "tol"])?, seed),
        Experiment::MamlCorollary => maml_corollary(
            &Params::new(
                e,
                p,
                &["n", "step", "tol", "consistency_tol", "grid", "max_k", "grid_tol"],
            )?,
            seed,
        ),
        Experiment::ProtoEpisode => proto_episode(
            &Params::new(e, p, &["episode", "metric", "layer_dims", "init_scale"])?,
            seed,
            base,
        ),
        Experiment::ProtoTrain => proto_train(
            &Params::new(
                e,
                p,
                &[
                    "episode",
                    "metric",
                    "layer_dims",
                    "init_scale",
                    "steps",
                    "lr",
                    "min_reduction",
                ],
            )?,
            seed,
            base,
        ),
        Experiment::LeafNavigate => leaf_navigate(&Params::new(e, p, &["centers", "radius", "pairs", "tol"])?, seed),
        Experiment::RelatednessCheck => relatedness_check(&Params::new(e, p, &["samples"])?, seed),
        Experiment::TopologyCheck => {
            topology_check(&Params::new(e, p, &["grid", "centers_per_axis", "radii", "eps_grid"])?)
        }
        Experiment::EquivarianceCheck => equivariance_check(&Params::new(e, p, &["tasks", "offset", "tol"])?, seed),
        Experiment::FoliationCheck => foliation_check(&Params::new(e, p, &["samples"])?, seed),
    }
}

fn assemble(config: ExperimentConfig, outcome: Outcome, duration_secs: f64) -> RunReport {
    let failed = outcome.checks.iter().filter(|c| !c.passed).count();
    RunReport {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        summary: Summary {
            passed: failed == 0,
            checks: outcome.checks.len(),
            failed,
        },
        config,
        checks: outcome.checks,
        tables: outcome.tables,
        plot: outcome.plot,
        duration_secs,
    }
}

/// Runs the experiment and builds the report without touching the disk.
pub fn run_in_memory(config: &ExperimentConfig, base: &Path) -> HarnessResult<RunReport> {
    let start = Instant::now();
    let outcome = execute(config, base)?;
    Ok(assemble(config.clone(), outcome, start.elapsed().as_secs_f64()))
}

/// Runs the experiment and writes `report.json`, `timing.json` and one
/// CSV per table into `output_dir`.
pub fn run(config: &ExperimentConfig, base: &Path, output_dir: &Path) -> HarnessResult<RunReport> {
    let report = run_in_memory(config, base)?;
    write_outputs(&report, output_dir)?;
    Ok(report)
}

/// Output directory after applying [`OUTPUT_DIR_ENV`]; relative config
/// paths resolve against `base`.
pub fn resolve_output_dir(config: &ExperimentConfig, base: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => base.join(&config.output_dir),
    }
}

fn write_outputs(report: &RunReport, output_dir: &Path) -> HarnessResult<()> {
    fs::create_dir_all(output_dir)?;
    let staging = tempfile::Builder::new().prefix(".foliate-").tempdir_in(output_dir)?;
    let mut files = vec!["report.json".to_string(), "timing.json".to_string()];
    fs::write(staging.path().join("report.json"), report.to_json())?;
    let timing = serde_json::json!({ "duration_secs": report.duration_secs });
    fs::write(staging.path().join("timing.json"), format!("{timing}\n"))?;
    for (name, table) in &report.tables {
        let file = format!("{name}.csv");
        table.write_csv(fs::File::create(staging.path().join(&file))?)?;
        files.push(file);
    }
    for file in files {
        fs::rename(staging.path().join(&file), output_dir.join(&file))?;
    }
    Ok(())
}

/// `x,y,series` rows for the report's designated plot table.
pub fn emit_plot_data(report: &RunReport) -> HarnessResult<String> {
    let spec = report.plot.as_ref().ok_or(HarnessError::NoTabularData)?;
    let table = report.tables.get(&spec.table).ok_or(HarnessError::NoTabularData)?;
    let col = |name: &str| table.column(name).ok_or(HarnessError::NoTabularData);
    let (x, y) = (col(&spec.x)?, col(&spec.y)?);
    let series = spec.series_column.as_deref().map(col).transpose()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "series"])?;
    for row in &table.rows {
        let label = match series {
            Some(s) if spec.series_column.as_deref() == Some(&spec.series) => row[s].to_string(),
            Some(s) => format!("{}-{}", spec.series, row[s]),
            None => spec.series.clone(),
        };
        w.write_record([row[x].to_string(), row[y].to_string(), label])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Names accepted by [`run_suite`].
pub const SUITES: [&str; 10] = [
    "maml",
    "pseudogroup",
    "navigation",
    "foliation",
    "topology",
    "equivariance",
    "prototypical",
    "gradient",
    "plaque",
    "all",
];

fn gradient_suite(seed: u64) -> HarnessResult<Vec<Check>> {
    let loss = LossSurface::quadratic();
    let numeric = LossSurface::new("quadratic-numeric", Arc::new(|t: &[f64], m: &[f64]| loss_value(t, m)));
    let mut rng = child_rng(seed, "gradient/points");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = learning::loss_gradient(&loss, &t, &m)?;
        let f = learning::loss_gradient(&numeric, &t, &m)?;
        worst = worst.max(a.distance(&f) / a.norm().max(1e-12));
    }
    Ok(vec![Check::at_most("gradient-relative-error", worst, 1e-5)])
}

fn loss_value(t: &[f64], m: &[f64]) -> f64 {
    m.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn plaque_suite() -> HarnessResult<Vec<Check>> {
    let loss = LossSurface::quadratic();
    let cfg = FlowConfig::default();
    let m0 = [0.0, 0.0];
    let out = learning::plaque_restricted_optimize(&loss, &[1.0, 1.0], &m0, &[0], &[1], 1e-3, &cfg)?;
    Ok(vec![
        Check::equals(
            "plaque-fixed-bits-changed",
            (out.model[0].to_bits() != m0[0].to_bits()) as u8 as f64,
            0.0,
        ),
        Check::at_most("plaque-minimizer-error", out.model.distance(&[0.0, 1.0]), 1e-6),
    ])
}

fn pseudogroup_suite(seed: u64) -> HarnessResult<Vec<Check>> {
    let mut checks = Vec::new();
    let mut rng = child_rng(seed, "pseudogroup/samples");
    let points = uniform_points(&mut rng, 25, 2, 3.0);
    let t = relatedness::verify_pseudogroup_axioms(&relatedness::translations(2, 2)?, &points)?;
    checks.push(Check::equals(
        "translation-axiom-failures",
        t.total_failures() as f64,
        0.0,
    ));
    let lp: LeafPseudogroup = foliation::leaf_pseudogroup(
        [0.0, 1.5, 3.0]
            .iter()
            .map(|c| BallChart::euclidean(CoordinateVector::from(&[*c][..]), 1.0))
            .collect::<crate::Result<Vec<_>>>()?,
    )?;
    let l = lp.verify_axioms()?;
    checks.push(Check::equals(
        "leaf-pseudogroup-axiom-failures",
        l.total_failures() as f64,
        0.0,
    ));
    Ok(checks)
}

/// Runs a named property suite in memory and returns its checks.
pub fn run_suite(name: &str, seed: u64) -> HarnessResult<Vec<Check>> {
    let here = Path::new(".");
    let experiments = |list: &[Experiment]| -> HarnessResult<Vec<Check>> {
        let mut out = Vec::new();
        for e in list {
            let cfg = ExperimentConfig {
                seed,
                ..ExperimentConfig::new(*e)
            };
            out.extend(execute(&cfg, here)?.checks.into_iter().map(|mut c| {
                c.name = format!("{e}/{}", c.name);
                c
            }));
        }
        Ok(out)
    };
    match name {
        "maml" => experiments(&[Experiment::MamlLeaf, Experiment::MamlCorollary]),
        "pseudogroup" => pseudogroup_suite(seed),
        "navigation" => experiments(&[Experiment::LeafNavigate]),
        "foliation" => experiments(&[Experiment::FoliationCheck, Experiment::RelatednessCheck]),
        "topology" => experiments(&[Experiment::TopologyCheck]),
        "equivariance" => experiments(&[Experiment::EquivarianceCheck]),
        "prototypical" => experiments(&[Experiment::ProtoEpisode, Experiment::ProtoTrain]),
        "gradient" => gradient_suite(seed),
        "plaque" => plaque_suite(),
        "all" => {
            let mut out = Vec::new();
            for s in SUITES.iter().filter(|s| **s != "all") {
                out.extend(run_suite(s, seed)?);
            }
            Ok(out)
        }
        other => Err(HarnessError::Config(format!(
            "unknown suite `{other}`; expected one of {SUITES:?}"
        ))),
    }
}
