//! Benchmark functions on `[0,1]^m`, accuracy metrics, and the replicated
//! criterion comparison.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::batch::ClusterParams;
use crate::criteria::CriterionSpec;
use crate::design::{latin_hypercube, DesignMatrix};
use crate::error::{check_dim, Error, Result};
use crate::kriging::{FitOptions, KrigingModel};
use crate::sequential::{run_campaign_with_test_set, CampaignConfig, CandidateGrid, Termination};

use std::f64::consts::{E, PI};

/// The seven benchmark functions. All take coordinates in `[0,1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "function", rename_all = "snake_case")]
pub enum TestFunction {
    /// f1: Branin with inputs mapped through `15 x1 - 5`, `15 x2`.
    #[serde(alias = "f1")]
    Branin,
    /// f2: rational function times `1 - exp(-0.5 / x2)`.
    #[serde(alias = "f2")]
    Rational,
    /// f3: `log(2 + sin(2 pi x1)) cos(2 pi x2^2)`.
    #[serde(alias = "f3")]
    LogTrig,
    /// f4: three-dimensional Hartmann.
    #[serde(alias = "f4")]
    Hartmann3,
    /// f5: five-dimensional Ackley.
    #[serde(alias = "f5")]
    Ackley5,
    /// f6: Zakharov in `m` dimensions.
    #[serde(alias = "f6")]
    Zakharov { m: usize },
    /// f7: Rosenbrock in `m` dimensions.
    #[serde(alias = "f7")]
    Rosenbrock { m: usize },
}

const HARTMANN_C: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_A: [[f64; 3]; 4] = [
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
];
const HARTMANN_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.03815, 0.5743, 0.8828],
];

impl TestFunction {
    pub fn dim(&self) -> usize {
        match *self {
            TestFunction::Branin | TestFunction::Rational | TestFunction::LogTrig => 2,
            TestFunction::Hartmann3 => 3,
            TestFunction::Ackley5 => 5,
            TestFunction::Zakharov { m } | TestFunction::Rosenbrock { m } => m,
        }
    }

    /// Short label, `f1` .. `f7`.
    pub fn label(&self) -> &'static str {
        match self {
            TestFunction::Branin => "f1",
            TestFunction::Rational => "f2",
            TestFunction::LogTrig => "f3",
            TestFunction::Hartmann3 => "f4",
            TestFunction::Ackley5 => "f5",
            TestFunction::Zakharov { .. } => "f6",
            TestFunction::Rosenbrock { .. } => "f7",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TestFunction::Zakharov { m: 0 } => {
                Err(Error::InvalidArgument("Zakharov needs m >= 1".into()))
            }
            TestFunction::Rosenbrock { m } if m < 2 => {
                Err(Error::InvalidArgument("Rosenbrock needs m >= 2".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.validate()?;
        check_dim(self.dim(), x.len())?;
        if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "coordinate {v} outside [0,1] for {self}"
            )));
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match *self {
            TestFunction::Branin => branin(x[0], x[1]),
            TestFunction::Rational => {
                let (x1, x2) = (x[0], x[1]);
                let damp = if x2 == 0.0 {
                    1.0
                } else {
                    1.0 - (-0.5 / x2).exp()
                };
                let num = 2300.0 * x1.powi(3) + 1900.0 * x1 * x1 + 2092.0 * x1 + 60.0;
                let den = 100.0 * x1.powi(3) + 500.0 * x1 * x1 + 4.0 * x1 + 20.0;
                damp * num / den
            }
            TestFunction::LogTrig => {
                (2.0 + (2.0 * PI * x[0]).sin()).ln() * (2.0 * PI * x[1] * x[1]).cos()
            }
            TestFunction::Hartmann3 => -(0..4)
                .map(|i| {
                    let s: f64 = (0..3)
                        .map(|j| HARTMANN_A[i][j] * (x[j] - HARTMANN_P[i][j]).powi(2))
                        .sum();
                    HARTMANN_C[i] * (-s).exp()
                })
                .sum::<f64>(),
            TestFunction::Ackley5 => {
                let n = 5.0;
                let sq: f64 = x.iter().map(|v| v * v).sum();
                let cs: f64 = x.iter().map(|v| (2.0 * PI * v).cos()).sum();
                -20.0 * (-0.2 * (sq / n).sqrt()).exp() - (cs / n).exp() + 20.0 + E
            }
            TestFunction::Zakharov { .. } => {
                let sq: f64 = x.iter().map(|v| v * v).sum();
                let lin: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| 0.5 * (i + 1) as f64 * v)
                    .sum();
                sq + lin.powi(2) + lin.powi(4)
            }
            TestFunction::Rosenbrock { .. } => x
                .windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (w[0] - 1.0).powi(2))
                .sum(),
        }
    }
}

fn branin(x1: f64, x2: f64) -> f64 {
    let u = 15.0 * x1 - 5.0;
    let v = 15.0 * x2;
    (v - 5.1 / (4.0 * PI * PI) * u * u + 5.0 / PI * u - 6.0).powi(2)
        + 10.0 * (1.0 - 1.0 / (8.0 * PI)) * u.cos()
        + 10.0
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Zakharov { m } | TestFunction::Rosenbrock { m } => {
                write!(f, "{}:{m}", self.label())
            }
            _ => f.write_str(self.label()),
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    /// Accepts `f1`..`f5`, and `f6:<m>` / `f7:<m>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, m) = match s.split_once(':') {
            Some((n, m)) => (
                n,
                Some(
                    m.parse::<usize>()
                        .map_err(|e| Error::Parse(format!("bad dimension in '{s}': {e}")))?,
                ),
            ),
            None => (s, None),
        };
        let f = match (name.to_ascii_lowercase().as_str(), m) {
            ("f1" | "branin", None) => TestFunction::Branin,
            ("f2" | "rational", None) => TestFunction::Rational,
            ("f3" | "log_trig", None) => TestFunction::LogTrig,
            ("f4" | "hartmann3", None) => TestFunction::Hartmann3,
            ("f5" | "ackley5", None) => TestFunction::Ackley5,
            ("f6" | "zakharov", Some(m)) => TestFunction::Zakharov { m },
            ("f7" | "rosenbrock", Some(m)) => TestFunction::Rosenbrock { m },
            _ => return Err(Error::Parse(format!("unknown test function '{s}'"))),
        };
        f.validate()?;
        Ok(f)
    }
}

/// RMSE and maximum absolute error over a test matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    pub n_test: usize,
}

/// A test matrix together with the true responses on it.
#[derive(Clone, Debug)]
pub struct TestSet {
    pub function: TestFunction,
    pub points: DesignMatrix,
    pub truth: Vec<f64>,
}

impl TestSet {
    pub fn new(function: TestFunction, points: DesignMatrix) -> Result<Self> {
        check_dim(function.dim(), points.m())?;
        let truth = points
            .rows()
            .map(|x| function.evaluate(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(TestSet {
            function,
            points,
            truth,
        })
    }

    /// Random Latin hypercube test matrix of the given size.
    pub fn latin_hypercube(function: TestFunction, size: usize, seed: u64) -> Result<Self> {
        Self::new(function, latin_hypercube(size, function.dim(), seed)?)
    }

    /// Metrics of an arbitrary predictor on this test matrix.
    pub fn score_with<F: Fn(&[f64]) -> f64 + Sync>(&self, predictor: F) -> MetricReport {
        let errors: Vec<f64> = self
            .points
            .rows()
            .collect::<Vec<_>>()
            .par_iter()
            .zip(self.truth.par_iter())
            .map(|(x, t)| (t - predictor(x)).abs())
            .collect();
        let n = errors.len();
        let sse: f64 = errors.iter().map(|e| e * e).sum();
        let mae = errors.iter().copied().fold(0.0, f64::max);
        MetricReport {
            rmse: (sse / n as f64).sqrt(),
            mae,
            n_test: n,
        }
    }

    pub fn score_model(&self, model: &KrigingModel) -> Result<MetricReport> {
        check_dim(self.points.m(), model.design().m())?;
        Ok(self.score_with(|x| model.predict_unchecked(x)))
    }
}

/// RMSE and MAE of `model` against `function` on `test_matrix`.
pub fn metrics(
    model: &KrigingModel,
    function: TestFunction,
    test_matrix: &DesignMatrix,
) -> Result<MetricReport> {
    TestSet::new(function, test_matrix.clone())?.score_model(model)
}

/// One-sided sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips. Ties should be dropped beforehand.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if wins == 0 {
        return 1.0;
    }
    let flips = Binomial::new(0.5, n as u64).expect("valid binomial");
    flips.sf(wins as u64 - 1)
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    })
}

/// What to compare: every scenario × criterion × batch size, replicated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPlan {
    pub functions: Vec<TestFunction>,
    pub criteria: Vec<CriterionSpec>,
    #[serde(default = "default_b_values")]
    pub b_values: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Points added by one-point designs.
    #[serde(default = "default_added_points")]
    pub added_points: usize,
    /// Rounds run by batch designs.
    #[serde(default = "default_batch_rounds")]
    pub batch_rounds: usize,
    #[serde(default = "default_test_matrix_size")]
    pub test_matrix_size: usize,
    #[serde(default)]
    pub candidate_grid: CandidateGrid,
    #[serde(default = "default_alpha")]
    pub alpha: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Initial design size per input dimension.
    #[serde(default = "default_n0_per_dim")]
    pub n0_per_dim: usize,
    #[serde(default = "default_design_budget")]
    pub design_budget: usize,
    #[serde(default)]
    pub fit: FitOptions,
}

fn default_b_values() -> Vec<usize> {
    vec![1]
}
fn default_replications() -> usize {
    1
}
fn default_added_points() -> usize {
    20
}
fn default_batch_rounds() -> usize {
    10
}
pub(crate) fn default_test_matrix_size() -> usize {
    10_000
}
fn default_alpha() -> usize {
    15
}
fn default_beta() -> f64 {
    5.0
}
fn default_n0_per_dim() -> usize {
    5
}
pub(crate) fn default_design_budget() -> usize {
    2000
}

impl ComparisonPlan {
    pub fn validate(&self) -> Result<()> {
        if self.functions.is_empty() {
            return Err(Error::InvalidArgument("no test functions given".into()));
        }
        if self.criteria.is_empty() {
            return Err(Error::InvalidArgument("no criteria given".into()));
        }
        if self.b_values.is_empty() || self.b_values.contains(&0) {
            return Err(Error::InvalidArgument("b values must be >= 1".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be >= 1".into()));
        }
        for f in &self.functions {
            f.validate()?;
        }
        Ok(())
    }

    /// Campaign seed for a scenario and replication. Criteria and batch
    /// sizes share it so their designs start from the same initial points.
    pub fn cell_seed(&self, scenario: usize, replication: usize) -> u64 {
        self.seed ^ (((scenario as u64) << 32) | replication as u64)
    }

    /// Seed of the scenario's shared test matrix.
    pub fn test_seed(&self, scenario: usize) -> u64 {
        self.seed ^ ((scenario as u64) << 32) ^ 0x7E57_0000_0000_0000
    }

    pub fn campaign_config(
        &self,
        function: TestFunction,
        criterion: CriterionSpec,
        b: usize,
        seed: u64,
    ) -> CampaignConfig {
        let m = function.dim();
        let rounds = if b == 1 {
            self.added_points
        } else {
            self.batch_rounds
        };
        CampaignConfig {
            objective: function,
            m: Some(m),
            n0: self.n0_per_dim * m,
            criterion,
            batch: ClusterParams {
                b,
                alpha: self.alpha,
                beta: self.beta,
                ..ClusterParams::default()
            },
            rounds,
            candidate_grid: self.candidate_grid.clone(),
            seed,
            termination: Termination::RoundCap,
            test_matrix_size: self.test_matrix_size,
            design_budget: self.design_budget,
            fit: self.fit.clone(),
            ..CampaignConfig::default()
        }
    }
}

/// One replicated campaign's outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub function: TestFunction,
    pub m: usize,
    pub criterion: CriterionSpec,
    pub b: usize,
    pub replication: usize,
    pub seed: u64,
    pub report: Option<MetricReport>,
    /// RMSE after every round, starting with the initial design.
    pub rmse_curve: Vec<f64>,
    pub error: Option<String>,
}

/// Medians over replications for one scenario, batch size and criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub function: TestFunction,
    pub m: usize,
    pub b: usize,
    pub criterion: CriterionSpec,
    pub median_rmse: Option<f64>,
    pub median_mae: Option<f64>,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
}

/// Runs every cell of the plan (in parallel) and summarizes by median.
/// Failed campaigns are recorded in their cell and do not abort the table.
pub fn run_comparison(plan: &ComparisonPlan) -> Result<ComparisonTable> {
    plan.validate()?;
    let test_sets = plan
        .functions
        .iter()
        .enumerate()
        .map(|(s, f)| TestSet::latin_hypercube(*f, plan.test_matrix_size, plan.test_seed(s)))
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for (s, f) in plan.functions.iter().enumerate() {
        for &b in &plan.b_values {
            for &c in &plan.criteria {
                for r in 0..plan.replications {
                    jobs.push((s, *f, b, c, r));
                }
            }
        }
    }
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&(s, function, b, criterion, replication)| {
            let seed = plan.cell_seed(s, replication);
            let config = plan.campaign_config(function, criterion, b, seed);
            let base = CellResult {
                function,
                m: function.dim(),
                criterion,
                b,
                replication,
                seed,
                report: None,
                rmse_curve: Vec::new(),
                error: None,
            };
            match run_campaign_with_test_set(&config, &function, Some(&test_sets[s])) {
                Ok(result) => CellResult {
                    report: result.final_metrics,
                    rmse_curve: result.rounds.iter().filter_map(|r| r.rmse).collect(),
                    ..base
                },
                Err(e) => {
                    log::warn!("{function} {criterion} b={b} rep={replication}: {e}");
                    CellResult {
                        error: Some(e.to_string()),
                        ..base
                    }
                }
            }
        })
        .collect();

    let mut summary = Vec::new();
    for f in &plan.functions {
        for &b in &plan.b_values {
            for &c in &plan.criteria {
                let group: Vec<&CellResult> = cells
                    .iter()
                    .filter(|x| x.function == *f && x.b == b && x.criterion == c)
                    .collect();
                let rmse: Vec<f64> = group
                    .iter()
                    .filter_map(|x| x.report.map(|r| r.rmse))
                    .collect();
                let mae: Vec<f64> = group
                    .iter()
                    .filter_map(|x| x.report.map(|r| r.mae))
                    .collect();
                summary.push(SummaryRow {
                    function: *f,
                    m: f.dim(),
                    b,
                    criterion: c,
                    median_rmse: median(&rmse),
                    median_mae: median(&mae),
                    failures: group.iter().filter(|x| x.error.is_some()).count(),
                });
            }
        }
    }
    Ok(ComparisonTable { cells, summary })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

impl ComparisonTable {
    /// Criteria in first-appearance order.
    fn criteria(&self) -> Vec<CriterionSpec> {
        let mut out = Vec::new();
        for row in &self.summary {
            if !out.contains(&row.criterion) {
                out.push(row.criterion);
            }
        }
        out
    }

    /// Wide table: one line per scenario, batch size and metric, one column
    /// per criterion holding the median, and the criterion with the lowest
    /// median in the `winner` column.
    pub fn to_matrix_csv(&self) -> String {
        let criteria = self.criteria();
        let mut out = String::from("function,m,b,metric");
        for c in &criteria {
            let _ = write!(out, ",{c}");
        }
        out.push_str(",winner\n");
        let mut keys: Vec<(TestFunction, usize)> = Vec::new();
        for row in &self.summary {
            if !keys.contains(&(row.function, row.b)) {
                keys.push((row.function, row.b));
            }
        }
        for (f, b) in keys {
            for metric in ["rmse", "mae"] {
                let values: Vec<Option<f64>> = criteria
                    .iter()
                    .map(|c| {
                        self.summary
                            .iter()
                            .find(|r| r.function == f && r.b == b && r.criterion == *c)
                            .and_then(|r| {
                                if metric == "rmse" {
                                    r.median_rmse
                                } else {
                                    r.median_mae
                                }
                            })
                    })
                    .collect();
                let winner = values
                    .iter()
                    .zip(&criteria)
                    .filter_map(|(v, c)| v.map(|v| (v, *c)))
                    .fold(None::<(f64, CriterionSpec)>, |best, (v, c)| match best {
                        Some((bv, _)) if bv <= v => best,
                        _ => Some((v, c)),
                    })
                    .map(|(_, c)| c.to_string())
                    .unwrap_or_else(|| "NA".into());
                let _ = write!(out, "{},{},{b},{metric}", f.label(), f.dim());
                for v in &values {
                    let _ = write!(out, ",{}", fmt_opt(*v));
                }
                let _ = writeln!(out, ",{winner}");
            }
        }
        out
    }

    /// Long table: one line per replicated campaign.
    pub fn to_cells_csv(&self) -> String {
        let mut out = String::from("function,m,b,criterion,replication,seed,rmse,mae,error\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.function.label(),
                c.m,
                c.b,
                c.criterion,
                c.replication,
                c.seed,
                fmt_opt(c.report.map(|r| r.rmse)),
                fmt_opt(c.report.map(|r| r.mae)),
                c.error.as_deref().unwrap_or("").replace(',', ";"),
            );
        }
        out
    }

    /// Whitespace-separated per-round RMSE curves, one block per cell,
    /// blocks separated by two blank lines (gnuplot `index` layout).
    pub fn to_curves_dat(&self) -> String {
        let mut out = String::new();
        for c in &self.cells {
            let _ = writeln!(
                out,
                "# {} m={} b={} {} rep={}",
                c.function.label(),
                c.m,
                c.b,
                c.criterion,
                c.replication
            );
            for (round, rmse) in c.rmse_curve.iter().enumerate() {
                let _ = writeln!(out, "{round} {rmse}");
            }
            out.push_str("\n\n");
        }
        out
    }
}
