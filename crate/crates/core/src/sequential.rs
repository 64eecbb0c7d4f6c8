//! The sequential design loop: fit, score, select, observe, append.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::batch::{select_batch_with_fallback, ClusterParams};
use crate::criteria::{argmax_over_candidates, CriterionSpec};
use crate::design::{latin_hypercube, md_optimized_design, DesignMatrix};
use crate::error::{check_dim, Error, Result};
use crate::kernel::KernelFamily;
use crate::kriging::{fit_with, FitOptions, KrigingModel, ModelSummary};
use crate::testbed::{
    default_design_budget, default_test_matrix_size, MetricReport, TestFunction, TestSet,
};

/// Anything that can be evaluated on `[0,1]^m`.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Result<f64>;
    /// The closed-form function, when known. Needed for held-out metrics.
    fn test_function(&self) -> Option<TestFunction> {
        None
    }
}

impl Objective for TestFunction {
    fn dim(&self) -> usize {
        TestFunction::dim(self)
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        TestFunction::evaluate(self, x)
    }

    fn test_function(&self) -> Option<TestFunction> {
        Some(*self)
    }
}

/// Memoizing wrapper that evaluates each distinct point at most once.
pub struct Observer<'a> {
    objective: &'a dyn Objective,
    cache: HashMap<Vec<u64>, f64>,
    evaluations: usize,
}

impl<'a> Observer<'a> {
    pub fn new(objective: &'a dyn Objective) -> Self {
        Observer {
            objective,
            cache: HashMap::new(),
            evaluations: 0,
        }
    }

    /// Number of objective calls made so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn observe(&mut self, points: &DesignMatrix) -> Result<Vec<f64>> {
        check_dim(self.objective.dim(), points.m())?;
        points
            .rows()
            .map(|x| {
                let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
                if let Some(&y) = self.cache.get(&key) {
                    return Ok(y);
                }
                let y = self.objective.evaluate(x).map_err(|e| Error::Objective {
                    point: x.to_vec(),
                    reason: e.to_string(),
                })?;
                self.evaluations += 1;
                if !y.is_finite() {
                    return Err(Error::Objective {
                        point: x.to_vec(),
                        reason: format!("non-finite response {y}"),
                    });
                }
                self.cache.insert(key, y);
                Ok(y)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMethod {
    /// Mixture-discrepancy optimized lattice design.
    Md,
    /// Random Latin hypercube.
    Lhs,
}

/// The finite candidate set the criteria are maximized over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidateGrid {
    pub size: usize,
    pub method: GridMethod,
    /// Exchange budget when `method` is `md`.
    pub budget: usize,
    /// Draw a fresh grid every round instead of keeping one per campaign.
    pub regenerate: bool,
}

impl Default for CandidateGrid {
    fn default() -> Self {
        CandidateGrid {
            size: 1000,
            method: GridMethod::Md,
            budget: default_design_budget(),
            regenerate: false,
        }
    }
}

impl CandidateGrid {
    pub fn generate(&self, m: usize, seed: u64) -> Result<DesignMatrix> {
        match self.method {
            GridMethod::Md => md_optimized_design(self.size, m, seed, self.budget),
            GridMethod::Lhs => latin_hypercube(self.size, m, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    /// Stop after `rounds` rounds.
    RoundCap,
    /// Stop once the design holds `total` points. The last batch is
    /// shortened if needed. `rounds` still applies.
    PointCap { total: usize },
    /// Stop once the held-out RMSE is at most `value`. `rounds` still applies.
    RmseThreshold { value: f64 },
}

/// Everything that defines a campaign. Serialized as the JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub objective: TestFunction,
    /// Input dimension; checked against the objective when given.
    #[serde(default)]
    pub m: Option<usize>,
    pub n0: usize,
    pub criterion: CriterionSpec,
    #[serde(default)]
    pub batch: ClusterParams,
    pub rounds: usize,
    #[serde(default)]
    pub candidate_grid: CandidateGrid,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_termination")]
    pub termination: Termination,
    /// Held-out test matrix size; 0 disables per-round metrics.
    #[serde(default = "default_test_matrix_size")]
    pub test_matrix_size: usize,
    /// Exchange budget for the initial design.
    #[serde(default = "default_design_budget")]
    pub design_budget: usize,
    #[serde(default = "default_kernel")]
    pub kernel: KernelFamily,
    #[serde(default)]
    pub fit: FitOptions,
    /// Diagnostic mode: keep the round-0 hyperparameters (including the
    /// process variance) for every later model.
    #[serde(default)]
    pub freeze_hyperparameters: bool,
    #[serde(default = "default_parallel")]
    pub parallel: bool,
}

fn default_termination() -> Termination {
    Termination::RoundCap
}
fn default_kernel() -> KernelFamily {
    KernelFamily::GaussianSeparable
}
fn default_parallel() -> bool {
    true
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            objective: TestFunction::Branin,
            m: None,
            n0: 10,
            criterion: CriterionSpec::Gradient,
            batch: ClusterParams::default(),
            rounds: 15,
            candidate_grid: CandidateGrid::default(),
            seed: 0,
            termination: Termination::RoundCap,
            test_matrix_size: default_test_matrix_size(),
            design_budget: default_design_budget(),
            kernel: default_kernel(),
            fit: FitOptions::default(),
            freeze_hyperparameters: false,
            parallel: true,
        }
    }
}

impl CampaignConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: CampaignConfig = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("campaign config: {e}")))?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dim(&self) -> usize {
        self.m.unwrap_or_else(|| self.objective.dim())
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.batch.validate()?;
        let m = self.dim();
        if m == 0 {
            return Err(Error::InvalidArgument("m must be >= 1".into()));
        }
        if self.n0 < 2 {
            return Err(Error::InvalidArgument(format!(
                "n0 must be >= 2, got {}",
                self.n0
            )));
        }
        if self.rounds == 0 && self.termination == Termination::RoundCap {
            return Err(Error::InvalidArgument(
                "rounds must be >= 1 under a round cap".into(),
            ));
        }
        if self.candidate_grid.size < self.batch.b {
            return Err(Error::InvalidArgument(format!(
                "candidate grid of {} cannot supply batches of {}",
                self.candidate_grid.size, self.batch.b
            )));
        }
        match self.termination {
            Termination::PointCap { total } if total < self.n0 => {
                return Err(Error::InvalidArgument(format!(
                    "point cap {total} is below n0 = {}",
                    self.n0
                )));
            }
            Termination::RmseThreshold { value } if value.is_nan() || value < 0.0 => {
                return Err(Error::InvalidArgument(format!(
                    "bad RMSE threshold {value}"
                )));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Seed of an independent random stream derived from the campaign seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

const STREAM_INITIAL: u64 = 1;
const STREAM_GRID: u64 = 2;
const STREAM_TEST: u64 = 3;
const STREAM_FIT: u64 = 0x1_0000;
const STREAM_REGRID: u64 = 0x2_0000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 0 for the initial design.
    pub round: usize,
    pub points: Vec<Vec<f64>>,
    pub observations: Vec<f64>,
    /// Model fitted after this round's points were added.
    pub model: Option<ModelSummary>,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub alpha_used: Option<usize>,
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RoundCap,
    PointCap,
    RmseThreshold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub config: CampaignConfig,
    pub rounds: Vec<RoundRecord>,
    pub final_design: DesignMatrix,
    pub final_observations: Vec<f64>,
    pub final_model: Option<ModelSummary>,
    pub final_metrics: Option<MetricReport>,
    /// Objective evaluations spent.
    pub evaluations: usize,
    pub stop_reason: Option<StopReason>,
}

impl CampaignResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("campaign trace: {e}")))
    }

    /// One line per observed point: `round,x1..xm,response,rmse,mae`.
    /// The metrics are those of the model fitted after that round.
    pub fn to_csv(&self) -> String {
        let m = self.final_design.m();
        let mut out = String::from("round");
        for j in 1..=m {
            let _ = write!(out, ",x{j}");
        }
        out.push_str(",response,rmse,mae\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rounds {
            for (x, y) in r.points.iter().zip(&r.observations) {
                let _ = write!(out, "{}", r.round);
                for v in x {
                    let _ = write!(out, ",{v}");
                }
                let _ = writeln!(out, ",{y},{},{}", opt(r.rmse), opt(r.mae));
            }
        }
        out
    }
}

/// Runs a campaign on the configured test function, with a held-out test
/// matrix of `test_matrix_size` points drawn from the campaign seed.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignResult> {
    config.validate()?;
    let test_set = if config.test_matrix_size > 0 {
        Some(TestSet::latin_hypercube(
            config.objective,
            config.test_matrix_size,
            derive_seed(config.seed, STREAM_TEST),
        )?)
    } else {
        None
    };
    run_campaign_with_test_set(config, &config.objective, test_set.as_ref())
}

/// Runs a campaign against an arbitrary objective, which takes the place of
/// `config.objective`. Metrics are recorded only when a test set is given.
pub fn run_campaign_with_test_set(
    config: &CampaignConfig,
    objective: &dyn Objective,
    test_set: Option<&TestSet>,
) -> Result<CampaignResult> {
    config.validate()?;
    let m = config.dim();
    check_dim(m, objective.dim())?;
    if let Some(t) = test_set {
        check_dim(m, t.points.m())?;
    }
    if matches!(config.termination, Termination::RmseThreshold { .. }) && test_set.is_none() {
        return Err(Error::InvalidArgument(
            "RMSE termination needs a test matrix".into(),
        ));
    }
    Campaign::new(config, objective, test_set).run()
}

struct Campaign<'a> {
    config: &'a CampaignConfig,
    observer: Observer<'a>,
    test_set: Option<&'a TestSet>,
    design: Option<DesignMatrix>,
    observations: Vec<f64>,
    model: Option<KrigingModel>,
    frozen: Option<(crate::kernel::KernelSpec, f64)>,
    rounds: Vec<RoundRecord>,
}

impl<'a> Campaign<'a> {
    fn new(
        config: &'a CampaignConfig,
        objective: &'a dyn Objective,
        test_set: Option<&'a TestSet>,
    ) -> Self {
        Campaign {
            config,
            observer: Observer::new(objective),
            test_set,
            design: None,
            observations: Vec::new(),
            model: None,
            frozen: None,
            rounds: Vec::new(),
        }
    }

    fn run(mut self) -> Result<CampaignResult> {
        match self.drive() {
            Ok(stop) => self.finish(Some(stop)),
            Err(e) if self.design.is_none() => Err(e),
            Err(e) => {
                let completed_rounds = self.rounds.len().saturating_sub(1);
                let partial = self.finish(None)?;
                Err(Error::Campaign {
                    completed_rounds,
                    source: Box::new(e),
                    partial: Box::new(partial),
                })
            }
        }
    }

    fn needs_model_each_round(&self) -> bool {
        self.config.criterion.uses_observations() || self.test_set.is_some()
    }

    fn drive(&mut self) -> Result<StopReason> {
        let cfg = self.config;
        let m = cfg.dim();
        let initial = md_optimized_design(
            cfg.n0,
            m,
            derive_seed(cfg.seed, STREAM_INITIAL),
            cfg.design_budget,
        )?;
        let y0 = self.observer.observe(&initial)?;
        self.append(initial.clone(), y0.clone(), 0)?;
        self.record(0, &initial, y0, None, false)?;

        let mut pool = Some(self.fresh_pool(derive_seed(cfg.seed, STREAM_GRID))?);
        for round in 1..=cfg.rounds {
            if let Some(stop) = self.should_stop() {
                return Ok(stop);
            }
            if cfg.candidate_grid.regenerate && round > 1 {
                pool = Some(self.fresh_pool(derive_seed(cfg.seed, STREAM_REGRID + round as u64))?);
            }
            let current = self.design.as_ref().expect("initial design present");
            let mut b = cfg.batch.b;
            if let Termination::PointCap { total } = cfg.termination {
                b = b.min(total - current.n());
            }
            let Some(candidates) = pool.take().filter(|p| p.n() >= b) else {
                return Err(Error::EmptyCandidates);
            };
            let scored = argmax_over_candidates(
                cfg.criterion,
                self.model.as_ref(),
                current,
                &candidates,
                cfg.parallel,
            )?;
            let params = ClusterParams { b, ..cfg.batch };
            let min_distance = (candidates.n() as f64).powf(-1.0 / m as f64);
            let partition =
                select_batch_with_fallback(&candidates, &scored.scores, &params, min_distance)?;
            let batch = candidates.select(&partition.batch)?;
            let keep: Vec<usize> = (0..candidates.n())
                .filter(|i| !partition.batch.contains(i))
                .collect();
            if !keep.is_empty() {
                pool = Some(candidates.select(&keep)?);
            }
            let y = self.observer.observe(&batch)?;
            self.append(batch.clone(), y.clone(), round)?;
            self.record(
                round,
                &batch,
                y,
                Some(partition.alpha_used),
                partition.fallback,
            )?;
        }
        Ok(self.should_stop().unwrap_or(StopReason::RoundCap))
    }

    fn should_stop(&self) -> Option<StopReason> {
        let n = self.design.as_ref().map_or(0, |d| d.n());
        match self.config.termination {
            Termination::RoundCap => None,
            Termination::PointCap { total } => (n >= total).then_some(StopReason::PointCap),
            Termination::RmseThreshold { value } => self
                .rounds
                .last()
                .and_then(|r| r.rmse)
                .filter(|rmse| *rmse <= value)
                .map(|_| StopReason::RmseThreshold),
        }
    }

    fn fresh_pool(&self, seed: u64) -> Result<DesignMatrix> {
        let grid = self
            .config
            .candidate_grid
            .generate(self.config.dim(), seed)?;
        let current = self.design.as_ref().expect("initial design present");
        grid.without(current).ok_or(Error::EmptyCandidates)
    }

    fn append(&mut self, points: DesignMatrix, y: Vec<f64>, round: usize) -> Result<()> {
        let design = match self.design.take() {
            Some(d) => d.stack(&points)?,
            None => points,
        };
        self.observations.extend(y);
        self.design = Some(design);
        if self.needs_model_each_round() {
            self.refit(round)?;
        }
        Ok(())
    }

    fn refit(&mut self, round: usize) -> Result<()> {
        let design = self.design.clone().expect("design present");
        let y = self.observations.clone();
        let model = match &self.frozen {
            Some((kernel, tau2)) => {
                KrigingModel::new(design, y, kernel.clone())?.with_tau_squared(*tau2)?
            }
            None => {
                let mut opts = self.config.fit.clone();
                if let Some(prev) = &self.model {
                    opts.warm_start = Some(prev.kernel().clone());
                }
                let seed = derive_seed(self.config.seed, STREAM_FIT + round as u64);
                fit_with(design, y, self.config.kernel, seed, &opts)?
            }
        };
        if self.config.freeze_hyperparameters && self.frozen.is_none() {
            self.frozen = Some((model.kernel().clone(), model.tau_squared()));
        }
        self.model = Some(model);
        Ok(())
    }

    fn record(
        &mut self,
        round: usize,
        points: &DesignMatrix,
        observations: Vec<f64>,
        alpha_used: Option<usize>,
        fallback: bool,
    ) -> Result<()> {
        let metrics = match (&self.model, self.test_set) {
            (Some(model), Some(t)) => Some(t.score_model(model)?),
            _ => None,
        };
        self.rounds.push(RoundRecord {
            round,
            points: points.to_rows(),
            observations,
            model: self.model.as_ref().map(|m| m.summary()),
            rmse: metrics.map(|r| r.rmse),
            mae: metrics.map(|r| r.mae),
            alpha_used,
            fallback,
        });
        Ok(())
    }

    fn finish(&mut self, stop_reason: Option<StopReason>) -> Result<CampaignResult> {
        let design = self
            .design
            .clone()
            .ok_or_else(|| Error::InvalidArgument("campaign produced no design".into()))?;
        // Observation-free runs without a test set fit only once, here.
        if stop_reason.is_some() && self.model.as_ref().map(|m| m.design().n()) != Some(design.n())
        {
            let round = self.rounds.len();
            self.refit(round)?;
        }
        let final_metrics = match (&self.model, self.test_set) {
            (Some(model), Some(t)) if model.design().n() == design.n() => {
                Some(t.score_model(model)?)
            }
            _ => None,
        };
        Ok(CampaignResult {
            config: self.config.clone(),
            rounds: self.rounds.clone(),
            final_design: design,
            final_observations: self.observations.clone(),
            final_model: self.model.as_ref().map(|m| m.summary()),
            final_metrics,
            evaluations: self.observer.evaluations(),
            stop_reason,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(criterion: CriterionSpec, b: usize, rounds: usize) -> CampaignConfig {
        CampaignConfig {
            objective: TestFunction::Branin,
            n0: 6,
            criterion,
            batch: ClusterParams {
                b,
                ..ClusterParams::default()
            },
            rounds,
            candidate_grid: CandidateGrid {
                size: 200,
                budget: 200,
                ..CandidateGrid::default()
            },
            seed: 11,
            test_matrix_size: 200,
            design_budget: 200,
            ..CampaignConfig::default()
        }
    }

    struct Counting;

    impl Objective for Counting {
        fn dim(&self) -> usize {
            2
        }
        fn evaluate(&self, x: &[f64]) -> Result<f64> {
            Ok(x[0] + 2.0 * x[1])
        }
    }

    #[test]
    fn observer_caches() {
        let f = Counting;
        let mut obs = Observer::new(&f);
        let pts = DesignMatrix::from_rows(&[[0.1, 0.2], [0.3, 0.4]]).unwrap();
        let a = obs.observe(&pts).unwrap();
        let b = obs.observe(&pts).unwrap();
        assert_eq!(a, b);
        assert_eq!(obs.evaluations(), 2);
    }

    #[test]
    fn observer_rejects_non_finite() {
        struct Bad;
        impl Objective for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn evaluate(&self, _: &[f64]) -> Result<f64> {
                Ok(f64::NAN)
            }
        }
        let mut obs = Observer::new(&Bad);
        let pts = DesignMatrix::from_rows(&[[0.5]]).unwrap();
        match obs.observe(&pts) {
            Err(Error::Objective { point, .. }) => assert_eq!(point, vec![0.5]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn batch_campaign_accounting() {
        let cfg = small(CriterionSpec::Gradient, 2, 4);
        let res = run_campaign(&cfg).unwrap();
        assert_eq!(res.rounds.len(), 5);
        assert!(res.rounds[1..].iter().all(|r| r.points.len() == 2));
        assert_eq!(res.final_design.n(), 6 + 8);
        assert_eq!(res.evaluations, res.final_design.n());
        assert!(res.rounds.iter().all(|r| r.rmse.is_some()));
        assert_eq!(res.stop_reason, Some(StopReason::RoundCap));
    }

    #[test]
    fn point_cap_at_n0_keeps_initial_fit_only() {
        let mut cfg = small(CriterionSpec::MaxVariance, 1, 5);
        cfg.termination = Termination::PointCap { total: 6 };
        let res = run_campaign(&cfg).unwrap();
        assert_eq!(res.rounds.len(), 1);
        assert!(res.final_model.is_some());
        assert_eq!(res.stop_reason, Some(StopReason::PointCap));
    }

    #[test]
    fn point_cap_truncates_last_batch() {
        let mut cfg = small(CriterionSpec::MaxVariance, 3, 5);
        cfg.termination = Termination::PointCap { total: 10 };
        let res = run_campaign(&cfg).unwrap();
        assert_eq!(res.final_design.n(), 10);
        assert_eq!(res.rounds.last().unwrap().points.len(), 1);
    }

    #[test]
    fn md_without_test_set_fits_once() {
        let cfg = small(CriterionSpec::Md, 1, 3);
        let res = run_campaign_with_test_set(&cfg, &cfg.objective, None).unwrap();
        assert!(res.rounds.iter().all(|r| r.model.is_none()));
        assert!(res.final_model.is_some());
        assert!(res.final_metrics.is_none());
    }

    #[test]
    fn deterministic_replay() {
        let cfg = small(CriterionSpec::Ei0, 1, 3);
        let a = run_campaign(&cfg).unwrap();
        let b = run_campaign(&cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn objective_failure_keeps_partial_trace() {
        struct Flaky;
        impl Objective for Flaky {
            fn dim(&self) -> usize {
                2
            }
            fn evaluate(&self, x: &[f64]) -> Result<f64> {
                if x[0] > 0.95 {
                    Err(Error::InvalidArgument("simulator crashed".into()))
                } else {
                    Ok(x[1])
                }
            }
        }
        let cfg = small(CriterionSpec::MaxVariance, 1, 30);
        match run_campaign_with_test_set(&cfg, &Flaky, None) {
            Err(Error::Campaign {
                partial, source, ..
            }) => {
                assert!(matches!(*source, Error::Objective { .. }));
                assert!(!partial.rounds.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_json_round_trip_and_errors() {
        let cfg = small(CriterionSpec::VarianceBound, 2, 3);
        assert_eq!(CampaignConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let err = CampaignConfig::from_json(r#"{"n0": 5, "criterion": "gra", "rounds": 2}"#);
        assert!(err.unwrap_err().to_string().contains("objective"));
        let minimal = CampaignConfig::from_json(
            r#"{"objective": {"function": "f6", "m": 3}, "n0": 15, "criterion": "var", "rounds": 20}"#,
        )
        .unwrap();
        assert_eq!(minimal.dim(), 3);
        assert_eq!(minimal.batch.b, 1);
    }

    #[test]
    fn csv_has_one_line_per_point() {
        let cfg = small(CriterionSpec::Gradient, 1, 2);
        let res = run_campaign(&cfg).unwrap();
        let csv = res.to_csv();
        assert_eq!(csv.lines().count(), 1 + res.final_design.n());
        assert!(csv.starts_with("round,x1,x2,response,rmse,mae"));
    }
}
