//! RMSPE scoring and the multi-hierarchy simulation experiment.
//!
//! ```text
//! RMSPE = 100 * sqrt( mean_t ((actual_t - predicted_t) / actual_t)^2 )
//! ```
//!
//! Points with a zero actual are skipped by default (and counted); the
//! `epsilon:E` policy divides by `max(actual_t, E)` instead.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::forecast::{BackendConfig, BackendKind};
use crate::hierarchy::{aggregate, Level, LevelSeries};
use crate::pipeline::{run_forecast, Diagnostics, HierForecast, RunConfig};
use crate::reconcile::DEFAULT_SMOOTHING;
use crate::simulate::{sample_hierarchy_spec, simulate_selected, sub_seed, SimConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum ZeroPolicy {
    #[default]
    Skip,
    Epsilon(f64),
}

impl fmt::Display for ZeroPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZeroPolicy::Skip => f.write_str("skip"),
            ZeroPolicy::Epsilon(e) => write!(f, "epsilon:{e}"),
        }
    }
}

impl FromStr for ZeroPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "skip" {
            return Ok(ZeroPolicy::Skip);
        }
        let e = s
            .strip_prefix("epsilon:")
            .and_then(|e| e.parse::<f64>().ok())
            .ok_or_else(|| Error::param("zero-policy", format!("{s:?} is neither skip nor epsilon:<value>")))?;
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::param("zero-policy", format!("epsilon {e} must be finite and > 0")));
        }
        Ok(ZeroPolicy::Epsilon(e))
    }
}

impl Serialize for ZeroPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ZeroPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rmspe {
    /// Percent.
    pub value: f64,
    /// Points dropped because the actual was zero.
    pub excluded: usize,
}

pub fn rmspe(actual: &[f64], predicted: &[f64], policy: ZeroPolicy) -> Result<Rmspe> {
    if actual.len() != predicted.len() {
        return Err(Error::data_anon(format!(
            "{} actuals vs {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::data_anon("nothing to score"));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for (&a, &p) in actual.iter().zip(predicted) {
        let denom = match policy {
            ZeroPolicy::Skip if a == 0.0 => {
                excluded += 1;
                continue;
            }
            ZeroPolicy::Skip => a,
            ZeroPolicy::Epsilon(e) => a.max(e),
        };
        sum += ((a - p) / denom).powi(2);
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedScore { excluded });
    }
    Ok(Rmspe {
        value: 100.0 * (sum / used as f64).sqrt(),
        excluded,
    })
}

/// Quantile with linear interpolation between order statistics (`sorted` ascending).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Summary {
    pub fn from_scores(scores: &[f64]) -> Option<Summary> {
        if scores.is_empty() {
            return None;
        }
        let mut s = scores.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Summary {
            count: s.len(),
            min: s[0],
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
            max: s[s.len() - 1],
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }

    /// Outside `[q1 - 1.5 IQR, q3 + 1.5 IQR]`.
    pub fn is_outlier(&self, v: f64) -> bool {
        v > self.q3 + 1.5 * self.iqr() || v < self.q1 - 1.5 * self.iqr()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    /// Experiment run the node belongs to, if any.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub run: Option<usize>,
    pub node: String,
    pub rmspe: f64,
    pub excluded: usize,
}

impl NodeScore {
    pub fn label(&self) -> String {
        match self.run {
            Some(r) => format!("run{r:03}/{}", self.node),
            None => self.node.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScores {
    pub level: Level,
    pub nodes: Vec<NodeScore>,
    pub summary: Option<Summary>,
    pub outliers: Vec<NodeScore>,
    /// Points skipped for zero actuals across all nodes.
    pub skipped_points: usize,
    /// Nodes with no scorable point.
    pub unscored: Vec<String>,
}

impl LevelScores {
    pub fn new(level: Level) -> Self {
        Self {
            level,
            nodes: Vec::new(),
            summary: None,
            outliers: Vec::new(),
            skipped_points: 0,
            unscored: Vec::new(),
        }
    }

    /// Score one node, recording it as unscored if every point was skipped.
    pub fn push(&mut self, run: Option<usize>, node: &str, actual: &[f64], predicted: &[f64], policy: ZeroPolicy) -> Result<()> {
        match rmspe(actual, predicted, policy) {
            Ok(r) => {
                self.skipped_points += r.excluded;
                self.nodes.push(NodeScore {
                    run,
                    node: node.to_string(),
                    rmspe: r.value,
                    excluded: r.excluded,
                });
                Ok(())
            }
            Err(Error::UndefinedScore { excluded }) => {
                self.skipped_points += excluded;
                let ns = NodeScore {
                    run,
                    node: node.to_string(),
                    rmspe: f64::NAN,
                    excluded,
                };
                self.unscored.push(ns.label());
                Ok(())
            }
            Err(e) => Err(e.with_id(node)),
        }
    }

    /// Compute quartiles and outliers from the stored node scores.
    pub fn finish(&mut self) {
        let scores: Vec<f64> = self.nodes.iter().map(|n| n.rmspe).collect();
        self.summary = Summary::from_scores(&scores);
        self.outliers = match &self.summary {
            Some(s) => self.nodes.iter().filter(|n| s.is_outlier(n.rmspe)).cloned().collect(),
            None => Vec::new(),
        };
    }

    pub fn median(&self) -> Option<f64> {
        self.summary.as_ref().map(|s| s.median)
    }
}

/// Score every node of a hierarchical forecast against actuals over the horizon.
pub fn evaluate(forecast: &HierForecast, actual: &LevelSeries, policy: ZeroPolicy) -> Result<Vec<LevelScores>> {
    evaluate_run(forecast, actual, policy, None)
}

fn evaluate_run(forecast: &HierForecast, actual: &LevelSeries, policy: ZeroPolicy, run: Option<usize>) -> Result<Vec<LevelScores>> {
    if actual.len() != forecast.horizon() {
        return Err(Error::data_anon(format!(
            "forecast horizon {} but {} actual points",
            forecast.horizon(),
            actual.len()
        )));
    }
    let mut levels: Vec<LevelScores> = Level::ALL.iter().map(|&l| LevelScores::new(l)).collect();
    let nodes = std::iter::once((Level::Top, crate::hierarchy::TOP_ID, &forecast.top))
        .chain(forecast.mid.iter().map(|(id, f)| (Level::Mid, id.as_str(), f)))
        .chain(forecast.bottom.iter().map(|(id, f)| (Level::Bottom, id.as_str(), f)));
    for (level, id, f) in nodes {
        let truth = actual
            .node(level, id)
            .ok_or_else(|| Error::data(id, format!("no actual {level} series")))?;
        levels[level as usize].push(run, id, truth, &f.values, policy)?;
    }
    for l in &mut levels {
        l.finish();
    }
    Ok(levels)
}

/// Settings of a simulation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub backends: Vec<BackendConfig>,
    /// Seed of the shared variable pool; per-run seeds derive from it unless given.
    pub seed: u64,
    pub run_seeds: Option<Vec<u64>>,
    pub simulation: SimConfig,
    pub train_length: usize,
    pub horizon: usize,
    pub smoothing: f64,
    pub zero_policy: ZeroPolicy,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            runs: 20,
            backends: vec![BackendConfig::new(BackendKind::Ar)],
            seed: 0,
            run_seeds: None,
            simulation: SimConfig::default(),
            train_length: 970,
            horizon: 30,
            smoothing: DEFAULT_SMOOTHING,
            zero_policy: ZeroPolicy::Skip,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::param("runs", "must be >= 1"));
        }
        if self.backends.is_empty() {
            return Err(Error::param("backends", "at least one backend is required"));
        }
        if let Some(seeds) = &self.run_seeds {
            if seeds.len() != self.runs {
                return Err(Error::param(
                    "run_seeds",
                    format!("{} seeds for {} runs", seeds.len(), self.runs),
                ));
            }
        }
        self.simulation.validate()?;
        self.run_config(self.backends[0]).validate_for(self.simulation.length)
    }

    pub fn seed_for_run(&self, run: usize) -> u64 {
        match &self.run_seeds {
            Some(s) => s[run],
            None => sub_seed(self.seed, run as u64),
        }
    }

    fn run_config(&self, backend: BackendConfig) -> RunConfig {
        RunConfig {
            train_length: self.train_length,
            horizon: self.horizon,
            backend,
            smoothing: self.smoothing,
            seed: self.seed,
            external: None,
            simulation: self.simulation.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRun {
    pub backend: String,
    pub diagnostics: Option<Diagnostics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub mid_child_counts: Vec<usize>,
    pub selected_ids: Vec<String>,
    pub backends: Vec<BackendRun>,
    /// Set when the run failed before any backend ran.
    pub error: Option<String>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some() || self.backends.iter().any(|b| b.error.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendScores {
    pub backend: String,
    pub levels: Vec<LevelScores>,
}

impl BackendScores {
    pub fn level(&self, level: Level) -> &LevelScores {
        self.levels.iter().find(|l| l.level == level).expect("all levels present")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub failed_runs: usize,
    pub scores: Vec<BackendScores>,
}

impl ExperimentReport {
    pub fn backend(&self, name: &str) -> Option<&BackendScores> {
        self.scores.iter().find(|b| b.backend == name)
    }

    /// `(backend, level, node, rmspe)` rows for plotting.
    pub fn score_rows(&self) -> impl Iterator<Item = (&str, Level, String, f64)> {
        self.scores.iter().flat_map(|b| {
            b.levels
                .iter()
                .flat_map(move |l| l.nodes.iter().map(move |n| (b.backend.as_str(), l.level, n.label(), n.rmspe)))
        })
    }
}

struct RunOutcome {
    record: RunRecord,
    scores: Vec<Option<Vec<LevelScores>>>,
}

fn execute_run(config: &ExperimentConfig, run: usize) -> RunOutcome {
    let seed = config.seed_for_run(run);
    let mut record = RunRecord {
        run,
        seed,
        mid_child_counts: Vec::new(),
        selected_ids: Vec::new(),
        backends: Vec::new(),
        error: None,
    };
    let prepared = (|| -> Result<_> {
        let spec = sample_hierarchy_spec(config.simulation.n_vars, seed)?;
        let hierarchy = spec.to_hierarchy()?;
        let frame = simulate_selected(&config.simulation, config.seed, &spec.selected_indices()?)?;
        let levels = aggregate(&hierarchy, &frame)?;
        let holdout = levels.slice(config.train_length..config.train_length + config.horizon)?;
        Ok((spec, hierarchy, levels, holdout))
    })();
    let (spec, hierarchy, levels, holdout) = match prepared {
        Ok(p) => p,
        Err(e) => {
            log::warn!("run {run} (seed {seed}) failed: {e}");
            record.error = Some(e.to_string());
            return RunOutcome {
                record,
                scores: vec![None; config.backends.len()],
            };
        }
    };
    record.mid_child_counts = spec.mid_child_counts;
    record.selected_ids = spec.selected_ids;

    let mut scores = Vec::with_capacity(config.backends.len());
    for backend in &config.backends {
        let result = run_forecast(&hierarchy, &levels, &config.run_config(*backend))
            .and_then(|f| evaluate_run(&f, &holdout, config.zero_policy, Some(run)).map(|s| (f, s)));
        match result {
            Ok((f, s)) => {
                record.backends.push(BackendRun {
                    backend: backend.kind.to_string(),
                    diagnostics: Some(f.diagnostics),
                    error: None,
                });
                scores.push(Some(s));
            }
            Err(e) => {
                log::warn!("run {run} backend {}: {e}", backend.kind);
                record.backends.push(BackendRun {
                    backend: backend.kind.to_string(),
                    diagnostics: None,
                    error: Some(e.to_string()),
                });
                scores.push(None);
            }
        }
    }
    RunOutcome { record, scores }
}

/// Simulate, forecast and score `config.runs` hierarchies.
///
/// Every run samples a hierarchy from one shared pool of simulated variables.
/// Runs execute on the current rayon pool; output order and content do not
/// depend on scheduling.
pub fn experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let outcomes: Vec<RunOutcome> = (0..config.runs).into_par_iter().map(|r| execute_run(config, r)).collect();

    let mut scores: Vec<BackendScores> = config
        .backends
        .iter()
        .map(|b| BackendScores {
            backend: b.kind.to_string(),
            levels: Level::ALL.iter().map(|&l| LevelScores::new(l)).collect(),
        })
        .collect();
    let mut runs = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        for (agg, per_run) in scores.iter_mut().zip(outcome.scores) {
            let Some(levels) = per_run else { continue };
            for (dst, src) in agg.levels.iter_mut().zip(levels) {
                dst.nodes.extend(src.nodes);
                dst.skipped_points += src.skipped_points;
                dst.unscored.extend(src.unscored);
            }
        }
        runs.push(outcome.record);
    }
    for b in &mut scores {
        for l in &mut b.levels {
            l.finish();
        }
    }
    let failed_runs = runs.iter().filter(|r| r.failed()).count();
    Ok(ExperimentReport {
        config: config.clone(),
        runs,
        failed_runs,
        scores,
    })
}
