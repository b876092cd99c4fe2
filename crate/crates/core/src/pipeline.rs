//! Top-down forecasting of a whole hierarchy.
//!
//! 1. The top series is forecast directly.
//! 2. Each mid node's odds against its siblings are forecast, and for every
//!    step the top forecast is split among the mids with those odds.
//! 3. Inside each mid, the bottoms' odds are forecast and the reconciled mid
//!    forecast is split among them the same way.
//!
//! Parents are always split from their reconciled value, so children add up
//! to their parent at every step.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{BackendConfig, ExternalForecasts, ForecastVector, Forecaster};
use crate::hierarchy::{self, Hierarchy, Level, LevelSeries, SeriesFrame, ValidationReport, TOP_ID};
use crate::reconcile::{self, DEFAULT_SMOOTHING};
use crate::simulate::SimConfig;

/// Tolerance for the sum identities of reconciled forecasts.
pub const FORECAST_SUM_TOLERANCE: f64 = 1e-6;

/// Forecaster key of a node's odds series.
pub fn odds_key(node: &str) -> String {
    format!("odds:{node}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train_length: usize,
    pub horizon: usize,
    pub backend: BackendConfig,
    /// Smoothing constant added to every sibling when computing odds.
    pub smoothing: f64,
    pub seed: u64,
    pub external: Option<PathBuf>,
    /// Used by the `simulate` and `experiment` commands.
    pub simulation: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_length: 970,
            horizon: 30,
            backend: BackendConfig::default(),
            smoothing: DEFAULT_SMOOTHING,
            seed: 0,
            external: None,
            simulation: SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be >= 1"));
        }
        if self.train_length == 0 {
            return Err(Error::param("train_length", "must be >= 1"));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::param("smoothing", format!("{} must be finite and >= 0", self.smoothing)));
        }
        self.backend.validate()
    }

    /// Check the train/horizon split against a series of `len` points.
    pub fn validate_for(&self, len: usize) -> Result<()> {
        self.validate()?;
        if self.train_length + self.horizon > len {
            return Err(Error::param(
                "train_length",
                format!(
                    "train_length {} + horizon {} exceeds the {len} available points",
                    self.train_length, self.horizon
                ),
            ));
        }
        Ok(())
    }
}

/// Counters describing what reconciliation had to repair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub smoothing: f64,
    /// (parent, step) groups whose raw solution held a negative entry.
    pub repaired_groups: usize,
    /// Negative entries set to zero across all groups.
    pub repaired_negatives: usize,
    /// Largest number of negatives seen in a single group.
    pub max_negatives_in_group: usize,
    /// Groups with no positive entry left, split evenly.
    pub uniform_splits: usize,
    /// Negative forecast odds clamped to zero.
    pub clamped_odds: usize,
    /// Negative parent totals clamped to zero.
    pub clamped_totals: usize,
    /// Training odds cells recomputed with the fallback smoothing.
    pub undefined_odds_fallbacks: usize,
    /// Series whose backend could not fit the requested model.
    pub backend_fallbacks: usize,
    /// Keys served from external forecasts.
    pub external_keys: Vec<String>,
}

impl Diagnostics {
    fn record(&mut self, repair: &reconcile::Repair) {
        if repair.negatives > 0 {
            self.repaired_groups += 1;
            self.repaired_negatives += repair.negatives;
            self.max_negatives_in_group = self.max_negatives_in_group.max(repair.negatives);
        }
        if repair.uniform {
            self.uniform_splits += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierForecast {
    pub top: ForecastVector,
    pub mid: Vec<(String, ForecastVector)>,
    pub bottom: Vec<(String, ForecastVector)>,
    pub diagnostics: Diagnostics,
}

impl HierForecast {
    pub fn horizon(&self) -> usize {
        self.top.horizon()
    }

    /// Forecasts as level series, ready for [`hierarchy::validate`].
    pub fn to_levels(&self) -> Result<LevelSeries> {
        let bottom = SeriesFrame::new(self.bottom.iter().map(|(id, f)| (id.clone(), f.values.clone())).collect())?;
        LevelSeries::from_parts(
            self.top.values.clone(),
            self.mid.iter().map(|(id, f)| (id.clone(), f.values.clone())).collect(),
            bottom,
        )
    }

    pub fn check_consistency(&self, hierarchy: &Hierarchy) -> Result<ValidationReport> {
        Ok(hierarchy::validate_with_tolerance(
            hierarchy,
            &self.to_levels()?,
            FORECAST_SUM_TOLERANCE,
        ))
    }

    /// `(level, id, step, value)` rows, steps starting at 1.
    pub fn rows(&self) -> impl Iterator<Item = (Level, &str, usize, f64)> {
        let top = std::iter::once((Level::Top, TOP_ID, &self.top));
        let mid = self.mid.iter().map(|(id, f)| (Level::Mid, id.as_str(), f));
        let bottom = self.bottom.iter().map(|(id, f)| (Level::Bottom, id.as_str(), f));
        top.chain(mid)
            .chain(bottom)
            .flat_map(|(level, id, f)| f.values.iter().enumerate().map(move |(h, &v)| (level, id, h + 1, v)))
    }
}

/// Uses external vectors where supplied and the inner forecaster otherwise.
pub struct WithExternal<'a, F: ?Sized> {
    pub inner: &'a F,
    pub external: &'a ExternalForecasts,
}

impl<F: Forecaster + ?Sized> Forecaster for WithExternal<'_, F> {
    fn forecast(&self, key: &str, history: &[f64], horizon: usize) -> Result<ForecastVector> {
        let origin = history.len().saturating_sub(1);
        match self.external.get(key, horizon, origin)? {
            Some(f) => Ok(f),
            None => self.inner.forecast(key, history, horizon),
        }
    }
}

/// Forecast with the configured built-in backend.
pub fn run_forecast(hierarchy: &Hierarchy, levels: &LevelSeries, config: &RunConfig) -> Result<HierForecast> {
    run_with_forecaster(hierarchy, levels, config, &config.backend)
}

/// Forecast with external vectors replacing backend output where provided.
pub fn run_with_external(
    hierarchy: &Hierarchy,
    levels: &LevelSeries,
    config: &RunConfig,
    external: &ExternalForecasts,
) -> Result<HierForecast> {
    let known = known_keys(hierarchy);
    if let Some(id) = external.ids().find(|id| !known.iter().any(|k| k == id)) {
        return Err(Error::data(id, "external forecast id matches no series of the hierarchy"));
    }
    let forecaster = WithExternal {
        inner: &config.backend,
        external,
    };
    let mut out = run_with_forecaster(hierarchy, levels, config, &forecaster)?;
    out.diagnostics.external_keys = known.into_iter().filter(|k| external.contains(k)).collect();
    Ok(out)
}

/// Every key the pipeline may request: `TOP` and `odds:<node>` for nodes with siblings.
pub fn known_keys(hierarchy: &Hierarchy) -> Vec<String> {
    let mut keys = vec![TOP_ID.to_string()];
    if hierarchy.mids().len() > 1 {
        keys.extend(hierarchy.mids().iter().map(|m| odds_key(&m.id)));
    }
    for mid in hierarchy.mids() {
        if mid.children.len() > 1 {
            keys.extend(mid.children.iter().map(|c| odds_key(c)));
        }
    }
    keys
}

/// The pipeline with an arbitrary forecaster behind every series.
pub fn run_with_forecaster<F: Forecaster + ?Sized>(
    hierarchy: &Hierarchy,
    levels: &LevelSeries,
    config: &RunConfig,
    forecaster: &F,
) -> Result<HierForecast> {
    config.validate_for(levels.len())?;
    let report = hierarchy::validate(hierarchy, levels);
    if !report.is_consistent() {
        let detail = match (report.missing.first(), report.violations.first()) {
            (Some(id), _) => format!("series {id} is missing"),
            (None, Some(v)) => format!("{} {} breaks its sum at t={}", v.level, v.node, v.t),
            (None, None) => unreachable!(),
        };
        return Err(Error::Structure(format!("inconsistent level series: {detail}")));
    }

    let train = levels.slice(0..config.train_length)?;
    let horizon = config.horizon;
    let mut diag = Diagnostics {
        smoothing: config.smoothing,
        ..Diagnostics::default()
    };

    let mut top = forecaster.forecast(TOP_ID, train.top(), horizon)?;
    check_horizon(TOP_ID, &top, horizon)?;
    diag.backend_fallbacks += usize::from(top.fallback);
    for v in top.values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
            diag.clamped_totals += 1;
        }
    }

    let mid_series: Vec<(String, Vec<f64>)> = train.mids().map(|(id, v)| (id.to_string(), v.to_vec())).collect();
    let mid = split_group(&top, &mid_series, config, forecaster, &mut diag)?;

    let mut bottom = Vec::with_capacity(hierarchy.n_bottom());
    for (node, (_, parent)) in hierarchy.mids().iter().zip(&mid) {
        let children: Vec<(String, Vec<f64>)> = node
            .children
            .iter()
            .map(|c| (c.clone(), train.bottom().column(c).expect("validated").to_vec()))
            .collect();
        bottom.extend(split_group(parent, &children, config, forecaster, &mut diag)?);
    }

    Ok(HierForecast {
        top,
        mid,
        bottom,
        diagnostics: diag,
    })
}

fn check_horizon(key: &str, f: &ForecastVector, horizon: usize) -> Result<()> {
    if f.values.len() != horizon {
        return Err(Error::data(
            key,
            format!("forecast has {} steps but the horizon is {horizon}", f.values.len()),
        ));
    }
    if f.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::data(key, "forecast contains non-finite values"));
    }
    Ok(())
}

/// Split a reconciled parent forecast among `children` using their forecast odds.
fn split_group<F: Forecaster + ?Sized>(
    parent: &ForecastVector,
    children: &[(String, Vec<f64>)],
    config: &RunConfig,
    forecaster: &F,
    diag: &mut Diagnostics,
) -> Result<Vec<(String, ForecastVector)>> {
    let horizon = parent.values.len();
    if children.len() == 1 {
        return Ok(vec![(children[0].0.clone(), parent.clone())]);
    }

    let (odds_hist, undefined) = reconcile::odds_series_with_fallback(children, config.smoothing, DEFAULT_SMOOTHING)?;
    diag.undefined_odds_fallbacks += undefined;

    let mut odds_fc = Vec::with_capacity(children.len());
    for (id, hist) in &odds_hist {
        let key = odds_key(id);
        let mut f = forecaster.forecast(&key, hist, horizon)?;
        check_horizon(&key, &f, horizon)?;
        diag.backend_fallbacks += usize::from(f.fallback);
        for v in f.values.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
                diag.clamped_odds += 1;
            }
        }
        odds_fc.push(f);
    }

    let mut values = vec![Vec::with_capacity(horizon); children.len()];
    let mut odds = vec![0.0; children.len()];
    for step in 0..horizon {
        for (slot, f) in odds.iter_mut().zip(&odds_fc) {
            *slot = f.values[step];
        }
        let repair = reconcile::disaggregate_detailed(parent.values[step], &odds)?;
        diag.record(&repair);
        for (col, v) in values.iter_mut().zip(repair.values) {
            col.push(v);
        }
    }

    Ok(children
        .iter()
        .zip(values)
        .zip(odds_fc)
        .map(|(((id, _), values), f)| {
            (
                id.clone(),
                ForecastVector {
                    values,
                    origin: parent.origin,
                    backend: f.backend,
                    fallback: f.fallback,
                },
            )
        })
        .collect())
}
