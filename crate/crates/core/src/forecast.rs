//! Univariate forecasting backends.
//!
//! Four built-in backends share one contract: take a training series and a
//! horizon, return `horizon` finite values. `ar` differences the series `d`
//! times, fits an order-`p` autoregression with intercept by least squares
//! and iterates it forward. Orders are either fixed or picked by AIC.
//!
//! Forecasts from elsewhere (for example neural models) enter through
//! [`import_external_forecasts`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Naive,
    Mean,
    Drift,
    Ar,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Naive => "naive",
            BackendKind::Mean => "mean",
            BackendKind::Drift => "drift",
            BackendKind::Ar => "ar",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "naive" => Ok(BackendKind::Naive),
            "mean" => Ok(BackendKind::Mean),
            "drift" => Ok(BackendKind::Drift),
            "ar" => Ok(BackendKind::Ar),
            other => Err(Error::param("backend", format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderSelection {
    /// Use `(p_max, d_max)` as the order.
    Fixed,
    /// Pick `d` by a variance test and `p` by AIC.
    Aic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub p_max: usize,
    pub d_max: usize,
    pub selection: OrderSelection,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Ar,
            p_max: 5,
            d_max: 1,
            selection: OrderSelection::Aic,
        }
    }
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// `ar` with a fixed order.
    pub fn ar_fixed(p: usize, d: usize) -> Self {
        Self {
            kind: BackendKind::Ar,
            p_max: p,
            d_max: d,
            selection: OrderSelection::Fixed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_max > 1 {
            return Err(Error::param("d_max", format!("{} not in {{0, 1}}", self.d_max)));
        }
        Ok(())
    }
}

/// Forecast of one series from one origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastVector {
    pub values: Vec<f64>,
    /// Index of the last training point.
    pub origin: usize,
    pub backend: String,
    /// Set when the requested model could not be fitted and a simpler one was used.
    #[serde(default)]
    pub fallback: bool,
}

impl ForecastVector {
    pub fn horizon(&self) -> usize {
        self.values.len()
    }
}

/// Mean computed as `x0 + mean(x - x0)`; exact for constant input.
pub fn stable_mean(xs: &[f64]) -> f64 {
    let x0 = xs[0];
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = stable_mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn difference(xs: &[f64]) -> Vec<f64> {
    xs.windows(2).map(|w| w[1] - w[0]).collect()
}

fn check_input(series: &[f64], horizon: usize, min_len: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::param("horizon", "must be >= 1"));
    }
    if series.len() < min_len {
        return Err(Error::data_anon(format!(
            "series has {} points, at least {min_len} required",
            series.len()
        )));
    }
    if let Some(t) = series.iter().position(|x| !x.is_finite()) {
        return Err(Error::data_anon(format!("non-finite value at t={t}")));
    }
    Ok(())
}

/// Forecast `horizon` steps past the end of `series`.
pub fn forecast(series: &[f64], horizon: usize, config: &BackendConfig) -> Result<ForecastVector> {
    config.validate()?;
    let min_len = if config.kind == BackendKind::Ar { 3 } else { 1 };
    check_input(series, horizon, min_len)?;
    let n = series.len();
    let origin = n - 1;
    let last = series[origin];

    let (values, backend, fallback) = match config.kind {
        BackendKind::Naive => (vec![last; horizon], "naive".to_string(), false),
        BackendKind::Mean => (vec![stable_mean(series); horizon], "mean".to_string(), false),
        BackendKind::Drift => {
            let slope = if n > 1 { (last - series[0]) / (n - 1) as f64 } else { 0.0 };
            let v = (1..=horizon).map(|h| last + slope * h as f64).collect();
            (v, "drift".to_string(), false)
        }
        BackendKind::Ar => {
            let (p, d) = match config.selection {
                OrderSelection::Fixed => (config.p_max, config.d_max),
                OrderSelection::Aic => select_order(series, config)?,
            };
            let fit = ar_fit(series, p, d)?;
            let v = fit.predict(series, horizon);
            (v, format!("ar({p},{d})"), fit.fallback)
        }
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::data_anon(format!("{backend} produced a non-finite forecast")));
    }
    Ok(ForecastVector {
        values,
        origin,
        backend,
        fallback,
    })
}

/// Least-squares autoregression on a differenced series.
#[derive(Debug, Clone, PartialEq)]
pub struct ArFit {
    pub p: usize,
    pub d: usize,
    /// `phi_1..phi_p`, lag 1 first.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Mean squared one-step residual.
    pub sigma2: f64,
    /// `n ln(sigma2) + 2 (p + 1)` over the `n` fitted points.
    pub aic: f64,
    /// Design was singular; coefficients are zero and the intercept is the mean.
    pub fallback: bool,
}

impl ArFit {
    /// Iterate the fitted recursion `horizon` steps past the end of `series`
    /// (the same undifferenced series it was fitted on), then undo differencing.
    pub fn predict(&self, series: &[f64], horizon: usize) -> Vec<f64> {
        // last value of each differencing stage, stage 0 = levels
        let mut tails = Vec::with_capacity(self.d);
        let mut z = series.to_vec();
        for _ in 0..self.d {
            tails.push(*z.last().expect("non-empty"));
            z = difference(&z);
        }
        let mut hist = z;
        let start = hist.len();
        for _ in 0..horizon {
            let t = hist.len();
            let mut next = self.intercept;
            for (k, phi) in self.coefficients.iter().enumerate() {
                next += phi * hist[t - 1 - k];
            }
            hist.push(next);
        }
        let mut out = hist.split_off(start);
        for &tail in tails.iter().rev() {
            let mut acc = tail;
            for v in out.iter_mut() {
                acc += *v;
                *v = acc;
            }
        }
        out
    }
}

/// Fit `AR(p)` with intercept to the `d`-times differenced `series`.
pub fn ar_fit(series: &[f64], p: usize, d: usize) -> Result<ArFit> {
    if let Some(t) = series.iter().position(|x| !x.is_finite()) {
        return Err(Error::data_anon(format!("non-finite value at t={t}")));
    }
    let mut z = series.to_vec();
    for _ in 0..d {
        z = difference(&z);
    }
    if z.len() <= p + 1 {
        return Err(Error::data_anon(format!(
            "{} points after differencing {d} times; AR({p}) needs more than {}",
            z.len(),
            p + 1
        )));
    }
    Ok(fit_window(&z, p, d, p))
}

/// Least squares on rows `start..z.len()` (requires `start >= p`).
fn fit_window(z: &[f64], p: usize, d: usize, start: usize) -> ArFit {
    let targets = &z[start..];
    let n = targets.len();

    let solved = if p == 0 { None } else { solve_lagged(z, p, start) };
    let fallback = p > 0 && solved.is_none();
    let (coefficients, intercept) = match solved {
        Some(v) => v,
        None => (vec![0.0; p], stable_mean(targets)),
    };

    let mut rss = 0.0;
    for t in start..z.len() {
        let mut pred = intercept;
        for (k, phi) in coefficients.iter().enumerate() {
            pred += phi * z[t - 1 - k];
        }
        rss += (z[t] - pred).powi(2);
    }
    let sigma2 = rss / n as f64;
    let aic = n as f64 * sigma2.ln() + 2.0 * (p + 1) as f64;
    ArFit {
        p,
        d,
        coefficients,
        intercept,
        sigma2,
        aic,
        fallback,
    }
}

/// Centered normal equations for `z_t = c + sum_k phi_k z_{t-k}`; `None` when singular.
fn solve_lagged(z: &[f64], p: usize, start: usize) -> Option<(Vec<f64>, f64)> {
    let rows = start..z.len();
    let n = rows.len() as f64;
    let lag = |t: usize, k: usize| z[t - 1 - k];

    let y_mean = rows.clone().map(|t| z[t]).sum::<f64>() / n;
    let x_mean: Vec<f64> = (0..p).map(|k| rows.clone().map(|t| lag(t, k)).sum::<f64>() / n).collect();

    let mut a = vec![vec![0.0; p + 1]; p];
    for t in rows {
        let yc = z[t] - y_mean;
        for i in 0..p {
            let xi = lag(t, i) - x_mean[i];
            for j in i..p {
                a[i][j] += xi * (lag(t, j) - x_mean[j]);
            }
            a[i][p] += xi * yc;
        }
    }
    for i in 0..p {
        for j in 0..i {
            a[i][j] = a[j][i];
        }
    }
    let phi = gauss_solve(a)?;
    let intercept = y_mean - phi.iter().zip(&x_mean).map(|(f, m)| f * m).sum::<f64>();
    Some((phi, intercept))
}

/// Solve an augmented `p x (p+1)` system by elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let p = a.len();
    let scale = (0..p).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return None;
    }
    let tol = scale * 1e-12;
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= tol {
            return None;
        }
        a.swap(col, piv);
        for row in col + 1..p {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..=p {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| a[i][k] * x[k]).sum();
        x[i] = (a[i][p] - s) / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Choose `(p, d)`: difference once if that lowers the sample variance, then
/// minimise AIC over `p = 0..=p_max` on a common estimation window.
///
/// Ties go to the smaller `p`. `p_max` is capped so that at least two rows
/// remain after differencing and lagging.
pub fn select_order(series: &[f64], config: &BackendConfig) -> Result<(usize, usize)> {
    config.validate()?;
    check_input(series, 1, 3)?;
    let d = if config.d_max >= 1 && series.len() >= 3 {
        let diffed = difference(series);
        usize::from(sample_variance(&diffed) < sample_variance(series))
    } else {
        0
    };
    let z = if d == 1 { difference(series) } else { series.to_vec() };
    let p_cap = config.p_max.min(z.len().saturating_sub(2));

    let mut best = (0usize, f64::INFINITY);
    for p in 0..=p_cap {
        let fit = fit_window(&z, p, d, p_cap);
        if p == 0 || fit.aic < best.1 {
            best = (p, fit.aic);
        }
    }
    Ok((best.0, d))
}

/// Source of forecasts keyed by series key (`TOP`, `odds:<node>`).
pub trait Forecaster: Sync {
    fn forecast(&self, key: &str, history: &[f64], horizon: usize) -> Result<ForecastVector>;
}

impl Forecaster for BackendConfig {
    fn forecast(&self, key: &str, history: &[f64], horizon: usize) -> Result<ForecastVector> {
        forecast(history, horizon, self).map_err(|e| e.with_id(key))
    }
}

/// Forecasts read from an `id,step,value` CSV, `step` running `1..=h` per id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalForecasts {
    series: BTreeMap<String, Vec<f64>>,
}

impl ExternalForecasts {
    pub fn from_map(series: BTreeMap<String, Vec<f64>>) -> Self {
        Self { series }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.series.contains_key(id)
    }

    /// The vector for `id` checked against `horizon`; `Ok(None)` if absent.
    pub fn get(&self, id: &str, horizon: usize, origin: usize) -> Result<Option<ForecastVector>> {
        let Some(values) = self.series.get(id) else {
            return Ok(None);
        };
        if values.len() != horizon {
            return Err(Error::data(
                id,
                format!("external forecast has {} steps but the horizon is {horizon}", values.len()),
            ));
        }
        Ok(Some(ForecastVector {
            values: values.clone(),
            origin,
            backend: "external".into(),
            fallback: false,
        }))
    }

    /// Like [`get`](Self::get) but a missing id is an error naming it.
    pub fn require(&self, id: &str, horizon: usize, origin: usize) -> Result<ForecastVector> {
        self.get(id, horizon, origin)?
            .ok_or_else(|| Error::data(id, "no external forecast supplied"))
    }
}

/// Read an external forecast CSV (`id,step,value`).
pub fn import_external_forecasts(path: &Path) -> Result<ExternalForecasts> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_external_forecasts(file).map_err(|e| match e {
        Error::Format { reason, .. } => Error::Format {
            path: path.to_path_buf(),
            reason,
        },
        Error::Data { id, reason } => Error::Format {
            path: path.to_path_buf(),
            reason: match id {
                Some(id) => format!("[{id}] {reason}"),
                None => reason,
            },
        },
        other => other,
    })
}

pub fn parse_external_forecasts<R: Read>(reader: R) -> Result<ExternalForecasts> {
    let bad = |reason: String| Error::Format {
        path: "<external>".into(),
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column {name:?}")))
    };
    let (ci, cs, cv) = (col("id")?, col("step")?, col("value")?);

    let mut steps: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = line + 2;
        let id = rec.get(ci).unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(bad(format!("row {row}: empty id")));
        }
        let step: usize = rec
            .get(cs)
            .unwrap_or_default()
            .parse()
            .map_err(|_| Error::data(&id, format!("row {row}: step is not a positive integer")))?;
        let value: f64 = rec
            .get(cv)
            .unwrap_or_default()
            .parse()
            .map_err(|_| Error::data(&id, format!("row {row}: value is not a number")))?;
        if step == 0 {
            return Err(Error::data(&id, format!("row {row}: steps start at 1")));
        }
        if !value.is_finite() {
            return Err(Error::data(&id, format!("row {row}: non-finite value")));
        }
        if steps.entry(id.clone()).or_default().insert(step, value).is_some() {
            return Err(Error::data(&id, format!("row {row}: duplicate step {step}")));
        }
    }
    let mut series = BTreeMap::new();
    for (id, by_step) in steps {
        let h = by_step.len();
        if by_step.keys().next_back() != Some(&h) {
            return Err(Error::data(&id, format!("steps are not contiguous 1..={h}")));
        }
        series.insert(id, by_step.into_values().collect());
    }
    Ok(ExternalForecasts { series })
}
