//! Top-down forecasting of three-level count hierarchies.
//!
//! The top series is forecast directly. Lower levels are forecast as odds
//! (each node's value over the sum of its siblings), and every parent
//! forecast is split among its children by solving the linear system those
//! odds define. See [`reconcile`] for the algebra and [`pipeline`] for the
//! end-to-end flow.

pub mod cli;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod hierarchy;
pub mod io;
pub mod pipeline;
pub mod reconcile;
pub mod simulate;

pub use error::{Error, Result};
pub use eval::{evaluate, experiment, rmspe, ExperimentConfig, ExperimentReport, LevelScores, ZeroPolicy};
pub use forecast::{ar_fit, forecast, select_order, BackendConfig, BackendKind, ForecastVector, Forecaster};
pub use hierarchy::{aggregate, validate, Hierarchy, Level, LevelSeries, MidNode, SeriesFrame};
pub use pipeline::{run_forecast, run_with_external, HierForecast, RunConfig};
pub use reconcile::{build_system, compute_odds, disaggregate, repair_and_rescale, solve_system, OddsVector};
pub use simulate::{inarma_generate, sample_hierarchy_spec, simulate_dataset, InarmaParams, SimConfig};
