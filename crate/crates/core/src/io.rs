//! On-disk formats.
//!
//! * series CSV: header `t,<id>,<id>,...`, one row per time step, `t = 0..T-1`
//! * hierarchy JSON: `{"mids": [{"id": "...", "children": ["...", ...]}, ...]}`
//! * forecast CSV: `level,id,step,value`, steps from 1; held-out actuals use
//!   the same layout

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, Level, LevelSeries, SeriesFrame, TOP_ID};
use crate::pipeline::HierForecast;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Integral values print without a fractional part.
pub fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = open(path)?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| format_err(path, e.to_string()))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_hierarchy(path: &Path) -> Result<Hierarchy> {
    read_json(path)
}

pub fn read_series_frame(path: &Path) -> Result<SeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let headers = rdr.headers().map_err(|e| format_err(path, e.to_string()))?.clone();
    if headers.get(0) != Some("t") {
        return Err(format_err(path, "first column must be `t`"));
    }
    let ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if ids.is_empty() {
        return Err(format_err(path, "no series columns"));
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); ids.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
        let t: usize = rec[0]
            .parse()
            .map_err(|_| format_err(path, format!("row {}: t={:?} is not an integer", row + 2, &rec[0])))?;
        if t != row {
            return Err(format_err(path, format!("row {}: expected t={row}, found t={t}", row + 2)));
        }
        for (j, col) in cols.iter_mut().enumerate() {
            let v: f64 = rec[j + 1].parse().map_err(|_| {
                format_err(path, format!("row {}: {}={:?} is not a number", row + 2, ids[j], &rec[j + 1]))
            })?;
            if !v.is_finite() {
                return Err(format_err(path, format!("row {}: {} is not finite", row + 2, ids[j])));
            }
            col.push(v);
        }
    }
    SeriesFrame::new(ids.into_iter().zip(cols).collect()).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_series_frame(path: &Path, frame: &SeriesFrame) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let csv_err = |e: csv::Error| format_err(path, e.to_string());
    w.write_record(std::iter::once("t").chain(frame.ids().iter().map(String::as_str)))
        .map_err(csv_err)?;
    let cols: Vec<&[f64]> = frame.iter().map(|(_, c)| c).collect();
    let mut row = Vec::with_capacity(cols.len() + 1);
    for t in 0..frame.len() {
        row.clear();
        row.push(t.to_string());
        row.extend(cols.iter().map(|c| format_value(c[t])));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// One `(level, id)` series of a long-format table.
pub type LongTable = BTreeMap<(Level, String), Vec<f64>>;

fn write_long_rows<'a>(path: &Path, rows: impl Iterator<Item = (Level, &'a str, usize, f64)>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let csv_err = |e: csv::Error| format_err(path, e.to_string());
    w.write_record(["level", "id", "step", "value"]).map_err(csv_err)?;
    for (level, id, step, value) in rows {
        w.write_record([level.as_str(), id, &step.to_string(), &format_value(value)])
            .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_forecast_csv(path: &Path, forecast: &HierForecast) -> Result<()> {
    write_long_rows(path, forecast.rows())
}

/// Level series in long format; `step` counts from 1.
pub fn write_levels_csv(path: &Path, levels: &LevelSeries) -> Result<()> {
    let top = std::iter::once((Level::Top, TOP_ID, levels.top()));
    let mid = levels.mids().map(|(id, v)| (Level::Mid, id, v));
    let bottom = levels.bottom().iter().map(|(id, v)| (Level::Bottom, id, v));
    let rows = top
        .chain(mid)
        .chain(bottom)
        .flat_map(|(level, id, v)| v.iter().enumerate().map(move |(h, &x)| (level, id, h + 1, x)));
    write_long_rows(path, rows)
}

pub fn read_long_csv(path: &Path) -> Result<LongTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let headers = rdr.headers().map_err(|e| format_err(path, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format_err(path, format!("missing column {name:?}")))
    };
    let (cl, ci, cs, cv) = (col("level")?, col("id")?, col("step")?, col("value")?);
    let mut steps: BTreeMap<(Level, String), BTreeMap<usize, f64>> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
        let line = row + 2;
        let level = Level::parse(&rec[cl])
            .ok_or_else(|| format_err(path, format!("row {line}: unknown level {:?}", &rec[cl])))?;
        let id = rec[ci].to_string();
        let step: usize = rec[cs]
            .parse()
            .ok()
            .filter(|&s| s >= 1)
            .ok_or_else(|| format_err(path, format!("row {line}: [{id}] step must be a positive integer")))?;
        let value: f64 = rec[cv]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| format_err(path, format!("row {line}: [{id}] value is not a finite number")))?;
        if steps.entry((level, id.clone())).or_default().insert(step, value).is_some() {
            return Err(format_err(path, format!("row {line}: [{id}] duplicate step {step}")));
        }
    }
    let mut out = LongTable::new();
    for (key, by_step) in steps {
        let h = by_step.len();
        if by_step.keys().next_back() != Some(&h) {
            return Err(format_err(path, format!("[{}] steps are not contiguous 1..={h}", key.1)));
        }
        out.insert(key, by_step.into_values().collect());
    }
    Ok(out)
}
