//! Three-level hierarchy (top / mid / bottom) and level-consistent series.
//!
//! A [`Hierarchy`] owns an ordered list of mid nodes, each holding a disjoint,
//! non-empty set of bottom series ids. The top node is implicit and always
//! named [`TOP_ID`]. [`aggregate`] lifts a bottom [`SeriesFrame`] into
//! [`LevelSeries`] where
//!
//! ```text
//! mid_i[t] = sum_{j in children(i)} bottom_j[t]
//! top[t]   = sum_i mid_i[t]
//! ```
//!
//! and [`validate`] reports every point where either identity is broken.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved id of the implicit root node.
pub const TOP_ID: &str = "TOP";

/// Absolute tolerance for the summation identities.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Top,
    Mid,
    Bottom,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Top, Level::Mid, Level::Bottom];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Top => "top",
            Level::Mid => "mid",
            Level::Bottom => "bottom",
        }
    }

    pub fn parse(s: &str) -> Option<Level> {
        match s.trim() {
            "top" => Some(Level::Top),
            "mid" => Some(Level::Mid),
            "bottom" => Some(Level::Bottom),
            _ => None,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MidNode {
    pub id: String,
    pub children: Vec<String>,
}

impl MidNode {
    pub fn new(id: impl Into<String>, children: Vec<String>) -> Self {
        Self {
            id: id.into(),
            children,
        }
    }
}

/// A validated top/mid/bottom tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawHierarchy", into = "RawHierarchy")]
pub struct Hierarchy {
    mids: Vec<MidNode>,
}

#[derive(Serialize, Deserialize)]
struct RawHierarchy {
    mids: Vec<MidNode>,
}

impl TryFrom<RawHierarchy> for Hierarchy {
    type Error = Error;

    fn try_from(raw: RawHierarchy) -> Result<Self> {
        Hierarchy::new(raw.mids)
    }
}

impl From<Hierarchy> for RawHierarchy {
    fn from(h: Hierarchy) -> Self {
        RawHierarchy { mids: h.mids }
    }
}

impl Hierarchy {
    pub fn new(mids: Vec<MidNode>) -> Result<Self> {
        if mids.is_empty() {
            return Err(Error::Structure("hierarchy has no mid nodes".into()));
        }
        let mut seen: HashSet<&str> = HashSet::new();
        for mid in &mids {
            if mid.children.is_empty() {
                return Err(Error::Structure(format!("mid node {} has no children", mid.id)));
            }
            for id in std::iter::once(&mid.id).chain(mid.children.iter()) {
                if id == TOP_ID {
                    return Err(Error::Structure(format!("node id {TOP_ID} is reserved")));
                }
                if id.is_empty() {
                    return Err(Error::Structure("empty node id".into()));
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::Structure(format!("duplicate node id {id}")));
                }
            }
        }
        Ok(Self { mids })
    }

    pub fn mids(&self) -> &[MidNode] {
        &self.mids
    }

    pub fn mid(&self, id: &str) -> Option<&MidNode> {
        self.mids.iter().find(|m| m.id == id)
    }

    /// Bottom ids in mid order, then child order.
    pub fn bottom_ids(&self) -> impl Iterator<Item = &str> {
        self.mids
            .iter()
            .flat_map(|m| m.children.iter().map(String::as_str))
    }

    pub fn n_bottom(&self) -> usize {
        self.mids.iter().map(|m| m.children.len()).sum()
    }

    /// Same tree with mid nodes listed in a different order.
    pub fn with_mid_order(&self, order: &[usize]) -> Result<Self> {
        let mids = order
            .iter()
            .map(|&i| {
                self.mids
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Structure(format!("mid index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Hierarchy::new(mids)
    }
}

/// Time-aligned columns of values, one per series id. Rows are indexed `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    ids: Vec<String>,
    columns: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
    len: usize,
}

impl SeriesFrame {
    pub fn new(columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Structure("series frame has no columns".into()));
        }
        let len = columns[0].1.len();
        if len == 0 {
            return Err(Error::Structure("series frame has no rows".into()));
        }
        let mut ids = Vec::with_capacity(columns.len());
        let mut values = Vec::with_capacity(columns.len());
        let mut index = HashMap::with_capacity(columns.len());
        for (id, col) in columns {
            if col.len() != len {
                return Err(Error::Structure(format!(
                    "column {id} has length {} but the frame has {len} rows",
                    col.len()
                )));
            }
            if index.insert(id.clone(), ids.len()).is_some() {
                return Err(Error::Structure(format!("duplicate column {id}")));
            }
            ids.push(id);
            values.push(col);
        }
        Ok(Self {
            ids,
            columns: values,
            index,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_series(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn column(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.columns[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.columns.iter().map(Vec::as_slice))
    }

    /// Rows `range` of every column.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len {
            return Err(Error::Structure(format!(
                "row range {}..{} invalid for a frame of {} rows",
                range.start, range.end, self.len
            )));
        }
        SeriesFrame::new(
            self.iter()
                .map(|(id, col)| (id.to_string(), col[range.clone()].to_vec()))
                .collect(),
        )
    }

    /// Frame restricted to `ids`, in the given order.
    pub fn select<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let cols = ids
            .into_iter()
            .map(|id| {
                self.column(id)
                    .map(|c| (id.to_string(), c.to_vec()))
                    .ok_or_else(|| Error::Structure(format!("missing column {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        SeriesFrame::new(cols)
    }
}

/// Top, mid and bottom series of one hierarchy over a common time index.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSeries {
    top: Vec<f64>,
    mid: Vec<(String, Vec<f64>)>,
    bottom: SeriesFrame,
}

impl LevelSeries {
    /// Assemble from parts without checking the sum identities; use [`validate`] for that.
    pub fn from_parts(top: Vec<f64>, mid: Vec<(String, Vec<f64>)>, bottom: SeriesFrame) -> Result<Self> {
        let len = bottom.len();
        if top.len() != len {
            return Err(Error::Structure(format!(
                "top series has length {} but bottom frame has {len} rows",
                top.len()
            )));
        }
        if let Some((id, v)) = mid.iter().find(|(_, v)| v.len() != len) {
            return Err(Error::Structure(format!(
                "mid series {id} has length {} but bottom frame has {len} rows",
                v.len()
            )));
        }
        Ok(Self { top, mid, bottom })
    }

    pub fn len(&self) -> usize {
        self.top.len()
    }

    pub fn is_empty(&self) -> bool {
        self.top.is_empty()
    }

    pub fn top(&self) -> &[f64] {
        &self.top
    }

    pub fn mid(&self, id: &str) -> Option<&[f64]> {
        self.mid.iter().find(|(m, _)| m == id).map(|(_, v)| v.as_slice())
    }

    pub fn mids(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.mid.iter().map(|(id, v)| (id.as_str(), v.as_slice()))
    }

    pub fn bottom(&self) -> &SeriesFrame {
        &self.bottom
    }

    /// Series of any node by level and id.
    pub fn node(&self, level: Level, id: &str) -> Option<&[f64]> {
        match level {
            Level::Top => Some(&self.top),
            Level::Mid => self.mid(id),
            Level::Bottom => self.bottom.column(id),
        }
    }

    pub fn top_mut(&mut self) -> &mut [f64] {
        &mut self.top
    }

    pub fn mid_mut(&mut self, id: &str) -> Option<&mut [f64]> {
        self.mid
            .iter_mut()
            .find(|(m, _)| m == id)
            .map(|(_, v)| v.as_mut_slice())
    }

    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        let bottom = self.bottom.slice(range.clone())?;
        Ok(Self {
            top: self.top[range.clone()].to_vec(),
            mid: self
                .mid
                .iter()
                .map(|(id, v)| (id.clone(), v[range.clone()].to_vec()))
                .collect(),
            bottom,
        })
    }
}

/// Sum bottom series up the tree.
///
/// Sums run in child order within each mid and in mid order for the top, so
/// the result is bit-reproducible for a given hierarchy.
pub fn aggregate(hierarchy: &Hierarchy, bottom: &SeriesFrame) -> Result<LevelSeries> {
    if bottom.is_empty() || bottom.n_series() == 0 {
        return Err(Error::Structure("empty series frame".into()));
    }
    for id in hierarchy.bottom_ids() {
        if bottom.column(id).is_none() {
            return Err(Error::Structure(format!(
                "bottom series {id} is not a column of the series frame"
            )));
        }
    }
    let len = bottom.len();
    let mut mid = Vec::with_capacity(hierarchy.mids().len());
    for node in hierarchy.mids() {
        let mut acc = vec![0.0; len];
        for child in &node.children {
            let col = bottom.column(child).expect("checked above");
            for (a, x) in acc.iter_mut().zip(col) {
                *a += x;
            }
        }
        mid.push((node.id.clone(), acc));
    }
    let mut top = vec![0.0; len];
    for (_, series) in &mid {
        for (a, x) in top.iter_mut().zip(series) {
            *a += x;
        }
    }
    let bottom = bottom.select(hierarchy.bottom_ids())?;
    Ok(LevelSeries { top, mid, bottom })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Level of the parent whose identity is broken.
    pub level: Level,
    pub node: String,
    pub t: usize,
    /// Value stored for the parent.
    pub stored: f64,
    /// Sum of its children.
    pub children_sum: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Node ids the hierarchy references but the level series lack.
    pub missing: Vec<String>,
}

impl ValidationReport {
    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty() && self.missing.is_empty()
    }
}

/// Check both summation identities at tolerance [`SUM_TOLERANCE`].
pub fn validate(hierarchy: &Hierarchy, levels: &LevelSeries) -> ValidationReport {
    validate_with_tolerance(hierarchy, levels, SUM_TOLERANCE)
}

pub fn validate_with_tolerance(hierarchy: &Hierarchy, levels: &LevelSeries, tol: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    let len = levels.len();

    let mut mid_sum = vec![0.0; len];
    for node in hierarchy.mids() {
        let Some(mid) = levels.mid(&node.id) else {
            report.missing.push(node.id.clone());
            continue;
        };
        for (a, x) in mid_sum.iter_mut().zip(mid) {
            *a += x;
        }
        let mut child_sum = vec![0.0; len];
        let mut complete = true;
        for child in &node.children {
            match levels.bottom().column(child) {
                Some(col) => {
                    for (a, x) in child_sum.iter_mut().zip(col) {
                        *a += x;
                    }
                }
                None => {
                    report.missing.push(child.clone());
                    complete = false;
                }
            }
        }
        if complete {
            push_violations(&mut report, Level::Mid, &node.id, mid, &child_sum, tol);
        }
    }
    push_violations(&mut report, Level::Top, TOP_ID, levels.top(), &mid_sum, tol);
    report
}

fn push_violations(report: &mut ValidationReport, level: Level, node: &str, stored: &[f64], sums: &[f64], tol: f64) {
    for (t, (&s, &c)) in stored.iter().zip(sums).enumerate() {
        // written so that NaN counts as a violation
        if !((s - c).abs() <= tol) {
            report.violations.push(Violation {
                level,
                node: node.to_string(),
                t,
                stored: s,
                children_sum: c,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn frame(cols: &[(&str, &[f64])]) -> SeriesFrame {
        SeriesFrame::new(cols.iter().map(|(id, v)| (id.to_string(), v.to_vec())).collect()).unwrap()
    }

    #[test]
    fn aggregate_single_mid() {
        let h = Hierarchy::new(vec![MidNode::new("A", ids(&["x1", "x2"]))]).unwrap();
        let f = frame(&[("x1", &[1.0, 2.0]), ("x2", &[3.0, 4.0])]);
        let lv = aggregate(&h, &f).unwrap();
        assert_eq!(lv.mid("A").unwrap(), &[4.0, 6.0]);
        assert_eq!(lv.top(), &[4.0, 6.0]);
    }

    #[test]
    fn aggregate_identity_case() {
        let h = Hierarchy::new(vec![MidNode::new("A", ids(&["x1"]))]).unwrap();
        let f = frame(&[("x1", &[5.0, 0.0, 7.0])]);
        let lv = aggregate(&h, &f).unwrap();
        assert_eq!(lv.mid("A").unwrap(), &[5.0, 0.0, 7.0]);
        assert_eq!(lv.top(), &[5.0, 0.0, 7.0]);
    }

    #[test]
    fn aggregate_missing_column_names_it() {
        let h = Hierarchy::new(vec![MidNode::new("A", ids(&["x1", "ghost"]))]).unwrap();
        let f = frame(&[("x1", &[1.0])]);
        let err = aggregate(&h, &f).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn empty_frame_rejected() {
        assert!(SeriesFrame::new(vec![]).is_err());
        assert!(SeriesFrame::new(vec![("x".into(), vec![])]).is_err());
    }

    #[test]
    fn hierarchy_invariants() {
        assert!(Hierarchy::new(vec![]).is_err());
        assert!(Hierarchy::new(vec![MidNode::new("A", vec![])]).is_err());
        let dup = Hierarchy::new(vec![
            MidNode::new("A", ids(&["x1"])),
            MidNode::new("B", ids(&["x1"])),
        ]);
        assert!(dup.unwrap_err().to_string().contains("x1"));
        assert!(Hierarchy::new(vec![MidNode::new("TOP", ids(&["x1"]))]).is_err());
    }

    #[test]
    fn hierarchy_json_shape() {
        let json = r#"{"mids": [{"id": "A", "children": ["x1", "x2"]}, {"id": "B", "children": ["x3"]}]}"#;
        let h: Hierarchy = serde_json::from_str(json).unwrap();
        assert_eq!(h.n_bottom(), 3);
        let back = serde_json::to_string(&h).unwrap();
        assert_eq!(serde_json::from_str::<Hierarchy>(&back).unwrap(), h);
        let bad = r#"{"mids": [{"id": "A", "children": []}]}"#;
        assert!(serde_json::from_str::<Hierarchy>(bad).is_err());
    }

    fn two_mid_levels() -> (Hierarchy, LevelSeries) {
        let h = Hierarchy::new(vec![
            MidNode::new("A", ids(&["x1", "x2"])),
            MidNode::new("B", ids(&["x3"])),
        ])
        .unwrap();
        let f = frame(&[
            ("x1", &[1.0, 2.0, 3.0, 4.0, 5.0]),
            ("x2", &[0.0, 1.0, 0.0, 1.0, 0.0]),
            ("x3", &[9.0, 8.0, 7.0, 6.0, 5.0]),
        ]);
        let lv = aggregate(&h, &f).unwrap();
        (h, lv)
    }

    #[test]
    fn validate_clean_output() {
        let (h, lv) = two_mid_levels();
        assert!(validate(&h, &lv).is_consistent());
    }

    #[test]
    fn validate_single_mid_perturbation() {
        let (h, mut lv) = two_mid_levels();
        lv.mid_mut("A").unwrap()[3] += 1.0;
        lv.top_mut()[3] += 1.0;
        let report = validate(&h, &lv);
        assert_eq!(report.violations.len(), 1);
        let v = &report.violations[0];
        assert_eq!((v.level, v.node.as_str(), v.t), (Level::Mid, "A", 3));
    }

    #[test]
    fn validate_both_levels() {
        let (h, mut lv) = two_mid_levels();
        lv.mid_mut("A").unwrap()[3] += 1.0;
        lv.top_mut()[0] -= 2.0;
        let report = validate(&h, &lv);
        let levels: HashSet<Level> = report.violations.iter().map(|v| v.level).collect();
        assert!(levels.contains(&Level::Mid));
        assert!(levels.contains(&Level::Top));
    }

    #[test]
    fn slice_and_select() {
        let (_, lv) = two_mid_levels();
        let s = lv.slice(1..3).unwrap();
        assert_eq!(s.top(), &[11.0, 10.0]);
        assert_eq!(s.bottom().column("x3").unwrap(), &[8.0, 7.0]);
        assert!(lv.slice(3..3).is_err());
        assert!(lv.slice(0..9).is_err());
    }
}
