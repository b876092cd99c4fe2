//! Odds-based disaggregation of a parent total among its children.
//!
//! For a sibling group `y_1..y_n` the odds of sibling `k` are
//!
//! ```text
//! odds_k = y_k / sum_{i != k} y_i
//! ```
//!
//! Adding one to both sides and substituting the parent total `S` gives
//! `sum_{i != k} y_i = S / (1 + odds_k)`, one linear equation per sibling.
//! Stacked, the system is `(J - I) y = b` with `b_k = S / (1 + odds_k)`,
//! where `J` is the all-ones matrix. For `n >= 2`,
//!
//! ```text
//! (J - I)^-1 = J / (n - 1) - I
//! ```
//!
//! so `y_k = sum(b) / (n - 1) - b_k` in O(n).
//!
//! Forecast odds are not mutually consistent, so the solved vector may hold
//! negatives and need not sum to `S`. [`repair_and_rescale`] zeroes negatives
//! and rescales the rest to sum to `S`.

use crate::error::{Error, Result};

/// Smoothing constant used when none is configured.
pub const DEFAULT_SMOOTHING: f64 = 0.5;

/// Odds of every sibling in a group; entries are finite and `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OddsVector {
    values: Vec<f64>,
}

impl OddsVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::param("odds", format!("need at least 2 siblings, got {}", values.len())));
        }
        if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::param("odds", format!("entry {k} is {v}; odds must be finite and >= 0")));
        }
        Ok(Self { values })
    }

    /// Odds of each entry of `values` against its siblings.
    pub fn from_values(values: &[f64], c: f64) -> Result<Self> {
        let odds = (0..values.len())
            .map(|k| compute_odds(values, k, c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(odds)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `(values[k] + c) / (sum_{i != k} values[i] + (n - 1) c)`.
pub fn compute_odds(values: &[f64], k: usize, c: f64) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::param("values", format!("need at least 2 siblings, got {n}")));
    }
    if k >= n {
        return Err(Error::param("k", format!("index {k} out of range for {n} siblings")));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::param("smoothing", format!("{c} must be finite and >= 0")));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::param("values", format!("entry {i} is {v}; values must be finite and >= 0")));
    }
    let others: f64 = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(_, v)| v)
        .sum();
    let denom = others + (n - 1) as f64 * c;
    if denom == 0.0 {
        return Err(Error::UndefinedOdds {
            id: format!("#{k}"),
            t: 0,
        });
    }
    Ok((values[k] + c) / denom)
}

/// Per-timestep odds for each sibling of an aligned group.
pub fn odds_series(siblings: &[(String, Vec<f64>)], c: f64) -> Result<Vec<(String, Vec<f64>)>> {
    let (out, undefined) = odds_series_inner(siblings, c, None)?;
    debug_assert_eq!(undefined, 0);
    Ok(out)
}

/// As [`odds_series`], but cells whose odds are undefined at smoothing `c`
/// are recomputed with `fallback_c`. Returns the number of such cells.
pub fn odds_series_with_fallback(
    siblings: &[(String, Vec<f64>)],
    c: f64,
    fallback_c: f64,
) -> Result<(Vec<(String, Vec<f64>)>, usize)> {
    if !(fallback_c > 0.0) {
        return Err(Error::param("fallback smoothing", "must be > 0"));
    }
    odds_series_inner(siblings, c, Some(fallback_c))
}

fn odds_series_inner(
    siblings: &[(String, Vec<f64>)],
    c: f64,
    fallback_c: Option<f64>,
) -> Result<(Vec<(String, Vec<f64>)>, usize)> {
    let n = siblings.len();
    if n < 2 {
        return Err(Error::param("siblings", format!("need at least 2 siblings, got {n}")));
    }
    let len = siblings[0].1.len();
    if let Some((id, _)) = siblings.iter().find(|(_, v)| v.len() != len) {
        return Err(Error::data(id, "sibling series are not aligned"));
    }
    let mut out: Vec<(String, Vec<f64>)> = siblings
        .iter()
        .map(|(id, _)| (id.clone(), Vec::with_capacity(len)))
        .collect();
    let mut undefined = 0;
    let mut row = vec![0.0; n];
    for t in 0..len {
        for (slot, (_, v)) in row.iter_mut().zip(siblings) {
            *slot = v[t];
        }
        for k in 0..n {
            let odds = match compute_odds(&row, k, c) {
                Ok(o) => o,
                Err(Error::UndefinedOdds { .. }) => match fallback_c {
                    Some(fc) => {
                        undefined += 1;
                        compute_odds(&row, k, fc)?
                    }
                    None => {
                        return Err(Error::UndefinedOdds {
                            id: siblings[k].0.clone(),
                            t,
                        })
                    }
                },
                Err(Error::Parameter { reason, .. }) => {
                    return Err(Error::data(&siblings[k].0, format!("t={t}: {reason}")));
                }
                Err(e) => return Err(e),
            };
            out[k].1.push(odds);
        }
    }
    Ok((out, undefined))
}

/// Right-hand side of `(J - I) y = b` for a parent total.
#[derive(Debug, Clone, PartialEq)]
pub struct OddsSystem {
    pub rhs: Vec<f64>,
    pub total: f64,
}

impl OddsSystem {
    pub fn n(&self) -> usize {
        self.rhs.len()
    }
}

/// `b_k = total / (1 + odds_k)`.
pub fn build_system(odds: &OddsVector, total: f64) -> Result<OddsSystem> {
    if !total.is_finite() {
        return Err(Error::param("total", format!("{total} is not finite")));
    }
    Ok(OddsSystem {
        rhs: odds.values().iter().map(|o| total / (1.0 + o)).collect(),
        total,
    })
}

/// Unique solution of `(J - I) y = rhs` via the closed-form inverse.
/// Entries may be negative.
pub fn solve_system(system: &OddsSystem) -> Vec<f64> {
    let n = system.n();
    assert!(n >= 2, "odds system needs at least 2 siblings");
    let share = system.rhs.iter().sum::<f64>() / (n - 1) as f64;
    system.rhs.iter().map(|b| share - b).collect()
}

/// Dense `J - I` of order `n`.
pub fn odds_matrix(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
        .collect()
}

/// Dense `J / (n - 1) - I`, the inverse of [`odds_matrix`] for `n >= 2`.
pub fn odds_matrix_inverse(n: usize) -> Vec<Vec<f64>> {
    assert!(n >= 2, "J - I is singular for n < 2");
    let off = 1.0 / (n - 1) as f64;
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { off - 1.0 } else { off }).collect())
        .collect()
}

/// Result of repairing one raw solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Repair {
    pub values: Vec<f64>,
    /// Entries that were negative and set to zero.
    pub negatives: usize,
    /// No positive entry was left, so the total was split evenly.
    pub uniform: bool,
}

/// Zero negative entries and rescale the positive ones to sum to `total`.
/// Falls back to an even split when nothing positive remains.
pub fn repair_and_rescale(raw: &[f64], total: f64) -> Result<Vec<f64>> {
    repair(raw, total).map(|r| r.values)
}

pub fn repair(raw: &[f64], total: f64) -> Result<Repair> {
    if !(total >= 0.0 && total.is_finite()) {
        return Err(Error::param("total", format!("{total} must be finite and >= 0")));
    }
    if raw.is_empty() {
        return Err(Error::param("values", "nothing to repair"));
    }
    if let Some((k, v)) = raw.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::param("values", format!("entry {k} is {v}")));
    }
    let negatives = raw.iter().filter(|&&v| v < 0.0).count();
    let positive_sum: f64 = raw.iter().filter(|&&v| v > 0.0).sum();
    if positive_sum > 0.0 {
        let scale = total / positive_sum;
        let values = raw.iter().map(|&v| if v > 0.0 { v * scale } else { 0.0 }).collect();
        Ok(Repair {
            values,
            negatives,
            uniform: false,
        })
    } else {
        Ok(Repair {
            values: vec![total / raw.len() as f64; raw.len()],
            negatives,
            uniform: true,
        })
    }
}

/// Split `total` among siblings with forecast `odds`.
///
/// A single child takes the whole total. Otherwise the odds system is solved
/// and the solution repaired so the output is nonnegative and sums to `total`.
pub fn disaggregate(total: f64, odds: &[f64]) -> Result<Vec<f64>> {
    disaggregate_detailed(total, odds).map(|r| r.values)
}

pub fn disaggregate_detailed(total: f64, odds: &[f64]) -> Result<Repair> {
    match odds.len() {
        0 => Err(Error::param("odds", "no siblings")),
        1 => repair(&[total], total),
        _ => {
            let odds = OddsVector::new(odds.to_vec())?;
            let raw = solve_system(&build_system(&odds, total)?);
            repair(&raw, total)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    /// Generic dense LU solve of `(J - I) y = rhs`.
    fn dense_solve(rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
        a.lu().solve(&DVector::from_column_slice(rhs)).unwrap().iter().copied().collect()
    }

    fn odds_of(values: &[f64]) -> Vec<f64> {
        // independent route: total minus self, rather than summing the others
        let total: f64 = values.iter().sum();
        values.iter().map(|v| v / (total - v)).collect()
    }

    #[test]
    fn symmetric_odds() {
        for k in 0..3 {
            assert_eq!(compute_odds(&[1.0, 1.0, 1.0], k, 0.0).unwrap(), 0.5);
        }
    }

    #[test]
    fn odds_of_2_3_5() {
        let v = [2.0, 3.0, 5.0];
        let got: Vec<f64> = (0..3).map(|k| compute_odds(&v, k, 0.0).unwrap()).collect();
        let want = odds_of(&v);
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(got[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(got[1], 3.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(got[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn undefined_and_smoothed_odds() {
        assert!(matches!(compute_odds(&[0.0, 0.0, 4.0], 2, 0.0), Err(Error::UndefinedOdds { .. })));
        assert_eq!(compute_odds(&[0.0, 0.0, 4.0], 2, 0.5).unwrap(), 4.5);
        assert!(compute_odds(&[1.0], 0, 0.0).is_err());
        assert!(compute_odds(&[1.0, -1.0], 0, 0.0).is_err());
        assert!(compute_odds(&[1.0, 1.0], 0, -0.1).is_err());
    }

    #[test]
    fn constant_sibling_odds_series() {
        let s = vec![("a".to_string(), vec![2.0; 5]), ("b".to_string(), vec![6.0; 5])];
        let out = odds_series(&s, 0.0).unwrap();
        assert!(out[0].1.iter().all(|&o| o == 1.0 / 3.0));
        assert!(out[1].1.iter().all(|&o| o == 3.0));
    }

    #[test]
    fn odds_series_scale_invariant() {
        let s = vec![
            ("a".to_string(), vec![1.0, 4.0, 2.0]),
            ("b".to_string(), vec![3.0, 1.0, 5.0]),
            ("c".to_string(), vec![2.0, 2.0, 9.0]),
        ];
        let scaled: Vec<_> = s.iter().map(|(id, v)| (id.clone(), v.iter().map(|x| 7.0 * x).collect())).collect();
        let a = odds_series(&s, 0.0).unwrap();
        let b = odds_series(&scaled, 0.0).unwrap();
        for ((_, x), (_, y)) in a.iter().zip(&b) {
            for (p, q) in x.iter().zip(y) {
                assert_abs_diff_eq!(p, q, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn odds_series_matches_per_cell_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let s: Vec<(String, Vec<f64>)> = (0..3)
            .map(|i| (format!("s{i}"), (0..50).map(|_| rng.random_range(0.5..20.0)).collect()))
            .collect();
        let out = odds_series(&s, 0.0).unwrap();
        for t in 0..50 {
            let row: Vec<f64> = s.iter().map(|(_, v)| v[t]).collect();
            let want = odds_of(&row);
            for k in 0..3 {
                assert_abs_diff_eq!(out[k].1[t], want[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn odds_series_reports_cell() {
        let s = vec![("a".to_string(), vec![1.0, 0.0]), ("b".to_string(), vec![1.0, 0.0])];
        match odds_series(&s, 0.0) {
            Err(Error::UndefinedOdds { id, t }) => assert_eq!((id.as_str(), t), ("a", 1)),
            other => panic!("{other:?}"),
        }
        let (out, n) = odds_series_with_fallback(&s, 0.0, 0.5).unwrap();
        assert_eq!(n, 2);
        assert_eq!(out[0].1, vec![1.0, 1.0]);
    }

    #[test]
    fn build_system_examples() {
        let odds = OddsVector::new(vec![0.25, 3.0 / 7.0, 1.0]).unwrap();
        let sys = build_system(&odds, 10.0).unwrap();
        for (g, w) in sys.rhs.iter().zip([8.0, 7.0, 5.0]) {
            assert_abs_diff_eq!(*g, w, epsilon = 1e-12);
        }
        let sys = build_system(&OddsVector::new(vec![1.0, 1.0]).unwrap(), 4.0).unwrap();
        assert_eq!(sys.rhs, vec![2.0, 2.0]);
        let sys = build_system(&OddsVector::new(vec![0.0; 3]).unwrap(), 9.0).unwrap();
        assert_eq!(sys.rhs, vec![9.0; 3]);
        assert!(build_system(&OddsVector::new(vec![0.0; 3]).unwrap(), f64::NAN).is_err());
        assert!(OddsVector::new(vec![1.0]).is_err());
        assert!(OddsVector::new(vec![1.0, -0.5]).is_err());
    }

    #[test]
    fn solve_system_examples() {
        let sys = OddsSystem { rhs: vec![8.0, 7.0, 5.0], total: 10.0 };
        let y = solve_system(&sys);
        let oracle = dense_solve(&sys.rhs);
        for ((g, o), w) in y.iter().zip(&oracle).zip([2.0, 3.0, 5.0]) {
            assert_abs_diff_eq!(*g, w, epsilon = 1e-12);
            assert_abs_diff_eq!(*o, w, epsilon = 1e-12);
        }
        assert_eq!(solve_system(&OddsSystem { rhs: vec![2.0, 2.0], total: 4.0 }), vec![2.0, 2.0]);
        let y = solve_system(&OddsSystem { rhs: vec![9.0; 3], total: 9.0 });
        assert_eq!(y, vec![4.5; 3]);
        let o = dense_solve(&[9.0; 3]);
        assert!(o.iter().all(|v| (v - 4.5).abs() < 1e-12));
    }

    #[test]
    fn repair_examples() {
        let r = repair_and_rescale(&[-1.0, 4.0, 7.0], 10.0).unwrap();
        assert_abs_diff_eq!(r[0], 0.0);
        assert_abs_diff_eq!(r[1], 40.0 / 11.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[2], 70.0 / 11.0, epsilon = 1e-12);
        assert_eq!(repair_and_rescale(&[2.0, 3.0, 5.0], 10.0).unwrap(), vec![2.0, 3.0, 5.0]);
        let r = repair(&[-2.0, -3.0], 8.0).unwrap();
        assert_eq!(r.values, vec![4.0, 4.0]);
        assert!(r.uniform);
        assert_eq!(r.negatives, 2);
        assert!(matches!(repair_and_rescale(&[1.0], -1.0), Err(Error::Parameter { .. })));
        assert!(repair_and_rescale(&[f64::INFINITY], 1.0).is_err());
    }

    #[test]
    fn disaggregate_examples() {
        let exact = odds_of(&[2.0, 3.0, 5.0]);
        let y = disaggregate(10.0, &exact).unwrap();
        for (g, w) in y.iter().zip([2.0, 3.0, 5.0]) {
            assert_abs_diff_eq!(*g, w, epsilon = 1e-12);
        }

        // independent route: dense solve, then normalise by hand
        let odds = [0.25, 3.0 / 7.0, 1.2];
        let rhs: Vec<f64> = odds.iter().map(|o| 10.0 / (1.0 + o)).collect();
        let raw = dense_solve(&rhs);
        let raw_sum: f64 = raw.iter().sum();
        assert_abs_diff_eq!(raw[0], 1.7727, epsilon = 1e-4);
        assert_abs_diff_eq!(raw[1], 2.7727, epsilon = 1e-4);
        assert_abs_diff_eq!(raw[2], 5.2273, epsilon = 1e-4);
        assert_abs_diff_eq!(raw_sum, 9.7727, epsilon = 1e-4);
        let got = disaggregate(10.0, &odds).unwrap();
        for ((g, r), w) in got.iter().zip(&raw).zip([1.8140, 2.8372, 5.3488]) {
            assert_abs_diff_eq!(*g, r * 10.0 / raw_sum, epsilon = 1e-12);
            assert_abs_diff_eq!(*g, w, epsilon = 1e-4);
        }

        assert_eq!(disaggregate(7.5, &[f64::NAN]).unwrap(), vec![7.5]);
        assert!(disaggregate(7.5, &[]).is_err());
    }

    #[test]
    fn matrix_inverse_identity() {
        for n in 2..=50 {
            let a = odds_matrix(n);
            let inv = odds_matrix_inverse(n);
            for i in 0..n {
                for j in 0..n {
                    let v: f64 = (0..n).map(|k| inv[i][k] * a[k][j]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((v - want).abs() <= 1e-12, "n={n} ({i},{j}) = {v}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn closed_form_matches_dense(rhs in prop::collection::vec(0.0f64..100.0, 2..20)) {
            let y = solve_system(&OddsSystem { rhs: rhs.clone(), total: 0.0 });
            for (a, b) in y.iter().zip(dense_solve(&rhs)) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn exact_round_trip(y in prop::collection::vec(0.1f64..100.0, 2..10)) {
            let odds: Vec<f64> = (0..y.len()).map(|k| compute_odds(&y, k, 0.0).unwrap()).collect();
            let total: f64 = y.iter().sum();
            let back = disaggregate(total, &odds).unwrap();
            for (a, b) in back.iter().zip(&y) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn odds_scale_invariant(v in prop::collection::vec(0.1f64..100.0, 2..10), scale in 0.01f64..1000.0) {
            let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
            for k in 0..v.len() {
                let a = compute_odds(&v, k, 0.0).unwrap();
                let b = compute_odds(&scaled, k, 0.0).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }
        }

        #[test]
        fn repair_contract(raw in prop::collection::vec(-100.0f64..100.0, 1..20), total in 0.0f64..1e4) {
            let out = repair_and_rescale(&raw, total).unwrap();
            prop_assert!(out.iter().all(|&v| v >= 0.0));
            prop_assert!((out.iter().sum::<f64>() - total).abs() <= 1e-9);
        }

        #[test]
        fn raw_solution_monotone_in_own_odds(
            odds in prop::collection::vec(0.0f64..5.0, 2..10),
            bump in 0.0f64..5.0,
            k_seed in 0usize..100,
            total in 0.0f64..1000.0,
        ) {
            let k = k_seed % odds.len();
            let base = solve_system(&build_system(&OddsVector::new(odds.clone()).unwrap(), total).unwrap());
            let mut raised = odds.clone();
            raised[k] += bump;
            let up = solve_system(&build_system(&OddsVector::new(raised).unwrap(), total).unwrap());
            prop_assert!(up[k] >= base[k] - 1e-9);
        }
    }
}
