//! INARMA(1,1) count simulation and random hierarchy sampling.
//!
//! The count process is
//!
//! ```text
//! X_0 = e_0
//! X_t = alpha o X_{t-1} + e_t + beta o e_{t-1},   e_t ~ Poisson(lambda)
//! ```
//!
//! where `p o n` is binomial thinning: the number of successes in `n`
//! independent Bernoulli(`p`) trials.
//!
//! Seeding: every variable `i` (0-based) of a dataset draws its parameters and
//! its path from its own ChaCha8 stream seeded with
//! `splitmix64(root ^ splitmix64(i + 1))`. Any single variable can therefore
//! be regenerated without touching the rest of the pool.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, MidNode, SeriesFrame};

/// Number of mid nodes in a sampled hierarchy.
pub const MID_COUNT: usize = 6;
/// Children per mid node are drawn uniformly from `1..=MAX_CHILDREN`.
pub const MAX_CHILDREN: usize = 9;

const HIERARCHY_STREAM: u64 = 0x6869_6572_6172_6368;

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th stream derived from `root`.
pub fn sub_seed(root: u64, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(index.wrapping_add(1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InarmaParams {
    /// AR thinning probability, `0 <= alpha < 1`.
    pub alpha: f64,
    /// MA thinning probability, `0 <= beta <= 1`.
    pub beta: f64,
    /// Poisson innovation mean, `> 0`.
    pub lambda: f64,
}

impl InarmaParams {
    pub fn new(alpha: f64, beta: f64, lambda: f64) -> Result<Self> {
        let p = Self { alpha, beta, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::param("alpha", format!("{} not in [0, 1)", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::param("beta", format!("{} not in [0, 1]", self.beta)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda", format!("{} must be finite and > 0", self.lambda)));
        }
        Ok(())
    }

    /// Stationary mean `lambda (1 + beta) / (1 - alpha)`.
    pub fn stationary_mean(&self) -> f64 {
        self.lambda * (1.0 + self.beta) / (1.0 - self.alpha)
    }
}

/// Binomial thinning `p o n`.
pub fn thin<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p checked in (0, 1)").sample(rng)
}

fn generate_with<R: Rng + ?Sized>(params: &InarmaParams, length: usize, burn_in: usize, rng: &mut R) -> Vec<u64> {
    let poisson = Poisson::new(params.lambda).expect("lambda validated");
    let draw = |rng: &mut R| poisson.sample(rng) as u64;

    let total = length + burn_in;
    let mut out = Vec::with_capacity(length);
    let mut prev_e = draw(rng);
    let mut x = prev_e;
    if burn_in == 0 {
        out.push(x);
    }
    for t in 1..total {
        let e = draw(rng);
        x = thin(x, params.alpha, rng) + e + thin(prev_e, params.beta, rng);
        prev_e = e;
        if t >= burn_in {
            out.push(x);
        }
    }
    out
}

/// Generate `length` steps of INARMA(1,1) starting from `X_0 = e_0`, no burn-in.
pub fn inarma_generate(params: &InarmaParams, length: usize, seed: u64) -> Result<Vec<u64>> {
    params.validate()?;
    if length == 0 {
        return Err(Error::param("length", "must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(generate_with(params, length, 0, &mut rng))
}

/// Closed interval `[lo, hi]` for one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

/// Per-variable parameter ranges; each variable draws its parameters uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamRanges {
    pub alpha: Range,
    pub beta: Range,
    pub lambda: Range,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            alpha: Range::new(0.1, 0.7),
            beta: Range::new(0.0, 0.5),
            lambda: Range::new(1.0, 10.0),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda)] {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
                return Err(Error::param(name, format!("invalid range [{}, {}]", r.lo, r.hi)));
            }
        }
        // both endpoints must be admissible parameter values
        InarmaParams::new(self.alpha.lo, self.beta.lo, self.lambda.lo)?;
        InarmaParams::new(self.alpha.hi, self.beta.hi, self.lambda.hi)?;
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> InarmaParams {
        InarmaParams {
            alpha: self.alpha.sample(rng),
            beta: self.beta.sample(rng),
            lambda: self.lambda.sample(rng),
        }
    }
}

/// Everything needed to regenerate a simulated pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_vars: usize,
    pub length: usize,
    pub burn_in: usize,
    pub ranges: ParamRanges,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_vars: 1000,
            length: 1000,
            burn_in: 100,
            ranges: ParamRanges::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_vars == 0 {
            return Err(Error::param("n_vars", "must be >= 1"));
        }
        if self.length == 0 {
            return Err(Error::param("length", "must be >= 1"));
        }
        self.ranges.validate()
    }
}

/// Column id of the `index`-th (0-based) pool variable: `v0001`, `v0002`, ...
pub fn variable_id(index: usize) -> String {
    format!("v{:04}", index + 1)
}

/// Parse a pool column id back to its 0-based index.
pub fn variable_index(id: &str) -> Option<usize> {
    id.strip_prefix('v')?.parse::<usize>().ok()?.checked_sub(1)
}

/// Regenerate one pool variable: its drawn parameters and its emitted path.
pub fn simulate_variable(config: &SimConfig, seed: u64, index: usize) -> (InarmaParams, Vec<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, index as u64));
    let params = config.ranges.sample(&mut rng);
    let path = generate_with(&params, config.length, config.burn_in, &mut rng);
    (params, path)
}

/// Simulate the variables at `indices` of the pool described by `config`.
///
/// Identical to selecting those columns from [`simulate_dataset`].
pub fn simulate_selected(config: &SimConfig, seed: u64, indices: &[usize]) -> Result<SeriesFrame> {
    config.validate()?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= config.n_vars) {
        return Err(Error::param("index", format!("{bad} outside a pool of {}", config.n_vars)));
    }
    let cols = indices
        .iter()
        .map(|&i| {
            let (_, path) = simulate_variable(config, seed, i);
            (variable_id(i), path.into_iter().map(|x| x as f64).collect())
        })
        .collect();
    SeriesFrame::new(cols)
}

/// Simulate a full pool of `config.n_vars` variables of `config.length` steps.
pub fn simulate_dataset(config: &SimConfig, seed: u64) -> Result<SeriesFrame> {
    let all: Vec<usize> = (0..config.n_vars).collect();
    simulate_selected(config, seed, &all)
}

/// Six mid sizes and the bottom variables picked for one hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchySpec {
    pub mid_child_counts: Vec<usize>,
    pub selected_ids: Vec<String>,
}

impl HierarchySpec {
    pub fn n_selected(&self) -> usize {
        self.selected_ids.len()
    }

    /// Mids `M1..M6`, each taking the next `j_i` selected ids in order.
    pub fn to_hierarchy(&self) -> Result<Hierarchy> {
        let total: usize = self.mid_child_counts.iter().sum();
        if total != self.selected_ids.len() {
            return Err(Error::Structure(format!(
                "child counts sum to {total} but {} ids are selected",
                self.selected_ids.len()
            )));
        }
        let mut rest = self.selected_ids.as_slice();
        let mids = self
            .mid_child_counts
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let (head, tail) = rest.split_at(n);
                rest = tail;
                MidNode::new(format!("M{}", i + 1), head.to_vec())
            })
            .collect();
        Hierarchy::new(mids)
    }

    /// Pool indices of the selected variables.
    pub fn selected_indices(&self) -> Result<Vec<usize>> {
        self.selected_ids
            .iter()
            .map(|id| variable_index(id).ok_or_else(|| Error::Structure(format!("{id} is not a pool id"))))
            .collect()
    }
}

/// Draw six child counts from `1..=9` and that many distinct pool variables.
pub fn sample_hierarchy_spec(pool_size: usize, seed: u64) -> Result<HierarchySpec> {
    let needed = MID_COUNT * MAX_CHILDREN;
    if pool_size < needed {
        return Err(Error::param(
            "pool_size",
            format!("{pool_size} is smaller than the maximum hierarchy size {needed}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ HIERARCHY_STREAM));
    let mid_child_counts: Vec<usize> = (0..MID_COUNT).map(|_| rng.random_range(1..=MAX_CHILDREN)).collect();
    let n: usize = mid_child_counts.iter().sum();
    let selected_ids = index::sample(&mut rng, pool_size, n)
        .into_iter()
        .map(variable_id)
        .collect();
    Ok(HierarchySpec {
        mid_child_counts,
        selected_ids,
    })
}
