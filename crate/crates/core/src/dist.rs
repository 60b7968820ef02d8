//! Finite-domain probability distributions, user-record datasets, and the
//! divergences used for indistinguishability checks.

use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Absolute tolerance accepted when checking that masses sum to one.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Absolute tolerance for divergence identities (e.g. hockey-stick at
/// epsilon = 0 versus total variation).
pub const DIVERGENCE_TOLERANCE: f64 = 1e-12;

/// A probability distribution over `{0, .., len-1}`, stored as a dense
/// vector of masses. Construction validates non-negativity and
/// normalization to within [`MASS_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FiniteDistribution {
    masses: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::InvalidArgument(
                "distribution needs at least one outcome".into(),
            ));
        }
        let mut sum = 0.0;
        for &m in &masses {
            if !m.is_finite() || m < 0.0 {
                return Err(Error::NotNormalized(m));
            }
            sum += m;
        }
        if (sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::NotNormalized(sum));
        }
        Ok(Self { masses })
    }

    /// Uniform distribution over `len` outcomes.
    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidArgument("empty domain".into()));
        }
        Ok(Self {
            masses: vec![1.0 / len as f64; len],
        })
    }

    /// Point mass on `index` in a domain of `len` outcomes.
    pub fn point(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::InvalidArgument(format!(
                "point index {index} out of domain {len}"
            )));
        }
        let mut masses = vec![0.0; len];
        masses[index] = 1.0;
        Ok(Self { masses })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn mass(&self, index: usize) -> f64 {
        self.masses[index]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Total mass on a set of outcomes given as a bitmask (domain size <= 64).
    pub(crate) fn mask_mass(&self, mask: u64) -> f64 {
        let mut s = 0.0;
        for (z, &m) in self.masses.iter().enumerate() {
            if mask >> z & 1 == 1 {
                s += m;
            }
        }
        s
    }

    /// Draw one outcome by inverse CDF using a single uniform variate.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &m) in self.masses.iter().enumerate() {
            if m > 0.0 {
                last_positive = i;
            }
            acc += m;
            if u < acc {
                return i;
            }
        }
        // Rounding left a sliver of unassigned CDF mass; attribute it to the
        // last outcome with positive probability.
        last_positive
    }
}

impl TryFrom<Vec<f64>> for FiniteDistribution {
    type Error = Error;
    fn try_from(masses: Vec<f64>) -> Result<Self> {
        Self::new(masses)
    }
}

impl From<FiniteDistribution> for Vec<f64> {
    fn from(d: FiniteDistribution) -> Vec<f64> {
        d.masses
    }
}

/// An `(epsilon, delta)` privacy parameter pair. Validated on construction:
/// `epsilon >= 0` and finite, `0 <= delta <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PrivacyParamsRaw", into = "PrivacyParamsRaw")]
pub struct PrivacyParams {
    epsilon: f64,
    delta: f64,
}

#[derive(Serialize, Deserialize)]
struct PrivacyParamsRaw {
    epsilon: f64,
    delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::InvalidParams(format!(
                "epsilon must be finite and non-negative, got {epsilon}"
            )));
        }
        if !delta.is_finite() || !(0.0..=1.0).contains(&delta) {
            return Err(Error::InvalidParams(format!(
                "delta must lie in [0, 1], got {delta}"
            )));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl TryFrom<PrivacyParamsRaw> for PrivacyParams {
    type Error = Error;
    fn try_from(raw: PrivacyParamsRaw) -> Result<Self> {
        Self::new(raw.epsilon, raw.delta)
    }
}

impl From<PrivacyParams> for PrivacyParamsRaw {
    fn from(pp: PrivacyParams) -> Self {
        PrivacyParamsRaw {
            epsilon: pp.epsilon,
            delta: pp.delta,
        }
    }
}

/// A dataset of `n` users, each holding exactly `m` examples from a finite
/// universe `{0, .., universe_size-1}`.
///
/// User-level neighbors replace one user's entire record; item-level
/// neighbors replace a single example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRaw", into = "DatasetRaw")]
pub struct Dataset {
    universe_size: usize,
    m: usize,
    users: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRaw {
    universe_size: usize,
    m: usize,
    users: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(universe_size: usize, m: usize, users: Vec<Vec<usize>>) -> Result<Self> {
        if universe_size == 0 {
            return Err(Error::InvalidDataset("universe must be non-empty".into()));
        }
        if m == 0 {
            return Err(Error::InvalidDataset(
                "users must hold at least one example".into(),
            ));
        }
        for (i, record) in users.iter().enumerate() {
            if record.len() != m {
                return Err(Error::InvalidDataset(format!(
                    "user {i} has {} examples, expected {m}",
                    record.len()
                )));
            }
            for &z in record {
                if z >= universe_size {
                    return Err(Error::InvalidDataset(format!(
                        "user {i} holds example {z} outside universe of size {universe_size}"
                    )));
                }
            }
        }
        Ok(Self {
            universe_size,
            m,
            users,
        })
    }

    pub fn universe_size(&self) -> usize {
        self.universe_size
    }

    /// Examples per user.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of users.
    pub fn n(&self) -> usize {
        self.users.len()
    }

    pub fn users(&self) -> &[Vec<usize>] {
        &self.users
    }

    pub fn user(&self, i: usize) -> &[usize] {
        &self.users[i]
    }

    /// Copy with the users at `removed` (distinct indices) deleted.
    pub fn remove_users(&self, removed: &[usize]) -> Result<Dataset> {
        let mut drop = vec![false; self.n()];
        for &i in removed {
            if i >= self.n() {
                return Err(Error::InvalidArgument(format!(
                    "user index {i} out of range ({} users)",
                    self.n()
                )));
            }
            if drop[i] {
                return Err(Error::InvalidArgument(format!(
                    "duplicate user index {i} in removal set"
                )));
            }
            drop[i] = true;
        }
        let users = self
            .users
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop[*i])
            .map(|(_, u)| u.clone())
            .collect();
        Ok(Dataset {
            universe_size: self.universe_size,
            m: self.m,
            users,
        })
    }

    /// Copy with user `i`'s record replaced (user-level neighbor).
    pub fn replace_user(&self, i: usize, record: Vec<usize>) -> Result<Dataset> {
        if i >= self.n() {
            return Err(Error::InvalidArgument(format!(
                "user index {i} out of range ({} users)",
                self.n()
            )));
        }
        let mut users = self.users.clone();
        users[i] = record;
        Dataset::new(self.universe_size, self.m, users)
    }

    /// Copy with one example of one user replaced (item-level neighbor).
    pub fn replace_item(&self, user: usize, position: usize, value: usize) -> Result<Dataset> {
        if user >= self.n() || position >= self.m {
            return Err(Error::InvalidArgument(format!(
                "item position ({user}, {position}) out of range"
            )));
        }
        let mut users = self.users.clone();
        users[user][position] = value;
        Dataset::new(self.universe_size, self.m, users)
    }
}

impl TryFrom<DatasetRaw> for Dataset {
    type Error = Error;
    fn try_from(raw: DatasetRaw) -> Result<Self> {
        Dataset::new(raw.universe_size, raw.m, raw.users)
    }
}

impl From<Dataset> for DatasetRaw {
    fn from(ds: Dataset) -> Self {
        DatasetRaw {
            universe_size: ds.universe_size,
            m: ds.m,
            users: ds.users,
        }
    }
}

/// Divergence value that may be infinite. KL and chi-squared are infinite
/// whenever the first argument has mass outside the second's support;
/// callers must be able to tell that apart from a numeric artifact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub fn is_finite(&self) -> bool {
        matches!(self, Divergence::Finite(_))
    }

    /// The finite value, if any.
    pub fn value(&self) -> Option<f64> {
        match self {
            Divergence::Finite(v) => Some(*v),
            Divergence::Infinite => None,
        }
    }
}

fn check_lengths(a: &FiniteDistribution, b: &FiniteDistribution) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Hockey-stick divergence `sum_x max(0, a(x) - e^eps * b(x))`.
///
/// At `eps = 0` this equals the total variation distance. A mechanism is
/// `(eps, delta)`-indistinguishable on a pair of inputs iff the divergence
/// in both directions is at most `delta`.
pub fn hockey_stick(a: &FiniteDistribution, b: &FiniteDistribution, eps: f64) -> Result<f64> {
    check_lengths(a, b)?;
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::InvalidParams(format!(
            "epsilon must be finite and non-negative, got {eps}"
        )));
    }
    let scale = eps.exp();
    let mut total = 0.0;
    for (&pa, &pb) in a.masses().iter().zip(b.masses()) {
        let gap = pa - scale * pb;
        if gap > 0.0 {
            total += gap;
        }
    }
    Ok(total)
}

/// True iff `a` and `b` are `(eps, delta)`-indistinguishable: the
/// hockey-stick divergence is at most `delta` in both directions.
pub fn approx_indist(
    a: &FiniteDistribution,
    b: &FiniteDistribution,
    pp: &PrivacyParams,
) -> Result<bool> {
    let forward = hockey_stick(a, b, pp.epsilon())?;
    if forward > pp.delta() {
        return Ok(false);
    }
    let backward = hockey_stick(b, a, pp.epsilon())?;
    Ok(backward <= pp.delta())
}

/// Total variation distance `(1/2) * sum_x |a(x) - b(x)|`.
pub fn tv_distance(a: &FiniteDistribution, b: &FiniteDistribution) -> Result<f64> {
    check_lengths(a, b)?;
    let mut total = 0.0;
    for (&pa, &pb) in a.masses().iter().zip(b.masses()) {
        total += (pa - pb).abs();
    }
    Ok(total / 2.0)
}

/// KL divergence `sum_{x: a(x) > 0} a(x) * ln(a(x) / b(x))`, infinite when
/// `a` has mass outside the support of `b`.
pub fn kl_divergence(a: &FiniteDistribution, b: &FiniteDistribution) -> Result<Divergence> {
    check_lengths(a, b)?;
    let mut total = 0.0;
    for (&pa, &pb) in a.masses().iter().zip(b.masses()) {
        if pa > 0.0 {
            if pb <= 0.0 {
                return Ok(Divergence::Infinite);
            }
            total += pa * (pa / pb).ln();
        }
    }
    Ok(Divergence::Finite(total))
}

/// Chi-squared divergence `sum_{x: b(x) > 0} (a(x) - b(x))^2 / b(x)`,
/// infinite when `a` has mass outside the support of `b`.
pub fn chi2_divergence(a: &FiniteDistribution, b: &FiniteDistribution) -> Result<Divergence> {
    check_lengths(a, b)?;
    let mut total = 0.0;
    for (&pa, &pb) in a.masses().iter().zip(b.masses()) {
        if pb <= 0.0 {
            if pa > 0.0 {
                return Ok(Divergence::Infinite);
            }
        } else {
            let gap = pa - pb;
            total += gap * gap / pb;
        }
    }
    Ok(Divergence::Finite(total))
}

/// Clamp `x` into `[lo, hi]`.
pub fn clip(lo: f64, hi: f64, x: f64) -> f64 {
    debug_assert!(lo <= hi, "clip bounds out of order: [{lo}, {hi}]");
    x.max(lo).min(hi)
}
