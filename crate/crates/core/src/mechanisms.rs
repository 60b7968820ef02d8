//! Concrete mechanisms used by the deletion-stability wrapper, the
//! auditors, and the command-line experiments.
//!
//! Everything here exposes its exact output pmf through [`Mechanism`],
//! so closeness checks reduce to finite hockey-stick computations.

use crate::delstab::{binom, CountSummaryMechanism, Mechanism};
use crate::dist::{Dataset, FiniteDistribution, PrivacyParams};
use crate::em::{em_distribution, pac_scores, Hypothesis};
use crate::learners::{build_grid_cover, grid_scores, GridCover};
use crate::{Error, Result};

/// Ignores its input (after checking arity) and returns a fixed pmf.
/// Deletion-stable at every radius and every privacy level.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantMechanism {
    input_users: usize,
    m: usize,
    universe_size: usize,
    output: FiniteDistribution,
}

impl ConstantMechanism {
    pub fn new(
        input_users: usize,
        m: usize,
        universe_size: usize,
        output: FiniteDistribution,
    ) -> Self {
        Self {
            input_users,
            m,
            universe_size,
            output,
        }
    }
}

impl Mechanism for ConstantMechanism {
    fn input_users(&self) -> usize {
        self.input_users
    }

    fn m(&self) -> usize {
        self.m
    }

    fn universe_size(&self) -> usize {
        self.universe_size
    }

    fn output_size(&self) -> usize {
        self.output.len()
    }

    fn eval(&self, ds: &Dataset) -> Result<FiniteDistribution> {
        check_shape(self, ds)?;
        Ok(self.output.clone())
    }
}

fn check_shape(mech: &dyn Mechanism, ds: &Dataset) -> Result<()> {
    if ds.n() != mech.input_users() {
        return Err(Error::InvalidDataset(format!(
            "mechanism expects {} users, dataset has {}",
            mech.input_users(),
            ds.n()
        )));
    }
    if ds.m() != mech.m() || ds.universe_size() != mech.universe_size() {
        return Err(Error::InvalidDataset(format!(
            "mechanism expects shape m = {}, universe = {}, dataset has m = {}, universe = {}",
            mech.m(),
            mech.universe_size(),
            ds.m(),
            ds.universe_size()
        )));
    }
    Ok(())
}

/// Forwards a mechanism but hides every fast-path hook, forcing callers
/// through the generic enumeration code. Test-oriented but public: it is
/// the reference implementation the fast paths are checked against.
#[derive(Clone, Copy)]
pub struct Opaque<'a> {
    inner: &'a dyn Mechanism,
}

impl<'a> Opaque<'a> {
    pub fn new(inner: &'a dyn Mechanism) -> Self {
        Self { inner }
    }
}

impl Mechanism for Opaque<'_> {
    fn input_users(&self) -> usize {
        self.inner.input_users()
    }

    fn m(&self) -> usize {
        self.inner.m()
    }

    fn universe_size(&self) -> usize {
        self.inner.universe_size()
    }

    fn output_size(&self) -> usize {
        self.inner.output_size()
    }

    fn eval(&self, ds: &Dataset) -> Result<FiniteDistribution> {
        self.inner.eval(ds)
    }
}

fn flip_probabilities(eps0: f64) -> Result<(f64, f64)> {
    if !eps0.is_finite() || eps0 <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "randomized response needs a positive finite eps0, got {eps0}"
        )));
    }
    let p = eps0.exp() / (1.0 + eps0.exp());
    Ok((p, 1.0 - p))
}

/// Exact pmf of `Binomial(t, p) + Binomial(rest, q)` on `{0, .., t + rest}`.
fn reported_ones_pmf(t: usize, rest: usize, p: f64, q: f64) -> Vec<f64> {
    let pmf = |trials: usize, succ: f64| -> Vec<f64> {
        (0..=trials)
            .map(|j| {
                binom(trials as u64, j as u64).expect("small binomial") as f64
                    * succ.powi(j as i32)
                    * (1.0 - succ).powi((trials - j) as i32)
            })
            .collect()
    };
    let a = pmf(t, p);
    let b = pmf(rest, q);
    let mut out = vec![0.0; t + rest + 1];
    for (i, &pa) in a.iter().enumerate() {
        for (j, &pb) in b.iter().enumerate() {
            out[i + j] += pa * pb;
        }
    }
    out
}

/// Randomized response reduced to its sufficient statistic: each of the
/// `input_users * m` bits is reported truthfully with probability
/// `e^eps0 / (1 + e^eps0)` and the output is the number of reported ones.
/// The output law depends only on the number of true ones, so this is a
/// [`CountSummaryMechanism`] with item values `{0, 1}`.
pub fn rr_count(input_users: usize, m: usize, eps0: f64) -> Result<CountSummaryMechanism> {
    let (p, q) = flip_probabilities(eps0)?;
    let bits = input_users
        .checked_mul(m)
        .filter(|&b| b <= 1 << 16)
        .ok_or_else(|| {
            Error::InvalidParams("randomized response count table too large".into())
        })?;
    let table = (0..=bits)
        .map(|t| FiniteDistribution::new(reported_ones_pmf(t, bits - t, p, q)))
        .collect::<Result<Vec<_>>>()?;
    CountSummaryMechanism::new(input_users, m, vec![0, 1], table)
}

/// Bitwise randomized response over one bit per user, keeping the full
/// output vector.
///
/// Properties.
///
/// | quantity | value |
/// |---|---|
/// | output law at `o` | `p^(bits - H(o, x)) q^(H(o, x))`, `H` Hamming distance |
/// | density ratio across inputs at distance `d` | `e^(eps0 (2j - d))`, `j ~ Binomial(d, p)` |
/// | hockey-stick at `e^eps` | `sum_j C(d, j) p^j q^(d-j) [1 - e^(eps - (2j-d) eps0)]_+` |
///
/// The hockey-stick closed form is what [`Mechanism::pair_indist`] uses, so
/// pairs are checkable at sizes where the `2^bits` output pmf cannot be
/// materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedResponse {
    bits: usize,
    eps0: f64,
    truth: f64,
}

/// Largest output domain [`RandomizedResponse::eval`] will materialize.
const MAX_DENSE_BITS: usize = 20;

impl RandomizedResponse {
    pub fn new(bits: usize, eps0: f64) -> Result<Self> {
        let (p, _) = flip_probabilities(eps0)?;
        if bits == 0 || bits > 40 {
            return Err(Error::InvalidParams(format!(
                "randomized response supports 1 to 40 bits, got {bits}"
            )));
        }
        Ok(Self {
            bits,
            eps0,
            truth: p,
        })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    /// Probability that a single bit is reported truthfully.
    pub fn truth_probability(&self) -> f64 {
        self.truth
    }

    fn encode(&self, ds: &Dataset) -> Result<u64> {
        check_shape(self, ds)?;
        let mut x = 0u64;
        for (i, user) in ds.users().iter().enumerate() {
            x |= (user[0] as u64) << i;
        }
        Ok(x)
    }

    /// Hockey-stick divergence at `e^eps` between the output laws of any
    /// two inputs at Hamming distance `d`; symmetric in the two inputs.
    pub fn divergence_at_hamming(&self, d: usize, eps: f64) -> f64 {
        let (p, q) = (self.truth, 1.0 - self.truth);
        let mut total = 0.0;
        for j in 0..=d {
            let gap = 1.0 - (eps - (2.0 * j as f64 - d as f64) * self.eps0).exp();
            if gap > 0.0 {
                total += binom(d as u64, j as u64).expect("small binomial") as f64
                    * p.powi(j as i32)
                    * q.powi((d - j) as i32)
                    * gap;
            }
        }
        total
    }
}

impl Mechanism for RandomizedResponse {
    fn input_users(&self) -> usize {
        self.bits
    }

    fn m(&self) -> usize {
        1
    }

    fn universe_size(&self) -> usize {
        2
    }

    fn output_size(&self) -> usize {
        1 << self.bits
    }

    fn eval(&self, ds: &Dataset) -> Result<FiniteDistribution> {
        if self.bits > MAX_DENSE_BITS {
            return Err(Error::BudgetExceeded(format!(
                "dense randomized-response pmf needs 2^{} entries; use pair_indist",
                self.bits
            )));
        }
        let x = self.encode(ds)?;
        let (p, q) = (self.truth, 1.0 - self.truth);
        let masses = (0..1u64 << self.bits)
            .map(|o| {
                let d = (o ^ x).count_ones() as i32;
                p.powi(self.bits as i32 - d) * q.powi(d)
            })
            .collect();
        FiniteDistribution::new(masses)
    }

    fn pair_indist(&self, a: &Dataset, b: &Dataset, pp: &PrivacyParams) -> Result<bool> {
        let d = (self.encode(a)? ^ self.encode(b)?).count_ones() as usize;
        Ok(self.divergence_at_hamming(d, pp.epsilon()) <= pp.delta() + 1e-12)
    }
}

/// Exponential-mechanism PAC selection as an exact mechanism: scores are
/// the per-hypothesis counts of unrealized users, sensitivity 1, and the
/// output is the index of the selected hypothesis.
#[derive(Debug)]
pub struct PacEmMechanism {
    hypotheses: Vec<Hypothesis>,
    input_users: usize,
    m: usize,
    epsilon: f64,
}

impl PacEmMechanism {
    pub fn new(
        hypotheses: Vec<Hypothesis>,
        input_users: usize,
        m: usize,
        epsilon: f64,
    ) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(Error::InvalidArgument("empty hypothesis set".into()));
        }
        if hypotheses.iter().any(|h| h.points() != hypotheses[0].points()) {
            return Err(Error::InvalidArgument(
                "hypotheses must share a point domain".into(),
            ));
        }
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::InvalidParams(format!(
                "epsilon must be finite and non-negative, got {epsilon}"
            )));
        }
        Ok(Self {
            hypotheses,
            input_users,
            m,
            epsilon,
        })
    }
}

impl Mechanism for PacEmMechanism {
    fn input_users(&self) -> usize {
        self.input_users
    }

    fn m(&self) -> usize {
        self.m
    }

    fn universe_size(&self) -> usize {
        2 * self.hypotheses[0].points()
    }

    fn output_size(&self) -> usize {
        self.hypotheses.len()
    }

    fn eval(&self, ds: &Dataset) -> Result<FiniteDistribution> {
        check_shape(self, ds)?;
        em_distribution(&pac_scores(&self.hypotheses, ds)?, self.epsilon)
    }
}

/// End-to-end discrete distribution learning as an exact mechanism: the
/// output is the index of the selected grid-cover member.
#[derive(Debug)]
pub struct LearnDiscreteMechanism {
    cover: GridCover,
    input_users: usize,
    m: usize,
    alpha: f64,
    epsilon: f64,
    c_tau: f64,
}

impl LearnDiscreteMechanism {
    pub fn new(
        input_users: usize,
        m: usize,
        k: usize,
        alpha: f64,
        epsilon: f64,
        c_tau: f64,
        budget: u64,
    ) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::InvalidParams(format!(
                "epsilon must be finite and non-negative, got {epsilon}"
            )));
        }
        let cover = build_grid_cover(k, alpha, budget)?;
        Ok(Self {
            cover,
            input_users,
            m,
            alpha,
            epsilon,
            c_tau,
        })
    }

    pub fn cover(&self) -> &GridCover {
        &self.cover
    }
}

impl Mechanism for LearnDiscreteMechanism {
    fn input_users(&self) -> usize {
        self.input_users
    }

    fn m(&self) -> usize {
        self.m
    }

    fn universe_size(&self) -> usize {
        self.cover.k()
    }

    fn output_size(&self) -> usize {
        self.cover.len()
    }

    fn eval(&self, ds: &Dataset) -> Result<FiniteDistribution> {
        check_shape(self, ds)?;
        em_distribution(
            &grid_scores(&self.cover, ds, self.alpha, self.c_tau)?,
            self.epsilon,
        )
    }
}
