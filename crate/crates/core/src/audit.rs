//! Brute-force and sampled verification of DP guarantees, plus empirical
//! estimation of sample perfect generalization.
//!
//! The exhaustive auditor enumerates every dataset over a finite universe
//! and every neighbor of it, computes the hockey-stick divergence in both
//! directions, and compares the maximum against `delta`. This is the
//! ground truth the rest of the crate is checked against; it is also
//! exponential, so it guards itself with an explicit work budget.

use crate::delstab::Mechanism;
use crate::dist::{hockey_stick, Dataset, FiniteDistribution, PrivacyParams};
use crate::seeding::trial_rng;
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Slack added to `delta` in verdicts; covers floating-point error in the
/// divergence sums, not a relaxation of the privacy guarantee.
pub const AUDIT_TOLERANCE: f64 = 1e-9;

/// How neighbor pairs are generated.
#[derive(Debug, Clone, Default)]
pub enum AuditMode {
    /// Every dataset and every neighbor; requires the work to fit the
    /// budget.
    #[default]
    Exhaustive,
    /// `budget` random (dataset, replacement) pairs. The replacement is
    /// drawn per item from `replacement` when given, uniformly otherwise.
    Sampled {
        replacement: Option<FiniteDistribution>,
    },
}

impl AuditMode {
    pub fn sampled() -> Self {
        AuditMode::Sampled { replacement: None }
    }

    fn label(&self) -> &'static str {
        match self {
            AuditMode::Exhaustive => "exhaustive",
            AuditMode::Sampled { .. } => "sampled",
        }
    }
}

/// The neighbor pair achieving the reported maximum divergence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborPair {
    pub left: Vec<Vec<usize>>,
    pub right: Vec<Vec<usize>>,
}

/// Outcome of a DP audit.
///
/// | field | meaning |
/// |---|---|
/// | `pairs_checked` | unordered neighbor pairs examined |
/// | `max_divergence` | largest hockey-stick value over both directions |
/// | `verdict` | `pass` iff `max_divergence <= delta + tolerance` |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub mode: String,
    pub pairs_checked: u64,
    pub max_divergence: f64,
    pub worst_pair: Option<NeighborPair>,
    pub verdict: String,
    pub tolerance: f64,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.verdict == "pass"
    }
}

/// Point estimate and exact binomial 95% bounds for the probability that
/// two independent same-law inputs produce indistinguishable outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpgReport {
    pub trials: u64,
    pub indistinguishable: u64,
    pub fraction: f64,
    pub lower_95: f64,
    pub upper_95: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Granularity {
    User,
    Item,
}

/// Check `(eps, delta)` closeness of output laws across all or sampled
/// pairs of datasets differing in one user's full record.
#[allow(clippy::too_many_arguments)]
pub fn verify_user_dp(
    mech: &dyn Mechanism,
    universe_size: usize,
    n: usize,
    m: usize,
    pp: &PrivacyParams,
    mode: &AuditMode,
    budget: u64,
    rng_seed: u64,
) -> Result<AuditReport> {
    verify(
        mech,
        universe_size,
        n,
        m,
        pp,
        mode,
        budget,
        rng_seed,
        Granularity::User,
    )
}

/// Check `(eps, delta)` closeness across pairs differing in one item of
/// one user.
#[allow(clippy::too_many_arguments)]
pub fn verify_item_dp(
    mech: &dyn Mechanism,
    universe_size: usize,
    n: usize,
    m: usize,
    pp: &PrivacyParams,
    mode: &AuditMode,
    budget: u64,
    rng_seed: u64,
) -> Result<AuditReport> {
    verify(
        mech,
        universe_size,
        n,
        m,
        pp,
        mode,
        budget,
        rng_seed,
        Granularity::Item,
    )
}

#[allow(clippy::too_many_arguments)]
fn verify(
    mech: &dyn Mechanism,
    universe_size: usize,
    n: usize,
    m: usize,
    pp: &PrivacyParams,
    mode: &AuditMode,
    budget: u64,
    rng_seed: u64,
    level: Granularity,
) -> Result<AuditReport> {
    if mech.input_users() != n || mech.m() != m || mech.universe_size() != universe_size {
        return Err(Error::InvalidArgument(format!(
            "audit shape ({n} users, m = {m}, universe = {universe_size}) does not \
             match the mechanism ({}, {}, {})",
            mech.input_users(),
            mech.m(),
            mech.universe_size()
        )));
    }
    let (pairs_checked, max_divergence, worst_pair) = match mode {
        AuditMode::Exhaustive => exhaustive_scan(mech, universe_size, n, m, pp, budget, level)?,
        AuditMode::Sampled { replacement } => {
            if let Some(r) = replacement {
                if r.len() != universe_size {
                    return Err(Error::LengthMismatch(r.len(), universe_size));
                }
            }
            sampled_scan(
                mech,
                universe_size,
                n,
                m,
                pp,
                budget,
                rng_seed,
                replacement.as_ref(),
                level,
            )?
        }
    };
    let verdict = if max_divergence <= pp.delta() + AUDIT_TOLERANCE {
        "pass"
    } else {
        "fail"
    };
    Ok(AuditReport {
        mode: mode.label().to_string(),
        pairs_checked,
        max_divergence,
        worst_pair,
        verdict: verdict.to_string(),
        tolerance: AUDIT_TOLERANCE,
    })
}

/// Both hockey-stick directions; the definition requires each to clear
/// `delta` on its own.
fn pair_divergence(
    a: &FiniteDistribution,
    b: &FiniteDistribution,
    eps: f64,
) -> Result<f64> {
    let fwd = hockey_stick(a, b, eps)?;
    let bwd = hockey_stick(b, a, eps)?;
    Ok(fwd.max(bwd))
}

fn decode_dataset(code: u128, universe_size: usize, n: usize, m: usize) -> Result<Dataset> {
    let mut rest = code;
    let users = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| {
                    let d = (rest % universe_size as u128) as usize;
                    rest /= universe_size as u128;
                    d
                })
                .collect()
        })
        .collect();
    Dataset::new(universe_size, m, users)
}

fn exhaustive_scan(
    mech: &dyn Mechanism,
    universe_size: usize,
    n: usize,
    m: usize,
    pp: &PrivacyParams,
    budget: u64,
    level: Granularity,
) -> Result<(u64, f64, Option<NeighborPair>)> {
    let u = universe_size as u128;
    let record_space = u
        .checked_pow(m as u32)
        .ok_or_else(|| Error::BudgetExceeded("record space overflows".into()))?;
    let dataset_count = record_space
        .checked_pow(n as u32)
        .ok_or_else(|| Error::BudgetExceeded("dataset space overflows".into()))?;
    let neighbors_per_dataset = match level {
        Granularity::User => n as u128 * (record_space - 1),
        Granularity::Item => (n * m) as u128 * (u - 1),
    };
    let work = dataset_count
        .checked_mul(neighbors_per_dataset)
        .ok_or_else(|| Error::BudgetExceeded("audit work overflows".into()))?;
    if work > u128::from(budget) {
        return Err(Error::BudgetExceeded(format!(
            "exhaustive audit needs {work} pair checks, budget is {budget}"
        )));
    }
    if neighbors_per_dataset == 0 {
        return Ok((0, 0.0, None));
    }

    let total = usize::try_from(dataset_count)
        .map_err(|_| Error::BudgetExceeded("dataset space exceeds memory".into()))?;
    let mut evals = Vec::with_capacity(total);
    for code in 0..total {
        evals.push(mech.eval(&decode_dataset(code as u128, universe_size, n, m)?)?);
    }

    let mut pairs: u64 = 0;
    let mut max_div = f64::NEG_INFINITY;
    let mut worst: Option<(u128, u128)> = None;
    let mut scan = |code: u128, other: u128| -> Result<()> {
        if other <= code {
            return Ok(());
        }
        let d = pair_divergence(
            &evals[code as usize],
            &evals[other as usize],
            pp.epsilon(),
        )?;
        pairs += 1;
        if d > max_div {
            max_div = d;
            worst = Some((code, other));
        }
        Ok(())
    };

    for code in 0..dataset_count {
        match level {
            Granularity::User => {
                for i in 0..n {
                    let base = record_space.pow(i as u32);
                    let cur = code / base % record_space;
                    for enc in 0..record_space {
                        if enc != cur {
                            scan(code, code - cur * base + enc * base)?;
                        }
                    }
                }
            }
            Granularity::Item => {
                for pos in 0..n * m {
                    let base = u.pow(pos as u32);
                    let cur = code / base % u;
                    for v in 0..u {
                        if v != cur {
                            scan(code, code - cur * base + v * base)?;
                        }
                    }
                }
            }
        }
    }
    let (max_div, worst_pair) = match worst {
        Some((a, b)) => (
            max_div,
            Some(NeighborPair {
                left: decode_dataset(a, universe_size, n, m)?.users().to_vec(),
                right: decode_dataset(b, universe_size, n, m)?.users().to_vec(),
            }),
        ),
        None => (0.0, None),
    };
    Ok((pairs, max_div, worst_pair))
}

#[allow(clippy::too_many_arguments)]
fn sampled_scan(
    mech: &dyn Mechanism,
    universe_size: usize,
    n: usize,
    m: usize,
    pp: &PrivacyParams,
    budget: u64,
    rng_seed: u64,
    replacement: Option<&FiniteDistribution>,
    level: Granularity,
) -> Result<(u64, f64, Option<NeighborPair>)> {
    let mut max_div = f64::NEG_INFINITY;
    let mut worst: Option<NeighborPair> = None;
    for t in 0..budget {
        let mut rng = trial_rng(rng_seed, t);
        let users: Vec<Vec<usize>> = (0..n)
            .map(|_| (0..m).map(|_| rng.gen_range(0..universe_size)).collect())
            .collect();
        let ds = Dataset::new(universe_size, m, users)?;
        let draw = |rng: &mut rand_chacha::ChaCha12Rng| match replacement {
            Some(d) => d.sample(rng),
            None => rng.gen_range(0..universe_size),
        };
        let neighbor = match level {
            Granularity::User => {
                let i = rng.gen_range(0..n);
                let record: Vec<usize> = (0..m).map(|_| draw(&mut rng)).collect();
                ds.replace_user(i, record)?
            }
            Granularity::Item => {
                let i = rng.gen_range(0..n);
                let pos = rng.gen_range(0..m);
                let v = draw(&mut rng);
                ds.replace_item(i, pos, v)?
            }
        };
        let d = pair_divergence(&mech.eval(&ds)?, &mech.eval(&neighbor)?, pp.epsilon())?;
        if d > max_div {
            max_div = d;
            worst = Some(NeighborPair {
                left: ds.users().to_vec(),
                right: neighbor.users().to_vec(),
            });
        }
    }
    if worst.is_none() {
        max_div = 0.0;
    }
    Ok((budget, max_div, worst))
}

/// Estimate the probability that the mechanism's outputs on two
/// independent datasets of `n_samples` items drawn i.i.d. from `d` are
/// `(eps', delta')`-indistinguishable.
pub fn estimate_spg(
    mech: &dyn Mechanism,
    d: &FiniteDistribution,
    n_samples: usize,
    pp_prime: &PrivacyParams,
    trials: u64,
    rng_seed: u64,
) -> Result<SpgReport> {
    if mech.input_users() != n_samples || mech.m() != 1 || mech.universe_size() != d.len() {
        return Err(Error::InvalidArgument(format!(
            "mechanism must consume {n_samples} single-item users over a universe of {}",
            d.len()
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let mut hits: u64 = 0;
    for t in 0..trials {
        let mut rng = trial_rng(rng_seed, t);
        let mut fresh = || -> Result<Dataset> {
            let users = (0..n_samples).map(|_| vec![d.sample(&mut rng)]).collect();
            Dataset::new(d.len(), 1, users)
        };
        let x = fresh()?;
        let x_prime = fresh()?;
        if mech.pair_indist(&x, &x_prime, pp_prime)? {
            hits += 1;
        }
    }
    let (lower_95, upper_95) = clopper_pearson(hits, trials, 0.05);
    Ok(SpgReport {
        trials,
        indistinguishable: hits,
        fraction: hits as f64 / trials as f64,
        lower_95,
        upper_95,
    })
}

/// `P[Binomial(n, p) >= k]`, computed in log space.
fn binomial_upper_tail(n: u64, k: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_terms = Vec::with_capacity((n - k + 1) as usize);
    let mut log_binom = 0.0;
    for j in 0..=n {
        if j >= k {
            log_terms.push(log_binom + j as f64 * lp + (n - j) as f64 * lq);
        }
        if j < n {
            log_binom += ((n - j) as f64).ln() - ((j + 1) as f64).ln();
        }
    }
    let peak = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_terms.iter().map(|&t| (t - peak).exp()).sum();
    (peak.exp() * sum).min(1.0)
}

/// Exact two-sided Clopper-Pearson interval at confidence `1 - alpha`.
fn clopper_pearson(k: u64, n: u64, alpha: f64) -> (f64, f64) {
    let half = alpha / 2.0;
    let solve = |target_tail: f64, tail_of: &dyn Fn(f64) -> f64| -> f64 {
        // tail_of is increasing in p; bisect for tail_of(p) == target_tail.
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if tail_of(mid) < target_tail {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let lower = if k == 0 {
        0.0
    } else {
        solve(half, &|p| binomial_upper_tail(n, k, p))
    };
    let upper = if k == n {
        1.0
    } else {
        solve(1.0 - half, &|p| binomial_upper_tail(n, k + 1, p))
    };
    (lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::Hypothesis;
    use crate::mechanisms::{ConstantMechanism, PacEmMechanism, RandomizedResponse};

    const BUDGET: u64 = 10_000_000;

    fn pp(e: f64, d: f64) -> PrivacyParams {
        PrivacyParams::new(e, d).unwrap()
    }

    /// Outputs the first user's first item; maximally revealing.
    struct FirstItem {
        n: usize,
    }

    impl Mechanism for FirstItem {
        fn input_users(&self) -> usize {
            self.n
        }
        fn m(&self) -> usize {
            1
        }
        fn universe_size(&self) -> usize {
            2
        }
        fn output_size(&self) -> usize {
            2
        }
        fn eval(&self, ds: &Dataset) -> Result<FiniteDistribution> {
            FiniteDistribution::point(2, ds.user(0)[0])
        }
    }

    #[test]
    fn constant_mechanism_passes_everywhere() {
        let mech = ConstantMechanism::new(2, 1, 3, FiniteDistribution::uniform(4).unwrap());
        for level in [verify_user_dp, verify_item_dp] {
            let report = level(
                &mech,
                3,
                2,
                1,
                &pp(0.0, 0.0),
                &AuditMode::Exhaustive,
                BUDGET,
                0,
            )
            .unwrap();
            assert!(report.passed());
            assert_eq!(report.max_divergence, 0.0);
            assert_eq!(report.mode, "exhaustive");
        }
    }

    #[test]
    fn revealing_mechanism_fails_at_any_finite_epsilon() {
        let mech = FirstItem { n: 2 };
        let report = verify_user_dp(
            &mech,
            2,
            2,
            1,
            &pp(8.0, 0.0),
            &AuditMode::Exhaustive,
            BUDGET,
            0,
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.max_divergence, 1.0);
        let worst = report.worst_pair.unwrap();
        assert_ne!(worst.left[0], worst.right[0]);
    }

    #[test]
    fn pac_em_is_pure_dp_at_its_epsilon() {
        let hyps = vec![
            Hypothesis::new(vec![0]).unwrap(),
            Hypothesis::new(vec![1]).unwrap(),
        ];
        let mech = PacEmMechanism::new(hyps, 3, 2, 1.0).unwrap();
        let report = verify_user_dp(
            &mech,
            2,
            3,
            2,
            &pp(1.0, 0.0),
            &AuditMode::Exhaustive,
            BUDGET,
            0,
        )
        .unwrap();
        assert!(report.passed(), "max = {}", report.max_divergence);
        // 64 datasets, 3 users, 3 alternative records each, halved.
        assert_eq!(report.pairs_checked, 64 * 9 / 2);

        let item = verify_item_dp(
            &mech,
            2,
            3,
            2,
            &pp(1.0, 0.0),
            &AuditMode::Exhaustive,
            BUDGET,
            0,
        )
        .unwrap();
        assert!(item.passed());
        assert!(item.max_divergence <= report.max_divergence + 1e-15);
    }

    #[test]
    fn randomized_response_is_tight_at_its_epsilon() {
        let eps0 = 1.0;
        let mech = RandomizedResponse::new(1, eps0).unwrap();
        let at_eps = verify_item_dp(
            &mech,
            2,
            1,
            1,
            &pp(eps0, 0.0),
            &AuditMode::Exhaustive,
            BUDGET,
            0,
        )
        .unwrap();
        assert!(at_eps.passed());
        let below = verify_item_dp(
            &mech,
            2,
            1,
            1,
            &pp(0.99 * eps0, 0.0),
            &AuditMode::Exhaustive,
            BUDGET,
            0,
        )
        .unwrap();
        assert!(!below.passed());
    }

    #[test]
    fn budget_guard_rejects_oversized_exhaustive_audits() {
        let mech = FirstItem { n: 2 };
        let err = verify_user_dp(
            &mech,
            2,
            2,
            1,
            &pp(1.0, 0.0),
            &AuditMode::Exhaustive,
            3,
            0,
        )
        .unwrap_err();
        assert!(err.is_budget());
    }

    #[test]
    fn sampled_never_exceeds_exhaustive_and_reproduces() {
        let hyps = vec![
            Hypothesis::new(vec![0]).unwrap(),
            Hypothesis::new(vec![1]).unwrap(),
        ];
        let mech = PacEmMechanism::new(hyps, 2, 2, 1.5).unwrap();
        let p = pp(1.5, 0.0);
        let full = verify_user_dp(&mech, 2, 2, 2, &p, &AuditMode::Exhaustive, BUDGET, 0).unwrap();
        let sampled =
            verify_user_dp(&mech, 2, 2, 2, &p, &AuditMode::sampled(), 150, 42).unwrap();
        assert!(sampled.max_divergence <= full.max_divergence + 1e-15);
        assert_eq!(sampled.pairs_checked, 150);
        assert_eq!(sampled.mode, "sampled");

        let again =
            verify_user_dp(&mech, 2, 2, 2, &p, &AuditMode::sampled(), 150, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&sampled).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn spg_trivial_cases_hit_every_trial() {
        let constant = ConstantMechanism::new(3, 1, 2, FiniteDistribution::uniform(2).unwrap());
        let d = FiniteDistribution::new(vec![0.5, 0.5]).unwrap();
        let report = estimate_spg(&constant, &d, 3, &pp(0.1, 0.0), 50, 1).unwrap();
        assert_eq!(report.fraction, 1.0);
        assert!(report.lower_95 < 1.0 && report.lower_95 > 0.9);

        // A revealing mechanism is still fine under a point-mass source.
        let reveal = FirstItem { n: 3 };
        let point = FiniteDistribution::point(2, 1).unwrap();
        let report = estimate_spg(&reveal, &point, 3, &pp(0.0, 0.0), 30, 2).unwrap();
        assert_eq!(report.fraction, 1.0);
    }

    #[test]
    fn clopper_pearson_matches_closed_forms() {
        // k = n: lower bound solves p^n = alpha/2.
        let (lo, hi) = clopper_pearson(200, 200, 0.05);
        assert!((lo - 0.025f64.powf(1.0 / 200.0)).abs() < 1e-9);
        assert_eq!(hi, 1.0);
        // k = 0 mirrors it.
        let (lo0, hi0) = clopper_pearson(0, 200, 0.05);
        assert_eq!(lo0, 0.0);
        assert!((hi0 - (1.0 - 0.025f64.powf(1.0 / 200.0))).abs() < 1e-9);
        let (l, u) = clopper_pearson(120, 200, 0.05);
        assert!(l < 0.6 && 0.6 < u);
    }
}
