//! Local-deletion DP checking and the deletion-stability wrapper.
//!
//! The wrapper turns a mechanism `A` on `n - 4k` users into a mechanism on
//! `n` users: draw a radius `R1` from a shifted truncated discrete Laplace,
//! test whether some deletion set `S` of size `R1` leaves `A` locally
//! deletion-stable, and if so run `A` on the dataset minus a uniform
//! `4k`-superset of a uniform stable `S`. If no stable set exists the
//! wrapper outputs `Bottom`.
//!
//! For [`CountSummaryMechanism`] (output law depends on the data only
//! through an additive integer summary) the wrapper's full output law is
//! computed exactly: users collapse into summary classes, deletion sets
//! into class-count profiles, and supersets into hypergeometric completions,
//! so no subset is ever enumerated explicitly.

use crate::calculus::{delstab_params, DelStabParams};
use crate::dist::{approx_indist, Dataset, FiniteDistribution, PrivacyParams};
use crate::noise::TdLap;
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// A randomized algorithm exposed through its exact output distribution.
pub trait Mechanism {
    /// Exact number of users an input dataset must have.
    fn input_users(&self) -> usize;
    /// Examples per user the mechanism expects.
    fn m(&self) -> usize;
    /// Item universe size the mechanism expects.
    fn universe_size(&self) -> usize;
    /// Size of the indexed output domain.
    fn output_size(&self) -> usize;
    /// The exact output pmf on a dataset; same dataset, same pmf.
    fn eval(&self, ds: &Dataset) -> Result<FiniteDistribution>;

    /// Downcast hook enabling polynomial-time deletion-stability audits.
    fn as_count_summary(&self) -> Option<&CountSummaryMechanism> {
        None
    }

    /// Whether the output laws on `a` and `b` are `(eps, delta)`-close in
    /// both directions. Overridable when a closed form beats materializing
    /// the pmfs.
    fn pair_indist(&self, a: &Dataset, b: &Dataset, pp: &PrivacyParams) -> Result<bool> {
        approx_indist(&self.eval(a)?, &self.eval(b)?, pp)
    }
}

/// A mechanism whose output law depends on the dataset only through the
/// total summary `sum_users sum_items value[z]`: `eval(ds) = table[total]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSummaryMechanism {
    input_users: usize,
    m: usize,
    item_values: Vec<u64>,
    table: Vec<FiniteDistribution>,
    output_size: usize,
}

impl CountSummaryMechanism {
    /// `item_values[z]` is the summary weight of universe item `z`; `table`
    /// must hold one output pmf per achievable total, i.e. exactly
    /// `input_users * m * max(item_values) + 1` rows of equal length.
    pub fn new(
        input_users: usize,
        m: usize,
        item_values: Vec<u64>,
        table: Vec<FiniteDistribution>,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("m must be positive".into()));
        }
        if item_values.is_empty() {
            return Err(Error::InvalidArgument("empty item universe".into()));
        }
        let max_value = *item_values.iter().max().expect("non-empty");
        let max_total = (input_users as u64) * (m as u64) * max_value;
        if table.len() as u64 != max_total + 1 {
            return Err(Error::InvalidArgument(format!(
                "table needs exactly {} rows (totals 0..={}), got {}",
                max_total + 1,
                max_total,
                table.len()
            )));
        }
        let output_size = table[0].len();
        if table.iter().any(|row| row.len() != output_size) {
            return Err(Error::InvalidArgument(
                "table rows must share one output domain".into(),
            ));
        }
        Ok(Self {
            input_users,
            m,
            item_values,
            table,
            output_size,
        })
    }

    /// Summary of one user record.
    pub fn user_summary(&self, record: &[usize]) -> u64 {
        record.iter().map(|&z| self.item_values[z]).sum()
    }

    pub fn item_values(&self) -> &[u64] {
        &self.item_values
    }

    pub fn table_row(&self, total: u64) -> Result<&FiniteDistribution> {
        self.table
            .get(total as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("total {total} beyond table")))
    }
}

impl Mechanism for CountSummaryMechanism {
    fn input_users(&self) -> usize {
        self.input_users
    }

    fn m(&self) -> usize {
        self.m
    }

    fn universe_size(&self) -> usize {
        self.item_values.len()
    }

    fn output_size(&self) -> usize {
        self.output_size
    }

    fn eval(&self, ds: &Dataset) -> Result<FiniteDistribution> {
        check_mechanism_arity(self, ds, self.input_users)?;
        let total: u64 = ds.users().iter().map(|u| self.user_summary(u)).sum();
        Ok(self.table_row(total)?.clone())
    }

    fn as_count_summary(&self) -> Option<&CountSummaryMechanism> {
        Some(self)
    }
}

/// Result of one wrapper run: a regular output index or the refusal symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelStabOutcome {
    Output(usize),
    Bottom,
}

/// Exact output law of the wrapper over `output domain + {Bottom}`; the
/// refusal symbol is the last index of [`DelStabLaw::distribution`].
#[derive(Debug, Clone, PartialEq)]
pub struct DelStabLaw {
    law: FiniteDistribution,
    params: DelStabParams,
}

impl DelStabLaw {
    fn from_masses(masses: Vec<f64>, params: DelStabParams) -> Result<Self> {
        Ok(Self {
            law: FiniteDistribution::new(masses)?,
            params,
        })
    }

    pub fn params(&self) -> DelStabParams {
        self.params
    }

    /// The law over the extended domain, `Bottom` last.
    pub fn distribution(&self) -> &FiniteDistribution {
        &self.law
    }

    /// Masses on the mechanism's own output domain.
    pub fn output_masses(&self) -> &[f64] {
        let all = self.law.masses();
        &all[..all.len() - 1]
    }

    pub fn bottom_mass(&self) -> f64 {
        self.law.mass(self.law.len() - 1)
    }

    /// The law conditioned on not refusing.
    pub fn conditional_on_output(&self) -> Result<FiniteDistribution> {
        let keep = 1.0 - self.bottom_mass();
        if keep <= 0.0 {
            return Err(Error::InvalidArgument(
                "law is all Bottom; nothing to condition on".into(),
            ));
        }
        FiniteDistribution::new(self.output_masses().iter().map(|&p| p / keep).collect())
    }
}

/// Enumeration budget in abstract operation units; exceeding it aborts an
/// audit with [`Error::BudgetExceeded`] rather than silently subsampling.
struct Budget {
    left: u64,
}

impl Budget {
    fn new(limit: u64) -> Self {
        Self { left: limit }
    }

    fn charge(&mut self, cost: u64, what: &str) -> Result<()> {
        if cost > self.left {
            return Err(Error::BudgetExceeded(format!(
                "{what} needs {cost} units beyond the remaining budget"
            )));
        }
        self.left -= cost;
        Ok(())
    }
}

pub(crate) fn binom(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut out: u128 = 1;
    for i in 1..=k {
        out = out.checked_mul(u128::from(n - k + i))?;
        out /= u128::from(i);
    }
    Some(out)
}

/// Visit all size-`r` subsets of `{0, .., n-1}` in lexicographic order.
fn for_each_combination(
    n: usize,
    r: usize,
    f: &mut impl FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    if r > n {
        return Ok(());
    }
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        f(&idx)?;
        let mut i = r;
        while i > 0 && idx[i - 1] == n - r + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return Ok(());
        }
        idx[i - 1] += 1;
        for j in i..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Visit all class-count vectors `k` with `sum k = size` and `k <= counts`.
fn for_each_profile(
    counts: &[usize],
    size: usize,
    f: &mut impl FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    fn rec(
        counts: &[usize],
        suffix: &[usize],
        k: &mut Vec<usize>,
        b: usize,
        remaining: usize,
        f: &mut impl FnMut(&[usize]) -> Result<()>,
    ) -> Result<()> {
        if remaining > suffix[b] {
            return Ok(());
        }
        if b == counts.len() {
            return f(k);
        }
        for q in 0..=counts[b].min(remaining) {
            k.push(q);
            rec(counts, suffix, k, b + 1, remaining - q, f)?;
            k.pop();
        }
        Ok(())
    }
    let mut suffix = vec![0usize; counts.len() + 1];
    for b in (0..counts.len()).rev() {
        suffix[b] = suffix[b + 1] + counts[b];
    }
    rec(counts, &suffix, &mut Vec::new(), 0, size, f)
}

fn check_mechanism_arity(mech: &dyn Mechanism, ds: &Dataset, want_users: usize) -> Result<()> {
    if ds.n() != want_users {
        return Err(Error::InvalidArgument(format!(
            "mechanism consumes {want_users} users, dataset has {}",
            ds.n()
        )));
    }
    if ds.m() != mech.m() {
        return Err(Error::InvalidArgument(format!(
            "mechanism expects m = {}, dataset has m = {}",
            mech.m(),
            ds.m()
        )));
    }
    if ds.universe_size() != mech.universe_size() {
        return Err(Error::LengthMismatch(
            ds.universe_size(),
            mech.universe_size(),
        ));
    }
    Ok(())
}

/// Users grouped by summary value; all wrapper quantities depend on the
/// dataset only through `(values, counts)`.
struct Classes {
    values: Vec<u64>,
    counts: Vec<usize>,
    full_total: u64,
}

fn summary_classes(cs: &CountSummaryMechanism, ds: &Dataset) -> Classes {
    let mut grouped: BTreeMap<u64, usize> = BTreeMap::new();
    let mut full_total = 0u64;
    for record in ds.users() {
        let s = cs.user_summary(record);
        full_total += s;
        *grouped.entry(s).or_insert(0) += 1;
    }
    let (values, counts) = grouped.into_iter().unzip();
    Classes {
        values,
        counts,
        full_total,
    }
}

/// Memoized both-direction closeness checks between table rows.
struct RowIndist<'a> {
    cs: &'a CountSummaryMechanism,
    pp: PrivacyParams,
    memo: HashMap<(u64, u64), bool>,
}

impl<'a> RowIndist<'a> {
    fn new(cs: &'a CountSummaryMechanism, pp: PrivacyParams) -> Self {
        Self {
            cs,
            pp,
            memo: HashMap::new(),
        }
    }

    fn close(&mut self, t1: u64, t2: u64) -> Result<bool> {
        if t1 == t2 {
            return Ok(true);
        }
        let key = (t1.min(t2), t1.max(t2));
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        let v = approx_indist(self.cs.table_row(key.0)?, self.cs.table_row(key.1)?, &self.pp)?;
        self.memo.insert(key, v);
        Ok(v)
    }

    /// True iff removing any further `distance` users from the class
    /// multiset `(values, rem_counts)` always lands on pairwise-close table
    /// rows: local-deletion DP of the count-summary mechanism.
    fn remaining_stable(
        &mut self,
        values: &[u64],
        rem_counts: &[usize],
        distance: usize,
        budget: &mut Budget,
    ) -> Result<bool> {
        let rem_total: u64 = values
            .iter()
            .zip(rem_counts)
            .map(|(&v, &c)| v * c as u64)
            .sum();
        let max_removable: u64 = values
            .iter()
            .zip(rem_counts)
            .map(|(&v, &c)| v * c.min(distance) as u64)
            .sum();
        let width = max_removable as usize + 1;
        budget.charge(
            (values.len() as u64) * (distance as u64 + 1) * (width as u64) * (distance as u64 + 1),
            "local-deletion reachability",
        )?;

        // reach[j][s]: some j-user subset of the remaining users has
        // summary sum s.
        let mut reach = vec![vec![false; width]; distance + 1];
        reach[0][0] = true;
        for (&v, &c) in values.iter().zip(rem_counts) {
            let mut next = vec![vec![false; width]; distance + 1];
            for j in 0..=distance {
                for (s, _) in reach[j].iter().enumerate().filter(|(_, &r)| r) {
                    for q in 0..=c.min(distance - j) {
                        let s2 = s + (v as usize) * q;
                        if s2 < width {
                            next[j + q][s2] = true;
                        }
                    }
                }
            }
            reach = next;
        }
        let totals: Vec<u64> = (0..width)
            .filter(|&s| reach[distance][s])
            .map(|s| rem_total - s as u64)
            .collect();
        budget.charge(
            (totals.len() as u64).pow(2) * self.cs.output_size() as u64,
            "table-row comparisons",
        )?;
        for i in 0..totals.len() {
            for j in i + 1..totals.len() {
                if !self.close(totals[i], totals[j])? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Stable deletion profiles at one radius, with subset multiplicities.
struct StableProfiles {
    profiles: Vec<(Vec<usize>, u128)>,
    stable_subsets: u128,
    total_subsets: u128,
}

fn stable_profiles(
    classes: &Classes,
    r1: usize,
    four_kappa: usize,
    rows: &mut RowIndist<'_>,
    budget: &mut Budget,
) -> Result<StableProfiles> {
    let n: usize = classes.counts.iter().sum();
    let mut profiles = Vec::new();
    let mut stable_subsets: u128 = 0;
    for_each_profile(&classes.counts, r1, &mut |k| {
        budget.charge(1, "deletion profiles")?;
        let rem: Vec<usize> = classes
            .counts
            .iter()
            .zip(k)
            .map(|(&c, &q)| c - q)
            .collect();
        if rows.remaining_stable(&classes.values, &rem, four_kappa - r1, budget)? {
            let mult = classes
                .counts
                .iter()
                .zip(k)
                .try_fold(1u128, |acc, (&c, &q)| {
                    acc.checked_mul(binom(c as u64, q as u64)?)
                })
                .ok_or_else(|| {
                    Error::BudgetExceeded("subset multiplicity overflows".into())
                })?;
            stable_subsets = stable_subsets
                .checked_add(mult)
                .ok_or_else(|| Error::BudgetExceeded("stable-set size overflows".into()))?;
            profiles.push((k.to_vec(), mult));
        }
        Ok(())
    })?;
    let total_subsets = binom(n as u64, r1 as u64)
        .ok_or_else(|| Error::BudgetExceeded("subset count overflows".into()))?;
    Ok(StableProfiles {
        profiles,
        stable_subsets,
        total_subsets,
    })
}

/// Whether `mech` is `(r, pp)`-locally-deletion DP at `ds`: the output laws
/// on `ds` minus any two size-`r` deletion sets are `(eps, delta)`-close in
/// both directions.
///
/// Count-summary mechanisms are checked through reachable summary totals;
/// anything else falls back to enumerating all `C(n, r)` deletion sets
/// against the `budget`.
pub fn lddp_check(
    mech: &dyn Mechanism,
    ds: &Dataset,
    r: usize,
    pp: &PrivacyParams,
    budget: u64,
) -> Result<bool> {
    let n = ds.n();
    if r > n {
        return Err(Error::InvalidArgument(format!(
            "deletion distance {r} exceeds {n} users"
        )));
    }
    if mech.input_users() != n - r {
        return Err(Error::InvalidArgument(format!(
            "mechanism consumes {} users, local-deletion at distance {r} leaves {}",
            mech.input_users(),
            n - r
        )));
    }
    let mut budget = Budget::new(budget);
    if let Some(cs) = mech.as_count_summary() {
        if ds.m() != cs.m() || ds.universe_size() != cs.universe_size() {
            return Err(Error::InvalidArgument(
                "dataset shape does not match the mechanism".into(),
            ));
        }
        let classes = summary_classes(cs, ds);
        let mut rows = RowIndist::new(cs, *pp);
        return rows.remaining_stable(&classes.values, &classes.counts, r, &mut budget);
    }

    let count = binom(n as u64, r as u64)
        .filter(|&c| c <= u128::from(u32::MAX))
        .ok_or_else(|| Error::BudgetExceeded("subset count overflows".into()))?;
    budget.charge(
        (count * count).min(u128::from(u64::MAX)) as u64,
        "deletion-set pair comparisons",
    )?;
    let mut distinct: Vec<FiniteDistribution> = Vec::new();
    let mut seen: HashMap<Vec<u64>, ()> = HashMap::new();
    for_each_combination(n, r, &mut |subset| {
        let law = mech.eval(&ds.remove_users(subset)?)?;
        let key: Vec<u64> = law.masses().iter().map(|m| m.to_bits()).collect();
        if seen.insert(key, ()).is_none() {
            distinct.push(law);
        }
        Ok(())
    })?;
    for i in 0..distinct.len() {
        for j in i + 1..distinct.len() {
            if !approx_indist(&distinct[i], &distinct[j], pp)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Number of stable size-`r1` deletion sets (and the total count
/// `C(n, r1)`), where stability means the mechanism is
/// `(4 kappa - r1, eps_bar, delta_bar)`-locally-deletion DP after the
/// deletion. The bar parameters derive from `pp`.
pub fn stable_subset_counts(
    mech: &dyn Mechanism,
    ds: &Dataset,
    pp: &PrivacyParams,
    r1: usize,
    budget: u64,
) -> Result<(u128, u128)> {
    let params = delstab_params(*pp)?;
    let four_kappa = 4 * params.kappa;
    check_wrapper_arity(mech, ds, four_kappa)?;
    if r1 > four_kappa {
        return Err(Error::InvalidArgument(format!(
            "radius {r1} exceeds 4 kappa = {four_kappa}"
        )));
    }
    let bar = PrivacyParams::new(params.eps_bar, params.delta_bar)?;
    let mut budget_state = Budget::new(budget);
    if let Some(cs) = mech.as_count_summary() {
        let classes = summary_classes(cs, ds);
        let mut rows = RowIndist::new(cs, bar);
        let prof = stable_profiles(&classes, r1, four_kappa, &mut rows, &mut budget_state)?;
        return Ok((prof.stable_subsets, prof.total_subsets));
    }
    let n = ds.n();
    let mut stable: u128 = 0;
    let total = binom(n as u64, r1 as u64)
        .ok_or_else(|| Error::BudgetExceeded("subset count overflows".into()))?;
    for_each_combination(n, r1, &mut |subset| {
        budget_state.charge(1, "stability probes")?;
        if lddp_check(
            mech,
            &ds.remove_users(subset)?,
            four_kappa - r1,
            &bar,
            budget_state.left,
        )? {
            stable += 1;
        }
        Ok(())
    })?;
    Ok((stable, total))
}

fn check_wrapper_arity(mech: &dyn Mechanism, ds: &Dataset, four_kappa: usize) -> Result<()> {
    if ds.n() < four_kappa {
        return Err(Error::InvalidArgument(format!(
            "the wrapper needs at least 4 kappa = {four_kappa} users, got {}",
            ds.n()
        )));
    }
    if mech.input_users() != ds.n() - four_kappa {
        return Err(Error::InvalidArgument(format!(
            "mechanism consumes {} users, wrapper hands it {}",
            mech.input_users(),
            ds.n() - four_kappa
        )));
    }
    if ds.m() != mech.m() || ds.universe_size() != mech.universe_size() {
        return Err(Error::InvalidArgument(
            "dataset shape does not match the mechanism".into(),
        ));
    }
    Ok(())
}

/// One seeded run of the deletion-stability wrapper.
///
/// Draw `R1` from the truncated Laplace; if no size-`R1` deletion set
/// leaves the mechanism locally deletion-stable, refuse with `Bottom`;
/// otherwise delete a uniform `4 kappa`-superset of a uniform stable set
/// and run the mechanism on the rest. Count-summary mechanisms run through
/// the class-profile machinery; anything else enumerates deletion sets
/// against the `budget`.
pub fn delstab_run<R: Rng>(
    mech: &dyn Mechanism,
    ds: &Dataset,
    pp: &PrivacyParams,
    rng: &mut R,
    budget: u64,
) -> Result<DelStabOutcome> {
    let params = delstab_params(*pp)?;
    let four_kappa = 4 * params.kappa;
    check_wrapper_arity(mech, ds, four_kappa)?;
    let noise = TdLap::new(params.eps_bar, params.delta_bar)?;
    debug_assert_eq!(noise.kappa(), params.kappa);
    let bar = PrivacyParams::new(params.eps_bar, params.delta_bar)?;
    let r1 = noise.sample(rng);
    let mut budget_state = Budget::new(budget);

    if let Some(cs) = mech.as_count_summary() {
        let classes = summary_classes(cs, ds);
        let mut rows = RowIndist::new(cs, bar);
        let prof = stable_profiles(&classes, r1, four_kappa, &mut rows, &mut budget_state)?;
        if prof.stable_subsets == 0 {
            return Ok(DelStabOutcome::Bottom);
        }
        // Uniform stable S: pick its class profile with probability
        // proportional to multiplicity; the identity of S beyond its
        // profile never affects the output.
        let mut pick = rng.gen_range(0..prof.stable_subsets);
        let mut chosen = &prof.profiles[0].0;
        for (k, mult) in &prof.profiles {
            if pick < *mult {
                chosen = k;
                break;
            }
            pick -= mult;
        }
        // Uniform superset T of size 4 kappa: draw the completion
        // uniformly without replacement from the remaining users.
        let mut pool: Vec<usize> = Vec::with_capacity(ds.n() - r1);
        for (b, (&c, &q)) in classes.counts.iter().zip(chosen).enumerate() {
            pool.extend(std::iter::repeat_n(b, c - q));
        }
        let mut removed: u64 = classes
            .values
            .iter()
            .zip(chosen)
            .map(|(&v, &q)| v * (q as u64))
            .sum();
        for idx in rand::seq::index::sample(rng, pool.len(), four_kappa - r1) {
            removed += classes.values[pool[idx]];
        }
        let row = cs.table_row(classes.full_total - removed)?;
        return Ok(DelStabOutcome::Output(row.sample(rng)));
    }

    let n = ds.n();
    let subset_count = binom(n as u64, r1 as u64)
        .filter(|&c| c <= u128::from(u32::MAX))
        .ok_or_else(|| Error::BudgetExceeded("subset count overflows".into()))?;
    budget_state.charge(subset_count as u64, "stability probes")?;
    let mut stable: Vec<Vec<usize>> = Vec::new();
    for_each_combination(n, r1, &mut |subset| {
        if lddp_check(
            mech,
            &ds.remove_users(subset)?,
            four_kappa - r1,
            &bar,
            budget_state.left,
        )? {
            stable.push(subset.to_vec());
        }
        Ok(())
    })?;
    if stable.is_empty() {
        return Ok(DelStabOutcome::Bottom);
    }
    let s = &stable[rng.gen_range(0..stable.len())];
    let mut in_s = vec![false; n];
    for &i in s {
        in_s[i] = true;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| !in_s[i]).collect();
    let mut t = s.clone();
    for idx in rand::seq::index::sample(rng, rest.len(), four_kappa - r1) {
        t.push(rest[idx]);
    }
    let law = mech.eval(&ds.remove_users(&t)?)?;
    Ok(DelStabOutcome::Output(law.sample(rng)))
}

/// Exact output law of [`delstab_run`] for a count-summary mechanism,
/// mixing over the Laplace radius, the uniform stable deletion set, and
/// the uniform superset completion. Deletion sets are grouped by class
/// profile; completions follow a multivariate hypergeometric over classes.
pub fn delstab_distribution(
    cs: &CountSummaryMechanism,
    ds: &Dataset,
    pp: &PrivacyParams,
    budget: u64,
) -> Result<DelStabLaw> {
    let params = delstab_params(*pp)?;
    let four_kappa = 4 * params.kappa;
    check_wrapper_arity(cs, ds, four_kappa)?;
    let noise = TdLap::new(params.eps_bar, params.delta_bar)?;
    debug_assert_eq!(noise.kappa(), params.kappa);
    let bar = PrivacyParams::new(params.eps_bar, params.delta_bar)?;
    let classes = summary_classes(cs, ds);
    let mut rows = RowIndist::new(cs, bar);
    let mut budget_state = Budget::new(budget);

    let bottom = cs.output_size();
    let mut masses = vec![0.0; cs.output_size() + 1];
    for r1 in 0..=2 * params.kappa {
        let p_r1 = noise.mass(r1);
        let prof = stable_profiles(&classes, r1, four_kappa, &mut rows, &mut budget_state)?;
        if prof.stable_subsets == 0 {
            masses[bottom] += p_r1;
            continue;
        }
        let completion_total = binom((ds.n() - r1) as u64, (four_kappa - r1) as u64)
            .ok_or_else(|| Error::BudgetExceeded("completion count overflows".into()))?
            as f64;
        for (k, mult) in &prof.profiles {
            let w_profile = p_r1 * (*mult as f64 / prof.stable_subsets as f64);
            let rem: Vec<usize> = classes.counts.iter().zip(k).map(|(&c, &q)| c - q).collect();
            let deleted_base: u64 = classes
                .values
                .iter()
                .zip(k)
                .map(|(&v, &q)| v * q as u64)
                .sum();
            for_each_profile(&rem, four_kappa - r1, &mut |q| {
                budget_state.charge(
                    cs.output_size() as u64 + 1,
                    "completion accumulation",
                )?;
                let ways = rem
                    .iter()
                    .zip(q)
                    .try_fold(1u128, |acc, (&a, &b)| {
                        acc.checked_mul(binom(a as u64, b as u64)?)
                    })
                    .ok_or_else(|| {
                        Error::BudgetExceeded("completion multiplicity overflows".into())
                    })?;
                let removed: u64 = deleted_base
                    + classes
                        .values
                        .iter()
                        .zip(q)
                        .map(|(&v, &b)| v * (b as u64))
                        .sum::<u64>();
                let w = w_profile * (ways as f64 / completion_total);
                let row = cs.table_row(classes.full_total - removed)?;
                for (o, &mass) in row.masses().iter().enumerate() {
                    masses[o] += w * mass;
                }
                Ok(())
            })?;
        }
    }
    DelStabLaw::from_masses(masses, params)
}

/// Law of "delete a uniform `4 kappa`-subset and run the mechanism": the
/// wrapper's law conditioned on never refusing. Equals
/// `delstab_distribution` conditioned on output whenever the mechanism is
/// locally deletion-stable at the full dataset.
pub fn subsample_law(
    cs: &CountSummaryMechanism,
    ds: &Dataset,
    pp: &PrivacyParams,
    budget: u64,
) -> Result<FiniteDistribution> {
    let params = delstab_params(*pp)?;
    let four_kappa = 4 * params.kappa;
    check_wrapper_arity(cs, ds, four_kappa)?;
    let classes = summary_classes(cs, ds);
    let mut budget_state = Budget::new(budget);
    let denom = binom(ds.n() as u64, four_kappa as u64)
        .ok_or_else(|| Error::BudgetExceeded("subset count overflows".into()))?
        as f64;
    let mut masses = vec![0.0; cs.output_size()];
    for_each_profile(&classes.counts, four_kappa, &mut |t| {
        budget_state.charge(cs.output_size() as u64 + 1, "subsample accumulation")?;
        let ways = classes
            .counts
            .iter()
            .zip(t)
            .try_fold(1u128, |acc, (&c, &q)| acc.checked_mul(binom(c as u64, q as u64)?))
            .ok_or_else(|| Error::BudgetExceeded("subset multiplicity overflows".into()))?;
        let removed: u64 = classes
            .values
            .iter()
            .zip(t)
            .map(|(&v, &q)| v * (q as u64))
            .sum();
        let w = ways as f64 / denom;
        let row = cs.table_row(classes.full_total - removed)?;
        for (o, &mass) in row.masses().iter().enumerate() {
            masses[o] += w * mass;
        }
        Ok(())
    })?;
    FiniteDistribution::new(masses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::tv_distance;
    use crate::mechanisms::{rr_count, ConstantMechanism, Opaque};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    const BUDGET: u64 = 200_000_000;

    fn pp(e: f64, d: f64) -> PrivacyParams {
        PrivacyParams::new(e, d).unwrap()
    }

    /// n users of one bit each, `ones` of them holding a 1.
    fn bit_dataset(n: usize, ones: usize) -> Dataset {
        let users = (0..n).map(|i| vec![usize::from(i < ones)]).collect();
        Dataset::new(2, 1, users).unwrap()
    }

    /// Single-user bit mechanism with the two table rows given.
    fn two_row_mech(row0: Vec<f64>, row1: Vec<f64>) -> CountSummaryMechanism {
        CountSummaryMechanism::new(
            1,
            1,
            vec![0, 1],
            vec![
                FiniteDistribution::new(row0).unwrap(),
                FiniteDistribution::new(row1).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn constant_mechanism_is_lddp_and_never_refuses() {
        // eps = 6, delta = 0.5 gives kappa = 4, so the wrapper wants
        // 16 + input_users users.
        let out = FiniteDistribution::new(vec![0.25, 0.75]).unwrap();
        let mech = ConstantMechanism::new(2, 1, 2, out.clone());
        let ds = bit_dataset(18, 7);
        assert!(lddp_check(&mech, &ds, 16, &pp(0.1, 0.0), BUDGET).unwrap());

        let p = pp(6.0, 0.5);
        let cs_form = CountSummaryMechanism::new(
            2,
            1,
            vec![0, 0],
            vec![out.clone()],
        )
        .unwrap();
        let law = delstab_distribution(&cs_form, &ds, &p, BUDGET).unwrap();
        assert_eq!(law.bottom_mass(), 0.0);
        assert!(tv_distance(&law.conditional_on_output().unwrap(), &out).unwrap() <= 1e-12);

        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let got = delstab_run(&mech, &ds, &p, &mut rng, BUDGET).unwrap();
            assert!(matches!(got, DelStabOutcome::Output(_)));
        }
    }

    #[test]
    fn adversarial_table_refuses_always() {
        // Rows with disjoint support at adjacent totals; any mixed dataset
        // keeps two reachable totals at every radius, so nothing is stable.
        let mech = CountSummaryMechanism::new(
            2,
            1,
            vec![0, 1],
            vec![
                FiniteDistribution::point(2, 0).unwrap(),
                FiniteDistribution::point(2, 1).unwrap(),
                FiniteDistribution::point(2, 0).unwrap(),
            ],
        )
        .unwrap();
        let ds = bit_dataset(18, 9);
        let law = delstab_distribution(&mech, &ds, &pp(6.0, 0.5), BUDGET).unwrap();
        assert!(law.bottom_mass() > 1.0 - 1e-9);
        assert!(law.output_masses().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn wrapper_arity_violations_are_errors_not_bottom() {
        let mech = two_row_mech(vec![0.5, 0.5], vec![0.5, 0.5]);
        let short = bit_dataset(10, 3);
        assert!(delstab_run(
            &mech,
            &short,
            &pp(6.0, 0.5),
            &mut ChaCha12Rng::seed_from_u64(0),
            BUDGET
        )
        .is_err());
        let wrong_arity = bit_dataset(20, 3);
        assert!(delstab_distribution(&mech, &wrong_arity, &pp(6.0, 0.5), BUDGET).is_err());
    }

    #[test]
    fn lddp_count_summary_matches_direct_enumeration() {
        // 3-user dataset, single-bit records, randomized-response count
        // mechanism on 2 users; r = 1.
        let mech = rr_count(2, 1, 1.0).unwrap();
        for ones in 0..=3 {
            let ds = bit_dataset(3, ones);
            for &(e, d) in &[(0.05, 0.0), (0.2, 0.01), (1.0, 0.0), (2.0, 0.1)] {
                let p = pp(e, d);
                let fast = lddp_check(&mech, &ds, 1, &p, BUDGET).unwrap();
                let slow = lddp_check(&Opaque::new(&mech), &ds, 1, &p, BUDGET).unwrap();
                assert_eq!(fast, slow, "ones={ones} eps={e} delta={d}");
            }
        }
    }

    #[test]
    fn lddp_rejects_arity_mismatch() {
        let mech = rr_count(2, 1, 1.0).unwrap();
        let ds = bit_dataset(3, 1);
        assert!(lddp_check(&mech, &ds, 0, &pp(1.0, 0.0), BUDGET).is_err());
        assert!(lddp_check(&mech, &ds, 4, &pp(1.0, 0.0), BUDGET).is_err());
    }

    #[test]
    fn stable_counts_agree_between_profile_and_generic_paths() {
        let mech = two_row_mech(vec![0.99, 0.01], vec![0.01, 0.99]);
        let ds = bit_dataset(17, 8);
        let p = pp(6.0, 0.5);
        for r1 in 0..=8 {
            let (fast, fast_total) =
                stable_subset_counts(&mech, &ds, &p, r1, BUDGET).unwrap();
            let (slow, slow_total) =
                stable_subset_counts(&Opaque::new(&mech), &ds, &p, r1, BUDGET).unwrap();
            assert_eq!(fast, slow, "r1={r1}");
            assert_eq!(fast_total, slow_total);
        }
    }

    #[test]
    fn generic_run_tracks_exact_law_on_benign_instance() {
        // Rows close enough that every deletion set is stable: the law has
        // no Bottom mass and the generic path must reproduce it.
        let mech = two_row_mech(vec![0.8, 0.2], vec![0.2, 0.8]);
        let ds = bit_dataset(17, 8);
        let p = pp(6.0, 0.5);
        let exact = delstab_distribution(&mech, &ds, &p, BUDGET).unwrap();
        assert_eq!(exact.bottom_mass(), 0.0);

        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let runs = 300;
        let mut counts = [0usize; 3];
        let opaque = Opaque::new(&mech);
        for _ in 0..runs {
            match delstab_run(&opaque, &ds, &p, &mut rng, BUDGET).unwrap() {
                DelStabOutcome::Output(o) => counts[o] += 1,
                DelStabOutcome::Bottom => counts[2] += 1,
            }
        }
        let empirical = FiniteDistribution::new(
            counts.iter().map(|&c| c as f64 / runs as f64).collect(),
        )
        .unwrap();
        assert!(tv_distance(&empirical, exact.distribution()).unwrap() <= 0.15);
    }

    #[test]
    fn profile_run_tracks_exact_law() {
        let mech = rr_count(2, 2, 1.2).unwrap();
        let ds = Dataset::new(
            2,
            2,
            (0..18).map(|i| vec![usize::from(i % 3 == 0), usize::from(i % 2 == 0)]).collect(),
        )
        .unwrap();
        let p = pp(6.0, 0.5);
        let exact = delstab_distribution(&mech, &ds, &p, BUDGET).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let runs = 4000;
        let mut counts = vec![0usize; exact.distribution().len()];
        for _ in 0..runs {
            match delstab_run(&mech, &ds, &p, &mut rng, BUDGET).unwrap() {
                DelStabOutcome::Output(o) => counts[o] += 1,
                DelStabOutcome::Bottom => *counts.last_mut().unwrap() += 1,
            }
        }
        let empirical = FiniteDistribution::new(
            counts.iter().map(|&c| c as f64 / runs as f64).collect(),
        )
        .unwrap();
        assert!(tv_distance(&empirical, exact.distribution()).unwrap() <= 0.05);
    }

    #[test]
    fn stable_wrapper_law_equals_subsample_law() {
        let mech = two_row_mech(vec![0.8, 0.2], vec![0.2, 0.8]);
        let ds = bit_dataset(17, 6);
        let p = pp(6.0, 0.5);
        let params = delstab_params(p).unwrap();
        let bar = PrivacyParams::new(params.eps_bar, params.delta_bar).unwrap();
        assert!(lddp_check(&mech, &ds, 4 * params.kappa, &bar, BUDGET).unwrap());

        let wrapped = delstab_distribution(&mech, &ds, &p, BUDGET).unwrap();
        assert_eq!(wrapped.bottom_mass(), 0.0);
        let sub = subsample_law(&mech, &ds, &p, BUDGET).unwrap();
        assert!(
            tv_distance(&wrapped.conditional_on_output().unwrap(), &sub).unwrap() <= 1e-12
        );
    }

    #[test]
    fn stable_set_monotone_across_neighbors() {
        let mech = two_row_mech(vec![0.95, 0.05], vec![0.05, 0.95]);
        let ds = bit_dataset(17, 8);
        let neighbor = ds.replace_user(0, vec![0]).unwrap();
        let p = pp(6.0, 0.5);
        for r1 in 0..8 {
            for (a, b) in [(&ds, &neighbor), (&neighbor, &ds)] {
                let (stable_b, _) = stable_subset_counts(&mech, b, &p, r1, BUDGET).unwrap();
                if stable_b > 0 {
                    let (stable_a, _) =
                        stable_subset_counts(&mech, a, &p, r1 + 1, BUDGET).unwrap();
                    assert!(stable_a > 0, "monotonicity broken at r1={r1}");
                }
            }
        }
    }

    #[test]
    fn tiny_budget_signals_infeasibility() {
        let mech = rr_count(2, 2, 1.2).unwrap();
        let ds = Dataset::new(2, 2, (0..18).map(|i| vec![i % 2, 0]).collect()).unwrap();
        let err = delstab_distribution(&mech, &ds, &pp(6.0, 0.5), 10).unwrap_err();
        assert!(err.is_budget());
    }

    #[test]
    fn binom_basics() {
        assert_eq!(binom(5, 2), Some(10));
        assert_eq!(binom(30, 16), Some(145422675));
        assert_eq!(binom(3, 5), Some(0));
        assert_eq!(binom(0, 0), Some(1));
    }

    #[test]
    fn combination_and_profile_enumeration_counts() {
        let mut combos = 0u64;
        for_each_combination(6, 3, &mut |_| {
            combos += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(combos, 20);

        let mut profiles = 0u64;
        for_each_profile(&[2, 3, 1], 3, &mut |k| {
            assert_eq!(k.iter().sum::<usize>(), 3);
            profiles += 1;
            Ok(())
        })
        .unwrap();
        // Coefficient of x^3 in (1+x+x^2)(1+x+x^2+x^3)(1+x).
        assert_eq!(profiles, 6);
    }
}
