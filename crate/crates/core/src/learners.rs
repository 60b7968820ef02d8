//! End-to-end user-level pure-DP learners and the trivial baselines.
//!
//! Each learner scores a finite candidate set against the dataset with a
//! user-level low-sensitivity score and selects through the exponential
//! mechanism. All randomness flows through a caller-owned generator.

use crate::delstab::binom;
use crate::dist::{Dataset, FiniteDistribution};
use crate::em::{
    agnostic_family, default_tau, em_distribution, em_select, pac_scores, pairwise_clipped_scores,
    scheffe_clipped_scores, scheffe_scores_from_masks, Hypothesis,
};
use crate::{Error, Result};
use rand::{Rng, RngCore};
use std::collections::BTreeSet;

type HypothesisSampler = Box<dyn Fn(&mut dyn RngCore) -> Vec<Hypothesis> + Send + Sync>;

/// A distribution over finite hypothesis sets: the non-private part of a
/// PAC learner. `size_bound` bounds `ln |H|` over every set the sampler
/// can produce.
pub struct ProbabilisticRepresentation {
    sampler: HypothesisSampler,
    size_bound: f64,
}

impl std::fmt::Debug for ProbabilisticRepresentation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProbabilisticRepresentation")
            .field("size_bound", &self.size_bound)
            .finish()
    }
}

impl ProbabilisticRepresentation {
    pub fn new(
        size_bound: f64,
        sampler: impl Fn(&mut dyn RngCore) -> Vec<Hypothesis> + Send + Sync + 'static,
    ) -> Result<Self> {
        if !size_bound.is_finite() || size_bound < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "size bound must be finite and non-negative, got {size_bound}"
            )));
        }
        Ok(Self {
            sampler: Box::new(sampler),
            size_bound,
        })
    }

    /// The deterministic representation that always yields `class`;
    /// its size bound is `ln |class|`.
    pub fn point_mass(class: Vec<Hypothesis>) -> Result<Self> {
        if class.is_empty() {
            return Err(Error::InvalidArgument("empty hypothesis class".into()));
        }
        let bound = (class.len() as f64).ln();
        Self::new(bound, move |_| class.clone())
    }

    pub fn size_bound(&self) -> f64 {
        self.size_bound
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<Vec<Hypothesis>> {
        let set = (self.sampler)(rng);
        if set.is_empty() {
            return Err(Error::InvalidArgument(
                "probabilistic representation produced an empty set".into(),
            ));
        }
        if (set.len() as f64).ln() > self.size_bound + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "sampled set of {} hypotheses exceeds the declared size bound",
                set.len()
            )));
        }
        Ok(set)
    }
}

/// All pmfs over `{0, .., k-1}` whose masses are integer multiples of
/// `1/resolution`, in lexicographic composition order. Any pmf over `[k]`
/// is within total variation `k / (2 resolution)` of some member.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCover {
    k: usize,
    resolution: usize,
    compositions: Vec<Vec<u32>>,
    members: Vec<FiniteDistribution>,
}

impl GridCover {
    /// Enumerate the cover at an explicit resolution `d` (grid step `1/d`).
    pub fn with_resolution(k: usize, resolution: usize, budget: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "cover needs a domain of at least 2 symbols, got {k}"
            )));
        }
        if resolution == 0 {
            return Err(Error::InvalidArgument("resolution must be positive".into()));
        }
        let count = binom((resolution + k - 1) as u64, (k - 1) as u64)
            .filter(|&c| c <= u128::from(budget))
            .ok_or_else(|| {
                Error::BudgetExceeded(format!(
                    "grid cover at k = {k}, resolution = {resolution} exceeds the member budget"
                ))
            })?;
        let mut compositions = Vec::with_capacity(count as usize);
        let mut current = vec![0u32; k];
        enumerate_compositions(&mut current, 0, resolution as u32, &mut compositions);
        let members = compositions
            .iter()
            .map(|c| {
                FiniteDistribution::new(
                    c.iter()
                        .map(|&a| f64::from(a) / resolution as f64)
                        .collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k,
            resolution,
            compositions,
            members,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `d` such that member masses are multiples of `1/d`.
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn grid_step(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    pub fn members(&self) -> &[FiniteDistribution] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Index of the member obtained by largest-remainder rounding of
    /// `target`; its total variation distance from `target` is at most
    /// `k / (2 resolution)`.
    pub fn round_to_member(&self, target: &FiniteDistribution) -> Result<usize> {
        if target.len() != self.k {
            return Err(Error::LengthMismatch(target.len(), self.k));
        }
        let d = self.resolution as f64;
        let mut floors: Vec<u32> = Vec::with_capacity(self.k);
        let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(self.k);
        let mut assigned: u32 = 0;
        for z in 0..self.k {
            let scaled = target.mass(z) * d;
            let f = scaled.floor().min(d) as u32;
            floors.push(f);
            remainders.push((scaled - f64::from(f), z));
            assigned += f;
        }
        // Hand the leftover grid units to the largest remainders; ties go
        // to the lower index for determinism.
        remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite").then(a.1.cmp(&b.1)));
        let mut leftover = self.resolution as u32 - assigned;
        for &(_, z) in &remainders {
            if leftover == 0 {
                break;
            }
            floors[z] += 1;
            leftover -= 1;
        }
        Ok(self.rank_of(&floors))
    }

    /// Lexicographic rank of a composition among all members.
    fn rank_of(&self, composition: &[u32]) -> usize {
        let mut rank: u128 = 0;
        let mut remaining = self.resolution as u64;
        for (i, &a) in composition.iter().enumerate().take(self.k - 1) {
            let parts = (self.k - i - 1) as u64;
            for b in 0..u64::from(a) {
                rank += compositions_count(remaining - b, parts);
            }
            remaining -= u64::from(a);
        }
        rank as usize
    }

    /// Witness sets `W = {z : member(z) > rival(z)}` realized over all
    /// rivals in the cover, as bitmasks. For a full grid these are exactly
    /// the proper nonempty subsets on which the member has positive mass:
    /// a rival below the member on all of `W` exists iff a grid unit can
    /// be moved off every point of `W`.
    fn witness_masks(&self, h: usize) -> BTreeSet<u64> {
        let comp = &self.compositions[h];
        let mut out = BTreeSet::new();
        let full: u64 = (1 << self.k) - 1;
        for w in 1..full {
            if (0..self.k).all(|z| w >> z & 1 == 0 || comp[z] >= 1) {
                out.insert(w);
            }
        }
        out
    }
}

fn enumerate_compositions(
    current: &mut Vec<u32>,
    pos: usize,
    remaining: u32,
    out: &mut Vec<Vec<u32>>,
) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for a in 0..=remaining {
        current[pos] = a;
        enumerate_compositions(current, pos + 1, remaining - a, out);
    }
}

fn compositions_count(total: u64, parts: u64) -> u128 {
    binom(total + parts - 1, parts - 1).expect("cover size already bounded")
}

/// The cover behind the discrete distribution learner: grid step
/// `1 / ceil(10 k / alpha)`, so rounding error is at most `0.05 alpha`.
pub fn build_grid_cover(k: usize, alpha: f64, budget: u64) -> Result<GridCover> {
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let resolution = (10.0 * k as f64 / alpha).ceil() as usize;
    GridCover::with_resolution(k, resolution, budget)
}

/// PAC selection: sample a hypothesis set from the representation, score
/// each hypothesis by the number of users it fails to realize, and select
/// with the exponential mechanism at sensitivity 1.
pub fn pac_learn(
    pr: &ProbabilisticRepresentation,
    ds: &Dataset,
    eps: f64,
    rng: &mut impl Rng,
) -> Result<Hypothesis> {
    let set = pr.sample(rng)?;
    let scores = pac_scores(&set, ds)?;
    let pick = em_select(&scores, eps, rng)?;
    Ok(set.into_iter().nth(pick).expect("selection in range"))
}

fn select_scores(
    candidates: &[FiniteDistribution],
    ds: &Dataset,
    alpha: f64,
    c_tau: f64,
) -> Result<crate::em::ScoreVector> {
    let tau = default_tau(alpha, ds.m(), c_tau)?;
    scheffe_clipped_scores(candidates, ds, tau)
}

/// Hypothesis selection over density candidates: clipped pairwise Scheffe
/// scores, then the exponential mechanism at sensitivity `2 tau`.
pub fn hypothesis_select(
    candidates: &[FiniteDistribution],
    ds: &Dataset,
    eps: f64,
    alpha: f64,
    c_tau: f64,
    rng: &mut impl Rng,
) -> Result<usize> {
    let scores = select_scores(candidates, ds, alpha, c_tau)?;
    em_select(&scores, eps, rng)
}

/// Exact selection pmf of [`hypothesis_select`].
pub fn hypothesis_select_distribution(
    candidates: &[FiniteDistribution],
    ds: &Dataset,
    eps: f64,
    alpha: f64,
    c_tau: f64,
) -> Result<FiniteDistribution> {
    let scores = select_scores(candidates, ds, alpha, c_tau)?;
    em_distribution(&scores, eps)
}

pub(crate) fn grid_scores(
    cover: &GridCover,
    ds: &Dataset,
    alpha: f64,
    c_tau: f64,
) -> Result<crate::em::ScoreVector> {
    let tau = default_tau(alpha, ds.m(), c_tau)?;
    scheffe_scores_from_masks(cover.members(), ds, tau, |h| cover.witness_masks(h))
}

/// Discrete distribution learning: hypothesis selection over the full grid
/// cover of `[k]`. Witness sets come from the cover's closed form, so the
/// quadratic rival scan is skipped.
pub fn learn_discrete(
    ds: &Dataset,
    k: usize,
    alpha: f64,
    eps: f64,
    c_tau: f64,
    rng: &mut impl Rng,
    budget: u64,
) -> Result<FiniteDistribution> {
    let cover = build_grid_cover(k, alpha, budget)?;
    let scores = grid_scores(&cover, ds, alpha, c_tau)?;
    let pick = em_select(&scores, eps, rng)?;
    Ok(cover.members()[pick].clone())
}

/// Exact selection pmf of [`learn_discrete`] over cover member indices
/// (lexicographic composition order).
pub fn learn_discrete_distribution(
    ds: &Dataset,
    k: usize,
    alpha: f64,
    eps: f64,
    c_tau: f64,
    budget: u64,
) -> Result<FiniteDistribution> {
    let cover = build_grid_cover(k, alpha, budget)?;
    let scores = grid_scores(&cover, ds, alpha, c_tau)?;
    em_distribution(&scores, eps)
}

/// Agnostic PAC selection: sample a hypothesis set, score with clipped
/// pairwise error comparisons, select with the exponential mechanism.
/// A singleton set is returned directly.
pub fn agnostic_pac_learn(
    pr: &ProbabilisticRepresentation,
    ds: &Dataset,
    eps: f64,
    alpha: f64,
    c_tau: f64,
    rng: &mut impl Rng,
) -> Result<Hypothesis> {
    let set = pr.sample(rng)?;
    if set.len() == 1 {
        return Ok(set.into_iter().next().expect("non-empty"));
    }
    let family = agnostic_family(&set)?;
    let tau = default_tau(alpha, ds.m(), c_tau)?;
    let scores = pairwise_clipped_scores(&family, ds, tau)?;
    let pick = em_select(&scores, eps, rng)?;
    Ok(set.into_iter().nth(pick).expect("selection in range"))
}

/// The throw-away baseline: keep each user's first example only.
pub fn baseline_discard(ds: &Dataset) -> Result<Dataset> {
    let users = ds.users().iter().map(|u| vec![u[0]]).collect();
    Dataset::new(ds.universe_size(), 1, users)
}

/// The regrouping baseline: flatten all `n * m` examples in user-major
/// order and cut them into synthetic users of `m_group` examples each.
pub fn baseline_group(ds: &Dataset, m_group: usize) -> Result<Dataset> {
    if m_group == 0 {
        return Err(Error::InvalidArgument("group size must be positive".into()));
    }
    let total = ds.n() * ds.m();
    if !total.is_multiple_of(m_group) {
        return Err(Error::InvalidArgument(format!(
            "{total} examples do not divide into users of {m_group}"
        )));
    }
    let flat: Vec<usize> = ds.users().iter().flatten().copied().collect();
    let users = flat.chunks(m_group).map(<[usize]>::to_vec).collect();
    Dataset::new(ds.universe_size(), m_group, users)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::tv_distance;
    use crate::em::scheffe_family;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    const BUDGET: u64 = 1_000_000;

    #[test]
    fn grid_cover_worked_example() {
        let cover = GridCover::with_resolution(2, 2, BUDGET).unwrap();
        let masses: Vec<Vec<f64>> = cover
            .members()
            .iter()
            .map(|m| m.masses().to_vec())
            .collect();
        assert_eq!(
            masses,
            vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]]
        );
    }

    #[test]
    fn grid_cover_counts_match_stars_and_bars() {
        for (k, d) in [(2usize, 7usize), (3, 5), (4, 4)] {
            let cover = GridCover::with_resolution(k, d, BUDGET).unwrap();
            let expect = binom((d + k - 1) as u64, (k - 1) as u64).unwrap();
            assert_eq!(cover.len() as u128, expect);
        }
        assert!(GridCover::with_resolution(6, 500, BUDGET)
            .unwrap_err()
            .is_budget());
    }

    #[test]
    fn rank_inverts_enumeration() {
        let cover = GridCover::with_resolution(3, 6, BUDGET).unwrap();
        for (i, member) in cover.members().iter().enumerate() {
            assert_eq!(cover.round_to_member(member).unwrap(), i);
        }
    }

    #[test]
    fn rounding_achieves_cover_radius() {
        // k = 3, alpha = 0.6: resolution 50, every pmf within TV 0.06.
        let cover = build_grid_cover(3, 0.6, BUDGET).unwrap();
        assert_eq!(cover.resolution(), 50);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let raw: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() + 1e-9).collect();
            let sum: f64 = raw.iter().sum();
            let target =
                FiniteDistribution::new(raw.into_iter().map(|x| x / sum).collect()).unwrap();
            let idx = cover.round_to_member(&target).unwrap();
            let tv = tv_distance(&cover.members()[idx], &target).unwrap();
            assert!(tv <= 0.06 + 1e-12, "tv = {tv}");
        }
    }

    #[test]
    fn witness_masks_match_rival_scan() {
        let cover = GridCover::with_resolution(3, 4, BUDGET).unwrap();
        for h in 0..cover.len() {
            let mut scanned = std::collections::BTreeSet::new();
            for hp in 0..cover.len() {
                if hp == h {
                    continue;
                }
                let mut w = 0u64;
                for z in 0..3 {
                    if cover.members()[h].mass(z) > cover.members()[hp].mass(z) {
                        w |= 1 << z;
                    }
                }
                scanned.insert(w);
            }
            assert_eq!(cover.witness_masks(h), scanned, "member {h}");
        }
    }

    #[test]
    fn grid_scores_agree_with_generic_paths() {
        let cover = GridCover::with_resolution(3, 4, BUDGET).unwrap();
        let ds = Dataset::new(
            3,
            2,
            vec![vec![0, 0], vec![0, 1], vec![2, 2], vec![1, 0], vec![2, 0]],
        )
        .unwrap();
        let via_masks = grid_scores(&cover, &ds, 0.5, 1.0).unwrap();
        let tau = default_tau(0.5, 2, 1.0).unwrap();
        let via_scan = scheffe_clipped_scores(cover.members(), &ds, tau).unwrap();
        let via_family =
            pairwise_clipped_scores(&scheffe_family(cover.members()).unwrap(), &ds, tau).unwrap();
        for h in 0..cover.len() {
            assert!((via_masks.scores()[h] - via_scan.scores()[h]).abs() < 1e-9);
            assert!((via_masks.scores()[h] - via_family.scores()[h]).abs() < 1e-9);
        }
    }

    #[test]
    fn learn_discrete_returns_a_cover_member() {
        let ds = Dataset::new(2, 1, vec![vec![0]]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let out = learn_discrete(&ds, 2, 0.9, 1.0, 1.0, &mut rng, BUDGET).unwrap();
        let cover = build_grid_cover(2, 0.9, BUDGET).unwrap();
        assert!(cover.members().iter().any(|m| m == &out));
    }

    #[test]
    fn tied_candidates_select_uniformly() {
        let p = FiniteDistribution::new(vec![0.25, 0.75]).unwrap();
        let ds = Dataset::new(2, 2, vec![vec![0, 1], vec![1, 1], vec![1, 0]]).unwrap();
        let pmf =
            hypothesis_select_distribution(&[p.clone(), p], &ds, 1.0, 0.3, 1.0).unwrap();
        assert_eq!(pmf.mass(0), 0.5);
        assert_eq!(pmf.mass(1), 0.5);
    }

    #[test]
    fn planted_candidate_wins() {
        // Source = candidate 0; candidate 1 is far away.
        let source = FiniteDistribution::new(vec![0.9, 0.1]).unwrap();
        let far = FiniteDistribution::new(vec![0.05, 0.95]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let mut wins = 0;
        for _ in 0..20 {
            let users = (0..60)
                .map(|_| (0..2).map(|_| source.sample(&mut rng)).collect())
                .collect();
            let ds = Dataset::new(2, 2, users).unwrap();
            let pick =
                hypothesis_select(&[source.clone(), far.clone()], &ds, 2.0, 0.3, 1.0, &mut rng)
                    .unwrap();
            if pick == 0 {
                wins += 1;
            }
        }
        assert!(wins >= 16, "planted candidate won only {wins}/20");
    }

    #[test]
    fn pac_learn_handles_singletons_and_realizable_data() {
        let truth = Hypothesis::new(vec![1, 0]).unwrap();
        let single = ProbabilisticRepresentation::point_mass(vec![truth.clone()]).unwrap();
        let ds = Dataset::new(4, 2, vec![vec![1, 2], vec![2, 2], vec![1, 1]]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert_eq!(pac_learn(&single, &ds, 1.0, &mut rng).unwrap(), truth);

        // With a large epsilon the zero-error hypothesis dominates.
        let class = vec![
            truth.clone(),
            Hypothesis::new(vec![0, 0]).unwrap(),
            Hypothesis::new(vec![0, 1]).unwrap(),
            Hypothesis::new(vec![1, 1]).unwrap(),
        ];
        let pr = ProbabilisticRepresentation::point_mass(class).unwrap();
        assert!((pr.size_bound() - 4.0f64.ln()).abs() < 1e-15);
        let mut hits = 0;
        for _ in 0..30 {
            if pac_learn(&pr, &ds, 50.0, &mut rng).unwrap() == truth {
                hits += 1;
            }
        }
        assert!(hits >= 27, "zero-error hypothesis chosen {hits}/30");
    }

    #[test]
    fn agnostic_learn_singleton_shortcut() {
        let truth = Hypothesis::new(vec![0, 1]).unwrap();
        let pr = ProbabilisticRepresentation::point_mass(vec![truth.clone()]).unwrap();
        let ds = Dataset::new(4, 1, vec![vec![3], vec![0]]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        assert_eq!(
            agnostic_pac_learn(&pr, &ds, 1.0, 0.2, 1.0, &mut rng).unwrap(),
            truth
        );
    }

    #[test]
    fn baselines_reshape_and_preserve_items() {
        let ds = Dataset::new(
            3,
            3,
            vec![vec![0, 1, 2], vec![2, 2, 0], vec![1, 0, 1], vec![0, 0, 2]],
        )
        .unwrap();
        let discarded = baseline_discard(&ds).unwrap();
        assert_eq!(discarded.n(), 4);
        assert_eq!(discarded.m(), 1);
        assert_eq!(discarded.user(1), &[2]);

        let flat = baseline_group(&ds, 1).unwrap();
        assert_eq!(flat.n(), 12);
        let back = baseline_group(&flat, 3).unwrap();
        assert_eq!(back, ds);

        assert!(baseline_group(&ds, 5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn selection_pmf_invariant_under_user_and_item_permutations(
            items in proptest::collection::vec(proptest::collection::vec(0usize..3, 2), 2..6),
            seed in any::<u64>(),
        ) {
            let ds = Dataset::new(3, 2, items.clone()).unwrap();
            let base = learn_discrete_distribution(&ds, 3, 0.8, 1.0, 1.0, BUDGET).unwrap();

            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut shuffled = items.clone();
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.gen_range(0..=i));
            }
            for record in &mut shuffled {
                record.reverse();
            }
            let permuted = Dataset::new(3, 2, shuffled).unwrap();
            let other = learn_discrete_distribution(&permuted, 3, 0.8, 1.0, 1.0, BUDGET).unwrap();
            prop_assert_eq!(base, other);
        }
    }
}
