//! The exponential mechanism and user-level scoring functions.
//!
//! Selection targets low scores: a candidate `H` with score `scr_H` is
//! chosen with probability proportional to `exp(-eps scr_H / (2 D))`,
//! where `D` is the declared user-level sensitivity of the scores.
//!
//! Scores implemented here:
//!
//! | score                     | per-user contribution                      | sensitivity |
//! |---------------------------|--------------------------------------------|-------------|
//! | `pac_score`               | 1 if any of the user's items contradicts H | 1           |
//! | `pairwise_clipped_scores` | `clip_{-tau,tau}(sum_items psi(z))`, maxed over rivals | `2 tau` |

use crate::dist::{clip, Dataset, FiniteDistribution};
use crate::{Error, Result};
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};

/// Scores for a finite candidate set together with their declared
/// user-level sensitivity (how much any single score can move when one
/// user's whole record is replaced).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    scores: Vec<f64>,
    sensitivity: f64,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>, sensitivity: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument("no candidates to score".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("scores must be finite".into()));
        }
        if !sensitivity.is_finite() || sensitivity <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sensitivity must be positive, got {sensitivity}"
            )));
        }
        Ok(Self {
            scores,
            sensitivity,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Exact selection distribution of the exponential mechanism:
/// `mass(H)` proportional to `exp(-eps scr_H / (2 sensitivity))`.
///
/// Computed with max-subtraction in score space (no overflow for score
/// gaps up to the hundreds) and a sorted-order normalizer so that
/// permuting the candidates permutes the output bit-for-bit.
pub fn em_distribution(sv: &ScoreVector, eps: f64) -> Result<FiniteDistribution> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::InvalidParams(format!(
            "epsilon must be finite and non-negative, got {eps}"
        )));
    }
    let best = sv.scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = eps / (2.0 * sv.sensitivity);
    let weights: Vec<f64> = sv.scores.iter().map(|s| (-scale * (s - best)).exp()).collect();
    let mut sorted = weights.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("weights are finite"));
    let z: f64 = sorted.iter().sum();
    FiniteDistribution::new(weights.into_iter().map(|w| w / z).collect())
}

/// One draw from [`em_distribution`]; deterministic given the generator
/// state.
pub fn em_select(sv: &ScoreVector, eps: f64, rng: &mut impl Rng) -> Result<usize> {
    Ok(em_distribution(sv, eps)?.sample(rng))
}

/// A binary hypothesis over points `{0, .., points-1}`. Labeled examples
/// are encoded as universe items `z = 2 x + y`; the hypothesis is
/// consistent with `z` iff it labels `x` with `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypothesis {
    labels: Vec<u8>,
}

impl Hypothesis {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("hypothesis over empty domain".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        Ok(Self { labels })
    }

    /// Number of points; the labeled universe has `2 * points()` items.
    pub fn points(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, x: usize) -> u8 {
        self.labels[x]
    }

    /// True iff item `z = 2 x + y` carries this hypothesis' label for `x`.
    pub fn consistent_with(&self, z: usize) -> bool {
        self.labels[z / 2] == (z % 2) as u8
    }
}

fn check_labeled_universe(h: &Hypothesis, ds: &Dataset) -> Result<()> {
    if ds.universe_size() != 2 * h.points() {
        return Err(Error::LengthMismatch(ds.universe_size(), 2 * h.points()));
    }
    Ok(())
}

/// Number of users whose record is not realizable by `h` (at least one
/// item contradicts it). Replacing one user moves this by at most 1, so
/// its user-level sensitivity is 1 regardless of `m`.
pub fn pac_score(h: &Hypothesis, ds: &Dataset) -> Result<f64> {
    check_labeled_universe(h, ds)?;
    let bad = ds
        .users()
        .iter()
        .filter(|record| record.iter().any(|&z| !h.consistent_with(z)))
        .count();
    Ok(bad as f64)
}

/// [`pac_score`] for every candidate, packaged with sensitivity 1.
pub fn pac_scores(hypotheses: &[Hypothesis], ds: &Dataset) -> Result<ScoreVector> {
    let scores = hypotheses
        .iter()
        .map(|h| pac_score(h, ds))
        .collect::<Result<Vec<_>>>()?;
    ScoreVector::new(scores, 1.0)
}

/// A family of comparison functions `psi_{H,H'} : Z -> [-1, 1]`, one per
/// ordered candidate pair. The pointwise bound is spot-checked on a
/// deterministic sample of triples at construction.
pub struct ComparisonFamily {
    candidate_count: usize,
    universe_size: usize,
    psi: Box<dyn Fn(usize, usize, usize) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for ComparisonFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ComparisonFamily")
            .field("candidate_count", &self.candidate_count)
            .field("universe_size", &self.universe_size)
            .finish()
    }
}

impl ComparisonFamily {
    pub fn new(
        candidate_count: usize,
        universe_size: usize,
        psi: impl Fn(usize, usize, usize) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if candidate_count == 0 || universe_size == 0 {
            return Err(Error::InvalidArgument(
                "comparison family needs candidates and a universe".into(),
            ));
        }
        // Spot-check |psi| <= 1 on up to 512 strided triples.
        let total = candidate_count * candidate_count * universe_size;
        let stride = (total / 512).max(1);
        for t in (0..total).step_by(stride) {
            let z = t % universe_size;
            let hp = (t / universe_size) % candidate_count;
            let h = t / (universe_size * candidate_count);
            let v = psi(h, hp, z);
            if !v.is_finite() || v.abs() > 1.0 + 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "psi({h}, {hp}, {z}) = {v} falls outside [-1, 1]"
                )));
            }
        }
        Ok(Self {
            candidate_count,
            universe_size,
            psi: Box::new(psi),
        })
    }

    pub fn candidate_count(&self) -> usize {
        self.candidate_count
    }

    pub fn universe_size(&self) -> usize {
        self.universe_size
    }

    pub fn psi(&self, h: usize, hp: usize, z: usize) -> f64 {
        (self.psi)(h, hp, z)
    }
}

/// Clipped pairwise comparison scores. For each ordered pair `(H, H')`
/// the pair score is
///
/// `pscr_{H,H'} = sum_users clip_{-tau,tau}( sum_items psi_{H,H'}(z) )`
///
/// and `scr_H = max_{H' != H} pscr_{H,H'}`. Replacing one user moves any
/// pair score by at most `2 tau`, so the declared sensitivity is `2 tau`.
pub fn pairwise_clipped_scores(
    cf: &ComparisonFamily,
    ds: &Dataset,
    tau: f64,
) -> Result<ScoreVector> {
    if cf.candidate_count < 2 {
        return Err(Error::InvalidArgument(
            "pairwise scores need at least two candidates".into(),
        ));
    }
    if ds.universe_size() != cf.universe_size {
        return Err(Error::LengthMismatch(ds.universe_size(), cf.universe_size));
    }
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let mut scores = Vec::with_capacity(cf.candidate_count);
    let mut vals = vec![0.0; cf.universe_size];
    for h in 0..cf.candidate_count {
        let mut best = f64::NEG_INFINITY;
        for hp in 0..cf.candidate_count {
            if hp == h {
                continue;
            }
            for (z, v) in vals.iter_mut().enumerate() {
                *v = cf.psi(h, hp, z);
            }
            let mut pscr = 0.0;
            for record in ds.users() {
                let raw: f64 = record.iter().map(|&z| vals[z]).sum();
                pscr += clip(-tau, tau, raw);
            }
            best = best.max(pscr);
        }
        scores.push(best);
    }
    ScoreVector::new(scores, 2.0 * tau)
}

/// The Scheffe comparison family for density candidates: with
/// `W = {z : P(z) > P'(z)}`,
///
/// `psi_{P,P'}(z) = P(W) - 1[z in W]`,
///
/// so that `E_{z~D} psi_{P,P'}(z) = P(W) - D(W)`.
pub fn scheffe_family(candidates: &[FiniteDistribution]) -> Result<ComparisonFamily> {
    let universe = check_same_domain(candidates)?;
    let owned: Vec<FiniteDistribution> = candidates.to_vec();
    ComparisonFamily::new(candidates.len(), universe, move |h, hp, z| {
        let p = &owned[h];
        let q = &owned[hp];
        let mut pw = 0.0;
        for u in 0..p.len() {
            if p.mass(u) > q.mass(u) {
                pw += p.mass(u);
            }
        }
        let indicator = if p.mass(z) > q.mass(z) { 1.0 } else { 0.0 };
        pw - indicator
    })
}

/// The agnostic comparison family for binary concepts:
/// `psi_{c,c'}(z) = 1[c errs on z] - 1[c' errs on z]`, so that
/// `E_D psi_{c,c'} = Err_D(c) - Err_D(c')` and low scores mean low error.
pub fn agnostic_family(concepts: &[Hypothesis]) -> Result<ComparisonFamily> {
    if concepts.is_empty() {
        return Err(Error::InvalidArgument("no concepts".into()));
    }
    let points = concepts[0].points();
    if concepts.iter().any(|c| c.points() != points) {
        return Err(Error::InvalidArgument(
            "concepts must share the point domain".into(),
        ));
    }
    let owned: Vec<Hypothesis> = concepts.to_vec();
    ComparisonFamily::new(concepts.len(), 2 * points, move |h, hp, z| {
        let err = |c: &Hypothesis| if c.consistent_with(z) { 0.0 } else { 1.0 };
        err(&owned[h]) - err(&owned[hp])
    })
}

/// The clipping threshold used by the pairwise mechanism:
/// `c_tau * (alpha m + sqrt(m ln(1/alpha)))`. `c_tau` is the constant the
/// asymptotic analysis hides; 1 is the neutral choice.
pub fn default_tau(alpha: f64, m: usize, c_tau: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("m must be positive".into()));
    }
    if !c_tau.is_finite() || c_tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "c_tau must be positive, got {c_tau}"
        )));
    }
    let mf = m as f64;
    Ok(c_tau * (alpha * mf + (mf * (1.0 / alpha).ln()).sqrt()))
}

fn check_same_domain(candidates: &[FiniteDistribution]) -> Result<usize> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::InvalidArgument("no candidates".into()))?;
    for c in candidates {
        if c.len() != first.len() {
            return Err(Error::LengthMismatch(c.len(), first.len()));
        }
    }
    Ok(first.len())
}

/// Scheffe pairwise scores computed without touching candidate pairs per
/// user: the pair score depends on the rival only through the witness set
/// `W`, the per-user sum collapses to `m P(W) - #(items in W)`, and users
/// with identical item counts are scored once. Falls back to the generic
/// pairwise path when the universe exceeds 64 items (no bitmask).
pub fn scheffe_clipped_scores(
    candidates: &[FiniteDistribution],
    ds: &Dataset,
    tau: f64,
) -> Result<ScoreVector> {
    let universe = check_same_domain(candidates)?;
    if universe > 64 {
        return pairwise_clipped_scores(&scheffe_family(candidates)?, ds, tau);
    }
    let masks = |h: usize| -> BTreeSet<u64> {
        let mut out = BTreeSet::new();
        for hp in 0..candidates.len() {
            if hp == h {
                continue;
            }
            let mut w = 0u64;
            for z in 0..universe {
                if candidates[h].mass(z) > candidates[hp].mass(z) {
                    w |= 1 << z;
                }
            }
            out.insert(w);
        }
        out
    };
    scheffe_scores_from_masks(candidates, ds, tau, masks)
}

/// Shared scoring core: `masks_for(h)` yields exactly the witness sets
/// `W_{h,h'}` realized over rivals `h' != h`.
pub(crate) fn scheffe_scores_from_masks(
    candidates: &[FiniteDistribution],
    ds: &Dataset,
    tau: f64,
    masks_for: impl Fn(usize) -> BTreeSet<u64>,
) -> Result<ScoreVector> {
    let universe = check_same_domain(candidates)?;
    if candidates.len() < 2 {
        return Err(Error::InvalidArgument(
            "pairwise scores need at least two candidates".into(),
        ));
    }
    if ds.universe_size() != universe {
        return Err(Error::LengthMismatch(ds.universe_size(), universe));
    }
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tau must be positive, got {tau}"
        )));
    }
    // Group users by their item-count vector; identical users score alike.
    let mut types: BTreeMap<Vec<u16>, usize> = BTreeMap::new();
    for record in ds.users() {
        let mut counts = vec![0u16; universe];
        for &z in record {
            counts[z] += 1;
        }
        *types.entry(counts).or_insert(0) += 1;
    }
    let types: Vec<(Vec<u16>, usize)> = types.into_iter().collect();
    let mf = ds.m() as f64;

    let mut scores = Vec::with_capacity(candidates.len());
    for (h, cand) in candidates.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for w in masks_for(h) {
            let pw = cand.mask_mass(w);
            let mut pscr = 0.0;
            for (counts, mult) in &types {
                let mut inside = 0u32;
                for (z, &c) in counts.iter().enumerate().take(universe) {
                    if w >> z & 1 == 1 {
                        inside += u32::from(c);
                    }
                }
                pscr += *mult as f64 * clip(-tau, tau, mf * pw - f64::from(inside));
            }
            best = best.max(pscr);
        }
        scores.push(best);
    }
    ScoreVector::new(scores, 2.0 * tau)
}
