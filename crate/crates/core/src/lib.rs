//! User-level differential privacy toolkit for finite domains.
//!
//! Everything here works with exactly representable, fully enumerated
//! probability distributions, which makes privacy claims *checkable*: the
//! [`audit`] module verifies DP guarantees by computing hockey-stick
//! divergences between exact output laws instead of bounding them by hand.
//!
//! The crate covers:
//!
//! - [`dist`]: probability vectors over finite domains, datasets of
//!   multi-example user records, and the divergences (hockey-stick, total
//!   variation, KL, chi-squared) used throughout.
//! - [`calculus`]: arithmetic on `(epsilon, delta)` pairs — composition,
//!   group privacy, subsampling amplification, and the parameter
//!   translations that turn an item-level guarantee into a user-level one.
//! - [`noise`]: the truncated discrete Laplace distribution used to
//!   randomize deletion radii.
//! - [`em`]: the exponential mechanism over explicit score vectors, plus
//!   clipped pairwise comparison scores (Scheffe and agnostic families) and
//!   the PAC realizability score.
//! - [`delstab`]: the deletion-stability wrapper that converts local
//!   deletion-indistinguishability of an arbitrary mechanism into a
//!   user-level DP guarantee, with an exactly computable output law for
//!   count-summary mechanisms.
//! - [`learners`]: private learners built from the pieces above — PAC
//!   selection over sampled hypothesis lists, hypothesis selection over
//!   candidate distributions, and discrete distribution learning over a
//!   grid cover.
//! - [`audit`]: exhaustive and sampled neighbor-pair DP verification and a
//!   sample-perfect-generalization estimator.
//! - [`mechanisms`]: small exactly evaluable mechanisms used as audit
//!   targets and demo subjects.
//!
//! All randomness flows through seeded ChaCha12 generators (see [`seeding`]):
//! identical seeds yield identical results, byte for byte.

use thiserror::Error;

pub mod audit;
pub mod calculus;
pub mod delstab;
pub mod dist;
pub mod em;
pub mod learners;
pub mod mechanisms;
pub mod noise;
pub mod seeding;

pub use audit::{estimate_spg, verify_item_dp, verify_user_dp, AuditMode, AuditReport, SpgReport};
pub use calculus::{
    compose_triangle, delstab_params, group_privacy, subsample_amplify, translate_item_to_user,
    user_complexity_estimate, DelStabParams,
};
pub use delstab::{
    delstab_distribution, delstab_run, lddp_check, stable_subset_counts, subsample_law,
    CountSummaryMechanism, DelStabLaw, DelStabOutcome, Mechanism,
};
pub use dist::{
    approx_indist, chi2_divergence, clip, hockey_stick, kl_divergence, tv_distance, Dataset,
    Divergence, FiniteDistribution, PrivacyParams,
};
pub use em::{
    agnostic_family, default_tau, em_distribution, em_select, pac_score, pac_scores,
    pairwise_clipped_scores, scheffe_clipped_scores, scheffe_family, ComparisonFamily, Hypothesis,
    ScoreVector,
};
pub use learners::{
    agnostic_pac_learn, baseline_discard, baseline_group, build_grid_cover, hypothesis_select,
    hypothesis_select_distribution, learn_discrete, learn_discrete_distribution, pac_learn,
    GridCover, ProbabilisticRepresentation,
};
pub use noise::TdLap;

/// Errors produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("masses must be non-negative, finite, and sum to 1 (sum = {0})")]
    NotNormalized(f64),

    #[error("invalid privacy parameters: {0}")]
    InvalidParams(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The requested exact computation does not fit its combinatorial budget.
    /// Distinct from a validation error: the inputs are well formed but the
    /// instance is too large to check at this size.
    #[error("combinatorial budget exceeded: {0}")]
    BudgetExceeded(String),
}

impl Error {
    /// True when the error signals an instance too large for exact work
    /// rather than malformed input.
    pub fn is_budget(&self) -> bool {
        matches!(self, Error::BudgetExceeded(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
