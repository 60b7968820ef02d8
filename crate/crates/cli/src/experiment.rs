//! Seeded experiment harness behind the learning subcommands.
//!
//! A config names a task, an `(n, m)` grid, accuracy and privacy targets,
//! and a master seed. The harness runs `trials` independent trials per grid
//! cell and reports the success rate (error at most `alpha`) and the median
//! error. Every random choice flows from the master seed through one scheme,
//! so rerunning a config reproduces its output byte for byte:
//!
//! * cells are the grid's `(n, m)` pairs, sorted and deduplicated;
//! * cell `i` gets `cell_seed = derive_seed(config.seed, i)`;
//! * trial `t` of a cell runs entirely on `trial_rng(cell_seed, t)`, first
//!   drawing the dataset, then feeding the learner's own coin flips.
//!
//! The `seed` column of the CSV is the cell seed, so any row can be replayed
//! standalone with a one-cell grid.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use userdp::seeding::{derive_seed, trial_rng};
use userdp::{
    baseline_discard, baseline_group, hypothesis_select, learn_discrete, pac_learn, tv_distance,
    Dataset, Error, FiniteDistribution, Hypothesis, ProbabilisticRepresentation, Result,
};

/// Which learner a config exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    LearnDiscrete,
    HypothesisSelect,
    PacLearn,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::LearnDiscrete => "learn-discrete",
            TaskKind::HypothesisSelect => "hypothesis-select",
            TaskKind::PacLearn => "pac-learn",
        }
    }
}

/// How the drawn dataset is reshaped before the learner sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Hand the dataset over unchanged.
    #[default]
    None,
    /// Keep only each user's first example.
    Discard,
    /// Repack all `n * m` examples into synthetic users of `group_size`.
    Group,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::None => "none",
            Baseline::Discard => "discard",
            Baseline::Group => "group",
        }
    }
}

/// Tunable constants; the defaults match the library's.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Constants {
    /// Multiplier on the clipping threshold used by the selection scores.
    pub c_tau: f64,
    /// Cap on the grid cover size built for `learn-discrete`.
    pub cover_budget: u64,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            c_tau: 1.0,
            cover_budget: 10_000_000,
        }
    }
}

/// Task block for `learn-discrete`: recover a distribution over `k` symbols.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnDiscreteTask {
    pub k: usize,
    /// True distribution the data is drawn from; also the error reference.
    pub source: Vec<f64>,
}

/// Task block for `hypothesis-select`: pick among candidate distributions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSelectTask {
    pub candidates: Vec<Vec<f64>>,
    pub source: Vec<f64>,
}

/// Task block for `pac-learn`: realizable binary classification. Examples
/// are encoded as universe items `z = 2 x + label(x)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacLearnTask {
    /// Hypothesis class as 0/1 label vectors over the point domain.
    pub hypotheses: Vec<Vec<u8>>,
    /// Index of the labeling hypothesis inside `hypotheses`.
    pub truth: usize,
    /// Marginal over unlabeled points.
    pub point_source: Vec<f64>,
}

/// A full experiment description; see the module docs for the seed scheme.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub alpha: f64,
    pub epsilon: f64,
    pub trials: u64,
    pub seed: u64,
    #[serde(default)]
    pub constants: Constants,
    #[serde(default)]
    pub baseline: Baseline,
    /// Synthetic user size; required (and only allowed) for `baseline: group`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learn_discrete: Option<LearnDiscreteTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_select: Option<HypothesisSelectTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pac_learn: Option<PacLearnTask>,
}

/// Validated task payload with constructed distributions.
enum Learner {
    LearnDiscrete {
        k: usize,
        source: FiniteDistribution,
    },
    HypothesisSelect {
        candidates: Vec<FiniteDistribution>,
        source: FiniteDistribution,
    },
    PacLearn {
        hypotheses: Vec<Hypothesis>,
        truth: Hypothesis,
        point_source: FiniteDistribution,
    },
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("config does not match the schema: {e}")))
    }

    /// The grid's `(n, m)` cells, sorted and deduplicated. Cell `i` of this
    /// list is seeded with `derive_seed(self.seed, i)`.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for &n in &self.n_grid {
            for &m in &self.m_grid {
                set.insert((n, m));
            }
        }
        set.into_iter().collect()
    }

    fn prepared(&self) -> Result<Learner> {
        if !self.alpha.is_finite() || self.alpha <= 0.0 || self.alpha >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be finite and positive, got {}",
                self.epsilon
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be positive".into()));
        }
        if self.n_grid.contains(&0) || self.m_grid.contains(&0) {
            return Err(Error::InvalidArgument(
                "grid entries must be positive".into(),
            ));
        }
        match self.baseline {
            Baseline::Group => {
                let g = self.group_size.ok_or_else(|| {
                    Error::InvalidArgument("baseline group requires group_size".into())
                })?;
                if g == 0 {
                    return Err(Error::InvalidArgument("group_size must be positive".into()));
                }
                for (n, m) in self.cells() {
                    if (n * m) % g != 0 {
                        return Err(Error::InvalidArgument(format!(
                            "cell (n={n}, m={m}) holds {} examples, not divisible \
                             into groups of {g}",
                            n * m
                        )));
                    }
                }
            }
            _ => {
                if self.group_size.is_some() {
                    return Err(Error::InvalidArgument(
                        "group_size only applies to baseline group".into(),
                    ));
                }
            }
        }
        let blocks = [
            self.learn_discrete.is_some(),
            self.hypothesis_select.is_some(),
            self.pac_learn.is_some(),
        ];
        if blocks.iter().filter(|&&b| b).count() != 1 {
            return Err(Error::InvalidArgument(
                "config must set exactly one task block \
                 (learn_discrete, hypothesis_select, or pac_learn)"
                    .into(),
            ));
        }
        match self.task {
            TaskKind::LearnDiscrete => {
                let block = self.learn_discrete.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("task learn-discrete needs the learn_discrete block".into())
                })?;
                if block.k < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "learn-discrete needs k >= 2, got {}",
                        block.k
                    )));
                }
                if block.source.len() != block.k {
                    return Err(Error::InvalidArgument(format!(
                        "source has {} masses but k = {}",
                        block.source.len(),
                        block.k
                    )));
                }
                Ok(Learner::LearnDiscrete {
                    k: block.k,
                    source: FiniteDistribution::new(block.source.clone())?,
                })
            }
            TaskKind::HypothesisSelect => {
                let block = self.hypothesis_select.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(
                        "task hypothesis-select needs the hypothesis_select block".into(),
                    )
                })?;
                if block.candidates.len() < 2 {
                    return Err(Error::InvalidArgument(
                        "hypothesis-select needs at least two candidates".into(),
                    ));
                }
                let source = FiniteDistribution::new(block.source.clone())?;
                let candidates = block
                    .candidates
                    .iter()
                    .map(|c| FiniteDistribution::new(c.clone()))
                    .collect::<Result<Vec<_>>>()?;
                if candidates.iter().any(|c| c.len() != source.len()) {
                    return Err(Error::InvalidArgument(
                        "candidates and source must share one domain".into(),
                    ));
                }
                Ok(Learner::HypothesisSelect { candidates, source })
            }
            TaskKind::PacLearn => {
                let block = self.pac_learn.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("task pac-learn needs the pac_learn block".into())
                })?;
                let hypotheses = block
                    .hypotheses
                    .iter()
                    .map(|labels| Hypothesis::new(labels.clone()))
                    .collect::<Result<Vec<_>>>()?;
                if hypotheses.is_empty() {
                    return Err(Error::InvalidArgument("empty hypothesis class".into()));
                }
                let points = hypotheses[0].points();
                if hypotheses.iter().any(|h| h.points() != points) {
                    return Err(Error::InvalidArgument(
                        "hypotheses must share one point domain".into(),
                    ));
                }
                if block.point_source.len() != points {
                    return Err(Error::InvalidArgument(format!(
                        "point_source has {} masses but hypotheses cover {points} points",
                        block.point_source.len()
                    )));
                }
                let truth = hypotheses.get(block.truth).cloned().ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "truth index {} out of range for {} hypotheses",
                        block.truth,
                        hypotheses.len()
                    ))
                })?;
                Ok(Learner::PacLearn {
                    hypotheses,
                    truth,
                    point_source: FiniteDistribution::new(block.point_source.clone())?,
                })
            }
        }
    }
}

impl Learner {
    fn universe_size(&self) -> usize {
        match self {
            Learner::LearnDiscrete { k, .. } => *k,
            Learner::HypothesisSelect { source, .. } => source.len(),
            Learner::PacLearn { point_source, .. } => 2 * point_source.len(),
        }
    }

    /// Draw `n` users of `m` iid examples.
    fn draw(&self, n: usize, m: usize, rng: &mut impl Rng) -> Result<Dataset> {
        let users = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| match self {
                        Learner::LearnDiscrete { source, .. }
                        | Learner::HypothesisSelect { source, .. } => source.sample(rng),
                        Learner::PacLearn {
                            truth,
                            point_source,
                            ..
                        } => {
                            let x = point_source.sample(rng);
                            2 * x + truth.label(x) as usize
                        }
                    })
                    .collect()
            })
            .collect();
        Dataset::new(self.universe_size(), m, users)
    }
}

/// One trial's outcome, one row of the optional trial log.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub error: f64,
    pub success: bool,
}

/// One grid cell's aggregate, mirroring one CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub task: String,
    pub n: usize,
    pub m: usize,
    pub epsilon: f64,
    pub alpha: f64,
    pub trials: u64,
    pub success_rate: f64,
    pub median_error: f64,
    pub seed: u64,
    /// Per-trial detail, kept out of the JSON summary.
    #[serde(skip_serializing)]
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub task: String,
    pub baseline: String,
    pub alpha: f64,
    pub epsilon: f64,
    pub trials: u64,
    pub seed: u64,
    pub cells: Vec<CellResult>,
}

pub const CSV_HEADER: &str = "task,n,m,epsilon,alpha,trials,success_rate,median_error,seed";
pub const TRIAL_LOG_HEADER: &str = "task,n,m,trial,error,success";

impl ExperimentResult {
    /// The per-cell CSV, header always present, rows sorted by `(n, m)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.task,
                c.n,
                c.m,
                c.epsilon,
                c.alpha,
                c.trials,
                c.success_rate,
                c.median_error,
                c.seed
            )
            .expect("string write");
        }
        out
    }

    /// Per-trial CSV across all cells, in cell order.
    pub fn trial_log_csv(&self) -> String {
        let mut out = String::from(TRIAL_LOG_HEADER);
        out.push('\n');
        for c in &self.cells {
            for r in &c.records {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    c.task, c.n, c.m, r.trial, r.error, r.success
                )
                .expect("string write");
            }
        }
        out
    }
}

fn median(mut errors: Vec<f64>) -> f64 {
    errors.sort_by(f64::total_cmp);
    let mid = errors.len() / 2;
    if errors.len() % 2 == 1 {
        errors[mid]
    } else {
        0.5 * (errors[mid - 1] + errors[mid])
    }
}

/// Mass of points where `h` and `truth` disagree.
fn disagreement(h: &Hypothesis, truth: &Hypothesis, point_source: &FiniteDistribution) -> f64 {
    (0..truth.points())
        .map(|x| {
            if h.label(x) != truth.label(x) {
                point_source.mass(x)
            } else {
                0.0
            }
        })
        .sum()
}

/// Per-user examples beyond `ceil(1/alpha)` cannot lower the per-user error
/// threshold any further, so the harness drops them before learning.
fn truncate_for_pac(ds: Dataset, alpha: f64) -> Result<Dataset> {
    let cap = (1.0 / alpha).ceil() as usize;
    if ds.m() <= cap {
        return Ok(ds);
    }
    let users = ds.users().iter().map(|u| u[..cap].to_vec()).collect();
    Dataset::new(ds.universe_size(), cap, users)
}

fn run_trial(
    cfg: &ExperimentConfig,
    learner: &Learner,
    n: usize,
    m: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let raw = learner.draw(n, m, rng)?;
    let ds = match cfg.baseline {
        Baseline::None => raw,
        Baseline::Discard => baseline_discard(&raw)?,
        Baseline::Group => baseline_group(&raw, cfg.group_size.expect("validated"))?,
    };
    match learner {
        Learner::LearnDiscrete { k, source } => {
            let learned = learn_discrete(
                &ds,
                *k,
                cfg.alpha,
                cfg.epsilon,
                cfg.constants.c_tau,
                rng,
                cfg.constants.cover_budget,
            )?;
            tv_distance(&learned, source)
        }
        Learner::HypothesisSelect { candidates, source } => {
            let pick = hypothesis_select(
                candidates,
                &ds,
                cfg.epsilon,
                cfg.alpha,
                cfg.constants.c_tau,
                rng,
            )?;
            tv_distance(&candidates[pick], source)
        }
        Learner::PacLearn {
            hypotheses,
            truth,
            point_source,
        } => {
            let ds = truncate_for_pac(ds, cfg.alpha)?;
            let pr = ProbabilisticRepresentation::point_mass(hypotheses.clone())?;
            let h = pac_learn(&pr, &ds, cfg.epsilon, rng)?;
            Ok(disagreement(&h, truth, point_source))
        }
    }
}

/// Run one grid cell under an explicit cell seed. This is exactly what
/// [`run_experiment`] does for each cell, exposed so a single CSV row can be
/// reproduced from its `seed` column.
pub fn run_cell(cfg: &ExperimentConfig, n: usize, m: usize, cell_seed: u64) -> Result<CellResult> {
    let learner = cfg.prepared()?;
    run_cell_inner(cfg, &learner, n, m, cell_seed)
}

fn run_cell_inner(
    cfg: &ExperimentConfig,
    learner: &Learner,
    n: usize,
    m: usize,
    cell_seed: u64,
) -> Result<CellResult> {
    let mut records = Vec::with_capacity(cfg.trials as usize);
    for t in 0..cfg.trials {
        let mut rng = trial_rng(cell_seed, t);
        let error = run_trial(cfg, learner, n, m, &mut rng)?;
        records.push(TrialRecord {
            trial: t,
            error,
            success: error <= cfg.alpha,
        });
    }
    let successes = records.iter().filter(|r| r.success).count();
    Ok(CellResult {
        task: cfg.task.name().to_string(),
        n,
        m,
        epsilon: cfg.epsilon,
        alpha: cfg.alpha,
        trials: cfg.trials,
        success_rate: successes as f64 / cfg.trials as f64,
        median_error: median(records.iter().map(|r| r.error).collect()),
        seed: cell_seed,
        records,
    })
}

/// Run every cell of the config's grid. Deterministic in the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let learner = cfg.prepared()?;
    let mut cells = Vec::new();
    for (i, (n, m)) in cfg.cells().into_iter().enumerate() {
        let cell_seed = derive_seed(cfg.seed, i as u64);
        cells.push(run_cell_inner(cfg, &learner, n, m, cell_seed)?);
    }
    Ok(ExperimentResult {
        task: cfg.task.name().to_string(),
        baseline: cfg.baseline.name().to_string(),
        alpha: cfg.alpha,
        epsilon: cfg.epsilon,
        trials: cfg.trials,
        seed: cfg.seed,
        cells,
    })
}
