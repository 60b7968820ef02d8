//! JSON descriptions of the mechanisms the CLI can build.
//!
//! Every subcommand that needs a mechanism reads one of these specs from a
//! file. The `kind` tag picks the constructor; the remaining fields are the
//! constructor arguments. Validation happens in [`MechanismSpec::build`], so
//! a spec that deserializes can still be rejected with a clear message.

use serde::{Deserialize, Serialize};
use userdp::mechanisms::{
    rr_count, ConstantMechanism, LearnDiscreteMechanism, PacEmMechanism, RandomizedResponse,
};
use userdp::{CountSummaryMechanism, FiniteDistribution, Hypothesis, Mechanism, Result};

/// A mechanism the CLI knows how to construct.
///
/// | `kind`                | backing type                                    |
/// |-----------------------|-------------------------------------------------|
/// | `constant`            | [`ConstantMechanism`], ignores its input        |
/// | `count_summary`       | [`CountSummaryMechanism`] from an explicit table|
/// | `rr_count`            | randomized response reduced to its bit count    |
/// | `randomized_response` | per-bit randomized response over full outputs   |
/// | `pac_em`              | exponential mechanism over labeled hypotheses   |
/// | `learn_discrete`      | exponential mechanism over a grid cover         |
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MechanismSpec {
    Constant {
        input_users: usize,
        m: usize,
        universe_size: usize,
        output: Vec<f64>,
    },
    CountSummary {
        input_users: usize,
        m: usize,
        item_values: Vec<u64>,
        table: Vec<Vec<f64>>,
    },
    RrCount {
        input_users: usize,
        m: usize,
        eps0: f64,
    },
    RandomizedResponse {
        bits: usize,
        eps0: f64,
    },
    PacEm {
        hypotheses: Vec<Vec<u8>>,
        input_users: usize,
        m: usize,
        epsilon: f64,
    },
    LearnDiscrete {
        input_users: usize,
        m: usize,
        k: usize,
        alpha: f64,
        epsilon: f64,
        c_tau: f64,
        #[serde(default)]
        budget: Option<u64>,
    },
}

impl MechanismSpec {
    /// Short label used in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            MechanismSpec::Constant { .. } => "constant",
            MechanismSpec::CountSummary { .. } => "count_summary",
            MechanismSpec::RrCount { .. } => "rr_count",
            MechanismSpec::RandomizedResponse { .. } => "randomized_response",
            MechanismSpec::PacEm { .. } => "pac_em",
            MechanismSpec::LearnDiscrete { .. } => "learn_discrete",
        }
    }

    /// Construct the mechanism, validating all parameters.
    ///
    /// `default_budget` only matters for kinds with a precomputation budget
    /// and no explicit `budget` field.
    pub fn build(&self, default_budget: u64) -> Result<Box<dyn Mechanism>> {
        match self {
            MechanismSpec::Constant {
                input_users,
                m,
                universe_size,
                output,
            } => {
                let pmf = FiniteDistribution::new(output.clone())?;
                Ok(Box::new(ConstantMechanism::new(
                    *input_users,
                    *m,
                    *universe_size,
                    pmf,
                )))
            }
            MechanismSpec::CountSummary {
                input_users,
                m,
                item_values,
                table,
            } => {
                let rows = table
                    .iter()
                    .map(|row| FiniteDistribution::new(row.clone()))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Box::new(CountSummaryMechanism::new(
                    *input_users,
                    *m,
                    item_values.clone(),
                    rows,
                )?))
            }
            MechanismSpec::RrCount {
                input_users,
                m,
                eps0,
            } => Ok(Box::new(rr_count(*input_users, *m, *eps0)?)),
            MechanismSpec::RandomizedResponse { bits, eps0 } => {
                Ok(Box::new(RandomizedResponse::new(*bits, *eps0)?))
            }
            MechanismSpec::PacEm {
                hypotheses,
                input_users,
                m,
                epsilon,
            } => {
                let hyps = hypotheses
                    .iter()
                    .map(|labels| Hypothesis::new(labels.clone()))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Box::new(PacEmMechanism::new(
                    hyps,
                    *input_users,
                    *m,
                    *epsilon,
                )?))
            }
            MechanismSpec::LearnDiscrete {
                input_users,
                m,
                k,
                alpha,
                epsilon,
                c_tau,
                budget,
            } => Ok(Box::new(LearnDiscreteMechanism::new(
                *input_users,
                *m,
                *k,
                *alpha,
                *epsilon,
                *c_tau,
                budget.unwrap_or(default_budget),
            )?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_round_trip_and_build() {
        let specs = [
            r#"{"kind":"constant","input_users":2,"m":1,"universe_size":3,"output":[0.5,0.5]}"#,
            r#"{"kind":"rr_count","input_users":3,"m":2,"eps0":1.0}"#,
            r#"{"kind":"randomized_response","bits":4,"eps0":0.5}"#,
            r#"{"kind":"pac_em","hypotheses":[[0,1],[1,0]],"input_users":3,"m":2,"epsilon":1.0}"#,
            r#"{"kind":"learn_discrete","input_users":3,"m":2,"k":2,"alpha":0.5,"epsilon":1.0,"c_tau":1.0}"#,
        ];
        for text in specs {
            let spec: MechanismSpec = serde_json::from_str(text).unwrap();
            let mech = spec.build(1_000_000).unwrap();
            assert!(mech.input_users() > 0);
            let back: MechanismSpec =
                serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
            assert_eq!(back.kind(), spec.kind());
        }
    }

    #[test]
    fn count_summary_table_is_validated() {
        let spec: MechanismSpec = serde_json::from_str(
            r#"{"kind":"count_summary","input_users":1,"m":1,
                "item_values":[0,1],"table":[[1.0,0.0]]}"#,
        )
        .unwrap();
        // Table needs a row per achievable total, here 0 and 1.
        assert!(spec.build(0).is_err());
    }

    #[test]
    fn unknown_kind_is_rejected_at_parse_time() {
        let err = serde_json::from_str::<MechanismSpec>(r#"{"kind":"magic"}"#);
        assert!(err.is_err());
    }

    #[test]
    fn explicit_budget_overrides_the_default() {
        let spec: MechanismSpec = serde_json::from_str(
            r#"{"kind":"learn_discrete","input_users":3,"m":2,"k":2,
                "alpha":0.5,"epsilon":1.0,"c_tau":1.0,"budget":1}"#,
        )
        .unwrap();
        let err = spec.build(u64::MAX).map(|_| ()).unwrap_err();
        assert!(err.is_budget());
    }
}
