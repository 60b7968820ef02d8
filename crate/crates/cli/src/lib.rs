//! Library half of the `userdp` command line tool.
//!
//! The binary itself only parses arguments and maps errors to exit codes;
//! everything it does lives here so integration tests can drive the same
//! code paths directly.

use userdp::{Error, Result};

pub mod experiment;
pub mod mechanism;

/// Built-in work budget used when neither `--budget` nor the environment
/// override is present. Counts mechanism evaluations or table entries,
/// depending on the operation.
pub const DEFAULT_BUDGET: u64 = 100_000_000;

/// Environment variable that overrides [`DEFAULT_BUDGET`]. An explicit
/// `--budget` flag still wins.
pub const BUDGET_ENV: &str = "USERDP_BUDGET";

/// The environment override, if set. A set but unparsable value is a
/// validation error rather than a silent fallback.
pub fn budget_from_env() -> Result<Option<u64>> {
    match std::env::var(BUDGET_ENV) {
        Ok(raw) => raw.trim().parse::<u64>().map(Some).map_err(|_| {
            Error::InvalidArgument(format!(
                "{BUDGET_ENV} must be a non-negative integer, got {raw:?}"
            ))
        }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::InvalidArgument(format!("{BUDGET_ENV}: {e}"))),
    }
}

/// Budget resolution order: flag, then environment, then built-in default.
pub fn resolve_budget(flag: Option<u64>) -> Result<u64> {
    if let Some(b) = flag {
        return Ok(b);
    }
    Ok(budget_from_env()?.unwrap_or(DEFAULT_BUDGET))
}
