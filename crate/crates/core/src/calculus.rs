//! Closed-form privacy-parameter arithmetic.
//!
//! Every function here maps `(epsilon, delta)` pairs to `(epsilon, delta)`
//! pairs by an exact formula; nothing is estimated. Derived deltas are
//! capped at 1 (the vacuous bound) so results always construct a valid
//! [`PrivacyParams`].
//!
//! | operation              | epsilon out                  | delta out                              |
//! |------------------------|------------------------------|----------------------------------------|
//! | `compose_triangle`     | `e1 + e2`                    | `e^{e1} d2 + e^{e2} d1`                |
//! | `group_privacy`        | `k e`                        | `(e^{ke} - 1)/(e^e - 1) * d`           |
//! | `subsample_amplify`    | `ln(1 + eta (e^e - 1))`      | `eta * d`                              |
//! | `translate_item_to_user` | `e^2 / (ln(1/d) sqrt(m ln(m/d)))` | `c * d * e / (m ln(1/d))`        |

use crate::dist::PrivacyParams;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Largest truncation radius the library will derive; beyond this the
/// deletion-stability machinery is infeasible anyway.
const MAX_KAPPA: f64 = 1e15;

/// Internal parameters of the deletion-stability wrapper: the working
/// budget `(eps_bar, delta_bar)` and the truncation radius `kappa` of the
/// shifted truncated discrete Laplace it draws from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelStabParams {
    pub eps_bar: f64,
    pub delta_bar: f64,
    pub kappa: usize,
}

fn cap_delta(delta: f64) -> f64 {
    if delta > 1.0 {
        1.0
    } else {
        delta
    }
}

/// Adaptive two-step composition: indistinguishability `(e1, d1)` followed
/// by `(e2, d2)` gives `(e1 + e2, e^{e1} d2 + e^{e2} d1)`.
///
/// Composing with `(0, 0)` on either side returns the other pair
/// bit-for-bit.
pub fn compose_triangle(first: PrivacyParams, second: PrivacyParams) -> Result<PrivacyParams> {
    let epsilon = first.epsilon() + second.epsilon();
    let delta =
        first.epsilon().exp() * second.delta() + second.epsilon().exp() * first.delta();
    PrivacyParams::new(epsilon, cap_delta(delta))
}

/// Group privacy for groups of `k` users: `(e, d)` indistinguishability of
/// neighbors implies `(ke, ((e^{ke} - 1)/(e^e - 1)) d)` for datasets
/// differing in `k` users.
///
/// `k = 1` returns `pp` bit-for-bit; the delta factor is `k` exactly when
/// `epsilon = 0` (the formula's limit).
pub fn group_privacy(pp: PrivacyParams, k: u32) -> Result<PrivacyParams> {
    if k == 0 {
        return Err(Error::InvalidArgument("group size must be positive".into()));
    }
    let kf = f64::from(k);
    let epsilon = kf * pp.epsilon();
    let delta = if pp.delta() == 0.0 {
        0.0
    } else if pp.epsilon() == 0.0 {
        kf * pp.delta()
    } else {
        // expm1 keeps the ratio accurate for small epsilon; k = 1 divides a
        // value by itself and is exactly 1.
        (kf * pp.epsilon()).exp_m1() / pp.epsilon().exp_m1() * pp.delta()
    };
    PrivacyParams::new(epsilon, cap_delta(delta))
}

/// Amplification by subsampling: running an `(e, d)` mechanism on an
/// `eta`-fraction random subsample is `(ln(1 + eta (e^e - 1)), eta d)`.
///
/// `eta = 1` returns `pp` bit-for-bit.
pub fn subsample_amplify(pp: PrivacyParams, eta: f64) -> Result<PrivacyParams> {
    if !eta.is_finite() || !(0.0..=1.0).contains(&eta) || eta == 0.0 {
        return Err(Error::InvalidParams(format!(
            "subsampling rate must lie in (0, 1], got {eta}"
        )));
    }
    if eta == 1.0 {
        return Ok(pp);
    }
    let epsilon = (eta * pp.epsilon().exp_m1()).ln_1p();
    PrivacyParams::new(epsilon, eta * pp.delta())
}

/// Internal parameters of the deletion-stability wrapper for a target
/// `(e, d)` budget:
///
/// - `eps_bar = e / 3`
/// - `delta_bar = d / (e^{2 eps_bar} + e^{eps_bar} + 2)`
/// - `kappa = 1 + ceil(ln(1/delta_bar) / eps_bar)`
///
/// Requires `e > 0` and `d > 0`.
pub fn delstab_params(pp: PrivacyParams) -> Result<DelStabParams> {
    if pp.epsilon() == 0.0 || pp.delta() == 0.0 {
        return Err(Error::InvalidParams(format!(
            "deletion stability needs epsilon > 0 and delta > 0, got ({}, {})",
            pp.epsilon(),
            pp.delta()
        )));
    }
    let eps_bar = pp.epsilon() / 3.0;
    let delta_bar = pp.delta() / ((2.0 * eps_bar).exp() + eps_bar.exp() + 2.0);
    let kappa_f = 1.0 + ((1.0 / delta_bar).ln() / eps_bar).ceil();
    if !(kappa_f.is_finite() && kappa_f <= MAX_KAPPA) {
        return Err(Error::InvalidParams(format!(
            "truncation radius overflows at epsilon = {}, delta = {}",
            pp.epsilon(),
            pp.delta()
        )));
    }
    Ok(DelStabParams {
        eps_bar,
        delta_bar,
        kappa: kappa_f as usize,
    })
}

/// Item-to-user budget translation: an item-level `(e, d)` guarantee on
/// users holding `m` examples each yields user-level
/// `(e^2 / (ln(1/d) sqrt(m ln(m/d))), c_delta * d * e / (m ln(1/d)))`.
///
/// `c_delta` is the constant the asymptotic statement hides; callers pick
/// it (1 is the neutral choice). Requires `0 < d < 1` and `m ln(m/d) > 0`.
pub fn translate_item_to_user(
    pp: PrivacyParams,
    m: usize,
    c_delta: f64,
) -> Result<PrivacyParams> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be positive".into()));
    }
    if !c_delta.is_finite() || c_delta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "c_delta must be positive, got {c_delta}"
        )));
    }
    if pp.delta() <= 0.0 || pp.delta() >= 1.0 {
        return Err(Error::InvalidParams(format!(
            "translation needs delta in (0, 1), got {}",
            pp.delta()
        )));
    }
    let mf = m as f64;
    let log_inv_delta = (1.0 / pp.delta()).ln();
    let inner = mf * (mf / pp.delta()).ln();
    if inner <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "m ln(m/delta) must be positive, got {inner}"
        )));
    }
    let epsilon = pp.epsilon() * pp.epsilon() / (log_inv_delta * inner.sqrt());
    let delta = c_delta * pp.delta() * pp.epsilon() / (mf * log_inv_delta);
    PrivacyParams::new(epsilon, cap_delta(delta))
}

/// Shape of the user sample-complexity bound with unit constants:
/// `ln(1/d)/e + n_item/m`. Harness annotation only; degenerate parameters
/// (`e = 0`, `d = 0`, `m = 0`) give an infinite estimate.
pub fn user_complexity_estimate(n_item: f64, pp: PrivacyParams, m: usize) -> f64 {
    (1.0 / pp.delta()).ln() / pp.epsilon() + n_item / m as f64
}
