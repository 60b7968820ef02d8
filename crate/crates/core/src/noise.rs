//! Shifted truncated discrete Laplace noise.

use crate::dist::FiniteDistribution;
use crate::{Error, Result};
use rand::Rng;

/// Largest truncation radius the library will materialize as a dense pmf.
const MAX_KAPPA: usize = 1 << 22;

/// The shifted truncated discrete Laplace distribution on `{0, .., 2k}`
/// with `pmf(x)` proportional to `exp(-eps |x - k|)`, where the radius is
/// `k = 1 + ceil(ln(1/delta) / eps)`.
///
/// Properties (all exact by construction):
///
/// | property        | statement                                   |
/// |-----------------|---------------------------------------------|
/// | symmetry        | `pmf(k - i) == pmf(k + i)` bit-for-bit      |
/// | adjacent ratio  | `pmf(r) / pmf(r') <= e^{eps |r - r'|}`      |
/// | edge mass       | `pmf(0) <= delta`                           |
#[derive(Debug, Clone, PartialEq)]
pub struct TdLap {
    epsilon: f64,
    delta: f64,
    kappa: usize,
    masses: FiniteDistribution,
}

impl TdLap {
    /// Requires `eps > 0` and `0 < delta < 1`.
    pub fn new(eps: f64, delta: f64) -> Result<Self> {
        if !eps.is_finite() || eps <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "TDLap needs epsilon > 0, got {eps}"
            )));
        }
        if !delta.is_finite() || delta <= 0.0 || delta >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "TDLap needs delta in (0, 1), got {delta}"
            )));
        }
        let kappa_f = 1.0 + ((1.0 / delta).ln() / eps).ceil();
        if !(kappa_f.is_finite() && kappa_f <= MAX_KAPPA as f64) {
            return Err(Error::BudgetExceeded(format!(
                "TDLap support 2*{kappa_f} + 1 too large to materialize"
            )));
        }
        let kappa = kappa_f as usize;

        // Identical weights at distance d on both sides keep the pmf
        // symmetric bit-for-bit; summing small weights first keeps the
        // normalizer accurate.
        let mut z = 0.0;
        for d in (1..=kappa).rev() {
            z += 2.0 * (-eps * d as f64).exp();
        }
        z += 1.0;
        let mut masses = vec![0.0; 2 * kappa + 1];
        for (x, m) in masses.iter_mut().enumerate() {
            let d = (x as i64 - kappa as i64).unsigned_abs();
            *m = (-eps * d as f64).exp() / z;
        }
        Ok(Self {
            epsilon: eps,
            delta,
            kappa,
            masses: FiniteDistribution::new(masses)?,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Truncation radius; the support is `{0, .., 2 * kappa()}`.
    pub fn kappa(&self) -> usize {
        self.kappa
    }

    /// The exact pmf over `{0, .., 2 * kappa()}`.
    pub fn pmf(&self) -> &FiniteDistribution {
        &self.masses
    }

    pub fn mass(&self, x: usize) -> f64 {
        self.masses.mass(x)
    }

    /// One draw by inverse CDF; deterministic given the generator state.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        self.masses.sample(rng)
    }
}
