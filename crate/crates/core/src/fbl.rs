//! Single-hop finite-blocklength primitives under the normal approximation:
//! capacity, complex-channel dispersion, maximal coding rate at a target
//! error probability, and block error probability at a given rate.

use std::f64::consts::LOG2_E;

use crate::error::{Error, Result};
use crate::special::{normal_pdf, q_function, q_inverse};

/// Smallest blocklength for which the normal approximation is trusted.
pub const MIN_BLOCKLENGTH: u32 = 100;

/// Linear-scale signal-to-noise ratio.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct SnrValue(f64);

impl SnrValue {
    pub const ZERO: SnrValue = SnrValue(0.0);

    pub fn new(linear: f64) -> Result<Self> {
        if linear >= 0.0 && linear.is_finite() {
            Ok(SnrValue(linear))
        } else {
            Err(Error::domain(format!(
                "SNR must be finite and >= 0, got {linear}"
            )))
        }
    }

    /// Callers guarantee `linear >= 0`.
    #[inline]
    pub(crate) fn new_unchecked(linear: f64) -> Self {
        debug_assert!(linear >= 0.0);
        SnrValue(linear)
    }

    pub fn from_db(db: f64) -> Result<Self> {
        Self::new(10f64.powf(db / 10.0))
    }

    #[inline]
    pub fn linear(self) -> f64 {
        self.0
    }

    pub fn db(self) -> f64 {
        10.0 * self.0.log10()
    }
}

/// Blocklength and reliability target of one hop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FblParams {
    blocklength: u32,
    epsilon_th: f64,
    backoff: f64,
}

impl FblParams {
    pub fn new(blocklength: u32, epsilon_th: f64) -> Result<Self> {
        if blocklength < MIN_BLOCKLENGTH {
            return Err(Error::config(format!(
                "blocklength must be >= {MIN_BLOCKLENGTH} symbols, got {blocklength}"
            )));
        }
        if !(epsilon_th > 0.0 && epsilon_th <= 0.5) {
            return Err(Error::config(format!(
                "reliability threshold must lie in (0, 0.5], got {epsilon_th}"
            )));
        }
        Ok(FblParams {
            blocklength,
            epsilon_th,
            backoff: q_inverse(epsilon_th)?,
        })
    }

    pub fn blocklength(&self) -> u32 {
        self.blocklength
    }

    pub fn epsilon_th(&self) -> f64 {
        self.epsilon_th
    }

    /// Q⁻¹(ε_th), the rate back-off multiplier.
    pub fn backoff(&self) -> f64 {
        self.backoff
    }

    pub fn with_epsilon(&self, epsilon_th: f64) -> Result<Self> {
        Self::new(self.blocklength, epsilon_th)
    }
}

/// C(γ) = log₂(1 + γ).
#[inline]
pub fn shannon_capacity(gamma: SnrValue) -> f64 {
    gamma.0.ln_1p() * LOG2_E
}

/// V(γ) = (1 − (1+γ)⁻²)(log₂ e)², written as γ(γ+2)/(1+γ)² to stay accurate
/// for small γ.
#[inline]
pub fn dispersion_complex(gamma: SnrValue) -> f64 {
    let g = gamma.0;
    let one_plus = 1.0 + g;
    if g > 1e8 {
        let t = 1.0 / one_plus;
        return (1.0 - t * t) * LOG2_E * LOG2_E;
    }
    g * (g + 2.0) / (one_plus * one_plus) * LOG2_E * LOG2_E
}

/// Maximal coding rate R(γ, ε_th, m) = C(γ) − √(V/m)·Q⁻¹(ε_th), clipped at 0.
#[inline]
pub fn fbl_rate(gamma: SnrValue, params: &FblParams) -> f64 {
    let spread = (dispersion_complex(gamma) / params.blocklength as f64).sqrt();
    (shannon_capacity(gamma) - spread * params.backoff).max(0.0)
}

/// Block error probability P(γ, r, m) = Q((C(γ) − r)/√(V/m)).
///
/// A zero rate transmits nothing and never fails; a zero SNR fails every
/// positive rate.
#[inline]
pub fn fbl_error(gamma: SnrValue, rate: f64, blocklength: u32) -> f64 {
    error_and_slope(gamma.0, rate, blocklength as f64).0
}

/// Returns (P(γ, r, m), ∂P/∂r). The slope is φ(z)/√(V/m).
#[inline]
pub(crate) fn error_and_slope(gamma: f64, rate: f64, m: f64) -> (f64, f64) {
    if rate <= 0.0 {
        return (0.0, 0.0);
    }
    if gamma <= 0.0 {
        return (1.0, 0.0);
    }
    let g = SnrValue(gamma);
    let spread = (dispersion_complex(g) / m).sqrt();
    let z = (shannon_capacity(g) - rate) / spread;
    (q_function(z), normal_pdf(z) / spread)
}

/// Inverse of [`fbl_rate`] in γ: the smallest SNR that supports `rate`.
///
/// For `rate == 0` this is the largest SNR whose rate clips to zero.
pub fn snr_for_rate(rate: f64, params: &FblParams) -> Result<SnrValue> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::domain(format!(
            "rate must be finite and >= 0, got {rate}"
        )));
    }
    let max_spread = LOG2_E / (params.blocklength as f64).sqrt();
    // C(lo) = rate gives R(lo) <= rate; C(hi) = rate + max back-off gives R(hi) >= rate.
    let mut lo = (rate / LOG2_E).exp_m1();
    let mut hi = ((rate + max_spread * params.backoff.max(0.0)) / LOG2_E).exp_m1();
    if params.backoff <= 0.0 {
        return Ok(SnrValue(lo));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r = shannon_capacity(SnrValue(mid))
            - (dispersion_complex(SnrValue(mid)) / params.blocklength as f64).sqrt()
                * params.backoff;
        if r < rate || (rate == 0.0 && r <= 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SnrValue(if rate == 0.0 { lo } else { hi }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn snr(x: f64) -> SnrValue {
        SnrValue::new(x).unwrap()
    }

    #[test]
    fn capacity_values() {
        assert_eq!(shannon_capacity(snr(1.0)), 1.0);
        assert_eq!(shannon_capacity(snr(0.0)), 0.0);
        assert!((shannon_capacity(snr(3.0)) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn dispersion_values() {
        assert_eq!(dispersion_complex(snr(0.0)), 0.0);
        assert!((dispersion_complex(snr(1.0)) - 0.75 * LOG2_E * LOG2_E).abs() < 1e-14);
        assert!((dispersion_complex(snr(1.0)) - 1.56105).abs() < 5e-5);
        assert!((dispersion_complex(snr(1e12)) - 2.0814).abs() < 1e-4);
        assert!(dispersion_complex(snr(1e300)) <= LOG2_E * LOG2_E);
    }

    #[test]
    fn params_validation() {
        assert!(FblParams::new(99, 0.1).is_err());
        assert!(FblParams::new(300, 0.0).is_err());
        assert!(FblParams::new(300, 0.51).is_err());
        assert!(FblParams::new(100, 0.5).is_ok());
        assert!(SnrValue::new(-1.0).is_err());
        assert!(SnrValue::new(f64::NAN).is_err());
    }

    #[test]
    fn rate_examples() {
        let half = FblParams::new(300, 0.5).unwrap();
        assert_eq!(fbl_rate(snr(1.0), &half), 1.0);
        let p = FblParams::new(300, 1e-3).unwrap();
        assert_eq!(fbl_rate(snr(0.0), &p), 0.0);
        let r = fbl_rate(snr(10.0), &p);
        assert!(r > 0.0 && r < 11f64.log2());
        assert!((fbl_error(snr(10.0), r, 300) - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn error_examples() {
        assert_eq!(fbl_error(snr(1.0), 1.0, 300), 0.5);
        assert!(fbl_error(snr(1.0), 0.0, 300) < 1e-10);
        // Just above zero rate the formula applies: Q(≈13.86).
        let tiny = fbl_error(snr(1.0), 1e-12, 300);
        assert!(tiny > 0.0 && tiny < 1e-10);
        assert_eq!(fbl_error(snr(0.0), 0.3, 300), 1.0);
        let p = FblParams::new(300, 0.01).unwrap();
        let r = fbl_rate(snr(5.0), &p);
        assert!((fbl_error(snr(5.0), r, 300) - 0.01).abs() < 1e-9);
    }

    #[test]
    fn inverse_pair_grid() {
        for m in [100u32, 300, 1000] {
            for eps in [1e-5, 1e-3, 1e-2, 0.1, 0.5] {
                let p = FblParams::new(m, eps).unwrap();
                for i in 0..=240 {
                    let g = 10f64.powf(-2.0 + 6.0 * i as f64 / 240.0);
                    let r = fbl_rate(snr(g), &p);
                    if r > 0.0 {
                        let back = fbl_error(snr(g), r, m);
                        assert!((back - eps).abs() <= 1e-9, "m={m} eps={eps} g={g}: {back}");
                    }
                }
            }
        }
    }

    #[test]
    fn snr_for_rate_inverts_rate() {
        let p = FblParams::new(300, 1e-3).unwrap();
        for r in [0.01, 0.5, 2.0, 6.0] {
            let g = snr_for_rate(r, &p).unwrap();
            assert!((fbl_rate(g, &p) - r).abs() < 1e-12, "r = {r}");
        }
        let g0 = snr_for_rate(0.0, &p).unwrap();
        assert_eq!(fbl_rate(g0, &p), 0.0);
        assert!(fbl_rate(snr(g0.linear() * 1.0001), &p) > 0.0);
        let half = FblParams::new(300, 0.5).unwrap();
        assert_eq!(snr_for_rate(0.0, &half).unwrap().linear(), 0.0);
        assert!((snr_for_rate(1.0, &half).unwrap().linear() - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn error_increases_with_rate(g in 0.01f64..1e4, r1 in 0.001f64..14.0, dr in 1e-3f64..2.0) {
            let a = fbl_error(snr(g), r1, 300);
            let b = fbl_error(snr(g), r1 + dr, 300);
            prop_assert!(b >= a);
            prop_assert!((0.0..=1.0).contains(&a));
            if a > 1e-300 && a < 1.0 - 1e-12 {
                prop_assert!(b > a);
            }
        }

        #[test]
        fn rate_monotone_and_bounded(g in 0.01f64..1e4, scale in 1.0001f64..3.0, eps_exp in -5.0f64..-0.31) {
            let p = FblParams::new(300, 10f64.powf(eps_exp)).unwrap();
            let a = fbl_rate(snr(g), &p);
            let b = fbl_rate(snr(g * scale), &p);
            prop_assert!(a >= 0.0 && a <= shannon_capacity(snr(g)));
            if a > 0.0 {
                prop_assert!(b > a);
            }
        }

        #[test]
        fn longer_blocks_support_higher_rates(g in 0.1f64..1e4, eps_exp in -5.0f64..-0.31, m in 100u32..2000) {
            let eps = 10f64.powf(eps_exp);
            let short = fbl_rate(snr(g), &FblParams::new(m, eps).unwrap());
            let long = fbl_rate(snr(g), &FblParams::new(m + 50, eps).unwrap());
            if short > 0.0 {
                prop_assert!(long > short);
            }
        }
    }
}
