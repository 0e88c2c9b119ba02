//! Conditional expected link error ε̄ = ∫ p(γ | γ̂)·P(γ, r, m) dγ.
//!
//! The Q-function is available in closed form, so the integral is taken in
//! the single variable γ by adaptive Gauss–Kronrod quadrature. The derivative
//! in r, ∫ p(γ | γ̂)·φ(z)/σ dγ, is accumulated on the same nodes.

use std::f64::consts::LOG2_E;

use rand::Rng;

use crate::channel::{conditional_pdf_raw, sample_conditional, LinkModel};
use crate::error::{Error, Result};
use crate::fbl::{dispersion_complex, fbl_error, shannon_capacity, SnrValue};
use crate::quadrature::{integrate, QuadratureSpec};
use crate::special::{normal_pdf, q_function};

/// Beyond this Q-argument the block error is below 1e-19 and the integrand
/// is dropped.
const Z_CUT: f64 = 9.0;

/// Value, r-derivative and error estimate of one expected-error integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedError {
    pub value: f64,
    pub slope: f64,
    pub abs_err: f64,
}

/// Upper bound on P(γ > upper | γ̂) from the Laurent–Massart inequality for
/// a noncentral χ² with two degrees of freedom.
pub fn tail_mass_bound(gamma_hat: SnrValue, link: &LinkModel, upper: f64) -> f64 {
    let c = link.rho_sq() * gamma_hat.linear();
    let s = link.innovation_scale();
    let excess = upper - c - s;
    if excess <= 0.0 {
        return 1.0;
    }
    // P(γ ≥ c + s + √((2s² + 4cs)t) + st) ≤ e^{−t}; solve for y = √t.
    let b = (2.0 * s * s + 4.0 * c * s).sqrt();
    let y = (-b + (b * b + 4.0 * s * excess).sqrt()) / (2.0 * s);
    (-y * y).exp()
}

/// Truncation point ρ²γ̂ + k(2√(ρ²γ̂·γ̄(1−ρ²)) + γ̄(1−ρ²)).
pub fn truncation_point(gamma_hat: SnrValue, link: &LinkModel, tail_cutoff_sigma: f64) -> f64 {
    let c = link.rho_sq() * gamma_hat.linear();
    let s = link.innovation_scale();
    c + tail_cutoff_sigma * (2.0 * (c * s).sqrt() + s)
}

/// Expected block error of one hop given its outdated SNR.
pub fn expected_link_error(
    gamma_hat: SnrValue,
    rate: f64,
    link: &LinkModel,
    blocklength: u32,
    spec: &QuadratureSpec,
) -> Result<f64> {
    Ok(expected_link_error_with_slope(gamma_hat, rate, link, blocklength, spec)?.value)
}

/// As [`expected_link_error`], also returning ∂ε̄/∂r.
pub fn expected_link_error_with_slope(
    gamma_hat: SnrValue,
    rate: f64,
    link: &LinkModel,
    blocklength: u32,
    spec: &QuadratureSpec,
) -> Result<ExpectedError> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::domain(format!(
            "rate must be finite and >= 0, got {rate}"
        )));
    }
    spec.validate()?;
    let m = blocklength as f64;
    let c = link.rho_sq() * gamma_hat.linear();
    let s = link.innovation_scale();

    let pdf_cut = truncation_point(gamma_hat, link, spec.tail_cutoff_sigma);
    let max_spread = LOG2_E / m.sqrt();
    let q_cut = ((rate + Z_CUT * max_spread) / LOG2_E).exp_m1();
    let (upper, discarded) = if q_cut < pdf_cut {
        (
            q_cut,
            q_function(Z_CUT).min(tail_mass_bound(gamma_hat, link, q_cut)),
        )
    } else {
        (pdf_cut, tail_mass_bound(gamma_hat, link, pdf_cut))
    };
    if discarded > spec.abs_tol {
        return Err(Error::Accuracy {
            context: "tail truncation",
            achieved: discarded,
            target: spec.abs_tol,
        });
    }

    // Breakpoints: the Q-argument zero and its ±4σ band, and the bulk of the
    // conditional density.
    let knee = (rate / LOG2_E).exp_m1();
    let band = (4.0 * max_spread / LOG2_E).exp();
    let sd = (s * s + 2.0 * c * s).sqrt();
    let mut points = [
        0.0,
        knee,
        (1.0 + knee) / band - 1.0,
        (1.0 + knee) * band - 1.0,
        c,
        c - 3.0 * sd,
        c + 3.0 * sd,
        c + 8.0 * sd,
        upper,
    ];
    for p in points.iter_mut() {
        *p = p.clamp(0.0, upper);
    }
    points.sort_by(f64::total_cmp);

    let sqrt_hat = gamma_hat.linear().sqrt();
    let rho = link.rho();
    let integrand = |g: f64| -> [f64; 2] {
        if g <= 0.0 {
            return [conditional_pdf_raw(0.0, sqrt_hat, rho, s), 0.0];
        }
        let pdf = conditional_pdf_raw(g, sqrt_hat, rho, s);
        if pdf == 0.0 {
            return [0.0, 0.0];
        }
        let snr = SnrValue::new_unchecked(g);
        let spread = (dispersion_complex(snr) / m).sqrt();
        let z = (shannon_capacity(snr) - rate) / spread;
        [pdf * q_function(z), pdf * normal_pdf(z) / spread]
    };
    let result = integrate(
        integrand,
        &points,
        spec.rel_tol,
        spec.abs_tol,
        spec.max_subdivisions,
    )?;
    let value = if rate == 0.0 {
        0.0
    } else {
        result.value[0].clamp(0.0, 1.0)
    };
    Ok(ExpectedError {
        value,
        slope: result.value[1].max(0.0),
        abs_err: result.abs_err + discarded,
    })
}

/// Monte Carlo estimate of ε̄ with its standard error, drawing γ | γ̂ by
/// direct construction of h = ρĥ + √(1−ρ²)e.
pub fn mc_link_error<R: Rng + ?Sized>(
    gamma_hat: SnrValue,
    rate: f64,
    link: &LinkModel,
    blocklength: u32,
    n_samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if n_samples < 10_000 {
        return Err(Error::domain(format!(
            "need at least 10^4 samples, got {n_samples}"
        )));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let p = fbl_error(sample_conditional(gamma_hat, link, rng), rate, blocklength);
        sum += p;
        sum_sq += p * p;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// End-to-end error of the decode-and-forward chain, ε₁ + ε₂ − ε₁ε₂.
#[inline]
pub fn overall_relay_error(eps_1: f64, eps_2: f64) -> f64 {
    eps_1 + eps_2 - eps_1 * eps_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::LinkIndex;
    use crate::fbl::{fbl_rate, FblParams};
    use crate::quadrature::integrate_scalar;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn link(avg: f64, rho_sq: f64) -> LinkModel {
        LinkModel::from_rho_sq(avg, rho_sq, LinkIndex::Backhaul).unwrap()
    }

    fn snr(x: f64) -> SnrValue {
        SnrValue::new(x).unwrap()
    }

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn zero_rate_never_fails() {
        for (avg, rho_sq, gh) in [(10.0, 0.7, 10.0), (1.0, 0.0, 0.1), (100.0, 0.9, 500.0)] {
            let e = expected_link_error(snr(gh), 0.0, &link(avg, rho_sq), 300, &spec()).unwrap();
            assert!(e < 1e-10);
        }
    }

    #[test]
    fn uncorrelated_limit_matches_exponential_average() {
        let l = link(10.0, 0.0);
        let r = fbl_rate(snr(10.0), &FblParams::new(300, 0.5).unwrap());
        let got = expected_link_error(snr(3.0), r, &l, 300, &spec()).unwrap();
        // Plain exponential average on a long fixed range.
        let (want, _) = integrate_scalar(
            |g| (-g / 10.0f64).exp() / 10.0 * fbl_error(snr(g), r, 300),
            &[0.0, 5.0, 10.0, 20.0, 50.0, 500.0],
            1e-12,
            1e-16,
            5000,
        )
        .unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (mc, se) = mc_link_error(snr(3.0), r, &l, 300, 200_000, &mut rng).unwrap();
        assert!((mc - got).abs() < 4.0 * se, "{mc} ± {se} vs {got}");
    }

    #[test]
    fn feasibility_boundary_at_median() {
        let l = link(10.0, 0.7);
        let r = fbl_rate(snr(7.0), &FblParams::new(300, 0.5).unwrap());
        let e = expected_link_error(snr(10.0), r, &l, 300, &spec()).unwrap();
        assert!(e <= 0.5 + 1e-3, "{e}");
        let tighter = fbl_rate(snr(7.0), &FblParams::new(300, 1e-3).unwrap());
        assert!(expected_link_error(snr(10.0), tighter, &l, 300, &spec()).unwrap() < e);
    }

    #[test]
    fn generous_backoff_gives_low_error() {
        let l = link(10.0, 0.9);
        let r = fbl_rate(snr(0.1 * 0.9 * 1000.0), &FblParams::new(300, 1e-3).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (mc, _) = mc_link_error(snr(1000.0), r, &l, 300, 100_000, &mut rng).unwrap();
        assert!(mc < 1e-2);
        let q = expected_link_error(snr(1000.0), r, &l, 300, &spec()).unwrap();
        assert!(q < 1e-2);
    }

    #[test]
    fn quadrature_agrees_with_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for (avg, rho_sq, gh, eta) in [
            (5.0, 0.5, 5.0, 0.2),
            (50.0, 0.9, 25.0, 0.9),
            (10.0, 0.7, 20.0, 0.7),
        ] {
            let l = link(avg, rho_sq);
            let r = fbl_rate(snr(eta * gh), &FblParams::new(300, 1e-3).unwrap());
            let q = expected_link_error(snr(gh), r, &l, 300, &spec()).unwrap();
            let (mc, se) = mc_link_error(snr(gh), r, &l, 300, 100_000, &mut rng).unwrap();
            assert!(
                (mc - q).abs() <= 3.0 * se + 1e-12,
                "{avg} {rho_sq} {gh} {eta}: {mc} ± {se} vs {q}"
            );
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        let l = link(10.0, 0.7);
        for (gh, r) in [(10.0, 1.5), (10.0, 3.0), (40.0, 4.0), (2.0, 0.3)] {
            let e = expected_link_error_with_slope(snr(gh), r, &l, 300, &spec()).unwrap();
            let h = 1e-4;
            let tight = QuadratureSpec {
                rel_tol: 1e-10,
                abs_tol: 1e-15,
                ..spec()
            };
            let up = expected_link_error(snr(gh), r + h, &l, 300, &tight).unwrap();
            let dn = expected_link_error(snr(gh), r - h, &l, 300, &tight).unwrap();
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (e.slope - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                "gh={gh} r={r}: {} vs {fd}",
                e.slope
            );
        }
    }

    #[test]
    fn monotone_and_convex_below_median_capacity() {
        for (avg, rho_sq, gh) in [(10.0, 0.7, 10.0), (50.0, 0.5, 20.0), (5.0, 0.9, 15.0)] {
            let l = link(avg, rho_sq);
            let r_top = shannon_capacity(snr(rho_sq * gh));
            let tight = QuadratureSpec {
                rel_tol: 1e-10,
                abs_tol: 1e-15,
                ..spec()
            };
            let n = 60;
            let vals: Vec<f64> = (1..=n)
                .map(|i| {
                    expected_link_error(snr(gh), r_top * i as f64 / n as f64, &l, 300, &tight)
                        .unwrap()
                })
                .collect();
            for w in vals.windows(2) {
                assert!(w[1] >= w[0]);
            }
            for w in vals.windows(3) {
                assert!(w[0] - 2.0 * w[1] + w[2] > -1e-10, "{:?}", w);
            }
        }
    }

    #[test]
    fn tail_bound_dominates_true_mass() {
        for (avg, rho_sq, gh) in [(10.0, 0.7, 25.0), (1.0, 0.0, 1.0), (100.0, 0.9, 10.0)] {
            let l = link(avg, rho_sq);
            let s = l.innovation_scale();
            for k in [2.0, 5.0, 10.0] {
                let u = truncation_point(snr(gh), &l, k);
                let far = truncation_point(snr(gh), &l, 80.0);
                let (mass, _) = integrate_scalar(
                    |g| conditional_pdf_raw(g, gh.sqrt(), l.rho(), s),
                    &[u, (u + far) / 2.0, far],
                    1e-10,
                    1e-300,
                    4000,
                )
                .unwrap();
                assert!(tail_mass_bound(snr(gh), &l, u) >= mass, "k={k}: {mass}");
            }
        }
    }

    #[test]
    fn short_truncation_is_rejected() {
        let spec = QuadratureSpec {
            tail_cutoff_sigma: 2.0,
            ..spec()
        };
        let e = expected_link_error(snr(10.0), 6.0, &link(10.0, 0.7), 300, &spec).unwrap_err();
        assert!(e.is_accuracy());
    }

    #[test]
    fn starved_budget_reports_accuracy() {
        let spec = QuadratureSpec {
            rel_tol: 1e-10,
            abs_tol: 1e-300,
            max_subdivisions: 1,
            ..spec()
        };
        let e = expected_link_error(snr(10.0), 2.0, &link(10.0, 0.7), 300, &spec).unwrap_err();
        match e {
            Error::Accuracy {
                achieved, target, ..
            } => assert!(achieved > target),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn relay_error_examples() {
        assert_eq!(overall_relay_error(0.0, 0.0), 0.0);
        assert_eq!(overall_relay_error(1.0, 0.37), 1.0);
        assert!((overall_relay_error(0.1, 0.2) - 0.28).abs() < 1e-15);
    }

    #[test]
    fn mc_rejects_small_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(mc_link_error(snr(1.0), 1.0, &link(1.0, 0.5), 300, 100, &mut rng).is_err());
        let (m, se) = mc_link_error(snr(1.0), 0.0, &link(1.0, 0.0), 300, 10_000, &mut rng).unwrap();
        assert_eq!((m, se), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn relay_error_bounds(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let e = overall_relay_error(a, b);
            prop_assert!((e - overall_relay_error(b, a)).abs() < 1e-15);
            prop_assert!(e >= a.max(b) - 1e-15);
            prop_assert!(e <= (a + b).min(1.0) + 1e-15);
        }

        #[test]
        fn value_in_unit_interval(avg in 1.0f64..100.0, rho_sq in 0.0f64..0.95, mult in 0.05f64..5.0, frac in 0.0f64..1.5) {
            let l = link(avg, rho_sq);
            let gh = mult * avg;
            let r = frac * shannon_capacity(snr(gh));
            let e = expected_link_error(snr(gh), r, &l, 300, &spec()).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
        }
    }
}
