//! Per-frame throughput μ = r(1 − ε̄_R)/2 of the two-hop relay.

use std::f64::consts::LOG2_E;

use crate::channel::{FrameCsi, LinkIndex, RelayLinks};
use crate::error::{Error, Result};
use crate::expected_error::{expected_link_error_with_slope, overall_relay_error, ExpectedError};
use crate::fbl::{fbl_rate, FblParams, SnrValue};
use crate::quadrature::{integrate_scalar, QuadratureSpec};

/// Link whose weighted outdated SNR sets the coding rate.
pub type Bottleneck = LinkIndex;

/// Scheduling weights and the single coding rate used on both hops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleDecision {
    pub eta_1: f64,
    pub eta_2: f64,
    pub rate: f64,
    pub bottleneck: Bottleneck,
}

/// r = R(min(η₁γ̂₁, η₂γ̂₂), ε_th, m). Ties go to the backhaul.
pub fn schedule_rate(
    csi: &FrameCsi,
    eta_1: f64,
    eta_2: f64,
    links: &RelayLinks,
    params: &FblParams,
) -> Result<ScheduleDecision> {
    check_weight(eta_1, links.backhaul.rho_sq(), "eta_1")?;
    check_weight(eta_2, links.relaying.rho_sq(), "eta_2")?;
    let w1 = eta_1 * csi.gamma_hat_1.linear();
    let w2 = eta_2 * csi.gamma_hat_2.linear();
    let (weighted, bottleneck) = if w1 <= w2 {
        (w1, LinkIndex::Backhaul)
    } else {
        (w2, LinkIndex::Relaying)
    };
    Ok(ScheduleDecision {
        eta_1,
        eta_2,
        rate: fbl_rate(SnrValue::new_unchecked(weighted), params),
        bottleneck,
    })
}

fn check_weight(eta: f64, rho_sq: f64, name: &str) -> Result<()> {
    if eta > 0.0 && eta <= rho_sq {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} = {eta} outside the feasible range (0, {rho_sq}]"
        )))
    }
}

/// Expected throughput of one frame with its ingredients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameThroughput {
    pub rate: f64,
    pub mu: f64,
    pub eps_bar_1: f64,
    pub eps_bar_2: f64,
    pub eps_bar_relay: f64,
    /// dμ/dr at this rate.
    pub mu_slope: f64,
    /// ∂ε̄_k/∂r for each hop.
    pub eps_slopes: [f64; 2],
}

/// Evaluates the frame objective for a scheduling decision.
pub fn frame_throughput(
    csi: &FrameCsi,
    decision: &ScheduleDecision,
    links: &RelayLinks,
    params: &FblParams,
    spec: &QuadratureSpec,
) -> Result<FrameThroughput> {
    throughput_at_rate(csi, decision.rate, links, params.blocklength(), spec)
}

/// Frame objective as a function of the coding rate alone.
pub fn throughput_at_rate(
    csi: &FrameCsi,
    rate: f64,
    links: &RelayLinks,
    blocklength: u32,
    spec: &QuadratureSpec,
) -> Result<FrameThroughput> {
    let e1 =
        expected_link_error_with_slope(csi.gamma_hat_1, rate, &links.backhaul, blocklength, spec)?;
    let e2 =
        expected_link_error_with_slope(csi.gamma_hat_2, rate, &links.relaying, blocklength, spec)?;
    Ok(combine(rate, &e1, &e2))
}

pub(crate) fn combine(rate: f64, e1: &ExpectedError, e2: &ExpectedError) -> FrameThroughput {
    let relay = overall_relay_error(e1.value, e2.value);
    let relay_slope = e1.slope * (1.0 - e2.value) + e2.slope * (1.0 - e1.value);
    FrameThroughput {
        rate,
        mu: 0.5 * rate * (1.0 - relay),
        eps_bar_1: e1.value,
        eps_bar_2: e2.value,
        eps_bar_relay: relay,
        mu_slope: 0.5 * ((1.0 - relay) - rate * relay_slope),
        eps_slopes: [e1.slope, e2.slope],
    }
}

/// Ergodic Shannon reference E[log₂(1 + min(γ₁, γ₂))]/2 with perfect CSI.
///
/// min(γ₁, γ₂) is exponential with mean γ̄₁γ̄₂/(γ̄₁ + γ̄₂); the integral runs
/// over its CDF level u, with γ = −β ln(1 − u).
pub fn ergodic_capacity_reference(links: &RelayLinks) -> Result<f64> {
    let (a, b) = (links.backhaul.avg_snr(), links.relaying.avg_snr());
    let beta = a * b / (a + b);
    let points = [0.0, 0.5, 0.9, 0.99, 0.999, 0.9999, 1.0];
    let (value, _) = integrate_scalar(
        |u| (-beta * (-u).ln_1p()).ln_1p() * LOG2_E,
        &points,
        1e-10,
        1e-14,
        2000,
    )?;
    Ok(0.5 * value)
}
