//! Per-frame weight optimization under the reliability constraints
//! ε̄_k ≤ ε_th.
//!
//! The weights only reach the objective through r = R(min(η₁γ̂₁, η₂γ̂₂)),
//! and each ε̄_k depends on r alone, so the search runs over the rate:
//! r ≤ R(min ρ_k²γ̂_k) from the weight box, r ≤ the reliability roots of
//! ε̄_k(r) = ε_th, and μ(r) is concave on what remains. The nested search over
//! (η₁, η₂) is kept for cross-checking.

use crate::channel::{FrameCsi, LinkModel, RelayLinks};
use crate::error::{Error, Result};
use crate::expected_error::{expected_link_error_with_slope, ExpectedError};
use crate::fbl::{fbl_rate, snr_for_rate, FblParams, SnrValue};
use crate::quadrature::QuadratureSpec;
use crate::search::{decreasing_root, golden_section_max, increasing_root, largest_feasible};
use crate::special::{normal_pdf, q_inverse};
use crate::throughput::{
    combine, schedule_rate, throughput_at_rate, FrameThroughput, ScheduleDecision,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// One-dimensional search over the coding rate.
    RateSpace,
    /// Golden-section search over η₁ around an inner search over η₂.
    NestedGolden,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSpec {
    pub eta_tol: f64,
    /// Relative bracket width for the rate searches.
    pub r_tol: f64,
    pub max_iters: usize,
    pub strategy: Strategy,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            eta_tol: 1e-6,
            r_tol: 1e-7,
            max_iters: 200,
            strategy: Strategy::RateSpace,
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1e-8..=1e-3).contains(&self.eta_tol) {
            return Err(Error::config(format!(
                "eta_tol must lie in [1e-8, 1e-3], got {}",
                self.eta_tol
            )));
        }
        if !(self.r_tol > 0.0 && self.r_tol <= 1e-2) {
            return Err(Error::config(format!(
                "r_tol must lie in (0, 1e-2], got {}",
                self.r_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be positive"));
        }
        Ok(())
    }
}

/// What fixed the optimal rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RateLimit {
    /// Stationary point of μ(r) strictly inside the feasible range.
    Interior,
    /// A reliability constraint ε̄_k ≤ ε_th.
    Reliability,
    /// The weight box η_k ≤ ρ_k².
    WeightBox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalDecision {
    pub decision: ScheduleDecision,
    pub throughput: FrameThroughput,
    pub mu: f64,
    /// Both reliability constraints hold at the returned decision.
    pub feasible: bool,
    /// Reliability constraints that are tight, indexed backhaul, relaying.
    pub active_constraints: [bool; 2],
    pub limit: RateLimit,
}

/// Maximizes the expected frame throughput over the feasible weights.
pub fn optimize_frame(
    csi: &FrameCsi,
    links: &RelayLinks,
    params: &FblParams,
    ospec: &OptimizerSpec,
    qspec: &QuadratureSpec,
) -> Result<OptimalDecision> {
    ospec.validate()?;
    qspec.validate()?;
    for link in links.both() {
        if link.rho_sq() == 0.0 {
            return Err(Error::Infeasible(format!(
                "{:?} link has rho = 0, so no weight in (0, rho^2] exists",
                link.index()
            )));
        }
    }
    match ospec.strategy {
        Strategy::RateSpace => optimize_rate_space(csi, links, params, ospec, qspec),
        Strategy::NestedGolden => optimize_nested(csi, links, params, ospec, qspec),
    }
}

fn link_error(
    csi: &FrameCsi,
    link: &LinkModel,
    rate: f64,
    m: u32,
    qspec: &QuadratureSpec,
) -> Result<ExpectedError> {
    expected_link_error_with_slope(csi.get(link.index()), rate, link, m, qspec)
}

/// Largest rate in [0, upper] with ε̄ ≤ ε_th on one link, given ε̄ at
/// `upper`, together with ε̄ at that rate.
///
/// Newton runs on Q⁻¹(ε_th) − Q⁻¹(ε̄(r)), which is close to linear in r.
#[allow(clippy::too_many_arguments)]
fn reliability_root(
    csi: &FrameCsi,
    link: &LinkModel,
    params: &FblParams,
    upper: f64,
    at_upper: &ExpectedError,
    qspec: &QuadratureSpec,
    r_tol: f64,
    max_iters: usize,
) -> Result<(f64, ExpectedError)> {
    let target = params.epsilon_th();
    if at_upper.value <= target {
        return Ok((upper, *at_upper));
    }
    let m = params.blocklength();
    let z_target = params.backoff();
    let transform = |e: &ExpectedError| -> Result<(f64, f64)> {
        let p = e.value.clamp(1e-300, 1.0 - 1e-16);
        let z = q_inverse(p)?;
        Ok((z_target - z, e.slope / normal_pdf(z).max(1e-300)))
    };
    let mut seen: Vec<(f64, ExpectedError)> = Vec::with_capacity(16);
    let root = increasing_root(
        |r| {
            let e = link_error(csi, link, r, m, qspec)?;
            seen.push((r, e));
            transform(&e)
        },
        0.0,
        upper,
        transform(at_upper)?,
        r_tol,
        max_iters,
    )?;
    let at_root = match seen.iter().rev().find(|(r, _)| *r == root) {
        Some((_, e)) => *e,
        None => link_error(csi, link, root, m, qspec)?,
    };
    Ok((root, at_root))
}

/// Largest rate in [0, R(min ρ_k²γ̂_k)] meeting both reliability constraints,
/// to a relative tolerance `r_tol`.
pub fn max_feasible_rate(
    csi: &FrameCsi,
    links: &RelayLinks,
    params: &FblParams,
    qspec: &QuadratureSpec,
    r_tol: f64,
) -> Result<f64> {
    let m = params.blocklength();
    let upper = fbl_rate(median_floor(csi, links), params);
    let mut best = upper;
    for link in links.both() {
        let at_upper = link_error(csi, link, upper, m, qspec)?;
        let (root, _) = reliability_root(csi, link, params, upper, &at_upper, qspec, r_tol, 200)?;
        best = best.min(root);
    }
    Ok(best)
}

/// min_k ρ_k²γ̂_k, the weighted SNR at the corner of the weight box.
fn median_floor(csi: &FrameCsi, links: &RelayLinks) -> SnrValue {
    let a = links.backhaul.rho_sq() * csi.gamma_hat_1.linear();
    let b = links.relaying.rho_sq() * csi.gamma_hat_2.linear();
    SnrValue::new_unchecked(a.min(b))
}

fn optimize_rate_space(
    csi: &FrameCsi,
    links: &RelayLinks,
    params: &FblParams,
    ospec: &OptimizerSpec,
    qspec: &QuadratureSpec,
) -> Result<OptimalDecision> {
    let m = params.blocklength();
    let eps = params.epsilon_th();
    let r_box = fbl_rate(median_floor(csi, links), params);
    let hops = [&links.backhaul, &links.relaying];

    let (limit, at_opt) = if r_box == 0.0 {
        (
            RateLimit::WeightBox,
            throughput_at_rate(csi, 0.0, links, m, qspec)?,
        )
    } else {
        let mut errs = [
            link_error(csi, hops[0], r_box, m, qspec)?,
            link_error(csi, hops[1], r_box, m, qspec)?,
        ];
        let mut r_hi = r_box;
        let mut limit = RateLimit::WeightBox;
        // The more violated link usually binds; the other is then re-checked
        // at the reduced rate.
        let order = if errs[0].value >= errs[1].value {
            [0, 1]
        } else {
            [1, 0]
        };
        for k in order {
            if errs[k].value <= eps {
                continue;
            }
            let (root, at_root) = reliability_root(
                csi,
                hops[k],
                params,
                r_hi,
                &errs[k],
                qspec,
                ospec.r_tol,
                ospec.max_iters,
            )?;
            r_hi = root;
            limit = RateLimit::Reliability;
            errs[k] = at_root;
            errs[1 - k] = link_error(csi, hops[1 - k], r_hi, m, qspec)?;
        }
        let at_hi = combine(r_hi, &errs[0], &errs[1]);
        if at_hi.mu_slope >= 0.0 {
            (limit, at_hi)
        } else {
            // μ is concave in r and μ'(0) = 1/2, so μ' has a single sign change.
            let mut seen: Vec<FrameThroughput> = Vec::with_capacity(16);
            let r = decreasing_root(
                |r| {
                    let t = throughput_at_rate(csi, r, links, m, qspec)?;
                    seen.push(t);
                    Ok(t.mu_slope)
                },
                0.0,
                0.5,
                r_hi,
                at_hi.mu_slope,
                ospec.r_tol,
                ospec.max_iters,
            )?;
            let at = match seen.iter().rev().find(|t| t.rate == r) {
                Some(t) => *t,
                None if r == r_hi => at_hi,
                None => throughput_at_rate(csi, r, links, m, qspec)?,
            };
            (RateLimit::Interior, at)
        }
    };

    let (eta_1, eta_2) = canonical_weights(at_opt.rate, csi, links, params)?;
    let decision = schedule_rate(csi, eta_1, eta_2, links, params)?;
    // The weights reproduce the rate up to rounding in the SNR inversion.
    let throughput = if (decision.rate - at_opt.rate).abs() <= 1e-12 * at_opt.rate {
        FrameThroughput {
            rate: decision.rate,
            ..at_opt
        }
    } else {
        throughput_at_rate(csi, decision.rate, links, m, qspec)?
    };
    Ok(finish(decision, throughput, limit, params, ospec))
}

/// η_k = min(ρ_k², γ*/γ̂_k) with γ* the SNR that supports `rate`.
pub fn canonical_weights(
    rate: f64,
    csi: &FrameCsi,
    links: &RelayLinks,
    params: &FblParams,
) -> Result<(f64, f64)> {
    let target = snr_for_rate(rate, params)?.linear();
    let weight = |link: &LinkModel| {
        let gh = csi.get(link.index()).linear();
        let eta = if gh > 0.0 {
            (target / gh).min(link.rho_sq())
        } else {
            link.rho_sq()
        };
        eta.max(f64::MIN_POSITIVE)
    };
    Ok((weight(&links.backhaul), weight(&links.relaying)))
}

fn finish(
    decision: ScheduleDecision,
    throughput: FrameThroughput,
    limit: RateLimit,
    params: &FblParams,
    ospec: &OptimizerSpec,
) -> OptimalDecision {
    let eps = params.epsilon_th();
    let rate = decision.rate;
    let feasible = throughput.eps_bar_1 <= eps + 1e-9 && throughput.eps_bar_2 <= eps + 1e-9;
    let tight = |value: f64, slope: f64| {
        limit == RateLimit::Reliability
            && eps - value <= 4.0 * slope * ospec.r_tol * rate + 1e-9 * eps
    };
    OptimalDecision {
        decision,
        mu: throughput.mu,
        feasible,
        active_constraints: [
            tight(throughput.eps_bar_1, throughput.eps_slopes[0]),
            tight(throughput.eps_bar_2, throughput.eps_slopes[1]),
        ],
        limit,
        throughput,
    }
}

/// Rate implied by raw weights, without the feasibility check.
fn weighted_rate(csi: &FrameCsi, eta_1: f64, eta_2: f64, params: &FblParams) -> f64 {
    let w = (eta_1 * csi.gamma_hat_1.linear()).min(eta_2 * csi.gamma_hat_2.linear());
    fbl_rate(SnrValue::new_unchecked(w), params)
}

fn optimize_nested(
    csi: &FrameCsi,
    links: &RelayLinks,
    params: &FblParams,
    ospec: &OptimizerSpec,
    qspec: &QuadratureSpec,
) -> Result<OptimalDecision> {
    let m = params.blocklength();
    let eps = params.epsilon_th();
    let rho_1 = links.backhaul.rho_sq();
    let rho_2 = links.relaying.rho_sq();
    let feasible_at = |eta_1: f64, eta_2: f64| -> Result<bool> {
        let r = weighted_rate(csi, eta_1, eta_2, params);
        if r == 0.0 {
            return Ok(true);
        }
        let t = throughput_at_rate(csi, r, links, m, qspec)?;
        Ok(t.eps_bar_1 <= eps && t.eps_bar_2 <= eps)
    };
    let mu_at = |eta_1: f64, eta_2: f64| -> Result<f64> {
        Ok(throughput_at_rate(
            csi,
            weighted_rate(csi, eta_1, eta_2, params),
            links,
            m,
            qspec,
        )?
        .mu)
    };
    let inner = |eta_1: f64| -> Result<(f64, f64)> {
        let cap = largest_feasible(
            |e2| feasible_at(eta_1, e2),
            0.0,
            rho_2,
            ospec.eta_tol,
            ospec.max_iters,
        )?;
        let best = golden_section_max(
            |e2| mu_at(eta_1, e2),
            0.0,
            cap,
            ospec.eta_tol,
            ospec.max_iters,
        )?;
        Ok((best.x, best.value))
    };
    let outer = golden_section_max(
        |e1| Ok(inner(e1)?.1),
        0.0,
        rho_1,
        ospec.eta_tol,
        ospec.max_iters,
    )?;
    let (eta_2, _) = inner(outer.x)?;
    let eta_1 = outer.x.max(f64::MIN_POSITIVE);
    let eta_2 = eta_2.max(f64::MIN_POSITIVE);

    let rate = weighted_rate(csi, eta_1, eta_2, params);
    let r_box = fbl_rate(median_floor(csi, links), params);
    let limit = if rate >= r_box * (1.0 - 1e-9) {
        RateLimit::WeightBox
    } else {
        let t = throughput_at_rate(csi, rate, links, m, qspec)?;
        if t.mu_slope > 1e-6 {
            RateLimit::Reliability
        } else {
            RateLimit::Interior
        }
    };
    let decision = schedule_rate(csi, eta_1, eta_2, links, params)?;
    let throughput = throughput_at_rate(csi, decision.rate, links, m, qspec)?;
    Ok(finish(decision, throughput, limit, params, ospec))
}
