//! Constant-weight heuristic: one pair (η₁, η₂) for every frame, chosen to
//! maximize the long-run average throughput subject to a reliability
//! guarantee, either ε̄_k ≤ ε_th in every frame or E[ε̄_k] ≤ ε_th.
//!
//! The average splits by which link is the bottleneck. In the region
//! η₁γ̂₁ ≤ η₂γ̂₂ the rate depends on γ̂₁ alone, and given γ̂₁ the other
//! outdated SNR is t + V with t = η₁γ̂₁/η₂ and V exponential (memoryless), so
//! the region has probability e^{−t/γ̄₂} for that γ̂₁. Both the outer
//! integral over γ̂₁ and the average of ε̄₂ over V are adaptive. The other
//! region is the mirror image.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::channel::{FrameCsi, LinkModel, RelayLinks};
use crate::error::{Error, Result};
use crate::expected_error::expected_link_error;
use crate::fbl::{fbl_rate, snr_for_rate, FblParams, SnrValue};
use crate::quadrature::{integrate, QuadratureSpec};
use crate::search::{golden_section_max, increasing_boundary};
use crate::throughput::{schedule_rate, throughput_at_rate};

/// Fixed weights, 0 < η_k ≤ ρ_k².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantWeights {
    eta_1: f64,
    eta_2: f64,
}

impl ConstantWeights {
    pub fn new(eta_1: f64, eta_2: f64, links: &RelayLinks) -> Result<Self> {
        for (eta, link, name) in [
            (eta_1, &links.backhaul, "eta_1"),
            (eta_2, &links.relaying, "eta_2"),
        ] {
            if !(eta > 0.0 && eta <= link.rho_sq()) {
                return Err(Error::domain(format!(
                    "{name} = {eta} outside the feasible range (0, {}]",
                    link.rho_sq()
                )));
            }
        }
        Ok(ConstantWeights { eta_1, eta_2 })
    }

    pub fn eta_1(&self) -> f64 {
        self.eta_1
    }

    pub fn eta_2(&self) -> f64 {
        self.eta_2
    }

    pub fn swapped(&self) -> Self {
        ConstantWeights {
            eta_1: self.eta_2,
            eta_2: self.eta_1,
        }
    }
}

/// How the long-run average is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AverageMethod {
    /// Nested adaptive quadrature to `rel_tol`.
    Quadrature { rel_tol: f64 },
    /// Average of the frame throughput over `samples` exponential CSI pairs.
    MonteCarlo { samples: u64, seed: u64 },
}

impl Default for AverageMethod {
    fn default() -> Self {
        AverageMethod::Quadrature { rel_tol: 1e-4 }
    }
}

impl AverageMethod {
    pub const MIN_MC_SAMPLES: u64 = 100_000;

    pub fn validate(&self) -> Result<()> {
        match *self {
            AverageMethod::Quadrature { rel_tol } => {
                if !(1e-10..=1e-2).contains(&rel_tol) {
                    return Err(Error::config(format!(
                        "average rel_tol must lie in [1e-10, 1e-2], got {rel_tol}"
                    )));
                }
            }
            AverageMethod::MonteCarlo { samples, .. } => {
                if samples < Self::MIN_MC_SAMPLES {
                    return Err(Error::config(format!(
                        "Monte Carlo averages need at least {} samples, got {samples}",
                        Self::MIN_MC_SAMPLES
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Long-run averages under constant weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageThroughput {
    pub mu_avg: f64,
    pub avg_eps_1: f64,
    pub avg_eps_2: f64,
    pub method: AverageMethod,
    /// Absolute error estimate of `mu_avg`: the quadrature estimate, or the
    /// standard error for Monte Carlo.
    pub err_estimate: f64,
    /// Standard errors of the averaged link errors (zero for quadrature).
    pub eps_std_err: [f64; 2],
}

impl AverageThroughput {
    pub fn avg_eps(&self) -> [f64; 2] {
        [self.avg_eps_1, self.avg_eps_2]
    }

    pub fn feasible(&self, epsilon_th: f64) -> bool {
        self.avg_eps_1 <= epsilon_th && self.avg_eps_2 <= epsilon_th
    }
}

/// μ_FBL(η₁, η₂) together with E[ε̄₁] and E[ε̄₂].
pub fn average_throughput(
    weights: &ConstantWeights,
    links: &RelayLinks,
    params: &FblParams,
    method: &AverageMethod,
    qspec: &QuadratureSpec,
) -> Result<AverageThroughput> {
    method.validate()?;
    qspec.validate()?;
    let weights = ConstantWeights::new(weights.eta_1, weights.eta_2, links)?;
    match *method {
        AverageMethod::Quadrature { rel_tol } => {
            let (r1, e1) = region(
                (&links.backhaul, weights.eta_1),
                (&links.relaying, weights.eta_2),
                params,
                rel_tol,
                qspec,
            )?;
            let (r2, e2) = region(
                (&links.relaying, weights.eta_2),
                (&links.backhaul, weights.eta_1),
                params,
                rel_tol,
                qspec,
            )?;
            Ok(AverageThroughput {
                mu_avg: r1[0] + r2[0],
                avg_eps_1: (r1[1] + r2[2]).clamp(0.0, 1.0),
                avg_eps_2: (r1[2] + r2[1]).clamp(0.0, 1.0),
                method: *method,
                err_estimate: e1 + e2,
                eps_std_err: [0.0; 2],
            })
        }
        AverageMethod::MonteCarlo { samples, seed } => {
            monte_carlo(&weights, links, params, samples, seed, qspec, method)
        }
    }
}

/// Integrates the region where `bott` sets the rate. Returns
/// [μ share, E[ε̄_bott; region], E[ε̄_other; region]] and the error estimate.
fn region(
    (bott, eta_b): (&LinkModel, f64),
    (other, eta_o): (&LinkModel, f64),
    params: &FblParams,
    rel_tol: f64,
    qspec: &QuadratureSpec,
) -> Result<([f64; 3], f64)> {
    let m = params.blocklength();
    let mean_b = bott.avg_snr();
    let mean_o = other.avg_snr();
    // Below this outdated SNR the rate clips to zero and nothing is sent.
    let start = snr_for_rate(0.0, params)?.linear() / eta_b;
    let mass = (-start / mean_b).exp();
    if mass == 0.0 {
        return Ok(([0.0; 3], 0.0));
    }
    let ratio = eta_b / eta_o;

    let mut failure: Option<Error> = None;
    // The fourth component carries the inner error into the outer sum.
    let mut integrand = |u: f64| -> [f64; 4] {
        if failure.is_some() {
            return [0.0; 4];
        }
        let gamma_b = start - mean_b * (-u).ln_1p();
        let rate = fbl_rate(SnrValue::new_unchecked(eta_b * gamma_b), params);
        let threshold = ratio * gamma_b;
        let p_region = (-threshold / mean_o).exp();
        if rate <= 0.0 || p_region == 0.0 {
            return [0.0; 4];
        }
        let eval = || -> Result<[f64; 4]> {
            let eps_b =
                expected_link_error(SnrValue::new_unchecked(gamma_b), rate, bott, m, qspec)?;
            let (inner, inner_err) = tail_average(threshold, rate, other, m, rel_tol, qspec)?;
            let eps_o = p_region * inner.clamp(0.0, 1.0);
            let share = 0.5 * rate * (1.0 - eps_b);
            Ok([
                share * (p_region - eps_o),
                eps_b * p_region,
                eps_o,
                share * p_region * inner_err,
            ])
        };
        match eval() {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e);
                [0.0; 4]
            }
        }
    };
    // u ↦ γ̂ maps the exponential law of the bottleneck SNR onto [0, 1).
    let result = integrate(
        &mut integrand,
        &[0.0, 1.0],
        rel_tol,
        qspec.abs_tol,
        qspec.max_subdivisions,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let result = result?;
    let [mu, e_b, e_o, inner_err] = result.value.map(|v| v * mass);
    Ok(([mu, e_b, e_o], result.abs_err * mass + inner_err))
}

/// E[ε̄(t + V, r)] for V exponential with the link's mean SNR, with its
/// error estimate.
///
/// ε̄ falls off in V on the scale s/ρ² of the conditional spread, which can
/// be far shorter than the mean, so the map V = −λ ln(1 − u) uses
/// λ = min(γ̄, 2s/ρ²) and the weight e^{−V/γ̄} is carried in the integrand.
fn tail_average(
    threshold: f64,
    rate: f64,
    link: &LinkModel,
    m: u32,
    rel_tol: f64,
    qspec: &QuadratureSpec,
) -> Result<(f64, f64)> {
    let mean = link.avg_snr();
    let lambda = mean.min(2.0 * link.innovation_scale() / link.rho_sq());
    let excess = 1.0 / lambda - 1.0 / mean;
    let mut failure: Option<Error> = None;
    let f = |u: f64| -> [f64; 1] {
        if failure.is_some() || u >= 1.0 {
            return [0.0];
        }
        let v = -lambda * (-u).ln_1p();
        match expected_link_error(SnrValue::new_unchecked(threshold + v), rate, link, m, qspec) {
            Ok(e) if e > 0.0 => [(lambda / mean) * (v * excess).exp() * e],
            Ok(_) => [0.0],
            Err(e) => {
                failure = Some(e);
                [0.0]
            }
        }
    };
    let result = integrate(
        f,
        &[0.0, 1.0],
        rel_tol,
        qspec.abs_tol,
        qspec.max_subdivisions,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let result = result?;
    Ok((result.value[0], result.abs_err))
}

const MC_CHUNK: u64 = 4096;

fn monte_carlo(
    weights: &ConstantWeights,
    links: &RelayLinks,
    params: &FblParams,
    samples: u64,
    seed: u64,
    qspec: &QuadratureSpec,
    method: &AverageMethod,
) -> Result<AverageThroughput> {
    let chunks = samples.div_ceil(MC_CHUNK);
    let partials = (0..chunks)
        .into_par_iter()
        .map(|chunk| -> Result<[f64; 6]> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk);
            let count = MC_CHUNK.min(samples - chunk * MC_CHUNK);
            let mut acc = [0.0; 6];
            for _ in 0..count {
                let g1: f64 = Exp1.sample(&mut rng);
                let g2: f64 = Exp1.sample(&mut rng);
                let csi =
                    FrameCsi::new(g1 * links.backhaul.avg_snr(), g2 * links.relaying.avg_snr())?;
                let d = schedule_rate(&csi, weights.eta_1, weights.eta_2, links, params)?;
                let t = throughput_at_rate(&csi, d.rate, links, params.blocklength(), qspec)?;
                for (slot, v) in [t.mu, t.eps_bar_1, t.eps_bar_2].into_iter().enumerate() {
                    acc[2 * slot] += v;
                    acc[2 * slot + 1] += v * v;
                }
            }
            Ok(acc)
        })
        .collect::<Vec<_>>();
    let mut sums = [0.0; 6];
    for p in partials {
        for (s, v) in sums.iter_mut().zip(p?) {
            *s += v;
        }
    }
    let n = samples as f64;
    let mean_se = |k: usize| {
        let mean = sums[2 * k] / n;
        let var = (sums[2 * k + 1] / n - mean * mean).max(0.0) * n / (n - 1.0);
        (mean, (var / n).sqrt())
    };
    let (mu, mu_se) = mean_se(0);
    let (e1, e1_se) = mean_se(1);
    let (e2, e2_se) = mean_se(2);
    Ok(AverageThroughput {
        mu_avg: mu,
        avg_eps_1: e1,
        avg_eps_2: e2,
        method: *method,
        err_estimate: mu_se,
        eps_std_err: [e1_se, e2_se],
    })
}

/// The reliability guarantee constant weights must give.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReliabilityForm {
    /// ε̄_k ≤ ε_th in every frame, the guarantee of the per-frame scheduler.
    /// It caps each weight separately: see [`per_frame_weight_cap`].
    #[default]
    PerFrame,
    /// E[ε̄_k] ≤ ε_th over frames. Bad frames can be traded against good
    /// ones, so this form can exceed the per-frame scheduler's throughput.
    Averaged,
}

/// Controls for [`optimize_constant`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantSearchSpec {
    pub reliability: ReliabilityForm,
    /// Final bracket width on ln η_k, i.e. a relative tolerance on the weights.
    pub eta_tol: f64,
    /// Log-spaced samples of η₁ over [ρ₁²·10⁻⁴, ρ₁²] before refinement.
    pub coarse_points: usize,
    pub max_evaluations: usize,
}

impl Default for ConstantSearchSpec {
    fn default() -> Self {
        ConstantSearchSpec {
            reliability: ReliabilityForm::PerFrame,
            eta_tol: 1e-3,
            coarse_points: 9,
            max_evaluations: 2000,
        }
    }
}

impl ConstantSearchSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_tol > 0.0 && self.eta_tol <= 0.1) {
            return Err(Error::config(format!(
                "eta_tol must lie in (0, 0.1], got {}",
                self.eta_tol
            )));
        }
        if self.coarse_points < 3 {
            return Err(Error::config("coarse_points must be at least 3"));
        }
        if self.max_evaluations == 0 {
            return Err(Error::config("max_evaluations must be positive"));
        }
        Ok(())
    }
}

/// Best constant weights found and their averages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantOptimum {
    pub weights: ConstantWeights,
    pub average: AverageThroughput,
    /// Upper ends of the searched weight ranges: the per-frame caps, or ρ_k²
    /// for the averaged form.
    pub caps: [f64; 2],
    pub evaluations: usize,
    /// The evaluation budget ran out; the result is the best point seen.
    pub budget_exhausted: bool,
}

/// Smallest weight considered, relative to ρ_k².
const ETA_FLOOR: f64 = 1e-6;
/// Decades below ρ₁² covered by the coarse scan.
const COARSE_DECADES: f64 = 4.0;

/// Outdated SNRs scanned by [`worst_frame_error`], as decades around γ̄.
const WORST_DECADES: (f64, f64) = (-4.0, 4.0);
const WORST_POINTS_PER_DECADE: usize = 8;

/// Largest expected error ε̄_k(γ̂, R(η γ̂)) over outdated SNRs γ̂: the worst
/// frame for link k under weight η, which is the one where link k sets the
/// rate (the other link can only lower it). Returns the error and the γ̂
/// attaining it.
///
/// The error vanishes for small γ̂ (zero rate) and, for η < ρ², for large γ̂
/// (the conditional spread shrinks relative to ρ²γ̂). A log-spaced scan over
/// γ̄·[10⁻⁴, 10⁴] is refined by golden section around its best point.
pub fn worst_frame_error(
    eta: f64,
    link: &LinkModel,
    params: &FblParams,
    qspec: &QuadratureSpec,
) -> Result<(f64, f64)> {
    if !(eta > 0.0 && eta <= link.rho_sq()) {
        return Err(Error::domain(format!(
            "weight {eta} outside (0, {}]",
            link.rho_sq()
        )));
    }
    let err_at = |s: f64| -> Result<f64> {
        let x = s.exp();
        let rate = fbl_rate(SnrValue::new(eta * x)?, params);
        expected_link_error(SnrValue::new(x)?, rate, link, params.blocklength(), qspec)
    };
    let base = link.avg_snr().ln();
    let n = ((WORST_DECADES.1 - WORST_DECADES.0) * WORST_POINTS_PER_DECADE as f64) as usize;
    let step = std::f64::consts::LN_10 / WORST_POINTS_PER_DECADE as f64;
    let grid: Vec<f64> = (0..=n)
        .map(|i| base + WORST_DECADES.0 * std::f64::consts::LN_10 + step * i as f64)
        .collect();
    let values = grid
        .iter()
        .map(|&s| err_at(s))
        .collect::<Result<Vec<f64>>>()?;
    let (i, &v) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    if v == 0.0 {
        return Ok((0.0, grid[i].exp()));
    }
    let lo = grid[i.saturating_sub(1)];
    let hi = grid[(i + 1).min(n)];
    let refined = golden_section_max(err_at, lo, hi, 1e-6, MAX_ITERS)?;
    Ok(if refined.value > v {
        (refined.value, refined.x.exp())
    } else {
        (v, grid[i].exp())
    })
}

/// Largest η ∈ (0, ρ²] whose worst frame meets ε_th, to relative tolerance
/// `eta_tol`. The worst-frame error grows with η because the rate does.
pub fn per_frame_weight_cap(
    link: &LinkModel,
    params: &FblParams,
    qspec: &QuadratureSpec,
    eta_tol: f64,
) -> Result<f64> {
    let th = params.epsilon_th();
    // exp(ln ρ²) can exceed ρ² by an ulp.
    let eta = |s: f64| s.exp().min(link.rho_sq());
    let violation = |s: f64| -> Result<f64> {
        Ok((worst_frame_error(eta(s), link, params, qspec)?.0 - th) / th)
    };
    let top = link.rho_sq().ln();
    let g_top = violation(top)?;
    if g_top <= 0.0 {
        return Ok(link.rho_sq());
    }
    let floor = top + ETA_FLOOR.ln();
    let g_floor = violation(floor)?;
    if g_floor > 0.0 {
        return Err(Error::Infeasible(format!(
            "no weight above {:e} keeps every frame of link {:?} within {th}",
            floor.exp(),
            link.index()
        )));
    }
    Ok(eta(increasing_boundary(
        violation, floor, g_floor, top, g_top, eta_tol, MAX_ITERS,
    )?))
}

/// Maximizes μ_FBL(η₁, η₂) subject to the reliability guarantee in `search`.
///
/// Per frame, the guarantee caps each weight separately and μ is maximized
/// over the box below the caps. Averaged, both averaged errors grow with
/// either weight, so the feasible set is bounded by a decreasing curve and
/// the optimum usually sits on it, where alternating single-coordinate moves
/// cannot make progress. In both cases the search maximizes the profile
/// P(η₁) = max { μ(η₁, η₂) : η₂ ≤ u₂(η₁) } over η₁, with u₂ the largest
/// feasible η₂. All searches run on ln η.
pub fn optimize_constant(
    links: &RelayLinks,
    params: &FblParams,
    search: &ConstantSearchSpec,
    method: &AverageMethod,
    qspec: &QuadratureSpec,
) -> Result<ConstantOptimum> {
    search.validate()?;
    method.validate()?;
    qspec.validate()?;
    let caps = match search.reliability {
        ReliabilityForm::PerFrame => {
            let tol = 0.1 * search.eta_tol;
            [
                per_frame_weight_cap(&links.backhaul, params, qspec, tol)?,
                per_frame_weight_cap(&links.relaying, params, qspec, tol)?,
            ]
        }
        ReliabilityForm::Averaged => [links.backhaul.rho_sq(), links.relaying.rho_sq()],
    };
    let mut ev = Evaluator {
        links,
        params,
        method,
        qspec,
        form: search.reliability,
        caps,
        budget: search.max_evaluations,
        cache: HashMap::new(),
        best: None,
        exhausted: false,
    };
    let top_1 = caps[0].ln();
    let k = search.coarse_points;
    let step = COARSE_DECADES * std::f64::consts::LN_10 / (k - 1) as f64;
    let grid: Vec<f64> = (0..k).map(|i| top_1 - step * (k - 1 - i) as f64).collect();
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &s) in grid.iter().enumerate() {
        let v = ev.profile(s.exp(), search.eta_tol)?;
        if v > best.1 {
            best = (i, v);
        }
    }
    let lo = if best.0 == 0 {
        grid[0] - 2.0 * step
    } else {
        grid[best.0 - 1]
    };
    let hi = grid[(best.0 + 1).min(k - 1)];
    golden_section_max(
        |s| ev.profile(s.exp(), search.eta_tol),
        lo,
        hi,
        search.eta_tol,
        MAX_ITERS,
    )?;

    let evaluations = ev.cache.len();
    match ev.best {
        Some((weights, average)) => Ok(ConstantOptimum {
            weights,
            average,
            caps,
            evaluations,
            budget_exhausted: ev.exhausted,
        }),
        None => Err(Error::Infeasible(
            "no constant weights meet the reliability constraint".to_string(),
        )),
    }
}

const MAX_ITERS: usize = 200;

/// Memoized objective for the constant-weight search; tracks the best
/// feasible point and stops evaluating once the budget is spent.
struct Evaluator<'a> {
    links: &'a RelayLinks,
    params: &'a FblParams,
    method: &'a AverageMethod,
    qspec: &'a QuadratureSpec,
    form: ReliabilityForm,
    caps: [f64; 2],
    budget: usize,
    cache: HashMap<(u64, u64), Option<AverageThroughput>>,
    best: Option<(ConstantWeights, AverageThroughput)>,
    exhausted: bool,
}

impl Evaluator<'_> {
    fn eval(&mut self, eta_1: f64, eta_2: f64) -> Result<Option<AverageThroughput>> {
        // Weights arrive as exp(ln η), which can exceed ρ² by an ulp.
        let (eta_1, eta_2) = (
            eta_1.min(self.links.backhaul.rho_sq()),
            eta_2.min(self.links.relaying.rho_sq()),
        );
        let key = (eta_1.to_bits(), eta_2.to_bits());
        if let Some(hit) = self.cache.get(&key) {
            return Ok(*hit);
        }
        if self.cache.len() >= self.budget {
            self.exhausted = true;
            return Ok(None);
        }
        let weights = ConstantWeights::new(eta_1, eta_2, self.links)?;
        let avg = average_throughput(&weights, self.links, self.params, self.method, self.qspec)?;
        if self.feasible(&avg) && self.best.is_none_or(|(_, b)| avg.mu_avg > b.mu_avg) {
            self.best = Some((weights, avg));
        }
        self.cache.insert(key, Some(avg));
        Ok(Some(avg))
    }

    /// Points inside the caps meet the per-frame guarantee by construction.
    fn feasible(&self, avg: &AverageThroughput) -> bool {
        match self.form {
            ReliabilityForm::PerFrame => true,
            ReliabilityForm::Averaged => avg.feasible(self.params.epsilon_th()),
        }
    }

    /// Scaled constraint violation max_k (E[ε̄_k] − ε_th)/ε_th; +∞ once the
    /// budget is spent. Never positive below the per-frame caps.
    fn violation(&mut self, eta_1: f64, eta_2: f64) -> Result<f64> {
        let th = self.params.epsilon_th();
        Ok(match (self.form, self.eval(eta_1, eta_2)?) {
            (_, None) => f64::INFINITY,
            (ReliabilityForm::PerFrame, Some(_)) => -1.0,
            (ReliabilityForm::Averaged, Some(a)) => (a.avg_eps_1.max(a.avg_eps_2) - th) / th,
        })
    }

    fn mu(&mut self, eta_1: f64, eta_2: f64) -> Result<f64> {
        Ok(match self.eval(eta_1, eta_2)? {
            Some(a) if self.feasible(&a) => a.mu_avg,
            _ => f64::NEG_INFINITY,
        })
    }

    /// max over feasible η₂ of μ(η₁, η₂); 0 when no η₂ above the floor is
    /// feasible.
    fn profile(&mut self, eta_1: f64, tol: f64) -> Result<f64> {
        let eta_1 = eta_1.min(self.caps[0]);
        let top = self.caps[1].ln();
        let floor = self.links.relaying.rho_sq().ln() + ETA_FLOOR.ln();
        let g_top = self.violation(eta_1, top.exp())?;
        let upper = if g_top <= 0.0 {
            top
        } else {
            let g_floor = self.violation(eta_1, floor.exp())?;
            if !(g_floor <= 0.0) {
                return Ok(0.0);
            }
            if !g_top.is_finite() {
                return Ok(self.mu(eta_1, floor.exp())?.max(0.0));
            }
            increasing_boundary(
                |s| self.violation(eta_1, s.exp()),
                floor,
                g_floor,
                top,
                g_top,
                tol,
                MAX_ITERS,
            )?
        };
        // Unimodality: if μ does not drop towards the cap, the cap is optimal.
        let at_cap = self.mu(eta_1, upper.exp())?;
        if self.mu(eta_1, (upper - tol).exp())? <= at_cap {
            return Ok(at_cap);
        }
        Ok(golden_section_max(|s| self.mu(eta_1, s.exp()), floor, upper, tol, MAX_ITERS)?.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::LinkIndex;

    fn links(a1: f64, r1: f64, a2: f64, r2: f64) -> RelayLinks {
        RelayLinks::new(
            LinkModel::from_rho_sq(a1, r1, LinkIndex::Backhaul).unwrap(),
            LinkModel::from_rho_sq(a2, r2, LinkIndex::Relaying).unwrap(),
        )
        .unwrap()
    }

    fn avg(w: (f64, f64), l: &RelayLinks, p: &FblParams) -> AverageThroughput {
        let w = ConstantWeights::new(w.0, w.1, l).unwrap();
        average_throughput(
            &w,
            l,
            p,
            &AverageMethod::default(),
            &QuadratureSpec::default(),
        )
        .unwrap()
    }

    #[test]
    fn weights_must_lie_in_box() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        assert!(ConstantWeights::new(0.7, 0.5, &l).is_ok());
        assert!(ConstantWeights::new(0.71, 0.5, &l).is_err());
        assert!(ConstantWeights::new(0.3, 0.0, &l).is_err());
        assert!(ConstantWeights::new(f64::NAN, 0.2, &l).is_err());
    }

    #[test]
    fn relabeling_links_leaves_average_unchanged() {
        let l = links(20.0, 0.7, 8.0, 0.5);
        let p = FblParams::new(300, 1e-2).unwrap();
        let q = QuadratureSpec::default();
        let w = ConstantWeights::new(0.3, 0.3, &l).unwrap();
        let swapped_links = l.swapped();
        let a = average_throughput(&w, &l, &p, &AverageMethod::default(), &q).unwrap();
        let b = average_throughput(
            &w.swapped(),
            &swapped_links,
            &p,
            &AverageMethod::default(),
            &q,
        )
        .unwrap();
        assert!((a.mu_avg - b.mu_avg).abs() <= 1e-12 * a.mu_avg);
        assert!((a.avg_eps_1 - b.avg_eps_2).abs() <= 1e-12);
        assert!((a.avg_eps_2 - b.avg_eps_1).abs() <= 1e-12);
    }

    #[test]
    fn vanishing_weights_vanishing_throughput() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        let p = FblParams::new(300, 0.5).unwrap();
        let mut last = f64::INFINITY;
        for scale in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
            let mu = avg((0.7 * scale, 0.5 * scale), &l, &p).mu_avg;
            assert!(mu < last);
            last = mu;
        }
        assert!(last < 1e-4, "{last}");
    }

    #[test]
    fn error_estimate_covers_default_tolerance() {
        let l = links(30.0, 0.9, 12.0, 0.6);
        let q = QuadratureSpec::default();
        for eps in [0.5, 1e-3] {
            let p = FblParams::new(300, eps).unwrap();
            let w = ConstantWeights::new(0.2, 0.1, &l).unwrap();
            let coarse = average_throughput(&w, &l, &p, &AverageMethod::default(), &q).unwrap();
            let tight = AverageMethod::Quadrature { rel_tol: 1e-9 };
            let fine = average_throughput(&w, &l, &p, &tight, &q).unwrap();
            let gap = (coarse.mu_avg - fine.mu_avg).abs();
            assert!(
                gap <= coarse.err_estimate && gap <= 1e-4 * fine.mu_avg,
                "{eps}: {coarse:?} {fine:?}"
            );
            for k in 0..2 {
                assert!(
                    (coarse.avg_eps()[k] - fine.avg_eps()[k]).abs() <= 1e-4 * fine.avg_eps()[k]
                );
            }
        }
    }

    #[test]
    fn quadrature_matches_monte_carlo() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        let p = FblParams::new(300, 0.5).unwrap();
        let q = QuadratureSpec::default();
        let w = ConstantWeights::new(0.3, 0.3, &l).unwrap();
        let quad = average_throughput(&w, &l, &p, &AverageMethod::default(), &q).unwrap();
        let mc = average_throughput(
            &w,
            &l,
            &p,
            &AverageMethod::MonteCarlo {
                samples: 100_000,
                seed: 5,
            },
            &q,
        )
        .unwrap();
        assert!(
            (quad.mu_avg - mc.mu_avg).abs() <= 3.0 * mc.err_estimate,
            "{quad:?} {mc:?}"
        );
        for k in 0..2 {
            assert!((quad.avg_eps()[k] - mc.avg_eps()[k]).abs() <= 3.0 * mc.eps_std_err[k]);
        }
    }

    #[test]
    fn monte_carlo_is_reproducible_and_checked() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        let p = FblParams::new(300, 1e-2).unwrap();
        let q = QuadratureSpec::default();
        let w = ConstantWeights::new(0.1, 0.1, &l).unwrap();
        let method = AverageMethod::MonteCarlo {
            samples: 100_000,
            seed: 9,
        };
        let a = average_throughput(&w, &l, &p, &method, &q).unwrap();
        let b = average_throughput(&w, &l, &p, &method, &q).unwrap();
        assert_eq!(a, b);
        let few = AverageMethod::MonteCarlo {
            samples: 99_999,
            seed: 9,
        };
        assert!(matches!(
            average_throughput(&w, &l, &p, &few, &q),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn half_threshold_admits_the_whole_box() {
        let l = links(10.0, 0.7, 25.0, 0.5);
        let p = FblParams::new(300, 0.5).unwrap();
        for w in [(0.7, 0.5), (0.7, 0.05), (0.05, 0.5), (0.35, 0.25)] {
            let a = avg(w, &l, &p);
            assert!(a.avg_eps_1 <= 0.5 && a.avg_eps_2 <= 0.5, "{w:?} {a:?}");
        }
        let opt = optimize_constant(
            &l,
            &p,
            &ConstantSearchSpec::default(),
            &AverageMethod::default(),
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert!(opt.average.feasible(0.5) && !opt.budget_exhausted);
    }

    #[test]
    fn averaged_optimum_beats_grid_and_is_honest() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        let p = FblParams::new(300, 1e-2).unwrap();
        let spec = ConstantSearchSpec {
            reliability: ReliabilityForm::Averaged,
            ..Default::default()
        };
        let opt = optimize_constant(
            &l,
            &p,
            &spec,
            &AverageMethod::default(),
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert!(opt.average.feasible(1e-2));
        // Log-spaced grid around the feasible region.
        let mut grid_best: f64 = 0.0;
        for i in 0..12 {
            for j in 0..12 {
                let e1 = 0.7 * 10f64.powf(-2.0 * i as f64 / 11.0);
                let e2 = 0.5 * 10f64.powf(-2.0 * j as f64 / 11.0);
                let a = avg((e1, e2), &l, &p);
                if a.feasible(1e-2) {
                    grid_best = grid_best.max(a.mu_avg);
                }
            }
        }
        assert!(
            opt.average.mu_avg >= grid_best * (1.0 - 1e-3),
            "{} vs {grid_best}",
            opt.average.mu_avg
        );
    }

    #[test]
    fn plateau_around_unconstrained_optimum() {
        let l = links(177.0, 0.7, 177.0, 0.5);
        let p = FblParams::new(300, 0.5).unwrap();
        let opt = optimize_constant(
            &l,
            &p,
            &ConstantSearchSpec::default(),
            &AverageMethod::default(),
            &QuadratureSpec::default(),
        )
        .unwrap();
        let (e1, e2) = (opt.weights.eta_1(), opt.weights.eta_2());
        for (f1, f2) in [
            (1.1, 1.0),
            (0.9, 1.0),
            (1.0, 1.1),
            (1.0, 0.9),
            (0.9, 0.9),
            (1.1, 0.9),
            (0.9, 1.1),
        ] {
            let (a, b) = ((e1 * f1).min(0.7), (e2 * f2).min(0.5));
            let mu = avg((a, b), &l, &p).mu_avg;
            assert!(
                (mu / opt.average.mu_avg - 1.0).abs() < 0.02,
                "({a}, {b}) {mu}"
            );
        }
        assert!(e1 < 0.5);
    }

    #[test]
    fn stronger_correlation_larger_weight_and_throughput() {
        let p = FblParams::new(300, 1e-2).unwrap();
        let run = |r1: f64| {
            optimize_constant(
                &links(50.0, r1, 50.0, 0.5),
                &p,
                &ConstantSearchSpec::default(),
                &AverageMethod::default(),
                &QuadratureSpec::default(),
            )
            .unwrap()
        };
        let weak = run(0.5);
        let strong = run(0.9);
        assert!(strong.weights.eta_1() > weak.weights.eta_1());
        assert!(strong.average.mu_avg > weak.average.mu_avg);
    }

    #[test]
    fn exhausted_budget_returns_best_so_far() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        let p = FblParams::new(300, 0.5).unwrap();
        let spec = ConstantSearchSpec {
            max_evaluations: 4,
            ..Default::default()
        };
        let opt = optimize_constant(
            &l,
            &p,
            &spec,
            &AverageMethod::default(),
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert!(opt.budget_exhausted);
        assert_eq!(opt.evaluations, 4);
        assert!(opt.average.feasible(0.5));
    }

    #[test]
    fn per_frame_cap_holds_in_every_frame() {
        let l = links(177.0, 0.7, 177.0, 0.5);
        let q = QuadratureSpec::default();
        for eps in [1e-2, 1e-3] {
            let p = FblParams::new(300, eps).unwrap();
            for link in [l.backhaul, l.relaying] {
                let cap = per_frame_weight_cap(&link, &p, &q, 1e-6).unwrap();
                assert!(cap < link.rho_sq());
                assert!(worst_frame_error(cap, &link, &p, &q).unwrap().0 <= eps);
                assert!(worst_frame_error(cap * 1.01, &link, &p, &q).unwrap().0 > eps);
                // Dense independent scan of outdated SNRs.
                for i in 0..400 {
                    let x = 177.0 * 10f64.powf(-3.0 + 6.0 * i as f64 / 399.0);
                    let rate = fbl_rate(SnrValue::new(cap * x).unwrap(), &p);
                    let e = expected_link_error(SnrValue::new(x).unwrap(), rate, &link, 300, &q)
                        .unwrap();
                    assert!(e <= eps * (1.0 + 1e-9), "eps {eps} x {x}: {e}");
                }
            }
        }
    }

    #[test]
    fn half_threshold_cap_is_the_box() {
        let l = links(10.0, 0.7, 25.0, 0.5);
        let p = FblParams::new(300, 0.5).unwrap();
        let q = QuadratureSpec::default();
        for link in [l.backhaul, l.relaying] {
            let cap = per_frame_weight_cap(&link, &p, &q, 1e-6).unwrap();
            assert!(cap >= link.rho_sq() * (1.0 - 1e-3), "{cap}");
        }
    }

    #[test]
    fn per_frame_optimum_beats_box_grid() {
        let l = links(50.0, 0.8, 30.0, 0.6);
        let p = FblParams::new(300, 1e-2).unwrap();
        let q = QuadratureSpec::default();
        let opt = optimize_constant(
            &l,
            &p,
            &ConstantSearchSpec::default(),
            &AverageMethod::default(),
            &q,
        )
        .unwrap();
        let [c1, c2] = opt.caps;
        assert!(opt.weights.eta_1() <= c1 && opt.weights.eta_2() <= c2);
        let mut grid_best: f64 = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                let e1 = c1 * 10f64.powf(-2.0 * i as f64 / 9.0);
                let e2 = c2 * 10f64.powf(-2.0 * j as f64 / 9.0);
                grid_best = grid_best.max(avg((e1, e2), &l, &p).mu_avg);
            }
        }
        assert!(
            opt.average.mu_avg >= grid_best * (1.0 - 1e-3),
            "{} vs {grid_best}",
            opt.average.mu_avg
        );
    }

    #[test]
    fn averaged_form_relaxes_per_frame_form() {
        let l = links(50.0, 0.8, 30.0, 0.6);
        let p = FblParams::new(300, 1e-2).unwrap();
        let q = QuadratureSpec::default();
        let per_frame = optimize_constant(
            &l,
            &p,
            &ConstantSearchSpec::default(),
            &AverageMethod::default(),
            &q,
        )
        .unwrap();
        let spec = ConstantSearchSpec {
            reliability: ReliabilityForm::Averaged,
            ..Default::default()
        };
        let averaged = optimize_constant(&l, &p, &spec, &AverageMethod::default(), &q).unwrap();
        // Per-frame caps imply the averaged constraint.
        assert!(per_frame.average.feasible(1e-2));
        assert!(averaged.average.mu_avg >= per_frame.average.mu_avg * (1.0 - 1e-4));
    }
}
