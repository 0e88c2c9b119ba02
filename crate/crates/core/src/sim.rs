//! Frame-by-frame Monte Carlo of the relay: correlated channel draws, a
//! scheduling policy, Bernoulli decoding per hop and long-run accounting.
//!
//! Frame i uses its own ChaCha8 stream (number i) of the seeded generator,
//! so a frame's draws do not depend on how frames are split across threads,
//! and two policies run with the same seed see the same channels and the
//! same decoding draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{sample_pair, ChannelRealization, FrameCsi, RelayLinks};
use crate::error::{Error, Result};
use crate::fbl::{fbl_error, FblParams};
use crate::quadrature::QuadratureSpec;
use crate::scheduler_constant::ConstantWeights;
use crate::scheduler_optimal::{optimize_frame, OptimizerSpec};
use crate::throughput::{schedule_rate, throughput_at_rate};

/// Smallest run accepted by [`run`].
pub const MIN_FRAMES: u64 = 10_000;

/// How the source picks each frame's coding rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    /// Per-frame optimal weights.
    Optimal(OptimizerSpec),
    /// The same weights in every frame.
    Constant(ConstantWeights),
    /// The same coding rate in every frame, regardless of CSI.
    FixedRate(f64),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Optimal(_) => "optimal",
            Policy::Constant(_) => "constant",
            Policy::FixedRate(_) => "fixed-rate",
        }
    }

    fn validate(&self, links: &RelayLinks) -> Result<()> {
        match *self {
            Policy::Optimal(spec) => spec.validate(),
            Policy::Constant(w) => ConstantWeights::new(w.eta_1(), w.eta_2(), links).map(|_| ()),
            Policy::FixedRate(r) if r >= 0.0 && r.is_finite() => Ok(()),
            Policy::FixedRate(r) => Err(Error::domain(format!(
                "fixed rate must be finite and >= 0, got {r}"
            ))),
        }
    }

    /// Coding rate and the policy's own prediction (μ, ε̄₁, ε̄₂) for a frame.
    fn decide(
        &self,
        csi: &FrameCsi,
        links: &RelayLinks,
        params: &FblParams,
        qspec: &QuadratureSpec,
    ) -> Result<(f64, [f64; 3])> {
        let rate = match *self {
            Policy::Optimal(spec) => {
                let d = optimize_frame(csi, links, params, &spec, qspec)?;
                let t = d.throughput;
                return Ok((d.decision.rate, [t.mu, t.eps_bar_1, t.eps_bar_2]));
            }
            Policy::Constant(w) => schedule_rate(csi, w.eta_1(), w.eta_2(), links, params)?.rate,
            Policy::FixedRate(r) => r,
        };
        let t = throughput_at_rate(csi, rate, links, params.blocklength(), qspec)?;
        Ok((rate, [t.mu, t.eps_bar_1, t.eps_bar_2]))
    }
}

/// Channel uses charged to a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Accounting {
    /// Both phases are always transmitted: 2m channel uses per frame.
    #[default]
    BothPhases,
    /// The relay stays silent after a failed backhaul decode, so the frame
    /// costs m channel uses in that case.
    SkipRelayOnFailure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub accounting: Accounting,
    pub qspec: QuadratureSpec,
    /// Frames per parallel work item.
    pub chunk_frames: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            accounting: Accounting::default(),
            qspec: QuadratureSpec::default(),
            chunk_frames: 512,
        }
    }
}

/// What happened in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutcome {
    pub backhaul: ChannelRealization,
    pub relaying: ChannelRealization,
    pub rate: f64,
    /// Hop successes; the relaying hop is `None` when it was not sent.
    pub decoded: [Option<bool>; 2],
    /// Correctly delivered bits r·m, or 0.
    pub delivered_bits: f64,
    pub channel_uses: f64,
    /// The policy's predicted (μ, ε̄₁, ε̄₂) for this frame.
    pub predicted: [f64; 3],
}

/// Long-run results of a simulation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunReport {
    pub frames: u64,
    /// Delivered bits over total channel uses of the transmission parts.
    pub realized_throughput: f64,
    /// Standard error of `realized_throughput`.
    pub realized_std_err: f64,
    pub realized_link_error_1: f64,
    pub realized_link_error_2: f64,
    pub link_error_std_err: [f64; 2],
    /// Mean of the per-frame predicted throughput.
    pub analytic_throughput: f64,
    pub analytic_std_err: f64,
    /// Mean per-frame predicted ε̄₁ and ε̄₂.
    pub analytic_link_error: [f64; 2],
    /// Standard error of the mean per-frame difference between delivered
    /// throughput (bits over 2m) and its prediction.
    pub paired_std_err: f64,
    pub mean_rate: f64,
    pub rng_seed: u64,
}

impl RunReport {
    /// |realized − analytic| in units of the paired standard error.
    pub fn consistency_z(&self) -> f64 {
        let gap = self.realized_throughput - self.analytic_throughput;
        if self.paired_std_err > 0.0 {
            gap.abs() / self.paired_std_err
        } else if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Simulates `n_frames` frames under `policy`.
pub fn run(
    policy: &Policy,
    links: &RelayLinks,
    params: &FblParams,
    n_frames: u64,
    seed: u64,
    options: &SimOptions,
) -> Result<RunReport> {
    let [report] = run_many(&[*policy], links, params, n_frames, seed, options)?;
    Ok(report)
}

/// Paired comparison of two policies on identical channel and decoding draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyComparison {
    pub first: RunReport,
    pub second: RunReport,
    /// Mean per-frame difference of predicted throughput, first − second.
    pub analytic_gap: f64,
    pub analytic_gap_std_err: f64,
    /// Mean per-frame difference of delivered throughput (bits over 2m).
    pub realized_gap: f64,
    pub realized_gap_std_err: f64,
}

/// Runs two policies frame by frame on the same draws.
pub fn compare(
    first: &Policy,
    second: &Policy,
    links: &RelayLinks,
    params: &FblParams,
    n_frames: u64,
    seed: u64,
    options: &SimOptions,
) -> Result<PolicyComparison> {
    let (reports, gaps) = simulate(&[*first, *second], links, params, n_frames, seed, options)?;
    let [a, b] = reports;
    let n = n_frames as f64;
    let (analytic_gap, analytic_gap_std_err) = gaps.analytic.mean_se(n);
    let (realized_gap, realized_gap_std_err) = gaps.realized.mean_se(n);
    Ok(PolicyComparison {
        first: a,
        second: b,
        analytic_gap,
        analytic_gap_std_err,
        realized_gap,
        realized_gap_std_err,
    })
}

/// Runs several policies on the same draws.
pub fn run_many<const P: usize>(
    policies: &[Policy; P],
    links: &RelayLinks,
    params: &FblParams,
    n_frames: u64,
    seed: u64,
    options: &SimOptions,
) -> Result<[RunReport; P]> {
    Ok(simulate(policies, links, params, n_frames, seed, options)?.0)
}

/// Draws the channels and decoding uniforms of frame `index`.
pub fn draw_frame(
    links: &RelayLinks,
    seed: u64,
    index: u64,
) -> (ChannelRealization, ChannelRealization, [f64; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let backhaul = sample_pair(&links.backhaul, &mut rng);
    let relaying = sample_pair(&links.relaying, &mut rng);
    let uniforms = [rng.random::<f64>(), rng.random::<f64>()];
    (backhaul, relaying, uniforms)
}

/// Applies `policy` to frame `index`.
pub fn simulate_frame(
    policy: &Policy,
    links: &RelayLinks,
    params: &FblParams,
    seed: u64,
    index: u64,
    options: &SimOptions,
) -> Result<FrameOutcome> {
    policy.validate(links)?;
    let draws = draw_frame(links, seed, index);
    apply(policy, links, params, &draws, options).map_err(|e| Error::Policy {
        frame: index,
        source: Box::new(e),
    })
}

fn apply(
    policy: &Policy,
    links: &RelayLinks,
    params: &FblParams,
    (backhaul, relaying, u): &(ChannelRealization, ChannelRealization, [f64; 2]),
    options: &SimOptions,
) -> Result<FrameOutcome> {
    let m = params.blocklength();
    let csi = FrameCsi {
        gamma_hat_1: backhaul.gamma_hat,
        gamma_hat_2: relaying.gamma_hat,
    };
    let (rate, predicted) = policy.decide(&csi, links, params, &options.qspec)?;
    let ok_1 = u[0] >= fbl_error(backhaul.gamma, rate, m);
    let send_relay = ok_1 || options.accounting == Accounting::BothPhases;
    let ok_2 = send_relay.then(|| u[1] >= fbl_error(relaying.gamma, rate, m));
    let delivered = ok_1 && ok_2 == Some(true);
    let mf = m as f64;
    Ok(FrameOutcome {
        backhaul: *backhaul,
        relaying: *relaying,
        rate,
        decoded: [Some(ok_1), ok_2],
        delivered_bits: if delivered { rate * mf } else { 0.0 },
        channel_uses: if send_relay { 2.0 * mf } else { mf },
        predicted,
    })
}

/// Running sums of one quantity.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(&mut self, other: &Moments) {
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    fn mean_se(&self, n: f64) -> (f64, f64) {
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
        (mean, (var / n).sqrt())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    rate: f64,
    /// Delivered bits and channel uses, both per m.
    bits: Moments,
    uses: Moments,
    bits_uses: f64,
    predicted: Moments,
    predicted_eps: [f64; 2],
    /// Delivered throughput per 2m minus its prediction.
    paired: Moments,
    failures: [u64; 2],
    attempts: [u64; 2],
}

impl Tally {
    fn add(&mut self, o: &FrameOutcome, m: f64) {
        let b = o.delivered_bits / m;
        let c = o.channel_uses / m;
        self.rate += o.rate;
        self.bits.add(b);
        self.uses.add(c);
        self.bits_uses += b * c;
        self.predicted.add(o.predicted[0]);
        self.predicted_eps[0] += o.predicted[1];
        self.predicted_eps[1] += o.predicted[2];
        self.paired.add(0.5 * b - o.predicted[0]);
        for (k, d) in o.decoded.iter().enumerate() {
            if let Some(ok) = d {
                self.attempts[k] += 1;
                self.failures[k] += (!ok) as u64;
            }
        }
    }

    fn merge(&mut self, other: &Tally) {
        self.rate += other.rate;
        self.bits.merge(&other.bits);
        self.uses.merge(&other.uses);
        self.bits_uses += other.bits_uses;
        self.predicted.merge(&other.predicted);
        for k in 0..2 {
            self.predicted_eps[k] += other.predicted_eps[k];
            self.failures[k] += other.failures[k];
            self.attempts[k] += other.attempts[k];
        }
        self.paired.merge(&other.paired);
    }

    fn report(&self, n: u64, seed: u64) -> RunReport {
        let nf = n as f64;
        let mean_b = self.bits.sum / nf;
        let mean_c = self.uses.sum / nf;
        let throughput = mean_b / mean_c;
        // Delta method for the ratio of means.
        let var_b = self.bits.sum_sq / nf - mean_b * mean_b;
        let var_c = self.uses.sum_sq / nf - mean_c * mean_c;
        let cov = self.bits_uses / nf - mean_b * mean_c;
        let var_ratio = (var_b - 2.0 * throughput * cov + throughput * throughput * var_c).max(0.0)
            * nf
            / (nf - 1.0);
        let freq = |k: usize| {
            let a = self.attempts[k];
            if a == 0 {
                return (0.0, 0.0);
            }
            let p = self.failures[k] as f64 / a as f64;
            (p, (p * (1.0 - p) / a as f64).sqrt())
        };
        let (e1, s1) = freq(0);
        let (e2, s2) = freq(1);
        let (analytic, analytic_se) = self.predicted.mean_se(nf);
        let (_, paired_se) = self.paired.mean_se(nf);
        RunReport {
            frames: n,
            realized_throughput: throughput,
            realized_std_err: (var_ratio / nf).sqrt() / mean_c,
            realized_link_error_1: e1,
            realized_link_error_2: e2,
            link_error_std_err: [s1, s2],
            analytic_throughput: analytic,
            analytic_std_err: analytic_se,
            analytic_link_error: [self.predicted_eps[0] / nf, self.predicted_eps[1] / nf],
            paired_std_err: paired_se,
            mean_rate: self.rate / nf,
            rng_seed: seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Gaps {
    analytic: Moments,
    realized: Moments,
}

fn simulate<const P: usize>(
    policies: &[Policy; P],
    links: &RelayLinks,
    params: &FblParams,
    n_frames: u64,
    seed: u64,
    options: &SimOptions,
) -> Result<([RunReport; P], Gaps)> {
    if n_frames < MIN_FRAMES {
        return Err(Error::domain(format!(
            "a run needs at least {MIN_FRAMES} frames, got {n_frames}"
        )));
    }
    if options.chunk_frames == 0 {
        return Err(Error::config("chunk_frames must be positive"));
    }
    options.qspec.validate()?;
    for p in policies {
        p.validate(links)?;
    }
    let m = params.blocklength() as f64;
    let chunk = options.chunk_frames;
    let chunks = n_frames.div_ceil(chunk);
    let partials: Vec<Result<([Tally; P], Gaps)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut tallies = [Tally::default(); P];
            let mut gaps = Gaps::default();
            for index in c * chunk..((c + 1) * chunk).min(n_frames) {
                let draws = draw_frame(links, seed, index);
                let mut outcomes = [None; P];
                for (p, policy) in policies.iter().enumerate() {
                    let o = apply(policy, links, params, &draws, options).map_err(|e| {
                        Error::Policy {
                            frame: index,
                            source: Box::new(e),
                        }
                    })?;
                    tallies[p].add(&o, m);
                    outcomes[p] = Some(o);
                }
                if let [Some(a), Some(b), ..] = outcomes[..] {
                    gaps.analytic.add(a.predicted[0] - b.predicted[0]);
                    gaps.realized
                        .add(0.5 * (a.delivered_bits - b.delivered_bits) / m);
                }
            }
            Ok((tallies, gaps))
        })
        .collect();
    // Merging in chunk order keeps the sums independent of scheduling; the
    // first failing chunk carries the lowest failing frame.
    let mut total = [Tally::default(); P];
    let mut gaps = Gaps::default();
    for partial in partials {
        let (t, g) = partial?;
        for (acc, part) in total.iter_mut().zip(&t) {
            acc.merge(part);
        }
        gaps.analytic.merge(&g.analytic);
        gaps.realized.merge(&g.realized);
    }
    Ok((total.map(|t| t.report(n_frames, seed)), gaps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{LinkIndex, LinkModel};
    use crate::scheduler_constant::{average_throughput, AverageMethod};

    fn links(a1: f64, r1: f64, a2: f64, r2: f64) -> RelayLinks {
        RelayLinks::new(
            LinkModel::from_rho_sq(a1, r1, LinkIndex::Backhaul).unwrap(),
            LinkModel::from_rho_sq(a2, r2, LinkIndex::Relaying).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_rate_delivers_nothing_and_never_fails() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        let p = FblParams::new(300, 1e-2).unwrap();
        let r = run(
            &Policy::FixedRate(0.0),
            &l,
            &p,
            10_000,
            1,
            &SimOptions::default(),
        )
        .unwrap();
        assert_eq!(r.realized_throughput, 0.0);
        assert_eq!(r.realized_link_error_1, 0.0);
        assert_eq!(r.realized_link_error_2, 0.0);
        assert_eq!(r.analytic_throughput, 0.0);
    }

    #[test]
    fn reproducible_and_independent_of_chunking() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        let p = FblParams::new(300, 1e-2).unwrap();
        let policy = Policy::FixedRate(1.0);
        let a = run(&policy, &l, &p, 10_000, 7, &SimOptions::default()).unwrap();
        let b = run(&policy, &l, &p, 10_000, 7, &SimOptions::default()).unwrap();
        assert_eq!(a, b);
        let c = run(
            &policy,
            &l,
            &p,
            10_000,
            7,
            &SimOptions {
                chunk_frames: 10_000,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a.frames, c.frames);
        assert!((a.realized_throughput - c.realized_throughput).abs() < 1e-12);
        assert!((a.analytic_throughput - c.analytic_throughput).abs() < 1e-12);
        let d = run(&policy, &l, &p, 10_000, 8, &SimOptions::default()).unwrap();
        assert_ne!(a.realized_throughput, d.realized_throughput);
    }

    #[test]
    fn rejects_short_runs_and_bad_policies() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        let p = FblParams::new(300, 1e-2).unwrap();
        let opts = SimOptions::default();
        assert!(run(&Policy::FixedRate(1.0), &l, &p, 9_999, 1, &opts).is_err());
        assert!(run(&Policy::FixedRate(-1.0), &l, &p, 10_000, 1, &opts).is_err());
        assert!(run(&Policy::FixedRate(f64::NAN), &l, &p, 10_000, 1, &opts).is_err());
    }

    #[test]
    fn policy_errors_carry_the_frame_index() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        let p = FblParams::new(300, 1e-2).unwrap();
        // A starved integrator fails on the first frame that needs refinement.
        let opts = SimOptions {
            qspec: QuadratureSpec {
                max_subdivisions: 1,
                rel_tol: 1e-10,
                ..Default::default()
            },
            ..Default::default()
        };
        let err = run(&Policy::FixedRate(1.0), &l, &p, 10_000, 3, &opts).unwrap_err();
        let Error::Policy { frame, source } = err else {
            panic!("{err:?}")
        };
        assert!(source.is_accuracy());
        // Every earlier frame succeeds on its own.
        for i in 0..frame {
            simulate_frame(&Policy::FixedRate(1.0), &l, &p, 3, i, &opts).unwrap();
        }
        assert!(simulate_frame(&Policy::FixedRate(1.0), &l, &p, 3, frame, &opts).is_err());
    }

    #[test]
    fn realized_throughput_bounded_by_half_mean_rate() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        let p = FblParams::new(300, 1e-2).unwrap();
        let w = ConstantWeights::new(0.2, 0.2, &l).unwrap();
        let r = run(
            &Policy::Constant(w),
            &l,
            &p,
            10_000,
            4,
            &SimOptions::default(),
        )
        .unwrap();
        assert!(r.realized_throughput <= 0.5 * r.mean_rate);
        for e in [r.realized_link_error_1, r.realized_link_error_2] {
            assert!((0.0..=1.0).contains(&e));
        }
    }

    #[test]
    fn fixed_rate_matches_prediction() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        let p = FblParams::new(300, 1e-2).unwrap();
        let r = run(
            &Policy::FixedRate(1.5),
            &l,
            &p,
            40_000,
            5,
            &SimOptions::default(),
        )
        .unwrap();
        assert!(r.consistency_z() <= 3.0, "{r:?}");
        for k in 0..2 {
            let e = [r.realized_link_error_1, r.realized_link_error_2][k];
            assert!((e - r.analytic_link_error[k]).abs() <= 3.0 * r.link_error_std_err[k] + 1e-3);
        }
    }

    #[test]
    fn constant_policy_matches_long_run_average() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        let p = FblParams::new(300, 0.5).unwrap();
        let w = ConstantWeights::new(0.3, 0.3, &l).unwrap();
        let avg = average_throughput(
            &w,
            &l,
            &p,
            &AverageMethod::default(),
            &QuadratureSpec::default(),
        )
        .unwrap();
        let r = run(
            &Policy::Constant(w),
            &l,
            &p,
            50_000,
            6,
            &SimOptions::default(),
        )
        .unwrap();
        assert!(
            (r.realized_throughput - avg.mu_avg).abs() <= 3.0 * r.realized_std_err,
            "{r:?} {avg:?}"
        );
        assert!((r.analytic_throughput - avg.mu_avg).abs() <= 3.0 * r.analytic_std_err);
    }

    #[test]
    fn skipping_the_relay_saves_channel_uses() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        let p = FblParams::new(300, 1e-2).unwrap();
        let policy = Policy::FixedRate(2.0);
        let both = run(&policy, &l, &p, 10_000, 9, &SimOptions::default()).unwrap();
        let skip = run(
            &policy,
            &l,
            &p,
            10_000,
            9,
            &SimOptions {
                accounting: Accounting::SkipRelayOnFailure,
                ..Default::default()
            },
        )
        .unwrap();
        // Same draws, same delivered bits, fewer channel uses.
        assert!(skip.realized_throughput > both.realized_throughput);
        assert_eq!(skip.realized_link_error_1, both.realized_link_error_1);
        let outcome = simulate_frame(
            &policy,
            &l,
            &p,
            9,
            0,
            &SimOptions {
                accounting: Accounting::SkipRelayOnFailure,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(
            outcome.decoded[1].is_none(),
            outcome.decoded[0] == Some(false)
        );
    }

    #[test]
    fn comparison_is_paired() {
        let l = links(10.0, 0.7, 10.0, 0.5);
        let p = FblParams::new(300, 1e-2).unwrap();
        let c = compare(
            &Policy::FixedRate(1.0),
            &Policy::FixedRate(1.0),
            &l,
            &p,
            10_000,
            2,
            &SimOptions::default(),
        )
        .unwrap();
        assert_eq!(c.analytic_gap, 0.0);
        assert_eq!(c.realized_gap, 0.0);
        assert_eq!(c.first, c.second);
    }
}
