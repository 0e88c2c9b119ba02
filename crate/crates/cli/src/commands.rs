use rayon::prelude::*;

use fbl_relay::channel::{FrameCsi, RelayLinks};
use fbl_relay::scheduler_constant::{
    average_throughput, optimize_constant, AverageMethod, ConstantWeights,
};
use fbl_relay::scheduler_optimal::OptimizerSpec;
use fbl_relay::sim::{compare, run, Policy, RunReport, SimOptions};
use fbl_relay::throughput::{ergodic_capacity_reference, schedule_rate, throughput_at_rate};
use fbl_relay::validation::{run_check, CheckReport, ValidationConfig, CHECK_COUNT};
use fbl_relay::Error;

use crate::config::{db_to_linear, PolicyKind, ScenarioConfig, SurfaceKind, ValidationProfile};
use crate::error::CliError;
use crate::output::{num, Table};

pub const SURFACE_HEADER: &[&str] = &["eta_1", "eta_2", "mu", "eps_1", "eps_2"];

pub const SWEEP_HEADER: &[&str] = &[
    "snr_db",
    "epsilon_th",
    "rho_sq_1",
    "rho_sq_2",
    "policy",
    "eta_1",
    "eta_2",
    "mu_analytic",
    "mu_analytic_std_err",
    "mu_realized",
    "mu_realized_std_err",
    "eps_1",
    "eps_2",
    "eps_1_realized",
    "eps_2_realized",
    "shannon_reference",
];

pub const SIMULATE_HEADER: &[&str] = &[
    "policy",
    "frames",
    "seed",
    "eta_1",
    "eta_2",
    "fixed_rate",
    "realized_throughput",
    "realized_std_err",
    "analytic_throughput",
    "analytic_std_err",
    "consistency_z",
    "link_error_1",
    "link_error_2",
    "link_error_std_err_1",
    "link_error_std_err_2",
    "mean_rate",
];

pub const VALIDATE_HEADER: &[&str] = &["id", "name", "passed", "elapsed_s", "summary"];

fn sim_options(cfg: &ScenarioConfig) -> SimOptions {
    SimOptions {
        accounting: cfg.accounting(),
        qspec: cfg.qspec(),
        ..SimOptions::default()
    }
}

fn axis(rho_sq: f64, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| (rho_sq * i as f64 / n as f64).min(rho_sq))
        .collect()
}

/// Throughput over an (η₁, η₂) grid on (0, ρ₁²] × (0, ρ₂²].
pub fn surface(cfg: &ScenarioConfig) -> Result<Table, CliError> {
    let links = cfg.links()?;
    let params = cfg.params()?;
    let qspec = cfg.qspec();
    let s = &cfg.surface;
    let pairs: Vec<(f64, f64)> = axis(links.backhaul.rho_sq(), s.points_eta_1)
        .into_iter()
        .flat_map(|a| {
            axis(links.relaying.rho_sq(), s.points_eta_2)
                .into_iter()
                .map(move |b| (a, b))
        })
        .collect();
    let rows: Vec<Result<[f64; 3], Error>> = match s.kind {
        SurfaceKind::Frame => {
            let (a1, a2) = cfg.avg_snr()?;
            let csi = FrameCsi::new(
                s.outdated_snr_backhaul_db.map_or(a1, db_to_linear),
                s.outdated_snr_relaying_db.map_or(a2, db_to_linear),
            )?;
            pairs
                .par_iter()
                .map(|&(e1, e2)| {
                    let d = schedule_rate(&csi, e1, e2, &links, &params)?;
                    let t = throughput_at_rate(&csi, d.rate, &links, params.blocklength(), &qspec)?;
                    Ok([t.mu, t.eps_bar_1, t.eps_bar_2])
                })
                .collect()
        }
        SurfaceKind::Average => {
            let method = AverageMethod::default();
            pairs
                .par_iter()
                .map(|&(e1, e2)| {
                    let w = ConstantWeights::new(e1, e2, &links)?;
                    let a = average_throughput(&w, &links, &params, &method, &qspec)?;
                    Ok([a.mu_avg, a.avg_eps_1, a.avg_eps_2])
                })
                .collect()
        }
    };
    let mut table = Table::new(SURFACE_HEADER);
    for (&(e1, e2), r) in pairs.iter().zip(rows) {
        let [mu, x1, x2] = r?;
        table.push(vec![num(e1), num(e2), num(mu), num(x1), num(x2)]);
    }
    Ok(table)
}

struct SweepSpot {
    snr_db: f64,
    links: RelayLinks,
    epsilon_th: f64,
}

fn sweep_rows(cfg: &ScenarioConfig, spot: &SweepSpot) -> Result<Vec<Vec<String>>, CliError> {
    let params = cfg.params_with(spot.epsilon_th)?;
    let links = &spot.links;
    let qspec = cfg.qspec();
    let options = sim_options(cfg);
    let optimal = Policy::Optimal(OptimizerSpec::default());
    let frames = cfg.sweep.frames;
    let reference = ergodic_capacity_reference(links)?;
    let constant = match optimize_constant(
        links,
        &params,
        &cfg.constant_search(),
        &AverageMethod::default(),
        &qspec,
    ) {
        Ok(c) => Some(c),
        Err(Error::Infeasible(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let (opt_report, const_report) = match &constant {
        Some(c) => {
            let cmp = compare(
                &optimal,
                &Policy::Constant(c.weights),
                links,
                &params,
                frames,
                cfg.seed,
                &options,
            )?;
            (cmp.first, Some(cmp.second))
        }
        None => (
            run(&optimal, links, &params, frames, cfg.seed, &options)?,
            None,
        ),
    };
    let lead = |policy: &str| {
        vec![
            num(spot.snr_db),
            num(spot.epsilon_th),
            num(links.backhaul.rho_sq()),
            num(links.relaying.rho_sq()),
            policy.to_string(),
        ]
    };
    let realized = |r: &RunReport| {
        vec![
            num(r.realized_throughput),
            num(r.realized_std_err),
            num(r.analytic_link_error[0]),
            num(r.analytic_link_error[1]),
            num(r.realized_link_error_1),
            num(r.realized_link_error_2),
        ]
    };
    let mut opt_row = lead("optimal");
    opt_row.extend([
        String::new(),
        String::new(),
        num(opt_report.analytic_throughput),
        num(opt_report.analytic_std_err),
    ]);
    opt_row.extend(realized(&opt_report));
    opt_row.push(num(reference));

    let mut const_row = lead("constant");
    match (&constant, &const_report) {
        (Some(c), Some(r)) => {
            const_row.extend([
                num(c.weights.eta_1()),
                num(c.weights.eta_2()),
                num(c.average.mu_avg),
                num(c.average.err_estimate),
                num(r.realized_throughput),
                num(r.realized_std_err),
                num(c.average.avg_eps_1),
                num(c.average.avg_eps_2),
                num(r.realized_link_error_1),
                num(r.realized_link_error_2),
            ]);
        }
        // No constant weights meet the averaged constraint.
        _ => const_row.extend(std::iter::repeat_n(num(f64::NAN), 10)),
    }
    const_row.push(num(reference));
    Ok(vec![opt_row, const_row])
}

fn rho_settings(cfg: &ScenarioConfig) -> Result<Vec<(f64, f64)>, CliError> {
    if cfg.sweep.rho_sq.is_empty() {
        Ok(vec![cfg.rho_sq()?])
    } else {
        Ok(cfg.sweep.rho_sq.iter().map(|r| (r[0], r[1])).collect())
    }
}

fn run_sweep(cfg: &ScenarioConfig, spots: Vec<SweepSpot>) -> Result<Table, CliError> {
    if spots.is_empty() {
        return Err(CliError::usage("the sweep has no points"));
    }
    let results: Vec<Result<Vec<Vec<String>>, CliError>> =
        spots.par_iter().map(|s| sweep_rows(cfg, s)).collect();
    let mut table = Table::new(SWEEP_HEADER);
    for rows in results {
        for row in rows? {
            table.push(row);
        }
    }
    Ok(table)
}

/// Both policies against the average SNR (equal on both links).
pub fn sweep_snr(cfg: &ScenarioConfig) -> Result<Table, CliError> {
    let mut spots = Vec::new();
    for rho in rho_settings(cfg)? {
        for &eps in &cfg.sweep.epsilon_th {
            for &db in &cfg.sweep.snr_db {
                let avg = db_to_linear(db);
                spots.push(SweepSpot {
                    snr_db: db,
                    links: cfg.links_with(avg, avg, rho)?,
                    epsilon_th: eps,
                });
            }
        }
    }
    run_sweep(cfg, spots)
}

/// Both policies against the reliability target at the configured SNRs.
pub fn sweep_eps(cfg: &ScenarioConfig) -> Result<Table, CliError> {
    let (a1, a2) = cfg.avg_snr()?;
    let mut spots = Vec::new();
    for rho in rho_settings(cfg)? {
        for &eps in &cfg.sweep.epsilon_th {
            spots.push(SweepSpot {
                snr_db: 10.0 * a1.log10(),
                links: cfg.links_with(a1, a2, rho)?,
                epsilon_th: eps,
            });
        }
    }
    run_sweep(cfg, spots)
}

pub fn simulate(cfg: &ScenarioConfig) -> Result<Table, CliError> {
    let links = cfg.links()?;
    let params = cfg.params()?;
    let qspec = cfg.qspec();
    let policy = match cfg.policy {
        PolicyKind::Optimal => Policy::Optimal(OptimizerSpec::default()),
        PolicyKind::Constant => match cfg.constant_eta {
            Some([e1, e2]) => Policy::Constant(ConstantWeights::new(e1, e2, &links)?),
            None => {
                let c = optimize_constant(
                    &links,
                    &params,
                    &cfg.constant_search(),
                    &AverageMethod::default(),
                    &qspec,
                )?;
                Policy::Constant(c.weights)
            }
        },
        PolicyKind::FixedRate => {
            Policy::FixedRate(cfg.fixed_rate_bits_per_symbol.ok_or_else(|| {
                CliError::usage("the fixed-rate policy needs fixed_rate_bits_per_symbol")
            })?)
        }
    };
    let r = run(
        &policy,
        &links,
        &params,
        cfg.frames,
        cfg.seed,
        &sim_options(cfg),
    )?;
    let (eta, rate) = match policy {
        Policy::Constant(w) => ([num(w.eta_1()), num(w.eta_2())], String::new()),
        Policy::FixedRate(x) => ([String::new(), String::new()], num(x)),
        Policy::Optimal(_) => ([String::new(), String::new()], String::new()),
    };
    let [eta_1, eta_2] = eta;
    let mut table = Table::new(SIMULATE_HEADER);
    table.push(vec![
        policy.name().to_string(),
        r.frames.to_string(),
        r.rng_seed.to_string(),
        eta_1,
        eta_2,
        rate,
        num(r.realized_throughput),
        num(r.realized_std_err),
        num(r.analytic_throughput),
        num(r.analytic_std_err),
        num(r.consistency_z()),
        num(r.realized_link_error_1),
        num(r.realized_link_error_2),
        num(r.link_error_std_err[0]),
        num(r.link_error_std_err[1]),
        num(r.mean_rate),
    ]);
    Ok(table)
}

/// Runs the oracle suite; the reports come back even when checks fail.
pub fn validate(cfg: &ScenarioConfig, full: bool) -> Result<Vec<CheckReport>, CliError> {
    let profile = if full {
        ValidationProfile::Full
    } else {
        cfg.validation.profile
    };
    let mut vcfg = match profile {
        ValidationProfile::Quick => ValidationConfig::quick(cfg.seed),
        ValidationProfile::Full => ValidationConfig::full(cfg.seed),
    };
    vcfg.qspec = cfg.qspec();
    let ids: Vec<u8> = if cfg.validation.checks.is_empty() {
        (1..=CHECK_COUNT).collect()
    } else {
        cfg.validation.checks.clone()
    };
    if let Some(bad) = ids.iter().find(|&&id| id == 0 || id > CHECK_COUNT) {
        return Err(CliError::Usage(format!(
            "no validation check with id {bad}"
        )));
    }
    Ok(ids
        .into_iter()
        .map(|id| {
            let r = run_check(id, &vcfg);
            eprintln!(
                "{} check {}: {}",
                if r.passed { "PASS" } else { "FAIL" },
                r.id,
                r.name
            );
            r
        })
        .collect())
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub fn validation_table(reports: &[CheckReport]) -> Table {
    let mut table = Table::new(VALIDATE_HEADER);
    for r in reports {
        table.push(vec![
            r.id.to_string(),
            quote(r.name),
            r.passed.to_string(),
            num(r.elapsed.as_secs_f64()),
            quote(&r.summary),
        ]);
    }
    table
}
