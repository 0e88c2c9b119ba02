use fbl_relay::channel::{FrameCsi, LinkIndex, LinkModel, RelayLinks};
use fbl_relay::fbl::FblParams;
use fbl_relay::quadrature::QuadratureSpec;
use fbl_relay::scheduler_constant::{
    average_throughput, optimize_constant, AverageMethod, ConstantSearchSpec, ConstantWeights,
};
use fbl_relay::scheduler_optimal::{optimize_frame, OptimizerSpec};
use fbl_relay::sim::{compare, Policy, SimOptions};
use fbl_relay::throughput::{ergodic_capacity_reference, schedule_rate, throughput_at_rate};
use proptest::prelude::*;

fn links(a1: f64, r1: f64, a2: f64, r2: f64) -> RelayLinks {
    RelayLinks::new(
        LinkModel::from_rho_sq(a1, r1, LinkIndex::Backhaul).unwrap(),
        LinkModel::from_rho_sq(a2, r2, LinkIndex::Relaying).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn optimal_frame_dominates_any_feasible_weights(
        g1 in 1.0f64..300.0,
        g2 in 1.0f64..300.0,
        e1 in 0.05f64..1.0,
        e2 in 0.05f64..1.0,
    ) {
        let l = links(50.0, 0.8, 30.0, 0.6);
        let p = FblParams::new(300, 1e-2).unwrap();
        let q = QuadratureSpec::default();
        let csi = FrameCsi::new(g1, g2).unwrap();
        let opt = optimize_frame(&csi, &l, &p, &OptimizerSpec::default(), &q).unwrap();
        prop_assert!(opt.feasible);
        let d = schedule_rate(&csi, e1 * 0.8, e2 * 0.6, &l, &p).unwrap();
        let t = throughput_at_rate(&csi, d.rate, &l, 300, &q).unwrap();
        if t.eps_bar_1 <= 1e-2 && t.eps_bar_2 <= 1e-2 {
            prop_assert!(opt.mu >= t.mu * (1.0 - 1e-6), "optimal {} < weights {}", opt.mu, t.mu);
        }
    }
}

#[test]
fn averaged_quadrature_matches_simulated_predictions() {
    let l = links(40.0, 0.7, 25.0, 0.5);
    let p = FblParams::new(300, 1e-2).unwrap();
    let q = QuadratureSpec::default();
    let w = ConstantWeights::new(0.3, 0.2, &l).unwrap();
    let avg = average_throughput(&w, &l, &p, &AverageMethod::default(), &q).unwrap();
    let cmp = compare(
        &Policy::Constant(w),
        &Policy::Constant(w),
        &l,
        &p,
        20_000,
        4,
        &SimOptions::default(),
    )
    .unwrap();
    let r = cmp.first;
    assert_eq!(cmp.analytic_gap, 0.0);
    assert!(
        (r.analytic_throughput - avg.mu_avg).abs() <= 4.0 * r.analytic_std_err + avg.err_estimate
    );
    assert!(r.consistency_z() <= 4.0);
}

#[test]
fn policies_rank_below_shannon_reference() {
    let l = links(177.0, 0.7, 177.0, 0.5);
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
    assert!(opt.average.feasible(1e-2));
    let cmp = compare(
        &Policy::Optimal(OptimizerSpec::default()),
        &Policy::Constant(opt.weights),
        &l,
        &p,
        20_000,
        11,
        &SimOptions::default(),
    )
    .unwrap();
    assert!(cmp.analytic_gap > -3.0 * cmp.analytic_gap_std_err);
    let reference = ergodic_capacity_reference(&l).unwrap();
    assert!(cmp.first.analytic_throughput < reference);
    assert!(opt.average.mu_avg < reference);
}
