use action_lab::dynamics::{
    gradient_flow_reference, simulate, AgentConfig, AgentState, DissipationSchedule,
};
use action_lab::energy::{kinetic, perfect_learning_probe};
use action_lab::potentials::PotentialModel;
use action_lab::signals::{EnvironmentSignal, Sinusoid, SinusoidBank};
use nalgebra::{dvector, DVector};
use proptest::prelude::*;

fn tracking(
    dissipation: DissipationSchedule,
    signal: EnvironmentSignal,
    w0: DVector<f64>,
) -> AgentConfig {
    let d = w0.len();
    AgentConfig::at_rest(dissipation, PotentialModel::identity_tracking(d).unwrap(), signal, w0)
        .unwrap()
}

#[test]
fn kinetic_energy_examples() {
    assert_eq!(kinetic(&dvector![1.0, 2.0], &dvector![1.0, 1.0]), 2.5);
    assert_eq!(kinetic(&dvector![3.0], &dvector![2.0]), 9.0);
    assert_eq!(kinetic(&dvector![0.0, 0.0], &dvector![5.0, 7.0]), 0.0);
}

#[test]
fn harmonic_internal_energy_is_conserved() {
    let cfg = tracking(
        DissipationSchedule::Constant,
        EnvironmentSignal::constant(vec![0.0]).unwrap(),
        dvector![1.0],
    );
    let traj = simulate(&cfg, 10.0, 1e-3, 100).unwrap();
    for s in &traj.samples {
        assert!((s.internal - 0.5).abs() < 1e-8, "U({}) = {}", s.t, s.internal);
        assert_eq!(s.dissipated, 0.0);
    }
}

#[test]
fn damped_oscillator_loses_its_energy() {
    let cfg = tracking(
        DissipationSchedule::exponential(2.0).unwrap(),
        EnvironmentSignal::constant(vec![0.0]).unwrap(),
        dvector![1.0],
    );
    let traj = simulate(&cfg, 10.0, 1e-3, 100).unwrap();
    let end = traj.last();
    assert!(end.internal <= 1e-6);
    assert!((end.dissipated - 0.5).abs() < 1e-6);
}

#[test]
fn probe_on_a_sine_environment() {
    // V = ½(sin 2πt − w̄)² with w̄ = 0: V(T) − V(0) = ½ sin²(2πT)
    let cfg = tracking(
        DissipationSchedule::Constant,
        EnvironmentSignal::sinusoids(SinusoidBank::unit_sine()),
        dvector![0.0],
    );
    let quarter = perfect_learning_probe(&cfg, &dvector![0.0], 0.25, 1e-4).unwrap();
    assert!((quarter.environmental - 0.5).abs() < 1e-10);
    let full = perfect_learning_probe(&cfg, &dvector![0.0], 1.0, 1e-4).unwrap();
    assert!(full.environmental.abs() < 1e-10);
    assert!(full.max_rate > 1.0);
}

#[test]
fn second_order_approaches_gradient_flow_as_damping_grows() {
    let gaps: Vec<f64> = [10.0, 20.0, 40.0, 80.0]
        .iter()
        .map(|&theta| {
            let cfg = tracking(
                DissipationSchedule::exponential(theta).unwrap(),
                EnvironmentSignal::constant(vec![0.5, -1.0]).unwrap(),
                dvector![2.0, 1.0],
            );
            let second = simulate(&cfg, 20.0, 1e-3, 10).unwrap();
            let first = gradient_flow_reference(&cfg, 20.0, 1e-3, 10).unwrap();
            second
                .samples
                .iter()
                .zip(&first.samples)
                .filter(|(a, _)| a.t >= 1.0)
                .map(|(a, b)| {
                    assert_eq!(a.t, b.t);
                    (&a.w - &b.w).norm()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    for pair in gaps.windows(2) {
        assert!(pair[1] < pair[0], "gaps {gaps:?}");
    }
}

#[test]
fn constant_schedule_never_dissipates() {
    let cfg = tracking(
        DissipationSchedule::Constant,
        EnvironmentSignal::sinusoids(SinusoidBank::unit_sine()),
        dvector![0.3],
    );
    let traj = simulate(&cfg, 5.0, 1e-3, 50).unwrap();
    assert!(traj.samples.iter().all(|s| s.dissipated == 0.0));
    assert_eq!(traj.ledger.dissipated, 0.0);
}

#[test]
fn identical_configs_give_identical_records() {
    let cfg = tracking(
        DissipationSchedule::power(1.0, 2.0).unwrap(),
        EnvironmentSignal::sinusoids(SinusoidBank::unit_sine()),
        dvector![0.7],
    );
    let a = simulate(&cfg, 4.0, 1e-3, 7).unwrap();
    let b = simulate(&cfg, 4.0, 1e-3, 7).unwrap();
    assert_eq!(a, b);
}

#[test]
fn chain_rule_cross_check_holds() {
    let bank = SinusoidBank::new(
        vec![0.2, -0.1],
        vec![
            vec![Sinusoid::new(1.0, 0.5, 0.0)],
            vec![Sinusoid::new(0.5, 0.25, 1.0)],
        ],
    )
    .unwrap();
    let cfg = tracking(
        DissipationSchedule::exponential(1.0).unwrap(),
        EnvironmentSignal::sinusoids(bank),
        dvector![0.0, 0.0],
    );
    let ledger = simulate(&cfg, 20.0, 1e-3, 100).unwrap().ledger;
    let tol = 1e-6 * (1.0 + ledger.environmental.abs());
    assert!(ledger.chain_rule_gap().abs() <= tol, "gap {}", ledger.chain_rule_gap());
}

#[test]
fn initial_state_must_match_dimensions() {
    assert!(AgentState::new(0.0, dvector![1.0, 2.0], dvector![0.0]).is_err());
}

fn schedule() -> impl Strategy<Value = DissipationSchedule> {
    prop_oneof![
        (0.0f64..5.0).prop_map(|theta| DissipationSchedule::exponential(theta).unwrap()),
        (0.1f64..5.0, 0.0f64..4.0).prop_map(|(a, k)| DissipationSchedule::power(a, k).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dissipated_energy_never_decreases(
        dissipation in schedule(),
        amplitude in 0.1f64..3.0,
        frequency in 0.1f64..2.0,
        w0 in -2.0f64..2.0,
    ) {
        let bank = SinusoidBank::new(vec![0.0], vec![vec![Sinusoid::new(amplitude, frequency, 0.0)]]).unwrap();
        let cfg = tracking(dissipation, EnvironmentSignal::sinusoids(bank), dvector![w0]);
        let traj = simulate(&cfg, 5.0, 1e-2, 1).unwrap();
        prop_assert!(traj.samples[0].dissipated == 0.0);
        for pair in traj.samples.windows(2) {
            prop_assert!(pair[1].dissipated >= pair[0].dissipated);
        }
    }

    #[test]
    fn balance_residual_stays_small(
        dissipation in schedule(),
        amplitude in 0.1f64..3.0,
        w0 in -2.0f64..2.0,
    ) {
        let bank = SinusoidBank::new(vec![0.0], vec![vec![Sinusoid::new(amplitude, 0.5, 0.3)]]).unwrap();
        let cfg = tracking(dissipation, EnvironmentSignal::sinusoids(bank), dvector![w0]);
        let ledger = simulate(&cfg, 5.0, 1e-3, 100).unwrap().ledger;
        let tol = 1e-6 * (1.0 + ledger.environmental.abs() + ledger.delta_internal().abs());
        prop_assert!(ledger.balance_residual().abs() <= tol);
        prop_assert!(ledger.check_corollary().pass);
    }
}
