use action_lab::dynamics::{simulate, AgentConfig, DissipationSchedule, TrajectoryRecord};
use action_lab::potentials::PotentialModel;
use action_lab::signals::{make_quasi_periodic, EnvironmentSignal, PeriodicBase, SinusoidBank};
use action_lab::verify::{
    convergence_check, environmental_energy_boundedness, pseudo_period_deviation, Verdict,
};
use nalgebra::DVector;

fn run(base: PeriodicBase, order: f64, t_end: f64) -> (EnvironmentSignal, TrajectoryRecord) {
    let signal = make_quasi_periodic(base, 1.0, 2.0, 1.0, order).unwrap();
    let d = signal.dim();
    let agent = AgentConfig::at_rest(
        DissipationSchedule::exponential(3.0).unwrap(),
        PotentialModel::identity_tracking(d).unwrap(),
        signal.clone(),
        DVector::zeros(d),
    )
    .unwrap();
    (signal, simulate(&agent, t_end, 0.01, 10).unwrap())
}

#[test]
fn deviation_exponent_falls_with_environment_order() {
    let exponents: Vec<f64> = [1.0, 2.0, 3.0]
        .iter()
        .map(|&p| {
            let (signal, traj) = run(PeriodicBase::Constant(vec![1.0, -0.5]), p, 300.0);
            pseudo_period_deviation(&traj, signal.quasi_period().unwrap())
                .unwrap()
                .quantity("fitted_exponent")
                .unwrap()
        })
        .collect();
    assert!(exponents[0] > exponents[1] && exponents[1] > exponents[2], "{exponents:?}");
}

#[test]
fn reports_are_reproducible() {
    let (signal, a) = run(PeriodicBase::Constant(vec![0.5]), 2.0, 200.0);
    let (_, b) = run(PeriodicBase::Constant(vec![0.5]), 2.0, 200.0);
    let spec = signal.quasi_period().unwrap();
    assert_eq!(
        pseudo_period_deviation(&a, spec).unwrap(),
        pseudo_period_deviation(&b, spec).unwrap()
    );
    assert_eq!(
        environmental_energy_boundedness(&a, spec, None).unwrap(),
        environmental_energy_boundedness(&b, spec, None).unwrap()
    );
}

/// A periodic environment keeps feeding energy in and keeps the weights
/// moving, so neither the plateau nor the convergence test can pass even
/// though the deviation over one period still decays.
#[test]
fn sinusoid_base_neither_plateaus_nor_converges() {
    let (signal, traj) = run(PeriodicBase::Bank(SinusoidBank::unit_sine()), 2.0, 400.0);
    let spec = signal.quasi_period().unwrap();
    let dev = pseudo_period_deviation(&traj, spec).unwrap();
    assert_eq!(dev.verdict, Verdict::Pass);
    let plateau = environmental_energy_boundedness(&traj, spec, Some(100.0)).unwrap();
    assert_eq!(plateau.verdict, Verdict::Fail);
    let conv = convergence_check(&traj, 0.1).unwrap();
    assert_eq!(conv.verdict, Verdict::Fail);
}
