//! Energy bookkeeping along a trajectory.
//!
//! The ledger tracks the internal energy `U = V + K`, the dissipated energy
//! `Z = ∫(ψ̇/ψ)‖ẇ‖² dt` and the environmental energy `E = ∫V_x·ẋ dt`. Along exact
//! solutions `Z + ΔU − E = 0`.

use nalgebra::DVector;

use crate::dynamics::{AgentConfig, AgentState};
use crate::error::{Error, Result};
use crate::potentials::Potential;

/// Quadrature increments of the ledger integrands over one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepIntegrals {
    pub dissipated: f64,
    pub environmental: f64,
    /// `∫V_w·ẇ dt`, used for the chain-rule cross-check.
    pub work: f64,
    /// `∫|V_x·ẋ| dt`.
    pub environmental_abs: f64,
}

/// Running totals, summed with Neumaier compensation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    pub initial_potential: f64,
    pub initial_kinetic: f64,
    pub potential: f64,
    pub kinetic: f64,
    pub dissipated: f64,
    pub environmental: f64,
    pub work: f64,
    pub environmental_abs: f64,
    z: Compensated,
    e: Compensated,
    wk: Compensated,
    e_abs: Compensated,
    /// `(t, Z + ΔU − E)` at every recorded sample.
    pub residual_history: Vec<(f64, f64)>,
}

impl EnergyLedger {
    pub fn new(potential: f64, kinetic: f64) -> Self {
        Self {
            initial_potential: potential,
            initial_kinetic: kinetic,
            potential,
            kinetic,
            dissipated: 0.0,
            environmental: 0.0,
            work: 0.0,
            environmental_abs: 0.0,
            z: Compensated::default(),
            e: Compensated::default(),
            wk: Compensated::default(),
            e_abs: Compensated::default(),
            residual_history: vec![(0.0, 0.0)],
        }
    }

    pub fn internal(&self) -> f64 {
        self.potential + self.kinetic
    }

    pub fn initial_internal(&self) -> f64 {
        self.initial_potential + self.initial_kinetic
    }

    pub fn delta_internal(&self) -> f64 {
        (self.potential - self.initial_potential) + (self.kinetic - self.initial_kinetic)
    }

    /// Adds one step's integrals and replaces the current `V` and `K`.
    pub fn add(&mut self, step: &StepIntegrals, potential: f64, kinetic: f64) {
        self.z.add(step.dissipated);
        self.e.add(step.environmental);
        self.wk.add(step.work);
        self.e_abs.add(step.environmental_abs);
        self.dissipated = self.z.value();
        self.environmental = self.e.value();
        self.work = self.wk.value();
        self.environmental_abs = self.e_abs.value();
        self.potential = potential;
        self.kinetic = kinetic;
    }

    /// Adds one step's integrals and evaluates `V`, `K` at the new state.
    pub fn accumulate(
        &mut self,
        step: &StepIntegrals,
        next: &AgentState,
        config: &AgentConfig,
    ) -> Result<()> {
        let (v, k) = config.energies(next)?;
        if !v.is_finite() || !k.is_finite() {
            return Err(Error::Divergence {
                step: 0,
                t: next.t,
                reason: "non-finite energy".into(),
            });
        }
        self.add(step, v, k);
        Ok(())
    }

    /// `Z + ΔU − E`.
    pub fn balance_residual(&self) -> f64 {
        self.dissipated + self.delta_internal() - self.environmental
    }

    pub fn record_residual(&mut self, t: f64) {
        let r = self.balance_residual();
        self.residual_history.push((t, r));
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.residual_history
            .iter()
            .map(|&(_, r)| r.abs())
            .fold(self.balance_residual().abs(), f64::max)
    }

    /// `ΔU ≤ E` up to `1e-6 (1 + |E|)`; holds whenever `ψ̇/ψ ≥ 0`.
    pub fn check_corollary(&self) -> CorollaryCheck {
        let delta_u = self.delta_internal();
        let slack = 1e-6 * (1.0 + self.environmental.abs());
        CorollaryCheck {
            delta_internal: delta_u,
            environmental: self.environmental,
            slack,
            pass: delta_u <= self.environmental + slack,
        }
    }

    /// `E − (ΔV − W)`: the environmental integral against the chain rule
    /// `dV/dt = V_w·ẇ + V_x·ẋ`.
    pub fn chain_rule_gap(&self) -> f64 {
        let delta_v = self.potential - self.initial_potential;
        self.environmental - (delta_v - self.work)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorollaryCheck {
    pub delta_internal: f64,
    pub environmental: f64,
    pub slack: f64,
    pub pass: bool,
}

/// `K = ½ Σ m_i ẇ_i²`.
pub fn kinetic(wdot: &DVector<f64>, masses: &DVector<f64>) -> f64 {
    0.5 * wdot
        .iter()
        .zip(masses.iter())
        .map(|(v, m)| m * v * v)
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfectLearningProbe {
    /// `max_t |d/dt V(x(t), w̄)|` on the step grid.
    pub max_rate: f64,
    /// `∫₀ᵀ V_x(x(t), w̄)·ẋ(t) dt` by composite Simpson.
    pub environmental: f64,
}

/// Energy pumped in by the environment while the weights are frozen at `w̄`.
///
/// If `V(x(t), w̄)` is constant in time (perfect learning), both numbers vanish.
pub fn perfect_learning_probe(
    config: &AgentConfig,
    w_bar: &DVector<f64>,
    t_end: f64,
    h: f64,
) -> Result<PerfectLearningProbe> {
    if !(h > 0.0) || !(t_end > 0.0) {
        return Err(Error::Parameter("probe needs h > 0 and t_end > 0".into()));
    }
    let rate = |t: f64| -> Result<f64> {
        let (x, xdot) = config.signal.sample(t)?;
        Ok(config.potential.grad_x(&x, w_bar)?.dot(&xdot))
    };
    let n = (t_end / h).ceil().max(1.0) as usize;
    let step = t_end / n as f64;
    let mut total = Compensated::default();
    let mut left = rate(0.0)?;
    let mut max_rate = left.abs();
    for k in 0..n {
        let a = k as f64 * step;
        let mid = rate(a + 0.5 * step)?;
        let right = rate(a + step)?;
        total.add(step / 6.0 * (left + 4.0 * mid + right));
        max_rate = max_rate.max(mid.abs()).max(right.abs());
        left = right;
    }
    Ok(PerfectLearningProbe {
        max_rate,
        environmental: total.value(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, DissipationSchedule};
    use crate::potentials::{FeatureMap, PotentialModel, Target};
    use crate::signals::{EnvironmentSignal, SinusoidBank};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn oscillator(schedule: DissipationSchedule, w0: f64) -> AgentConfig {
        AgentConfig::at_rest(
            schedule,
            PotentialModel::identity_tracking(1).unwrap(),
            EnvironmentSignal::constant(vec![0.0]).unwrap(),
            dv(&[w0]),
        )
        .unwrap()
    }

    #[test]
    fn kinetic_energy_by_hand() {
        assert_eq!(kinetic(&dv(&[1.0, 2.0]), &dv(&[2.0, 0.5])), 2.0);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut c = Compensated::default();
        c.add(1.0);
        for _ in 0..1000 {
            c.add(1e-16);
        }
        assert!((c.value() - (1.0 + 1e-13)).abs() < 1e-18);
    }

    #[test]
    fn harmonic_energy_is_conserved() {
        let rec = simulate(&oscillator(DissipationSchedule::Constant, 1.0), 10.0, 1e-3, 100).unwrap();
        let l = &rec.ledger;
        assert_eq!(l.dissipated, 0.0);
        assert_eq!(l.environmental, 0.0);
        assert!(l.delta_internal().abs() < 1e-10);
        assert!(l.max_abs_residual() < 1e-10);
    }

    #[test]
    fn damped_oscillator_dissipates_all_energy_lost() {
        let rec = simulate(
            &oscillator(DissipationSchedule::exponential(2.0).unwrap(), 1.0),
            10.0,
            1e-3,
            100,
        )
        .unwrap();
        let l = &rec.ledger;
        assert!(l.dissipated > 0.49 && l.dissipated < 0.5);
        assert!(l.max_abs_residual() < 1e-10);
        assert!(l.check_corollary().pass);
    }

    #[test]
    fn driven_tracking_balances() {
        let config = AgentConfig::at_rest(
            DissipationSchedule::exponential(1.0).unwrap(),
            PotentialModel::identity_tracking(1).unwrap(),
            EnvironmentSignal::sinusoids(SinusoidBank::unit_sine()),
            dv(&[0.0]),
        )
        .unwrap();
        let rec = simulate(&config, 20.0, 1e-3, 1000).unwrap();
        let l = &rec.ledger;
        assert!(l.environmental.abs() > 1e-3);
        assert!(l.max_abs_residual() < 1e-10);
        assert!(l.chain_rule_gap().abs() < 1e-10);
        assert!(l.check_corollary().pass);
    }

    #[test]
    fn residual_shrinks_with_fourth_order() {
        let config = AgentConfig::at_rest(
            DissipationSchedule::power(1.0, 2.0).unwrap(),
            PotentialModel::identity_tracking(1).unwrap(),
            EnvironmentSignal::sinusoids(SinusoidBank::unit_sine()),
            dv(&[0.5]),
        )
        .unwrap();
        let coarse = simulate(&config, 4.0, 0.04, 1).unwrap().ledger.max_abs_residual();
        let fine = simulate(&config, 4.0, 0.02, 1).unwrap().ledger.max_abs_residual();
        assert!(coarse > 1e-12);
        assert!(coarse / fine > 12.0, "ratio {}", coarse / fine);
    }

    #[test]
    fn corollary_flags_energy_creation() {
        let mut l = EnergyLedger::new(0.0, 0.0);
        l.add(&StepIntegrals::default(), 1.0, 0.0);
        assert!(!l.check_corollary().pass);
    }

    #[test]
    fn probe_vanishes_for_static_environment() {
        let config = oscillator(DissipationSchedule::Constant, 0.3);
        let p = perfect_learning_probe(&config, &dv(&[0.3]), 5.0, 0.01).unwrap();
        assert_eq!(p.max_rate, 0.0);
        assert_eq!(p.environmental, 0.0);
    }

    #[test]
    fn probe_vanishes_when_target_is_realizable() {
        // y(x) = 2x₁ − x₂ is exactly represented by w̄ = (2, −1)
        let config = AgentConfig::at_rest(
            DissipationSchedule::exponential(1.0).unwrap(),
            PotentialModel::linear_regression(
                2,
                FeatureMap::Identity,
                Target::Affine {
                    weights: vec![2.0, -1.0],
                    bias: 0.0,
                },
            )
            .unwrap(),
            EnvironmentSignal::sinusoids(
                SinusoidBank::new(
                    vec![0.0, 0.0],
                    vec![
                        vec![crate::signals::Sinusoid::new(1.0, 1.0, 0.0)],
                        vec![crate::signals::Sinusoid::new(0.5, 2.0, 0.3)],
                    ],
                )
                .unwrap(),
            ),
            dv(&[0.0, 0.0]),
        )
        .unwrap();
        let p = perfect_learning_probe(&config, &dv(&[2.0, -1.0]), 3.0, 0.01).unwrap();
        assert!(p.max_rate < 1e-12);
        assert!(p.environmental.abs() < 1e-12);
        let off = perfect_learning_probe(&config, &dv(&[1.0, 0.0]), 3.0, 0.01).unwrap();
        assert!(off.max_rate > 0.1);
    }

    #[test]
    fn probe_matches_closed_form() {
        // V = ½(w − sin 2πt)², frozen at w̄ = 0: ∫V_x ẋ = ½ sin²(2πT)
        let config = AgentConfig::at_rest(
            DissipationSchedule::exponential(1.0).unwrap(),
            PotentialModel::identity_tracking(1).unwrap(),
            EnvironmentSignal::sinusoids(SinusoidBank::unit_sine()),
            dv(&[0.0]),
        )
        .unwrap();
        let t = 1.3;
        let p = perfect_learning_probe(&config, &dv(&[0.0]), t, 1e-3).unwrap();
        let exact = 0.5 * (2.0 * std::f64::consts::PI * t).sin().powi(2);
        assert!((p.environmental - exact).abs() < 1e-10);
    }
}
