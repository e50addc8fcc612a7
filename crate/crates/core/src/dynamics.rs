//! Integration of the dissipative second-order learning dynamics
//!
//! ```text
//! m_i ẅ_i + (ψ̇/ψ)(t) ẇ_i + ∂V/∂w_i (x(t), w) = 0
//! ```
//!
//! with fixed-step classical RK4. The energy integrands (dissipation,
//! environmental drive and its magnitude, and the work `∫V_w·ẇ`) are appended
//! to the state vector, so their quadrature uses the same stage evaluations and the same
//! `(1, 2, 2, 1)/6` weights as the state update.

use nalgebra::DVector;

use crate::energy::{kinetic, EnergyLedger, StepIntegrals};
use crate::error::{check_len, Error, Result};
use crate::potentials::{Potential, PotentialModel};
use crate::signals::EnvironmentSignal;

/// Weights with a norm beyond this are treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

const MAX_STEPS: u64 = 2_000_000_000;

/// Developmental function `ψ(t)`; only the ratio `ψ̇/ψ` enters the dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DissipationSchedule {
    /// `ψ ≡ 1`.
    Constant,
    /// `ψ(t) = e^{θt}`.
    Exponential { theta: f64 },
    /// `ψ(t) = (α + t)^k`.
    Power { alpha: f64, k: f64 },
}

impl DissipationSchedule {
    pub fn exponential(theta: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::Parameter(format!("theta must be >= 0, got {theta}")));
        }
        Ok(Self::Exponential { theta })
    }

    pub fn power(alpha: f64, k: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(k >= 0.0 && k.is_finite()) {
            return Err(Error::Parameter(format!(
                "power schedule needs alpha > 0 and k >= 0, got alpha = {alpha}, k = {k}"
            )));
        }
        Ok(Self::Power { alpha, k })
    }

    /// `ψ̇/ψ` evaluated in closed form.
    pub fn ratio(&self, t: f64) -> f64 {
        match *self {
            Self::Constant => 0.0,
            Self::Exponential { theta } => theta,
            Self::Power { alpha, k } => k / (alpha + t),
        }
    }

    /// `ψ(t)` itself. Overflows to infinity for large `θt`; the integrator never uses it.
    pub fn psi(&self, t: f64) -> f64 {
        match *self {
            Self::Constant => 1.0,
            Self::Exponential { theta } => (theta * t).exp(),
            Self::Power { alpha, k } => (alpha + t).powf(k),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Exponential { .. } => "exponential",
            Self::Power { .. } => "power",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub t: f64,
    pub w: DVector<f64>,
    pub wdot: DVector<f64>,
}

impl AgentState {
    pub fn new(t: f64, w: DVector<f64>, wdot: DVector<f64>) -> Result<Self> {
        check_len("initial velocities", w.len(), wdot.len())?;
        Ok(Self { t, w, wdot })
    }

    fn is_finite(&self) -> bool {
        self.w.iter().chain(self.wdot.iter()).all(|v| v.is_finite())
    }
}

/// Everything needed to integrate one agent.
#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub masses: DVector<f64>,
    pub dissipation: DissipationSchedule,
    pub potential: PotentialModel,
    pub signal: EnvironmentSignal,
    pub initial: AgentState,
}

impl AgentConfig {
    pub fn new(
        masses: DVector<f64>,
        dissipation: DissipationSchedule,
        potential: PotentialModel,
        signal: EnvironmentSignal,
        initial: AgentState,
    ) -> Result<Self> {
        let m = potential.weight_dim();
        check_len("masses", m, masses.len())?;
        check_len("initial weights", m, initial.w.len())?;
        check_len("initial velocities", m, initial.wdot.len())?;
        check_len("signal dimension", potential.input_dim(), signal.dim())?;
        if let Some(bad) = masses.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter(format!(
                "masses must be strictly positive, got {bad}"
            )));
        }
        if !initial.is_finite() || !(initial.t >= 0.0) {
            return Err(Error::Parameter("initial state must be finite with t >= 0".into()));
        }
        Ok(Self {
            masses,
            dissipation,
            potential,
            signal,
            initial,
        })
    }

    /// Unit masses, starting at rest at `t = 0`.
    pub fn at_rest(
        dissipation: DissipationSchedule,
        potential: PotentialModel,
        signal: EnvironmentSignal,
        w0: DVector<f64>,
    ) -> Result<Self> {
        let m = w0.len();
        let initial = AgentState::new(0.0, w0, DVector::zeros(m))?;
        Self::new(
            DVector::from_element(m, 1.0),
            dissipation,
            potential,
            signal,
            initial,
        )
    }

    pub fn weight_dim(&self) -> usize {
        self.masses.len()
    }

    /// `V(x(t), w)` and `K(ẇ)` for a state.
    pub fn energies(&self, state: &AgentState) -> Result<(f64, f64)> {
        let (x, _) = self.signal.sample(state.t)?;
        let v = self.potential.value(&x, &state.w)?;
        Ok((v, kinetic(&state.wdot, &self.masses)))
    }
}

/// `ẅ_i = −((ψ̇/ψ)(t) ẇ_i + V_{w_i}(x(t), w)) / m_i`.
pub fn acceleration(state: &AgentState, config: &AgentConfig) -> Result<DVector<f64>> {
    let (x, _) = config.signal.sample(state.t)?;
    let grad = config.potential.grad_w(&x, &state.w)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            step: 0,
            t: state.t,
            reason: "non-finite potential gradient".into(),
        });
    }
    let ratio = config.dissipation.ratio(state.t);
    Ok(DVector::from_fn(state.w.len(), |i, _| {
        -(ratio * state.wdot[i] + grad[i]) / config.masses[i]
    }))
}

/// Fixed-step RK4 for `y' = f(t, y)` with reusable stage buffers.
struct Rk4 {
    k: [Vec<f64>; 4],
    scratch: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            scratch: vec![0.0; n],
        }
    }

    fn step<F>(&mut self, t: f64, h: f64, y: &mut [f64], mut f: F) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = y.len();
        let [k1, k2, k3, k4] = &mut self.k;
        f(t, y, k1)?;
        for i in 0..n {
            self.scratch[i] = y[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, &self.scratch, k2)?;
        for i in 0..n {
            self.scratch[i] = y[i] + 0.5 * h * k2[i];
        }
        f(t + 0.5 * h, &self.scratch, k3)?;
        for i in 0..n {
            self.scratch[i] = y[i] + h * k3[i];
        }
        f(t + h, &self.scratch, k4)?;
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

/// Right-hand side of the augmented second-order system
/// `(w, ẇ, Z, E, W, ∫|V_x·ẋ|)` for a given config.
struct SecondOrderField<'a> {
    config: &'a AgentConfig,
    x: DVector<f64>,
    xdot: DVector<f64>,
    w: DVector<f64>,
}

impl<'a> SecondOrderField<'a> {
    fn new(config: &'a AgentConfig) -> Self {
        let d = config.signal.dim();
        Self {
            config,
            x: DVector::zeros(d),
            xdot: DVector::zeros(d),
            w: DVector::zeros(config.weight_dim()),
        }
    }

    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let m = self.config.weight_dim();
        self.config
            .signal
            .sample_into(t, self.x.as_mut_slice(), self.xdot.as_mut_slice())?;
        self.w.as_mut_slice().copy_from_slice(&y[..m]);
        let (gw, gx) = self.config.potential.gradients(&self.x, &self.w)?;
        let ratio = self.config.dissipation.ratio(t);
        let v = &y[m..2 * m];
        let (mut speed2, mut work) = (0.0, 0.0);
        for i in 0..m {
            dy[i] = v[i];
            dy[m + i] = -(ratio * v[i] + gw[i]) / self.config.masses[i];
            speed2 += v[i] * v[i];
            work += gw[i] * v[i];
        }
        let drive = gx.dot(&self.xdot);
        dy[2 * m] = ratio * speed2;
        dy[2 * m + 1] = drive;
        dy[2 * m + 2] = work;
        dy[2 * m + 3] = drive.abs();
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: 0,
                t,
                reason: "non-finite derivative".into(),
            });
        }
        Ok(())
    }
}

const LEDGER_SLOTS: usize = 4;

fn integrals(tail: &[f64]) -> StepIntegrals {
    StepIntegrals {
        dissipated: tail[0],
        environmental: tail[1],
        work: tail[2],
        environmental_abs: tail[3],
    }
}

fn pack(state: &AgentState) -> Vec<f64> {
    let mut y = Vec::with_capacity(2 * state.w.len() + LEDGER_SLOTS);
    y.extend(state.w.iter());
    y.extend(state.wdot.iter());
    y.extend([0.0; LEDGER_SLOTS]);
    y
}

fn check_divergence(w: &[f64], wdot: &[f64], step: u64, t: f64) -> Result<()> {
    if w.iter().chain(wdot).any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step,
            t,
            reason: "non-finite state".into(),
        });
    }
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > DIVERGENCE_NORM {
        return Err(Error::Divergence {
            step,
            t,
            reason: format!("|w| = {norm:e} exceeds {DIVERGENCE_NORM:e}"),
        });
    }
    Ok(())
}

/// One RK4 step of size `h`, also returning the quadrature increments of the ledger integrands.
pub fn step_rk4_tracked(
    state: &AgentState,
    config: &AgentConfig,
    h: f64,
) -> Result<(AgentState, StepIntegrals)> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step size must be positive, got {h}")));
    }
    let m = config.weight_dim();
    check_len("state weights", m, state.w.len())?;
    let mut y = pack(state);
    let mut field = SecondOrderField::new(config);
    Rk4::new(y.len()).step(state.t, h, &mut y, |t, y, dy| field.eval(t, y, dy))?;
    let t = state.t + h;
    check_divergence(&y[..m], &y[m..2 * m], 1, t)?;
    Ok((
        AgentState {
            t,
            w: DVector::from_column_slice(&y[..m]),
            wdot: DVector::from_column_slice(&y[m..2 * m]),
        },
        integrals(&y[2 * m..]),
    ))
}

/// One classical RK4 step of the first-order reduction `(w, ẇ)`.
pub fn step_rk4(state: &AgentState, config: &AgentConfig, h: f64) -> Result<AgentState> {
    step_rk4_tracked(state, config, h).map(|(s, _)| s)
}

/// One stored sample of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub w: DVector<f64>,
    pub wdot: DVector<f64>,
    pub potential: f64,
    pub kinetic: f64,
    pub internal: f64,
    pub dissipated: f64,
    pub environmental: f64,
    /// `∫|V_x·ẋ| dt`.
    pub environmental_abs: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub samples: Vec<TrajectorySample>,
    pub h: f64,
    pub method: &'static str,
    pub sample_stride: usize,
    /// Ledger at the final step, whether or not that step was sampled.
    pub ledger: EnergyLedger,
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &TrajectorySample {
        self.samples.last().expect("trajectories hold at least the initial sample")
    }

    /// Weight dimension.
    pub fn weight_dim(&self) -> usize {
        self.samples[0].w.len()
    }
}

fn step_count(t_end: f64, h: f64) -> Result<u64> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step size must be positive, got {h}")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Parameter(format!("horizon must be positive, got {t_end}")));
    }
    let n = (t_end / h).round();
    if (n * h - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::Parameter(format!(
            "horizon {t_end} is not a whole number of steps of size {h}"
        )));
    }
    if n < 1.0 || n > MAX_STEPS as f64 {
        return Err(Error::Parameter(format!("{n} steps is outside the step budget")));
    }
    Ok(n as u64)
}

fn tag_step(err: Error, step: u64) -> Error {
    match err {
        Error::Divergence { t, reason, .. } => Error::Divergence { step, t, reason },
        other => other,
    }
}

/// Fixed-step RK4 trajectory over `[t₀, t₀ + t_end]` with the energy ledger
/// accumulated at every step and the state stored every `sample_stride` steps.
pub fn simulate(
    config: &AgentConfig,
    t_end: f64,
    h: f64,
    sample_stride: usize,
) -> Result<TrajectoryRecord> {
    let steps = step_count(t_end, h)?;
    if sample_stride == 0 {
        return Err(Error::Parameter("sample_stride must be at least 1".into()));
    }
    let m = config.weight_dim();
    let t0 = config.initial.t;
    let (v0, k0) = config.energies(&config.initial)?;
    let mut ledger = EnergyLedger::new(v0, k0);
    let mut samples = Vec::with_capacity((steps as usize) / sample_stride + 2);
    samples.push(sample_from(&config.initial, &ledger));

    let mut field = SecondOrderField::new(config);
    let mut rk = Rk4::new(2 * m + LEDGER_SLOTS);
    let mut y = pack(&config.initial);
    let mut state = config.initial.clone();
    for step in 1..=steps {
        let t_prev = t0 + (step - 1) as f64 * h;
        y[2 * m..].fill(0.0);
        rk.step(t_prev, h, &mut y, |t, y, dy| field.eval(t, y, dy))
            .map_err(|e| tag_step(e, step))?;
        let t = t0 + step as f64 * h;
        check_divergence(&y[..m], &y[m..2 * m], step, t)?;
        state.t = t;
        state.w.as_mut_slice().copy_from_slice(&y[..m]);
        state.wdot.as_mut_slice().copy_from_slice(&y[m..2 * m]);
        let increments = integrals(&y[2 * m..]);
        ledger
            .accumulate(&increments, &state, config)
            .map_err(|e| tag_step(e, step))?;
        if step as usize % sample_stride == 0 {
            ledger.record_residual(t);
            samples.push(sample_from(&state, &ledger));
        }
    }
    Ok(TrajectoryRecord {
        samples,
        h,
        method: "rk4",
        sample_stride,
        ledger,
    })
}

fn sample_from(state: &AgentState, ledger: &EnergyLedger) -> TrajectorySample {
    TrajectorySample {
        t: state.t,
        w: state.w.clone(),
        wdot: state.wdot.clone(),
        potential: ledger.potential,
        kinetic: ledger.kinetic,
        internal: ledger.internal(),
        dissipated: ledger.dissipated,
        environmental: ledger.environmental,
        environmental_abs: ledger.environmental_abs,
        residual: ledger.balance_residual(),
    }
}

/// First-order comparison flow `ẇ = −V_w / θ`, the large-damping limit of the
/// second-order dynamics under `ψ = e^{θt}`.
///
/// The record's ledger treats the flow as massless: `K = 0`, `U = V`, and the
/// dissipation integrand is `θ‖ẇ‖²`, so `Z + ΔU − E = 0` still holds.
pub fn gradient_flow_reference(
    config: &AgentConfig,
    t_end: f64,
    h: f64,
    sample_stride: usize,
) -> Result<TrajectoryRecord> {
    let theta = match config.dissipation {
        DissipationSchedule::Exponential { theta } if theta > 0.0 => theta,
        other => {
            return Err(Error::Parameter(format!(
                "gradient flow reference needs exponential dissipation with theta > 0, got {other:?}"
            )))
        }
    };
    let steps = step_count(t_end, h)?;
    if sample_stride == 0 {
        return Err(Error::Parameter("sample_stride must be at least 1".into()));
    }
    let m = config.weight_dim();
    let d = config.signal.dim();
    let t0 = config.initial.t;

    let mut x = DVector::zeros(d);
    let mut xdot = DVector::zeros(d);
    let mut wbuf = DVector::zeros(m);
    let mut field = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        config
            .signal
            .sample_into(t, x.as_mut_slice(), xdot.as_mut_slice())?;
        wbuf.as_mut_slice().copy_from_slice(&y[..m]);
        let (gw, gx) = config.potential.gradients(&x, &wbuf)?;
        let mut speed2 = 0.0;
        for i in 0..m {
            dy[i] = -gw[i] / theta;
            speed2 += dy[i] * dy[i];
        }
        let drive = gx.dot(&xdot);
        dy[m] = theta * speed2;
        dy[m + 1] = drive;
        dy[m + 2] = -gw.norm_squared() / theta;
        dy[m + 3] = drive.abs();
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: 0,
                t,
                reason: "non-finite derivative".into(),
            });
        }
        Ok(())
    };

    let velocity = |state_w: &DVector<f64>, t: f64| -> Result<DVector<f64>> {
        let (x, _) = config.signal.sample(t)?;
        Ok(-config.potential.grad_w(&x, state_w)? / theta)
    };

    let mut state = AgentState {
        t: t0,
        w: config.initial.w.clone(),
        wdot: velocity(&config.initial.w, t0)?,
    };
    let (v0, _) = config.energies(&state)?;
    let mut ledger = EnergyLedger::new(v0, 0.0);
    let mut samples = vec![sample_from(&state, &ledger)];
    let mut rk = Rk4::new(m + LEDGER_SLOTS);
    let mut y: Vec<f64> = state.w.iter().copied().chain([0.0; LEDGER_SLOTS]).collect();
    for step in 1..=steps {
        let t_prev = t0 + (step - 1) as f64 * h;
        y[m..].fill(0.0);
        rk.step(t_prev, h, &mut y, &mut field)
            .map_err(|e| tag_step(e, step))?;
        let t = t0 + step as f64 * h;
        check_divergence(&y[..m], &[], step, t)?;
        state.t = t;
        state.w.as_mut_slice().copy_from_slice(&y[..m]);
        let increments = integrals(&y[m..]);
        let (xs, _) = config.signal.sample(t)?;
        let v = config.potential.value(&xs, &state.w)?;
        ledger.add(&increments, v, 0.0);
        if step as usize % sample_stride == 0 {
            state.wdot = velocity(&state.w, t)?;
            ledger.record_residual(t);
            samples.push(sample_from(&state, &ledger));
        }
    }
    Ok(TrajectoryRecord {
        samples,
        h,
        method: "rk4-gradient-flow",
        sample_stride,
        ledger,
    })
}
