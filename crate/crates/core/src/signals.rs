//! Environment input trajectories `x(t)` and quasi-periodicity checks.
//!
//! A signal is immutable once built and every evaluation is a pure function
//! of `t`, so signals can be shared freely between worker threads.

use std::f64::consts::TAU;
use std::io::Read;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fit::fit_power_law;
use crate::interp::CubicSpline;

/// `amplitude · sin(2π · frequency · t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl Sinusoid {
    pub fn new(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Self {
            amplitude,
            frequency,
            phase,
        }
    }

    fn eval(&self, t: f64) -> (f64, f64) {
        let w = TAU * self.frequency;
        let arg = w * t + self.phase;
        (self.amplitude * arg.sin(), self.amplitude * w * arg.cos())
    }
}

/// Per-coordinate sums of sinusoids around a constant offset.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidBank {
    pub offset: Vec<f64>,
    pub terms: Vec<Vec<Sinusoid>>,
}

impl SinusoidBank {
    pub fn new(offset: Vec<f64>, terms: Vec<Vec<Sinusoid>>) -> Result<Self> {
        if offset.is_empty() {
            return Err(Error::Parameter("signal dimension must be positive".into()));
        }
        if terms.len() != offset.len() {
            return Err(Error::Shape {
                what: "sinusoid bank coordinates",
                expected: offset.len(),
                got: terms.len(),
            });
        }
        Ok(Self { offset, terms })
    }

    /// `x(t) = sin(2πt)` in one dimension.
    pub fn unit_sine() -> Self {
        Self {
            offset: vec![0.0],
            terms: vec![vec![Sinusoid::new(1.0, 1.0, 0.0)]],
        }
    }

    fn is_periodic_with(&self, period: f64) -> bool {
        self.terms.iter().flatten().all(|s| {
            let cycles = s.frequency * period;
            s.amplitude == 0.0 || (cycles - cycles.round()).abs() <= 1e-9
        })
    }
}

/// Exactly periodic building block of a signal.
#[derive(Debug, Clone, PartialEq)]
pub enum PeriodicBase {
    Constant(Vec<f64>),
    Bank(SinusoidBank),
}

impl PeriodicBase {
    pub fn dim(&self) -> usize {
        match self {
            PeriodicBase::Constant(v) => v.len(),
            PeriodicBase::Bank(b) => b.offset.len(),
        }
    }

    fn eval_into(&self, t: f64, x: &mut [f64], xdot: &mut [f64]) {
        match self {
            PeriodicBase::Constant(v) => {
                x.copy_from_slice(v);
                xdot.fill(0.0);
            }
            PeriodicBase::Bank(bank) => {
                for (k, terms) in bank.terms.iter().enumerate() {
                    let (mut v, mut d) = (bank.offset[k], 0.0);
                    for s in terms {
                        let (sv, sd) = s.eval(t);
                        v += sv;
                        d += sd;
                    }
                    x[k] = v;
                    xdot[k] = d;
                }
            }
        }
    }

    fn is_periodic_with(&self, period: f64) -> bool {
        match self {
            PeriodicBase::Constant(_) => true,
            PeriodicBase::Bank(b) => b.is_periodic_with(period),
        }
    }
}

/// Additive term `amplitude / (alpha + t)^power · direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decay {
    pub amplitude: f64,
    pub alpha: f64,
    pub power: f64,
    pub direction: Vec<f64>,
}

impl Decay {
    fn scalar(&self, t: f64) -> (f64, f64) {
        let base = self.alpha + t;
        let v = self.amplitude * base.powf(-self.power);
        (v, -self.power * v / base)
    }
}

/// Closed-form descriptor of a signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Constant,
    SinusoidBank,
    PeriodicPlusDecay,
    Tabulated,
}

#[derive(Debug, Clone)]
enum Sampler {
    Periodic(PeriodicBase),
    PeriodicPlusDecay(PeriodicBase, Decay),
    Tabulated(Vec<CubicSpline>),
}

/// The environment input `x(t) ∈ R^d` together with its derivative.
#[derive(Debug, Clone)]
pub struct EnvironmentSignal {
    dim: usize,
    sampler: Sampler,
    quasi: Option<QuasiPeriodSpec>,
}

impl EnvironmentSignal {
    pub fn constant(value: Vec<f64>) -> Result<Self> {
        if value.is_empty() {
            return Err(Error::Parameter("signal dimension must be positive".into()));
        }
        Ok(Self {
            dim: value.len(),
            sampler: Sampler::Periodic(PeriodicBase::Constant(value)),
            quasi: None,
        })
    }

    pub fn sinusoids(bank: SinusoidBank) -> Self {
        Self {
            dim: bank.offset.len(),
            sampler: Sampler::Periodic(PeriodicBase::Bank(bank)),
            quasi: None,
        }
    }

    pub fn periodic_plus_decay(base: PeriodicBase, decay: Decay) -> Result<Self> {
        let dim = base.dim();
        if dim == 0 {
            return Err(Error::Parameter("signal dimension must be positive".into()));
        }
        if decay.direction.len() != dim {
            return Err(Error::Shape {
                what: "decay direction",
                expected: dim,
                got: decay.direction.len(),
            });
        }
        if !(decay.alpha > 0.0) {
            return Err(Error::Parameter("decay alpha must be positive".into()));
        }
        Ok(Self {
            dim,
            sampler: Sampler::PeriodicPlusDecay(base, decay),
            quasi: None,
        })
    }

    /// Natural cubic splines through `(times[i], values[i])`, one per coordinate.
    pub fn tabulated(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let dim = values.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::Parameter("tabulated signal needs at least one coordinate".into()));
        }
        if times.len() != values.len() {
            return Err(Error::Shape {
                what: "tabulated rows",
                expected: times.len(),
                got: values.len(),
            });
        }
        if times.first().is_some_and(|&t| t < 0.0) {
            return Err(Error::Domain("tabulated times must be non-negative".into()));
        }
        let mut splines = Vec::with_capacity(dim);
        for k in 0..dim {
            let column = values
                .iter()
                .map(|row| {
                    row.get(k).copied().ok_or(Error::Shape {
                        what: "tabulated row width",
                        expected: dim,
                        got: row.len(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            splines.push(CubicSpline::new(times.clone(), column)?);
        }
        Ok(Self {
            dim,
            sampler: Sampler::Tabulated(splines),
            quasi: None,
        })
    }

    /// Loads `t,x_1,...,x_d` rows with strictly increasing `t`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "t" {
            return Err(Error::Parameter(
                "tabulated signal header must be `t,x_1,...,x_d`".into(),
            ));
        }
        for (k, h) in headers.iter().skip(1).enumerate() {
            if h != format!("x_{}", k + 1) {
                return Err(Error::Parameter(format!(
                    "unexpected column `{h}`, expected `x_{}`",
                    k + 1
                )));
            }
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let mut nums = record.iter().map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Parameter(format!("not a number: `{f}`")))
            });
            times.push(nums.next().transpose()?.unwrap_or(f64::NAN));
            values.push(nums.collect::<Result<Vec<_>>>()?);
        }
        Self::tabulated(times, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> SignalKind {
        match &self.sampler {
            Sampler::Periodic(PeriodicBase::Constant(_)) => SignalKind::Constant,
            Sampler::Periodic(PeriodicBase::Bank(_)) => SignalKind::SinusoidBank,
            Sampler::PeriodicPlusDecay(..) => SignalKind::PeriodicPlusDecay,
            Sampler::Tabulated(_) => SignalKind::Tabulated,
        }
    }

    /// Quasi-periodicity metadata attached by [`make_quasi_periodic`].
    pub fn quasi_period(&self) -> Option<&QuasiPeriodSpec> {
        self.quasi.as_ref()
    }

    /// Largest time at which the signal is defined.
    pub fn horizon(&self) -> f64 {
        match &self.sampler {
            Sampler::Tabulated(s) => s[0].domain().1,
            _ => f64::INFINITY,
        }
    }

    /// Writes `x(t)` and `ẋ(t)` into the given buffers.
    pub fn sample_into(&self, t: f64, x: &mut [f64], xdot: &mut [f64]) -> Result<()> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("signal sampled at t = {t} < 0")));
        }
        debug_assert!(x.len() == self.dim && xdot.len() == self.dim);
        match &self.sampler {
            Sampler::Periodic(base) => base.eval_into(t, x, xdot),
            Sampler::PeriodicPlusDecay(base, decay) => {
                base.eval_into(t, x, xdot);
                let (v, d) = decay.scalar(t);
                for k in 0..self.dim {
                    x[k] += v * decay.direction[k];
                    xdot[k] += d * decay.direction[k];
                }
            }
            Sampler::Tabulated(splines) => {
                for (k, s) in splines.iter().enumerate() {
                    let (v, d) = s.eval(t)?;
                    x[k] = v;
                    xdot[k] = d;
                }
            }
        }
        Ok(())
    }

    /// `(x(t), ẋ(t))`.
    pub fn sample(&self, t: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let mut x = DVector::zeros(self.dim);
        let mut xdot = DVector::zeros(self.dim);
        self.sample_into(t, x.as_mut_slice(), xdot.as_mut_slice())?;
        Ok((x, xdot))
    }

    /// `‖x(t) − x(γ(t))‖`.
    pub fn deviation(&self, advance: &AdvanceMap, t: f64) -> Result<f64> {
        self.deviation_and_floor(advance, t).map(|d| d.0)
    }

    /// Deviation plus the size of the rounding noise in evaluating it: both
    /// samples carry errors of order `ε_mach · (‖x‖ + ‖ẋ‖·γ(t))`.
    fn deviation_and_floor(&self, advance: &AdvanceMap, t: f64) -> Result<(f64, f64)> {
        let g = advance.eval(t)?;
        let (a, da) = self.sample(t)?;
        let (b, db) = self.sample(g)?;
        let floor = 16.0
            * f64::EPSILON
            * (a.norm() + b.norm() + (da.norm() + db.norm()) * g.abs().max(1.0));
        Ok(((a - b).norm(), floor))
    }
}

/// Advance map `γ(t) = t + τ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum AdvanceMap {
    /// Constant pseudo-period, `γ(t) = t + τ₀`.
    Shift(f64),
    /// Monotone samples `(t_i, γ(t_i))`, linearly interpolated.
    Tabulated { times: Vec<f64>, values: Vec<f64> },
}

impl AdvanceMap {
    pub fn eval(&self, t: f64) -> Result<f64> {
        match self {
            AdvanceMap::Shift(tau) => Ok(t + tau),
            AdvanceMap::Tabulated { times, values } => {
                let (lo, hi) = (times[0], *times.last().unwrap());
                if !(t >= lo && t <= hi) {
                    return Err(Error::Domain(format!(
                        "advance map evaluated at t = {t} outside [{lo}, {hi}]"
                    )));
                }
                let i = times.partition_point(|&s| s <= t).clamp(1, times.len() - 1) - 1;
                let s = (t - times[i]) / (times[i + 1] - times[i]);
                Ok(values[i] + s * (values[i + 1] - values[i]))
            }
        }
    }

    /// True for the constant-shift case, where `γ' = 1` is admitted as a boundary convention.
    pub fn is_constant_shift(&self) -> bool {
        matches!(self, AdvanceMap::Shift(_))
    }

    fn validate(&self) -> Result<()> {
        match self {
            AdvanceMap::Shift(tau) => {
                if !(*tau > 0.0 && tau.is_finite()) {
                    return Err(Error::Parameter(format!(
                        "pseudo-period must be positive and finite, got {tau}"
                    )));
                }
            }
            AdvanceMap::Tabulated { times, values } => {
                if times.len() < 2 || times.len() != values.len() {
                    return Err(Error::Parameter(
                        "tabulated advance map needs matching samples (at least two)".into(),
                    ));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Parameter(
                        "advance map times must be strictly increasing".into(),
                    ));
                }
                for (t, g) in times.iter().zip(values) {
                    if !(g - t > 0.0) {
                        return Err(Error::Parameter(format!(
                            "pseudo-period τ({t}) = {} is not positive",
                            g - t
                        )));
                    }
                }
                for (tw, gw) in times.windows(2).zip(values.windows(2)) {
                    let slope = (gw[1] - gw[0]) / (tw[1] - tw[0]);
                    if slope <= 1.0 + GAMMA_SLOPE_TOL {
                        return Err(Error::Parameter(format!(
                            "advance map slope {slope} on [{}, {}] is not > 1",
                            tw[0], tw[1]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

const GAMMA_SLOPE_TOL: f64 = 1e-9;
const ENVELOPE_TOL: f64 = 1e-12;

/// Parameters of the envelope `‖x(t) − x(γ(t))‖ ≤ ε / (α + t)^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiPeriodSpec {
    pub epsilon: f64,
    pub alpha: f64,
    pub order: f64,
    pub advance: AdvanceMap,
}

impl QuasiPeriodSpec {
    pub fn new(epsilon: f64, alpha: f64, order: f64, advance: AdvanceMap) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(alpha > 0.0) {
            return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
        }
        if !order.is_finite() {
            return Err(Error::Parameter("order must be finite".into()));
        }
        advance.validate()?;
        Ok(Self {
            epsilon,
            alpha,
            order,
            advance,
        })
    }

    pub fn envelope(&self, t: f64) -> f64 {
        self.epsilon / (self.alpha + t).powf(self.order)
    }
}

/// Adds `δ(t)·v` with `δ(t) = (ε/2)/(α+t)^p` to a `τ₀`-periodic base, `v = e₁`.
pub fn make_quasi_periodic(
    base: PeriodicBase,
    period: f64,
    epsilon: f64,
    alpha: f64,
    order: f64,
) -> Result<EnvironmentSignal> {
    let mut direction = vec![0.0; base.dim()];
    if let Some(first) = direction.first_mut() {
        *first = 1.0;
    }
    make_quasi_periodic_along(base, period, epsilon, alpha, order, direction)
}

/// As [`make_quasi_periodic`] with an explicit perturbation direction (normalized here).
pub fn make_quasi_periodic_along(
    base: PeriodicBase,
    period: f64,
    epsilon: f64,
    alpha: f64,
    order: f64,
    direction: Vec<f64>,
) -> Result<EnvironmentSignal> {
    let spec = QuasiPeriodSpec::new(epsilon, alpha, order, AdvanceMap::Shift(period))?;
    if !base.is_periodic_with(period) {
        return Err(Error::Parameter(format!(
            "base signal is not periodic with period {period}"
        )));
    }
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::Parameter("perturbation direction must be non-zero".into()));
    }
    let decay = Decay {
        amplitude: epsilon / 2.0,
        alpha,
        power: order,
        direction: direction.into_iter().map(|v| v / norm).collect(),
    };
    let mut signal = EnvironmentSignal::periodic_plus_decay(base, decay)?;
    signal.quasi = Some(spec);
    Ok(signal)
}

/// Outcome of checking the quasi-periodic envelope on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiPeriodicityReport {
    /// `max_t ‖x(t) − x(γ(t))‖ − ε/(α+t)^p` over the grid.
    pub max_violation: f64,
    pub worst_t: f64,
    /// Earliest grid time at which the envelope is exceeded.
    pub first_violation: Option<f64>,
    /// Smallest forward-difference slope of `γ` on the grid (NaN for a single point).
    pub min_gamma_slope: f64,
    /// The advance map is a constant shift, so `γ' = 1` was admitted.
    pub boundary_convention: bool,
    pub pass: bool,
}

pub fn verify_quasi_periodicity(
    signal: &EnvironmentSignal,
    spec: &QuasiPeriodSpec,
    grid: &[f64],
) -> Result<QuasiPeriodicityReport> {
    if grid.is_empty() {
        return Err(Error::Parameter("quasi-periodicity grid is empty".into()));
    }
    let mut max_violation = f64::NEG_INFINITY;
    let mut worst_t = grid[0];
    let mut first_violation = None;
    let mut gammas = Vec::with_capacity(grid.len());
    for &t in grid {
        let g = spec.advance.eval(t)?;
        if g > signal.horizon() {
            return Err(Error::Domain(format!(
                "γ({t}) = {g} lies beyond the signal horizon {}",
                signal.horizon()
            )));
        }
        gammas.push(g);
        let excess = signal.deviation(&spec.advance, t)? - spec.envelope(t);
        if excess > max_violation {
            max_violation = excess;
            worst_t = t;
        }
        if excess > ENVELOPE_TOL && first_violation.is_none() {
            first_violation = Some(t);
        }
    }
    let min_gamma_slope = grid
        .windows(2)
        .zip(gammas.windows(2))
        .filter(|(tw, _)| tw[1] > tw[0])
        .map(|(tw, gw)| (gw[1] - gw[0]) / (tw[1] - tw[0]))
        .fold(f64::NAN, f64::min);
    let boundary_convention = spec.advance.is_constant_shift();
    let slope_ok = min_gamma_slope.is_nan()
        || if boundary_convention {
            min_gamma_slope >= 1.0 - GAMMA_SLOPE_TOL
        } else {
            min_gamma_slope > 1.0 + GAMMA_SLOPE_TOL
        };
    Ok(QuasiPeriodicityReport {
        max_violation,
        worst_t,
        first_violation,
        min_gamma_slope,
        boundary_convention,
        pass: slope_ok && max_violation <= ENVELOPE_TOL,
    })
}

/// Result of [`estimate_order`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderEstimate {
    /// Negated log-log slope of the deviation against `1 + t`.
    Order(f64),
    /// Every deviation on the grid is zero: the order is `+∞`.
    ExactlyPeriodic,
}

/// Estimates the order `p` from the decay of `‖x(t) − x(γ(t))‖`, with `α̂ = 1`.
///
/// Deviations indistinguishable from floating-point rounding count as zero.
pub fn estimate_order(
    signal: &EnvironmentSignal,
    advance: &AdvanceMap,
    grid: &[f64],
) -> Result<OrderEstimate> {
    let deviations = grid
        .iter()
        .map(|&t| {
            signal
                .deviation_and_floor(advance, t)
                .map(|(d, floor)| if d <= floor { 0.0 } else { d })
        })
        .collect::<Result<Vec<_>>>()?;
    if deviations.iter().all(|&d| d == 0.0) {
        return Ok(OrderEstimate::ExactlyPeriodic);
    }
    let fit = fit_power_law(grid, &deviations, 1.0)?;
    Ok(OrderEstimate::Order(-fit.exponent))
}
