//! Exponential-stability certificates for `ẍ + 2A(t)ẋ + B(t)x = 0`.
//!
//! Two sufficient conditions are implemented. The general one searches for a
//! constant `m > 0` with
//!
//! ```text
//! l = sup_t max(0, 2μ₂(mI − A(t))),   c = sup_t ‖2mA(t) − m²I − B(t)‖₂,
//! l + √(l² + 4c) − 2m < 0,
//! ```
//!
//! which bounds the decay rate below by `λ = m − (l + √(l² + 4c))/2`. The
//! homogeneous one specializes to `A = (θ/2)I` with a diagonalizable `B(t)` of
//! positive spectrum. Certificates are validated against direct simulation of
//! the transition matrix.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{fit_power_law, log_grid};
use crate::linalg::{max_symmetric_eigenvalue, min_symmetric_eigenvalue, real_eigen, spectral_norm};

/// Norm inducing a matrix measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    One,
    Two,
    Inf,
}

impl Norm {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "1" | "one" => Ok(Self::One),
            "2" | "two" => Ok(Self::Two),
            "inf" | "infinity" | "∞" => Ok(Self::Inf),
            other => Err(Error::Parameter(format!("unsupported norm {other:?}"))),
        }
    }

    /// Induced matrix norm, used by the limit-definition oracle.
    pub fn induced(&self, p: &DMatrix<f64>) -> f64 {
        match self {
            Self::Two => spectral_norm(p),
            Self::One => (0..p.ncols())
                .map(|j| p.column(j).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            Self::Inf => (0..p.nrows())
                .map(|i| p.row(i).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
        }
    }
}

/// Logarithmic norm `μ(P) = lim_{h→0⁺} (‖I + hP‖ − 1)/h`, in closed form.
pub fn matrix_measure(p: &DMatrix<f64>, norm: Norm) -> Result<f64> {
    if !p.is_square() {
        return Err(Error::Shape {
            what: "matrix measure columns",
            expected: p.nrows(),
            got: p.ncols(),
        });
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("matrix measure of a non-finite matrix".into()));
    }
    let n = p.nrows();
    let off_abs = |i: usize, j: usize| if i == j { p[(i, i)] } else { p[(i, j)].abs() };
    Ok(match norm {
        Norm::Two => max_symmetric_eigenvalue(p),
        Norm::One => (0..n)
            .map(|j| (0..n).map(|i| off_abs(i, j)).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max),
        Norm::Inf => (0..n)
            .map(|i| (0..n).map(|j| off_abs(i, j)).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Time-dependent `n × n` coefficient.
#[derive(Clone)]
pub enum Coefficient {
    Constant(DMatrix<f64>),
    /// Linear interpolation between grid matrices.
    Sampled {
        times: Vec<f64>,
        values: Vec<DMatrix<f64>>,
    },
    ClosedForm(Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>),
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Self::Sampled { times, .. } => f
                .debug_struct("Sampled")
                .field("nodes", &times.len())
                .finish(),
            Self::ClosedForm(_) => f.write_str("ClosedForm(..)"),
        }
    }
}

impl Coefficient {
    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        let m = match self {
            Self::Constant(m) => m.clone(),
            Self::Sampled { times, values } => {
                let (lo, hi) = (times[0], *times.last().unwrap());
                if !(t >= lo && t <= hi) {
                    return Err(Error::Domain(format!(
                        "t = {t} outside sampled coefficient range [{lo}, {hi}]"
                    )));
                }
                if times.len() == 1 {
                    values[0].clone()
                } else {
                    let k = times.partition_point(|&s| s <= t).clamp(1, times.len() - 1) - 1;
                    let s = (t - times[k]) / (times[k + 1] - times[k]);
                    &values[k] * (1.0 - s) + &values[k + 1] * s
                }
            }
            Self::ClosedForm(f) => f(t),
        };
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("coefficient is not finite at t = {t}")));
        }
        Ok(m)
    }

    fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }
}

/// `ẍ + 2A(t)ẋ + B(t)x = 0` in `ℝⁿ`.
#[derive(Debug, Clone)]
pub struct TimeVaryingSystem {
    n: usize,
    a: Coefficient,
    b: Coefficient,
}

fn check_square(what: &'static str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Shape {
            what,
            expected: n,
            got: if m.nrows() != n { m.nrows() } else { m.ncols() },
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("{what} has non-finite entries")));
    }
    Ok(())
}

impl TimeVaryingSystem {
    pub fn constant(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        check_square("A", &a, n)?;
        check_square("B", &b, n)?;
        Ok(Self {
            n,
            a: Coefficient::Constant(a),
            b: Coefficient::Constant(b),
        })
    }

    /// `A ≡ (θ/2) I` with the given `B`.
    pub fn homogeneous(theta: f64, b: Coefficient, n: usize) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(Error::Parameter(format!("theta must be positive, got {theta}")));
        }
        Self::new(n, Coefficient::Constant(DMatrix::identity(n, n) * (0.5 * theta)), b)
    }

    pub fn sampled(times: Vec<f64>, a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Parameter("sampled system needs at least one node".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("grid times must be strictly increasing".into()));
        }
        for (what, list) in [("A samples", &a), ("B samples", &b)] {
            if list.len() != times.len() {
                return Err(Error::Shape {
                    what,
                    expected: times.len(),
                    got: list.len(),
                });
            }
        }
        let n = a[0].nrows();
        for m in &a {
            check_square("A", m, n)?;
        }
        for m in &b {
            check_square("B", m, n)?;
        }
        Ok(Self {
            n,
            a: Coefficient::Sampled {
                times: times.clone(),
                values: a,
            },
            b: Coefficient::Sampled { times, values: b },
        })
    }

    pub fn new(n: usize, a: Coefficient, b: Coefficient) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("system dimension must be positive".into()));
        }
        let sys = Self { n, a, b };
        // probe shapes once
        let t = match &sys.a {
            Coefficient::Sampled { times, .. } => times[0],
            _ => 0.0,
        };
        check_square("A", &sys.a.eval(t)?, n)?;
        check_square("B", &sys.b.eval(t)?, n)?;
        Ok(sys)
    }

    /// Rows `t, a_11..a_nn, b_11..b_nn` with row-major matrix entries.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let cols = rdr.headers()?.len();
        let n = (((cols.saturating_sub(1)) / 2) as f64).sqrt().round() as usize;
        if n == 0 || cols != 1 + 2 * n * n {
            return Err(Error::Config(format!(
                "system CSV needs 1 + 2n² columns (t, a_11..a_nn, b_11..b_nn), got {cols}"
            )));
        }
        let (mut times, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Config(format!("not a number: {s:?}")))
                })
                .collect::<Result<_>>()?;
            times.push(vals[0]);
            a.push(DMatrix::from_row_slice(n, n, &vals[1..1 + n * n]));
            b.push(DMatrix::from_row_slice(n, n, &vals[1 + n * n..]));
        }
        Self::sampled(times, a, b)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn a(&self, t: f64) -> Result<DMatrix<f64>> {
        self.a.eval(t)
    }

    pub fn b(&self, t: f64) -> Result<DMatrix<f64>> {
        self.b.eval(t)
    }

    pub fn is_constant(&self) -> bool {
        self.a.is_constant() && self.b.is_constant()
    }

    pub fn a_coefficient(&self) -> &Coefficient {
        &self.a
    }

    pub fn b_coefficient(&self) -> &Coefficient {
        &self.b
    }

    /// First-order generator `[[0, I], [−B, −2A]]` acting on `(x, ẋ)`.
    pub fn generator(&self, t: f64) -> Result<DMatrix<f64>> {
        let n = self.n;
        let (a, b) = (self.a(t)?, self.b(t)?);
        let mut f = DMatrix::zeros(2 * n, 2 * n);
        f.view_mut((0, n), (n, n)).fill_with_identity();
        f.view_mut((n, 0), (n, n)).copy_from(&(-b));
        f.view_mut((n, n), (n, n)).copy_from(&(a * -2.0));
        Ok(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lemma {
    /// General matrix-measure criterion.
    MatrixMeasure,
    /// Homogeneous damping `A = (θ/2)I`.
    Homogeneous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate {
    pub lemma: Lemma,
    pub m: f64,
    pub l: f64,
    pub c: f64,
    /// `l + √(l² + 4c) − 2m`, negative for a valid certificate.
    pub margin: f64,
    /// Guaranteed decay rate `m − (l + √(l² + 4c))/2`.
    pub lambda: f64,
    pub chi: Option<f64>,
    pub lambda_min: Option<f64>,
    /// Number of time nodes the suprema were taken over.
    pub grid_nodes: usize,
}

fn margin_and_rate(m: f64, l: f64, c: f64) -> (f64, f64) {
    let root = (l * l + 4.0 * c).sqrt();
    (l + root - 2.0 * m, m - 0.5 * (l + root))
}

/// Default number of m candidates.
pub const M_GRID_POINTS: usize = 256;
/// Default number of time nodes.
pub const T_GRID_POINTS: usize = 512;

fn check_grids(m_grid: &[f64], t_grid: &[f64]) -> Result<()> {
    if m_grid.is_empty() || t_grid.is_empty() {
        return Err(Error::Parameter("certificate grids must be non-empty".into()));
    }
    if let Some(m) = m_grid.iter().find(|&&m| !(m > 0.0 && m.is_finite())) {
        return Err(Error::Parameter(format!("m candidates must be positive, got {m}")));
    }
    Ok(())
}

/// Evaluates a coefficient on the grid in parallel, keeping grid order.
fn on_grid(coef: &Coefficient, t_grid: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    if coef.is_constant() {
        return Ok(vec![coef.eval(t_grid[0])?]);
    }
    t_grid.par_iter().map(|&t| coef.eval(t)).collect()
}

/// Descending log grid on `[10⁻³·a_min, 0.9·a_min]` where `a_min = inf_t λ_min(sym A(t))`.
///
/// On that window `l = 0` and the criterion reduces to `√c < m`. `None` when
/// `a_min ≤ 0`, since then every `m` gives `l ≥ 2m`. The top stops short of
/// `a_min` because for scalar systems `m = a` reproduces the exact decay rate,
/// and a rate with no margin cannot be checked against a finite burn-in.
pub fn default_m_grid(system: &TimeVaryingSystem, t_grid: &[f64]) -> Result<Option<Vec<f64>>> {
    if t_grid.is_empty() {
        return Err(Error::Parameter("t grid must be non-empty".into()));
    }
    let a_min = on_grid(&system.a, t_grid)?
        .iter()
        .map(min_symmetric_eigenvalue)
        .fold(f64::INFINITY, f64::min);
    if !(a_min > 0.0) {
        return Ok(None);
    }
    let mut grid = log_grid(1e-3 * a_min, 0.9 * a_min, M_GRID_POINTS);
    grid.reverse();
    Ok(Some(grid))
}

/// Scans `m_grid` in order and returns the first `m` satisfying the criterion.
pub fn certify_sun(
    system: &TimeVaryingSystem,
    m_grid: &[f64],
    t_grid: &[f64],
) -> Result<Option<StabilityCertificate>> {
    check_grids(m_grid, t_grid)?;
    let a = on_grid(&system.a, t_grid)?;
    let b = on_grid(&system.b, t_grid)?;
    let nodes = a.len().max(b.len());
    let a_at = |k: usize| &a[k.min(a.len() - 1)];
    let b_at = |k: usize| &b[k.min(b.len() - 1)];
    let a_min: Vec<f64> = a.iter().map(min_symmetric_eigenvalue).collect();
    let n = system.dim();
    let eye = DMatrix::<f64>::identity(n, n);
    Ok(m_grid.par_iter().find_map_first(|&m| {
        // μ₂(mI − A) = m − λ_min(sym A)
        let l = a_min
            .iter()
            .map(|&am| (2.0 * (m - am)).max(0.0))
            .fold(0.0, f64::max);
        let c = (0..nodes)
            .map(|k| spectral_norm(&(a_at(k) * (2.0 * m) - &eye * (m * m) - b_at(k))))
            .fold(0.0, f64::max);
        let (margin, lambda) = margin_and_rate(m, l, c);
        (margin < 0.0 && lambda > 0.0).then_some(StabilityCertificate {
            lemma: Lemma::MatrixMeasure,
            m,
            l,
            c,
            margin,
            lambda,
            chi: None,
            lambda_min: None,
            grid_nodes: t_grid.len(),
        })
    }))
}

/// Everything the homogeneous criterion computes, certified or not.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousOutcome {
    pub theta: f64,
    pub lambda_min: f64,
    pub chi: f64,
    /// `θ² ≥ 4λ_min`.
    pub first_condition: bool,
    /// `θ² ≥ 4λ_min·χ(1+χ)/χ`, evaluated as written.
    pub second_condition_literal: bool,
    /// `θ² ≥ 4λ_min(1+χ)`.
    pub second_condition_simplified: bool,
    /// Open interval searched for `m`, if non-empty.
    pub window: Option<(f64, f64)>,
    pub certificate: Option<StabilityCertificate>,
}

/// Homogeneous criterion for `ẅ + θẇ + B(t)w = 0`.
///
/// `m_grid = None` searches a descending log grid over the analytic window.
/// A non-positive or complex spectrum, or a defective `B(t)`, is a
/// [`Error::Hypothesis`], distinct from an uncertified outcome.
pub fn certify_homogeneous(
    theta: f64,
    b: &Coefficient,
    t_grid: &[f64],
    m_grid: Option<&[f64]>,
) -> Result<HomogeneousOutcome> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Parameter(format!("theta must be positive, got {theta}")));
    }
    if t_grid.is_empty() {
        return Err(Error::Parameter("t grid must be non-empty".into()));
    }
    let spectra = on_grid(b, t_grid)?
        .par_iter()
        .map(real_eigen)
        .collect::<Result<Vec<_>>>()?;
    let mut lambda_min = f64::INFINITY;
    let mut chi: f64 = 1.0;
    for e in &spectra {
        let lo = e.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if !(lo > 0.0) {
            return Err(Error::Hypothesis(format!(
                "B(t) has a non-positive eigenvalue {lo}"
            )));
        }
        lambda_min = lambda_min.min(lo);
        chi = chi.max(e.condition());
    }

    let theta2 = theta * theta;
    let first_condition = theta2 >= 4.0 * lambda_min;
    let second_condition_literal = theta2 >= 4.0 * lambda_min * chi * (1.0 + chi) / chi;
    let second_condition_simplified = theta2 >= 4.0 * lambda_min * (1.0 + chi);

    let mut outcome = HomogeneousOutcome {
        theta,
        lambda_min,
        chi,
        first_condition,
        second_condition_literal,
        second_condition_simplified,
        window: None,
        certificate: None,
    };
    if !(first_condition && second_condition_literal) {
        return Ok(outcome);
    }
    let disc = chi * chi * theta2 - 4.0 * chi * (1.0 + chi) * lambda_min;
    if disc < 0.0 {
        return Ok(outcome);
    }
    let lower = (theta * chi - disc.sqrt()) / (2.0 * (1.0 + chi));
    let half_width = 0.5 * (theta2 - 4.0 * lambda_min).sqrt();
    let lo = lower.max(0.5 * theta - half_width);
    let hi = (0.5 * theta).min(0.5 * theta + half_width);
    if !(hi > lo) {
        return Ok(outcome);
    }
    outcome.window = Some((lo, hi));

    let default_grid;
    let grid = match m_grid {
        Some(g) => {
            check_grids(g, t_grid)?;
            g
        }
        None => {
            // strictly inside the open window
            let mut g = log_grid(lo, hi, M_GRID_POINTS + 2);
            g.pop();
            g.remove(0);
            g.reverse();
            default_grid = g;
            &default_grid
        }
    };
    outcome.certificate = grid.iter().find_map(|&m| {
        if !(m > lo && m < hi) {
            return None;
        }
        let c = (m * theta - m * m - lambda_min).abs() * chi;
        if !(c.sqrt() < m) {
            return None;
        }
        // A = (θ/2)I and m < θ/2 give l = 0
        let l = (2.0 * (m - 0.5 * theta)).max(0.0);
        let (margin, lambda) = margin_and_rate(m, l, c);
        Some(StabilityCertificate {
            lemma: Lemma::Homogeneous,
            m,
            l,
            c,
            margin,
            lambda,
            chi: Some(chi),
            lambda_min: Some(lambda_min),
            grid_nodes: t_grid.len(),
        })
    });
    Ok(outcome)
}

/// `‖Φ(t, t₀)‖₂` of the `2n`-dimensional first-order reduction over time.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEnvelope {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
}

const MAX_ENVELOPE_SAMPLES: u64 = 20_000;

/// RK4 on `Φ' = F(t)Φ`, `Φ(t₀) = I`, where column `j` is the solution from the
/// `j`-th canonical initial condition.
pub fn simulate_transition(
    system: &TimeVaryingSystem,
    t0: f64,
    t_end: f64,
    h: f64,
) -> Result<TransitionEnvelope> {
    if !(h > 0.0) || !(t_end > t0) {
        return Err(Error::Parameter(format!(
            "need h > 0 and t_end > t0, got h = {h}, [{t0}, {t_end}]"
        )));
    }
    let steps = ((t_end - t0) / h).ceil() as u64;
    let stride = steps.div_ceil(MAX_ENVELOPE_SAMPLES).max(1);
    let dim = 2 * system.dim();
    let constant = system.is_constant().then(|| system.generator(t0)).transpose()?;
    let gen = |t: f64| -> Result<DMatrix<f64>> {
        match &constant {
            Some(f) => Ok(f.clone()),
            None => system.generator(t),
        }
    };
    let mut phi = DMatrix::<f64>::identity(dim, dim);
    let mut times = vec![t0];
    let mut norms = vec![1.0];
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let (f0, fm, f1) = match &constant {
            Some(f) => (f.clone(), f.clone(), f.clone()),
            None => (gen(t)?, gen(t + 0.5 * h)?, gen(t + h)?),
        };
        let k1 = &f0 * &phi;
        let k2 = &fm * (&phi + &k1 * (0.5 * h));
        let k3 = &fm * (&phi + &k2 * (0.5 * h));
        let k4 = &f1 * (&phi + &k3 * h);
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let t_next = t0 + (k + 1) as f64 * h;
        if phi.iter().any(|v| !v.is_finite()) || phi.amax() > crate::dynamics::DIVERGENCE_NORM {
            return Err(Error::Divergence {
                step: k + 1,
                t: t_next,
                reason: "transition matrix blew up".into(),
            });
        }
        if (k + 1) % stride == 0 || k + 1 == steps {
            times.push(t_next);
            norms.push(spectral_norm(&phi));
        }
    }
    Ok(TransitionEnvelope { times, norms })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeCheck {
    /// `max ‖Φ(t)‖e^{λ(t−t₀)}` over the burn-in prefix.
    pub gamma_hat: f64,
    pub lambda: f64,
    pub burn_in_end: f64,
    /// Largest `‖Φ(t)‖e^{λ(t−t₀)} / γ̂` after the burn-in.
    pub worst_ratio: f64,
    pub violations: usize,
    pub pass: bool,
}

/// Checks `‖Φ(t)‖ ≤ γ̂ e^{−λ(t−t₀)}` after the burn-in, with `γ̂` fitted on it.
pub fn check_envelope(
    env: &TransitionEnvelope,
    lambda: f64,
    burn_in_fraction: f64,
) -> Result<EnvelopeCheck> {
    if env.times.len() < 2 || !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(Error::Parameter("envelope needs samples and a burn-in in [0, 1)".into()));
    }
    let t0 = env.times[0];
    let burn_in_end = t0 + burn_in_fraction * (env.times.last().unwrap() - t0);
    let scaled = |k: usize| env.norms[k] * (lambda * (env.times[k] - t0)).exp();
    let mut gamma_hat: f64 = 0.0;
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for k in 0..env.times.len() {
        if env.times[k] <= burn_in_end {
            gamma_hat = gamma_hat.max(scaled(k));
        }
    }
    for k in 0..env.times.len() {
        if env.times[k] > burn_in_end {
            let r = scaled(k) / gamma_hat;
            worst = worst.max(r);
            if r > 1.0 + 1e-9 {
                violations += 1;
            }
        }
    }
    Ok(EnvelopeCheck {
        gamma_hat,
        lambda,
        burn_in_end,
        worst_ratio: worst,
        violations,
        pass: violations == 0,
    })
}

/// Step size resolving the generator's fastest time scale.
pub fn transition_step(system: &TimeVaryingSystem, t: f64) -> Result<f64> {
    let scale = spectral_norm(&system.generator(t)?).max(1.0);
    Ok((0.02 / scale).min(0.01))
}

/// Simulates over `[0, 50/λ]` and checks the envelope after a 10% burn-in.
pub fn validate_certificate(
    system: &TimeVaryingSystem,
    cert: &StabilityCertificate,
) -> Result<EnvelopeCheck> {
    let horizon = 50.0 / cert.lambda;
    let h = transition_step(system, 0.0)?.min(horizon / 1000.0);
    let env = simulate_transition(system, 0.0, horizon, h)?;
    check_envelope(&env, cert.lambda, 0.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiboReport {
    /// `None` for the unforced system.
    pub q: Option<f64>,
    pub fitted_exponent: f64,
    /// `q + 1/2`.
    pub bound: Option<f64>,
    pub slack: f64,
    pub horizon: f64,
    pub pass: bool,
}

pub const BIBO_SLACK: f64 = 0.2;

/// Drives the certified system with `u(t) = (1+t)^q e₁` on the velocity
/// equation from rest and fits the decay exponent of the state norm over
/// `[0.1T, T]`. With `q = None` the unforced system starts from `e₁` instead.
pub fn bibo_decay_check(
    system: &TimeVaryingSystem,
    cert: &StabilityCertificate,
    q: Option<f64>,
    t_end: f64,
) -> Result<BiboReport> {
    if !(cert.margin < 0.0 && cert.lambda > 0.0) {
        return Err(Error::Hypothesis("certificate does not certify stability".into()));
    }
    if let Some(q) = q {
        if !(q < 0.0) || q == -0.5 {
            return Err(Error::Parameter(format!(
                "forcing exponent must be negative and differ from -1/2, got {q}"
            )));
        }
    }
    if !(t_end > 0.0) {
        return Err(Error::Parameter("horizon must be positive".into()));
    }
    let n = system.dim();
    let dim = 2 * n;
    let h = transition_step(system, 0.0)?.min(t_end / 1000.0);
    let steps = (t_end / h).ceil() as u64;
    let constant = system.is_constant().then(|| system.generator(0.0)).transpose()?;
    let gen = |t: f64| match &constant {
        Some(f) => Ok(f.clone()),
        None => system.generator(t),
    };
    let forcing = |t: f64| -> DVector<f64> {
        let mut u = DVector::zeros(dim);
        if let Some(q) = q {
            u[n] = (1.0 + t).powf(q);
        }
        u
    };
    let rhs = |f: &DMatrix<f64>, z: &DVector<f64>, t: f64| f * z + forcing(t);

    let mut z = DVector::zeros(dim);
    if q.is_none() {
        z[0] = 1.0;
    }
    let fit_from = 0.1 * t_end;
    let stride = steps.div_ceil(4000).max(1);
    let (mut ts, mut ys) = (Vec::new(), Vec::new());
    for k in 0..steps {
        let t = k as f64 * h;
        let (f0, fm, f1) = (gen(t)?, gen(t + 0.5 * h)?, gen(t + h)?);
        let k1 = rhs(&f0, &z, t);
        let k2 = rhs(&fm, &(&z + &k1 * (0.5 * h)), t + 0.5 * h);
        let k3 = rhs(&fm, &(&z + &k2 * (0.5 * h)), t + 0.5 * h);
        let k4 = rhs(&f1, &(&z + &k3 * h), t + h);
        z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let t_next = (k + 1) as f64 * h;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: k + 1,
                t: t_next,
                reason: "forced response is not finite".into(),
            });
        }
        if t_next >= fit_from && (k + 1) % stride == 0 {
            ts.push(t_next);
            ys.push(z.norm());
        }
    }
    let fitted_exponent = match fit_power_law(&ts, &ys, 1.0) {
        Ok(fit) => fit.exponent,
        // the unforced response can underflow to zero on the whole window
        Err(_) if q.is_none() => f64::NEG_INFINITY,
        Err(e) => return Err(e),
    };
    let bound = q.map(|q| q + 0.5);
    let pass = match bound {
        Some(b) => fitted_exponent <= b + BIBO_SLACK,
        None => fitted_exponent < 0.0,
    };
    Ok(BiboReport {
        q,
        fitted_exponent,
        bound,
        slack: BIBO_SLACK,
        horizon: t_end,
        pass,
    })
}
