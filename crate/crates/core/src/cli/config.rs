//! TOML experiment configuration.
//!
//! ```toml
//! output_dir = "out"
//! seed = 7
//!
//! [[scenario]]
//! name = "damped"
//! checks = ["energy-balance", "corollary"]
//! signal = { kind = "constant", value = [0.0] }
//! potential = { kind = "quadratic-tracking", dim = 1 }
//! dissipation = { kind = "exponential", theta = 2.0 }
//! initial = { w = [1.0] }
//! integrator = { h = 1e-3, t_end = 10.0, sample_stride = 10 }
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::dynamics::{AgentConfig, AgentState, DissipationSchedule};
use crate::error::{Error, Result};
use crate::potentials::{FeatureMap, PotentialModel, Target};
use crate::signals::{
    make_quasi_periodic_along, EnvironmentSignal, PeriodicBase, Sinusoid, SinusoidBank,
};
use crate::stability::{Coefficient, TimeVaryingSystem};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scenario: Vec<ScenarioConfig>,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    EnergyBalance,
    Corollary,
    HomoExpConv,
    Generalization,
    Convergence,
    StabilityCertificate,
}

impl Check {
    pub fn name(&self) -> &'static str {
        match self {
            Self::EnergyBalance => "energy-balance",
            Self::Corollary => "corollary",
            Self::HomoExpConv => "homo-exp-conv",
            Self::Generalization => "generalization",
            Self::Convergence => "convergence",
            Self::StabilityCertificate => "stability-certificate",
        }
    }

    pub fn needs_trajectory(&self) -> bool {
        !matches!(self, Self::StabilityCertificate)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub checks: Vec<Check>,
    pub signal: Option<SignalConfig>,
    pub potential: Option<PotentialConfig>,
    pub dissipation: Option<DissipationConfig>,
    #[serde(default)]
    pub initial: InitialConfig,
    pub integrator: Option<IntegratorConfig>,
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    /// Plateau checkpoint `T₀`; defaults to half the horizon.
    pub plateau_checkpoint: Option<f64>,
    pub stability: Option<StabilityConfig>,
}

fn default_tail_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidConfig {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaseConfig {
    Constant {
        value: Vec<f64>,
    },
    Sinusoids {
        offset: Vec<f64>,
        terms: Vec<Vec<SinusoidConfig>>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SignalConfig {
    Constant {
        value: Vec<f64>,
    },
    Sinusoids {
        offset: Vec<f64>,
        terms: Vec<Vec<SinusoidConfig>>,
    },
    QuasiPeriodic {
        base: BaseConfig,
        period: f64,
        epsilon: f64,
        alpha: f64,
        order: f64,
        direction: Option<Vec<f64>>,
    },
    /// Columns `t, x_1..x_d`.
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetConfig {
    Affine {
        weights: Vec<f64>,
        #[serde(default)]
        bias: f64,
    },
    TanhSum {
        weights: Vec<f64>,
        #[serde(default)]
        bias: f64,
    },
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureConfig {
    #[default]
    Identity,
    WithBias,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialConfig {
    /// Either an explicit `matrix` (rows) or `dim` for the identity.
    QuadraticTracking {
        matrix: Option<Vec<Vec<f64>>>,
        dim: Option<usize>,
    },
    LinearRegression {
        dim: usize,
        #[serde(default)]
        features: FeatureConfig,
        target: TargetConfig,
    },
    TwoLayerTanh {
        dim: usize,
        hidden: usize,
        target: TargetConfig,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DissipationConfig {
    Constant,
    Exponential { theta: f64 },
    Power { alpha: f64, k: f64 },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Drawn uniformly from `[-1, 1]` with the scenario seed when absent.
    pub w: Option<Vec<f64>>,
    pub wdot: Option<Vec<f64>>,
    pub masses: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_method")]
    pub method: String,
    pub h: f64,
    pub t_end: f64,
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
}

fn default_method() -> String {
    "rk4".into()
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityMethod {
    Sun,
    Homogeneous,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub method: StabilityMethod,
    /// Rows of a constant `A` (unused by the homogeneous method).
    pub a: Option<Vec<Vec<f64>>>,
    /// Rows of a constant `B`.
    pub b: Option<Vec<Vec<f64>>>,
    /// Sampled system with columns `t, a_11..a_nn, b_11..b_nn`.
    pub csv: Option<PathBuf>,
    pub theta: Option<f64>,
    pub t_grid: Option<GridConfig>,
    pub m_grid: Option<Vec<f64>>,
    /// Confirm a certificate by simulating the transition matrix.
    #[serde(default = "default_true")]
    pub validate: bool,
}

fn default_true() -> bool {
    true
}

fn field_error(scenario: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("scenario `{scenario}`: {msg}"))
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str, scenario: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(field_error(scenario, format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

fn bank(offset: &[f64], terms: &[Vec<SinusoidConfig>]) -> Result<SinusoidBank> {
    SinusoidBank::new(
        offset.to_vec(),
        terms
            .iter()
            .map(|row| {
                row.iter()
                    .map(|s| Sinusoid::new(s.amplitude, s.frequency, s.phase))
                    .collect()
            })
            .collect(),
    )
}

fn target(t: &TargetConfig) -> Target {
    match t {
        TargetConfig::Affine { weights, bias } => Target::Affine {
            weights: weights.clone(),
            bias: *bias,
        },
        TargetConfig::TanhSum { weights, bias } => Target::TanhSum {
            weights: weights.clone(),
            bias: *bias,
        },
    }
}

/// FNV-1a, so per-scenario seeds depend on the name and not on list order.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validate()?;
        Ok(config)
    }

    /// Parses without validation; relative paths resolve against the working directory.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for s in &self.scenario {
            if !names.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate scenario name `{}`", s.name)));
            }
            s.validate()?;
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn scenario_seed(&self, scenario: &ScenarioConfig) -> u64 {
        self.seed ^ name_hash(&scenario.name)
    }

    /// Builds the agent for a scenario that runs dynamics.
    pub fn agent(&self, s: &ScenarioConfig) -> Result<AgentConfig> {
        let name = &s.name;
        let signal = match s.signal.as_ref().ok_or_else(|| field_error(name, "missing signal block"))? {
            SignalConfig::Constant { value } => EnvironmentSignal::constant(value.clone())?,
            SignalConfig::Sinusoids { offset, terms } => {
                EnvironmentSignal::sinusoids(bank(offset, terms)?)
            }
            SignalConfig::QuasiPeriodic {
                base,
                period,
                epsilon,
                alpha,
                order,
                direction,
            } => {
                let base = match base {
                    BaseConfig::Constant { value } => PeriodicBase::Constant(value.clone()),
                    BaseConfig::Sinusoids { offset, terms } => {
                        PeriodicBase::Bank(bank(offset, terms)?)
                    }
                };
                let direction = direction.clone().unwrap_or_else(|| {
                    let mut v = vec![0.0; base.dim()];
                    if let Some(first) = v.first_mut() {
                        *first = 1.0;
                    }
                    v
                });
                make_quasi_periodic_along(base, *period, *epsilon, *alpha, *order, direction)?
            }
            SignalConfig::Csv { path } => EnvironmentSignal::from_csv(&self.resolve(path))?,
        };
        let d = signal.dim();
        let potential = match s
            .potential
            .as_ref()
            .ok_or_else(|| field_error(name, "missing potential block"))?
        {
            PotentialConfig::QuadraticTracking { matrix, dim } => match (matrix, dim) {
                (Some(rows), _) => {
                    PotentialModel::quadratic_tracking(matrix_from_rows(rows, "potential.matrix", name)?)?
                }
                (None, Some(dim)) => PotentialModel::identity_tracking(*dim)?,
                (None, None) => PotentialModel::identity_tracking(d)?,
            },
            PotentialConfig::LinearRegression {
                dim,
                features,
                target: t,
            } => PotentialModel::linear_regression(
                *dim,
                match features {
                    FeatureConfig::Identity => FeatureMap::Identity,
                    FeatureConfig::WithBias => FeatureMap::WithBias,
                },
                target(t),
            )?,
            PotentialConfig::TwoLayerTanh {
                dim,
                hidden,
                target: t,
            } => PotentialModel::two_layer_tanh(*dim, *hidden, target(t))?,
        };
        let dissipation = match s
            .dissipation
            .as_ref()
            .ok_or_else(|| field_error(name, "missing dissipation block"))?
        {
            DissipationConfig::Constant => DissipationSchedule::Constant,
            DissipationConfig::Exponential { theta } => DissipationSchedule::exponential(*theta)?,
            DissipationConfig::Power { alpha, k } => DissipationSchedule::power(*alpha, *k)?,
        };

        use crate::potentials::Potential;
        let m = potential.weight_dim();
        let w = match &s.initial.w {
            Some(w) => DVector::from_vec(w.clone()),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.scenario_seed(s));
                DVector::from_fn(m, |_, _| rng.random_range(-1.0..=1.0))
            }
        };
        let wdot = s
            .initial
            .wdot
            .clone()
            .map_or_else(|| DVector::zeros(m), DVector::from_vec);
        let masses = s
            .initial
            .masses
            .clone()
            .map_or_else(|| DVector::from_element(m, 1.0), DVector::from_vec);
        AgentConfig::new(masses, dissipation, potential, signal, AgentState::new(0.0, w, wdot)?)
            .map_err(|e| field_error(name, e))
    }

    /// Builds the linear system for a stability scenario.
    pub fn system(&self, s: &ScenarioConfig) -> Result<(StabilityConfig, TimeVaryingSystem)> {
        let name = &s.name;
        let st = s
            .stability
            .clone()
            .ok_or_else(|| field_error(name, "missing stability block"))?;
        let loaded = match &st.csv {
            Some(p) => Some(TimeVaryingSystem::from_csv(&self.resolve(p))?),
            None => None,
        };
        let b_const = st
            .b
            .as_ref()
            .map(|rows| matrix_from_rows(rows, "stability.b", name))
            .transpose()?;
        let system = match st.method {
            StabilityMethod::Sun => match (loaded, &st.a, b_const) {
                (Some(sys), _, _) => sys,
                (None, Some(a), Some(b)) => {
                    TimeVaryingSystem::constant(matrix_from_rows(a, "stability.a", name)?, b)?
                }
                _ => return Err(field_error(name, "stability needs `a` and `b`, or `csv`")),
            },
            StabilityMethod::Homogeneous => {
                let theta = st
                    .theta
                    .ok_or_else(|| field_error(name, "stability.theta is required for the homogeneous method"))?;
                let (n, b) = match (loaded, b_const) {
                    (Some(sys), _) => (sys.dim(), sys.b_coefficient().clone()),
                    (None, Some(b)) => (b.nrows(), Coefficient::Constant(b)),
                    _ => return Err(field_error(name, "stability needs `b` or `csv`")),
                };
                TimeVaryingSystem::homogeneous(theta, b, n)?
            }
        };
        Ok((st, system))
    }
}

impl ScenarioConfig {
    pub fn needs_trajectory(&self) -> bool {
        self.checks.iter().any(Check::needs_trajectory)
    }

    fn validate(&self) -> Result<()> {
        let name = &self.name;
        if name.is_empty()
            || !name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        {
            return Err(Error::Config(format!(
                "scenario name {name:?} must be non-empty and use only [A-Za-z0-9._-]"
            )));
        }
        if self.needs_trajectory() {
            for (present, block) in [
                (self.signal.is_some(), "signal"),
                (self.potential.is_some(), "potential"),
                (self.dissipation.is_some(), "dissipation"),
                (self.integrator.is_some(), "integrator"),
            ] {
                if !present {
                    return Err(field_error(name, format!("missing {block} block")));
                }
            }
        }
        if let Some(i) = &self.integrator {
            if i.method != "rk4" {
                return Err(field_error(
                    name,
                    format!("integrator.method must be \"rk4\", got {:?}", i.method),
                ));
            }
            if !(i.h > 0.0 && i.h.is_finite()) {
                return Err(field_error(name, "integrator.h must be positive"));
            }
            if !(i.t_end > 0.0 && i.t_end.is_finite()) {
                return Err(field_error(name, "integrator.t_end must be positive"));
            }
            if i.sample_stride == 0 {
                return Err(field_error(name, "integrator.sample_stride must be at least 1"));
            }
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(field_error(name, "tail_fraction must lie in (0, 1]"));
        }
        let quasi = matches!(self.signal, Some(SignalConfig::QuasiPeriodic { .. }));
        for check in [Check::HomoExpConv, Check::Generalization] {
            if self.checks.contains(&check) && !quasi {
                return Err(field_error(
                    name,
                    format!("check {} needs signal.kind = \"quasi-periodic\"", check.name()),
                ));
            }
        }
        if self.checks.contains(&Check::StabilityCertificate) {
            let st = self
                .stability
                .as_ref()
                .ok_or_else(|| field_error(name, "missing stability block"))?;
            if let Some(g) = &st.t_grid {
                if g.points == 0 || !(g.end >= g.start) {
                    return Err(field_error(name, "stability.t_grid needs points >= 1 and end >= start"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 3
        [[scenario]]
        name = "a"
        checks = ["energy-balance"]
        signal = { kind = "constant", value = [0.0] }
        potential = { kind = "quadratic-tracking", dim = 1 }
        dissipation = { kind = "exponential", theta = 2.0 }
        integrator = { h = 0.01, t_end = 1.0 }
    "#;

    #[test]
    fn minimal_config_builds() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        c.validate().unwrap();
        let agent = c.agent(&c.scenario[0]).unwrap();
        assert_eq!(agent.weight_dim(), 1);
        assert!(agent.initial.w[0].abs() <= 1.0);
        // seeded initial weights are reproducible
        let again = c.agent(&c.scenario[0]).unwrap();
        assert_eq!(agent.initial.w, again.initial.w);
    }

    #[test]
    fn negative_step_names_the_field() {
        let text = MINIMAL.replace("h = 0.01", "h = -0.01");
        let err = ExperimentConfig::parse(&text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("integrator.h must be positive"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("seed = 3", "seed = 3\nbogus = 1");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let body = MINIMAL.split("[[scenario]]").nth(1).unwrap();
        let text = format!("{MINIMAL}\n[[scenario]]{body}");
        assert!(ExperimentConfig::parse(&text).unwrap().validate().is_err());
    }

    #[test]
    fn quasi_checks_need_quasi_signal() {
        let text = MINIMAL.replace("[\"energy-balance\"]", "[\"homo-exp-conv\"]");
        assert!(ExperimentConfig::parse(&text).unwrap().validate().is_err());
    }

    #[test]
    fn empty_config_is_valid() {
        let c = ExperimentConfig::parse("").unwrap();
        c.validate().unwrap();
        assert!(c.scenario.is_empty());
    }
}
