//! Scenario execution and output writing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{Check, ExperimentConfig, ScenarioConfig, StabilityMethod};
use super::plot::{line_chart, Axes, Series};
use crate::dynamics::{simulate, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::fit::linear_grid;
use crate::stability::{
    certify_homogeneous, certify_sun, default_m_grid, validate_certificate, Coefficient,
    StabilityCertificate, TimeVaryingSystem, T_GRID_POINTS,
};
use crate::verify::{
    convergence_check, deviation_series, environmental_energy_boundedness,
    pseudo_period_deviation, TheoremReport, Verdict,
};

/// Environment variable naming the output directory when neither `--out`
/// nor the config sets one.
pub const OUT_ENV: &str = "ACTION_LAB_OUT";
const DEFAULT_OUT: &str = "action-lab-out";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub only: Option<String>,
    /// Worker threads; `0` lets rayon decide.
    pub jobs: usize,
    pub plots: bool,
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub check: &'static str,
    pub anchor: &'static str,
    pub verdict: Verdict,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub rows: Vec<SummaryRow>,
    pub trajectory_files: Vec<PathBuf>,
}

impl RunSummary {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.verdict != Verdict::Fail)
    }

    /// `0` when every applicable check passed, `2` otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            0
        } else {
            2
        }
    }
}

struct ScenarioOutcome {
    name: String,
    rows: Vec<SummaryRow>,
    notes: Vec<String>,
    trajectory_file: Option<PathBuf>,
}

fn anchor(check: Check, method: Option<StabilityMethod>) -> &'static str {
    match check {
        Check::EnergyBalance => "energy-balance-invariant",
        Check::Corollary => "internal-energy-bound",
        Check::HomoExpConv => "pseudo-period-deviation-bound",
        Check::Generalization => "environmental-energy-bounded",
        Check::Convergence => "weight-convergence",
        Check::StabilityCertificate => match method {
            Some(StabilityMethod::Homogeneous) => "homogeneous-damping-certificate",
            _ => "matrix-measure-certificate",
        },
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn resolve_output_dir(config: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    opts.out
        .clone()
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn selected<'a>(config: &'a ExperimentConfig, opts: &RunOptions) -> Result<Vec<&'a ScenarioConfig>> {
    let mut list: Vec<&ScenarioConfig> = config
        .scenario
        .iter()
        .filter(|s| opts.only.as_ref().is_none_or(|o| &s.name == o))
        .collect();
    if let Some(o) = &opts.only {
        if list.is_empty() {
            return Err(Error::Config(format!("no scenario named `{o}`")));
        }
    }
    list.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(list)
}

/// Runs the selected scenarios and writes every artifact under the output directory.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let scenarios = selected(config, opts)?;
    let out = resolve_output_dir(config, opts);
    fs::create_dir_all(&out).map_err(io_err(&out))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", opts.jobs)))?;
    let outcomes: Vec<ScenarioOutcome> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|s| run_scenario(config, s, &out, opts.plots))
            .collect::<Result<Vec<_>>>()
    })?;

    let rows: Vec<SummaryRow> = outcomes.iter().flat_map(|o| o.rows.clone()).collect();
    write_summary(&out.join("summary.csv"), &rows)?;
    write_report(&out.join("report.txt"), &outcomes)?;
    Ok(RunSummary {
        output_dir: out,
        rows,
        trajectory_files: outcomes.into_iter().filter_map(|o| o.trajectory_file).collect(),
    })
}

/// Divergence and violated hypotheses fail the check; anything else aborts the run.
fn is_check_failure(e: &Error) -> bool {
    matches!(e, Error::Divergence { .. } | Error::Hypothesis(_))
}

fn run_scenario(
    config: &ExperimentConfig,
    s: &ScenarioConfig,
    out: &Path,
    plots: bool,
) -> Result<ScenarioOutcome> {
    let mut outcome = ScenarioOutcome {
        name: s.name.clone(),
        rows: Vec::new(),
        notes: Vec::new(),
        trajectory_file: None,
    };
    let row = |check: Check, verdict, value, tolerance, detail: String| SummaryRow {
        scenario: s.name.clone(),
        check: check.name(),
        anchor: anchor(check, s.stability.as_ref().map(|st| st.method)),
        verdict,
        value,
        tolerance,
        detail,
    };

    let mut trajectory: Option<TrajectoryRecord> = None;
    let mut agent = None;
    if s.needs_trajectory() {
        let a = config.agent(s)?;
        let integ = s.integrator.as_ref().expect("validated");
        match simulate(&a, integ.t_end, integ.h, integ.sample_stride) {
            Ok(traj) => {
                let path = out.join(format!("{}.csv", s.name));
                write_trajectory(&path, &traj)?;
                outcome.trajectory_file = Some(path);
                trajectory = Some(traj);
            }
            Err(e) if is_check_failure(&e) => {
                for &check in s.checks.iter().filter(|c| c.needs_trajectory()) {
                    outcome
                        .rows
                        .push(row(check, Verdict::Fail, f64::NAN, f64::NAN, e.to_string()));
                }
            }
            Err(e) => return Err(e),
        }
        agent = Some(a);
    }

    for &check in &s.checks {
        let Some(traj) = trajectory.as_ref().filter(|_| check.needs_trajectory()) else {
            if check == Check::StabilityCertificate {
                outcome.rows.push(stability_row(config, s, &mut outcome.notes, &row)?);
            }
            continue;
        };
        let spec = agent.as_ref().and_then(|a| a.signal.quasi_period());
        let r = match check {
            Check::EnergyBalance => {
                let l = &traj.ledger;
                let tol = 1e-6 * (1.0 + l.environmental.abs() + l.delta_internal().abs());
                let worst = l.max_abs_residual();
                row(
                    check,
                    if worst <= tol { Verdict::Pass } else { Verdict::Fail },
                    worst,
                    tol,
                    format!(
                        "Z = {}, dU = {}, E = {}, final residual = {}",
                        l.dissipated,
                        l.delta_internal(),
                        l.environmental,
                        l.balance_residual()
                    ),
                )
            }
            Check::Corollary => {
                let c = traj.ledger.check_corollary();
                row(
                    check,
                    if c.pass { Verdict::Pass } else { Verdict::Fail },
                    c.delta_internal - c.environmental,
                    c.slack,
                    format!("dU = {}, E = {}", c.delta_internal, c.environmental),
                )
            }
            Check::HomoExpConv => {
                let spec = spec.expect("validated");
                let rep = pseudo_period_deviation(traj, spec)?;
                note_report(&mut outcome.notes, &rep);
                if plots {
                    let (ts, ds) = deviation_series(traj, &spec.advance)?;
                    let shifted: Vec<f64> = ts.iter().map(|t| t + spec.alpha).collect();
                    let svg = line_chart(
                        &format!("{}: |w(t) - w(gamma(t))|", s.name),
                        "log10(alpha + t)",
                        "log10 deviation",
                        &[Series { label: "deviation".into(), xs: &shifted, ys: ds }],
                        Axes::LogLog,
                    );
                    write_file(&out.join(format!("{}_deviation.svg", s.name)), &svg)?;
                }
                let bound = rep.quantity("bound_exponent").unwrap_or(f64::NAN);
                row(
                    check,
                    rep.verdict,
                    rep.quantity("fitted_exponent").unwrap_or(f64::NAN),
                    bound + crate::verify::EXPONENT_SLACK,
                    rep.detail.clone(),
                )
            }
            Check::Generalization => {
                let rep = environmental_energy_boundedness(
                    traj,
                    spec.expect("validated"),
                    s.plateau_checkpoint,
                )?;
                note_report(&mut outcome.notes, &rep);
                row(
                    check,
                    rep.verdict,
                    rep.quantity("relative_increment").unwrap_or(f64::NAN),
                    crate::verify::PLATEAU_FRACTION,
                    rep.detail.clone(),
                )
            }
            Check::Convergence => {
                let rep = convergence_check(traj, s.tail_fraction)?;
                note_report(&mut outcome.notes, &rep);
                let value = rep
                    .quantity("tail_spread")
                    .unwrap_or(f64::NAN)
                    .max(rep.quantity("tail_speed").unwrap_or(f64::NAN));
                row(
                    check,
                    rep.verdict,
                    value,
                    crate::verify::CONVERGENCE_TOL,
                    rep.detail.clone(),
                )
            }
            Check::StabilityCertificate => unreachable!(),
        };
        outcome.rows.push(r);
    }

    if plots {
        if let Some(traj) = &trajectory {
            write_trajectory_plots(out, &s.name, traj)?;
        }
    }
    Ok(outcome)
}

fn note_report(notes: &mut Vec<String>, rep: &TheoremReport) {
    let q: Vec<String> = rep.quantities.iter().map(|(k, v)| format!("{k} = {v}")).collect();
    let p: Vec<String> = rep.parameters.iter().map(|(k, v)| format!("{k} = {v}")).collect();
    notes.push(format!(
        "{} [{}]: {}; parameters: {}",
        rep.theorem.anchor(),
        rep.verdict,
        q.join(", "),
        p.join(", ")
    ));
}

fn t_grid(s: &ScenarioConfig, system: &TimeVaryingSystem) -> Vec<f64> {
    let st = s.stability.as_ref().expect("validated");
    if let Some(g) = &st.t_grid {
        return linear_grid(g.start, g.end, g.points);
    }
    let range = match (system.a_coefficient(), system.b_coefficient()) {
        (Coefficient::Sampled { times, .. }, _) | (_, Coefficient::Sampled { times, .. }) => {
            (times[0], *times.last().unwrap())
        }
        _ => (0.0, 1.0),
    };
    if system.is_constant() {
        vec![range.0]
    } else {
        linear_grid(range.0, range.1, T_GRID_POINTS)
    }
}

fn stability_row(
    config: &ExperimentConfig,
    s: &ScenarioConfig,
    notes: &mut Vec<String>,
    row: &dyn Fn(Check, Verdict, f64, f64, String) -> SummaryRow,
) -> Result<SummaryRow> {
    let check = Check::StabilityCertificate;
    let (st, system) = config.system(s)?;
    let grid = t_grid(s, &system);
    let result: Result<(Option<StabilityCertificate>, String)> = match st.method {
        StabilityMethod::Sun => {
            let m_grid = match &st.m_grid {
                Some(g) => Some(g.clone()),
                None => default_m_grid(&system, &grid)?,
            };
            match m_grid {
                Some(g) => certify_sun(&system, &g, &grid).map(|c| (c, String::new())),
                None => Ok((None, "damping has no positive lower bound".to_string())),
            }
        }
        StabilityMethod::Homogeneous => {
            let theta = st.theta.expect("checked while building the system");
            certify_homogeneous(theta, system.b_coefficient(), &grid, st.m_grid.as_deref()).map(|o| {
                let conditions = format!(
                    "lambda_min = {}, chi = {}, first condition {}, second condition as written {}, simplified {}",
                    o.lambda_min,
                    o.chi,
                    o.first_condition,
                    o.second_condition_literal,
                    o.second_condition_simplified
                );
                (o.certificate, conditions)
            })
        }
    };
    let (cert, context) = match result {
        Ok(v) => v,
        Err(e) if is_check_failure(&e) => {
            return Ok(row(
                check,
                Verdict::Fail,
                f64::NAN,
                0.0,
                format!("no certificate / hypothesis violated: {e}"),
            ))
        }
        Err(e) => return Err(e),
    };
    if !context.is_empty() {
        notes.push(context.clone());
    }
    let Some(cert) = cert else {
        return Ok(row(
            check,
            Verdict::Fail,
            f64::NAN,
            0.0,
            format!("no certificate / hypothesis violated ({} grid nodes) {context}", grid.len())
                .trim_end()
                .to_string(),
        ));
    };
    let mut detail = format!(
        "m = {}, l = {}, c = {}, lambda = {}, grid nodes = {}",
        cert.m, cert.l, cert.c, cert.lambda, cert.grid_nodes
    );
    let mut verdict = Verdict::Pass;
    if st.validate {
        match validate_certificate(&system, &cert) {
            Ok(env) => {
                let _ = write!(
                    detail,
                    "; envelope gamma_hat = {}, worst ratio = {}, violations = {}",
                    env.gamma_hat, env.worst_ratio, env.violations
                );
                if !env.pass {
                    verdict = Verdict::Fail;
                }
            }
            Err(e) if is_check_failure(&e) => {
                verdict = Verdict::Fail;
                let _ = write!(detail, "; validation failed: {e}");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(row(check, verdict, cert.margin, 0.0, detail))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Columns `t, w_1..w_m, wdot_1..wdot_m, V, K, U, Z_cum, E_cum, residual`.
pub fn write_trajectory(path: &Path, traj: &TrajectoryRecord) -> Result<()> {
    let m = traj.weight_dim();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("w_{i}")));
    header.extend((1..=m).map(|i| format!("wdot_{i}")));
    header.extend(["V", "K", "U", "Z_cum", "E_cum", "residual"].map(String::from));
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for s in &traj.samples {
        rec.clear();
        rec.push(s.t.to_string());
        rec.extend(s.w.iter().map(f64::to_string));
        rec.extend(s.wdot.iter().map(f64::to_string));
        rec.extend(
            [s.potential, s.kinetic, s.internal, s.dissipated, s.environmental, s.residual]
                .map(|v| v.to_string()),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))
}

fn fmt_f64(v: f64) -> String {
    v.to_string()
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["scenario", "check", "anchor", "verdict", "value", "tolerance", "detail"])?;
    for r in rows {
        w.write_record([
            r.scenario.as_str(),
            r.check,
            r.anchor,
            &r.verdict.to_string(),
            &fmt_f64(r.value),
            &fmt_f64(r.tolerance),
            &r.detail,
        ])?;
    }
    w.flush().map_err(io_err(path))
}

fn write_report(path: &Path, outcomes: &[ScenarioOutcome]) -> Result<()> {
    let mut text = String::new();
    for o in outcomes {
        let _ = writeln!(text, "== {} ==", o.name);
        for r in &o.rows {
            let _ = writeln!(
                text,
                "  {:<22} {:<15} value = {}  tolerance = {}  [{}]",
                r.check, r.verdict, r.value, r.tolerance, r.anchor
            );
            if !r.detail.is_empty() {
                let _ = writeln!(text, "      {}", r.detail);
            }
        }
        for n in &o.notes {
            let _ = writeln!(text, "    {n}");
        }
        text.push('\n');
    }
    let failed = outcomes
        .iter()
        .flat_map(|o| &o.rows)
        .filter(|r| r.verdict == Verdict::Fail)
        .count();
    let total = outcomes.iter().map(|o| o.rows.len()).sum::<usize>();
    let _ = writeln!(text, "{} checks, {} failed", total, failed);
    write_file(path, &text)
}

fn write_trajectory_plots(out: &Path, name: &str, traj: &TrajectoryRecord) -> Result<()> {
    let ts = traj.times();
    let m = traj.weight_dim();
    let weights: Vec<Series> = (0..m)
        .map(|i| Series {
            label: format!("w_{}", i + 1),
            xs: &ts,
            ys: traj.samples.iter().map(|s| s.w[i]).collect(),
        })
        .collect();
    write_file(
        &out.join(format!("{name}_weights.svg")),
        &line_chart(&format!("{name}: weights"), "t", "w", &weights, Axes::Linear),
    )?;
    let energy = [
        ("U", traj.samples.iter().map(|s| s.internal).collect()),
        ("Z", traj.samples.iter().map(|s| s.dissipated).collect()),
        ("E", traj.samples.iter().map(|s| s.environmental).collect()),
    ]
    .into_iter()
    .map(|(label, ys)| Series { label: label.into(), xs: &ts, ys })
    .collect::<Vec<_>>();
    write_file(
        &out.join(format!("{name}_energy.svg")),
        &line_chart(&format!("{name}: energy ledger"), "t", "energy", &energy, Axes::Linear),
    )
}
