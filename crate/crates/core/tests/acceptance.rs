//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p action-lab --test acceptance`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use action_lab::cli::{self, ExperimentConfig, RunOptions};
use action_lab::dynamics::{simulate, AgentConfig, DissipationSchedule, TrajectoryRecord};
use action_lab::potentials::{check_gradients, FeatureMap, Potential, PotentialModel, Target};
use action_lab::signals::{make_quasi_periodic, EnvironmentSignal, PeriodicBase};
use action_lab::stability::{
    bibo_decay_check, certify_homogeneous, certify_sun, default_m_grid, matrix_measure,
    validate_certificate, Coefficient, Norm, TimeVaryingSystem,
};
use action_lab::verify::{
    convergence_check, environmental_energy_boundedness, pseudo_period_deviation,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn suite_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/energy_suite.toml")
}

fn suite_agents() -> Vec<(String, AgentConfig, f64)> {
    let config = ExperimentConfig::load(&suite_path()).expect("bundled suite loads");
    config
        .scenario
        .iter()
        .map(|s| {
            let t_end = s.integrator.as_ref().unwrap().t_end;
            (s.name.clone(), config.agent(s).unwrap(), t_end)
        })
        .collect()
}

fn energy_invariant() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for (name, agent, t_end) in suite_agents() {
        let coarse = simulate(&agent, t_end, 1e-3, 10).unwrap().ledger;
        let fine = simulate(&agent, t_end, 5e-4, 20).unwrap().ledger;
        let tol = 1e-6 * (1.0 + coarse.environmental.abs() + coarse.delta_internal().abs());
        let r = coarse.balance_residual().abs();
        if r > tol {
            failures.push(format!("{name}: {r:e} > {tol:e}"));
        }
        if r > worst.0 {
            worst = (r, fine.balance_residual().abs());
        }
    }
    let ratio = worst.0 / worst.1;
    outcome(
        failures.is_empty() && ratio >= 8.0,
        format!(
            "worst |Z + dU - E| = {:.3e} at h = 1e-3, {:.3e} at h = 5e-4 (ratio {:.1}){}",
            worst.0,
            worst.1,
            ratio,
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn corollary() -> Outcome {
    let mut bad = Vec::new();
    let mut checked = 0;
    for (name, agent, t_end) in suite_agents() {
        // every schedule in the suite has a non-negative ratio, so ψ is monotone
        checked += 1;
        let c = simulate(&agent, t_end, 1e-3, 10).unwrap().ledger.check_corollary();
        if !c.pass {
            bad.push(format!("{name}: dU = {} > E = {}", c.delta_internal, c.environmental));
        }
    }
    outcome(bad.is_empty(), format!("{checked} monotone scenarios; {}", if bad.is_empty() { "dU <= E on all".into() } else { bad.join("; ") }))
}

fn gradient_oracle() -> Outcome {
    let kinds = [
        PotentialModel::quadratic_tracking(DMatrix::from_row_slice(
            3,
            2,
            &[1.0, 0.5, -0.3, 2.0, 0.7, -1.1],
        ))
        .unwrap(),
        PotentialModel::linear_regression(
            3,
            FeatureMap::WithBias,
            Target::Affine {
                weights: vec![0.4, -1.0, 2.0],
                bias: 0.3,
            },
        )
        .unwrap(),
        PotentialModel::two_layer_tanh(
            2,
            3,
            Target::TanhSum {
                weights: vec![1.0, -0.5],
                bias: 0.1,
            },
        )
        .unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_grad, mut worst_sym, mut worst_mixed) = (0.0f64, 0.0f64, 0.0f64);
    for model in &kinds {
        for _ in 0..20 {
            let x = DVector::from_fn(model.input_dim(), |_, _| rng.random_range(-1.5..1.5));
            let w = DVector::from_fn(model.weight_dim(), |_, _| rng.random_range(-1.5..1.5));
            let g = check_gradients(model, &x, &w).unwrap();
            worst_grad = worst_grad.max(g.max_rel_err_w).max(g.max_rel_err_x);
            let j = model.jacobian_blocks(&x, &w).unwrap();
            worst_sym = worst_sym.max((&j.jw - j.jw.transpose()).amax());
            worst_mixed = worst_mixed.max((&j.kw - j.jx.transpose()).amax());
        }
    }
    outcome(
        worst_grad <= 1e-5 && worst_sym <= 1e-10 && worst_mixed <= 1e-10,
        format!(
            "3 kinds x 20 points: max rel err {worst_grad:.2e}, |Jw - Jw^T| {worst_sym:.1e}, |Kw - Jx^T| {worst_mixed:.1e}"
        ),
    )
}

fn matrix_measure_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-7;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-2.0..2.0));
        let eye = DMatrix::<f64>::identity(4, 4);
        for norm in [Norm::One, Norm::Two, Norm::Inf] {
            let limit = (norm.induced(&(&eye + &p * h)) - 1.0) / h;
            worst = worst.max((matrix_measure(&p, norm).unwrap() - limit).abs());
        }
    }
    outcome(
        worst <= 1e-4,
        format!("100 matrices x 3 norms: max |mu - (|I + hP| - 1)/h| = {worst:.2e}"),
    )
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(lo..hi)));
    &q * d * q.transpose()
}

fn certificate_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut certified = 0;
    let mut violations = Vec::new();
    let mut attempts = 0;
    let mut worst_ratio = 0.0f64;
    while certified < 20 && attempts < 400 {
        attempts += 1;
        let n = rng.random_range(1..=3);
        let (system, cert) = if certified % 2 == 0 {
            let sym = random_spd(&mut rng, n, 0.8, 2.0);
            let skew = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.2..0.2));
            let a = sym + (&skew - skew.transpose());
            let b = random_spd(&mut rng, n, 0.5, 3.0);
            let system = TimeVaryingSystem::constant(a, b).unwrap();
            let Some(grid) = default_m_grid(&system, &[0.0]).unwrap() else { continue };
            match certify_sun(&system, &grid, &[0.0]).unwrap() {
                Some(c) => (system, c),
                None => continue,
            }
        } else {
            // diagonalizable B with positive spectrum and θ above both conditions
            let p = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.3..0.3));
            let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.5..3.0)));
            let b = &p * d * p.clone().try_inverse().unwrap();
            let coef = Coefficient::Constant(b);
            let probe = certify_homogeneous(100.0, &coef, &[0.0], None).unwrap();
            let theta = 1.1 * (4.0 * probe.lambda_min * (1.0 + probe.chi)).sqrt();
            let out = certify_homogeneous(theta, &coef, &[0.0], None).unwrap();
            let Some(c) = out.certificate else { continue };
            (TimeVaryingSystem::homogeneous(theta, coef, n).unwrap(), c)
        };
        let check = validate_certificate(&system, &cert).unwrap();
        worst_ratio = worst_ratio.max(check.worst_ratio);
        if !check.pass {
            violations.push(format!("system {certified}: ratio {}", check.worst_ratio));
        }
        certified += 1;
    }
    outcome(
        certified == 20 && violations.is_empty(),
        format!(
            "{certified} certified systems ({attempts} drawn), horizon 50/lambda, worst |Phi| e^(lambda t) / gamma_hat after burn-in = {worst_ratio:.4}{}",
            if violations.is_empty() { String::new() } else { format!("; {}", violations.join(", ")) }
        ),
    )
}

fn hand_certificate() -> Outcome {
    let eye = Coefficient::Constant(DMatrix::identity(1, 1));
    let three = certify_homogeneous(3.0, &eye, &[0.0], None).unwrap();
    let at_12 = certify_homogeneous(3.0, &eye, &[0.0], Some(&[1.2])).unwrap();
    let two = certify_homogeneous(2.0, &eye, &[0.0], None).unwrap();
    let m = three.certificate.as_ref().map(|c| c.m);
    let sqrt_c = at_12.certificate.as_ref().map(|c| c.c.sqrt());
    let pass = matches!(m, Some(m) if m > 0.5 && m < 1.5)
        && matches!(sqrt_c, Some(s) if (s - 1.16f64.sqrt()).abs() < 1e-12 && s < 1.2)
        && !two.second_condition_literal
        && two.certificate.is_none();
    outcome(
        pass,
        format!(
            "theta = 3: m = {:?}, sqrt(c) at m = 1.2 is {:?}; theta = 2: literal second condition {}, certificate {}",
            m,
            sqrt_c,
            two.second_condition_literal,
            if two.certificate.is_some() { "found" } else { "none" }
        ),
    )
}

fn bibo() -> Outcome {
    let system = TimeVaryingSystem::constant(
        DMatrix::from_element(1, 1, 1.5),
        DMatrix::from_element(1, 1, 1.0),
    )
    .unwrap();
    let cert = certify_sun(&system, &[1.2], &[0.0]).unwrap().expect("certified");
    let r = bibo_decay_check(&system, &cert, Some(-2.0), 1000.0).unwrap();
    outcome(
        r.pass && r.fitted_exponent <= -1.3,
        format!("q = -2: fitted tail exponent {:.3} (bound -1.5 + 0.2)", r.fitted_exponent),
    )
}

/// `x(t) = (1, −0.5) + (1/(1+t)²) e₁` tracked with `θ = 3`, `M = I`.
fn quasi_periodic_run() -> (AgentConfig, TrajectoryRecord) {
    let signal =
        make_quasi_periodic(PeriodicBase::Constant(vec![1.0, -0.5]), 1.0, 2.0, 1.0, 2.0).unwrap();
    let agent = AgentConfig::at_rest(
        DissipationSchedule::exponential(3.0).unwrap(),
        PotentialModel::identity_tracking(2).unwrap(),
        signal,
        DVector::zeros(2),
    )
    .unwrap();
    let traj = simulate(&agent, 2000.0, 0.01, 10).unwrap();
    (agent, traj)
}

fn pseudo_period(agent: &AgentConfig, traj: &TrajectoryRecord) -> Outcome {
    let r = pseudo_period_deviation(traj, agent.signal.quasi_period().unwrap()).unwrap();
    let e = r.quantity("fitted_exponent").unwrap();
    outcome(
        r.passed() && e <= -1.3,
        format!(
            "p = 2, theta = 3, t in [{}, {}]: fitted exponent {e:.3} (bound -1.5 + 0.2), envelope ratio {:.3}",
            r.quantity("fit_t_start").unwrap(),
            r.quantity("fit_t_end").unwrap(),
            r.quantity("envelope_ratio").unwrap()
        ),
    )
}

fn plateau(agent: &AgentConfig, traj: &TrajectoryRecord) -> Outcome {
    let r = environmental_energy_boundedness(traj, agent.signal.quasi_period().unwrap(), Some(200.0))
        .unwrap();
    outcome(
        r.passed(),
        format!(
            "C(200) = {:.6e}, C(400) = {:.6e}, relative increment {:.2e} (limit 1e-2)",
            r.quantity("c_at_checkpoint").unwrap(),
            r.quantity("c_e_hat").unwrap(),
            r.quantity("relative_increment").unwrap()
        ),
    )
}

fn convergence(traj: &TrajectoryRecord) -> Outcome {
    let r = convergence_check(traj, 0.1).unwrap();
    let target = [0.7, -1.2];
    let damped = AgentConfig::at_rest(
        DissipationSchedule::exponential(2.0).unwrap(),
        PotentialModel::identity_tracking(2).unwrap(),
        EnvironmentSignal::constant(target.to_vec()).unwrap(),
        DVector::zeros(2),
    )
    .unwrap();
    let dr = convergence_check(&simulate(&damped, 40.0, 0.01, 10).unwrap(), 0.1).unwrap();
    let err = (dr.quantity("w_bar_1").unwrap() - target[0])
        .abs()
        .max((dr.quantity("w_bar_2").unwrap() - target[1]).abs());
    outcome(
        r.passed() && dr.passed() && err <= 1e-6,
        format!(
            "tail spread {:.2e}, tail speed {:.2e}; constant-x minimizer error {err:.2e}",
            r.quantity("tail_spread").unwrap(),
            r.quantity("tail_speed").unwrap()
        ),
    )
}

fn determinism() -> Outcome {
    let config = ExperimentConfig::load(&suite_path()).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files = Vec::new();
    for (i, d) in dirs.iter().enumerate() {
        let opts = RunOptions {
            out: Some(d.path().to_path_buf()),
            jobs: if i == 0 { 1 } else { 4 },
            ..Default::default()
        };
        let summary = cli::run(&config, &opts).unwrap();
        let mut names: Vec<_> = summary
            .trajectory_files
            .iter()
            .map(|p| p.file_name().unwrap().to_owned())
            .collect();
        names.push("summary.csv".into());
        files = names;
    }
    let identical = files.iter().all(|f| {
        std::fs::read(dirs[0].path().join(f)).unwrap() == std::fs::read(dirs[1].path().join(f)).unwrap()
    });
    outcome(
        identical,
        format!("{} files compared across 1-worker and 4-worker runs", files.len()),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let (agent, traj) = quasi_periodic_run();
    let results: Vec<(&str, Outcome)> = vec![
        ("energy invariant", energy_invariant()),
        ("corollary dU <= E", corollary()),
        ("gradient / Jacobian oracle", gradient_oracle()),
        ("matrix measure oracle", matrix_measure_oracle()),
        ("certificate soundness", certificate_soundness()),
        ("hand-worked certificate", hand_certificate()),
        ("BIBO decay", bibo()),
        ("pseudo-period bound", pseudo_period(&agent, &traj)),
        ("environmental-energy plateau", plateau(&agent, &traj)),
        ("convergence", convergence(&traj)),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!(
            "criterion {:>2} {:<30} {}  {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "{} of {} criteria passed in {:.1}s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
