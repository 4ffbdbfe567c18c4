//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any gated criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::{dvector, DMatrix, DVector};
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cimpc::contact::{self, simulate, step, step_jacobians, StepProgram, StepSettings};
use cimpc::harness::{
    bench_stage_solvers, data_dir, run_monte_carlo, run_scenario, EpisodeOutcome, PreparedScenario, Scenario,
    TerrainSpec,
};
use cimpc::lcp::{self, PathFollowingSettings, ResidualProgram};
use cimpc::linalg::{finite_difference_jacobian, relative_error, stack};
use cimpc::linearized::{
    condensed_solve, linearize_stage, linearized_step_jacobians, step_linearized, LinearizedProgram,
    LinearizedSettings, StageLinearization,
};
use cimpc::model::{ModelSpec, TerrainProfile};
use cimpc::mpc::{build_policy, Objective, PolicyConfig, ReferenceTrajectory};
use cimpc::trajopt::{assemble_y, block_cholesky, solve_kkt, CholeskyBlocks, KktBlocks, Plan, Weights, YBlocks};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn settings_at(rho: f64) -> StepSettings {
    StepSettings {
        solver: PathFollowingSettings {
            residual_tol: 1e-12,
            ..PathFollowingSettings::fixed(rho)
        },
        ..Default::default()
    }
}

fn scenario(name: &str) -> Scenario {
    Scenario::load(&data_dir().join("scenarios").join(format!("{name}.json"))).unwrap()
}

// ---------------------------------------------------------------- 1

fn physics_oracles() -> Check {
    let model = ModelSpec::builtin("particle").map_err(|e| e.to_string())?;
    let m = model.total_mass();
    let g = model.gravity;
    let h = model.timestep;
    let mu = model.contacts[0].friction;
    let sim = StepSettings::default();
    // At ε_r = 1e-8 the bilinear row alone leaves γ uncertain by ~1e-5.
    let converged = StepSettings {
        solver: PathFollowingSettings {
            residual_tol: 1e-12,
            ..sim.solver
        },
        ..sim
    };
    let rest = sim.solver.rho_target / (m * g * h);
    let flat = TerrainProfile::Flat;
    let zero = dvector![0.0, 0.0];
    let mut runner = TestRunner::new(Config {
        cases: 24,
        failure_persistence: None,
        ..Config::default()
    });
    let fail = |msg: String| TestCaseError::fail(msg);

    runner
        .run(&(-2.0..2.0f64), |x| {
            let q = dvector![x, rest];
            let r = step(&model, &flat, &q, &q, &zero, &converged).map_err(|e| fail(e.to_string()))?;
            let err = (r.contact.gamma[0] - m * g * h).abs();
            if err < 1e-6 {
                Ok(())
            } else {
                Err(fail(format!("resting impulse off by {err:.2e}")))
            }
        })
        .map_err(|e| format!("resting block: {e}"))?;

    runner
        .run(&(0.2..3.0f64, -1.0..1.0f64), |(v0, x)| {
            let mut prev = dvector![x - v0 * h, rest];
            let mut cur = dvector![x, rest];
            let mut v = v0;
            for k in 0..10 {
                let r = step(&model, &flat, &prev, &cur, &zero, &sim).map_err(|e| fail(e.to_string()))?;
                let dv = v - r.v_next[0];
                if (dv - mu * g * h).abs() >= 1e-6 {
                    return Err(fail(format!("v0 {v0}: step {k} decelerated by {dv} not {}", mu * g * h)));
                }
                v = r.v_next[0];
                prev = std::mem::replace(&mut cur, r.q_next);
            }
            Ok(())
        })
        .map_err(|e| format!("sliding block: {e}"))?;

    runner
        .run(&(-0.95..0.95f64), |fraction| {
            let push = dvector![fraction * mu * m * g * h, 0.0];
            let mut prev = dvector![0.0, 0.0];
            let mut cur = prev.clone();
            for k in 0..20 {
                let r = step(&model, &flat, &prev, &cur, &push, &sim).map_err(|e| fail(e.to_string()))?;
                let moved = (r.q_next[0] - cur[0]).abs();
                if moved >= 1e-6 {
                    return Err(fail(format!("push {fraction}: step {k} slid {moved:.2e} m")));
                }
                prev = std::mem::replace(&mut cur, r.q_next);
            }
            Ok(())
        })
        .map_err(|e| format!("sticking block: {e}"))?;

    runner
        .run(&(50.0..200.0f64, -2.0..2.0f64, -2.0..2.0f64), |(z0, vx, vz)| {
            let q0 = dvector![0.0, z0];
            let q1 = dvector![vx * h, z0 + vz * h];
            let controls = vec![zero.clone(); 100];
            let traj = simulate(&model, &flat, &q0, &q1, &controls, &[], &sim).map_err(|e| fail(e.to_string()))?;
            for (k, q) in traj.configurations.iter().enumerate().skip(2) {
                // Semi-implicit Euler: v_k = v_1 − g h (k − 1), z_k = z_1 + h Σ v_j.
                let j = (k - 1) as f64;
                let x = vx * h * (j + 1.0);
                let z = z0 + vz * h * (j + 1.0) - g * h * h * j * (j + 1.0) / 2.0;
                let err = (q[0] - x).abs().max((q[1] - z).abs());
                if err >= 1e-6 {
                    return Err(fail(format!("step {k}: off closed form by {err:.2e}")));
                }
            }
            Ok(())
        })
        .map_err(|e| format!("ballistic flight: {e}"))?;

    Ok("resting impulse, sliding deceleration, sticking and ballistic flight within 1e-6 over 4 × 24 cases".into())
}

// ---------------------------------------------------------------- 2

fn contact_quality(
    model: &ModelSpec,
    terrain: &TerrainProfile,
    traj: &contact::Trajectory,
) -> (f64, f64) {
    let mut pen: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for q in &traj.configurations[2..] {
        pen = pen.max(-model.signed_distance(q, terrain).min());
    }
    for c in &traj.contacts {
        for i in 0..c.gamma.len() {
            comp = comp.max(c.gamma[i] * c.s_phi[i]);
        }
    }
    (pen, comp)
}

fn hard_contact(closed_loop: &[(String, EpisodeOutcome)]) -> Check {
    let settings = StepSettings::default();
    ensure(settings.solver.rho_target == 1e-6, || "simulator target is not 1e-6".into())?;
    let steps = TerrainSpec::RandomSteps {
        start: 0.1,
        tread: [0.08, 0.15],
        rise: [0.03, 0.05],
        ramp: 0.01,
        count: 10,
        down: 0.2,
        seed: 1,
    }
    .build()
    .map_err(|e| e.to_string())?;
    let mut runs = 0;
    let (mut pen, mut comp): (f64, f64) = (0.0, 0.0);
    let mut check = |model: &ModelSpec, terrain: &TerrainProfile, q0: DVector<f64>, q1: DVector<f64>, u: Vec<DVector<f64>>| {
        let traj = simulate(model, terrain, &q0, &q1, &u, &[], &settings).map_err(|e| format!("{}: {e}", model.name))?;
        let (p, c) = contact_quality(model, terrain, &traj);
        pen = pen.max(p);
        comp = comp.max(c);
        runs += 1;
        Ok::<_, String>(())
    };
    // Open-loop replays of every shipped reference.
    for entry in std::fs::read_dir(data_dir().join("references")).map_err(|e| e.to_string())? {
        let reference = ReferenceTrajectory::load(&entry.map_err(|e| e.to_string())?.path()).map_err(|e| e.to_string())?;
        let model = ModelSpec::builtin(&reference.model).map_err(|e| e.to_string())?;
        let controls: Vec<DVector<f64>> = (0..reference.stages()).map(|k| reference.control(k)).collect();
        let q0 = reference.configuration(&model, 0);
        let q1 = reference.configuration(&model, 1);
        check(&model, &TerrainProfile::Flat, q0, q1, controls)?;
    }
    // Unactuated hopper drops onto flat ground, steps and a sinusoid.
    let hopper = ModelSpec::builtin("hopper").map_err(|e| e.to_string())?;
    let wave = TerrainProfile::Sinusoidal {
        amplitude: 0.03,
        wavelength: 0.8,
        phase: 0.0,
        offset: 0.0,
    };
    for (terrain, x) in [(&TerrainProfile::Flat, 0.0), (&steps, 0.3), (&steps, 0.6), (&wave, 0.1), (&wave, 0.3)] {
        let q = dvector![x, 0.8, 0.1, 0.5];
        let q = hopper.translate(&q, 0.0, contact::penetration_correction(&hopper, terrain, &q));
        check(&hopper, terrain, q.clone(), q, vec![DVector::zeros(hopper.nu); 150])?;
    }
    let open_loop = format!("{runs} open-loop runs: penetration {pen:.2e} m, max γ·s_φ {comp:.2e}");
    ensure(pen < 1e-5 && comp < 2e-6, || open_loop.clone())?;
    let mut cl_pen: f64 = 0.0;
    let mut cl_comp: f64 = 0.0;
    for (_, o) in closed_loop {
        cl_pen = cl_pen.max(o.record.max_penetration);
        cl_comp = cl_comp.max(o.record.max_complementarity);
    }
    let closed = format!("{} closed-loop episodes: penetration {cl_pen:.2e} m, max γ·s_φ {cl_comp:.2e}", closed_loop.len());
    ensure(cl_pen < 1e-5 && cl_comp < 2e-6, || closed.clone())?;
    Ok(format!("{open_loop}; {closed}"))
}

// ---------------------------------------------------------------- 3

fn hopper_state(rng: &mut ChaCha8Rng, h: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let leg: f64 = rng.random_range(-0.3..0.3);
    let r = 0.5;
    let q = dvector![rng.random_range(-0.5..0.5), r * leg.cos() + rng.random_range(-0.002..0.01), leg, r];
    let v = DVector::from_fn(4, |_, _| rng.random_range(-0.5..0.5));
    let q_prev = &q - v * h;
    let u = dvector![rng.random_range(-0.1..0.1), 3.0 * 9.81 * h + rng.random_range(-0.1..0.1)];
    (q_prev, q, u)
}

fn assemble(n: usize, nu: usize, a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, 2 * n + nu);
    m.view_mut((0, 0), (n, n)).copy_from(a);
    m.view_mut((0, n), (n, n)).copy_from(b);
    m.view_mut((0, 2 * n), (n, nu)).copy_from(c);
    m
}

fn differentiation() -> Check {
    let model = ModelSpec::builtin("hopper").map_err(|e| e.to_string())?;
    let terrain = TerrainProfile::Flat;
    let (n, nu, h) = (model.nq, model.nu, model.timestep);
    let rho_grad = 1e-4;
    let fixed = settings_at(rho_grad).solver;
    let lin_settings = LinearizedSettings {
        solver: PathFollowingSettings {
            residual_tol: 1e-13,
            ..PathFollowingSettings::fixed(rho_grad)
        },
        ..LinearizedSettings::new(rho_grad)
    };
    let split = |t: &DVector<f64>| -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        (t.rows(0, n).into(), t.rows(n, n).into(), t.rows(2 * n, nu).into())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let states = 24;
    let (mut worst_nl, mut worst_lin): (f64, f64) = (0.0, 0.0);
    for trial in 0..states {
        let (q_prev, q, u) = hopper_state(&mut rng, h);
        let theta = stack(&[&q_prev, &q, &u]);

        let result = step(&model, &terrain, &q_prev, &q, &u, &StepSettings::default()).map_err(|e| e.to_string())?;
        let jac = step_jacobians(&model, &terrain, &q_prev, &q, &u, &result, rho_grad).map_err(|e| e.to_string())?;
        let program = StepProgram::new(&model, &terrain, &q_prev, &q, &u).map_err(|e| e.to_string())?;
        let anchor = lcp::solve(&program, Some(&result.w), &fixed).map_err(|e| e.to_string())?.w;
        let fd = finite_difference_jacobian(
            |t| {
                let (a, b, c) = split(t);
                let p = StepProgram::new(&model, &terrain, &a, &b, &c).unwrap();
                lcp::solve(&p, Some(&anchor), &fixed).unwrap().w.rows(0, n).into_owned()
            },
            &theta,
            1e-5,
        );
        let err = relative_error(&assemble(n, nu, &jac.wrt_q_prev, &jac.wrt_q, &jac.wrt_u), &fd, 1e-6);
        worst_nl = worst_nl.max(err);
        ensure(err < 1e-4, || format!("nonlinear state {trial}: relative error {err:.2e}"))?;

        let exact = step(&model, &terrain, &q_prev, &q, &u, &settings_at(1e-6)).map_err(|e| e.to_string())?;
        let stage = linearize_stage(&model, &terrain, 0, &q_prev, &q, &u, &exact.q_next, &exact.contact)
            .map_err(|e| e.to_string())?;
        let moved = &stage.theta_bar + DVector::from_fn(theta.len(), |_, _| rng.random_range(-0.01..0.01));
        let (a, b, c) = split(&moved);
        let lin = step_linearized(&stage, &a, &b, &c, None, None, &lin_settings).map_err(|e| e.to_string())?;
        let jac = linearized_step_jacobians(&stage, &a, &b, &c, None, &lin, rho_grad, false).map_err(|e| e.to_string())?;
        let fd = finite_difference_jacobian(
            |t| {
                let (a, b, c) = split(t);
                step_linearized(&stage, &a, &b, &c, None, Some(&lin.w), &lin_settings).unwrap().q_next
            },
            &moved,
            1e-6,
        );
        let err = relative_error(&assemble(n, nu, &jac.wrt_q_prev, &jac.wrt_q, &jac.wrt_u), &fd, 1e-6);
        worst_lin = worst_lin.max(err);
        ensure(err < 1e-4, || format!("linearized state {trial}: relative error {err:.2e}"))?;
    }
    Ok(format!(
        "{states} hopper states at ρ = {rho_grad:e}: worst relative error nonlinear {worst_nl:.2e}, linearized {worst_lin:.2e}"
    ))
}

// ---------------------------------------------------------------- 4

fn random_stage(rng: &mut ChaCha8Rng, n: usize, c: usize) -> StageLinearization {
    let k = 4 * c;
    let mut mat = |r: usize, cols: usize| DMatrix::from_fn(r, cols, |_, _| rng.random_range(-1.0..1.0));
    let e = mat(n, n) + DMatrix::identity(n, n) * (n as f64 + 2.0);
    let f = mat(n, k);
    let g = mat(k, n);
    let h = mat(k, k);
    let mut cm = DMatrix::zeros(n + k, n + 2 * k);
    cm.view_mut((0, 0), (n, n)).copy_from(&e);
    cm.view_mut((0, n), (n, k)).copy_from(&f);
    cm.view_mut((n, 0), (k, n)).copy_from(&g);
    cm.view_mut((n, n), (k, k)).copy_from(&h);
    cm.view_mut((n, n + k), (k, k)).fill_with_identity();
    let d = mat(n + k, 3);
    StageLinearization::from_blocks(
        0,
        1,
        0.01,
        DVector::from_element(n + 2 * k, 0.5),
        DVector::zeros(3),
        DVector::zeros(n + k),
        cm,
        d,
    )
    .unwrap()
}

fn random_cone(rng: &mut ChaCha8Rng, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |_, _| 10f64.powf(rng.random_range(-3.0..0.0)))
}

fn dense_condensed_error(stage: &StageLinearization, y: &DVector<f64>, z: &DVector<f64>, r: &DVector<f64>) -> f64 {
    let (k, len) = (y.len(), r.len());
    let n = len - 2 * k;
    let condensed = condensed_solve(stage, y, z, r).unwrap();
    let mut w = DVector::zeros(len);
    w.rows_mut(n, k).copy_from(y);
    w.rows_mut(n + k, k).copy_from(z);
    let program = LinearizedProgram::new(stage, &DVector::zeros(3), None).unwrap();
    let dense = program.jacobian(&w).lu().solve(r).unwrap();
    (&condensed - &dense).norm() / dense.norm()
}

fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = matrix(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

fn place(out: &mut DMatrix<f64>, r: usize, c: usize, block: &DMatrix<f64>) {
    out.view_mut((r, c), block.shape()).copy_from(block);
}

/// Dense oracle errors `(Y, L, KKT)` of the block recursions on one random instance.
fn block_errors(rng: &mut ChaCha8Rng, stages: usize, nx: usize, nu: usize) -> (f64, f64, f64) {
    let blocks = KktBlocks {
        a: (0..stages).map(|_| matrix(rng, nx, nx)).collect(),
        b: (0..stages).map(|_| matrix(rng, nx, nu)).collect(),
    };
    let weights = Weights::new((0..stages).map(|_| spd(rng, nx)).collect(), (0..stages).map(|_| spd(rng, nu)).collect())
        .unwrap();
    let cols = nu + nx;
    let mut c = DMatrix::zeros(stages * nx, stages * cols);
    let mut w = DMatrix::zeros(stages * cols, stages * cols);
    for k in 0..stages {
        place(&mut c, k * nx, k * cols, &(-&blocks.b[k]));
        place(&mut c, k * nx, k * cols + nu, &DMatrix::identity(nx, nx));
        if k > 0 {
            place(&mut c, k * nx, (k - 1) * cols + nu, &(-&blocks.a[k]));
        }
        place(&mut w, k * cols, k * cols, &weights.r[k]);
        place(&mut w, k * cols + nu, k * cols + nu, &weights.q[k]);
    }
    let y_dense = &c * w.clone().try_inverse().unwrap() * c.transpose();

    let y: YBlocks = assemble_y(&blocks, &weights);
    let mut y_rec = DMatrix::zeros(stages * nx, stages * nx);
    for k in 0..stages {
        place(&mut y_rec, k * nx, k * nx, &y.diag[k]);
        if k + 1 < stages {
            place(&mut y_rec, k * nx, (k + 1) * nx, &y.upper[k]);
            place(&mut y_rec, (k + 1) * nx, k * nx, &y.upper[k].transpose());
        }
    }
    let chol: CholeskyBlocks = block_cholesky(&y).unwrap();
    let mut l = DMatrix::zeros(stages * nx, stages * nx);
    for k in 0..stages {
        place(&mut l, k * nx, k * nx, &chol.diag[k]);
        if k + 1 < stages {
            place(&mut l, (k + 1) * nx, k * nx, &chol.lower[k]);
        }
    }
    let l_dense = y_dense.clone().cholesky().unwrap().l();

    let g = Plan {
        u: (0..stages).map(|_| vector(rng, nu)).collect(),
        x: (0..stages).map(|_| vector(rng, nx)).collect(),
    };
    let d: Vec<DVector<f64>> = (0..stages).map(|_| vector(rng, nx)).collect();
    let (dz, dnu) = solve_kkt(&blocks, &weights, &chol, &g, &d);
    let (m, nz) = c.shape();
    let mut kkt = DMatrix::zeros(nz + m, nz + m);
    place(&mut kkt, 0, 0, &w);
    place(&mut kkt, 0, nz, &c.transpose());
    place(&mut kkt, nz, 0, &c);
    let rhs = stack(&[&g.to_flat(), &stack(&d.iter().collect::<Vec<_>>())]);
    let oracle = kkt.lu().solve(&rhs).unwrap();
    let ours = stack(&[&dz.to_flat(), &stack(&dnu.iter().collect::<Vec<_>>())]);
    (
        relative_error(&y_rec, &y_dense, 1.0),
        relative_error(&l, &l_dense, 1.0),
        (&ours - &oracle).norm() / oracle.norm().max(1e-12),
    )
}

fn structured_solvers() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let n = rng.random_range(2..12);
        let c = rng.random_range(1..5);
        let stage = random_stage(&mut rng, n, c);
        let y = random_cone(&mut rng, 4 * c);
        let z = random_cone(&mut rng, 4 * c);
        let r = vector(&mut rng, n + 8 * c);
        let err = dense_condensed_error(&stage, &y, &z, &r);
        worst = worst.max(err);
        ensure(err < 1e-10, || format!("condensed stage {trial}: {err:.2e}"))?;
    }
    let mut worst_block: f64 = 0.0;
    let mut instances = 0;
    for stages in 2..=6 {
        for nq in [2, 4, 9, 11] {
            let (ey, el, ek) = block_errors(&mut rng, stages, 2 * nq, nq.min(8));
            instances += 1;
            worst_block = worst_block.max(ey).max(el).max(ek);
            ensure(ey < 1e-8 && el < 1e-8 && ek < 1e-8, || {
                format!("H = {stages}, nq = {nq}: Y {ey:.2e}, L {el:.2e}, KKT {ek:.2e}")
            })?;
        }
    }
    Ok(format!(
        "condensed vs dense LU worst {worst:.2e} over 100 stages; Y, block Cholesky and elimination worst {worst_block:.2e} over {instances} instances"
    ))
}

// ---------------------------------------------------------------- 5

/// Least-squares slope of `log y` against `log x`.
fn log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x.ln() / n, b + y.ln() / n));
    let (num, den) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + (x.ln() - mx) * (y.ln() - my), b + (x.ln() - mx).powi(2)));
    num / den
}

fn complexity_trend() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 11;
    let mut by_c = Vec::new();
    for c in [2, 4, 8, 16] {
        let stage = random_stage(&mut rng, n, c);
        let y = random_cone(&mut rng, 4 * c);
        let z = random_cone(&mut rng, 4 * c);
        let r = vector(&mut rng, n + 8 * c);
        let reps = 400 / c;
        let start = Instant::now();
        for _ in 0..reps {
            std::hint::black_box(condensed_solve(&stage, &y, &z, &r).unwrap());
        }
        by_c.push((c as f64, start.elapsed().as_secs_f64() / reps as f64));
    }

    let model = ModelSpec::builtin("hopper").map_err(|e| e.to_string())?;
    let reference = ReferenceTrajectory::load(&data_dir().join("references/hopper-hop-in-place.json")).map_err(|e| e.to_string())?;
    let objective = Objective {
        configuration: vec![10.0; 4],
        velocity: vec![0.1; 4],
        control: vec![1.0; 2],
        terminal: 1.0,
    };
    let mut by_h = Vec::new();
    for horizon in [5, 10, 20, 40] {
        let config = PolicyConfig::new(&model, horizon);
        let (mut policy, _) = build_policy(&model, &reference, &config, &objective, None).map_err(|e| e.to_string())?;
        let ticks = 30;
        let start = Instant::now();
        for t in 1..=ticks {
            let q_prev = reference.configuration(&model, t - 1);
            let q = reference.configuration(&model, t);
            std::hint::black_box(policy.step(&q_prev, &q, t));
        }
        by_h.push((horizon as f64, start.elapsed().as_secs_f64() / ticks as f64));
    }
    let fmt = |v: &[(f64, f64)], unit: &str| {
        v.iter().map(|(x, t)| format!("{unit}={x} {:.3} ms", t * 1e3)).collect::<Vec<_>>().join(", ")
    };
    Ok(format!(
        "condensed solve at n = {n}: {} (log-log slope {:.2} in c); MPC solve: {} (slope {:.2} in H)",
        fmt(&by_c, "c"),
        log_slope(&by_c),
        fmt(&by_h, "H"),
        log_slope(&by_h)
    ))
}

// ---------------------------------------------------------------- 6

const CLOSED_LOOP: [&str; 7] = [
    "hopper-flat",
    "hopper-sinusoidal",
    "hopper-piecewise",
    "quadruped-payload",
    "pushbot-push",
    "biped-flat",
    "biped-incline",
];

fn closed_loop(runs: &[(String, EpisodeOutcome)], seconds: f64) -> Check {
    let mut notes = Vec::new();
    for (name, o) in runs {
        ensure(o.success, || format!("{name}: {}", o.failures.join("; ")))?;
        let m = &o.metrics;
        let note = match name.as_str() {
            "pushbot-push" => {
                let reference = ReferenceTrajectory::load(&scenario(name).reference).map_err(|e| e.to_string())?;
                let in_reference = reference.contacts.iter().map(|c| c.gamma[0]).fold(0.0, f64::max);
                let wall = m.impulse_totals[0];
                ensure(wall > 1e-3 && in_reference < 1e-5, || {
                    format!("pushbot wall impulse {wall:.3e}, reference {in_reference:.1e}")
                })?;
                format!("{name} upright, wall impulse {wall:.2} N·s vs {in_reference:.0e} in reference")
            }
            "biped-incline" => format!("{name} {} steps, x {:.2} m", m.steps, o.record.configurations.last().unwrap()[0]),
            _ => format!("{name} {} steps", m.steps),
        };
        notes.push(note);
    }
    ensure(seconds < 600.0, || format!("took {seconds:.0} s"))?;
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------- 7

fn ablation(on: &EpisodeOutcome, off: &EpisodeOutcome) -> Check {
    let terrain = scenario("hopper-steps-heuristic").terrain;
    ensure(matches!(terrain, TerrainSpec::RandomSteps { rise: [a, b], .. } if a == 0.05 && b == 0.05), || {
        "ablation terrain does not use 0.05 m steps".into()
    })?;
    ensure(on.success && on.metrics.steps >= 20, || format!("heuristic on: {}", on.failures.join("; ")))?;
    ensure(!off.success, || "heuristic off also succeeded".into())?;
    Ok(format!(
        "heuristic on: {} hops, success; heuristic off: {}",
        on.metrics.steps,
        off.failures.join("; ")
    ))
}

// ---------------------------------------------------------------- 8

fn monte_carlo() -> Check {
    let s = scenario("hopper-monte-carlo");
    let p = s.perturbation.unwrap();
    let prepared = PreparedScenario::new(&s, None).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let report = run_monte_carlo(&prepared, 25);
    let seconds = start.elapsed().as_secs_f64();
    let detail = format!(
        "{}/{} recovered (translation ±{} m, tilt ±{} rad, joints ±{}) in {seconds:.0} s",
        report.successes, report.samples, p.translation, p.tilt, p.joint
    );
    ensure(report.successes >= 24 && seconds < 600.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 9

fn bench_report() -> Check {
    let prepared = PreparedScenario::new(&scenario("hopper-flat"), None).map_err(|e| e.to_string())?;
    let outcome = prepared.run(0).map_err(|e| e.to_string())?;
    let t = outcome.metrics.timing;
    let budget = 1.0 / prepared.policy.config.rate;
    let solver = bench_stage_solvers(&prepared.policy, 20).map_err(|e| e.to_string())?;
    Ok(format!(
        "hopper replanning over {} ticks: p50 {:.2} ms, p90 {:.2} ms, p99 {:.2} ms, max {:.2} ms against a {:.0} ms budget; dense/condensed stage solve {:.2}x",
        t.samples,
        t.p50 * 1e3,
        t.p90 * 1e3,
        t.p99 * 1e3,
        t.max * 1e3,
        budget * 1e3,
        solver.ratio
    ))
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
    })
}

fn timed(limit: Option<f64>, f: impl FnOnce() -> Check) -> (Check, f64) {
    let start = Instant::now();
    let result = guarded(f);
    let seconds = start.elapsed().as_secs_f64();
    let result = match (result, limit) {
        (Ok(_), Some(limit)) if seconds >= limit => Err(format!("runtime {seconds:.1} s exceeds {limit} s")),
        (r, _) => r,
    };
    (result, seconds)
}

fn run_named(name: &str) -> (String, EpisodeOutcome) {
    let outcome = run_scenario(&scenario(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    (name.to_string(), outcome)
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    assert!(Path::new(&data_dir()).is_dir());
    let start = Instant::now();
    eprintln!("running closed-loop scenarios...");
    let cl_start = Instant::now();
    let runs: Vec<(String, EpisodeOutcome)> = CLOSED_LOOP.iter().map(|n| run_named(n)).collect();
    let cl_seconds = cl_start.elapsed().as_secs_f64();
    let ab_start = Instant::now();
    let (_, on) = run_named("hopper-steps-heuristic");
    let (_, off) = run_named("hopper-steps-no-heuristic");
    let ab_seconds = ab_start.elapsed().as_secs_f64();

    let results: Vec<(&str, bool, Check, f64)> = vec![
        {
            let (r, s) = timed(Some(5.0), physics_oracles);
            ("physics oracles", true, r, s)
        },
        {
            let (r, s) = timed(Some(30.0), || hard_contact(&runs));
            ("hard contact", true, r, s)
        },
        {
            let (r, s) = timed(Some(30.0), differentiation);
            ("differentiation", true, r, s)
        },
        {
            let (r, s) = timed(Some(30.0), structured_solvers);
            ("structured solvers", true, r, s)
        },
        {
            let (r, s) = timed(None, complexity_trend);
            ("complexity trend", false, r, s)
        },
        ("closed loop", true, guarded(|| closed_loop(&runs, cl_seconds)), cl_seconds),
        ("height heuristic ablation", true, guarded(|| ablation(&on, &off)), ab_seconds),
        {
            let (r, s) = timed(None, monte_carlo);
            ("monte carlo", true, r, s)
        },
        {
            let (r, s) = timed(None, bench_report);
            ("benchmark report", false, r, s)
        },
    ];

    let mut failed = 0;
    for (i, (name, gated, result, seconds)) in results.iter().enumerate() {
        let (tag, detail) = match (result, gated) {
            (Ok(d), true) => ("PASS", d),
            (Ok(d), false) => ("PASS", &format!("informational, not gated: {d}")),
            (Err(e), _) => {
                failed += 1;
                ("FAIL", e)
            }
        };
        println!("{tag} {} {name} ({seconds:.1} s): {detail}", i + 1);
    }
    println!("acceptance: {} of 9 criteria met in {:.0} s", 9 - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
