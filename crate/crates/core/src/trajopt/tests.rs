use super::*;
use crate::linalg::{finite_difference_jacobian, relative_error};
use nalgebra::{dmatrix, dvector};

fn vec_error(a: &DVector<f64>, b: &DVector<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

fn random_instance(rng: &mut ChaCha8Rng, stages: usize, nx: usize, nu: usize) -> (KktBlocks, Weights) {
    let blocks = KktBlocks {
        a: (0..stages).map(|_| random_matrix(rng, nx, nx)).collect(),
        b: (0..stages).map(|_| random_matrix(rng, nx, nu)).collect(),
    };
    let q = (0..stages).map(|_| random_spd(rng, nx)).collect();
    let r = (0..stages).map(|_| random_spd(rng, nu)).collect();
    (blocks, Weights::new(q, r).unwrap())
}

fn random_plan(rng: &mut ChaCha8Rng, stages: usize, nx: usize, nu: usize) -> Plan {
    Plan {
        u: (0..stages).map(|_| random_vector(rng, nu)).collect(),
        x: (0..stages).map(|_| random_vector(rng, nx)).collect(),
    }
}

/// Dense `C = ∂d/∂z` with columns ordered `(u_1, x_2, …)`.
fn dense_c(blocks: &KktBlocks) -> DMatrix<f64> {
    let s = blocks.stages();
    let nx = blocks.b[0].nrows();
    let nu = blocks.b[0].ncols();
    let cols = nu + nx;
    let mut c = DMatrix::zeros(s * nx, s * cols);
    for k in 0..s {
        c.view_mut((k * nx, k * cols), (nx, nu)).copy_from(&(-&blocks.b[k]));
        c.view_mut((k * nx, k * cols + nu), (nx, nx)).fill_with_identity();
        if k > 0 {
            c.view_mut((k * nx, (k - 1) * cols + nu), (nx, nx)).copy_from(&(-&blocks.a[k]));
        }
    }
    c
}

fn dense_w(weights: &Weights) -> DMatrix<f64> {
    let nu = weights.r[0].nrows();
    let nx = weights.q[0].nrows();
    let s = weights.stages();
    let mut w = DMatrix::zeros(s * (nu + nx), s * (nu + nx));
    for k in 0..s {
        let at = k * (nu + nx);
        w.view_mut((at, at), (nu, nu)).copy_from(&weights.r[k]);
        w.view_mut((at + nu, at + nu), (nx, nx)).copy_from(&weights.q[k]);
    }
    w
}

fn dense_y(y: &YBlocks) -> DMatrix<f64> {
    let s = y.diag.len();
    let nx = y.diag[0].nrows();
    let mut out = DMatrix::zeros(s * nx, s * nx);
    for k in 0..s {
        out.view_mut((k * nx, k * nx), (nx, nx)).copy_from(&y.diag[k]);
        if k + 1 < s {
            out.view_mut((k * nx, (k + 1) * nx), (nx, nx)).copy_from(&y.upper[k]);
            out.view_mut(((k + 1) * nx, k * nx), (nx, nx)).copy_from(&y.upper[k].transpose());
        }
    }
    out
}

fn dense_l(l: &CholeskyBlocks) -> DMatrix<f64> {
    let s = l.diag.len();
    let nx = l.diag[0].nrows();
    let mut out = DMatrix::zeros(s * nx, s * nx);
    for k in 0..s {
        out.view_mut((k * nx, k * nx), (nx, nx)).copy_from(&l.diag[k]);
        if k + 1 < s {
            out.view_mut(((k + 1) * nx, k * nx), (nx, nx)).copy_from(&l.lower[k]);
        }
    }
    out
}

fn flat_nu(nu: &[DVector<f64>]) -> DVector<f64> {
    crate::linalg::stack(&nu.iter().collect::<Vec<_>>())
}

/// Solves the full KKT matrix densely.
fn dense_kkt(blocks: &KktBlocks, weights: &Weights, g: &Plan, d: &[DVector<f64>]) -> (DVector<f64>, DVector<f64>) {
    let c = dense_c(blocks);
    let w = dense_w(weights);
    let (m, n) = c.shape();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&w);
    k.view_mut((0, n), (n, m)).copy_from(&c.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(&c);
    let rhs = crate::linalg::stack(&[&g.to_flat(), &flat_nu(d)]);
    let sol = k.lu().solve(&rhs).unwrap();
    (sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned())
}

fn check_instance(seed: u64, stages: usize, nx: usize, nu: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (blocks, weights) = random_instance(&mut rng, stages, nx, nu);
    let c = dense_c(&blocks);
    let w_inv = dense_w(&weights).try_inverse().unwrap();

    let y = assemble_y(&blocks, &weights);
    let y_dense = &c * &w_inv * c.transpose();
    assert!(relative_error(&dense_y(&y), &y_dense, 1.0) < 1e-10, "Y stages={stages} nx={nx}");

    let chol = block_cholesky(&y).unwrap();
    let l = dense_l(&chol);
    assert!(relative_error(&(&l * l.transpose()), &y_dense, 1.0) < 1e-8);
    let l_oracle = y_dense.clone().cholesky().unwrap().l();
    assert!(relative_error(&l, &l_oracle, 1.0) < 1e-10, "L stages={stages} nx={nx}");

    let g = random_plan(&mut rng, stages, nx, nu);
    let d: Vec<DVector<f64>> = (0..stages).map(|_| random_vector(&mut rng, nx)).collect();
    let (dz, dnu) = solve_kkt(&blocks, &weights, &chol, &g, &d);
    let (dz_oracle, dnu_oracle) = dense_kkt(&blocks, &weights, &g, &d);
    assert!(vec_error(&dz.to_flat(), &dz_oracle, 1e-12) < 1e-8);
    assert!(vec_error(&flat_nu(&dnu), &dnu_oracle, 1e-12) < 1e-8);
}

#[test]
fn dense_oracles_over_sizes() {
    let mut seed = 0;
    for stages in 1..=5 {
        for nq in [2, 4, 11] {
            seed += 1;
            check_instance(seed, stages, 2 * nq, nq.min(3));
        }
    }
}

#[test]
fn hopper_sized_kkt_matches_dense() {
    check_instance(99, 4, 8, 2);
}

#[test]
fn single_stage_y_is_control_plus_state_inverse() {
    let b = dmatrix![1.0; 2.0];
    let blocks = KktBlocks {
        a: vec![DMatrix::identity(2, 2)],
        b: vec![b.clone()],
    };
    let weights = Weights::new(vec![DMatrix::identity(2, 2) * 4.0], vec![dmatrix![2.0]]).unwrap();
    let y = assemble_y(&blocks, &weights);
    let expected = &b * b.transpose() * 0.5 + DMatrix::identity(2, 2) * 0.25;
    assert!((&y.diag[0] - expected).amax() < 1e-15);
    assert!(y.upper.is_empty());
}

#[test]
fn zero_dynamics_coupling_decouples_y() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut blocks, weights) = random_instance(&mut rng, 4, 4, 2);
    for a in &mut blocks.a {
        a.fill(0.0);
    }
    let y = assemble_y(&blocks, &weights);
    for k in 0..4 {
        let b = &blocks.b[k];
        let expected = b * &weights.r_inv[k] * b.transpose() + &weights.q_inv[k];
        assert!((&y.diag[k] - expected).amax() < 1e-14);
    }
    assert!(y.upper.iter().all(|m| m.amax() == 0.0));
    let chol = block_cholesky(&y).unwrap();
    for k in 0..4 {
        let l = y.diag[k].clone().cholesky().unwrap().l();
        assert!((&chol.diag[k] - l).amax() < 1e-14);
    }
    assert!(chol.lower.iter().all(|m| m.amax() < 1e-15));
}

#[test]
fn scalar_chain_cholesky_by_hand() {
    // Y = [[4, 2, 0], [2, 5, 2], [0, 2, 5]]: l11 = 2, l21 = 1, l22 = 2, l32 = 1, l33 = 2.
    let y = YBlocks {
        diag: vec![dmatrix![4.0], dmatrix![5.0], dmatrix![5.0]],
        upper: vec![dmatrix![2.0], dmatrix![2.0]],
    };
    let l = block_cholesky(&y).unwrap();
    let diag: Vec<f64> = l.diag.iter().map(|m| m[(0, 0)]).collect();
    let lower: Vec<f64> = l.lower.iter().map(|m| m[(0, 0)]).collect();
    assert_eq!(diag, vec![2.0, 2.0, 2.0]);
    assert_eq!(lower, vec![1.0, 1.0]);
    let v = l.solve(&[dvector![8.0], dvector![10.0], dvector![7.0]]);
    let v: Vec<f64> = v.iter().map(|x| x[0]).collect();
    for (got, want) in v.iter().zip([1.5, 1.0, 1.0]) {
        assert!((got - want).abs() < 1e-14);
    }
}

#[test]
fn indefinite_y_reports_stage() {
    let y = YBlocks {
        diag: vec![dmatrix![1.0], dmatrix![1.0]],
        upper: vec![dmatrix![2.0]],
    };
    assert!(matches!(block_cholesky(&y), Err(Error::NotPositiveDefinite { stage: 1 })));
}

#[test]
fn stationary_point_gives_zero_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (blocks, weights) = random_instance(&mut rng, 3, 4, 2);
    let chol = block_cholesky(&assemble_y(&blocks, &weights)).unwrap();
    let g = random_plan(&mut rng, 3, 4, 2).zeros_like();
    let d = vec![DVector::zeros(4); 3];
    let (dz, dnu) = solve_kkt(&blocks, &weights, &chol, &g, &d);
    assert_eq!(dz.norm_squared(), 0.0);
    assert!(dnu.iter().all(|v| v.norm() == 0.0));
}

#[test]
fn weights_reject_non_spd() {
    let bad = dmatrix![1.0, 2.0; 2.0, 1.0];
    assert!(Weights::new(vec![bad], vec![dmatrix![1.0]]).is_err());
    let asym = dmatrix![1.0, 0.1; 0.0, 1.0];
    assert!(Weights::new(vec![asym], vec![dmatrix![1.0]]).is_err());
    assert!(Weights::new(vec![], vec![]).is_err());
}

#[test]
fn lifted_weight_penalizes_position_and_velocity() {
    let qw = dvector![2.0, 3.0];
    let vw = dvector![0.5, 1.0];
    let h = 0.1;
    let w = lifted_weight(&qw, &vw, h);
    let x = dvector![0.1, -0.2, 0.4, 0.3];
    let v = (x.rows(2, 2) - x.rows(0, 2)) / h;
    let direct = x.rows(2, 2).component_mul(&x.rows(2, 2)).dot(&qw) + v.component_mul(&v).dot(&vw);
    assert!((x.dot(&(&w * &x)) - direct).abs() < 1e-12);
    assert!(w.clone().cholesky().is_some());
}

/// `q⁺ = S_p q⁻ + S_q q + S_u u + c + ε sin(q)` per stage.
struct TestDynamics {
    nq: usize,
    nu: usize,
    sp: Vec<DMatrix<f64>>,
    sq: Vec<DMatrix<f64>>,
    su: Vec<DMatrix<f64>>,
    c: Vec<DVector<f64>>,
    nonlinearity: f64,
}

impl TestDynamics {
    fn random(rng: &mut ChaCha8Rng, stages: usize, nq: usize, nu: usize, nonlinearity: f64) -> Self {
        let h = 0.1;
        TestDynamics {
            nq,
            nu,
            sp: (0..stages).map(|_| -DMatrix::identity(nq, nq) + random_matrix(rng, nq, nq) * 0.05).collect(),
            sq: (0..stages).map(|_| DMatrix::identity(nq, nq) * 2.0 + random_matrix(rng, nq, nq) * 0.05).collect(),
            su: (0..stages).map(|_| random_matrix(rng, nq, nu) * h).collect(),
            c: (0..stages).map(|_| random_vector(rng, nq) * 0.01).collect(),
            nonlinearity,
        }
    }
}

impl StageDynamics for TestDynamics {
    fn nq(&self) -> usize {
        self.nq
    }
    fn nu(&self) -> usize {
        self.nu
    }
    fn stages(&self) -> usize {
        self.c.len()
    }
    fn evaluate(
        &self,
        k: usize,
        q_prev: &DVector<f64>,
        q: &DVector<f64>,
        u: &DVector<f64>,
        _warm: Option<&DVector<f64>>,
        jacobians: bool,
    ) -> Result<StageEval> {
        let q_next = &self.sp[k] * q_prev + &self.sq[k] * q + &self.su[k] * u + &self.c[k] + q.map(f64::sin) * self.nonlinearity;
        let jacobians = jacobians.then(|| {
            let dq = &self.sq[k] + DMatrix::from_diagonal(&q.map(f64::cos)) * self.nonlinearity;
            (self.sp[k].clone(), dq, self.su[k].clone())
        });
        Ok(StageEval {
            q_next,
            jacobians,
            warm: None,
        })
    }
}

fn rollout(dynamics: &TestDynamics, x_init: &DVector<f64>, u: &[DVector<f64>]) -> Plan {
    let n = dynamics.nq;
    let mut x = Vec::new();
    let mut prev = x_init.clone();
    for (k, uk) in u.iter().enumerate() {
        let q_prev = prev.rows(0, n).into_owned();
        let q = prev.rows(n, n).into_owned();
        let next = dynamics.evaluate(k, &q_prev, &q, uk, None, false).unwrap().q_next;
        let lifted = crate::linalg::stack(&[&q, &next]);
        x.push(lifted.clone());
        prev = lifted;
    }
    Plan { u: u.to_vec(), x }
}

#[test]
fn feasible_rollout_has_zero_defect() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dynamics = TestDynamics::random(&mut rng, 4, 3, 2, 0.1);
    let x_init = random_vector(&mut rng, 6);
    let u: Vec<_> = (0..4).map(|_| random_vector(&mut rng, 2)).collect();
    let plan = rollout(&dynamics, &x_init, &u);
    let lin = evaluate_constraints(&dynamics, &x_init, &plan, &[], false).unwrap();
    assert!(lin.d.iter().all(|d| d.norm() == 0.0));
    assert!(lin.blocks.is_none());

    let mut shifted = plan.clone();
    let delta = dvector![0.01, -0.02, 0.03];
    let mut top = shifted.x[1].rows_mut(0, 3);
    top += &delta;
    let lin = evaluate_constraints(&dynamics, &x_init, &shifted, &[], false).unwrap();
    assert!((lin.d[1].rows(0, 3) - &delta).norm() < 1e-15);
}

#[test]
fn constraint_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (stages, nq, nu) = (4, 3, 2);
    let dynamics = TestDynamics::random(&mut rng, stages, nq, nu, 0.3);
    let x_init = random_vector(&mut rng, 2 * nq);
    let plan = random_plan(&mut rng, stages, 2 * nq, nu);
    let lin = evaluate_constraints(&dynamics, &x_init, &plan, &[], true).unwrap();
    let c = dense_c(lin.blocks.as_ref().unwrap());
    let fd = finite_difference_jacobian(
        |z: &DVector<f64>| {
            let p = Plan::from_flat(z, nu, 2 * nq);
            flat_nu(&evaluate_constraints(&dynamics, &x_init, &p, &[], false).unwrap().d)
        },
        &plan.to_flat(),
        1e-6,
    );
    assert!(relative_error(&c, &fd, 1.0) < 1e-4);
}

/// Time-varying LQR with affine dynamics solved by the backward Riccati
/// recursion, then rolled out forward.
fn riccati(
    blocks: &KktBlocks,
    offsets: &[DVector<f64>],
    weights: &Weights,
    x_init: &DVector<f64>,
    x_ref: &[DVector<f64>],
    u_ref: &[DVector<f64>],
) -> Plan {
    let s = blocks.stages();
    let nx = x_init.len();
    let mut p_next = DMatrix::zeros(nx, nx);
    let mut v_next = DVector::zeros(nx);
    let mut gains = vec![];
    for k in (0..s).rev() {
        let (a, b, c) = (&blocks.a[k], &blocks.b[k], &offsets[k]);
        let (q, r) = (&weights.q[k], &weights.r[k]);
        let p = q + &p_next;
        let v = -(q * &x_ref[k]) + &v_next;
        let huu = r + b.transpose() * &p * b;
        let huu_inv = huu.try_inverse().unwrap();
        let gain = &huu_inv * b.transpose() * &p * a;
        let ff = &huu_inv * (b.transpose() * &p * c + b.transpose() * &v - r * &u_ref[k]);
        let acl = a - b * &gain;
        let ccl = c - b * &ff;
        p_next = gain.transpose() * r * &gain + acl.transpose() * &p * &acl;
        v_next = gain.transpose() * r * (&ff + &u_ref[k]) + acl.transpose() * (&p * &ccl + &v);
        gains.push((gain, ff));
    }
    gains.reverse();
    let mut x = x_init.clone();
    let mut plan = Plan { u: vec![], x: vec![] };
    for k in 0..s {
        let (gain, ff) = &gains[k];
        let u = -(gain * &x) - ff;
        x = &blocks.a[k] * &x + &blocks.b[k] * &u + &offsets[k];
        plan.u.push(u);
        plan.x.push(x.clone());
    }
    plan
}

#[test]
fn affine_window_matches_riccati() {
    for (seed, stages, nq, nu) in [(7, 1, 2, 1), (8, 4, 2, 1), (9, 6, 4, 2), (10, 10, 3, 3)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dynamics = TestDynamics::random(&mut rng, stages, nq, nu, 0.0);
        let weights = Weights::new(
            (0..stages).map(|_| random_spd(&mut rng, 2 * nq)).collect(),
            (0..stages).map(|_| random_spd(&mut rng, nu)).collect(),
        )
        .unwrap();
        let problem = TrackingProblem {
            dynamics: &dynamics,
            weights: &weights,
            x_init: random_vector(&mut rng, 2 * nq),
            x_ref: (0..stages).map(|_| random_vector(&mut rng, 2 * nq)).collect(),
            u_ref: (0..stages).map(|_| random_vector(&mut rng, nu)).collect(),
        };
        let result = solve_tracking(&problem, None, &TrackingSettings::default()).unwrap();
        assert!(result.converged);
        assert_eq!(result.iterations, 1);

        let any = problem.reference_plan();
        let lin = evaluate_constraints(&dynamics, &problem.x_init, &any, &[], true).unwrap();
        let blocks = lin.blocks.unwrap();
        let offsets: Vec<DVector<f64>> = (0..stages)
            .map(|k| {
                let x_prev = if k == 0 { &problem.x_init } else { &any.x[k - 1] };
                let predicted = &blocks.a[k] * x_prev + &blocks.b[k] * &any.u[k];
                &any.x[k] - &lin.d[k] - predicted
            })
            .collect();
        let oracle = riccati(&blocks, &offsets, &weights, &problem.x_init, &problem.x_ref, &problem.u_ref);
        assert!(vec_error(&result.plan.to_flat(), &oracle.to_flat(), 1.0) < 1e-6, "seed {seed}");
    }
}

#[test]
fn reference_on_feasible_trajectory_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dynamics = TestDynamics::random(&mut rng, 5, 2, 1, 0.2);
    let x_init = random_vector(&mut rng, 4);
    let u: Vec<_> = (0..5).map(|_| random_vector(&mut rng, 1)).collect();
    let reference = rollout(&dynamics, &x_init, &u);
    let weights = Weights::uniform(5, &DMatrix::identity(4, 4), &(DMatrix::identity(4, 4) * 10.0), &DMatrix::identity(1, 1)).unwrap();
    let problem = TrackingProblem {
        dynamics: &dynamics,
        weights: &weights,
        x_init,
        x_ref: reference.x.clone(),
        u_ref: reference.u.clone(),
    };
    let result = solve_tracking(&problem, None, &TrackingSettings::default()).unwrap();
    assert!(result.converged);
    assert_eq!(result.iterations, 0);
    assert_eq!(result.first_control(), &u[0]);
}

#[test]
fn nonlinear_window_decreases_cost_from_feasible_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let stages = 8;
    let dynamics = TestDynamics::random(&mut rng, stages, 2, 2, 0.3);
    let x_ref_init = random_vector(&mut rng, 4);
    let u_ref: Vec<_> = (0..stages).map(|_| random_vector(&mut rng, 2)).collect();
    let reference = rollout(&dynamics, &x_ref_init, &u_ref);
    let x_init = &x_ref_init + dvector![0.05, 0.05, 0.05, 0.05];
    let start = rollout(&dynamics, &x_init, &u_ref);
    let weights = Weights::uniform(stages, &(DMatrix::identity(4, 4) * 10.0), &(DMatrix::identity(4, 4) * 100.0), &(DMatrix::identity(2, 2) * 0.1)).unwrap();
    let problem = TrackingProblem {
        dynamics: &dynamics,
        weights: &weights,
        x_init,
        x_ref: reference.x.clone(),
        u_ref,
    };
    let warm = WarmStart {
        plan: start,
        nu: vec![DVector::zeros(4); stages],
        stage_warm: vec![None; stages],
    };
    let result = solve_tracking(&problem, Some(&warm), &TrackingSettings::default()).unwrap();
    assert!(result.converged);
    assert!(result.iterations >= 2);
    assert_eq!(result.kkt_history.len(), result.iterations + 1);
    assert!(result.kkt_history.windows(2).all(|w| w[1] < w[0]));
    assert!(result.cost_history.windows(2).all(|w| w[1] < w[0]), "{:?}", result.cost_history);
}

#[test]
fn warm_start_shifts_and_duplicates() {
    let result = TrackingResult {
        plan: Plan {
            u: vec![dvector![1.0], dvector![2.0], dvector![3.0]],
            x: vec![dvector![10.0], dvector![20.0], dvector![30.0]],
        },
        nu: vec![dvector![-1.0], dvector![-2.0], dvector![-3.0]],
        warm: vec![None, Some(dvector![5.0]), None],
        iterations: 1,
        kkt_norm: 0.0,
        kkt_history: vec![],
        cost_history: vec![],
        converged: true,
    };
    let w = WarmStart::from_previous(&result);
    assert_eq!(w.plan.u, vec![dvector![2.0], dvector![3.0], dvector![3.0]]);
    assert_eq!(w.plan.x, vec![dvector![20.0], dvector![30.0], dvector![30.0]]);
    assert_eq!(w.nu, vec![dvector![-2.0], dvector![-3.0], dvector![-3.0]]);
    assert_eq!(w.stage_warm, vec![Some(dvector![5.0]), None, None]);
}

#[test]
fn objective_hessian_is_block_diagonal() {
    let weights = Weights::uniform(3, &lifted_weight(&dvector![1.0, 2.0], &dvector![0.1, 0.2], 0.01), &DMatrix::identity(4, 4), &DMatrix::identity(2, 2)).unwrap();
    let w = dense_w(&weights);
    for k in 0..3 {
        for l in 0..3 {
            if k != l {
                assert_eq!(w.view((k * 6, l * 6), (6, 6)).amax(), 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn structured_solve_matches_dense(seed in 0u64..10_000, stages in 1usize..6, nq in prop::sample::select(vec![2usize, 4, 11])) {
        check_instance(seed, stages, 2 * nq, 2);
    }
}
