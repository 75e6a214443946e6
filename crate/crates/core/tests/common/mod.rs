#![allow(dead_code)]

//! Shared helpers for the integration and acceptance suites: a seeded QP
//! generator, an independent active-set oracle, and the four-tank benchmark
//! experiment setup.

use ddmpc_core::closedloop::RunConfig;
use ddmpc_core::lti::{collect_data, four_tank, Equilibrium, LtiSystem, NoiseSpec};
use ddmpc_core::mpc::{DataMatrices, MpcConfig, Scheme};
use ddmpc_core::qp::{QpProblem, QpSettings};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Benchmark tuning used throughout: horizon 30, order bound 4, output
/// weight 3 I, input weight 1e-4 I, slack penalty 1000, weight penalty
/// scaled so `lambda_alpha * eps_bar = 0.1`.
pub struct FourTankBench {
    pub sys: LtiSystem<f64>,
    pub data: DataMatrices<f64>,
    pub cfg: MpcConfig<f64>,
    pub eq: Equilibrium<f64>,
}

pub fn four_tank_bench(seed: u64, eps: f64, n_samples: usize) -> FourTankBench {
    let sys = four_tank::<f64>();
    let spec = NoiseSpec::new(eps, seed);
    let collected = collect_data(&sys, &DVector::zeros(4), n_samples, 1.0, &spec).unwrap();
    let traj = if eps > 0.0 {
        collected.noisy
    } else {
        collected.clean
    };
    let data = DataMatrices::new(&traj, 30, 4).unwrap();
    let eq = sys.steady_state(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
    let mut cfg = MpcConfig::new(
        30,
        4,
        DMatrix::identity(2, 2) * 3.0,
        DMatrix::identity(2, 2) * 1e-4,
        eq.u_s.clone(),
        eq.y_s.clone(),
    );
    cfg.eps_bar = eps;
    cfg.lambda_sigma = 1000.0;
    cfg.lambda_alpha = if eps > 0.0 { 0.1 / eps } else { 0.0 };
    FourTankBench { sys, data, cfg, eq }
}

pub fn bench_run_config(
    bench: &FourTankBench,
    scheme: Scheme,
    step_size: usize,
    steps: usize,
    online_seed: u64,
) -> RunConfig<f64> {
    RunConfig {
        scheme,
        step_size,
        steps,
        warmup_input: bench.eq.u_s.clone(),
        x0: DVector::zeros(4),
        noise: NoiseSpec::new(bench.cfg.eps_bar, online_seed),
        data: bench.data.clone(),
        mpc: bench.cfg.clone(),
        qp: QpSettings::default(),
    }
}

/// Seeded strictly convex QP with a known strictly feasible point.
pub fn random_strictly_convex_qp(seed: u64) -> (QpProblem<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nz = rng.random_range(2..=30usize);
    let me = rng.random_range(0..=nz.min(10));
    let mi = rng.random_range(0..=20usize);
    let mut mat = DMatrix::<f64>::zeros(nz, nz);
    for i in 0..nz {
        for j in 0..nz {
            mat[(i, j)] = rng.random_range(-1.0..1.0);
        }
    }
    let p = &mat * mat.transpose() + DMatrix::identity(nz, nz);
    let q = DVector::from_fn(nz, |_, _| rng.random_range(-2.0..2.0));
    let z_feas = DVector::from_fn(nz, |_, _| rng.random_range(-1.0..1.0));
    let aeq = DMatrix::from_fn(me, nz, |_, _| rng.random_range(-1.0..1.0));
    let beq = &aeq * &z_feas;
    let cineq = DMatrix::from_fn(mi, nz, |_, _| rng.random_range(-1.0..1.0));
    let cz = &cineq * &z_feas;
    let mut lo = DVector::zeros(mi);
    let mut hi = DVector::zeros(mi);
    for i in 0..mi {
        // Strictly feasible interior; occasionally one-sided.
        let below: f64 = rng.random_range(0.05..1.5);
        let above: f64 = rng.random_range(0.05..1.5);
        lo[i] = if rng.random_range(0.0..1.0) < 0.2 {
            f64::NEG_INFINITY
        } else {
            cz[i] - below
        };
        hi[i] = if lo[i].is_finite() && rng.random_range(0.0..1.0) < 0.2 {
            f64::INFINITY
        } else {
            cz[i] + above
        };
    }
    let prob = QpProblem::new(p, q, aeq, beq, cineq, lo, hi).unwrap();
    (prob, z_feas)
}

/// Textbook primal active-set method for strictly convex QPs, independent of
/// the operator-splitting solver it cross-checks. Needs a feasible start.
pub fn active_set_oracle(prob: &QpProblem<f64>, z_start: &DVector<f64>) -> (f64, DVector<f64>) {
    let nz = prob.n_vars();
    let me = prob.n_eq();
    // One-sided rows: (coefficients, bound) meaning a' z <= b.
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..prob.n_ineq() {
        let a = prob.cineq().row(i).transpose();
        if prob.hi()[i].is_finite() {
            rows.push((a.clone(), prob.hi()[i]));
        }
        if prob.lo()[i].is_finite() {
            rows.push((-a, -prob.lo()[i]));
        }
    }
    let mut z = z_start.clone();
    let mut working: Vec<usize> = Vec::new();

    for _iter in 0..2000 {
        let na = working.len();
        let dim = nz + me + na;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        kkt.view_mut((0, 0), (nz, nz)).copy_from(prob.p());
        let grad = prob.p() * &z + prob.q();
        rhs.rows_mut(0, nz).copy_from(&(-&grad));
        if me > 0 {
            kkt.view_mut((0, nz), (nz, me))
                .copy_from(&prob.aeq().transpose());
            kkt.view_mut((nz, 0), (me, nz)).copy_from(prob.aeq());
            // Step keeps equality rows satisfied (start is feasible).
        }
        for (j, &ri) in working.iter().enumerate() {
            let a = &rows[ri].0;
            for c in 0..nz {
                kkt[(nz + me + j, c)] = a[c];
                kkt[(c, nz + me + j)] = a[c];
            }
        }
        let sol = kkt.lu().solve(&rhs).expect("oracle KKT solvable");
        let step = sol.rows(0, nz).into_owned();

        if step.amax() <= 1e-11 {
            // Check working-set multipliers (constraints are a' z <= b, so
            // optimal multipliers must be nonnegative).
            let mut worst: Option<(usize, f64)> = None;
            for (j, &ri) in working.iter().enumerate() {
                let mu = sol[nz + me + j];
                if mu < -1e-9 && worst.is_none_or(|(_, w)| mu < w) {
                    worst = Some((j, mu));
                }
                let _ = ri;
            }
            match worst {
                None => break,
                Some((j, _)) => {
                    working.remove(j);
                    continue;
                }
            }
        }

        // Largest feasible step along `step`.
        let mut alpha: f64 = 1.0;
        let mut blocking: Option<usize> = None;
        for (ri, (a, b)) in rows.iter().enumerate() {
            if working.contains(&ri) {
                continue;
            }
            let ap = a.dot(&step);
            if ap > 1e-12 {
                let gap = b - a.dot(&z);
                let limit = (gap / ap).max(0.0);
                if limit < alpha {
                    alpha = limit;
                    blocking = Some(ri);
                }
            }
        }
        z += step * alpha;
        if let Some(ri) = blocking {
            working.push(ri);
        }
    }
    (prob.objective(&z), z)
}
