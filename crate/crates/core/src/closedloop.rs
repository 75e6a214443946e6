//! Receding-horizon execution with full logging.
//!
//! A run first applies a constant warmup input for `n` steps from `x0` to
//! populate the measured initial window, then repeats: solve the configured
//! scheme for the last `n` measured samples, apply the first `s` planned
//! inputs, shift by `s`. `s = 1` is the classic receding-horizon loop,
//! `s = n` the multi-step variant with the stronger robustness properties;
//! anything in `1..=n` is allowed.
//!
//! The runner talks to the true plant only to advance the state and to take
//! (noisy) measurements; the controller sees measurements alone.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::lti::{LtiSystem, NoiseSource, NoiseSpec};
use crate::mpc::{self, DataMatrices, MpcConfig, MpcSolution, Scheme};
use crate::qp::{QpSettings, QpStatus};
use crate::scalar::{from_f64, Scalar};

/// Output magnitude treated as divergence; keeps unstable baselines
/// reproducible in finite time without floating-point overflow.
pub const DIVERGENCE_GUARD: f64 = 1e6;

/// Everything needed to execute one closed-loop experiment.
#[derive(Debug, Clone)]
pub struct RunConfig<T: Scalar> {
    pub scheme: Scheme,
    /// Inputs applied per solve, `1..=order`.
    pub step_size: usize,
    /// Total controlled steps; only complete blocks are executed, so the
    /// final `steps % step_size` steps are truncated.
    pub steps: usize,
    /// Constant input applied during the `n` warmup steps (typically the
    /// setpoint input).
    pub warmup_input: DVector<T>,
    /// Plant state at the start of the warmup.
    pub x0: DVector<T>,
    /// Online measurement noise.
    pub noise: NoiseSpec<T>,
    pub data: DataMatrices<T>,
    pub mpc: MpcConfig<T>,
    pub qp: QpSettings<T>,
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    /// The solver certified infeasibility at this controlled step; the run
    /// stopped without applying an input.
    Infeasible { at_step: usize },
    /// The output magnitude guard tripped at this controlled step.
    Diverged { at_step: usize },
}

impl RunOutcome {
    pub fn is_diverged(&self) -> bool {
        matches!(self, RunOutcome::Diverged { .. })
    }
    pub fn is_completed(&self) -> bool {
        matches!(self, RunOutcome::Completed)
    }
}

/// One optimization inside a run, with the plant state at solve time (the
/// controller never sees it; diagnostics do).
#[derive(Debug, Clone)]
pub struct SolveRecord<T: Scalar> {
    /// Controlled step index at which the solve happened.
    pub t: usize,
    pub x_at_solve: DVector<T>,
    pub solution: MpcSolution<T>,
}

/// Complete record of a closed-loop experiment.
#[derive(Debug, Clone)]
pub struct ClosedLoopLog<T: Scalar> {
    /// Warmup segment (length `n`), not part of the controlled steps.
    pub warmup_u: Vec<DVector<T>>,
    pub warmup_y: Vec<DVector<T>>,
    pub warmup_y_meas: Vec<DVector<T>>,
    /// Per controlled step.
    pub u: Vec<DVector<T>>,
    pub y: Vec<DVector<T>>,
    pub y_meas: Vec<DVector<T>>,
    /// Index into `solves` for each controlled step.
    pub solve_index: Vec<usize>,
    pub solves: Vec<SolveRecord<T>>,
    pub outcome: RunOutcome,
    /// `||y_t - y_s||_2` per controlled step.
    pub y_err: Vec<T>,
    /// `||xi_t - xi_s||_2` per controlled step, where `xi_t` stacks the last
    /// `n` true inputs and outputs.
    pub xi_dev: Vec<T>,
    pub x0: DVector<T>,
}

impl<T: Scalar> ClosedLoopLog<T> {
    /// Number of controlled steps actually executed.
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Executes the receding-horizon loop. Early termination on infeasibility or
/// divergence is a valid outcome recorded in the log, not an error.
pub fn run<T: Scalar>(sys: &LtiSystem<T>, rc: &RunConfig<T>) -> Result<ClosedLoopLog<T>> {
    let n = rc.mpc.order;
    let m = sys.n_inputs();
    let p = sys.n_outputs();
    rc.mpc.validate(rc.scheme)?;
    if rc.step_size == 0 || rc.step_size > n {
        return Err(Error::Config(format!(
            "step size must lie in 1..={n}, got {}",
            rc.step_size
        )));
    }
    if rc.steps < n {
        return Err(Error::Config(format!(
            "need at least n = {n} controlled steps, got {}",
            rc.steps
        )));
    }
    if rc.warmup_input.len() != m || rc.x0.len() != sys.order() {
        return Err(Error::Dimension("warmup input or x0 dimension mismatch".into()));
    }
    if rc.mpc.n_inputs() != m || rc.mpc.n_outputs() != p {
        return Err(Error::Dimension("config dimensions do not match plant".into()));
    }

    let guard = from_f64::<T>(DIVERGENCE_GUARD);
    let mut noise = NoiseSource::new(&rc.noise, p);
    let mut x = rc.x0.clone();

    // Warmup: constant input for n steps, measured like any other sample.
    let mut u_hist: Vec<DVector<T>> = Vec::new();
    let mut y_hist: Vec<DVector<T>> = Vec::new();
    let mut y_meas_hist: Vec<DVector<T>> = Vec::new();
    for _ in 0..n {
        let u_t = rc.warmup_input.clone();
        let y_t = sys.c() * &x + sys.d() * &u_t;
        let y_m = &y_t + noise.next_vector();
        x = sys.a() * &x + sys.b() * &u_t;
        u_hist.push(u_t);
        y_hist.push(y_t);
        y_meas_hist.push(y_m);
    }
    let warmup_u = u_hist.clone();
    let warmup_y = y_hist.clone();
    let warmup_y_meas = y_meas_hist.clone();

    let stack_last_n = |hist: &[DVector<T>], dim: usize| -> DVector<T> {
        let mut out = DVector::zeros(dim * n);
        for (j, v) in hist[hist.len() - n..].iter().enumerate() {
            out.rows_mut(j * dim, dim).copy_from(v);
        }
        out
    };

    let xi_setpoint = {
        let mut out = DVector::zeros((m + p) * n);
        for j in 0..n {
            out.rows_mut(j * m, m).copy_from(&rc.mpc.u_setpoint);
            out.rows_mut(n * m + j * p, p).copy_from(&rc.mpc.y_setpoint);
        }
        out
    };

    let mut log = ClosedLoopLog {
        warmup_u,
        warmup_y,
        warmup_y_meas,
        u: Vec::new(),
        y: Vec::new(),
        y_meas: Vec::new(),
        solve_index: Vec::new(),
        solves: Vec::new(),
        outcome: RunOutcome::Completed,
        y_err: Vec::new(),
        xi_dev: Vec::new(),
        x0: rc.x0.clone(),
    };

    let mut solver = mpc::MpcSolver::new(&rc.data, &rc.mpc, rc.scheme, rc.qp)?;
    let blocks = rc.steps / rc.step_size;
    'blocks: for block in 0..blocks {
        let t = block * rc.step_size;
        let u_init = stack_last_n(&u_hist, m);
        let y_init = stack_last_n(&y_meas_hist, p);
        let solution = solver.solve_window(&u_init, &y_init)?;
        if solution.status == QpStatus::Infeasible {
            log.solves.push(SolveRecord {
                t,
                x_at_solve: x.clone(),
                solution,
            });
            log.outcome = RunOutcome::Infeasible { at_step: t };
            break 'blocks;
        }
        let solve_idx = log.solves.len();
        log.solves.push(SolveRecord {
            t,
            x_at_solve: x.clone(),
            solution: solution.clone(),
        });
        for k in 0..rc.step_size {
            let u_t = solution.u_future(k);
            let y_t = sys.c() * &x + sys.d() * &u_t;
            let y_m = &y_t + noise.next_vector();
            x = sys.a() * &x + sys.b() * &u_t;
            u_hist.push(u_t.clone());
            y_hist.push(y_t.clone());
            y_meas_hist.push(y_m.clone());
            log.u.push(u_t);
            log.y.push(y_t.clone());
            log.y_meas.push(y_m);
            log.solve_index.push(solve_idx);
            log.y_err.push((&y_t - &rc.mpc.y_setpoint).norm());
            // Extended state over the last n true samples (defined once n
            // controlled + warmup samples exist, i.e. always).
            let mut xi = DVector::zeros((m + p) * n);
            xi.rows_mut(0, m * n).copy_from(&stack_last_n(&u_hist, m));
            xi.rows_mut(m * n, p * n)
                .copy_from(&stack_last_n(&y_hist, p));
            log.xi_dev.push((&xi - &xi_setpoint).norm());
            if y_t.amax() > guard {
                log.outcome = RunOutcome::Diverged {
                    at_step: t + k,
                };
                break 'blocks;
            }
        }
    }
    Ok(log)
}

/// Summary numbers extracted from a finished run.
#[derive(Debug, Clone, Copy)]
pub struct Metrics<T> {
    /// Max `||y_t - y_s||_inf` over the final third of the executed steps
    /// (infinite when nothing was executed).
    pub max_terminal_error: T,
    /// First step after which `||y_t - y_s||_inf` stays within the given
    /// threshold, if any.
    pub settle_time: Option<usize>,
    /// Steps whose optimal cost fails the expected per-block decrease
    /// (meaningful for nominal noise-free runs).
    pub cost_decrease_violations: usize,
    pub mean_alpha_norm: T,
}

/// Computes run metrics against the configured setpoint; `settle_threshold`
/// defines settling in the infinity norm.
pub fn metrics<T: Scalar>(
    log: &ClosedLoopLog<T>,
    cfg: &MpcConfig<T>,
    settle_threshold: T,
) -> Metrics<T> {
    let len = log.len();
    let inf_err = |k: usize| (&log.y[k] - &cfg.y_setpoint).amax();

    let max_terminal_error = if len == 0 {
        T::infinity()
    } else {
        let tail_start = 2 * len / 3;
        (tail_start..len).map(inf_err).fold(T::zero(), |a, b| a.max(b))
    };

    let mut settle_time = None;
    for t in (0..len).rev() {
        if inf_err(t) > settle_threshold {
            settle_time = if t + 1 < len { Some(t + 1) } else { None };
            break;
        }
        if t == 0 {
            settle_time = Some(0);
        }
    }

    // Expected decrease: J*(t+s) <= J*(t) - sum of applied stage costs.
    let mut violations = 0usize;
    let tol = from_f64::<T>(1e-6);
    for w in log.solves.windows(2) {
        let (prev, next) = (&w[0], &w[1]);
        if prev.solution.status != QpStatus::Solved || next.solution.status != QpStatus::Solved {
            continue;
        }
        let s = next.t - prev.t;
        let mut applied = T::zero();
        for k in 0..s {
            let du = prev.solution.u_future(k) - &cfg.u_setpoint;
            let dy = prev.solution.y_future(k) - &cfg.y_setpoint;
            applied += du.dot(&(&cfg.r_weight * &du)) + dy.dot(&(&cfg.q_weight * &dy));
        }
        if next.solution.cost > prev.solution.cost - applied + tol {
            violations += 1;
        }
    }

    let mean_alpha_norm = if log.solves.is_empty() {
        T::zero()
    } else {
        log.solves
            .iter()
            .map(|s| s.solution.alpha.norm())
            .fold(T::zero(), |a, b| a + b)
            / from_f64::<T>(log.solves.len() as f64)
    };

    Metrics {
        max_terminal_error,
        settle_time,
        cost_decrease_violations: violations,
        mean_alpha_norm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{collect_data, four_tank};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn four_tank_run_config(
        eps: f64,
        seed: u64,
        scheme: Scheme,
        step_size: usize,
        steps: usize,
        x0: DVector<f64>,
    ) -> (crate::lti::LtiSystem<f64>, RunConfig<f64>) {
        let sys = four_tank::<f64>();
        let spec = NoiseSpec::new(eps, seed);
        let data = collect_data(&sys, &DVector::zeros(4), 400, 1.0, &spec).unwrap();
        let traj = if eps > 0.0 { data.noisy } else { data.clean };
        let dm = DataMatrices::new(&traj, 30, 4).unwrap();
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
        let rc = RunConfig {
            scheme,
            step_size,
            steps,
            warmup_input: eq.u_s.clone(),
            x0,
            noise: NoiseSpec::new(eps, seed.wrapping_add(7_777)),
            data: dm,
            mpc: cfg,
            qp: QpSettings::default(),
        };
        (sys, rc)
    }

    #[test]
    fn equilibrium_is_invariant() {
        let sys = four_tank::<f64>();
        let eq = sys.steady_state(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let (_, rc) = four_tank_run_config(0.0, 21, Scheme::Nominal, 1, 12, eq.x_s.clone());
        let log = run(&sys, &rc).unwrap();
        assert!(log.outcome.is_completed());
        assert_eq!(log.len(), 12);
        for t in 0..log.len() {
            assert_relative_eq!(log.u[t], eq.u_s, epsilon = 1e-6);
            assert_relative_eq!(log.y[t], eq.y_s, epsilon = 1e-6);
        }
        let met = metrics(&log, &rc.mpc, 1e-4);
        assert_eq!(met.settle_time, Some(0));
        assert!(met.max_terminal_error <= 1e-6);
    }

    #[test]
    fn applied_inputs_match_solution_bitwise() {
        let (sys, rc) = four_tank_run_config(
            0.002,
            22,
            Scheme::Robust,
            4,
            16,
            DVector::zeros(4),
        );
        let log = run(&sys, &rc).unwrap();
        assert!(log.outcome.is_completed());
        for t in 0..log.len() {
            let rec = &log.solves[log.solve_index[t]];
            let k = t - rec.t;
            assert_eq!(log.u[t], rec.solution.u_future(k));
        }
        // 4 blocks of 4 steps.
        assert_eq!(log.solves.len(), 4);
    }

    #[test]
    fn resimulation_reproduces_logged_outputs() {
        let (sys, rc) = four_tank_run_config(
            0.002,
            23,
            Scheme::Robust,
            1,
            10,
            DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]),
        );
        let log = run(&sys, &rc).unwrap();
        let mut x = log.x0.clone();
        for (u_t, y_t) in log.warmup_u.iter().zip(log.warmup_y.iter()) {
            let y = sys.c() * &x + sys.d() * u_t;
            assert!((y - y_t).amax() <= 1e-12);
            x = sys.a() * &x + sys.b() * u_t;
        }
        for (u_t, y_t) in log.u.iter().zip(log.y.iter()) {
            let y = sys.c() * &x + sys.d() * u_t;
            assert!((y - y_t).amax() <= 1e-12);
            x = sys.a() * &x + sys.b() * u_t;
        }
    }

    #[test]
    fn nominal_clean_run_is_recursively_feasible_with_cost_decrease() {
        let (sys, rc) = four_tank_run_config(0.0, 24, Scheme::Nominal, 1, 30, DVector::zeros(4));
        let log = run(&sys, &rc).unwrap();
        assert!(log.outcome.is_completed());
        assert_eq!(log.solves.len(), 30);
        assert!(log
            .solves
            .iter()
            .all(|s| s.solution.status == QpStatus::Solved));
        let met = metrics(&log, &rc.mpc, 1e-3);
        assert_eq!(met.cost_decrease_violations, 0);
        // Converging toward the setpoint (the exponential tail is governed by
        // the slowest tank pole, so 30 steps only get partway there).
        assert!(log.y_err.last().unwrap() < &2e-3);
        assert!(log.y_err.last().unwrap() < &log.y_err[0]);
    }

    #[test]
    fn input_box_is_respected_in_closed_loop() {
        let (sys, mut rc) = four_tank_run_config(0.0, 25, Scheme::Nominal, 1, 16, DVector::zeros(4));
        rc.mpc.u_lo = DVector::from_element(2, 0.0);
        rc.mpc.u_hi = DVector::from_element(2, 2.0);
        let log = run(&sys, &rc).unwrap();
        assert!(log.outcome.is_completed());
        for u_t in &log.u {
            assert!(u_t.min() >= -1e-8 && u_t.max() <= 2.0 + 1e-8);
        }
    }

    #[test]
    fn partial_final_block_is_truncated() {
        let (sys, rc) = four_tank_run_config(0.002, 26, Scheme::Robust, 4, 10, DVector::zeros(4));
        let log = run(&sys, &rc).unwrap();
        // 10 / 4 = 2 complete blocks -> 8 steps.
        assert_eq!(log.len(), 8);
        assert_eq!(log.solves.len(), 2);
    }

    #[test]
    fn step_size_validation() {
        let (sys, mut rc) = four_tank_run_config(0.0, 27, Scheme::Nominal, 1, 10, DVector::zeros(4));
        rc.step_size = 5; // > n = 4
        assert!(run(&sys, &rc).is_err());
        rc.step_size = 0;
        assert!(run(&sys, &rc).is_err());
    }
}
