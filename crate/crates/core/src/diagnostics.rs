//! Quantitative diagnostics: data-driven simulation, excitation constants,
//! and prediction-error bounds.
//!
//! Everything here that takes an [`LtiSystem`] is model-based by design and
//! lives outside the control path: the controller itself never touches the
//! true system. These functions exist to verify, in tests and experiment
//! harnesses, the quantities that the closed-loop guarantees are made of.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};
use crate::lti::LtiSystem;
use crate::mpc::{DataMatrices, MpcConfig, MpcSolution};
use crate::scalar::{from_f64, Scalar};
use crate::traj::{Sequence, Trajectory};

/// Simulates the unknown system directly from recorded data: given an
/// `n`-step initial window and a future input sequence of length `L`, the
/// unique consistent future output is the image of the minimum-norm
/// combination of data columns matching all input rows and the initial
/// output rows.
///
/// `data` must be built from noise-free measurements with a persistently
/// exciting input. An initial window that is not a trajectory of the data
/// generating system shows up as a least-squares residual above `1e-6`
/// (relative) and is reported as [`Error::InconsistentWindow`].
pub fn data_driven_simulate<T: Scalar>(
    data: &DataMatrices<T>,
    u_init: &DVector<T>,
    y_init: &DVector<T>,
    u_future: &Sequence<T>,
) -> Result<Sequence<T>> {
    let l = data.horizon();
    let n = data.order();
    let m = data.n_inputs();
    let p = data.n_outputs();
    if u_future.dim() != m || u_future.len() != l {
        return Err(Error::Dimension(format!(
            "future input must be {m}-dimensional of length {l}"
        )));
    }
    if u_init.len() != m * n || y_init.len() != p * n {
        return Err(Error::Dimension("initial window dimensions mismatch".into()));
    }
    let na = data.n_alpha();
    let depth = l + n;
    // Constraint rows: every input row plus the initial output rows.
    let rows = m * depth + p * n;
    let mut mat = DMatrix::<T>::zeros(rows, na);
    let mut rhs = DVector::<T>::zeros(rows);
    mat.view_mut((0, 0), (m * depth, na))
        .copy_from(data.hu().entries());
    rhs.rows_mut(0, m * n).copy_from(u_init);
    rhs.rows_mut(m * n, m * l).copy_from(&u_future.stacked());
    mat.view_mut((m * depth, 0), (p * n, na))
        .copy_from(&data.hy().entries().rows(0, p * n));
    rhs.rows_mut(m * depth, p * n).copy_from(y_init);

    let tol = from_f64::<T>(RANK_TOL);
    let alpha = linalg::lstsq(&mat, &rhs, tol);
    let residual = (&mat * &alpha - &rhs).norm();
    let scale = T::one().max(rhs.norm());
    if residual > from_f64::<T>(1e-6) * scale {
        return Err(Error::InconsistentWindow {
            residual: (residual / scale).to_f64().unwrap_or(f64::NAN),
        });
    }
    let y_future = data.hy().entries().rows(p * n, p * l) * &alpha;
    Sequence::from_matrix(DMatrix::from_column_slice(p, l, y_future.as_slice()))
}

/// Input-side excitation constants of a recorded input.
#[derive(Debug, Clone, Copy)]
pub struct InputExcitation<T> {
    /// Squared spectral norm of the right-inverse of the depth-`L+n` input
    /// Hankel matrix, `1 / sigma_min^2`.
    pub c_pe_input: T,
    /// Largest eigenvalue of `U U^T`.
    pub nu: T,
    /// Smallest eigenvalue of `U U^T` (positive iff full row rank).
    pub rho: T,
    /// The chained upper bound `nu / rho^2 >= c_pe_input`.
    pub bound_nu_over_rho2: T,
}

/// Computes the input-side excitation constants for Hankel depth `depth`.
pub fn input_excitation<T: Scalar>(u: &Sequence<T>, depth: usize) -> Result<InputExcitation<T>> {
    let h = u.hankel(depth)?;
    let r = linalg::svd_rank(h.entries(), from_f64(RANK_TOL));
    if r.rank < u.dim() * depth {
        return Err(Error::Singular(format!(
            "input Hankel matrix row-rank deficient ({} < {})",
            r.rank,
            u.dim() * depth
        )));
    }
    let nu = r.sigma_max * r.sigma_max;
    let rho = r.sigma_min * r.sigma_min;
    Ok(InputExcitation {
        c_pe_input: T::one() / rho,
        nu,
        rho,
        bound_nu_over_rho2: nu / (rho * rho),
    })
}

/// Excitation-to-noise constants of a recorded experiment.
#[derive(Debug, Clone, Copy)]
pub struct PeDiagnostics<T> {
    /// Squared spectral norm of the right-inverse of the stacked
    /// input/state data matrix; small `c_pe * eps_bar` means excitation
    /// dominates noise.
    pub c_pe: T,
    pub c_pe_input: T,
    pub nu: T,
    pub rho: T,
    pub bound_nu_over_rho2: T,
}

/// Computes `c_pe` and the input-side constants from clean data. The true
/// system is needed to reconstruct the state trajectory (model-based
/// diagnostic; the initial state is recovered from the first `n` samples).
pub fn compute_c_pe<T: Scalar>(
    sys: &LtiSystem<T>,
    data_clean: &Trajectory<T>,
    horizon: usize,
    order: usize,
) -> Result<PeDiagnostics<T>> {
    let n_sys = sys.order();
    let m = sys.n_inputs();
    let n_data = data_clean.len();
    let depth = horizon + order;
    if n_data < depth + n_sys {
        return Err(Error::Dimension("data too short for the requested window".into()));
    }
    let x0 = sys.state_from_io_window(
        &data_clean.u.window(0, n_sys - 1)?,
        &data_clean.y.window(0, n_sys - 1)?,
    )?;
    let states = sys.simulate(&x0, &data_clean.u)?.x;

    let n_cols = n_data - depth + 1;
    let mut h_ux = DMatrix::<T>::zeros(m * depth + n_sys, n_cols);
    h_ux.view_mut((0, 0), (m * depth, n_cols))
        .copy_from(data_clean.u.hankel(depth)?.entries());
    for j in 0..n_cols {
        h_ux.view_mut((m * depth, j), (n_sys, 1))
            .copy_from(&states.at(j));
    }
    let r = linalg::svd_rank(&h_ux, from_f64(RANK_TOL));
    if r.rank < m * depth + n_sys {
        return Err(Error::Singular(format!(
            "stacked input/state matrix row-rank deficient ({} < {})",
            r.rank,
            m * depth + n_sys
        )));
    }
    let input = input_excitation(&data_clean.u, depth)?;
    Ok(PeDiagnostics {
        c_pe: T::one() / (r.sigma_min * r.sigma_min),
        c_pe_input: input.c_pe_input,
        nu: input.nu,
        rho: input.rho,
        bound_nu_over_rho2: input.bound_nu_over_rho2,
    })
}

/// Pointwise bounds on the gap between a robust solution's predicted output
/// and the true open-loop response to its input.
///
/// For each future offset `k`, `bound_l2[k]` bounds the *squared* Euclidean
/// norm of the gap and `bound_linf[k]` bounds its infinity norm, evaluated
/// from the solution's weights, slack, the assumed noise bound, and the decay
/// constants `rho_2[k] = ||C A^{n+k} Phi_dagger||_2^2`,
/// `rho_inf[k] = ||C A^{n+k} Phi_dagger||_inf`.
#[derive(Debug, Clone)]
pub struct PredictionErrorBound<T> {
    pub bound_l2: Vec<T>,
    pub bound_linf: Vec<T>,
    pub rho2: Vec<T>,
    pub rho_inf: Vec<T>,
    /// `p * (N - L - n + 1)`.
    pub c5: T,
}

/// Evaluates the prediction-error bounds for one solution. `data_len` is the
/// length `N` of the recorded data behind the solution's Hankel matrices.
pub fn prediction_error_bound<T: Scalar>(
    sys: &LtiSystem<T>,
    sol: &MpcSolution<T>,
    cfg: &MpcConfig<T>,
    data_len: usize,
) -> Result<PredictionErrorBound<T>> {
    let l = cfg.horizon;
    let n = cfg.order;
    let p = sys.n_outputs();
    let (_, phi_dagger) = sys.observability_pseudoinverse()?;
    let c5 = from_f64::<T>((p * (data_len - l - n + 1)) as f64);
    let eps = cfg.eps_bar;

    let alpha_l2_sq = sol.alpha.norm_squared();
    let alpha_l1 = sol.alpha.iter().map(|a| a.abs()).fold(T::zero(), |x, y| x + y);
    let sigma_init = sol.sigma.rows(0, p * n).into_owned();
    let sigma_init_l2_sq = sigma_init.norm_squared();
    let sigma_init_linf = sigma_init.amax();

    let mut rho2 = Vec::with_capacity(l);
    let mut rho_inf = Vec::with_capacity(l);
    // a_pow tracks A^{n+k}.
    let mut a_pow = DMatrix::<T>::identity(sys.order(), sys.order());
    for _ in 0..n {
        a_pow = &a_pow * sys.a();
    }
    for _ in 0..l {
        let gain = sys.c() * &a_pow * &phi_dagger;
        let spectral = linalg::svd_rank(&gain, from_f64(1e-300)).sigma_max;
        rho2.push(spectral * spectral);
        let inf_norm = (0..gain.nrows())
            .map(|i| gain.row(i).iter().map(|v| v.abs()).fold(T::zero(), |x, y| x + y))
            .fold(T::zero(), |x, y| x.max(y));
        rho_inf.push(inf_norm);
        a_pow = &a_pow * sys.a();
    }

    let four = from_f64::<T>(4.0);
    let eight = from_f64::<T>(8.0);
    let sixteen = from_f64::<T>(16.0);
    let n_t = from_f64::<T>(n as f64);
    let p_t = from_f64::<T>(p as f64);
    let mut bound_l2 = Vec::with_capacity(l);
    let mut bound_linf = Vec::with_capacity(l);
    for k in 0..l {
        let sigma_k = sol.sigma.rows(p * (n + k), p).into_owned();
        bound_l2.push(
            eight * c5 * eps * eps * alpha_l2_sq
                + from_f64::<T>(2.0) * sigma_k.norm_squared()
                + rho2[k]
                    * (sixteen * n_t * eps * eps * (c5 * alpha_l2_sq + p_t)
                        + four * sigma_init_l2_sq),
        );
        bound_linf.push(
            eps * alpha_l1
                + sigma_k.amax()
                + rho_inf[k] * (eps * (alpha_l1 + T::one()) + sigma_init_linf),
        );
    }
    Ok(PredictionErrorBound {
        bound_l2,
        bound_linf,
        rho2,
        rho_inf,
        c5,
    })
}

/// True open-loop response to the solution's planned input from the plant
/// state at solve time: the comparison target for the prediction-error
/// bounds. Model-based, test-harness only.
pub fn open_loop_replay<T: Scalar>(
    sys: &LtiSystem<T>,
    x_at_solve: &DVector<T>,
    sol: &MpcSolution<T>,
) -> Result<Sequence<T>> {
    Ok(sys.simulate(x_at_solve, &sol.u_future_sequence())?.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{collect_data, four_tank, random_minimal, NoiseSpec};
    use crate::mpc::{solve_robust, MpcConfig};
    use crate::qp::QpSettings;
    use approx::assert_relative_eq;

    fn clean_data(
        sys: &LtiSystem<f64>,
        n_samples: usize,
        seed: u64,
    ) -> crate::lti::DataCollection<f64> {
        let spec = NoiseSpec::none(seed);
        collect_data(sys, &DVector::zeros(sys.order()), n_samples, 1.0, &spec).unwrap()
    }

    #[test]
    fn simulate_from_data_at_equilibrium() {
        let sys = four_tank::<f64>();
        let data = clean_data(&sys, 400, 31);
        let dm = DataMatrices::new(&data.clean, 30, 4).unwrap();
        let eq = sys.steady_state(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let u_init = DVector::from_fn(8, |i, _| eq.u_s[i % 2]);
        let y_init = DVector::from_fn(8, |i, _| eq.y_s[i % 2]);
        let u_future = Sequence::constant(&eq.u_s, 30).unwrap();
        let y = data_driven_simulate(&dm, &u_init, &y_init, &u_future).unwrap();
        for k in 0..30 {
            assert_relative_eq!(y.at(k), eq.y_s, epsilon = 1e-7);
        }
    }

    #[test]
    fn simulate_from_data_matches_state_space() {
        for seed in 0..5u64 {
            let sys = random_minimal::<f64>(seed + 100, 3, 2, 2, 0.8);
            let data = clean_data(&sys, 100, seed + 40);
            let dm = DataMatrices::new(&data.clean, 10, 3).unwrap();
            // Fresh excitation for the test window.
            let probe = collect_data(
                &sys,
                &DVector::from_fn(3, |i, _| 0.2 * (i as f64 + 1.0)),
                13,
                1.0,
                &NoiseSpec::none(seed + 90),
            )
            .unwrap();
            let u_init = probe.clean.u.window(0, 2).unwrap();
            let y_init = probe.clean.y.window(0, 2).unwrap();
            let u_future = probe.clean.u.segment(3, 12).unwrap();
            let predicted = data_driven_simulate(&dm, &u_init, &y_init, &u_future).unwrap();
            let truth = probe.clean.y.segment(3, 12).unwrap();
            let scale = truth.data().amax().max(1.0);
            assert!(
                (predicted.data() - truth.data()).amax() / scale <= 1e-6,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn inconsistent_window_is_rejected() {
        let sys = four_tank::<f64>();
        let data = clean_data(&sys, 400, 32);
        let dm = DataMatrices::new(&data.clean, 30, 4).unwrap();
        let u_init = DVector::zeros(8);
        // These outputs cannot result from zero input on this plant.
        let y_init = DVector::from_element(8, 5.0);
        let u_future = Sequence::zeros(2, 30);
        match data_driven_simulate(&dm, &u_init, &y_init, &u_future) {
            Err(Error::InconsistentWindow { residual }) => assert!(residual > 1e-6),
            other => panic!("expected inconsistent-window error, got {other:?}"),
        }
    }

    #[test]
    fn orthonormal_hankel_rows_give_unit_constants() {
        // A unit impulse makes the depth-2 Hankel rows orthonormal.
        let u = Sequence::from_scalars(&[0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let exc = input_excitation(&u, 2).unwrap();
        assert_relative_eq!(exc.c_pe_input, 1.0, epsilon = 1e-12);
        assert_relative_eq!(exc.nu, 1.0, epsilon = 1e-12);
        assert_relative_eq!(exc.rho, 1.0, epsilon = 1e-12);
        assert_relative_eq!(exc.bound_nu_over_rho2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn input_scaling_quarters_c_pe_input() {
        let sys = four_tank::<f64>();
        let data = clean_data(&sys, 400, 33);
        let u = &data.clean.u;
        let doubled = Sequence::from_matrix(u.data() * 2.0).unwrap();
        let base = input_excitation(u, 34).unwrap();
        let scaled = input_excitation(&doubled, 34).unwrap();
        assert_relative_eq!(scaled.c_pe_input, base.c_pe_input / 4.0, max_relative = 1e-10);
        assert!(base.c_pe_input <= base.bound_nu_over_rho2);
        assert!(scaled.c_pe_input <= scaled.bound_nu_over_rho2);
    }

    #[test]
    fn c_pe_matches_explicit_pseudo_inverse_norm() {
        let sys = four_tank::<f64>();
        let data = clean_data(&sys, 200, 34);
        let diag = compute_c_pe(&sys, &data.clean, 10, 4).unwrap();
        // Rebuild the stacked matrix and compare against the explicit
        // pseudo-inverse spectral norm.
        let x0 = DVector::zeros(4);
        let states = sys.simulate(&x0, &data.clean.u).unwrap().x;
        let depth = 14;
        let n_cols = 200 - depth + 1;
        let mut h_ux = DMatrix::<f64>::zeros(2 * depth + 4, n_cols);
        h_ux.view_mut((0, 0), (2 * depth, n_cols))
            .copy_from(data.clean.u.hankel(depth).unwrap().entries());
        for j in 0..n_cols {
            h_ux.view_mut((2 * depth, j), (4, 1)).copy_from(&states.at(j));
        }
        let pinv = crate::linalg::pseudo_inverse(&h_ux, 1e-12);
        let norm = crate::linalg::svd_rank(&pinv, 1e-300).sigma_max;
        assert_relative_eq!(diag.c_pe, norm * norm, max_relative = 1e-8);
    }

    #[test]
    fn bounds_vanish_without_noise_and_scale_with_eps() {
        let sys = four_tank::<f64>();
        let data = clean_data(&sys, 400, 35);
        let dm = DataMatrices::new(&data.clean, 30, 4).unwrap();
        let eq = sys.steady_state(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let mut cfg = MpcConfig::new(
            30,
            4,
            DMatrix::identity(2, 2) * 3.0,
            DMatrix::identity(2, 2) * 1e-4,
            eq.u_s.clone(),
            eq.y_s.clone(),
        );
        let u = Sequence::constant(&eq.u_s, 4).unwrap();
        let sim = sys.simulate(&eq.x_s, &u).unwrap();
        let sol = crate::mpc::solve_nominal(
            &dm,
            &cfg,
            &u.stacked(),
            &sim.y.stacked(),
            &QpSettings::default(),
        )
        .unwrap();
        let b0 = prediction_error_bound(&sys, &sol, &cfg, 400).unwrap();
        assert!(b0.bound_l2.iter().all(|&v| v == 0.0));
        assert!(b0.bound_linf.iter().all(|&v| v == 0.0));

        // With the solution held fixed (sigma = 0), the infinity bound is
        // linear in the assumed noise level.
        cfg.eps_bar = 0.001;
        let b1 = prediction_error_bound(&sys, &sol, &cfg, 400).unwrap();
        cfg.eps_bar = 0.002;
        let b2 = prediction_error_bound(&sys, &sol, &cfg, 400).unwrap();
        for k in 0..30 {
            assert_relative_eq!(b2.bound_linf[k], 2.0 * b1.bound_linf[k], max_relative = 1e-10);
            assert!(b2.bound_linf[k] >= b1.bound_linf[k]);
        }
        assert_eq!(b1.c5, (2 * (400 - 30 - 4 + 1)) as f64);
    }

    #[test]
    fn robust_solution_respects_prediction_error_bounds() {
        let sys = four_tank::<f64>();
        let spec = NoiseSpec::new(0.002, 36);
        let collected = collect_data(&sys, &DVector::zeros(4), 400, 1.0, &spec).unwrap();
        let dm = DataMatrices::new(&collected.noisy, 30, 4).unwrap();
        let eq = sys.steady_state(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let mut cfg = MpcConfig::new(
            30,
            4,
            DMatrix::identity(2, 2) * 3.0,
            DMatrix::identity(2, 2) * 1e-4,
            eq.u_s.clone(),
            eq.y_s.clone(),
        );
        cfg.eps_bar = 0.002;
        cfg.lambda_alpha = 50.0;
        cfg.lambda_sigma = 1000.0;
        // True plant history with noisy measurements for the window.
        let x0 = DVector::from_vec(vec![0.2, 0.1, 0.4, 0.6]);
        let u_win = Sequence::constant(&eq.u_s, 4).unwrap();
        let sim = sys.simulate(&x0, &u_win).unwrap();
        let y_noisy = crate::lti::add_noise(&sim.y, &NoiseSpec::new(0.002, 99));
        let sol = solve_robust(
            &dm,
            &cfg,
            &u_win.stacked(),
            &y_noisy.stacked(),
            &QpSettings::default(),
        )
        .unwrap();
        assert_eq!(sol.status, crate::qp::QpStatus::Solved);
        let x_t = sim.x.at(4);
        let replay = open_loop_replay(&sys, &x_t, &sol).unwrap();
        let bounds = prediction_error_bound(&sys, &sol, &cfg, 400).unwrap();
        for k in 0..30 {
            let gap = replay.at(k) - sol.y_future(k);
            assert!(
                gap.norm_squared() <= bounds.bound_l2[k],
                "l2 bound violated at k={k}"
            );
            assert!(
                gap.amax() <= bounds.bound_linf[k],
                "linf bound violated at k={k}"
            );
        }
    }
}
