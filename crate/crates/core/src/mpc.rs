//! Data-driven predictive control problems built from Hankel data.
//!
//! Predicted input-output trajectories over a horizon `L` plus an `n`-step
//! initial window are parameterized as linear combinations of the columns of
//! depth-`L+n` Hankel matrices of recorded data. The nominal scheme pins the
//! initial window to the last measured samples, pins the final `n` steps to
//! the setpoint (terminal equality), and minimizes a quadratic tracking cost.
//! The robust scheme admits noisy data through a slack on the output
//! representation plus ridge regularization of the combination weights and
//! the slack.
//!
//! Everything is condensed: the only decision variables are the combination
//! weights `alpha` (and the slack `sigma` in the robust scheme); predicted
//! trajectories are affine images of those.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::RANK_TOL;
use crate::qp::{solve_qp, QpProblem, QpSettings, QpStatus};
use crate::scalar::{from_f64, Scalar};
use crate::traj::{persistence_of_excitation, PeReport, Sequence, Trajectory};

/// Which predictive control problem to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Exact data, terminal equality constraint, no slack.
    Nominal,
    /// Noisy data: slack + regularization, terminal equality constraint.
    Robust,
    /// Robust scheme with the terminal constraint removed (the unstable
    /// comparison baseline).
    RobustNoTerminal,
}

impl Scheme {
    pub fn has_terminal(self) -> bool {
        !matches!(self, Scheme::RobustNoTerminal)
    }

    pub fn has_slack(self) -> bool {
        !matches!(self, Scheme::Nominal)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::Nominal => write!(f, "nominal"),
            Scheme::Robust => write!(f, "robust"),
            Scheme::RobustNoTerminal => write!(f, "robust_no_terminal"),
        }
    }
}

/// Handling of the nonconvex slack bound
/// `||sigma_k||_inf <= eps_bar (1 + ||alpha||_1)`.
///
/// The exact test is evaluated and reported on every solution regardless of
/// the mode; the mode only controls what the optimizer enforces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlackBoundMode<T> {
    /// Nothing enforced; a large slack penalty keeps the bound satisfied in
    /// practice.
    Unenforced,
    /// Convex surrogate `||sigma_k||_inf <= c * eps_bar`, enforced over the
    /// whole window including the initial segment.
    ConvexBound(T),
    /// Identical to `Unenforced` in the optimization; names the intent that
    /// the caller will act on the reported exact test.
    ExactCheck,
}

/// Tuning and problem description shared by both schemes.
#[derive(Debug, Clone)]
pub struct MpcConfig<T: Scalar> {
    /// Prediction horizon `L`.
    pub horizon: usize,
    /// Upper bound `n` on the plant order.
    pub order: usize,
    /// Output tracking weight, `p x p` positive definite.
    pub q_weight: DMatrix<T>,
    /// Input tracking weight, `m x m` positive definite.
    pub r_weight: DMatrix<T>,
    /// Weight of `eps_bar * ||alpha||_2^2` in the robust cost.
    pub lambda_alpha: T,
    /// Weight of `||sigma||_2^2` in the robust cost.
    pub lambda_sigma: T,
    /// Noise amplitude bound assumed by the robust scheme.
    pub eps_bar: T,
    /// Input box, entries may be infinite.
    pub u_lo: DVector<T>,
    pub u_hi: DVector<T>,
    /// Output box (nominal scheme only), entries may be infinite.
    pub y_lo: DVector<T>,
    pub y_hi: DVector<T>,
    /// Target equilibrium input.
    pub u_setpoint: DVector<T>,
    /// Target equilibrium output.
    pub y_setpoint: DVector<T>,
    pub slack_mode: SlackBoundMode<T>,
}

impl<T: Scalar> MpcConfig<T> {
    /// Unconstrained configuration with zero regularization and zero assumed
    /// noise; adjust fields as needed.
    pub fn new(
        horizon: usize,
        order: usize,
        q_weight: DMatrix<T>,
        r_weight: DMatrix<T>,
        u_setpoint: DVector<T>,
        y_setpoint: DVector<T>,
    ) -> Self {
        let m = u_setpoint.len();
        let p = y_setpoint.len();
        Self {
            horizon,
            order,
            q_weight,
            r_weight,
            lambda_alpha: T::zero(),
            lambda_sigma: T::zero(),
            eps_bar: T::zero(),
            u_lo: DVector::from_element(m, T::neg_infinity()),
            u_hi: DVector::from_element(m, T::infinity()),
            y_lo: DVector::from_element(p, T::neg_infinity()),
            y_hi: DVector::from_element(p, T::infinity()),
            u_setpoint,
            y_setpoint,
            slack_mode: SlackBoundMode::Unenforced,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.u_setpoint.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.y_setpoint.len()
    }

    fn is_spd(w: &DMatrix<T>) -> bool {
        if w.nrows() != w.ncols() {
            return false;
        }
        let asym = (w - w.transpose()).amax();
        if asym > from_f64::<T>(1e-10) * T::one().max(w.amax()) {
            return false;
        }
        w.clone().cholesky().is_some()
    }

    /// Checks the invariants required by `scheme`.
    pub fn validate(&self, scheme: Scheme) -> Result<()> {
        let min_horizon = match scheme {
            Scheme::Nominal => self.order,
            Scheme::Robust | Scheme::RobustNoTerminal => 2 * self.order,
        };
        if self.order == 0 {
            return Err(Error::Config("order bound must be positive".into()));
        }
        if self.horizon < min_horizon {
            return Err(Error::Config(format!(
                "horizon {} too short for {scheme} scheme (needs >= {min_horizon})",
                self.horizon
            )));
        }
        let m = self.n_inputs();
        let p = self.n_outputs();
        if self.q_weight.nrows() != p || !Self::is_spd(&self.q_weight) {
            return Err(Error::Config("Q must be p x p symmetric positive definite".into()));
        }
        if self.r_weight.nrows() != m || !Self::is_spd(&self.r_weight) {
            return Err(Error::Config("R must be m x m symmetric positive definite".into()));
        }
        if self.lambda_alpha < T::zero() || self.lambda_sigma < T::zero() || self.eps_bar < T::zero()
        {
            return Err(Error::Config("regularizers and noise bound must be nonnegative".into()));
        }
        if self.u_lo.len() != m || self.u_hi.len() != m || self.y_lo.len() != p || self.y_hi.len() != p
        {
            return Err(Error::Config("constraint box dimensions must match m / p".into()));
        }
        if self
            .u_lo
            .iter()
            .zip(self.u_hi.iter())
            .any(|(&l, &h)| l > h)
            || self.y_lo.iter().zip(self.y_hi.iter()).any(|(&l, &h)| l > h)
        {
            return Err(Error::Config("box lower bound exceeds upper bound".into()));
        }
        if let SlackBoundMode::ConvexBound(c) = self.slack_mode {
            if c <= T::zero() {
                return Err(Error::Config("convex slack bound factor must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Depth-`L+n` Hankel matrices of one recorded trajectory, ready for problem
/// assembly. Construction checks (and records, but does not enforce)
/// persistence of excitation of the input at order `L+2n`.
#[derive(Debug, Clone)]
pub struct DataMatrices<T: Scalar> {
    hu: crate::traj::HankelMatrix<T>,
    hy: crate::traj::HankelMatrix<T>,
    horizon: usize,
    order: usize,
    data_len: usize,
    input_pe: PeReport<T>,
}

impl<T: Scalar> DataMatrices<T> {
    pub fn new(data: &Trajectory<T>, horizon: usize, order: usize) -> Result<Self> {
        if order == 0 || horizon == 0 {
            return Err(Error::Config("horizon and order must be positive".into()));
        }
        let depth = horizon + order;
        let n_data = data.len();
        if n_data < depth {
            return Err(Error::Dimension(format!(
                "data length {n_data} shorter than window {depth}"
            )));
        }
        let hu = data.u.hankel(depth)?;
        let hy = data.y.hankel(depth)?;
        let pe_order = horizon + 2 * order;
        let input_pe = if pe_order <= n_data {
            persistence_of_excitation(&data.u, pe_order, from_f64(RANK_TOL))?
        } else {
            PeReport {
                is_pe: false,
                rank: 0,
                sigma_min: T::zero(),
            }
        };
        Ok(Self {
            hu,
            hy,
            horizon,
            order,
            data_len: n_data,
            input_pe,
        })
    }

    pub fn hu(&self) -> &crate::traj::HankelMatrix<T> {
        &self.hu
    }
    pub fn hy(&self) -> &crate::traj::HankelMatrix<T> {
        &self.hy
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn data_len(&self) -> usize {
        self.data_len
    }
    pub fn n_inputs(&self) -> usize {
        self.hu.block_dim()
    }
    pub fn n_outputs(&self) -> usize {
        self.hy.block_dim()
    }
    /// Number of combination weights `N - L - n + 1`.
    pub fn n_alpha(&self) -> usize {
        self.data_len - self.horizon - self.order + 1
    }
    /// Persistence-of-excitation report of the input at order `L + 2n`.
    pub fn input_pe(&self) -> &PeReport<T> {
        &self.input_pe
    }
}

/// Condensed QP together with the affine maps recovering trajectories from
/// the decision vector.
pub struct CondensedQp<'a, T: Scalar> {
    pub problem: QpProblem<T>,
    data: &'a DataMatrices<T>,
    scheme: Scheme,
    /// Slack present in the decision vector (robust with `eps_bar > 0`).
    with_slack: bool,
}

impl<T: Scalar> CondensedQp<'_, T> {
    /// Splits a decision vector into `(alpha, sigma)`.
    pub fn split(&self, z: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let na = self.data.n_alpha();
        let p = self.data.n_outputs();
        let depth = self.data.horizon() + self.data.order();
        let alpha = z.rows(0, na).into_owned();
        let sigma = if self.with_slack {
            z.rows(na, p * depth).into_owned()
        } else {
            DVector::zeros(p * depth)
        };
        (alpha, sigma)
    }

    /// Recovers the predicted window `(u_bar, y_bar)` over indices
    /// `-n..L-1` from the decision vector.
    pub fn recover(&self, z: &DVector<T>) -> (Sequence<T>, Sequence<T>) {
        let (alpha, sigma) = self.split(z);
        let depth = self.data.horizon() + self.data.order();
        let m = self.data.n_inputs();
        let p = self.data.n_outputs();
        let u_stacked = self.data.hu.entries() * &alpha;
        let mut y_stacked = self.data.hy.entries() * &alpha;
        if self.with_slack {
            y_stacked -= &sigma;
        }
        let u_bar = Sequence::from_matrix(DMatrix::from_column_slice(m, depth, u_stacked.as_slice()))
            .expect("u window nonempty");
        let y_bar = Sequence::from_matrix(DMatrix::from_column_slice(p, depth, y_stacked.as_slice()))
            .expect("y window nonempty");
        (u_bar, y_bar)
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn has_slack_variable(&self) -> bool {
        self.with_slack
    }
}

/// Tikhonov weight selecting the minimum-norm `alpha` when the Hessian is
/// only positive semidefinite (nominal scheme, or robust with zero assumed
/// noise). The reported cost excludes this term.
const ALPHA_RIDGE: f64 = 1e-8;

/// Assembles the condensed QP for the given scheme and initial window.
///
/// Decision vector: `alpha` alone in the nominal scheme, `(alpha, sigma)` in
/// the robust scheme. With `eps_bar = 0` the robust problem drops the slack
/// entirely (the exact-data bound forces it to zero) and coincides with the
/// nominal problem up to the missing output box.
pub fn condense<'a, T: Scalar>(
    data: &'a DataMatrices<T>,
    cfg: &MpcConfig<T>,
    scheme: Scheme,
    u_init: &DVector<T>,
    y_init: &DVector<T>,
) -> Result<CondensedQp<'a, T>> {
    cfg.validate(scheme)?;
    let l = cfg.horizon;
    let n = cfg.order;
    if data.horizon() != l || data.order() != n {
        return Err(Error::Dimension(
            "data matrices were built for a different horizon/order".into(),
        ));
    }
    let m = data.n_inputs();
    let p = data.n_outputs();
    if cfg.n_inputs() != m || cfg.n_outputs() != p {
        return Err(Error::Dimension("config dimensions do not match data".into()));
    }
    if u_init.len() != m * n {
        return Err(Error::Dimension(format!(
            "u_init must have dimension m*n = {}",
            m * n
        )));
    }
    if y_init.len() != p * n {
        return Err(Error::Dimension(format!(
            "y_init must have dimension p*n = {}",
            p * n
        )));
    }

    let depth = l + n;
    let na = data.n_alpha();
    let with_slack = scheme.has_slack() && cfg.eps_bar > T::zero();
    let n_sigma = if with_slack { p * depth } else { 0 };
    let nz = na + n_sigma;
    let two = from_f64::<T>(2.0);

    let hu = data.hu.entries();
    let hy = data.hy.entries();
    let hu_block = |k: usize| hu.rows(k * m, m);
    let hy_block = |k: usize| hy.rows(k * p, p);

    // Cost: stage tracking over future blocks n..depth, ridge terms, slack
    // penalty over the whole window.
    let mut p_mat = DMatrix::<T>::zeros(nz, nz);
    let mut q_vec = DVector::<T>::zeros(nz);
    let r_us = &cfg.r_weight * &cfg.u_setpoint;
    let q_ys = &cfg.q_weight * &cfg.y_setpoint;
    for k in n..depth {
        let hu_k = hu_block(k);
        let hy_k = hy_block(k);
        let r_hu = &cfg.r_weight * hu_k;
        let q_hy = &cfg.q_weight * hy_k;
        // alpha-alpha
        {
            let mut aa = p_mat.view_mut((0, 0), (na, na));
            aa.gemm(two, &hu_k.transpose(), &r_hu, T::one());
            aa.gemm(two, &hy_k.transpose(), &q_hy, T::one());
        }
        q_vec
            .rows_mut(0, na)
            .gemv(-two, &hu_k.transpose(), &r_us, T::one());
        q_vec
            .rows_mut(0, na)
            .gemv(-two, &hy_k.transpose(), &q_ys, T::one());
        if with_slack {
            // alpha-sigma cross terms and sigma-sigma stage block.
            let col = na + k * p;
            p_mat
                .view_mut((0, col), (na, p))
                .copy_from(&(hy_k.transpose() * &cfg.q_weight * (-two)));
            p_mat
                .view_mut((col, 0), (p, na))
                .copy_from(&(&cfg.q_weight * hy_k * (-two)));
            p_mat
                .view_mut((col, col), (p, p))
                .copy_from(&(&cfg.q_weight * two));
            q_vec.rows_mut(col, p).copy_from(&(&q_ys * two));
        }
    }
    // Ridge on alpha: the robust regularizer when assumed noise is positive,
    // otherwise the minimum-norm selection term.
    let alpha_ridge = if scheme.has_slack() && cfg.eps_bar > T::zero() {
        cfg.lambda_alpha * cfg.eps_bar
    } else {
        from_f64::<T>(ALPHA_RIDGE)
    };
    for i in 0..na {
        p_mat[(i, i)] += two * alpha_ridge;
    }
    if with_slack {
        for i in 0..n_sigma {
            p_mat[(na + i, na + i)] += two * cfg.lambda_sigma;
        }
    }

    // Equality rows: initial window and (unless dropped) terminal window.
    let me = (m + p) * n * if scheme.has_terminal() { 2 } else { 1 };
    let mut aeq = DMatrix::<T>::zeros(me, nz);
    let mut beq = DVector::<T>::zeros(me);
    let mut row = 0usize;
    let put_u_rows = |aeq: &mut DMatrix<T>, beq: &mut DVector<T>, row: &mut usize, k: usize, rhs: &DVector<T>| {
        aeq.view_mut((*row, 0), (m, na)).copy_from(&hu_block(k));
        beq.rows_mut(*row, m).copy_from(rhs);
        *row += m;
    };
    let put_y_rows = |aeq: &mut DMatrix<T>, beq: &mut DVector<T>, row: &mut usize, k: usize, rhs: &DVector<T>| {
        aeq.view_mut((*row, 0), (p, na)).copy_from(&hy_block(k));
        if with_slack {
            for i in 0..p {
                aeq[(*row + i, na + k * p + i)] = -T::one();
            }
        }
        beq.rows_mut(*row, p).copy_from(rhs);
        *row += p;
    };
    for k in 0..n {
        let u_k = u_init.rows(k * m, m).into_owned();
        put_u_rows(&mut aeq, &mut beq, &mut row, k, &u_k);
    }
    for k in 0..n {
        let y_k = y_init.rows(k * p, p).into_owned();
        put_y_rows(&mut aeq, &mut beq, &mut row, k, &y_k);
    }
    if scheme.has_terminal() {
        for k in l..depth {
            put_u_rows(&mut aeq, &mut beq, &mut row, k, &cfg.u_setpoint);
        }
        for k in l..depth {
            put_y_rows(&mut aeq, &mut beq, &mut row, k, &cfg.y_setpoint);
        }
    }
    debug_assert_eq!(row, me);

    // Inequality rows: input box over the future window, output box for the
    // nominal scheme, optional convex slack bound. Rows with two infinite
    // bounds are skipped.
    let mut c_rows: Vec<DVector<T>> = Vec::new();
    let mut lo: Vec<T> = Vec::new();
    let mut hi: Vec<T> = Vec::new();
    let mut push_row = |row_vec: DVector<T>, l_b: T, h_b: T| {
        if l_b.is_finite() || h_b.is_finite() {
            c_rows.push(row_vec);
            lo.push(l_b);
            hi.push(h_b);
        }
    };
    for k in n..depth {
        for i in 0..m {
            let mut r = DVector::zeros(nz);
            r.rows_mut(0, na).copy_from(&hu_block(k).row(i).transpose());
            push_row(r, cfg.u_lo[i], cfg.u_hi[i]);
        }
    }
    if scheme == Scheme::Nominal {
        for k in n..depth {
            for i in 0..p {
                let mut r = DVector::zeros(nz);
                r.rows_mut(0, na).copy_from(&hy_block(k).row(i).transpose());
                push_row(r, cfg.y_lo[i], cfg.y_hi[i]);
            }
        }
    }
    if with_slack {
        if let SlackBoundMode::ConvexBound(c) = cfg.slack_mode {
            let bound = c * cfg.eps_bar;
            for i in 0..n_sigma {
                let mut r = DVector::zeros(nz);
                r[na + i] = T::one();
                push_row(r, -bound, bound);
            }
        }
    }
    let mi = c_rows.len();
    let mut cineq = DMatrix::<T>::zeros(mi, nz);
    for (j, r) in c_rows.iter().enumerate() {
        cineq.row_mut(j).copy_from(&r.transpose());
    }

    let problem = QpProblem::new(
        p_mat,
        q_vec,
        aeq,
        beq,
        cineq,
        DVector::from_vec(lo),
        DVector::from_vec(hi),
    )?;
    Ok(CondensedQp {
        problem,
        data,
        scheme,
        with_slack,
    })
}

/// Solution of one predictive control problem.
///
/// `u_bar` and `y_bar` cover the window `-n..L-1`: sample `k` of the
/// sequences corresponds to time offset `k - n` relative to the solve time.
#[derive(Debug, Clone)]
pub struct MpcSolution<T: Scalar> {
    pub alpha: DVector<T>,
    /// Slack over the whole window (`p * (L + n)`); zero for the nominal
    /// scheme.
    pub sigma: DVector<T>,
    pub u_bar: Sequence<T>,
    pub y_bar: Sequence<T>,
    /// Tracking cost plus regularization terms (the minimum-norm ridge is
    /// excluded).
    pub cost: T,
    pub status: QpStatus,
    /// Exact slack bound `||sigma_k||_inf <= eps_bar (1 + ||alpha||_1)`
    /// evaluated over the future window `0..L-1`.
    pub slack_bound_ok: bool,
    /// Same test over the initial window `-n..-1`.
    pub slack_bound_init_ok: bool,
    order: usize,
}

impl<T: Scalar> MpcSolution<T> {
    /// Predicted input at future offset `k` (`0 <= k < L`).
    pub fn u_future(&self, k: usize) -> DVector<T> {
        self.u_bar.at(self.order + k)
    }

    /// Predicted output at future offset `k`.
    pub fn y_future(&self, k: usize) -> DVector<T> {
        self.y_bar.at(self.order + k)
    }

    /// First `s` predicted inputs (the block applied by an `s`-step runner).
    pub fn applied_inputs(&self, s: usize) -> Sequence<T> {
        self.u_bar
            .segment(self.order, self.order + s - 1)
            .expect("applied block inside window")
    }

    /// Future input window of length `L` as a sequence.
    pub fn u_future_sequence(&self) -> Sequence<T> {
        self.u_bar
            .segment(self.order, self.u_bar.len() - 1)
            .expect("future window nonempty")
    }

    /// Slack block at window index `k` counted from `-n` (i.e. `k = 0` is the
    /// first initial-window sample).
    pub fn sigma_block(&self, k: usize, p: usize) -> DVector<T> {
        self.sigma.rows(k * p, p).into_owned()
    }
}

fn stage_cost<T: Scalar>(
    cfg: &MpcConfig<T>,
    u_bar: &Sequence<T>,
    y_bar: &Sequence<T>,
    order: usize,
) -> T {
    let mut cost = T::zero();
    for k in order..u_bar.len() {
        let du = u_bar.at(k) - &cfg.u_setpoint;
        let dy = y_bar.at(k) - &cfg.y_setpoint;
        cost += du.dot(&(&cfg.r_weight * &du)) + dy.dot(&(&cfg.q_weight * &dy));
    }
    cost
}

/// Equality right-hand side for a given initial window:
/// `[u_init; y_init; u_s repeated; y_s repeated]` (terminal part only when
/// the scheme keeps it).
fn build_beq<T: Scalar>(
    cfg: &MpcConfig<T>,
    scheme: Scheme,
    u_init: &DVector<T>,
    y_init: &DVector<T>,
) -> DVector<T> {
    let m = cfg.n_inputs();
    let p = cfg.n_outputs();
    let n = cfg.order;
    let me = (m + p) * n * if scheme.has_terminal() { 2 } else { 1 };
    let mut beq = DVector::zeros(me);
    beq.rows_mut(0, m * n).copy_from(u_init);
    beq.rows_mut(m * n, p * n).copy_from(y_init);
    if scheme.has_terminal() {
        let base = (m + p) * n;
        for k in 0..n {
            beq.rows_mut(base + k * m, m).copy_from(&cfg.u_setpoint);
        }
        for k in 0..n {
            beq.rows_mut(base + m * n + k * p, p).copy_from(&cfg.y_setpoint);
        }
    }
    beq
}

fn finish_solution<T: Scalar>(
    condensed: &CondensedQp<'_, T>,
    cfg: &MpcConfig<T>,
    qp_sol: &crate::qp::QpSolution<T>,
) -> MpcSolution<T> {
    let (alpha, sigma) = condensed.split(&qp_sol.z);
    let (u_bar, y_bar) = condensed.recover(&qp_sol.z);
    let mut cost = stage_cost(cfg, &u_bar, &y_bar, cfg.order);
    if condensed.with_slack {
        cost += cfg.lambda_alpha * cfg.eps_bar * alpha.norm_squared()
            + cfg.lambda_sigma * sigma.norm_squared();
    }
    // Exact slack bound test, always evaluated.
    let p = condensed.data.n_outputs();
    let n = cfg.order;
    let bound =
        cfg.eps_bar * (T::one() + alpha.iter().map(|a| a.abs()).fold(T::zero(), |x, y| x + y));
    let block_ok = |k: usize| sigma.rows(k * p, p).amax() <= bound;
    let slack_bound_ok = (n..n + cfg.horizon).all(block_ok);
    let slack_bound_init_ok = (0..n).all(block_ok);
    MpcSolution {
        alpha,
        sigma,
        u_bar,
        y_bar,
        cost,
        status: qp_sol.status,
        slack_bound_ok,
        slack_bound_init_ok,
        order: n,
    }
}

/// Reusable solver for one (data, configuration, scheme) triple.
///
/// The condensed problem structure is built once; successive initial windows
/// only change the equality right-hand side. Problems without inequality
/// rows additionally reuse one KKT factorization across solves, which is
/// what makes long receding-horizon runs cheap.
pub struct MpcSolver<'a, T: Scalar> {
    condensed: CondensedQp<'a, T>,
    cfg: &'a MpcConfig<T>,
    scheme: Scheme,
    settings: QpSettings<T>,
    kkt: Option<crate::qp::EqualityKkt<T>>,
}

impl<'a, T: Scalar> MpcSolver<'a, T> {
    pub fn new(
        data: &'a DataMatrices<T>,
        cfg: &'a MpcConfig<T>,
        scheme: Scheme,
        settings: QpSettings<T>,
    ) -> Result<Self> {
        let zero_u = DVector::zeros(data.n_inputs() * cfg.order);
        let zero_y = DVector::zeros(data.n_outputs() * cfg.order);
        let condensed = condense(data, cfg, scheme, &zero_u, &zero_y)?;
        let kkt = if condensed.problem.n_ineq() == 0 {
            Some(crate::qp::EqualityKkt::new(
                condensed.problem.p(),
                condensed.problem.aeq(),
            )?)
        } else {
            None
        };
        Ok(Self {
            condensed,
            cfg,
            scheme,
            settings,
            kkt,
        })
    }

    /// Solves for one measured initial window.
    pub fn solve_window(&mut self, u_init: &DVector<T>, y_init: &DVector<T>) -> Result<MpcSolution<T>> {
        let m = self.condensed.data.n_inputs();
        let p = self.condensed.data.n_outputs();
        let n = self.cfg.order;
        if u_init.len() != m * n || y_init.len() != p * n {
            return Err(Error::Dimension("initial window dimensions mismatch".into()));
        }
        let beq = build_beq(self.cfg, self.scheme, u_init, y_init);
        let qp_sol = match &self.kkt {
            Some(kkt) => kkt.solve(self.condensed.problem.q(), &beq, &self.settings),
            None => {
                self.condensed.problem.set_beq(beq)?;
                solve_qp(&self.condensed.problem, &self.settings)?
            }
        };
        Ok(finish_solution(&self.condensed, self.cfg, &qp_sol))
    }
}

/// Solves the configured scheme for the given initial window.
pub fn solve<T: Scalar>(
    data: &DataMatrices<T>,
    cfg: &MpcConfig<T>,
    scheme: Scheme,
    u_init: &DVector<T>,
    y_init: &DVector<T>,
    qp_settings: &QpSettings<T>,
) -> Result<MpcSolution<T>> {
    MpcSolver::new(data, cfg, scheme, *qp_settings)?.solve_window(u_init, y_init)
}

/// Nominal scheme: exact data, terminal equality constraints.
pub fn solve_nominal<T: Scalar>(
    data: &DataMatrices<T>,
    cfg: &MpcConfig<T>,
    u_init: &DVector<T>,
    y_init: &DVector<T>,
    qp_settings: &QpSettings<T>,
) -> Result<MpcSolution<T>> {
    solve(data, cfg, Scheme::Nominal, u_init, y_init, qp_settings)
}

/// Robust scheme: noisy data, slack + regularization, terminal equality
/// constraints. With `cfg.eps_bar = 0` this reduces exactly to the nominal
/// problem (without output constraints).
pub fn solve_robust<T: Scalar>(
    data: &DataMatrices<T>,
    cfg: &MpcConfig<T>,
    u_init: &DVector<T>,
    y_init: &DVector<T>,
    qp_settings: &QpSettings<T>,
) -> Result<MpcSolution<T>> {
    solve(data, cfg, Scheme::Robust, u_init, y_init, qp_settings)
}
