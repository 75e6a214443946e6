//! Self-contained dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//!     minimize    1/2 z' P z + q' z
//!     subject to  Aeq z = beq
//!                 lo <= C z <= hi      (entries of lo/hi may be +-inf)
//! ```
//!
//! with `P` symmetric positive semidefinite. Two routes are used:
//!
//! - no inequality rows: one direct KKT linear solve (LU, with an SVD
//!   least-squares fallback for rank-deficient systems). Inconsistent
//!   equality constraints are reported as [`QpStatus::Infeasible`];
//! - otherwise: operator splitting (ADMM) with modified Ruiz diagonal
//!   preconditioning, adaptive penalty, and an active-set polish of the
//!   converged iterate.
//!
//! Solves are pure functions of their inputs: identical inputs and settings
//! produce bitwise-identical iterates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{from_f64, Scalar};

/// Convex QP data. `P` is symmetrized on construction; bounds must satisfy
/// `lo <= hi` elementwise.
#[derive(Debug, Clone)]
pub struct QpProblem<T: Scalar> {
    p: DMatrix<T>,
    q: DVector<T>,
    aeq: DMatrix<T>,
    beq: DVector<T>,
    cineq: DMatrix<T>,
    lo: DVector<T>,
    hi: DVector<T>,
}

impl<T: Scalar> QpProblem<T> {
    pub fn new(
        p: DMatrix<T>,
        q: DVector<T>,
        aeq: DMatrix<T>,
        beq: DVector<T>,
        cineq: DMatrix<T>,
        lo: DVector<T>,
        hi: DVector<T>,
    ) -> Result<Self> {
        let nz = q.len();
        if p.nrows() != nz || p.ncols() != nz {
            return Err(Error::Dimension("P must be nz x nz".into()));
        }
        if aeq.ncols() != nz && aeq.nrows() != 0 {
            return Err(Error::Dimension("Aeq column count must be nz".into()));
        }
        if aeq.nrows() != beq.len() {
            return Err(Error::Dimension("Aeq rows != beq length".into()));
        }
        if cineq.ncols() != nz && cineq.nrows() != 0 {
            return Err(Error::Dimension("C column count must be nz".into()));
        }
        if cineq.nrows() != lo.len() || cineq.nrows() != hi.len() {
            return Err(Error::Dimension("C rows != bound lengths".into()));
        }
        if lo.iter().zip(hi.iter()).any(|(&l, &h)| l > h) {
            return Err(Error::Config("lo > hi in some inequality row".into()));
        }
        let p = (&p + p.transpose()) * from_f64::<T>(0.5);
        Ok(Self {
            p,
            q,
            aeq,
            beq,
            cineq,
            lo,
            hi,
        })
    }

    /// Unconstrained problem.
    pub fn unconstrained(p: DMatrix<T>, q: DVector<T>) -> Result<Self> {
        let nz = q.len();
        Self::new(
            p,
            q,
            DMatrix::zeros(0, nz),
            DVector::zeros(0),
            DMatrix::zeros(0, nz),
            DVector::zeros(0),
            DVector::zeros(0),
        )
    }

    /// Equality-constrained problem.
    pub fn equality(p: DMatrix<T>, q: DVector<T>, aeq: DMatrix<T>, beq: DVector<T>) -> Result<Self> {
        let nz = q.len();
        Self::new(
            p,
            q,
            aeq,
            beq,
            DMatrix::zeros(0, nz),
            DVector::zeros(0),
            DVector::zeros(0),
        )
    }

    pub fn n_vars(&self) -> usize {
        self.q.len()
    }
    pub fn n_eq(&self) -> usize {
        self.aeq.nrows()
    }
    pub fn n_ineq(&self) -> usize {
        self.cineq.nrows()
    }
    pub fn p(&self) -> &DMatrix<T> {
        &self.p
    }
    pub fn q(&self) -> &DVector<T> {
        &self.q
    }
    pub fn aeq(&self) -> &DMatrix<T> {
        &self.aeq
    }
    pub fn beq(&self) -> &DVector<T> {
        &self.beq
    }
    pub fn cineq(&self) -> &DMatrix<T> {
        &self.cineq
    }
    pub fn lo(&self) -> &DVector<T> {
        &self.lo
    }
    pub fn hi(&self) -> &DVector<T> {
        &self.hi
    }

    /// `1/2 z' P z + q' z`.
    pub fn objective(&self, z: &DVector<T>) -> T {
        (z.dot(&(&self.p * z))) * from_f64::<T>(0.5) + self.q.dot(z)
    }

    /// Replaces the equality right-hand side (receding-horizon updates).
    pub fn set_beq(&mut self, beq: DVector<T>) -> Result<()> {
        if beq.len() != self.aeq.nrows() {
            return Err(Error::Dimension("beq length must match Aeq rows".into()));
        }
        self.beq = beq;
        Ok(())
    }
}

/// Solver tolerances and iteration limits.
#[derive(Debug, Clone, Copy)]
pub struct QpSettings<T> {
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_iter: usize,
    pub infeasibility_tol: T,
}

impl<T: Scalar> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            abs_tol: from_f64(1e-8),
            rel_tol: from_f64(1e-8),
            max_iter: 50_000,
            infeasibility_tol: from_f64(1e-10),
        }
    }
}

impl<T: Scalar> QpSettings<T> {
    fn validate(&self) -> Result<()> {
        if self.abs_tol <= T::zero()
            || self.rel_tol <= T::zero()
            || self.infeasibility_tol <= T::zero()
            || self.max_iter == 0
        {
            return Err(Error::Config("QP settings must be positive".into()));
        }
        Ok(())
    }
}

/// Terminal state of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    Infeasible,
}

impl std::fmt::Display for QpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QpStatus::Solved => write!(f, "solved"),
            QpStatus::MaxIterations => write!(f, "max_iterations"),
            QpStatus::Infeasible => write!(f, "infeasible"),
        }
    }
}

/// Primal/dual solution. Inequality duals are signed: positive at an active
/// upper bound, negative at an active lower bound, so stationarity reads
/// `P z + q + Aeq' dual_eq + C' dual_ineq = 0`.
#[derive(Debug, Clone)]
pub struct QpSolution<T: Scalar> {
    pub z: DVector<T>,
    pub dual_eq: DVector<T>,
    pub dual_ineq: DVector<T>,
    pub objective: T,
    pub status: QpStatus,
    pub iterations: usize,
}

/// Infinity norms of the four KKT residual blocks.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals<T> {
    pub primal_eq: T,
    pub primal_ineq: T,
    pub dual: T,
    pub comp_slack: T,
}

impl<T: Scalar> KktResiduals<T> {
    pub fn max(&self) -> T {
        self.primal_eq
            .max(self.primal_ineq)
            .max(self.dual)
            .max(self.comp_slack)
    }
}

/// Evaluates the KKT residuals of a candidate solution; pure in its inputs.
pub fn kkt_residuals<T: Scalar>(prob: &QpProblem<T>, sol: &QpSolution<T>) -> Result<KktResiduals<T>> {
    if sol.z.len() != prob.n_vars()
        || sol.dual_eq.len() != prob.n_eq()
        || sol.dual_ineq.len() != prob.n_ineq()
    {
        return Err(Error::Dimension("solution does not match problem".into()));
    }
    let mut dual_res = &prob.p * &sol.z + &prob.q;
    if prob.n_eq() > 0 {
        dual_res += prob.aeq.transpose() * &sol.dual_eq;
    }
    if prob.n_ineq() > 0 {
        dual_res += prob.cineq.transpose() * &sol.dual_ineq;
    }
    let primal_eq = if prob.n_eq() > 0 {
        (&prob.aeq * &sol.z - &prob.beq).amax()
    } else {
        T::zero()
    };
    let mut primal_ineq = T::zero();
    let mut comp_slack = T::zero();
    if prob.n_ineq() > 0 {
        let cz = &prob.cineq * &sol.z;
        for i in 0..prob.n_ineq() {
            let below = (prob.lo[i] - cz[i]).max(T::zero());
            let above = (cz[i] - prob.hi[i]).max(T::zero());
            primal_ineq = primal_ineq.max(below).max(above);
            let mu = sol.dual_ineq[i];
            let slack = if mu > T::zero() {
                prob.hi[i] - cz[i]
            } else if mu < T::zero() {
                cz[i] - prob.lo[i]
            } else {
                T::zero()
            };
            // An infinite slack with a nonzero multiplier is a hard violation.
            let contrib = if slack.is_finite() {
                (mu * slack).abs()
            } else if mu == T::zero() {
                T::zero()
            } else {
                T::infinity()
            };
            comp_slack = comp_slack.max(contrib);
        }
    }
    Ok(KktResiduals {
        primal_eq,
        primal_ineq,
        dual: dual_res.amax(),
        comp_slack,
    })
}

/// Solves the QP. See the module docs for the routing between the direct KKT
/// path and operator splitting.
pub fn solve_qp<T: Scalar>(prob: &QpProblem<T>, settings: &QpSettings<T>) -> Result<QpSolution<T>> {
    settings.validate()?;
    if prob.n_ineq() == 0 {
        solve_equality(prob, settings)
    } else {
        solve_admm(prob, settings)
    }
}

/// Cached factorization of the equality-constrained KKT system
/// `[P A'; A 0]`. Receding-horizon loops reuse one factorization across
/// steps where only `q` and `beq` change.
pub struct EqualityKkt<T: Scalar> {
    p: DMatrix<T>,
    aeq: DMatrix<T>,
    kkt: DMatrix<T>,
    lu: Option<nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl<T: Scalar> EqualityKkt<T> {
    pub fn new(p: &DMatrix<T>, aeq: &DMatrix<T>) -> Result<Self> {
        let nz = p.nrows();
        if p.ncols() != nz || (aeq.nrows() > 0 && aeq.ncols() != nz) {
            return Err(Error::Dimension("KKT blocks inconsistent".into()));
        }
        let me = aeq.nrows();
        let dim = nz + me;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (nz, nz)).copy_from(p);
        if me > 0 {
            kkt.view_mut((0, nz), (nz, me)).copy_from(&aeq.transpose());
            kkt.view_mut((nz, 0), (me, nz)).copy_from(aeq);
        }
        let lu = kkt.clone().lu();
        let lu = if lu.is_invertible() { Some(lu) } else { None };
        Ok(Self {
            p: p.clone(),
            aeq: aeq.clone(),
            kkt,
            lu,
        })
    }

    /// Solves for the given linear cost and right-hand side, classifying the
    /// result exactly like [`solve_qp`] does on the equality-only path.
    pub fn solve(&self, q: &DVector<T>, beq: &DVector<T>, settings: &QpSettings<T>) -> QpSolution<T> {
        let nz = self.p.nrows();
        let me = self.aeq.nrows();
        let mut rhs = DVector::zeros(nz + me);
        rhs.rows_mut(0, nz).copy_from(&(-q));
        if me > 0 {
            rhs.rows_mut(nz, me).copy_from(beq);
        }
        let lu_sol = self
            .lu
            .as_ref()
            .and_then(|lu| lu.solve(&rhs))
            .filter(|sol| {
                let res = (&self.kkt * sol - &rhs).amax();
                let scale = T::one().max(rhs.amax());
                res <= from_f64::<T>(1e-8) * scale
            });
        // Rank-deficient KKT systems (inconsistent or redundant constraints)
        // go through a minimum-norm least-squares solve instead.
        let sol_vec = match lu_sol {
            Some(s) => s,
            None => crate::linalg::lstsq(&self.kkt, &rhs, from_f64::<T>(1e-12)),
        };
        let z = sol_vec.rows(0, nz).into_owned();
        let dual_eq = sol_vec.rows(nz, me).into_owned();
        let objective = (z.dot(&(&self.p * &z))) * from_f64::<T>(0.5) + q.dot(&z);
        let mut solution = QpSolution {
            z,
            dual_eq,
            dual_ineq: DVector::zeros(0),
            objective,
            status: QpStatus::Solved,
            iterations: 1,
        };

        let feas_scale = T::one().max(beq.amax());
        let primal = if me > 0 {
            (&self.aeq * &solution.z - beq).amax()
        } else {
            T::zero()
        };
        if primal > settings.abs_tol.max(from_f64::<T>(1e-9) * feas_scale) {
            solution.status = QpStatus::Infeasible;
            return solution;
        }
        let mut dual_res = &self.p * &solution.z + q;
        if me > 0 {
            dual_res += self.aeq.transpose() * &solution.dual_eq;
        }
        let dual_scale = (&self.p * &solution.z).amax().max(q.amax()).max(T::one());
        if dual_res.amax() > settings.abs_tol + settings.rel_tol * dual_scale {
            solution.status = QpStatus::MaxIterations;
        }
        solution
    }
}

/// Direct KKT solve for problems without inequality rows.
fn solve_equality<T: Scalar>(prob: &QpProblem<T>, settings: &QpSettings<T>) -> Result<QpSolution<T>> {
    Ok(EqualityKkt::new(&prob.p, &prob.aeq)?.solve(&prob.q, &prob.beq, settings))
}

/// Diagonal (modified Ruiz) equilibration of the problem data.
struct Scaling<T: Scalar> {
    d: DVector<T>,
    e: DVector<T>,
    cost: T,
}

fn ruiz_equilibrate<T: Scalar>(
    p: &mut DMatrix<T>,
    q: &mut DVector<T>,
    a: &mut DMatrix<T>,
) -> Scaling<T> {
    let nz = p.nrows();
    let mc = a.nrows();
    let mut d = DVector::from_element(nz, T::one());
    let mut e = DVector::from_element(mc, T::one());
    let mut cost = T::one();
    let guard = |v: T| if v > T::zero() { T::one() / v.sqrt() } else { T::one() };
    for _ in 0..10 {
        let mut delta = DVector::from_element(nz, T::one());
        for i in 0..nz {
            let mut col_norm = T::zero();
            for r in 0..nz {
                col_norm = col_norm.max(p[(r, i)].abs());
            }
            for r in 0..mc {
                col_norm = col_norm.max(a[(r, i)].abs());
            }
            delta[i] = guard(col_norm);
        }
        let mut eps = DVector::from_element(mc, T::one());
        for j in 0..mc {
            let mut row_norm = T::zero();
            for i in 0..nz {
                row_norm = row_norm.max(a[(j, i)].abs());
            }
            eps[j] = guard(row_norm);
        }
        for r in 0..nz {
            for c in 0..nz {
                p[(r, c)] = delta[r] * p[(r, c)] * delta[c];
            }
        }
        for j in 0..mc {
            for i in 0..nz {
                a[(j, i)] = eps[j] * a[(j, i)] * delta[i];
            }
        }
        for i in 0..nz {
            q[i] *= delta[i];
            d[i] *= delta[i];
        }
        for j in 0..mc {
            e[j] *= eps[j];
        }
        // Cost normalization.
        let mut mean_col = T::zero();
        for i in 0..nz {
            let mut col_norm = T::zero();
            for r in 0..nz {
                col_norm = col_norm.max(p[(r, i)].abs());
            }
            mean_col += col_norm;
        }
        mean_col /= from_f64::<T>(nz as f64);
        let gamma = guard(mean_col.max(q.amax()));
        let gamma = gamma * gamma; // cost scaling is not square-rooted
        *p *= gamma;
        *q *= gamma;
        cost *= gamma;
    }
    Scaling { d, e, cost }
}

/// ADMM penalty vector: equality rows are weighted 1e3 heavier.
fn rho_vector<T: Scalar>(n_eq: usize, n_total: usize, rho: T) -> DVector<T> {
    DVector::from_fn(n_total, |j, _| {
        if j < n_eq {
            rho * from_f64::<T>(1e3)
        } else {
            rho
        }
    })
}

fn build_admm_kkt<T: Scalar>(
    p: &DMatrix<T>,
    a: &DMatrix<T>,
    sigma: T,
    rho: &DVector<T>,
) -> DMatrix<T> {
    let nz = p.nrows();
    let mc = a.nrows();
    let dim = nz + mc;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (nz, nz)).copy_from(p);
    for i in 0..nz {
        kkt[(i, i)] += sigma;
    }
    kkt.view_mut((0, nz), (nz, mc)).copy_from(&a.transpose());
    kkt.view_mut((nz, 0), (mc, nz)).copy_from(a);
    for j in 0..mc {
        kkt[(nz + j, nz + j)] = -T::one() / rho[j];
    }
    kkt
}

fn solve_admm<T: Scalar>(prob: &QpProblem<T>, settings: &QpSettings<T>) -> Result<QpSolution<T>> {
    let nz = prob.n_vars();
    let me = prob.n_eq();
    let mi = prob.n_ineq();
    let mc = me + mi;

    // Stacked constraints: equality rows first with lo = hi = beq.
    let mut a_full = DMatrix::zeros(mc, nz);
    a_full.view_mut((0, 0), (me, nz)).copy_from(&prob.aeq);
    a_full.view_mut((me, 0), (mi, nz)).copy_from(&prob.cineq);
    let mut lo = DVector::zeros(mc);
    let mut hi = DVector::zeros(mc);
    lo.rows_mut(0, me).copy_from(&prob.beq);
    hi.rows_mut(0, me).copy_from(&prob.beq);
    lo.rows_mut(me, mi).copy_from(&prob.lo);
    hi.rows_mut(me, mi).copy_from(&prob.hi);

    // Scaled copies.
    let mut p_s = prob.p.clone();
    let mut q_s = prob.q.clone();
    let mut a_s = a_full.clone();
    let scaling = ruiz_equilibrate(&mut p_s, &mut q_s, &mut a_s);
    let lo_s = DVector::from_fn(mc, |j, _| lo[j] * scaling.e[j]);
    let hi_s = DVector::from_fn(mc, |j, _| hi[j] * scaling.e[j]);

    let sigma = from_f64::<T>(1e-6);
    let alpha = from_f64::<T>(1.6);
    let mut rho_base = from_f64::<T>(0.1);
    let mut rho = rho_vector(me, mc, rho_base);
    let mut kkt_lu = build_admm_kkt(&p_s, &a_s, sigma, &rho).lu();

    let mut x = DVector::<T>::zeros(nz);
    let mut z = DVector::<T>::zeros(mc);
    let mut y = DVector::<T>::zeros(mc);
    let mut y_prev_check = y.clone();

    let check_interval = 25usize;
    let mut status = QpStatus::MaxIterations;
    let mut iterations = settings.max_iter;

    let mut rhs = DVector::<T>::zeros(nz + mc);
    for iter in 1..=settings.max_iter {
        for i in 0..nz {
            rhs[i] = sigma * x[i] - q_s[i];
        }
        for j in 0..mc {
            rhs[nz + j] = z[j] - y[j] / rho[j];
        }
        let sol = kkt_lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("ADMM KKT system singular".into()))?;
        let x_tilde = sol.rows(0, nz);
        let nu = sol.rows(nz, mc);
        for i in 0..nz {
            x[i] = alpha * x_tilde[i] + (T::one() - alpha) * x[i];
        }
        let mut z_new = DVector::<T>::zeros(mc);
        for j in 0..mc {
            let z_tilde = z[j] + (nu[j] - y[j]) / rho[j];
            let z_relax = alpha * z_tilde + (T::one() - alpha) * z[j];
            let unclamped = z_relax + y[j] / rho[j];
            z_new[j] = unclamped.clamp(lo_s[j], hi_s[j]);
            y[j] += rho[j] * (z_relax - z_new[j]);
        }
        z = z_new;

        if iter % check_interval != 0 && iter != settings.max_iter {
            continue;
        }

        // Unscaled iterates and residuals.
        let x_u = DVector::from_fn(nz, |i, _| scaling.d[i] * x[i]);
        let z_u = DVector::from_fn(mc, |j, _| z[j] / scaling.e[j]);
        let y_u = DVector::from_fn(mc, |j, _| scaling.e[j] * y[j] / scaling.cost);
        let ax = &a_full * &x_u;
        let px = &prob.p * &x_u;
        let aty = a_full.transpose() * &y_u;
        let r_prim = (&ax - &z_u).amax();
        let r_dual = (&px + &prob.q + &aty).amax();
        let eps_prim = settings.abs_tol + settings.rel_tol * ax.amax().max(z_u.amax());
        let eps_dual =
            settings.abs_tol + settings.rel_tol * px.amax().max(aty.amax()).max(prob.q.amax());
        if r_prim <= eps_prim && r_dual <= eps_dual {
            status = QpStatus::Solved;
            iterations = iter;
            break;
        }

        // Primal infeasibility certificate from the dual increment. Only
        // meaningful while the dual sequence actually diverges: near
        // convergence the increment is numerical noise that can live in the
        // left-nullspace of A' when the constraint rows are rank-deficient.
        let dy = DVector::from_fn(mc, |j, _| {
            scaling.e[j] * (y[j] - y_prev_check[j]) / scaling.cost
        });
        let dy_norm = dy.amax();
        let y_scale = T::one().max(DVector::from_fn(mc, |j, _| scaling.e[j] * y[j] / scaling.cost).amax());
        if dy_norm > from_f64::<T>(1e-6) * y_scale {
            let at_dy = (a_full.transpose() * &dy).amax();
            let mut support = T::zero();
            let mut certificate = at_dy <= settings.infeasibility_tol * dy_norm;
            if certificate {
                for j in 0..mc {
                    let pos = dy[j].max(T::zero());
                    let neg = dy[j].min(T::zero());
                    if (pos > T::zero() && !hi[j].is_finite())
                        || (neg < T::zero() && !lo[j].is_finite())
                    {
                        certificate = false;
                        break;
                    }
                    if hi[j].is_finite() {
                        support += hi[j] * pos;
                    }
                    if lo[j].is_finite() {
                        support += lo[j] * neg;
                    }
                }
            }
            if certificate && support < -settings.infeasibility_tol * dy_norm {
                status = QpStatus::Infeasible;
                iterations = iter;
                break;
            }
        }
        y_prev_check = y.clone();

        // Adaptive penalty on scaled residuals.
        let r_prim_s = (&a_s * &x - &z).amax();
        let r_dual_s = (&p_s * &x + &q_s + a_s.transpose() * &y).amax();
        let prim_scale = (&a_s * &x).amax().max(z.amax()).max(from_f64::<T>(1e-12));
        let dual_scale = (&p_s * &x)
            .amax()
            .max((a_s.transpose() * &y).amax())
            .max(q_s.amax())
            .max(from_f64::<T>(1e-12));
        let ratio = ((r_prim_s / prim_scale) / (r_dual_s / dual_scale).max(from_f64::<T>(1e-16)))
            .sqrt()
            .clamp(from_f64::<T>(1e-4), from_f64::<T>(1e4));
        let rho_new = (rho_base * ratio).clamp(from_f64::<T>(1e-6), from_f64::<T>(1e6));
        if rho_new > rho_base * from_f64::<T>(5.0) || rho_new < rho_base / from_f64::<T>(5.0) {
            rho_base = rho_new;
            rho = rho_vector(me, mc, rho_base);
            kkt_lu = build_admm_kkt(&p_s, &a_s, sigma, &rho).lu();
        }
    }

    // Unscale and split the duals.
    let z_out = DVector::from_fn(nz, |i, _| scaling.d[i] * x[i]);
    let y_u = DVector::from_fn(mc, |j, _| scaling.e[j] * y[j] / scaling.cost);
    let dual_eq = y_u.rows(0, me).into_owned();
    let dual_ineq = y_u.rows(me, mi).into_owned();
    let mut solution = QpSolution {
        objective: prob.objective(&z_out),
        z: z_out,
        dual_eq,
        dual_ineq,
        status,
        iterations,
    };
    if status == QpStatus::Solved {
        polish(prob, settings, &mut solution);
    }
    Ok(solution)
}

/// Active-set polish: re-solves the KKT system with the detected active
/// bounds pinned as equalities and keeps the result if it reduces the worst
/// KKT residual.
fn polish<T: Scalar>(prob: &QpProblem<T>, settings: &QpSettings<T>, sol: &mut QpSolution<T>) {
    let nz = prob.n_vars();
    let me = prob.n_eq();
    let mi = prob.n_ineq();
    let act_tol = settings.abs_tol.max(from_f64::<T>(1e-7));
    let cz = &prob.cineq * &sol.z;
    let mut active: Vec<(usize, bool)> = Vec::new(); // (row, at_upper)
    for i in 0..mi {
        let mu = sol.dual_ineq[i];
        let at_upper = prob.hi[i].is_finite()
            && (mu > act_tol || (prob.hi[i] - cz[i]).abs() <= act_tol);
        if at_upper {
            active.push((i, true));
            continue;
        }
        let at_lower = prob.lo[i].is_finite()
            && (mu < -act_tol || (cz[i] - prob.lo[i]).abs() <= act_tol);
        if at_lower {
            active.push((i, false));
        }
    }
    let ma = active.len();
    let dim = nz + me + ma;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    kkt.view_mut((0, 0), (nz, nz)).copy_from(&prob.p);
    rhs.rows_mut(0, nz).copy_from(&(-&prob.q));
    if me > 0 {
        kkt.view_mut((0, nz), (nz, me)).copy_from(&prob.aeq.transpose());
        kkt.view_mut((nz, 0), (me, nz)).copy_from(&prob.aeq);
        rhs.rows_mut(nz, me).copy_from(&prob.beq);
    }
    for (k, &(row, at_upper)) in active.iter().enumerate() {
        for c in 0..nz {
            kkt[(nz + me + k, c)] = prob.cineq[(row, c)];
            kkt[(c, nz + me + k)] = prob.cineq[(row, c)];
        }
        rhs[nz + me + k] = if at_upper { prob.hi[row] } else { prob.lo[row] };
    }
    let solved = match kkt.clone().lu().solve(&rhs) {
        Some(s) => s,
        None => crate::linalg::lstsq(&kkt, &rhs, from_f64::<T>(1e-12)),
    };
    let mut candidate = QpSolution {
        z: solved.rows(0, nz).into_owned(),
        dual_eq: solved.rows(nz, me).into_owned(),
        dual_ineq: DVector::zeros(mi),
        objective: T::zero(),
        status: QpStatus::Solved,
        iterations: sol.iterations,
    };
    for (k, &(row, _)) in active.iter().enumerate() {
        candidate.dual_ineq[row] = solved[nz + me + k];
    }
    candidate.objective = prob.objective(&candidate.z);
    let before = kkt_residuals(prob, sol).map(|r| r.max());
    let after = kkt_residuals(prob, &candidate).map(|r| r.max());
    if let (Ok(b), Ok(a)) = (before, after) {
        if a < b {
            *sol = candidate;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn settings() -> QpSettings<f64> {
        QpSettings::default()
    }

    #[test]
    fn unconstrained_scalar() {
        // min 1/2 z^2 - z  ->  z = 1, objective -0.5.
        let prob = QpProblem::unconstrained(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_vec(vec![-1.0]),
        )
        .unwrap();
        let sol = solve_qp(&prob, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert_relative_eq!(sol.z[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.objective, -0.5, epsilon = 1e-10);
    }

    #[test]
    fn single_active_bound() {
        // min 1/2 z^2 - z  s.t. z <= 0.5  ->  z = 0.5, dual = 0.5.
        let prob = QpProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_vec(vec![-1.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_vec(vec![f64::NEG_INFINITY]),
            DVector::from_vec(vec![0.5]),
        )
        .unwrap();
        let sol = solve_qp(&prob, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert_relative_eq!(sol.z[0], 0.5, epsilon = 1e-7);
        assert_relative_eq!(sol.dual_ineq[0], 0.5, epsilon = 1e-7);
        let res = kkt_residuals(&prob, &sol).unwrap();
        assert!(res.max() < 1e-8, "kkt residual {:?}", res.max());
    }

    #[test]
    fn kkt_residuals_analytic() {
        let prob = QpProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_vec(vec![-1.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_vec(vec![f64::NEG_INFINITY]),
            DVector::from_vec(vec![0.5]),
        )
        .unwrap();
        let exact = QpSolution {
            z: DVector::from_vec(vec![0.5]),
            dual_eq: DVector::zeros(0),
            dual_ineq: DVector::from_vec(vec![0.5]),
            objective: -0.375,
            status: QpStatus::Solved,
            iterations: 0,
        };
        let res = kkt_residuals(&prob, &exact).unwrap();
        assert!(res.max() <= 1e-12);

        // Perturbing z by 0.1 in the unconstrained example shifts the dual
        // residual by exactly 0.1.
        let prob2 = QpProblem::unconstrained(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_vec(vec![-1.0]),
        )
        .unwrap();
        let perturbed = QpSolution {
            z: DVector::from_vec(vec![1.1]),
            dual_eq: DVector::zeros(0),
            dual_ineq: DVector::zeros(0),
            objective: 0.0,
            status: QpStatus::Solved,
            iterations: 0,
        };
        let res2 = kkt_residuals(&prob2, &perturbed).unwrap();
        assert_relative_eq!(res2.dual, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn equality_constrained_direct() {
        // min 1/2 (z1^2 + z2^2)  s.t.  z1 + z2 = 2  ->  z = (1, 1).
        let prob = QpProblem::equality(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_vec(vec![2.0]),
        )
        .unwrap();
        let sol = solve_qp(&prob, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert_relative_eq!(sol.z[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.z[1], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.dual_eq[0], -1.0, epsilon = 1e-10);
    }

    #[test]
    fn inconsistent_equalities_detected() {
        let prob = QpProblem::equality(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        )
        .unwrap();
        let sol = solve_qp(&prob, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn contradictory_boxes_do_not_report_solved() {
        // x <= 0 and x >= 1.
        let prob = QpProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            DVector::from_vec(vec![f64::NEG_INFINITY, 1.0]),
            DVector::from_vec(vec![0.0, f64::INFINITY]),
        )
        .unwrap();
        let mut s = settings();
        s.max_iter = 20_000;
        let sol = solve_qp(&prob, &s).unwrap();
        assert_ne!(sol.status, QpStatus::Solved);
    }

    #[test]
    fn redundant_equalities_are_fine() {
        // Same constraint twice: rank-deficient but consistent.
        let prob = QpProblem::equality(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-1.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            DVector::from_vec(vec![2.0, 4.0]),
        )
        .unwrap();
        let sol = solve_qp(&prob, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert_relative_eq!(sol.z[0], 1.5, epsilon = 1e-9);
        assert_relative_eq!(sol.z[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn box_qp_medium() {
        // min 1/2 ||z - c||^2 s.t. 0 <= z <= 1 elementwise: clamp(c).
        let n = 8;
        let c: Vec<f64> = (0..n).map(|i| -1.0 + 0.35 * i as f64).collect();
        let prob = QpProblem::new(
            DMatrix::identity(n, n),
            DVector::from_vec(c.iter().map(|v| -v).collect()),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::identity(n, n),
            DVector::zeros(n),
            DVector::from_element(n, 1.0),
        )
        .unwrap();
        let sol = solve_qp(&prob, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        for (i, target) in c.iter().enumerate() {
            assert_relative_eq!(sol.z[i], target.clamp(0.0, 1.0), epsilon = 1e-7);
        }
        let res = kkt_residuals(&prob, &sol).unwrap();
        assert!(res.max() < 1e-8);
    }

    #[test]
    fn deterministic_iterates() {
        let n = 6;
        let m = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 5) as f64 / 5.0);
        let p = &m * m.transpose() + DMatrix::identity(n, n);
        let q = DVector::from_fn(n, |i, _| (i as f64 - 2.5) / 3.0);
        let prob = QpProblem::new(
            p,
            q,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::identity(n, n),
            DVector::from_element(n, -0.4),
            DVector::from_element(n, 0.4),
        )
        .unwrap();
        let a = solve_qp(&prob, &settings()).unwrap();
        let b = solve_qp(&prob, &settings()).unwrap();
        assert_eq!(a.z.as_slice(), b.z.as_slice());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn scaling_invariance_of_argmin() {
        let n = 5;
        let m = DMatrix::from_fn(n, n, |i, j| (1.0 + i as f64) / (1.0 + (i + j) as f64));
        let p = &m * m.transpose() + DMatrix::identity(n, n) * 2.0;
        let q = DVector::from_fn(n, |i, _| (-1.0f64).powi(i as i32) * (1.0 + i as f64) / 4.0);
        let mk = |gamma: f64| {
            QpProblem::new(
                &p * gamma,
                &q * gamma,
                DMatrix::zeros(0, n),
                DVector::zeros(0),
                DMatrix::identity(n, n),
                DVector::from_element(n, -0.25),
                DVector::from_element(n, 0.25),
            )
            .unwrap()
        };
        let base = solve_qp(&mk(1.0), &settings()).unwrap();
        for gamma in [0.05, 12.0] {
            let scaled = solve_qp(&mk(gamma), &settings()).unwrap();
            let diff = (&scaled.z - &base.z).amax();
            assert!(diff <= 10.0 * 1e-8, "gamma {gamma}: drift {diff}");
        }
    }

    #[test]
    fn objective_above_unconstrained_bound() {
        let n = 4;
        let m = DMatrix::from_fn(n, n, |i, j| ((i + 2 * j) % 3) as f64 - 1.0);
        let p = &m * m.transpose() + DMatrix::identity(n, n);
        let q = DVector::from_fn(n, |i, _| 0.5 - i as f64 * 0.3);
        // Unconstrained minimum: -1/2 q' P^{-1} q.
        let chol = p.clone().cholesky().unwrap();
        let bound = -0.5 * q.dot(&chol.solve(&q));
        let prob = QpProblem::new(
            p,
            q,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::identity(n, n),
            DVector::from_element(n, -0.1),
            DVector::from_element(n, 0.1),
        )
        .unwrap();
        let sol = solve_qp(&prob, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!(sol.objective >= bound - 1e-10);
    }
}
