//! Ground-truth LTI plants: simulation, equilibria, observability, bounded
//! measurement noise, and open-loop data collection.
//!
//! The controller itself never touches these models; they exist to generate
//! data, to execute the closed loop, and to evaluate model-based diagnostics
//! in tests. The four-tank benchmark plant lives here as well.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};
use crate::scalar::{from_f64, Scalar};
use crate::traj::{Sequence, Trajectory};

/// Discrete-time state-space plant `x+ = Ax + Bu`, `y = Cx + Du`.
///
/// Construction enforces dimension consistency and minimality
/// (controllability and observability, rank-checked at the standard relative
/// threshold), since every identification-free argument in this crate assumes
/// the data-generating realization is minimal.
#[derive(Debug, Clone)]
pub struct LtiSystem<T: Scalar> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    c: DMatrix<T>,
    d: DMatrix<T>,
}

impl<T: Scalar> LtiSystem<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>, d: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension("A must be square".into()));
        }
        if b.nrows() != n {
            return Err(Error::Dimension("B row count must match A".into()));
        }
        if c.ncols() != n {
            return Err(Error::Dimension("C column count must match A".into()));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension("D must be p x m".into()));
        }
        let sys = Self { a, b, c, d };
        let tol = from_f64::<T>(RANK_TOL);
        let ctrb_rank = linalg::svd_rank(&sys.controllability_matrix(), tol).rank;
        if ctrb_rank < n {
            return Err(Error::Config(format!(
                "realization not controllable (rank {ctrb_rank} < {n})"
            )));
        }
        let obsv_rank = linalg::svd_rank(&sys.observability_matrix(), tol).rank;
        if obsv_rank < n {
            return Err(Error::Config(format!(
                "realization not observable (rank {obsv_rank} < {n})"
            )));
        }
        Ok(sys)
    }

    /// State dimension `n`.
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension `m`.
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    /// Output dimension `p`.
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<T> {
        &self.d
    }

    /// `[B, AB, ..., A^{n-1} B]`.
    pub fn controllability_matrix(&self) -> DMatrix<T> {
        let n = self.order();
        let m = self.n_inputs();
        let mut out = DMatrix::zeros(n, n * m);
        let mut block = self.b.clone();
        for k in 0..n {
            out.view_mut((0, k * m), (n, m)).copy_from(&block);
            block = &self.a * &block;
        }
        out
    }

    /// `[C; CA; ...; CA^{n-1}]`.
    pub fn observability_matrix(&self) -> DMatrix<T> {
        let n = self.order();
        let p = self.n_outputs();
        let mut out = DMatrix::zeros(p * n, n);
        let mut block = self.c.clone();
        for k in 0..n {
            out.view_mut((k * p, 0), (p, n)).copy_from(&block);
            block = &block * &self.a;
        }
        out
    }

    /// Observability matrix together with its left inverse
    /// `(Phi^T Phi)^{-1} Phi^T`; errors if the matrix is rank-deficient.
    pub fn observability_pseudoinverse(&self) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let phi = self.observability_matrix();
        let tol = from_f64::<T>(RANK_TOL);
        if linalg::svd_rank(&phi, tol).rank < self.order() {
            return Err(Error::Singular("observability matrix rank-deficient".into()));
        }
        let phi_dagger = linalg::pseudo_inverse(&phi, tol);
        Ok((phi, phi_dagger))
    }

    /// Propagates the recursion from `x0` under input `u`; the returned state
    /// sequence has one extra sample (the terminal state).
    pub fn simulate(&self, x0: &DVector<T>, u: &Sequence<T>) -> Result<SimResult<T>> {
        if x0.len() != self.order() {
            return Err(Error::Dimension(format!(
                "initial state dimension {} != n = {}",
                x0.len(),
                self.order()
            )));
        }
        if u.dim() != self.n_inputs() {
            return Err(Error::Dimension(format!(
                "input dimension {} != m = {}",
                u.dim(),
                self.n_inputs()
            )));
        }
        let steps = u.len();
        let mut x = DMatrix::zeros(self.order(), steps + 1);
        let mut y = DMatrix::zeros(self.n_outputs(), steps);
        x.set_column(0, x0);
        for k in 0..steps {
            let xk = x.column(k).into_owned();
            let uk = u.at(k);
            y.set_column(k, &(&self.c * &xk + &self.d * &uk));
            x.set_column(k + 1, &(&self.a * &xk + &self.b * &uk));
        }
        Ok(SimResult {
            y: Sequence::from_matrix(y)?,
            x: Sequence::from_matrix(x)?,
        })
    }

    /// Equilibrium induced by the constant input `u_s`:
    /// `x_s = (I - A)^{-1} B u_s`. Errors when `I - A` is singular (the
    /// equilibrium input of an integrating plant is not unique).
    pub fn steady_state(&self, u_s: &DVector<T>) -> Result<Equilibrium<T>> {
        if u_s.len() != self.n_inputs() {
            return Err(Error::Dimension("u_s dimension != m".into()));
        }
        let n = self.order();
        let i_minus_a = DMatrix::identity(n, n) - &self.a;
        let rhs = &self.b * u_s;
        let lu = i_minus_a.clone().lu();
        let x_s = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("I - A is singular".into()))?;
        let residual = (&i_minus_a * &x_s - &rhs).amax();
        let scale = T::one().max(rhs.amax());
        if residual > from_f64::<T>(1e-8) * scale {
            return Err(Error::Singular("I - A is numerically singular".into()));
        }
        let y_s = &self.c * &x_s + &self.d * u_s;
        Ok(Equilibrium {
            u_s: u_s.clone(),
            y_s,
            x_s,
        })
    }

    /// Spectral radius of `A`.
    pub fn spectral_radius(&self) -> T {
        use nalgebra::ComplexField;
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|l| l.modulus())
            .fold(T::zero(), |acc, v| acc.max(v))
    }

    /// Forced-response block Toeplitz over an `n`-step window: block `(i, j)`
    /// is `D` for `i == j`, `C A^{i-j-1} B` for `i > j`, zero above.
    fn forced_response_matrix(&self) -> DMatrix<T> {
        let n = self.order();
        let m = self.n_inputs();
        let p = self.n_outputs();
        let mut g = DMatrix::zeros(p * n, m * n);
        let mut markov = vec![self.d.clone()];
        let mut a_pow = DMatrix::identity(n, n);
        for _ in 1..n {
            markov.push(&self.c * &a_pow * &self.b);
            a_pow = &a_pow * &self.a;
        }
        for i in 0..n {
            for j in 0..=i {
                g.view_mut((i * p, j * m), (p, m)).copy_from(&markov[i - j]);
            }
        }
        g
    }

    /// Recovers the state at the start of an `n`-step input-output window:
    /// `x = Phi_dagger (y_win - G u_win)`. Exact when the window is a
    /// trajectory of the system; model-based, intended for diagnostics and
    /// test harnesses.
    pub fn state_from_io_window(&self, u_win: &DVector<T>, y_win: &DVector<T>) -> Result<DVector<T>> {
        let n = self.order();
        if u_win.len() != self.n_inputs() * n || y_win.len() != self.n_outputs() * n {
            return Err(Error::Dimension(
                "window must stack exactly n input and output samples".into(),
            ));
        }
        let (_, phi_dagger) = self.observability_pseudoinverse()?;
        let free = y_win - self.forced_response_matrix() * u_win;
        Ok(&phi_dagger * free)
    }
}

/// Output and state trajectories produced by [`LtiSystem::simulate`].
pub struct SimResult<T: Scalar> {
    pub y: Sequence<T>,
    /// Length `N + 1`; the final column is the post-run state.
    pub x: Sequence<T>,
}

/// Input-output-state equilibrium triple.
#[derive(Debug, Clone)]
pub struct Equilibrium<T: Scalar> {
    pub u_s: DVector<T>,
    pub y_s: DVector<T>,
    pub x_s: DVector<T>,
}

/// Linearized four-tank process: four states, two pump inputs, two level
/// outputs. Open-loop stable (upper-triangular `A` with diagonal < 1) and
/// minimal.
pub fn four_tank<T: Scalar>() -> LtiSystem<T> {
    let c = |v: f64| from_f64::<T>(v);
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            c(0.921),
            c(0.0),
            c(0.041),
            c(0.0),
            c(0.0),
            c(0.918),
            c(0.0),
            c(0.033),
            c(0.0),
            c(0.0),
            c(0.924),
            c(0.0),
            c(0.0),
            c(0.0),
            c(0.0),
            c(0.937),
        ],
    );
    let b = DMatrix::from_row_slice(
        4,
        2,
        &[
            c(0.017),
            c(0.001),
            c(0.001),
            c(0.023),
            c(0.0),
            c(0.061),
            c(0.072),
            c(0.0),
        ],
    );
    let cm = DMatrix::from_row_slice(2, 4, &[c(1.0), c(0.0), c(0.0), c(0.0), c(0.0), c(1.0), c(0.0), c(0.0)]);
    let d = DMatrix::zeros(2, 2);
    LtiSystem::new(a, b, cm, d).expect("four-tank realization is minimal")
}

/// Bounded uniform measurement noise: samples are i.i.d. uniform on
/// `[-eps_bar, eps_bar]` per component, so `||eps_k||_inf <= eps_bar` holds
/// exactly.
///
/// Streams are generated by `ChaCha8` keyed with `seed`; stream 0 feeds
/// excitation inputs ([`collect_data`]) and stream 1 feeds measurement noise,
/// so inputs and noise drawn from one spec are independent. Raw draws are
/// mapped as `eps_bar * (2 * g - 1)` with `g` uniform on `[0, 1)`, always
/// computed in `f64` before narrowing to the working scalar; CSV fixtures are
/// therefore reproducible bit-exactly for a given seed.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec<T> {
    pub eps_bar: T,
    pub seed: u64,
}

impl<T: Scalar> NoiseSpec<T> {
    pub fn new(eps_bar: T, seed: u64) -> Self {
        Self { eps_bar, seed }
    }

    /// Noiseless spec (handy for nominal experiments).
    pub fn none(seed: u64) -> Self {
        Self {
            eps_bar: T::zero(),
            seed,
        }
    }

    pub(crate) fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

const STREAM_INPUT: u64 = 0;
const STREAM_MEASUREMENT: u64 = 1;

/// Draws one uniform sample on `[-bound, bound]`.
fn uniform_symmetric<T: Scalar>(rng: &mut ChaCha8Rng, bound: f64) -> T {
    from_f64::<T>(bound * (2.0 * rng.random::<f64>() - 1.0))
}

/// Stateful bounded-noise source for online measurements.
pub struct NoiseSource<T: Scalar> {
    rng: ChaCha8Rng,
    eps_bar: f64,
    dim: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> NoiseSource<T> {
    pub fn new(spec: &NoiseSpec<T>, dim: usize) -> Self {
        Self {
            rng: spec.rng(STREAM_MEASUREMENT),
            eps_bar: spec.eps_bar.to_f64().expect("noise bound finite"),
            dim,
            _marker: std::marker::PhantomData,
        }
    }

    /// Next noise vector, `||.||_inf <= eps_bar` exactly.
    pub fn next_vector(&mut self) -> DVector<T> {
        DVector::from_fn(self.dim, |_, _| uniform_symmetric(&mut self.rng, self.eps_bar))
    }
}

/// Adds bounded uniform measurement noise to each sample.
pub fn add_noise<T: Scalar>(y: &Sequence<T>, spec: &NoiseSpec<T>) -> Sequence<T> {
    let mut source = NoiseSource::new(spec, y.dim());
    let cols: Vec<DVector<T>> = (0..y.len()).map(|k| y.at(k) + source.next_vector()).collect();
    Sequence::from_columns(&cols).expect("noisy sequence has same shape")
}

/// Clean and noise-corrupted copies of one recorded experiment.
pub struct DataCollection<T: Scalar> {
    pub clean: Trajectory<T>,
    pub noisy: Trajectory<T>,
}

/// Random minimal system with the prescribed spectral radius, deterministic
/// in `seed`. Entries of `B`, `C` are uniform on `[-1, 1]`, `D` on
/// `[-0.5, 0.5]`; non-minimal draws are rejected. Intended for test
/// harnesses and benchmark sweeps.
pub fn random_minimal<T: Scalar>(
    seed: u64,
    n: usize,
    m: usize,
    p: usize,
    spectral_radius: T,
) -> LtiSystem<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    loop {
        let a_raw = DMatrix::<T>::from_fn(n, n, |_, _| uniform_symmetric(&mut rng, 1.0));
        let b = DMatrix::from_fn(n, m, |_, _| uniform_symmetric(&mut rng, 1.0));
        let c = DMatrix::from_fn(p, n, |_, _| uniform_symmetric(&mut rng, 1.0));
        let d = DMatrix::from_fn(p, m, |_, _| uniform_symmetric(&mut rng, 0.5));
        let probe = LtiSystem {
            a: a_raw.clone(),
            b: b.clone(),
            c: c.clone(),
            d: d.clone(),
        };
        let radius = probe.spectral_radius();
        if radius <= from_f64::<T>(1e-6) {
            continue;
        }
        let a = a_raw * (spectral_radius / radius);
        if let Ok(sys) = LtiSystem::new(a, b, c, d) {
            return sys;
        }
    }
}

/// Runs an open-loop experiment of `n_samples` steps from `x0` with inputs
/// drawn i.i.d. uniform on `[-input_amplitude, input_amplitude]` per channel,
/// returning both the exact and the noise-corrupted measurement record.
pub fn collect_data<T: Scalar>(
    sys: &LtiSystem<T>,
    x0: &DVector<T>,
    n_samples: usize,
    input_amplitude: T,
    spec: &NoiseSpec<T>,
) -> Result<DataCollection<T>> {
    if n_samples == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    let amp = input_amplitude.to_f64().expect("amplitude finite");
    let mut rng = spec.rng(STREAM_INPUT);
    let u = DMatrix::from_fn(sys.n_inputs(), n_samples, |_, _| {
        uniform_symmetric::<T>(&mut rng, amp)
    });
    // Column-major from_fn fills column by column, i.e. per time step.
    let u = Sequence::from_matrix(u)?;
    let sim = sys.simulate(x0, &u)?;
    let noisy_y = add_noise(&sim.y, spec);
    Ok(DataCollection {
        clean: Trajectory::new(u.clone(), sim.y)?,
        noisy: Trajectory::new(u, noisy_y)?,
    })
}
