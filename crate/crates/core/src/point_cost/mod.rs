//! Ground cost `c(x, y)`: the optimal value of the fixed-endpoint Lagrange
//! problem
//!
//! ```text
//! c(x, y) = inf ∫₀ᵀ L(t, ω(t), u(t)) dt   s.t.  ω̇ = f(ω, u), ω(0) = x, ω(T) = y
//! ```
//!
//! together with a minimising trajectory (a deterministic trajectory
//! selector). Three routes:
//!
//! - [`lq_point_cost`] — controllable LTI + quadratic cost, via the
//!   Hamiltonian two-point boundary-value map (matrix exponentials); the
//!   cost is the exact quadratic form `⟨x,Dx⟩ − ⟨x,Ey⟩ + ⟨y,Fy⟩`.
//! - [`driftless_point_cost`] — driftless + kinetic cost, by direct
//!   transcription over piecewise-constant controls with endpoint-penalty
//!   continuation and multistart L-BFGS.
//! - [`generic_point_cost`] — same transcription with the drift included;
//!   local stationarity only.

mod optim;

use crate::linalg;
use crate::systems::{flow, ControlAffineSystem, SystemError, SystemKind, Trajectory};
use crate::Real;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

pub use optim::{LbfgsOptions, LbfgsResult};

/// Errors from cost construction and point-cost solvers.
#[derive(Debug, Error)]
pub enum CostError<S: Real> {
    #[error("invalid cost: {0}")]
    InvalidCost(&'static str),
    #[error("singular controllability Gramian (uncontrollable pair)")]
    SingularGramian,
    #[error("unsupported cost/system combination: {0}")]
    Unsupported(&'static str),
    #[error("no restart converged (best endpoint error {endpoint_error:.3e}, gradient norm {grad_norm:.3e})")]
    NonConvergence { best: Box<CostResult<S>>, endpoint_error: f64, grad_norm: f64 },
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Coercivity declaration `L(t,x,u) ≥ α|u|ᵖ + β` with `α > 0`, `p > 1`.
#[derive(Clone, Copy, Debug)]
pub struct Coercivity<S> {
    pub alpha: S,
    pub beta: S,
    pub p: S,
}

type GenericCostFn<S> = dyn Fn(S, &DVector<S>, &DVector<S>) -> S + Send + Sync;

/// The running cost kinds supported by the solvers.
#[derive(Clone)]
pub enum CostKind<S: Real> {
    /// `L = Σᵢ wᵢ uᵢ²` (exponent fixed at `p = 2`).
    Kinetic { weights: DVector<S> },
    /// `L = xᵀQx + uᵀRu`, `Q ⪰ 0`, `R ≻ 0`.
    Quadratic { q: DMatrix<S>, r: DMatrix<S> },
    /// Arbitrary continuous running cost with a convexity-in-`u` flag.
    Generic { eval: Arc<GenericCostFn<S>>, convex_in_u: bool },
}

/// Running cost `L(t, x, u)` with its coercivity parameters.
#[derive(Clone)]
pub struct RunningCost<S: Real> {
    kind: CostKind<S>,
    coercivity: Coercivity<S>,
}

impl<S: Real> std::fmt::Debug for RunningCost<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.kind {
            CostKind::Kinetic { .. } => "kinetic",
            CostKind::Quadratic { .. } => "quadratic",
            CostKind::Generic { .. } => "generic",
        };
        f.debug_struct("RunningCost").field("kind", &kind).finish()
    }
}

impl<S: Real> RunningCost<S> {
    /// Unit-weight kinetic energy `L = Σ uᵢ²` on `n` channels.
    pub fn kinetic(n: usize) -> Self {
        Self::kinetic_weighted(DVector::from_element(n, S::one()))
    }

    /// Weighted kinetic energy `L = Σ wᵢ uᵢ²`, all weights positive.
    pub fn kinetic_weighted(weights: DVector<S>) -> Self {
        assert!(weights.iter().all(|w| *w > S::zero()), "kinetic weights must be positive");
        let alpha = weights.iter().fold(S::max_value().unwrap(), |a, &w| a.min(w));
        Self {
            kind: CostKind::Kinetic { weights },
            coercivity: Coercivity { alpha, beta: S::zero(), p: S::cst(2.0) },
        }
    }

    /// Quadratic cost `L = xᵀQx + uᵀRu`; validates `Q ⪰ 0` and `R ≻ 0`.
    pub fn quadratic(q: DMatrix<S>, r: DMatrix<S>) -> Result<Self, CostError<S>> {
        if q.nrows() != q.ncols() || r.nrows() != r.ncols() {
            return Err(CostError::InvalidCost("Q and R must be square"));
        }
        if !linalg::is_psd(&q, 1e-10) {
            return Err(CostError::InvalidCost("Q must be positive semidefinite"));
        }
        if !linalg::is_pd(&r) {
            return Err(CostError::InvalidCost("R must be positive definite"));
        }
        let alpha = linalg::symmetric_eigenvalues(&r)[0];
        Ok(Self {
            kind: CostKind::Quadratic { q, r },
            coercivity: Coercivity { alpha, beta: S::zero(), p: S::cst(2.0) },
        })
    }

    /// Arbitrary running cost with declared coercivity.
    pub fn generic<F>(eval: F, convex_in_u: bool, coercivity: Coercivity<S>) -> Self
    where
        F: Fn(S, &DVector<S>, &DVector<S>) -> S + Send + Sync + 'static,
    {
        Self { kind: CostKind::Generic { eval: Arc::new(eval), convex_in_u }, coercivity }
    }

    pub fn kind(&self) -> &CostKind<S> {
        &self.kind
    }

    pub fn coercivity(&self) -> Coercivity<S> {
        self.coercivity
    }

    pub fn convex_in_u(&self) -> bool {
        match &self.kind {
            CostKind::Kinetic { .. } | CostKind::Quadratic { .. } => true,
            CostKind::Generic { convex_in_u, .. } => *convex_in_u,
        }
    }

    pub fn is_kinetic(&self) -> bool {
        matches!(self.kind, CostKind::Kinetic { .. })
    }

    pub fn eval(&self, t: S, x: &DVector<S>, u: &DVector<S>) -> S {
        match &self.kind {
            CostKind::Kinetic { weights } => u.iter().zip(weights.iter()).map(|(ui, wi)| *wi * *ui * *ui).sum(),
            CostKind::Quadratic { q, r } => (q * x).dot(x) + (r * u).dot(u),
            CostKind::Generic { eval, .. } => eval(t, x, u),
        }
    }

    pub fn grad_u(&self, t: S, x: &DVector<S>, u: &DVector<S>) -> DVector<S> {
        match &self.kind {
            CostKind::Kinetic { weights } => {
                DVector::from_iterator(u.len(), u.iter().zip(weights.iter()).map(|(ui, wi)| S::cst(2.0) * *wi * *ui))
            }
            CostKind::Quadratic { r, .. } => (linalg::symmetrize(r) * u) * S::cst(2.0),
            CostKind::Generic { eval, .. } => {
                let h = S::cst(1e-6) * (S::one() + u.norm());
                let mut g = DVector::zeros(u.len());
                let mut up = u.clone();
                let mut um = u.clone();
                for i in 0..u.len() {
                    up[i] = u[i] + h;
                    um[i] = u[i] - h;
                    g[i] = (eval(t, x, &up) - eval(t, x, &um)) / (h + h);
                    up[i] = u[i];
                    um[i] = u[i];
                }
                g
            }
        }
    }

    pub fn grad_x(&self, t: S, x: &DVector<S>, u: &DVector<S>) -> DVector<S> {
        match &self.kind {
            CostKind::Kinetic { .. } => DVector::zeros(x.len()),
            CostKind::Quadratic { q, .. } => (linalg::symmetrize(q) * x) * S::cst(2.0),
            CostKind::Generic { eval, .. } => {
                let h = S::cst(1e-6) * (S::one() + x.norm());
                let mut g = DVector::zeros(x.len());
                let mut xp = x.clone();
                let mut xm = x.clone();
                for i in 0..x.len() {
                    xp[i] = x[i] + h;
                    xm[i] = x[i] - h;
                    g[i] = (eval(t, &xp, u) - eval(t, &xm, u)) / (h + h);
                    xp[i] = x[i];
                    xm[i] = x[i];
                }
                g
            }
        }
    }
}

/// Composite trapezoid quadrature of `L` along a trajectory (controls are
/// piecewise constant on the intervals).
pub fn running_cost_quadrature<S: Real>(cost: &RunningCost<S>, traj: &Trajectory<S>) -> S {
    let mut acc = S::zero();
    for k in 0..traj.controls.len() {
        let dt = traj.times[k + 1] - traj.times[k];
        let u = &traj.controls[k];
        let l0 = cost.eval(traj.times[k], &traj.states[k], u);
        let l1 = cost.eval(traj.times[k + 1], &traj.states[k + 1], u);
        acc += dt * S::cst(0.5) * (l0 + l1);
    }
    acc
}

/// A point-cost solution: the value, a minimising trajectory, and solver
/// diagnostics.
#[derive(Clone, Debug)]
pub struct CostResult<S: Real> {
    pub value: S,
    pub trajectory: Trajectory<S>,
    pub converged: bool,
    /// `max − min` of the converged restart values.
    pub multistart_spread: S,
    /// Terminal constraint violation `|ω(T) − y|`.
    pub endpoint_error: S,
    /// Gramian condition number when it exceeded the warning threshold.
    pub condition_warning: Option<S>,
}

// ---------------------------------------------------------------------------
// LQ closed forms
// ---------------------------------------------------------------------------

/// Controllability Gramian `W_T = ∫₀ᵀ e^{At} B R⁻¹ Bᵀ e^{Aᵀt} dt` by
/// Gauss–Legendre quadrature; the output is symmetrised.
pub fn gramian<S: Real>(
    a: &DMatrix<S>,
    b: &DMatrix<S>,
    r: &DMatrix<S>,
    horizon: S,
    quad_nodes: usize,
) -> Result<DMatrix<S>, CostError<S>> {
    if horizon <= S::zero() {
        return Err(CostError::InvalidCost("horizon must be positive"));
    }
    let chol = linalg::symmetrize(r).cholesky().ok_or(CostError::InvalidCost("R must be positive definite"))?;
    let r_inv = chol.inverse();
    let d = a.nrows();
    let (nodes, weights) = linalg::gauss_legendre::<S>(quad_nodes, S::zero(), horizon);
    let mut w = DMatrix::<S>::zeros(d, d);
    let core = b * &r_inv * b.transpose();
    for (t, wt) in nodes.iter().zip(weights.iter()) {
        let e = linalg::expm(&(a * *t));
        w += (&e * &core * e.transpose()) * *wt;
    }
    Ok(linalg::symmetrize(&w))
}

/// The LQ cost in closed form: `c(x,y) = ⟨x,Dx⟩ − ⟨x,Ey⟩ + ⟨y,Fy⟩`.
#[derive(Clone, Debug)]
pub struct LqCostForm<S: Real> {
    pub d: DMatrix<S>,
    pub e: DMatrix<S>,
    pub f: DMatrix<S>,
    /// Gramian condition number when above the `1e12` warning threshold.
    pub condition_warning: Option<S>,
    hamiltonian: DMatrix<S>,
    phi11: DMatrix<S>,
    phi12_inv: DMatrix<S>,
    r_inv_bt: DMatrix<S>,
    horizon: S,
}

impl<S: Real> LqCostForm<S> {
    pub fn value(&self, x: &DVector<S>, y: &DVector<S>) -> S {
        (&self.d * x).dot(x) - (&self.e * y).dot(x) + (&self.f * y).dot(y)
    }
}

/// Quadratic representation of the LQ point cost from the Hamiltonian
/// two-point boundary-value map.
///
/// The Hamiltonian block matrix for `L = xᵀQx + uᵀRu` is
/// `M = [[A, −½BR⁻¹Bᵀ], [−2Q, −Aᵀ]]`; with `Φ = e^{MT}` the closed form is
/// `c(x,y) = ½(xᵀp₀ − yᵀp_T)`, `p₀ = Φ₁₂⁻¹(y − Φ₁₁x)`.
pub fn lq_cost_matrices<S: Real>(
    a: &DMatrix<S>,
    b: &DMatrix<S>,
    q: &DMatrix<S>,
    r: &DMatrix<S>,
    horizon: S,
) -> Result<LqCostForm<S>, CostError<S>> {
    let d = a.nrows();
    if a.ncols() != d || b.nrows() != d || q.nrows() != d || q.ncols() != d || r.nrows() != b.ncols() {
        return Err(CostError::InvalidCost("inconsistent LQ dimensions"));
    }
    if !linalg::is_psd(q, 1e-10) {
        return Err(CostError::InvalidCost("Q must be positive semidefinite"));
    }
    let chol = linalg::symmetrize(r).cholesky().ok_or(CostError::InvalidCost("R must be positive definite"))?;
    if crate::systems::kalman_rank(a, b)? < d {
        return Err(CostError::SingularGramian);
    }

    let w = gramian(a, b, r, horizon, 32)?;
    let cond = linalg::condition_number(&w);
    let condition_warning = if cond > S::cst(1e12) { Some(cond) } else { None };

    let r_inv = chol.inverse();
    let s = b * &r_inv * b.transpose();
    let mut m = DMatrix::<S>::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(a);
    m.view_mut((0, d), (d, d)).copy_from(&(-&s * S::cst(0.5)));
    m.view_mut((d, 0), (d, d)).copy_from(&(-(linalg::symmetrize(q)) * S::cst(2.0)));
    m.view_mut((d, d), (d, d)).copy_from(&(-a.transpose()));

    let phi = linalg::expm(&(&m * horizon));
    let phi11 = phi.view((0, 0), (d, d)).into_owned();
    let phi12 = phi.view((0, d), (d, d)).into_owned();
    let phi21 = phi.view((d, 0), (d, d)).into_owned();
    let phi22 = phi.view((d, d), (d, d)).into_owned();
    let phi12_inv = linalg::inverse(&phi12).ok_or(CostError::SingularGramian)?;

    let half = S::cst(0.5);
    let dm = -linalg::symmetrize(&(&phi12_inv * &phi11)) * half;
    let fm = -linalg::symmetrize(&(&phi22 * &phi12_inv)) * half;
    let em = -(&phi12_inv - phi21.transpose() + (&phi22 * &phi12_inv * &phi11).transpose()) * half;

    if !linalg::is_pd(&dm) || !linalg::is_pd(&fm) || linalg::numerical_rank(&em) < d {
        return Err(CostError::InvalidCost("degenerate LQ representation (D, F not PD or E singular)"));
    }

    Ok(LqCostForm {
        d: dm,
        e: em,
        f: fm,
        condition_warning,
        hamiltonian: m,
        phi11,
        phi12_inv,
        r_inv_bt: &r_inv * b.transpose(),
        horizon,
    })
}

/// LQ point cost: value from the quadratic form, trajectory by exact
/// stepping of the Hamiltonian system from the solved initial costate.
pub fn lq_point_cost<S: Real>(
    form: &LqCostForm<S>,
    x: &DVector<S>,
    y: &DVector<S>,
    steps: usize,
) -> CostResult<S> {
    let d = form.phi11.nrows();
    assert_eq!(x.len(), d, "source dimension");
    assert_eq!(y.len(), d, "target dimension");
    assert!(steps >= 1);
    let value = form.value(x, y);
    let p0 = &form.phi12_inv * (y - &form.phi11 * x);

    let h = form.horizon / S::cst(steps as f64);
    let step_full = linalg::expm(&(&form.hamiltonian * h));
    let step_half = linalg::expm(&(&form.hamiltonian * (h * S::cst(0.5))));

    let mut z = DVector::<S>::zeros(2 * d);
    z.rows_mut(0, d).copy_from(x);
    z.rows_mut(d, d).copy_from(&p0);

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    times.push(S::zero());
    states.push(x.clone());
    for k in 0..steps {
        let z_mid = &step_half * &z;
        controls.push(-(&form.r_inv_bt * z_mid.rows(d, d)) * S::cst(0.5));
        z = &step_full * &z;
        times.push(h * S::cst((k + 1) as f64));
        states.push(z.rows(0, d).into_owned());
    }
    let endpoint_error = (states.last().unwrap() - y).norm();
    let trajectory = Trajectory { times, states, controls, cost: value };
    CostResult {
        value,
        trajectory,
        converged: true,
        multistart_spread: S::zero(),
        endpoint_error,
        condition_warning: form.condition_warning,
    }
}

// ---------------------------------------------------------------------------
// Direct transcription
// ---------------------------------------------------------------------------

/// Parameters for the transcription solvers and cost matrices.
#[derive(Clone, Debug)]
pub struct TranscriptionParams<S> {
    /// Number of piecewise-constant control intervals.
    pub steps: usize,
    /// Multistart count (first start is the straight-line initialisation).
    pub restarts: usize,
    pub seed: u64,
    /// Endpoint-penalty continuation weights; extended by factors of 10 up
    /// to `penalty_cap` while the endpoint tolerance is unmet.
    pub penalty_schedule: Vec<S>,
    pub penalty_cap: S,
    pub max_lbfgs_iters: usize,
    pub grad_tol: S,
    pub endpoint_tol: S,
}

impl<S: Real> Default for TranscriptionParams<S> {
    fn default() -> Self {
        Self {
            steps: 64,
            restarts: 4,
            seed: 0,
            penalty_schedule: vec![S::cst(1e2), S::cst(1e3), S::cst(1e4), S::cst(1e5)],
            penalty_cap: S::cst(1e9),
            max_lbfgs_iters: 300,
            grad_tol: S::cst(1e-6),
            endpoint_tol: S::cst(1e-5),
        }
    }
}

struct Rollout<S: Real> {
    states: Vec<DVector<S>>,
    /// `∂x_{k+1}/∂x_k` per step.
    a_mats: Vec<DMatrix<S>>,
    /// `∂x_{k+1}/∂u_k` per step.
    b_mats: Vec<DMatrix<S>>,
}

/// RK4 rollout that also accumulates the exact step Jacobians by the chain
/// rule through the four stages.
fn rollout_with_jacobians<S: Real>(
    sys: &ControlAffineSystem<S>,
    x0: &DVector<S>,
    controls: &[DVector<S>],
    h: S,
) -> Rollout<S> {
    let d = sys.dim();
    let n = controls.len();
    let mut states = Vec::with_capacity(n + 1);
    let mut a_mats = Vec::with_capacity(n);
    let mut b_mats = Vec::with_capacity(n);
    states.push(x0.clone());
    let half = S::cst(0.5);
    let two = S::cst(2.0);
    let sixth = h / S::cst(6.0);
    let eye = DMatrix::<S>::identity(d, d);
    let mut x = x0.clone();
    for u in controls {
        let a1 = x.clone();
        let k1 = sys.velocity(&a1, u);
        let a2 = &x + &k1 * (h * half);
        let k2 = sys.velocity(&a2, u);
        let a3 = &x + &k2 * (h * half);
        let k3 = sys.velocity(&a3, u);
        let a4 = &x + &k3 * h;
        let k4 = sys.velocity(&a4, u);

        let j1 = sys.dynamics_jacobian_x(&a1, u);
        let j2 = sys.dynamics_jacobian_x(&a2, u);
        let j3 = sys.dynamics_jacobian_x(&a3, u);
        let j4 = sys.dynamics_jacobian_x(&a4, u);

        let dk1 = j1.clone();
        let dk2 = &j2 * (&eye + &dk1 * (h * half));
        let dk3 = &j3 * (&eye + &dk2 * (h * half));
        let dk4 = &j4 * (&eye + &dk3 * h);
        a_mats.push(&eye + (&dk1 + &dk2 * two + &dk3 * two + &dk4) * sixth);

        let g1 = sys.control_matrix(&a1);
        let g2 = sys.control_matrix(&a2);
        let g3 = sys.control_matrix(&a3);
        let g4 = sys.control_matrix(&a4);
        let bk1 = g1;
        let bk2 = &j2 * &bk1 * (h * half) + g2;
        let bk3 = &j3 * &bk2 * (h * half) + g3;
        let bk4 = &j4 * &bk3 * h + g4;
        b_mats.push((bk1 + bk2 * two + bk3 * two + bk4) * sixth);

        x += (k1 + k2 * two + k3 * two + k4) * sixth;
        states.push(x.clone());
    }
    Rollout { states, a_mats, b_mats }
}

/// Value and exact gradient of
/// `J_μ(U) = trapezoid(L) + μ·|x_N(U) − y|²` with respect to the stacked
/// controls, via a reverse (adjoint) sweep over the RK4 step Jacobians.
#[allow(clippy::too_many_arguments)]
fn penalized_objective<S: Real>(
    sys: &ControlAffineSystem<S>,
    cost: &RunningCost<S>,
    x0: &DVector<S>,
    y: &DVector<S>,
    horizon: S,
    mu: S,
    u_flat: &DVector<S>,
    grad_out: &mut DVector<S>,
) -> S {
    let d = sys.dim();
    let nu = sys.num_controls();
    let n = u_flat.len() / nu;
    let h = horizon / S::cst(n as f64);
    let controls: Vec<DVector<S>> =
        (0..n).map(|k| u_flat.rows(k * nu, nu).into_owned()).collect();
    let roll = rollout_with_jacobians(sys, x0, &controls, h);

    let t_of = |k: usize| h * S::cst(k as f64);
    let half_h = h * S::cst(0.5);

    // Running cost and its per-node partials.
    let mut value = S::zero();
    let mut cx = vec![DVector::<S>::zeros(d); n + 1];
    let mut cu = vec![DVector::<S>::zeros(nu); n];
    for k in 0..n {
        let (t0, t1) = (t_of(k), t_of(k + 1));
        let u = &controls[k];
        value += half_h * (cost.eval(t0, &roll.states[k], u) + cost.eval(t1, &roll.states[k + 1], u));
        cx[k] += cost.grad_x(t0, &roll.states[k], u) * half_h;
        cx[k + 1] += cost.grad_x(t1, &roll.states[k + 1], u) * half_h;
        cu[k] = (cost.grad_u(t0, &roll.states[k], u) + cost.grad_u(t1, &roll.states[k + 1], u)) * half_h;
    }

    let gap = roll.states[n].clone() - y;
    let penalty = mu * gap.norm_squared();

    // Reverse sweep.
    let mut lambda = cx[n].clone() + gap * (S::cst(2.0) * mu);
    for k in (0..n).rev() {
        let gu = roll.b_mats[k].transpose() * &lambda + &cu[k];
        grad_out.rows_mut(k * nu, nu).copy_from(&gu);
        lambda = roll.a_mats[k].transpose() * lambda + &cx[k];
    }
    value + penalty
}

/// Straight-line initialisation: interpolate states linearly and map the
/// required velocity to controls by least squares through `G(x)`.
fn straight_line_controls<S: Real>(
    sys: &ControlAffineSystem<S>,
    x: &DVector<S>,
    y: &DVector<S>,
    horizon: S,
    n: usize,
) -> DVector<S> {
    let nu = sys.num_controls();
    let mut u = DVector::<S>::zeros(n * nu);
    let h = horizon / S::cst(n as f64);
    for k in 0..n {
        let s = (S::cst(k as f64) + S::cst(0.5)) / S::cst(n as f64);
        let xk = x * (S::one() - s) + y * s;
        let v = (y - x) / horizon - sys.drift().eval(&xk);
        let g = sys.control_matrix(&xk);
        let svd = g.svd(true, true);
        if let Ok(sol) = svd.solve(&v, S::cst(1e-12)) {
            u.rows_mut(k * nu, nu).copy_from(&sol);
        }
        let _ = h;
    }
    u
}

struct Candidate<S: Real> {
    u: DVector<S>,
    value: S,
    endpoint_error: S,
    grad_norm: S,
    control_norm: S,
    restart: usize,
}

fn solve_transcription<S: Real>(
    sys: &ControlAffineSystem<S>,
    cost: &RunningCost<S>,
    x: &DVector<S>,
    y: &DVector<S>,
    horizon: S,
    params: &TranscriptionParams<S>,
) -> Result<CostResult<S>, CostError<S>> {
    if x.len() != sys.dim() || y.len() != sys.dim() {
        return Err(CostError::System(SystemError::DimensionMismatch {
            what: "endpoint",
            expected: sys.dim(),
            got: if x.len() != sys.dim() { x.len() } else { y.len() },
        }));
    }
    let n = params.steps;
    let nu = sys.num_controls();
    let h = horizon / S::cst(n as f64);
    let base = straight_line_controls(sys, x, y, horizon, n);
    let noise_scale = S::cst(0.5) * (y - x).norm();

    let mut candidates: Vec<Candidate<S>> = Vec::with_capacity(params.restarts);
    for restart in 0..params.restarts.max(1) {
        let mut u = base.clone();
        if restart > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(
                params.seed.wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            );
            for v in u.iter_mut() {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                *v += noise_scale * S::cst(z);
            }
        }

        // Penalty continuation, extended by 10x while the endpoint misses.
        let mut schedule = params.penalty_schedule.clone();
        let mut stage = 0;
        let mut last = None;
        while stage < schedule.len() {
            let mu = schedule[stage];
            let opts = LbfgsOptions {
                max_iters: params.max_lbfgs_iters,
                grad_tol: params.grad_tol,
                ..Default::default()
            };
            let res = optim::minimize(
                |uv: &DVector<S>, g: &mut DVector<S>| {
                    penalized_objective(sys, cost, x, y, horizon, mu, uv, g)
                },
                u.clone(),
                &opts,
            );
            u = res.x.clone();
            let endpoint = endpoint_gap(sys, x, y, &u, horizon, n);
            last = Some((res, endpoint));
            stage += 1;
            if stage == schedule.len()
                && endpoint > params.endpoint_tol
                && schedule[stage - 1] * S::cst(10.0) <= params.penalty_cap
            {
                let next = schedule[stage - 1] * S::cst(10.0);
                schedule.push(next);
            }
        }
        let (res, endpoint_error) = last.expect("at least one penalty stage");
        let controls: Vec<DVector<S>> = (0..n).map(|k| u.rows(k * nu, nu).into_owned()).collect();
        let traj = flow(sys, x, &controls, horizon)?;
        let value = running_cost_quadrature(cost, &traj);
        let control_norm = (u.norm_squared() * h).sqrt();
        candidates.push(Candidate {
            u,
            value,
            endpoint_error,
            grad_norm: res.grad_norm,
            control_norm,
            restart,
        });
    }

    let converged: Vec<&Candidate<S>> = candidates
        .iter()
        .filter(|c| c.endpoint_error <= params.endpoint_tol && c.grad_norm <= params.grad_tol)
        .collect();

    let spread = |cs: &[&Candidate<S>]| -> S {
        let vals: Vec<S> = cs.iter().map(|c| c.value).collect();
        let lo = vals.iter().fold(S::max_value().unwrap(), |a, &b| a.min(b));
        let hi = vals.iter().fold(-S::max_value().unwrap(), |a, &b| a.max(b));
        if vals.is_empty() {
            S::zero()
        } else {
            hi - lo
        }
    };

    // Deterministic selector: lowest value; within 1e-9 the smaller control
    // norm wins, then the lower restart index.
    let pick = |cs: &[&Candidate<S>]| -> usize {
        let mut best = 0;
        for i in 1..cs.len() {
            let (b, c) = (cs[best], cs[i]);
            let tie = (c.value - b.value).abs() <= S::cst(1e-9);
            if (!tie && c.value < b.value)
                || (tie && (c.control_norm, c.restart) < (b.control_norm, b.restart))
            {
                best = i;
            }
        }
        best
    };

    let build = |c: &Candidate<S>, converged_flag: bool, spread_v: S| -> Result<CostResult<S>, CostError<S>> {
        let controls: Vec<DVector<S>> = (0..n).map(|k| c.u.rows(k * nu, nu).into_owned()).collect();
        let mut traj = flow(sys, x, &controls, horizon)?;
        traj.cost = c.value;
        Ok(CostResult {
            value: c.value,
            trajectory: traj,
            converged: converged_flag,
            multistart_spread: spread_v,
            endpoint_error: c.endpoint_error,
            condition_warning: None,
        })
    };

    if converged.is_empty() {
        let all: Vec<&Candidate<S>> = candidates.iter().collect();
        let best = &candidates[pick(&all)];
        let result = build(best, false, spread(&all))?;
        return Err(CostError::NonConvergence {
            endpoint_error: best.endpoint_error.as_f64(),
            grad_norm: best.grad_norm.as_f64(),
            best: Box::new(result),
        });
    }
    let sp = spread(&converged);
    let best = converged[pick(&converged)];
    build(best, true, sp)
}

fn endpoint_gap<S: Real>(
    sys: &ControlAffineSystem<S>,
    x: &DVector<S>,
    y: &DVector<S>,
    u_flat: &DVector<S>,
    horizon: S,
    n: usize,
) -> S {
    let nu = sys.num_controls();
    let controls: Vec<DVector<S>> = (0..n).map(|k| u_flat.rows(k * nu, nu).into_owned()).collect();
    match flow(sys, x, &controls, horizon) {
        Ok(traj) => (traj.terminal_state() - y).norm(),
        Err(_) => S::cst(f64::INFINITY),
    }
}

/// Driftless kinetic point cost by direct transcription with multistart.
///
/// `converged` requires endpoint error ≤ 1e-5 and gradient norm ≤ 1e-6 at
/// the final penalty stage; non-convergence errors out carrying the best
/// candidate.
pub fn driftless_point_cost<S: Real>(
    sys: &ControlAffineSystem<S>,
    cost: &RunningCost<S>,
    x: &DVector<S>,
    y: &DVector<S>,
    horizon: S,
    params: &TranscriptionParams<S>,
) -> Result<CostResult<S>, CostError<S>> {
    if !sys.is_driftless() {
        return Err(CostError::Unsupported("driftless_point_cost needs a driftless system"));
    }
    if !cost.is_kinetic() {
        return Err(CostError::Unsupported("driftless_point_cost needs a kinetic cost"));
    }
    if params.steps < 8 {
        return Err(CostError::InvalidCost("transcription needs at least 8 steps"));
    }
    solve_transcription(sys, cost, x, y, horizon, params)
}

/// Point cost for arbitrary systems/costs by the same transcription; only
/// local stationarity is guaranteed.
pub fn generic_point_cost<S: Real>(
    sys: &ControlAffineSystem<S>,
    cost: &RunningCost<S>,
    x: &DVector<S>,
    y: &DVector<S>,
    horizon: S,
    params: &TranscriptionParams<S>,
) -> Result<CostResult<S>, CostError<S>> {
    if params.steps < 8 {
        return Err(CostError::InvalidCost("transcription needs at least 8 steps"));
    }
    solve_transcription(sys, cost, x, y, horizon, params)
}

// ---------------------------------------------------------------------------
// Cost matrices
// ---------------------------------------------------------------------------

/// A matrix of pairwise point costs with the entries that failed to
/// converge flagged.
#[derive(Clone, Debug)]
pub struct CostMatrix<S: Real> {
    pub values: DMatrix<S>,
    /// `(i, j)` of entries whose solver did not converge (value is the best
    /// candidate's).
    pub defects: Vec<(usize, usize)>,
}

fn entry_seed(base: u64, i: usize, j: usize) -> u64 {
    base ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (j as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn point_cost_dispatch<S: Real>(
    sys: &ControlAffineSystem<S>,
    cost: &RunningCost<S>,
    lq_form: Option<&LqCostForm<S>>,
    x: &DVector<S>,
    y: &DVector<S>,
    horizon: S,
    params: &TranscriptionParams<S>,
) -> Result<CostResult<S>, CostError<S>> {
    if let Some(form) = lq_form {
        return Ok(lq_point_cost(form, x, y, params.steps));
    }
    if sys.is_driftless() && cost.is_kinetic() {
        driftless_point_cost(sys, cost, x, y, horizon, params)
    } else {
        generic_point_cost(sys, cost, x, y, horizon, params)
    }
}

fn lq_form_for<S: Real>(
    sys: &ControlAffineSystem<S>,
    cost: &RunningCost<S>,
    horizon: S,
) -> Result<Option<LqCostForm<S>>, CostError<S>> {
    if let (SystemKind::Lti { a, b }, CostKind::Quadratic { q, r }) = (sys.kind(), cost.kind()) {
        Ok(Some(lq_cost_matrices(a, b, q, r, horizon)?))
    } else {
        Ok(None)
    }
}

/// Pairwise cost matrix `C[i][j] = c(xᵢ, yⱼ)`; entries are independent and
/// computed in parallel with per-entry deterministic seeding.
pub fn cost_matrix<S: Real>(
    sys: &ControlAffineSystem<S>,
    cost: &RunningCost<S>,
    xs: &[DVector<S>],
    ys: &[DVector<S>],
    horizon: S,
    params: &TranscriptionParams<S>,
) -> Result<CostMatrix<S>, CostError<S>> {
    for p in xs.iter().chain(ys.iter()) {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(CostError::InvalidCost("non-finite support point"));
        }
    }
    let lq_form = lq_form_for(sys, cost, horizon)?;
    let (m, n) = (xs.len(), ys.len());
    let entries: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let computed: Vec<(S, bool)> = entries
        .par_iter()
        .map(|&(i, j)| {
            let mut p = params.clone();
            p.seed = entry_seed(params.seed, i, j);
            match point_cost_dispatch(sys, cost, lq_form.as_ref(), &xs[i], &ys[j], horizon, &p) {
                Ok(res) => (res.value, false),
                Err(CostError::NonConvergence { best, .. }) => (best.value, true),
                Err(_) => (S::cst(f64::NAN), true),
            }
        })
        .collect();
    let mut values = DMatrix::<S>::zeros(m, n);
    let mut defects = Vec::new();
    for (&(i, j), &(v, defect)) in entries.iter().zip(&computed) {
        values[(i, j)] = v;
        if defect {
            defects.push((i, j));
        }
    }
    Ok(CostMatrix { values, defects })
}

/// Point-cost results (with trajectories) for an explicit list of support
/// pairs, seeded identically to [`cost_matrix`] so values agree bit-for-bit.
pub fn trajectories_for_pairs<S: Real>(
    sys: &ControlAffineSystem<S>,
    cost: &RunningCost<S>,
    xs: &[DVector<S>],
    ys: &[DVector<S>],
    pairs: &[(usize, usize)],
    horizon: S,
    params: &TranscriptionParams<S>,
) -> Result<Vec<((usize, usize), CostResult<S>)>, CostError<S>> {
    let lq_form = lq_form_for(sys, cost, horizon)?;
    pairs
        .par_iter()
        .map(|&(i, j)| {
            let mut p = params.clone();
            p.seed = entry_seed(params.seed, i, j);
            let res = point_cost_dispatch(sys, cost, lq_form.as_ref(), &xs[i], &ys[j], horizon, &p)?;
            Ok(((i, j), res))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Endpoint-map singularity diagnostic
// ---------------------------------------------------------------------------

/// Smallest singular value of the time-varying controllability Gramian of
/// the linearisation along a trajectory.
///
/// The linearisation is `A(t) = ∂ₓf(x(t), u(t))`, `B(t) = G(x(t))`; the
/// Gramian `W = ∫₀ᵀ Φ(T,t) B(t) B(t)ᵀ Φ(T,t)ᵀ dt` is evaluated with the
/// trapezoid rule on the trajectory grid. A value near zero signals a
/// singular curve (endpoint-map differential not surjective).
pub fn endpoint_map_singularity<S: Real>(
    sys: &ControlAffineSystem<S>,
    traj: &Trajectory<S>,
) -> Result<S, CostError<S>> {
    traj.validate()?;
    if traj.states[0].len() != sys.dim() {
        return Err(CostError::System(SystemError::DimensionMismatch {
            what: "trajectory state",
            expected: sys.dim(),
            got: traj.states[0].len(),
        }));
    }
    if traj.controls[0].len() != sys.num_controls() {
        return Err(CostError::System(SystemError::DimensionMismatch {
            what: "trajectory control",
            expected: sys.num_controls(),
            got: traj.controls[0].len(),
        }));
    }
    let d = sys.dim();
    let n = traj.controls.len();

    // State transition matrices Φ(t_k, 0) by RK4 on Ṁ = A(t) M.
    let mut phis = Vec::with_capacity(n + 1);
    let mut m = DMatrix::<S>::identity(d, d);
    phis.push(m.clone());
    for k in 0..n {
        let h = traj.times[k + 1] - traj.times[k];
        let u = &traj.controls[k];
        let a_at = |x: &DVector<S>| sys.dynamics_jacobian_x(x, u);
        let x0 = &traj.states[k];
        let x1 = &traj.states[k + 1];
        let xm = (x0 + x1) * S::cst(0.5);
        let (a0, am, a1) = (a_at(x0), a_at(&xm), a_at(x1));
        let half = S::cst(0.5);
        let k1 = &a0 * &m;
        let k2 = &am * (&m + &k1 * (h * half));
        let k3 = &am * (&m + &k2 * (h * half));
        let k4 = &a1 * (&m + &k3 * h);
        m += (k1 + k2 * S::cst(2.0) + k3 * S::cst(2.0) + k4) * (h / S::cst(6.0));
        phis.push(m.clone());
    }
    let phi_t = phis[n].clone();

    let mut w = DMatrix::<S>::zeros(d, d);
    for k in 0..=n {
        let g = sys.control_matrix(&traj.states[k]);
        let phi_inv = linalg::inverse(&phis[k]).ok_or(CostError::SingularGramian)?;
        let f = &phi_t * phi_inv;
        let term = &f * &g * g.transpose() * f.transpose();
        let weight = if k == 0 {
            (traj.times[1] - traj.times[0]) * S::cst(0.5)
        } else if k == n {
            (traj.times[n] - traj.times[n - 1]) * S::cst(0.5)
        } else {
            (traj.times[k + 1] - traj.times[k - 1]) * S::cst(0.5)
        };
        w += term * weight;
    }
    Ok(linalg::smallest_singular_value(&linalg::symmetrize(&w)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_relative_eq;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }
    fn v3(a: f64, b: f64, c: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b, c])
    }

    #[test]
    fn gramian_examples() {
        let (a, b) = presets::double_integrator_matrices::<f64>();
        let r = DMatrix::from_element(1, 1, 1.0);
        // Hand quadrature of e^{At}B = (t, 1)ᵀ gives [[1/3, 1/2], [1/2, 1]].
        let w = gramian(&a, &b, &r, 1.0, 32).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 0.5, 0.5, 1.0]);
        assert!((w - expected).norm() < 1e-12);

        // A = 0, B = I, R = I ⇒ T·I.
        let w = gramian(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), &DMatrix::identity(2, 2), 2.5, 16).unwrap();
        assert!((w - DMatrix::identity(2, 2) * 2.5).norm() < 1e-12);

        // B = 0 ⇒ zero matrix.
        let w = gramian(&a, &DMatrix::zeros(2, 1), &r, 1.0, 8).unwrap();
        assert!(w.norm() == 0.0);

        // R not PD errors out.
        assert!(matches!(
            gramian(&a, &b, &DMatrix::from_element(1, 1, 0.0), 1.0, 8),
            Err(CostError::InvalidCost(_))
        ));
    }

    #[test]
    fn lq_matrices_single_integrator_identity() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let b = DMatrix::<f64>::identity(2, 2);
        let q = DMatrix::<f64>::zeros(2, 2);
        let r = DMatrix::<f64>::identity(2, 2);
        let form = lq_cost_matrices(&a, &b, &q, &r, 1.0).unwrap();
        assert!((&form.d - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((&form.e - DMatrix::identity(2, 2) * 2.0).norm() < 1e-12);
        assert!((&form.f - DMatrix::identity(2, 2)).norm() < 1e-12);
        // c(x, y) = |y − x|².
        let (x, y) = (v2(0.3, -1.0), v2(1.3, 0.5));
        assert_relative_eq!(form.value(&x, &y), (&y - &x).norm_squared(), epsilon = 1e-12);
    }

    #[test]
    fn lq_matrices_match_gramian_closed_form_for_zero_q() {
        // For Q = 0: D = e^{AᵀT} W⁻¹ e^{AT}, E = 2 e^{AᵀT} W⁻¹, F = W⁻¹.
        let (a, b) = presets::double_integrator_matrices::<f64>();
        let q = DMatrix::<f64>::zeros(2, 2);
        let r = DMatrix::<f64>::identity(1, 1);
        let form = lq_cost_matrices(&a, &b, &q, &r, 1.0).unwrap();
        let w = gramian(&a, &b, &r, 1.0, 32).unwrap();
        let w_inv = linalg::inverse(&w).unwrap();
        let e_at = linalg::expm(&a);
        assert!((&form.f - &w_inv).norm() < 1e-9, "F = W⁻¹");
        assert!((&form.d - e_at.transpose() * &w_inv * &e_at).norm() < 1e-9);
        assert!((&form.e - e_at.transpose() * &w_inv * 2.0).norm() < 1e-9);
        // Frozen: W₁⁻¹ = [[12, −6], [−6, 4]].
        let expected_f = DMatrix::from_row_slice(2, 2, &[12.0, -6.0, -6.0, 4.0]);
        assert!((&form.f - expected_f).norm() < 1e-9);
    }

    #[test]
    fn lq_quadratic_fit_cross_check() {
        // Sampled costs must be reproduced by the (D, E, F) form, including
        // a nonzero Q.
        let (a, b) = presets::double_integrator_matrices::<f64>();
        let q = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25]);
        let r = DMatrix::from_element(1, 1, 2.0);
        let form = lq_cost_matrices(&a, &b, &q, &r, 1.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x = v2(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0);
            let y = v2(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0);
            let res = lq_point_cost(&form, &x, &y, 4000);
            let quad = running_cost_quadrature(
                &RunningCost::quadratic(q.clone(), r.clone()).unwrap(),
                &res.trajectory,
            );
            assert_relative_eq!(res.value, quad, max_relative = 1e-6);
        }
    }

    #[test]
    fn lq_point_cost_examples() {
        let (a, b) = presets::double_integrator_matrices::<f64>();
        let q = DMatrix::<f64>::zeros(2, 2);
        let r = DMatrix::<f64>::identity(1, 1);
        let form = lq_cost_matrices(&a, &b, &q, &r, 1.0).unwrap();

        // Frozen oracle: c((0,0), (1,0)) = yᵀW₁⁻¹y = 12.
        let res = lq_point_cost(&form, &v2(0.0, 0.0), &v2(1.0, 0.0), 512);
        assert_relative_eq!(res.value, 12.0, epsilon = 1e-9);
        assert!(res.endpoint_error <= 1e-6 * 2.0);
        assert!(res.trajectory.resimulation_defect(&presets::double_integrator::<f64>()).unwrap() < 1e-4);

        // x = y with A = 0: staying put is free.
        let a0 = DMatrix::<f64>::zeros(2, 2);
        let b0 = DMatrix::<f64>::identity(2, 2);
        let form0 = lq_cost_matrices(&a0, &b0, &q, &DMatrix::identity(2, 2), 1.0).unwrap();
        let res0 = lq_point_cost(&form0, &v2(0.4, 0.4), &v2(0.4, 0.4), 64);
        assert!(res0.value.abs() < 1e-12);
        for s in &res0.trajectory.states {
            assert_relative_eq!(s, &v2(0.4, 0.4), epsilon = 1e-10);
        }

        // y = e^{AT}x: free drift flow, u ≡ 0, value 0.
        let x = v2(0.7, -0.3);
        let y = linalg::expm(&a) * &x;
        let res = lq_point_cost(&form, &x, &y, 128);
        assert!(res.value.abs() < 1e-10);
        for u in &res.trajectory.controls {
            assert!(u.norm() < 1e-9);
        }
    }

    #[test]
    fn lq_value_equals_trajectory_quadrature_tightly() {
        let (a, b) = presets::double_integrator_matrices::<f64>();
        let q = DMatrix::<f64>::zeros(2, 2);
        let r = DMatrix::<f64>::identity(1, 1);
        let form = lq_cost_matrices(&a, &b, &q, &r, 1.0).unwrap();
        let res = lq_point_cost(&form, &v2(0.0, 0.0), &v2(1.0, 0.0), 20_000);
        let kin = RunningCost::quadratic(q, r).unwrap();
        let quad = running_cost_quadrature(&kin, &res.trajectory);
        assert_relative_eq!(res.value, quad, max_relative = 1e-8);
    }

    #[test]
    fn lq_rejects_uncontrollable_pair() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let err = lq_cost_matrices(&a, &b, &DMatrix::zeros(2, 2), &DMatrix::identity(1, 1), 1.0);
        assert!(matches!(err, Err(CostError::SingularGramian)));
    }

    #[test]
    fn driftless_single_integrator_straight_line() {
        let sys = presets::single_integrator::<f64>(2);
        let cost = RunningCost::kinetic(2);
        let res = driftless_point_cost(&sys, &cost, &v2(0.0, 0.0), &v2(3.0, 4.0), 1.0, &TranscriptionParams::default())
            .unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.value, 25.0, max_relative = 1e-5);
        // Straight line through the midpoint.
        let mid = res.trajectory.state_at(0.5);
        assert!((mid - v2(1.5, 2.0)).norm() < 1e-4);
    }

    #[test]
    fn heisenberg_horizontal_geodesic() {
        let sys = presets::heisenberg::<f64>();
        let cost = RunningCost::kinetic(2);
        let params = TranscriptionParams { steps: 32, restarts: 1, ..Default::default() };
        let res = driftless_point_cost(&sys, &cost, &v3(0.0, 0.0, 0.0), &v3(1.0, 0.0, 0.0), 1.0, &params).unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.value, 1.0, max_relative = 1e-4);
    }

    #[test]
    fn generic_matches_lq_and_driftless_routes() {
        // LTI routed through transcription matches the closed form within 1e-3.
        let di = presets::double_integrator::<f64>();
        let q = DMatrix::<f64>::zeros(2, 2);
        let r = DMatrix::<f64>::identity(1, 1);
        let cost = RunningCost::quadratic(q.clone(), r.clone()).unwrap();
        let params = TranscriptionParams { steps: 128, restarts: 1, ..Default::default() };
        let res = generic_point_cost(&di, &cost, &v2(0.0, 0.0), &v2(1.0, 0.0), 1.0, &params).unwrap();
        assert!(res.converged);
        assert!((res.value - 12.0).abs() / 12.0 < 1e-3, "value {}", res.value);

        // Driftless routed through the generic entry point is the identical
        // problem.
        let si = presets::single_integrator::<f64>(2);
        let kin = RunningCost::kinetic(2);
        let p = TranscriptionParams::default();
        let a = driftless_point_cost(&si, &kin, &v2(0.0, 0.0), &v2(1.0, 2.0), 1.0, &p).unwrap();
        let b = generic_point_cost(&si, &kin, &v2(0.0, 0.0), &v2(1.0, 2.0), 1.0, &p).unwrap();
        assert_relative_eq!(a.value, b.value, epsilon = 1e-12);

        // x = y with zero drift at x and L(t,x,0) = 0: equilibrium is free.
        let res = generic_point_cost(&si, &kin, &v2(0.5, 0.5), &v2(0.5, 0.5), 1.0, &p).unwrap();
        assert!(res.value.abs() < 1e-10);
    }

    #[test]
    fn discretization_refinement_never_increases_value() {
        // Lower-semicontinuity surrogate: doubling N (same seeds) cannot
        // raise the value beyond the endpoint-penalty tolerance.
        let sys = presets::heisenberg::<f64>();
        let cost = RunningCost::kinetic(2);
        let x = v3(0.0, 0.0, 0.0);
        let y = v3(1.0, 0.5, 0.2);
        let mut prev = f64::INFINITY;
        for steps in [16usize, 32, 64] {
            let params = TranscriptionParams { steps, restarts: 3, seed: 11, ..Default::default() };
            let res = driftless_point_cost(&sys, &cost, &x, &y, 1.0, &params).unwrap();
            assert!(res.value <= prev + 1e-4, "refinement increased value: {prev} -> {}", res.value);
            prev = res.value;
        }
    }

    #[test]
    fn driftless_kinetic_metric_properties() {
        // c(x,x) = 0, symmetry, and the triangle inequality for √c.
        let sys = presets::single_integrator::<f64>(2);
        let cost = RunningCost::kinetic(2);
        let p = TranscriptionParams { steps: 16, restarts: 2, ..Default::default() };
        let pts = [v2(0.0, 0.0), v2(1.0, -0.5), v2(-0.3, 0.8)];
        let c = |a: &DVector<f64>, b: &DVector<f64>| {
            driftless_point_cost(&sys, &cost, a, b, 1.0, &p).unwrap().value
        };
        assert!(c(&pts[0], &pts[0]).abs() < 1e-9);
        for i in 0..3 {
            for j in 0..3 {
                assert!((c(&pts[i], &pts[j]) - c(&pts[j], &pts[i])).abs() < 1e-4);
            }
        }
        let (d01, d12, d02) = (c(&pts[0], &pts[1]).sqrt(), c(&pts[1], &pts[2]).sqrt(), c(&pts[0], &pts[2]).sqrt());
        assert!(d02 <= d01 + d12 + 1e-3);
    }

    #[test]
    fn time_scaling_for_driftless_kinetic() {
        // c over horizon T = (1/T) · c over horizon 1.
        let sys = presets::heisenberg::<f64>();
        let cost = RunningCost::kinetic(2);
        let p = TranscriptionParams { steps: 32, restarts: 2, seed: 3, ..Default::default() };
        let x = v3(0.0, 0.0, 0.0);
        let y = v3(0.8, -0.4, 0.1);
        let c1 = driftless_point_cost(&sys, &cost, &x, &y, 1.0, &p).unwrap().value;
        let c2 = driftless_point_cost(&sys, &cost, &x, &y, 2.0, &p).unwrap().value;
        assert_relative_eq!(c2, c1 / 2.0, max_relative = 1e-3);
    }

    #[test]
    fn cost_matrix_examples() {
        let sys = presets::single_integrator::<f64>(2);
        let cost = RunningCost::kinetic(2);
        let pts = vec![v2(0.0, 0.0), v2(1.0, 0.0), v2(0.0, 2.0)];
        let p = TranscriptionParams { steps: 16, restarts: 2, ..Default::default() };
        let cm = cost_matrix(&sys, &cost, &pts, &pts, 1.0, &p).unwrap();
        assert!(cm.defects.is_empty());
        // Zero diagonal and |y − x|²/T entries.
        for i in 0..3 {
            assert!(cm.values[(i, i)].abs() < 1e-8);
            for j in 0..3 {
                let exact = (&pts[j] - &pts[i]).norm_squared();
                // Value deficit scales with |∇c|·endpoint_tol.
                assert!((cm.values[(i, j)] - exact).abs() < 2e-4, "entry {i}{j}");
            }
        }
        // Symmetry: X→Y equals (Y→X)ᵀ.
        let ys = vec![v2(0.5, 0.5), v2(-1.0, 0.3)];
        let cxy = cost_matrix(&sys, &cost, &pts, &ys, 1.0, &p).unwrap().values;
        let cyx = cost_matrix(&sys, &cost, &ys, &pts, 1.0, &p).unwrap().values;
        assert!((cxy - cyx.transpose()).amax() < 1e-4);
    }

    #[test]
    fn cost_matrix_rejects_non_finite_points() {
        let sys = presets::single_integrator::<f64>(1);
        let cost = RunningCost::kinetic(1);
        let pts = vec![DVector::from_vec(vec![f64::NAN])];
        assert!(cost_matrix(&sys, &cost, &pts, &pts, 1.0, &TranscriptionParams::default()).is_err());
    }

    #[test]
    fn endpoint_map_singularity_examples() {
        // Single integrator: Gramian is T·I, smallest singular value T.
        let si = presets::single_integrator::<f64>(2);
        let traj = flow(&si, &v2(0.0, 0.0), &vec![v2(1.0, 0.0); 50], 0.7).unwrap();
        let s = endpoint_map_singularity(&si, &traj).unwrap();
        assert_relative_eq!(s, 0.7, max_relative = 1e-10);

        // Heisenberg straight horizontal line: strictly positive, matches a
        // closed-form quadrature oracle. Along x(t) = (t, 0, 0), u = (1, 0):
        // A = Jg₁ (constant), A² = 0, so Φ(T,t) = I + A(T−t).
        let h = presets::heisenberg::<f64>();
        let tr = flow(&h, &v3(0.0, 0.0, 0.0), &vec![v2(1.0, 0.0); 400], 1.0).unwrap();
        let s = endpoint_map_singularity(&h, &tr).unwrap();
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.5, 0.0]);
        let mut w = DMatrix::<f64>::zeros(3, 3);
        let nq = 2000;
        for k in 0..nq {
            let t = (k as f64 + 0.5) / nq as f64;
            let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, t / 2.0]);
            let f = DMatrix::identity(3, 3) + &a * (1.0 - t);
            w += &f * &g * g.transpose() * f.transpose() * (1.0 / nq as f64);
        }
        let oracle = linalg::smallest_singular_value(&linalg::symmetrize(&w));
        assert!(s > 0.01);
        assert_relative_eq!(s, oracle, max_relative = 1e-3);

        // Degenerate linearisation: zero control fields give 0.
        let zero_b = crate::systems::ControlAffineSystem::new_driftless(vec![
            crate::systems::VectorField::zero(2),
        ])
        .unwrap();
        let tr0 = flow(&zero_b, &v2(0.1, 0.2), &vec![DVector::from_vec(vec![0.0]); 10], 1.0).unwrap();
        assert!(endpoint_map_singularity(&zero_b, &tr0).unwrap() < 1e-12);
    }

    #[test]
    fn running_cost_validation() {
        let q_bad = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let r = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(RunningCost::quadratic(q_bad, r.clone()).is_err());
        let r_bad = DMatrix::from_row_slice(1, 1, &[0.0]);
        assert!(RunningCost::quadratic(DMatrix::zeros(1, 1), r_bad).is_err());
        // Kinetic with unit weight is Σ uᵢ².
        let kin = RunningCost::kinetic(3);
        let u = v3(1.0, -2.0, 3.0);
        assert_eq!(kin.eval(0.0, &v3(9.0, 9.0, 9.0), &u), 14.0);
    }
}
