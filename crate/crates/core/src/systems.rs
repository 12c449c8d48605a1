//! Control-affine systems `ẋ = f₀(x) + Σᵢ uᵢ fᵢ(x)`.
//!
//! Vector fields carry an evaluation map and a Jacobian map (analytic when
//! supplied, central finite differences otherwise), which is what Lie
//! brackets and trajectory linearisations need. Systems are immutable and
//! cheap to clone; all operations are pure functions of their inputs.

use crate::linalg;
use crate::Real;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

/// Errors from system construction and evaluation.
#[derive(Debug, Error)]
pub enum SystemError {
    #[error("dimension mismatch: expected {expected}, got {got} for {what}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("operation requires a driftless system")]
    UnsupportedSystem,
    #[error("state diverged (non-finite) at integration step {step}")]
    Divergence { step: usize },
    #[error("trajectory is inconsistent: {0}")]
    InconsistentTrajectory(String),
}

type EvalFn<S> = dyn Fn(&DVector<S>) -> DVector<S> + Send + Sync;
type JacFn<S> = dyn Fn(&DVector<S>) -> DMatrix<S> + Send + Sync;

/// Smooth vector field on `ℝᵈ` with its Jacobian.
#[derive(Clone)]
pub struct VectorField<S: Real> {
    dim: usize,
    eval: Arc<EvalFn<S>>,
    jacobian: Arc<JacFn<S>>,
    /// Sublinear growth constant `M` with `|f(x)| ≤ M(|x| + 1)`.
    growth_bound: S,
}

impl<S: Real> std::fmt::Debug for VectorField<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.dim)
            .field("growth_bound", &self.growth_bound)
            .finish()
    }
}

/// Central finite-difference Jacobian with step `h = 1e-6·(1 + |x|)`.
pub fn finite_difference_jacobian<S: Real>(
    eval: &dyn Fn(&DVector<S>) -> DVector<S>,
    x: &DVector<S>,
) -> DMatrix<S> {
    let d = x.len();
    let h = S::cst(1e-6) * (S::one() + x.norm());
    let mut jac = DMatrix::<S>::zeros(eval(x).len(), d);
    let mut xp = x.clone();
    let mut xm = x.clone();
    for j in 0..d {
        xp[j] = x[j] + h;
        xm[j] = x[j] - h;
        let col = (eval(&xp) - eval(&xm)) / (h + h);
        jac.set_column(j, &col);
        xp[j] = x[j];
        xm[j] = x[j];
    }
    jac
}

impl<S: Real> VectorField<S> {
    /// Field from an evaluation map; the Jacobian falls back to central
    /// finite differences.
    pub fn from_eval<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&DVector<S>) -> DVector<S> + Send + Sync + 'static,
    {
        let eval: Arc<EvalFn<S>> = Arc::new(eval);
        let eval_for_jac = Arc::clone(&eval);
        Self {
            dim,
            eval,
            jacobian: Arc::new(move |x| finite_difference_jacobian(eval_for_jac.as_ref(), x)),
            growth_bound: S::one(),
        }
    }

    /// Field with an analytic Jacobian.
    pub fn new<F, J>(dim: usize, eval: F, jacobian: J) -> Self
    where
        F: Fn(&DVector<S>) -> DVector<S> + Send + Sync + 'static,
        J: Fn(&DVector<S>) -> DMatrix<S> + Send + Sync + 'static,
    {
        Self { dim, eval: Arc::new(eval), jacobian: Arc::new(jacobian), growth_bound: S::one() }
    }

    /// Constant field `x ↦ v`.
    pub fn constant(v: DVector<S>) -> Self {
        let dim = v.len();
        let jac = DMatrix::<S>::zeros(dim, dim);
        Self::new(dim, move |_| v.clone(), move |_| jac.clone())
            .with_growth_bound(S::one().max(S::cst(2.0)))
    }

    /// Linear field `x ↦ A x`.
    pub fn linear(a: DMatrix<S>) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "linear field needs a square matrix");
        let dim = a.nrows();
        let m = a.norm().max(S::one());
        let a_eval = a.clone();
        Self::new(dim, move |x| &a_eval * x, move |_| a.clone()).with_growth_bound(m)
    }

    /// Identically zero field.
    pub fn zero(dim: usize) -> Self {
        Self::constant(DVector::zeros(dim)).with_growth_bound(S::one())
    }

    /// Declare the sublinear-growth constant `M`.
    pub fn with_growth_bound(mut self, m: S) -> Self {
        self.growth_bound = m;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn growth_bound(&self) -> S {
        self.growth_bound
    }

    pub fn eval(&self, x: &DVector<S>) -> DVector<S> {
        (self.eval)(x)
    }

    pub fn jacobian(&self, x: &DVector<S>) -> DMatrix<S> {
        (self.jacobian)(x)
    }

    /// Max deviation between the stored Jacobian and central finite
    /// differences over the given points.
    pub fn jacobian_defect(&self, points: &[DVector<S>]) -> S {
        points
            .iter()
            .map(|x| {
                let fd = finite_difference_jacobian(self.eval.as_ref(), x);
                (self.jacobian(x) - fd).norm()
            })
            .fold(S::zero(), |a, b| a.max(b))
    }

    /// Check `|f(x)| ≤ M(|x| + 1)` on the given sample points.
    pub fn sublinear_growth_holds(&self, points: &[DVector<S>]) -> bool {
        points
            .iter()
            .all(|x| self.eval(x).norm() <= self.growth_bound * (x.norm() + S::one()) + S::cst(1e-12))
    }
}

/// Lie bracket `[f, g] = Jg·f − Jf·g` evaluated through the stored Jacobians.
///
/// The Jacobian of the bracket itself is a finite-difference fallback, so
/// iterated brackets are available at reduced accuracy.
pub fn lie_bracket<S: Real>(f: &VectorField<S>, g: &VectorField<S>) -> Result<VectorField<S>, SystemError> {
    if f.dim() != g.dim() {
        return Err(SystemError::DimensionMismatch { what: "bracket fields", expected: f.dim(), got: g.dim() });
    }
    let (fe, ge) = (f.clone(), g.clone());
    Ok(VectorField::from_eval(f.dim(), move |x| {
        ge.jacobian(x) * fe.eval(x) - fe.jacobian(x) * ge.eval(x)
    })
    .with_growth_bound(f.growth_bound() * g.growth_bound() * S::cst(4.0)))
}

/// Structural tag of a control-affine system.
#[derive(Clone, Debug)]
pub enum SystemKind<S: Real> {
    /// `f₀ ≡ 0`.
    Driftless,
    /// `f₀(x) = A x`, constant control fields (columns of `B`).
    Lti { a: DMatrix<S>, b: DMatrix<S> },
    Generic,
}

/// A control-affine system `ẋ = f₀(x) + Σᵢ uᵢ fᵢ(x)` on `ℝᵈ`.
#[derive(Clone, Debug)]
pub struct ControlAffineSystem<S: Real> {
    drift: VectorField<S>,
    controls: Vec<VectorField<S>>,
    kind: SystemKind<S>,
}

impl<S: Real> ControlAffineSystem<S> {
    pub fn new_driftless(controls: Vec<VectorField<S>>) -> Result<Self, SystemError> {
        let dim = controls.first().map(|f| f.dim()).unwrap_or(0);
        let sys = Self { drift: VectorField::zero(dim), controls, kind: SystemKind::Driftless };
        sys.check_dims()?;
        Ok(sys)
    }

    pub fn new_lti(a: DMatrix<S>, b: DMatrix<S>) -> Result<Self, SystemError> {
        if a.nrows() != a.ncols() {
            return Err(SystemError::DimensionMismatch { what: "A rows vs cols", expected: a.nrows(), got: a.ncols() });
        }
        if b.nrows() != a.nrows() {
            return Err(SystemError::DimensionMismatch { what: "B rows", expected: a.nrows(), got: b.nrows() });
        }
        let controls = (0..b.ncols()).map(|j| VectorField::constant(b.column(j).into_owned())).collect();
        Ok(Self {
            drift: VectorField::linear(a.clone()),
            controls,
            kind: SystemKind::Lti { a, b },
        })
    }

    pub fn new_generic(drift: VectorField<S>, controls: Vec<VectorField<S>>) -> Result<Self, SystemError> {
        let sys = Self { drift, controls, kind: SystemKind::Generic };
        sys.check_dims()?;
        Ok(sys)
    }

    fn check_dims(&self) -> Result<(), SystemError> {
        let d = self.drift.dim();
        for f in &self.controls {
            if f.dim() != d {
                return Err(SystemError::DimensionMismatch { what: "control field dim", expected: d, got: f.dim() });
            }
        }
        Ok(())
    }

    /// State dimension `d`.
    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    /// Number of control channels `n`.
    pub fn num_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn drift(&self) -> &VectorField<S> {
        &self.drift
    }

    pub fn controls(&self) -> &[VectorField<S>] {
        &self.controls
    }

    pub fn kind(&self) -> &SystemKind<S> {
        &self.kind
    }

    pub fn is_driftless(&self) -> bool {
        matches!(self.kind, SystemKind::Driftless)
    }

    /// LTI matrices when the system carries them.
    pub fn lti_matrices(&self) -> Option<(&DMatrix<S>, &DMatrix<S>)> {
        match &self.kind {
            SystemKind::Lti { a, b } => Some((a, b)),
            _ => None,
        }
    }

    /// `f(x, u) = f₀(x) + Σᵢ uᵢ fᵢ(x)`, with dimension checks.
    pub fn eval_dynamics(&self, x: &DVector<S>, u: &DVector<S>) -> Result<DVector<S>, SystemError> {
        if x.len() != self.dim() {
            return Err(SystemError::DimensionMismatch { what: "state", expected: self.dim(), got: x.len() });
        }
        if u.len() != self.num_controls() {
            return Err(SystemError::DimensionMismatch { what: "control", expected: self.num_controls(), got: u.len() });
        }
        Ok(self.velocity(x, u))
    }

    /// Unchecked dynamics evaluation for inner loops.
    #[inline]
    pub(crate) fn velocity(&self, x: &DVector<S>, u: &DVector<S>) -> DVector<S> {
        let mut v = self.drift.eval(x);
        for (ui, fi) in u.iter().zip(&self.controls) {
            v.axpy(*ui, &fi.eval(x), S::one());
        }
        v
    }

    /// Control matrix `G(x) = [f₁(x) … f_n(x)]` (d × n).
    pub fn control_matrix(&self, x: &DVector<S>) -> DMatrix<S> {
        let mut g = DMatrix::<S>::zeros(self.dim(), self.num_controls());
        for (j, fi) in self.controls.iter().enumerate() {
            g.set_column(j, &fi.eval(x));
        }
        g
    }

    /// State Jacobian of the dynamics, `∂ₓ f(x, u) = Jf₀(x) + Σᵢ uᵢ Jfᵢ(x)`.
    pub fn dynamics_jacobian_x(&self, x: &DVector<S>, u: &DVector<S>) -> DMatrix<S> {
        let mut j = self.drift.jacobian(x);
        for (ui, fi) in u.iter().zip(&self.controls) {
            j += fi.jacobian(x) * *ui;
        }
        j
    }

    /// Largest declared growth constant across drift and control fields.
    pub fn growth_bound(&self) -> S {
        self.controls
            .iter()
            .map(|f| f.growth_bound())
            .fold(self.drift.growth_bound(), |a, b| a.max(b))
    }
}

/// Rank at `x` of the span of all fields in `∪_{i ≤ r} 𝒱ⁱ`, where `𝒱⁰` is
/// the set of control fields and level `i` collects brackets of a generator
/// with any field of a lower level.
///
/// Only defined for driftless systems; the rank is the numerical rank of the
/// stacked evaluation matrix with the relative singular-value threshold of
/// [`linalg::RANK_REL_TOL`].
pub fn bracket_rank<S: Real>(
    sys: &ControlAffineSystem<S>,
    r: usize,
    x: &DVector<S>,
) -> Result<usize, SystemError> {
    if !sys.is_driftless() {
        return Err(SystemError::UnsupportedSystem);
    }
    let generators = sys.controls().to_vec();
    let mut all: Vec<VectorField<S>> = generators.clone();
    let mut prev_levels: Vec<VectorField<S>> = generators.clone();
    for _ in 1..=r {
        let mut level = Vec::new();
        for g in &generators {
            for h in &prev_levels {
                level.push(lie_bracket(g, h)?);
            }
        }
        all.extend(level.iter().cloned());
        prev_levels.extend(level);
    }
    let mut stacked = DMatrix::<S>::zeros(sys.dim(), all.len());
    for (j, f) in all.iter().enumerate() {
        stacked.set_column(j, &f.eval(x));
    }
    Ok(linalg::numerical_rank(&stacked))
}

/// Numerical rank of the Kalman controllability matrix `[B AB … A^{d−1}B]`.
pub fn kalman_rank<S: Real>(a: &DMatrix<S>, b: &DMatrix<S>) -> Result<usize, SystemError> {
    if a.nrows() != a.ncols() {
        return Err(SystemError::DimensionMismatch { what: "A rows vs cols", expected: a.nrows(), got: a.ncols() });
    }
    if b.nrows() != a.nrows() {
        return Err(SystemError::DimensionMismatch { what: "B rows", expected: a.nrows(), got: b.nrows() });
    }
    let d = a.nrows();
    let n = b.ncols();
    let mut ctrb = DMatrix::<S>::zeros(d, d * n);
    let mut block = b.clone();
    for k in 0..d {
        ctrb.view_mut((0, k * n), (d, n)).copy_from(&block);
        block = a * &block;
    }
    Ok(linalg::numerical_rank(&ctrb))
}

/// A discretised `(state, control)` pair on an increasing time grid.
///
/// Controls are piecewise constant on the intervals; `states.len() ==
/// times.len() == controls.len() + 1`. `cost` is the accumulated running
/// cost when the trajectory came out of a cost solver, zero otherwise.
#[derive(Clone, Debug)]
pub struct Trajectory<S: Real> {
    pub times: Vec<S>,
    pub states: Vec<DVector<S>>,
    pub controls: Vec<DVector<S>>,
    pub cost: S,
}

impl<S: Real> Trajectory<S> {
    pub fn horizon(&self) -> S {
        *self.times.last().expect("trajectory has at least one node")
    }

    pub fn initial_state(&self) -> &DVector<S> {
        &self.states[0]
    }

    pub fn terminal_state(&self) -> &DVector<S> {
        self.states.last().expect("trajectory has at least one node")
    }

    /// Structural validity: consistent lengths and strictly increasing times.
    pub fn validate(&self) -> Result<(), SystemError> {
        if self.states.len() != self.times.len() {
            return Err(SystemError::InconsistentTrajectory(format!(
                "{} states for {} times",
                self.states.len(),
                self.times.len()
            )));
        }
        if self.controls.len() + 1 != self.times.len() {
            return Err(SystemError::InconsistentTrajectory(format!(
                "{} controls for {} times",
                self.controls.len(),
                self.times.len()
            )));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SystemError::InconsistentTrajectory("times not strictly increasing".into()));
        }
        Ok(())
    }

    /// Max state deviation when re-simulating from `states[0]` with the
    /// stored controls under `sys`.
    pub fn resimulation_defect(&self, sys: &ControlAffineSystem<S>) -> Result<S, SystemError> {
        self.validate()?;
        let t0 = self.times[0];
        let horizon = self.horizon() - t0;
        let redo = flow(sys, &self.states[0], &self.controls, horizon)?;
        Ok(self
            .states
            .iter()
            .zip(&redo.states)
            .map(|(a, b)| (a - b).norm())
            .fold(S::zero(), |acc, e| acc.max(e)))
    }

    /// Linear state interpolation at time `t` (clamped to the grid range).
    pub fn state_at(&self, t: S) -> DVector<S> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let k = match self.times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
            Ok(k) => return self.states[k].clone(),
            Err(k) => k - 1,
        };
        let dt = self.times[k + 1] - self.times[k];
        let w = (t - self.times[k]) / dt;
        &self.states[k] * (S::one() - w) + &self.states[k + 1] * w
    }

    /// Piecewise-constant control lookup at time `t`.
    pub fn control_at(&self, t: S) -> DVector<S> {
        let n = self.controls.len();
        if n == 0 {
            return DVector::zeros(0);
        }
        if t <= self.times[0] {
            return self.controls[0].clone();
        }
        if t >= self.times[n] {
            return self.controls[n - 1].clone();
        }
        let k = match self.times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
            Ok(k) => k.min(n - 1),
            Err(k) => k - 1,
        };
        self.controls[k].clone()
    }

    /// Resample onto a new increasing time grid (linear in states,
    /// piecewise-constant in controls).
    pub fn resample(&self, times: &[S]) -> Trajectory<S> {
        assert!(times.len() >= 2, "resampling needs at least two time nodes");
        let states = times.iter().map(|&t| self.state_at(t)).collect();
        let controls = times
            .windows(2)
            .map(|w| self.control_at((w[0] + w[1]) * S::cst(0.5)))
            .collect();
        Trajectory { times: times.to_vec(), states, controls, cost: self.cost }
    }
}

/// Fixed-step RK4 integration of the system under piecewise-constant
/// controls over `[0, horizon]`; `controls.len()` is the number of steps.
///
/// Deterministic for fixed inputs; errors with the failing step index when
/// the state leaves the finite range.
pub fn flow<S: Real>(
    sys: &ControlAffineSystem<S>,
    x0: &DVector<S>,
    controls: &[DVector<S>],
    horizon: S,
) -> Result<Trajectory<S>, SystemError> {
    let n = controls.len();
    if n == 0 {
        return Err(SystemError::InconsistentTrajectory("flow needs at least one step".into()));
    }
    if horizon <= S::zero() {
        return Err(SystemError::InconsistentTrajectory("horizon must be positive".into()));
    }
    if x0.len() != sys.dim() {
        return Err(SystemError::DimensionMismatch { what: "initial state", expected: sys.dim(), got: x0.len() });
    }
    for u in controls {
        if u.len() != sys.num_controls() {
            return Err(SystemError::DimensionMismatch {
                what: "control",
                expected: sys.num_controls(),
                got: u.len(),
            });
        }
    }
    let h = horizon / S::cst(n as f64);
    let mut states = Vec::with_capacity(n + 1);
    let mut times = Vec::with_capacity(n + 1);
    states.push(x0.clone());
    times.push(S::zero());
    let mut x = x0.clone();
    for (k, u) in controls.iter().enumerate() {
        x = rk4_step(sys, &x, u, h);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SystemError::Divergence { step: k });
        }
        states.push(x.clone());
        times.push(h * S::cst((k + 1) as f64));
    }
    Ok(Trajectory { times, states, controls: controls.to_vec(), cost: S::zero() })
}

/// One classical RK4 step with the control held constant.
#[inline]
pub(crate) fn rk4_step<S: Real>(
    sys: &ControlAffineSystem<S>,
    x: &DVector<S>,
    u: &DVector<S>,
    h: S,
) -> DVector<S> {
    let half = S::cst(0.5);
    let k1 = sys.velocity(x, u);
    let k2 = sys.velocity(&(x + &k1 * (h * half)), u);
    let k3 = sys.velocity(&(x + &k2 * (h * half)), u);
    let k4 = sys.velocity(&(x + &k3 * h), u);
    x + (k1 + k2 * S::cst(2.0) + k3 * S::cst(2.0) + k4) * (h / S::cst(6.0))
}
