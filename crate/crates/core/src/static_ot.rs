//! The static Kantorovich layer: finitely supported measures, transport
//! plans, an exact network-simplex LP solver and a log-domain Sinkhorn
//! solver, both returning dual potentials.
//!
//! Dual convention (matching the dual Kantorovich problem): potentials
//! `(φ, ψ)` are feasible when `φᵢ − ψⱼ ≤ c_ij`, and the dual objective is
//! `Σᵢ φᵢ aᵢ − Σⱼ ψⱼ bⱼ`.

use crate::Real;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OtError {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("infeasible cost: matrix contains non-finite entries")]
    InfeasibleCost,
    #[error("dimension mismatch: cost is {rows}×{cols} but measures have {m} and {n} atoms")]
    DimensionMismatch { rows: usize, cols: usize, m: usize, n: usize },
    #[error("network simplex did not terminate within {0} pivots")]
    PivotLimit(usize),
}

/// A weighted point cloud with unit total mass.
#[derive(Clone, Debug)]
pub struct DiscreteMeasure<S: Real> {
    points: Vec<DVector<S>>,
    weights: Vec<S>,
}

impl<S: Real> DiscreteMeasure<S> {
    pub fn new(points: Vec<DVector<S>>, weights: Vec<S>) -> Result<Self, OtError> {
        if points.len() != weights.len() {
            return Err(OtError::InvalidMeasure(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.is_empty() {
            return Err(OtError::InvalidMeasure("empty support".into()));
        }
        let dim = points[0].len();
        for p in &points {
            if p.len() != dim {
                return Err(OtError::InvalidMeasure("inconsistent point dimensions".into()));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(OtError::InvalidMeasure("non-finite support point".into()));
            }
        }
        if weights.iter().any(|w| *w < S::zero() || !w.is_finite()) {
            return Err(OtError::InvalidMeasure("weights must be nonnegative and finite".into()));
        }
        let total: S = weights.iter().copied().sum();
        if (total - S::one()).abs() > S::cst(1e-12) {
            return Err(OtError::InvalidMeasure(format!(
                "weights sum to {} (must be 1 ± 1e-12)",
                total.as_f64()
            )));
        }
        Ok(Self { points, weights })
    }

    /// Point mass at `x`.
    pub fn dirac(x: DVector<S>) -> Self {
        Self { weights: vec![S::one()], points: vec![x] }
    }

    /// Equal weights on the given points.
    pub fn uniform(points: Vec<DVector<S>>) -> Result<Self, OtError> {
        let n = points.len();
        if n == 0 {
            return Err(OtError::InvalidMeasure("empty support".into()));
        }
        // Exactly unit mass: put the rounding residual on the last atom.
        let w = S::one() / S::cst(n as f64);
        let mut weights = vec![w; n];
        let sum_head: S = weights.iter().take(n - 1).copied().sum();
        weights[n - 1] = S::one() - sum_head;
        Self::new(points, weights)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[DVector<S>] {
        &self.points
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    /// Reorder atoms by `perm` (a bijection on indices).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            points: perm.iter().map(|&i| self.points[i].clone()).collect(),
            weights: perm.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    /// Weighted p-th moment `Σ wᵢ |xᵢ|ᵖ`.
    pub fn moment(&self, p: S) -> S {
        self.points.iter().zip(&self.weights).map(|(x, w)| *w * x.norm().powf(p)).sum()
    }
}

/// A coupling of two discrete measures with its transport objective.
#[derive(Clone, Debug)]
pub struct TransportPlan<S: Real> {
    pub coupling: DMatrix<S>,
    pub value: S,
}

impl<S: Real> TransportPlan<S> {
    /// Max deviation of row/column sums from the prescribed marginals.
    pub fn marginal_error(&self, mu: &DiscreteMeasure<S>, nu: &DiscreteMeasure<S>) -> S {
        let mut err = S::zero();
        for i in 0..self.coupling.nrows() {
            err = err.max((self.coupling.row(i).sum() - mu.weights()[i]).abs());
        }
        for j in 0..self.coupling.ncols() {
            err = err.max((self.coupling.column(j).sum() - nu.weights()[j]).abs());
        }
        err
    }

    /// Support entries with mass above `floor`.
    pub fn support(&self, floor: S) -> Vec<(usize, usize, S)> {
        let mut out = Vec::new();
        for i in 0..self.coupling.nrows() {
            for j in 0..self.coupling.ncols() {
                if self.coupling[(i, j)] > floor {
                    out.push((i, j, self.coupling[(i, j)]));
                }
            }
        }
        out
    }

    /// Barycentric image of each source atom, `T̂(xᵢ) = Σⱼ γᵢⱼ yⱼ / Σⱼ γᵢⱼ`.
    pub fn barycentric_map(&self, targets: &[DVector<S>]) -> Vec<DVector<S>> {
        let dim = targets[0].len();
        (0..self.coupling.nrows())
            .map(|i| {
                let mass = self.coupling.row(i).sum();
                let mut acc = DVector::<S>::zeros(dim);
                if mass > S::zero() {
                    for (j, y) in targets.iter().enumerate() {
                        acc.axpy(self.coupling[(i, j)] / mass, y, S::one());
                    }
                }
                acc
            })
            .collect()
    }
}

/// Kantorovich dual potentials, feasible for `φᵢ − ψⱼ ≤ c_ij`.
#[derive(Clone, Debug)]
pub struct DualPotentials<S: Real> {
    pub phi: Vec<S>,
    pub psi: Vec<S>,
}

impl<S: Real> DualPotentials<S> {
    pub fn objective(&self, mu: &DiscreteMeasure<S>, nu: &DiscreteMeasure<S>) -> S {
        let a: S = self.phi.iter().zip(mu.weights()).map(|(p, w)| *p * *w).sum();
        let b: S = self.psi.iter().zip(nu.weights()).map(|(p, w)| *p * *w).sum();
        a - b
    }

    /// Worst violation of `φᵢ − ψⱼ ≤ c_ij` (positive means infeasible).
    pub fn feasibility_defect(&self, cost: &DMatrix<S>) -> S {
        let mut worst = -S::max_value().unwrap();
        for i in 0..cost.nrows() {
            for j in 0..cost.ncols() {
                worst = worst.max(self.phi[i] - self.psi[j] - cost[(i, j)]);
            }
        }
        worst
    }
}

fn check_instance<S: Real>(
    cost: &DMatrix<S>,
    mu: &DiscreteMeasure<S>,
    nu: &DiscreteMeasure<S>,
) -> Result<(), OtError> {
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(OtError::InfeasibleCost);
    }
    if cost.nrows() != mu.len() || cost.ncols() != nu.len() {
        return Err(OtError::DimensionMismatch {
            rows: cost.nrows(),
            cols: cost.ncols(),
            m: mu.len(),
            n: nu.len(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Exact LP: network simplex on the transportation polytope
// ---------------------------------------------------------------------------

/// Exact transportation LP by the network simplex on the bipartite graph.
///
/// Entering arcs are chosen by most-negative reduced cost; after a
/// degenerate-pivot stall the rule switches to Bland's lowest-index choice,
/// which cannot cycle. Complementary slackness holds by construction: on
/// basic arcs the duals satisfy `uᵢ + vⱼ = c_ij` exactly.
pub fn solve_exact<S: Real>(
    cost: &DMatrix<S>,
    mu: &DiscreteMeasure<S>,
    nu: &DiscreteMeasure<S>,
) -> Result<(TransportPlan<S>, DualPotentials<S>), OtError> {
    check_instance(cost, mu, nu)?;
    let m = mu.len();
    let n = nu.len();
    let a = mu.weights();
    let b = nu.weights();

    // Northwest-corner initial basis: a spanning tree with m + n − 1 arcs
    // (degenerate zero flows included).
    let mut basis: Vec<(usize, usize, S)> = Vec::with_capacity(m + n - 1);
    {
        let (mut i, mut j) = (0usize, 0usize);
        let mut rem_a = a[0];
        let mut rem_b = b[0];
        while basis.len() < m + n - 1 {
            let f = rem_a.min(rem_b).max(S::zero());
            basis.push((i, j, f));
            rem_a -= f;
            rem_b -= f;
            if rem_a <= rem_b && i + 1 < m {
                i += 1;
                rem_a = a[i];
            } else if j + 1 < n {
                j += 1;
                rem_b = b[j];
            } else if i + 1 < m {
                i += 1;
                rem_a = a[i];
            } else {
                break;
            }
        }
    }

    let scale = cost.amax().max(S::one());
    let tol = S::cst(1e-12) * scale;
    let max_pivots = 100 * (m + n) * (m + n) + 1000;
    let mut stall = 0usize;

    let mut u = vec![S::zero(); m];
    let mut v = vec![S::zero(); n];
    for _pivot in 0..max_pivots {
        compute_duals(cost, &basis, m, n, &mut u, &mut v);

        let bland = stall > 2 * (m + n);
        let mut enter: Option<(usize, usize, S)> = None;
        'scan: for i in 0..m {
            for j in 0..n {
                let r = cost[(i, j)] - u[i] - v[j];
                if r < -tol {
                    if bland {
                        enter = Some((i, j, r));
                        break 'scan;
                    }
                    match &enter {
                        Some((_, _, best)) if r >= *best => {}
                        _ => enter = Some((i, j, r)),
                    }
                }
            }
        }
        let Some((ei, ej, _)) = enter else {
            let mut coupling = DMatrix::<S>::zeros(m, n);
            for &(i, j, f) in &basis {
                coupling[(i, j)] = f.max(S::zero());
            }
            let value =
                coupling.iter().zip(cost.iter()).fold(S::zero(), |acc, (x, c)| acc + *x * *c);
            let duals = DualPotentials { phi: u.clone(), psi: v.iter().map(|x| -*x).collect() };
            return Ok((TransportPlan { coupling, value }, duals));
        };

        // Tree path from source ei to sink ej; along it the signs alternate
        // −, +, −, … (the entering arc itself takes +θ).
        let path = tree_path(&basis, m, n, ei, m + ej);
        let mut theta = S::max_value().unwrap();
        let mut leave = usize::MAX;
        for (pos, &arc_idx) in path.iter().enumerate() {
            if pos % 2 == 0 {
                let f = basis[arc_idx].2;
                let var = |k: usize| basis[k].0 * n + basis[k].1;
                if f < theta - tol {
                    theta = f;
                    leave = arc_idx;
                } else if f <= theta + tol && (leave == usize::MAX || var(arc_idx) < var(leave)) {
                    theta = theta.min(f);
                    leave = arc_idx;
                }
            }
        }
        debug_assert!(leave != usize::MAX, "cycle must contain a leaving arc");
        let theta = theta.max(S::zero());
        if theta <= tol {
            stall += 1;
        } else {
            stall = 0;
        }
        for (pos, &arc_idx) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis[arc_idx].2 -= theta;
            } else {
                basis[arc_idx].2 += theta;
            }
        }
        basis[leave] = (ei, ej, theta);
    }
    Err(OtError::PivotLimit(max_pivots))
}

/// Duals from the spanning tree: `u₀ = 0`, propagate `uᵢ + vⱼ = c_ij`.
fn compute_duals<S: Real>(
    cost: &DMatrix<S>,
    basis: &[(usize, usize, S)],
    m: usize,
    n: usize,
    u: &mut [S],
    v: &mut [S],
) {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m + n];
    for (k, &(i, j, _)) in basis.iter().enumerate() {
        adj[i].push((k, m + j));
        adj[m + j].push((k, i));
    }
    let mut seen = vec![false; m + n];
    let mut stack = vec![0usize];
    u[0] = S::zero();
    seen[0] = true;
    while let Some(node) = stack.pop() {
        for &(k, other) in &adj[node] {
            if !seen[other] {
                seen[other] = true;
                let (i, j, _) = basis[k];
                if other >= m {
                    v[other - m] = cost[(i, j)] - u[i];
                } else {
                    u[other] = cost[(i, j)] - v[j];
                }
                stack.push(other);
            }
        }
    }
}

/// Basis-arc indices along the unique tree path from `from` to `to`.
fn tree_path<S: Real>(
    basis: &[(usize, usize, S)],
    m: usize,
    n: usize,
    from: usize,
    to: usize,
) -> Vec<usize> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m + n];
    for (k, &(i, j, _)) in basis.iter().enumerate() {
        adj[i].push((k, m + j));
        adj[m + j].push((k, i));
    }
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; m + n];
    let mut seen = vec![false; m + n];
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(from);
    seen[from] = true;
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &(k, other) in &adj[node] {
            if !seen[other] {
                seen[other] = true;
                parent[other] = Some((node, k));
                queue.push_back(other);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = to;
    while let Some((prev, arc)) = parent[node] {
        path.push(arc);
        node = prev;
    }
    path.reverse();
    path
}

// ---------------------------------------------------------------------------
// Entropic regularisation: log-domain Sinkhorn
// ---------------------------------------------------------------------------

/// Outcome of the Sinkhorn iteration.
#[derive(Clone, Debug)]
pub struct SinkhornInfo<S> {
    pub iterations: usize,
    pub marginal_error: S,
    pub converged: bool,
}

/// Log-domain Sinkhorn with per-iteration stabilisation.
///
/// Stops when the L¹ marginal error is below `tol`; the returned plan is
/// rounded to the exact marginals, and the value is `∫ c dγ` without the
/// entropy term. The returned potentials are made c-feasible by a final
/// transform `φᵢ = minⱼ (c_ij + ψⱼ)`.
pub fn solve_entropic<S: Real>(
    cost: &DMatrix<S>,
    mu: &DiscreteMeasure<S>,
    nu: &DiscreteMeasure<S>,
    eps: S,
    max_iters: usize,
    tol: S,
) -> Result<(TransportPlan<S>, DualPotentials<S>, SinkhornInfo<S>), OtError> {
    check_instance(cost, mu, nu)?;
    if eps <= S::zero() {
        return Err(OtError::InvalidMeasure("entropic eps must be positive".into()));
    }
    let m = mu.len();
    let n = nu.len();
    let a = mu.weights();
    let b = nu.weights();
    let neg_inf = -S::max_value().unwrap();
    let ln_a: Vec<S> = a.iter().map(|&w| if w > S::zero() { w.ln() } else { neg_inf }).collect();
    let ln_b: Vec<S> = b.iter().map(|&w| if w > S::zero() { w.ln() } else { neg_inf }).collect();

    let mut f = vec![S::zero(); m];
    let mut g = vec![S::zero(); n];
    let mut info =
        SinkhornInfo { iterations: 0, marginal_error: S::max_value().unwrap(), converged: false };

    let logsumexp = |vals: Vec<S>| -> S {
        let mx = vals.iter().fold(neg_inf, |acc, &x| acc.max(x));
        if mx == neg_inf {
            return neg_inf;
        }
        let s: S = vals.iter().map(|&x| (x - mx).exp()).sum();
        mx + s.ln()
    };

    for it in 0..max_iters {
        for i in 0..m {
            if a[i] <= S::zero() {
                continue;
            }
            let terms: Vec<S> = (0..n)
                .filter(|&j| b[j] > S::zero())
                .map(|j| (g[j] - cost[(i, j)]) / eps + ln_b[j])
                .collect();
            f[i] = -eps * logsumexp(terms);
        }
        for j in 0..n {
            if b[j] <= S::zero() {
                continue;
            }
            let terms: Vec<S> = (0..m)
                .filter(|&i| a[i] > S::zero())
                .map(|i| (f[i] - cost[(i, j)]) / eps + ln_a[i])
                .collect();
            g[j] = -eps * logsumexp(terms);
        }

        // L¹ marginal error of the implied plan (columns are exact right
        // after the g update, so rows carry the error).
        let mut err = S::zero();
        for i in 0..m {
            if a[i] <= S::zero() {
                continue;
            }
            let mut row = S::zero();
            for j in 0..n {
                if b[j] > S::zero() {
                    row += ((f[i] + g[j] - cost[(i, j)]) / eps + ln_a[i] + ln_b[j]).exp();
                }
            }
            err += (row - a[i]).abs();
        }
        info.iterations = it + 1;
        info.marginal_error = err;
        if err <= tol {
            info.converged = true;
            break;
        }
    }

    let mut gamma = DMatrix::<S>::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            if a[i] > S::zero() && b[j] > S::zero() {
                gamma[(i, j)] = ((f[i] + g[j] - cost[(i, j)]) / eps + ln_a[i] + ln_b[j]).exp();
            }
        }
    }
    round_to_marginals(&mut gamma, a, b);
    let value = gamma.iter().zip(cost.iter()).fold(S::zero(), |acc, (x, c)| acc + *x * *c);

    let psi: Vec<S> = g.iter().map(|x| -*x).collect();
    let mut phi = vec![S::zero(); m];
    for i in 0..m {
        phi[i] = (0..n)
            .map(|j| cost[(i, j)] + psi[j])
            .fold(S::max_value().unwrap(), |acc, x| acc.min(x));
    }
    Ok((TransportPlan { coupling: gamma, value }, DualPotentials { phi, psi }, info))
}

/// Round an approximate coupling onto the exact marginals: scale rows and
/// columns down where they overshoot, then distribute the leftover mass as
/// a rank-one correction.
fn round_to_marginals<S: Real>(gamma: &mut DMatrix<S>, a: &[S], b: &[S]) {
    let (m, n) = gamma.shape();
    for i in 0..m {
        let r = gamma.row(i).sum();
        if r > a[i] && r > S::zero() {
            let s = a[i] / r;
            for j in 0..n {
                gamma[(i, j)] *= s;
            }
        }
    }
    for j in 0..n {
        let c = gamma.column(j).sum();
        if c > b[j] && c > S::zero() {
            let s = b[j] / c;
            for i in 0..m {
                gamma[(i, j)] *= s;
            }
        }
    }
    let mut da = vec![S::zero(); m];
    let mut db = vec![S::zero(); n];
    let mut total = S::zero();
    for i in 0..m {
        da[i] = (a[i] - gamma.row(i).sum()).max(S::zero());
        total += da[i];
    }
    for j in 0..n {
        db[j] = (b[j] - gamma.column(j).sum()).max(S::zero());
    }
    if total > S::zero() {
        for i in 0..m {
            for j in 0..n {
                gamma[(i, j)] += da[i] * db[j] / total;
            }
        }
    }
}

/// The independent coupling `γ = μ ⊗ ν`, a feasibility witness.
pub fn product_coupling<S: Real>(
    cost: &DMatrix<S>,
    mu: &DiscreteMeasure<S>,
    nu: &DiscreteMeasure<S>,
) -> Result<TransportPlan<S>, OtError> {
    check_instance(cost, mu, nu)?;
    let m = mu.len();
    let n = nu.len();
    let mut coupling = DMatrix::<S>::zeros(m, n);
    let mut value = S::zero();
    for i in 0..m {
        for j in 0..n {
            let w = mu.weights()[i] * nu.weights()[j];
            coupling[(i, j)] = w;
            value += w * cost[(i, j)];
        }
    }
    Ok(TransportPlan { coupling, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn measure3(w: [f64; 3]) -> DiscreteMeasure<f64> {
        let pts = (0..3).map(|i| DVector::from_vec(vec![i as f64])).collect();
        DiscreteMeasure::new(pts, w.to_vec()).unwrap()
    }

    fn normalized(mut w: Vec<f64>) -> Vec<f64> {
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let head: f64 = w.iter().take(w.len() - 1).sum();
        let n = w.len();
        w[n - 1] = 1.0 - head;
        w
    }

    /// Brute-force oracle: enumerate every basic feasible solution (vertex)
    /// of the 3×3 transportation polytope via spanning trees of K₃,₃.
    fn vertex_enumeration_optimum(cost: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
        let arcs: Vec<(usize, usize)> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << 9) {
            if mask.count_ones() != 5 {
                continue;
            }
            let chosen: Vec<(usize, usize)> =
                (0..9).filter(|k| mask & (1 << k) != 0).map(|k| arcs[k]).collect();
            let mut parent: Vec<usize> = (0..6).collect();
            let mut acyclic = true;
            for &(i, j) in &chosen {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, 3 + j));
                if ri == rj {
                    acyclic = false;
                    break;
                }
                parent[ri] = rj;
            }
            if !acyclic {
                continue;
            }
            let mut sys = DMatrix::<f64>::zeros(6, 5);
            let mut rhs = DVector::<f64>::zeros(6);
            for (col, &(i, j)) in chosen.iter().enumerate() {
                sys[(i, col)] = 1.0;
                sys[(3 + j, col)] = 1.0;
            }
            for i in 0..3 {
                rhs[i] = a[i];
                rhs[3 + i] = b[i];
            }
            let svd = sys.clone().svd(true, true);
            let flows = match svd.solve(&rhs, 1e-12) {
                Ok(f) => f,
                Err(_) => continue,
            };
            if (sys * &flows - rhs).norm() > 1e-9 || flows.iter().any(|&f| f < -1e-9) {
                continue;
            }
            let value: f64 =
                chosen.iter().zip(flows.iter()).map(|(&(i, j), &f)| cost[(i, j)] * f).sum();
            best = best.min(value);
        }
        best
    }

    #[test]
    fn dirac_to_dirac() {
        let mu = DiscreteMeasure::dirac(DVector::from_vec(vec![0.0]));
        let nu = DiscreteMeasure::dirac(DVector::from_vec(vec![1.0]));
        let c = DMatrix::from_element(1, 1, 7.5);
        let (plan, duals) = solve_exact(&c, &mu, &nu).unwrap();
        assert_eq!(plan.coupling[(0, 0)], 1.0);
        assert_eq!(plan.value, 7.5);
        assert!(duals.feasibility_defect(&c) <= 1e-12);
        let (ep, _, _) = solve_entropic(&c, &mu, &nu, 0.3, 500, 1e-10).unwrap();
        assert_relative_eq!(ep.value, 7.5, epsilon = 1e-12);
        let pp = product_coupling(&c, &mu, &nu).unwrap();
        assert_eq!(pp.value, 7.5);
    }

    #[test]
    fn identity_plan_on_zero_diagonal() {
        let mu = measure3([0.2, 0.5, 0.3]);
        let mut c = DMatrix::from_element(3, 3, 1.0);
        for i in 0..3 {
            c[(i, i)] = 0.0;
        }
        let (plan, duals) = solve_exact(&c, &mu, &mu).unwrap();
        assert!(plan.value.abs() < 1e-15);
        assert!(plan.marginal_error(&mu, &mu) < 1e-12);
        let gap = plan.value - duals.objective(&mu, &mu);
        assert!(gap.abs() <= 1e-8 * (1.0 + plan.value.abs()));
    }

    #[test]
    fn random_instances_match_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let w1v = normalized((0..3).map(|_| rng.random::<f64>() + 0.05).collect());
            let w2v = normalized((0..3).map(|_| rng.random::<f64>() + 0.05).collect());
            let w1 = [w1v[0], w1v[1], w1v[2]];
            let w2 = [w2v[0], w2v[1], w2v[2]];
            let mu = measure3(w1);
            let nu = measure3(w2);
            let c = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() * 10.0);
            let (plan, duals) = solve_exact(&c, &mu, &nu).unwrap();
            let oracle = vertex_enumeration_optimum(&c, &w1, &w2);
            assert_relative_eq!(plan.value, oracle, epsilon = 1e-9);
            assert!(plan.marginal_error(&mu, &nu) < 1e-12, "trial {trial}");
            let gap = (plan.value - duals.objective(&mu, &nu)).abs();
            assert!(gap <= 1e-8 * (1.0 + plan.value.abs()));
            assert!(duals.feasibility_defect(&c) <= 1e-10);
            for i in 0..3 {
                for j in 0..3 {
                    if plan.coupling[(i, j)] > 1e-10 {
                        let slack = duals.phi[i] - duals.psi[j] - c[(i, j)];
                        assert!(slack.abs() <= 1e-8, "complementary slackness at ({i},{j})");
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_3x3_matches_permutation_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = [1.0 / 3.0, 1.0 / 3.0, 1.0 - 2.0 / 3.0];
        let mu = measure3(w);
        let c = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>());
        let (plan, _) = solve_exact(&c, &mu, &mu).unwrap();
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms
            .iter()
            .map(|p| (0..3).map(|i| c[(i, p[i])] / 3.0).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(plan.value, best, epsilon = 1e-12);
    }

    #[test]
    fn permutation_invariance_of_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mu = measure3([0.3, 0.45, 0.25]);
        let nu = measure3([0.5, 0.2, 0.3]);
        let c = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() * 4.0);
        let (plan, _) = solve_exact(&c, &mu, &nu).unwrap();
        let perm = [2usize, 0, 1];
        let mu_p = mu.permuted(&perm);
        let mut c_p = DMatrix::<f64>::zeros(3, 3);
        for (new_i, &old_i) in perm.iter().enumerate() {
            for j in 0..3 {
                c_p[(new_i, j)] = c[(old_i, j)];
            }
        }
        let (plan_p, _) = solve_exact(&c_p, &mu_p, &nu).unwrap();
        assert!((plan.value - plan_p.value).abs() <= 1e-10);
    }

    #[test]
    fn entropic_limits_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mu = measure3([0.25, 0.5, 0.25]);
        let nu = measure3([0.4, 0.3, 0.3]);
        let c = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() * 2.0);
        let (exact, _) = solve_exact(&c, &mu, &nu).unwrap();

        // Maximum-entropy limit: the plan approaches the product coupling
        // (entrywise deviation is O(max C / eps)), with tight marginals.
        let prod = product_coupling(&c, &mu, &nu).unwrap();
        let big = 1e3 * c.amax();
        let (plan, _, info) = solve_entropic(&c, &mu, &nu, big, 2000, 1e-10).unwrap();
        assert!(info.converged);
        assert!(plan.marginal_error(&mu, &nu) < 1e-6);
        let dev_big = (&plan.coupling - &prod.coupling).amax();
        assert!(dev_big < 1e-2);
        let (plan_huge, _, _) = solve_entropic(&c, &mu, &nu, 1e7 * c.amax(), 2000, 1e-10).unwrap();
        assert!((&plan_huge.coupling - &prod.coupling).amax() < 1e-6);

        // Ladder: value ≥ exact, decreasing as eps ↓.
        let mean_c = c.iter().sum::<f64>() / 9.0;
        let mut prev = f64::INFINITY;
        for k in [1.0, 0.3, 0.1, 0.03] {
            let (p, duals, info) = solve_entropic(&c, &mu, &nu, k * mean_c, 20_000, 1e-10).unwrap();
            assert!(info.converged);
            assert!(p.value >= exact.value - 1e-9, "eps {k}: {} < {}", p.value, exact.value);
            assert!(p.value <= prev + 1e-9, "not decreasing at eps {k}");
            assert!(p.marginal_error(&mu, &nu) <= 1e-8);
            assert!(duals.feasibility_defect(&c) <= 1e-10);
            assert!(duals.objective(&mu, &nu) <= p.value + 1e-8);
            prev = p.value;
        }
    }

    #[test]
    fn product_coupling_bounds_kantorovich() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu = measure3([0.2, 0.3, 0.5]);
        let nu = measure3([0.6, 0.1, 0.3]);
        let c = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>());
        let (exact, _) = solve_exact(&c, &mu, &nu).unwrap();
        let prod = product_coupling(&c, &mu, &nu).unwrap();
        assert!(prod.marginal_error(&mu, &nu) < 1e-15);
        assert!(exact.value <= prod.value + 1e-12);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let pts = vec![DVector::from_vec(vec![0.0])];
        assert!(DiscreteMeasure::new(pts.clone(), vec![0.5]).is_err());
        assert!(DiscreteMeasure::new(pts, vec![-1.0]).is_err());
        let mu = DiscreteMeasure::dirac(DVector::from_vec(vec![0.0]));
        let c = DMatrix::from_element(1, 1, f64::INFINITY);
        assert!(matches!(solve_exact(&c, &mu, &mu), Err(OtError::InfeasibleCost)));
        let c2 = DMatrix::from_element(2, 1, 1.0);
        assert!(matches!(solve_exact(&c2, &mu, &mu), Err(OtError::DimensionMismatch { .. })));
    }

    #[test]
    fn larger_instance_matches_monotone_matching() {
        // 40×40 with convex 1D cost: the optimal plan is the monotone
        // (north-west corner on sorted supports) coupling.
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let m = 40;
        let pts: Vec<DVector<f64>> = (0..m).map(|i| DVector::from_vec(vec![i as f64])).collect();
        let w = normalized((0..m).map(|_| rng.random::<f64>() + 0.01).collect());
        let w2 = normalized((0..m).map(|_| rng.random::<f64>() + 0.01).collect());
        let mu = DiscreteMeasure::new(pts.clone(), w.clone()).unwrap();
        let nu = DiscreteMeasure::new(pts, w2.clone()).unwrap();
        let c = DMatrix::from_fn(m, m, |i, j| ((i as f64) - (j as f64)).powi(2));
        let (plan, duals) = solve_exact(&c, &mu, &nu).unwrap();
        assert!(plan.marginal_error(&mu, &nu) < 1e-10);
        let gap = (plan.value - duals.objective(&mu, &nu)).abs();
        assert!(gap <= 1e-8 * (1.0 + plan.value.abs()));
        assert!(duals.feasibility_defect(&c) <= 1e-10);

        let mut nw = 0.0;
        let (mut i, mut j) = (0, 0);
        let (mut ra, mut rb) = (w[0], w2[0]);
        loop {
            let f = ra.min(rb);
            nw += f * c[(i, j)];
            ra -= f;
            rb -= f;
            if ra <= rb {
                i += 1;
                if i == m {
                    break;
                }
                ra = w[i];
            } else {
                j += 1;
                if j == m {
                    break;
                }
                rb = w2[j];
            }
        }
        assert_relative_eq!(plan.value, nw, epsilon = 1e-9);
    }
}
