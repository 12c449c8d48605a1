//! Small dense linear-algebra helpers shared across the solvers:
//! Gauss–Legendre quadrature, numerical rank, definiteness checks.

use crate::Real;
use nalgebra::{DMatrix, DVector};

/// Relative singular-value threshold for numerical rank decisions.
pub const RANK_REL_TOL: f64 = 1e-9;

/// Gauss–Legendre nodes and weights on `[a, b]`.
///
/// Nodes are computed by Newton iteration on the Legendre polynomial
/// recurrence, in `f64`, then cast to the scalar type.
pub fn gauss_legendre<S: Real>(n: usize, a: S, b: S) -> (Vec<S>, Vec<S>) {
    assert!(n >= 1, "quadrature needs at least one node");
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let nf = n as f64;
    for i in 0..n {
        // Tricomi initial guess for the i-th root of P_n on [-1, 1].
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_n' via the three-term recurrence.
            let (mut p0, mut p1) = (1.0_f64, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes.push(x);
        weights.push(w);
    }
    let half = (b - a) * S::cst(0.5);
    let mid = (a + b) * S::cst(0.5);
    let mapped_nodes = nodes.iter().map(|&x| mid + half * S::cst(x)).collect();
    let mapped_weights = weights.iter().map(|&w| half * S::cst(w)).collect();
    (mapped_nodes, mapped_weights)
}

/// Numerical rank: singular values below `RANK_REL_TOL · σ_max` count as zero.
pub fn numerical_rank<S: Real>(m: &DMatrix<S>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().fold(S::zero(), |acc, &s| acc.max(s));
    if smax == S::zero() {
        return 0;
    }
    let tol = S::cst(RANK_REL_TOL) * smax;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Smallest singular value of a (possibly rectangular) matrix.
pub fn smallest_singular_value<S: Real>(m: &DMatrix<S>) -> S {
    let sv = m.clone().singular_values();
    sv.iter().fold(S::max_value().unwrap(), |acc, &s| acc.min(s))
}

/// 2-norm condition number, `∞` for a singular matrix.
pub fn condition_number<S: Real>(m: &DMatrix<S>) -> S {
    let sv = m.clone().singular_values();
    let smax = sv.iter().fold(S::zero(), |acc, &s| acc.max(s));
    let smin = sv.iter().fold(S::max_value().unwrap(), |acc, &s| acc.min(s));
    if smin == S::zero() {
        S::cst(f64::INFINITY)
    } else {
        smax / smin
    }
}

/// Symmetric part `(M + Mᵀ)/2`.
pub fn symmetrize<S: Real>(m: &DMatrix<S>) -> DMatrix<S> {
    (m + m.transpose()) * S::cst(0.5)
}

/// Eigenvalues of the symmetrized matrix, ascending.
pub fn symmetric_eigenvalues<S: Real>(m: &DMatrix<S>) -> DVector<S> {
    let mut ev: Vec<S> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).expect("non-finite eigenvalue"));
    DVector::from_vec(ev)
}

/// Positive semidefiniteness up to `-tol·scale` on the smallest eigenvalue.
pub fn is_psd<S: Real>(m: &DMatrix<S>, rel_tol: f64) -> bool {
    let ev = symmetric_eigenvalues(m);
    if ev.is_empty() {
        return true;
    }
    let scale = ev.iter().fold(S::zero(), |acc, &e| acc.max(e.abs())).max(S::one());
    ev[0] >= -S::cst(rel_tol) * scale
}

/// Strict positive definiteness: Cholesky succeeds.
pub fn is_pd<S: Real>(m: &DMatrix<S>) -> bool {
    m.nrows() == m.ncols() && symmetrize(m).cholesky().is_some()
}

/// Solve `M x = b` by LU with partial pivoting.
pub fn solve<S: Real>(m: &DMatrix<S>, b: &DVector<S>) -> Option<DVector<S>> {
    m.clone().lu().solve(b)
}

/// Matrix inverse by LU, `None` when singular.
pub fn inverse<S: Real>(m: &DMatrix<S>) -> Option<DMatrix<S>> {
    m.clone().try_inverse()
}

/// Matrix exponential (Padé with scaling and squaring).
pub fn expm<S: Real>(m: &DMatrix<S>) -> DMatrix<S> {
    m.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // n nodes are exact up to degree 2n-1.
        let (x, w) = gauss_legendre::<f64>(5, 0.0, 2.0);
        let int_x9: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(9)).sum();
        assert_relative_eq!(int_x9, 2.0_f64.powi(10) / 10.0, max_relative = 1e-13);
        let int_1: f64 = w.iter().sum();
        assert_relative_eq!(int_1, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn rank_with_relative_threshold() {
        let m = DMatrix::<f64>::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1e-3, 0.0, 0.0, 0.0, 1e-12]);
        assert_eq!(numerical_rank(&m), 2);
        assert_eq!(numerical_rank(&DMatrix::<f64>::zeros(3, 3)), 0);
    }

    #[test]
    fn definiteness_checks() {
        let m = DMatrix::<f64>::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!(is_pd(&m));
        assert!(is_psd(&m, 1e-10));
        let s = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(!is_pd(&s));
        assert!(is_psd(&s, 1e-10));
        let n = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(!is_psd(&n, 1e-10));
    }
}
