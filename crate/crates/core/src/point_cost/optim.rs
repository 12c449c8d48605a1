//! Limited-memory BFGS with Armijo backtracking, used by the direct
//! transcription solver. Deterministic: no randomness, fixed iteration
//! order.

use crate::Real;
use nalgebra::DVector;
use std::collections::VecDeque;

pub struct LbfgsOptions<S> {
    pub memory: usize,
    pub max_iters: usize,
    pub grad_tol: S,
    /// Armijo sufficient-decrease slope.
    pub c1: S,
    /// Give up when the backtracked step falls below this.
    pub min_step: S,
}

impl<S: Real> Default for LbfgsOptions<S> {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 400,
            grad_tol: S::cst(1e-6),
            c1: S::cst(1e-4),
            min_step: S::cst(1e-14),
        }
    }
}

pub struct LbfgsResult<S> {
    pub x: DVector<S>,
    pub value: S,
    pub grad_norm: S,
    pub iterations: usize,
}

/// Minimise `f` from `x0`; `f` returns the value and writes the gradient.
pub fn minimize<S, F>(mut f: F, x0: DVector<S>, opts: &LbfgsOptions<S>) -> LbfgsResult<S>
where
    S: Real,
    F: FnMut(&DVector<S>, &mut DVector<S>) -> S,
{
    let n = x0.len();
    let mut x = x0;
    let mut grad = DVector::zeros(n);
    let mut value = f(&x, &mut grad);
    let mut pairs: VecDeque<(DVector<S>, DVector<S>, S)> = VecDeque::new(); // (s, y, 1/yᵀs)
    let mut gamma = S::one();

    let mut iterations = 0;
    for iter in 0..opts.max_iters {
        iterations = iter;
        if grad.norm() <= opts.grad_tol {
            break;
        }

        // Two-loop recursion for the search direction.
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = *rho * s.dot(&q);
            q.axpy(-a, y, S::one());
            alphas.push(a);
        }
        q *= gamma;
        for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
            let b = *rho * y.dot(&q);
            q.axpy(a - b, s, S::one());
        }
        let mut dir = -q;
        let mut slope = grad.dot(&dir);
        if slope >= S::zero() {
            // Fall back to steepest descent when curvature info is stale.
            dir = -grad.clone();
            slope = grad.dot(&dir);
            pairs.clear();
            gamma = S::one();
        }

        // Armijo backtracking.
        let mut step = S::one();
        let mut new_grad = DVector::zeros(n);
        let mut accepted = false;
        while step >= opts.min_step {
            let cand = &x + &dir * step;
            let cand_val = f(&cand, &mut new_grad);
            if cand_val <= value + opts.c1 * step * slope {
                let s = &cand - &x;
                let yv = &new_grad - &grad;
                let sy = s.dot(&yv);
                if sy > S::cst(1e-30) {
                    gamma = sy / yv.dot(&yv);
                    pairs.push_back((s, yv, S::one() / sy));
                    if pairs.len() > opts.memory {
                        pairs.pop_front();
                    }
                }
                x = cand;
                value = cand_val;
                grad = new_grad.clone();
                accepted = true;
                break;
            }
            step *= S::cst(0.5);
        }
        if !accepted {
            break;
        }
    }

    let grad_norm = grad.norm();
    LbfgsResult { x, value, grad_norm, iterations }
}
