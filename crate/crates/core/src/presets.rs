//! Named benchmark systems, constructible from a config entry.

use crate::systems::{ControlAffineSystem, SystemError, VectorField};
use crate::Real;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Driftless system with the coordinate fields `e₁ … e_d` (`ẋ = u`).
pub fn single_integrator<S: Real>(dim: usize) -> ControlAffineSystem<S> {
    let controls = (0..dim)
        .map(|i| {
            let mut e = DVector::<S>::zeros(dim);
            e[i] = S::one();
            VectorField::constant(e).with_growth_bound(S::one())
        })
        .collect();
    ControlAffineSystem::new_driftless(controls).expect("consistent dims")
}

/// `(A, B)` of the double integrator `q̈ = u`.
pub fn double_integrator_matrices<S: Real>() -> (DMatrix<S>, DMatrix<S>) {
    let a = DMatrix::from_row_slice(2, 2, &[S::zero(), S::one(), S::zero(), S::zero()]);
    let b = DMatrix::from_row_slice(2, 1, &[S::zero(), S::one()]);
    (a, b)
}

/// LTI double integrator: state `(q, q̇)`, one control channel.
pub fn double_integrator<S: Real>() -> ControlAffineSystem<S> {
    let (a, b) = double_integrator_matrices::<S>();
    ControlAffineSystem::new_lti(a, b).expect("consistent dims")
}

/// Arbitrary LTI system `ẋ = Ax + Bu`.
pub fn lti<S: Real>(a: DMatrix<S>, b: DMatrix<S>) -> Result<ControlAffineSystem<S>, SystemError> {
    ControlAffineSystem::new_lti(a, b)
}

/// Heisenberg system on `ℝ³`: `g₁ = (1, 0, −y/2)`, `g₂ = (0, 1, x/2)`.
///
/// Bracket-generating in one step (`[g₁, g₂] = (0, 0, 1)`), the canonical
/// 2-generating driftless example.
pub fn heisenberg<S: Real>() -> ControlAffineSystem<S> {
    let half = S::cst(0.5);
    let g1 = VectorField::new(
        3,
        move |x: &DVector<S>| DVector::from_vec(vec![S::one(), S::zero(), -half * x[1]]),
        move |_x: &DVector<S>| {
            DMatrix::from_row_slice(
                3,
                3,
                &[
                    S::zero(), S::zero(), S::zero(),
                    S::zero(), S::zero(), S::zero(),
                    S::zero(), -half, S::zero(),
                ],
            )
        },
    )
    .with_growth_bound(S::one());
    let g2 = VectorField::new(
        3,
        move |x: &DVector<S>| DVector::from_vec(vec![S::zero(), S::one(), half * x[0]]),
        move |_x: &DVector<S>| {
            DMatrix::from_row_slice(
                3,
                3,
                &[
                    S::zero(), S::zero(), S::zero(),
                    S::zero(), S::zero(), S::zero(),
                    half, S::zero(), S::zero(),
                ],
            )
        },
    )
    .with_growth_bound(S::one());
    ControlAffineSystem::new_driftless(vec![g1, g2]).expect("consistent dims")
}

/// Unicycle on `ℝ³`: state `(x, y, θ)`, drive field `(cos θ, sin θ, 0)` and
/// turn field `(0, 0, 1)`.
pub fn unicycle<S: Real>() -> ControlAffineSystem<S> {
    let drive = VectorField::new(
        3,
        |x: &DVector<S>| DVector::from_vec(vec![x[2].cos(), x[2].sin(), S::zero()]),
        |x: &DVector<S>| {
            DMatrix::from_row_slice(
                3,
                3,
                &[
                    S::zero(), S::zero(), -x[2].sin(),
                    S::zero(), S::zero(), x[2].cos(),
                    S::zero(), S::zero(), S::zero(),
                ],
            )
        },
    )
    .with_growth_bound(S::one());
    let mut e3 = DVector::<S>::zeros(3);
    e3[2] = S::one();
    let turn = VectorField::constant(e3).with_growth_bound(S::one());
    ControlAffineSystem::new_driftless(vec![drive, turn]).expect("consistent dims")
}

/// Declarative system entry for the experiment config file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum PresetSpec {
    SingleIntegrator { dim: usize },
    DoubleIntegrator,
    Lti { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
    Heisenberg,
    Unicycle,
}

impl PresetSpec {
    /// Registry-style lookup by name for presets without parameters; the
    /// parametric ones take their parameters from the config structure.
    pub fn by_name(name: &str) -> Option<PresetSpec> {
        match name {
            "double_integrator" => Some(PresetSpec::DoubleIntegrator),
            "heisenberg" => Some(PresetSpec::Heisenberg),
            "unicycle" => Some(PresetSpec::Unicycle),
            _ => {
                // "single_integrator(d)"
                let inner = name.strip_prefix("single_integrator(")?.strip_suffix(')')?;
                inner.trim().parse::<usize>().ok().map(|dim| PresetSpec::SingleIntegrator { dim })
            }
        }
    }

    pub fn build<S: Real>(&self) -> Result<ControlAffineSystem<S>, SystemError> {
        match self {
            PresetSpec::SingleIntegrator { dim } => Ok(single_integrator(*dim)),
            PresetSpec::DoubleIntegrator => Ok(double_integrator()),
            PresetSpec::Lti { a, b } => {
                let am = matrix_from_rows::<S>(a, "A")?;
                let bm = matrix_from_rows::<S>(b, "B")?;
                lti(am, bm)
            }
            PresetSpec::Heisenberg => Ok(heisenberg()),
            PresetSpec::Unicycle => Ok(unicycle()),
        }
    }
}

fn matrix_from_rows<S: Real>(rows: &[Vec<f64>], what: &'static str) -> Result<DMatrix<S>, SystemError> {
    let nr = rows.len();
    let nc = rows.first().map(|r| r.len()).unwrap_or(0);
    for r in rows {
        if r.len() != nc {
            return Err(SystemError::DimensionMismatch { what, expected: nc, got: r.len() });
        }
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| S::cst(rows[i][j])))
}
