//! LQR outer loop on a learned affine model and the half-plane input filter.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix6, SMatrix, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koopman::{AffineLinearModel, LqrExport};
use crate::lander::{clamp_input, step, ControlInput, LanderState, WorldParams};

pub const DEFAULT_DARE_TOL: f64 = 1e-10;
pub const DEFAULT_DARE_MAX_ITER: usize = 100_000;

/// Quadratic running cost `(x - g)^T Q (x - g) + u^T R u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSpec {
    /// Row-major 6x6.
    pub q: [[f64; 6]; 6],
    /// Row-major 2x2.
    pub r: [[f64; 2]; 2],
    pub goal_state: [f64; 6],
}

impl Default for CostSpec {
    fn default() -> Self {
        Self::diagonal([0.5, 10.0, 20.0, 1.0, 0.5, 20.0], [0.1, 0.1], WorldParams::default().goal_state())
    }
}

impl CostSpec {
    pub fn diagonal(q: [f64; 6], r: [f64; 2], goal: LanderState) -> Self {
        let mut qm = [[0.0; 6]; 6];
        for (i, v) in q.into_iter().enumerate() {
            qm[i][i] = v;
        }
        Self {
            q: qm,
            r: [[r[0], 0.0], [0.0, r[1]]],
            goal_state: goal.to_array(),
        }
    }

    pub fn q_matrix(&self) -> Matrix6<f64> {
        Matrix6::from_fn(|i, j| self.q[i][j])
    }

    pub fn r_matrix(&self) -> Matrix2<f64> {
        Matrix2::from_fn(|i, j| self.r[i][j])
    }

    pub fn goal(&self) -> Vector6<f64> {
        Vector6::from(self.goal_state)
    }

    /// Symmetry, `R > 0`, `Q >= 0`.
    pub fn validate(&self) -> Result<()> {
        let q = self.q_matrix();
        let r = self.r_matrix();
        if q.iter().chain(r.iter()).chain(self.goal_state.iter()).any(|v| !v.is_finite()) {
            return Err(Error::CostSpec("non-finite entry".into()));
        }
        let scale = q.amax().max(r.amax()).max(1.0);
        if (q - q.transpose()).amax() > 1e-12 * scale || (r - r.transpose()).amax() > 1e-12 * scale {
            return Err(Error::CostSpec("Q and R must be symmetric".into()));
        }
        if r.symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::CostSpec("R must be positive definite".into()));
        }
        if q.symmetric_eigenvalues().min() < -1e-12 * scale {
            return Err(Error::CostSpec("Q must be positive semi-definite".into()));
        }
        Ok(())
    }
}

/// Result of a Riccati fixed-point solve in arbitrary dimensions.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    /// `||P - ricc(P)||_inf` (maximum absolute row sum).
    pub residual: f64,
    pub iterations: usize,
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn gain_for(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::CostSpec("R + B^T P B is not positive definite".into()))?;
    Ok(chol.solve(&(bt_p * a)))
}

/// One application of the Riccati map
/// `P -> A^T P A - A^T P B (R + B^T P B)^-1 B^T P A + Q`.
pub fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let gain = gain_for(a, b, r, p)?;
    let at_p = a.transpose() * p;
    let next = &at_p * a - &at_p * b * gain + q;
    Ok((&next + next.transpose()) * 0.5)
}

/// Fixed-point iteration of the discrete algebraic Riccati equation from `P0 = Q`.
pub fn solve_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution> {
    if r.clone().cholesky().is_none() {
        return Err(Error::CostSpec("R must be positive definite".into()));
    }
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for iteration in 0..max_iter {
        let next = riccati_map(a, b, q, r, &p)?;
        residual = inf_norm(&(&next - &p));
        if !residual.is_finite() {
            break;
        }
        if residual < tol {
            let gain = gain_for(a, b, r, &p)?;
            return Ok(RiccatiSolution {
                p,
                gain,
                residual,
                iterations: iteration,
            });
        }
        p = next;
    }
    Err(Error::NotStabilizable { residual })
}

/// Spectral radius of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// Infinite-horizon LQR policy about the goal equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    pub p: Matrix6<f64>,
    pub gain: SMatrix<f64, 2, 6>,
    pub u_ff: Vector2<f64>,
    /// `(I - A) g - c - B u_ff`: how far the goal is from a true equilibrium.
    pub equilibrium_residual: Vector6<f64>,
    pub residual: f64,
    pub spectral_radius: f64,
    pub iterations: usize,
}

impl LqrSolution {
    pub fn export(&self) -> LqrExport {
        LqrExport {
            p: self.p.transpose().as_slice().to_vec(),
            gain: self.gain.transpose().as_slice().to_vec(),
            u_ff: [self.u_ff[0], self.u_ff[1]],
            residual: self.residual,
            spectral_radius: self.spectral_radius,
        }
    }
}

fn dyn6(m: &Matrix6<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(6, 6, m.as_slice())
}

fn dyn62(m: &SMatrix<f64, 6, 2>) -> DMatrix<f64> {
    DMatrix::from_column_slice(6, 2, m.as_slice())
}

/// Least-squares feedforward making the goal (as close as possible to) an
/// equilibrium of the affine model.
pub fn equilibrium_feedforward(model: &AffineLinearModel, goal: &Vector6<f64>) -> (Vector2<f64>, Vector6<f64>) {
    let target = (Matrix6::identity() - model.a) * goal - model.c;
    let svd = dyn62(&model.b).svd(true, true);
    let rhs = DVector::from_column_slice(target.as_slice());
    let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let u = svd.solve(&rhs, eps).unwrap_or_else(|_| DVector::zeros(2));
    let u_ff = Vector2::new(u[0], u[1]);
    let r_eq = target - model.b * u_ff;
    (u_ff, r_eq)
}

/// Solve the infinite-horizon LQR on an affine model and certify the result.
pub fn solve_dare(model: &AffineLinearModel, cost: &CostSpec, tol: f64, max_iter: usize) -> Result<LqrSolution> {
    cost.validate()?;
    if !model.is_finite() {
        return Err(Error::NonFinite("affine model"));
    }
    let a = dyn6(&model.a);
    let b = dyn62(&model.b);
    let q = dyn6(&cost.q_matrix());
    let r = DMatrix::from_column_slice(2, 2, cost.r_matrix().as_slice());
    let sol = solve_riccati(&a, &b, &q, &r, tol, max_iter)?;

    let p = Matrix6::from_column_slice(sol.p.as_slice());
    let gain = SMatrix::<f64, 2, 6>::from_column_slice(sol.gain.as_slice());
    let closed = &a - &b * &sol.gain;
    let rho = spectral_radius(&closed);
    if !(rho < 1.0) {
        return Err(Error::NotStabilizable { residual: sol.residual });
    }
    let (u_ff, equilibrium_residual) = equilibrium_feedforward(model, &cost.goal());
    Ok(LqrSolution {
        p,
        gain,
        u_ff,
        equilibrium_residual,
        residual: sol.residual,
        spectral_radius: rho,
        iterations: sol.iterations,
    })
}

/// `clamp(u_ff - gain (x - g))`.
pub fn optimal_input(sol: &LqrSolution, cost: &CostSpec, state: &LanderState) -> ControlInput {
    let u = unclamped_optimal(sol, cost, state);
    clamp_input(ControlInput::new(u[0], u[1])).unwrap_or(ControlInput::ZERO)
}

pub fn unclamped_optimal(sol: &LqrSolution, cost: &CostSpec, state: &LanderState) -> Vector2<f64> {
    sol.u_ff - sol.gain * (state.to_vector() - cost.goal())
}

/// Pass each user dimension unchanged unless its sign strictly opposes the
/// optimal input's, in which case it is zeroed.
pub fn half_plane_filter(user: ControlInput, optimal: ControlInput) -> ControlInput {
    let keep = |u: f64, o: f64| if u * o >= 0.0 { u } else { 0.0 };
    ControlInput::new(keep(user.u_main, optimal.u_main), keep(user.u_rot, optimal.u_rot))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedStep {
    pub applied: ControlInput,
    pub optimal: ControlInput,
    pub next: LanderState,
}

/// One timestep of shared control.
pub fn shared_step(
    state: &LanderState,
    user_input: ControlInput,
    sol: &LqrSolution,
    cost: &CostSpec,
    params: &WorldParams,
) -> Result<SharedStep> {
    let optimal = optimal_input(sol, cost, state);
    let applied = half_plane_filter(clamp_input(user_input)?, optimal);
    let next = step(state, applied, params)?;
    Ok(SharedStep { applied, optimal, next })
}

pub fn running_cost(state: &LanderState, input: &ControlInput, cost: &CostSpec) -> f64 {
    let d = state.to_vector() - cost.goal();
    let u = Vector2::new(input.u_main, input.u_rot);
    (d.transpose() * cost.q_matrix() * d)[0] + (u.transpose() * cost.r_matrix() * u)[0]
}

/// Time-varying policy for stage `t`: `u = u_ff - gain (x - g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePolicy {
    pub gain: SMatrix<f64, 2, 6>,
    pub u_ff: Vector2<f64>,
}

/// Backward Riccati recursion over `horizon` stages with terminal weight `Q`.
///
/// Works in deviation coordinates about the goal and the equilibrium
/// feedforward; when the goal is not an exact equilibrium the leftover drift
/// is propagated through an affine cost-to-go term.
pub fn finite_horizon_lqr(model: &AffineLinearModel, cost: &CostSpec, horizon: usize) -> Result<Vec<StagePolicy>> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    cost.validate()?;
    let q = cost.q_matrix();
    let r = cost.r_matrix();
    let (u_eq, drift) = equilibrium_feedforward(model, &cost.goal());
    let mut p = q;
    let mut s = Vector6::zeros();
    let mut stages = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let bt_p = model.b.transpose() * p;
        let chol = (r + bt_p * model.b)
            .cholesky()
            .ok_or_else(|| Error::CostSpec("R + B^T P B is not positive definite".into()))?;
        let gain = chol.solve(&(bt_p * model.a));
        let offset = chol.solve(&(model.b.transpose() * (p * drift + s)));
        let closed = model.a - model.b * gain;
        s = closed.transpose() * (p * drift + s);
        let next = q + model.a.transpose() * p * closed;
        p = (next + next.transpose()) * 0.5;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotStabilizable { residual: f64::INFINITY });
        }
        stages.push(StagePolicy {
            gain,
            u_ff: u_eq - offset,
        });
    }
    stages.reverse();
    Ok(stages)
}
