//! Synthetic pilots.
//!
//! Every pilot flies the same internal controller: an LQR designed on the
//! nominal model below, plus hover feedforward. Skill scales the feedback
//! gain, input noise and how long each decision is held before the pilot
//! reacts again.

use nalgebra::{Matrix6, SMatrix, Vector2, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controller::{solve_dare, CostSpec, DEFAULT_DARE_MAX_ITER, DEFAULT_DARE_TOL};
use crate::error::{Error, Result};
use crate::koopman::AffineLinearModel;
use crate::lander::{clamp_input, ControlInput, LanderState, WorldParams};
use crate::seed::derive_seed;

pub const EXPERT_NOISE_STD: f64 = 0.02;

/// Internal objective of the pilots' own controller. Attitude first: a stiff,
/// cheap-torque angle loop with gentle position tracking. Without delay it is
/// slow but safe; held decisions make the angle loop overshoot.
pub const PILOT_Q: [f64; 6] = [0.4, 4.0, 3000.0, 1.0, 2.0, 25.0];
pub const PILOT_R: [f64; 2] = [0.04, 0.0003];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotKind {
    Expert,
    Novice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotSpec {
    pub kind: PilotKind,
    /// In `[0, 1]`; ignored for experts.
    pub skill: f64,
    /// Extra steps each decision is held for.
    pub reaction_delay: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl PilotSpec {
    pub fn expert(seed: u64) -> Self {
        Self {
            kind: PilotKind::Expert,
            skill: 1.0,
            reaction_delay: 0,
            noise_std: EXPERT_NOISE_STD,
            seed,
        }
    }

    /// Noise and delay derived from skill.
    pub fn novice(skill: f64, seed: u64) -> Self {
        Self {
            kind: PilotKind::Novice,
            skill,
            reaction_delay: (10.0 * (1.0 - skill)).round() as usize,
            noise_std: 0.3 * (1.0 - skill),
            seed,
        }
    }

    pub fn gain_scale(&self) -> f64 {
        match self.kind {
            PilotKind::Expert => 1.0,
            PilotKind::Novice => 0.3 + 0.7 * self.skill,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.skill) {
            return Err(Error::Config(format!("pilot skill {} outside [0, 1]", self.skill)));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config("pilot noise_std must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Small-angle hover linearization of the lander, discretized with the
/// simulator's semi-implicit Euler scheme:
///
/// ```text
/// x'' ~ -(T_main u_hover / m) theta + (T_side / m) u_rot
/// y'' ~  (T_main / m) u_main - g
/// theta'' ~ (arm T_side / I) u_rot
/// ```
pub fn nominal_model(world: &WorldParams) -> AffineLinearModel {
    let dt = world.dt;
    // acceleration = F p + G u + g0, with p = (x, y, theta)
    let mut f = nalgebra::Matrix3::zeros();
    f[(0, 2)] = -world.t_main * world.hover_throttle() / world.mass;
    let mut gm = SMatrix::<f64, 3, 2>::zeros();
    gm[(0, 1)] = world.t_side / world.mass;
    gm[(1, 0)] = world.t_main / world.mass;
    gm[(2, 1)] = world.arm * world.t_side / world.inertia;
    let g0 = nalgebra::Vector3::new(0.0, -world.g, 0.0);

    // v' = v + dt (F p + G u + g0);  p' = p + dt v'
    let mut a = Matrix6::identity();
    let mut b = SMatrix::<f64, 6, 2>::zeros();
    let mut c = Vector6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            a[(3 + i, j)] += dt * f[(i, j)];
            a[(i, j)] += dt * dt * f[(i, j)];
        }
        a[(i, 3 + i)] += dt;
        for j in 0..2 {
            b[(3 + i, j)] = dt * gm[(i, j)];
            b[(i, j)] = dt * dt * gm[(i, j)];
        }
        c[3 + i] = dt * g0[i];
        c[i] = dt * dt * g0[i];
    }
    AffineLinearModel { a, b, c }
}

/// The pilots' shared internal feedback law.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalController {
    pub gain: SMatrix<f64, 2, 6>,
    pub hover: Vector2<f64>,
    pub goal: Vector6<f64>,
}

impl NominalController {
    pub fn new(world: &WorldParams) -> Result<Self> {
        Self::with_weights(world, PILOT_Q, PILOT_R)
    }

    /// Design the internal law for a different diagonal objective.
    pub fn with_weights(world: &WorldParams, q: [f64; 6], r: [f64; 2]) -> Result<Self> {
        let model = nominal_model(world);
        let cost = CostSpec::diagonal(q, r, world.goal_state());
        let sol = solve_dare(&model, &cost, DEFAULT_DARE_TOL, DEFAULT_DARE_MAX_ITER)?;
        Ok(Self {
            gain: sol.gain,
            hover: Vector2::new(world.hover_throttle(), 0.0),
            goal: world.goal_state().to_vector(),
        })
    }

    /// `hover + scale * K_nom (goal - state)`, clamped.
    pub fn command(&self, state: &LanderState, scale: f64) -> ControlInput {
        let u = self.hover + scale * (self.gain * (self.goal - state.to_vector()));
        clamp_input(ControlInput::new(u[0], u[1])).unwrap_or(ControlInput::ZERO)
    }
}

/// A pilot instance: owns its RNG and hold state for one trial.
#[derive(Debug, Clone)]
pub struct Pilot {
    spec: PilotSpec,
    controller: NominalController,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    held: ControlInput,
    hold_left: usize,
}

impl Pilot {
    pub fn new(spec: &PilotSpec, controller: NominalController, trial_seed: u64) -> Result<Self> {
        spec.validate()?;
        let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            spec: spec.clone(),
            controller,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[trial_seed])),
            noise,
            held: ControlInput::ZERO,
            hold_left: 0,
        })
    }

    pub fn spec(&self) -> &PilotSpec {
        &self.spec
    }

    /// Next input for the given state.
    pub fn pilot_input(&mut self, state: &LanderState) -> ControlInput {
        if self.hold_left > 0 {
            self.hold_left -= 1;
            return self.held;
        }
        let base = self.controller.command(state, self.spec.gain_scale());
        let n_main = self.noise.sample(&mut self.rng);
        let n_rot = self.noise.sample(&mut self.rng);
        let noisy = ControlInput::new(base.u_main + n_main, base.u_rot + n_rot);
        self.held = clamp_input(noisy).unwrap_or(base);
        self.hold_left = self.spec.reaction_delay;
        self.held
    }
}
