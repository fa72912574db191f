//! Planar lander dynamics.
//!
//! The lander is a rigid body with a main engine along its body axis and a
//! pair of side thrusters that produce both a lateral body force and a torque.
//! Integration is semi-implicit Euler at a fixed timestep, so `step` is a pure
//! function of its arguments and replays bit-identically.

use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of state coordinates.
pub const STATE_DIM: usize = 6;
/// Number of control coordinates.
pub const CONTROL_DIM: usize = 2;

/// `[x, y, theta, vx, vy, omega]`. `theta = 0` is upright, counterclockwise positive.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct LanderState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl LanderState {
    pub const fn new(x: f64, y: f64, theta: f64, vx: f64, vy: f64, omega: f64) -> Self {
        Self {
            x,
            y,
            theta,
            vx,
            vy,
            omega,
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.theta, self.vx, self.vy, self.omega]
    }

    pub fn to_vector(self) -> Vector6<f64> {
        Vector6::from(self.to_array())
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// True when the position lies in `[0, L1] x (0, L2]`.
    pub fn in_bounds(&self, params: &WorldParams) -> bool {
        self.x >= 0.0 && self.x <= params.l1 && self.y > 0.0 && self.y <= params.l2
    }

    /// Reflection about the vertical line `x = axis`.
    pub fn mirrored(&self, axis: f64) -> Self {
        Self::new(
            2.0 * axis - self.x,
            self.y,
            -self.theta,
            -self.vx,
            self.vy,
            -self.omega,
        )
    }
}

impl From<[f64; 6]> for LanderState {
    fn from(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }
}

impl From<LanderState> for [f64; 6] {
    fn from(s: LanderState) -> Self {
        s.to_array()
    }
}

/// Main throttle in `[0, 1]`, rotational command in `[-1, 1]` once clamped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct ControlInput {
    pub u_main: f64,
    pub u_rot: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput::new(0.0, 0.0);

    pub const fn new(u_main: f64, u_rot: f64) -> Self {
        Self { u_main, u_rot }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.u_main, self.u_rot]
    }

    pub fn is_finite(&self) -> bool {
        self.u_main.is_finite() && self.u_rot.is_finite()
    }

    pub fn is_clamped(&self) -> bool {
        (0.0..=1.0).contains(&self.u_main) && (-1.0..=1.0).contains(&self.u_rot)
    }
}

impl From<[f64; 2]> for ControlInput {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl From<ControlInput> for [f64; 2] {
    fn from(u: ControlInput) -> Self {
        u.to_array()
    }
}

/// Physical constants, task geometry and trial-start distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    /// Domain width (m).
    pub l1: f64,
    /// Domain height (m).
    pub l2: f64,
    pub g: f64,
    pub mass: f64,
    pub inertia: f64,
    pub t_main: f64,
    pub t_side: f64,
    /// Side-thruster lever arm (m).
    pub arm: f64,
    pub dt: f64,
    /// Nominal start position.
    pub start: [f64; 2],
    /// Standard deviation of the Gaussian start-position perturbation (m).
    pub start_noise_std: f64,
    /// Half-width of the uniform initial linear velocity draw (m/s).
    pub start_speed: f64,
    /// Half-width of the uniform initial angular velocity draw (rad/s).
    pub start_spin: f64,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub tol_v: f64,
    pub tol_omega: f64,
    pub tol_theta: f64,
    pub max_steps: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            l1: 20.0,
            l2: 13.33,
            g: 1.62,
            mass: 1.0,
            inertia: 0.25,
            t_main: 4.0,
            t_side: 0.4,
            arm: 0.5,
            dt: 0.02,
            start: [10.0, 10.0],
            start_noise_std: 0.2,
            start_speed: 1.0,
            start_spin: 0.5,
            goal: [10.0, 6.0],
            goal_radius: 0.5,
            tol_v: 0.1,
            tol_omega: 0.1,
            tol_theta: 0.1,
            max_steps: 1500,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l1", self.l1),
            ("l2", self.l2),
            ("g", self.g),
            ("mass", self.mass),
            ("inertia", self.inertia),
            ("t_main", self.t_main),
            ("t_side", self.t_side),
            ("arm", self.arm),
            ("dt", self.dt),
            ("goal_radius", self.goal_radius),
            ("tol_v", self.tol_v),
            ("tol_omega", self.tol_omega),
            ("tol_theta", self.tol_theta),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("world.{name} must be finite and > 0")));
            }
        }
        for (name, v) in [
            ("start_noise_std", self.start_noise_std),
            ("start_speed", self.start_speed),
            ("start_spin", self.start_spin),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("world.{name} must be finite and >= 0")));
            }
        }
        let [gx, gy] = self.goal;
        if !(gx > 0.0 && gx < self.l1 && gy > 0.0 && gy < self.l2) {
            return Err(Error::Config("world.goal must lie strictly inside the domain".into()));
        }
        if self.t_main / (self.mass * self.g) <= 1.0 {
            return Err(Error::Config("world.t_main cannot hold the lander against gravity".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("world.max_steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Throttle that exactly cancels gravity when upright.
    pub fn hover_throttle(&self) -> f64 {
        self.mass * self.g / self.t_main
    }

    /// The goal as a full state: at rest and upright.
    pub fn goal_state(&self) -> LanderState {
        LanderState::new(self.goal[0], self.goal[1], 0.0, 0.0, 0.0, 0.0)
    }
}

/// Clamp a raw command to actuator bounds.
pub fn clamp_input(raw: ControlInput) -> Result<ControlInput> {
    if !raw.is_finite() {
        return Err(Error::NonFinite("control input"));
    }
    Ok(ControlInput::new(
        raw.u_main.clamp(0.0, 1.0),
        raw.u_rot.clamp(-1.0, 1.0),
    ))
}

/// Advance one timestep. The input must already be within actuator bounds.
pub fn step(state: &LanderState, input: ControlInput, params: &WorldParams) -> Result<LanderState> {
    if !state.is_finite() {
        return Err(Error::NonFinite("lander state"));
    }
    if !input.is_finite() {
        return Err(Error::NonFinite("control input"));
    }
    if !input.is_clamped() {
        return Err(Error::Config(format!(
            "control input ({}, {}) outside actuator bounds; clamp it first",
            input.u_main, input.u_rot
        )));
    }

    let (sin, cos) = state.theta.sin_cos();
    let main = params.t_main * input.u_main / params.mass;
    let side = params.t_side * input.u_rot / params.mass;
    let ax = -main * sin + side * cos;
    let ay = main * cos + side * sin - params.g;
    let alpha = params.arm * params.t_side * input.u_rot / params.inertia;

    let dt = params.dt;
    let vx = state.vx + ax * dt;
    let vy = state.vy + ay * dt;
    let omega = state.omega + alpha * dt;
    let next = LanderState::new(
        state.x + vx * dt,
        state.y + vy * dt,
        state.theta + omega * dt,
        vx,
        vy,
        omega,
    );
    if !next.is_finite() {
        return Err(Error::NonFinite("lander state after step"));
    }
    Ok(next)
}

/// Initial state for a trial: Gaussian position perturbation about the
/// nominal start, uniform initial velocities, upright heading.
pub fn sample_initial(seed: u64, params: &WorldParams) -> LanderState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let dx: f64 = normal.sample(&mut rng);
    let dy: f64 = normal.sample(&mut rng);
    let vx = uniform_symmetric(&mut rng, params.start_speed);
    let vy = uniform_symmetric(&mut rng, params.start_speed);
    let omega = uniform_symmetric(&mut rng, params.start_spin);
    LanderState::new(
        params.start[0] + params.start_noise_std * dx,
        params.start[1] + params.start_noise_std * dy,
        0.0,
        vx,
        vy,
        omega,
    )
}

fn uniform_symmetric(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        // keep the stream position independent of the width
        let _: f64 = rng.random();
        return 0.0;
    }
    rng.random_range(-half_width..=half_width)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Success,
    Crash,
    OutOfBounds,
    Timeout,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Success => "success",
            TrialStatus::Crash => "crash",
            TrialStatus::OutOfBounds => "out_of_bounds",
            TrialStatus::Timeout => "timeout",
        }
    }
}

/// How a trial ended. `wall_time` is elapsed seconds: simulated time for
/// offline trials, wall-clock time for live sessions. It is not persisted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialOutcome {
    pub status: TrialStatus,
    pub steps: usize,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Running,
    Done(TrialStatus),
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = theta.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

/// Classify a state after `steps` steps. Crash and out-of-bounds take
/// precedence over success, success over timeout.
pub fn judge(state: &LanderState, steps: usize, params: &WorldParams) -> Verdict {
    if !(state.y > 0.0) {
        return Verdict::Done(TrialStatus::Crash);
    }
    if !(state.x >= 0.0 && state.x <= params.l1 && state.y <= params.l2) {
        return Verdict::Done(TrialStatus::OutOfBounds);
    }
    let dist = (state.x - params.goal[0]).hypot(state.y - params.goal[1]);
    if dist <= params.goal_radius
        && state.vx.abs() <= params.tol_v
        && state.vy.abs() <= params.tol_v
        && state.omega.abs() <= params.tol_omega
        && wrap_angle(state.theta).abs() <= params.tol_theta
    {
        return Verdict::Done(TrialStatus::Success);
    }
    if steps >= params.max_steps {
        return Verdict::Done(TrialStatus::Timeout);
    }
    Verdict::Running
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> WorldParams {
        WorldParams::default()
    }

    #[test]
    fn defaults_validate() {
        params().validate().unwrap();
        let mut p = params();
        p.t_main = 1.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.goal = [0.0, 6.0];
        assert!(p.validate().is_err());
    }

    #[test]
    fn free_fall_single_step() {
        let s = LanderState::new(10.0, 6.0, 0.0, 0.0, 0.0, 0.0);
        let n = step(&s, ControlInput::ZERO, &params()).unwrap();
        assert_eq!(n.vy, -1.62 * 0.02);
        assert!((n.vy + 0.0324).abs() < 1e-15);
        assert!((n.y - 5.999352).abs() < 1e-12);
        assert_eq!((n.x, n.theta, n.vx, n.omega), (10.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn hover_throttle_cancels_gravity() {
        let p = params();
        let s = LanderState::new(10.0, 6.0, 0.0, 0.0, 0.0, 0.0);
        let n = step(&s, ControlInput::new(p.hover_throttle(), 0.0), &p).unwrap();
        assert_eq!(n.vy, 0.0);
        assert_eq!(n.y, 6.0);
    }

    #[test]
    fn step_matches_transcribed_update() {
        // Straight-line transcription of the update equations.
        let (x, y, th, vx, vy, om) = (10.0f64, 6.0f64, 0.3f64, 0.5f64, -0.2f64, 0.1f64);
        let (um, ur) = (0.8f64, -0.5f64);
        let (tm, ts, m, i, arm, g, dt) = (4.0, 0.4, 1.0, 0.25, 0.5, 1.62, 0.02);
        let ax = (tm * um / m) * (-th.sin()) + (ts * ur / m) * th.cos();
        let ay = (tm * um / m) * th.cos() + (ts * ur / m) * th.sin() - g;
        let al = arm * ts * ur / i;
        let vx1 = vx + ax * dt;
        let vy1 = vy + ay * dt;
        let om1 = om + al * dt;
        let expect = [x + vx1 * dt, y + vy1 * dt, th + om1 * dt, vx1, vy1, om1];

        let got = step(
            &LanderState::new(x, y, th, vx, vy, om),
            ControlInput::new(um, ur),
            &params(),
        )
        .unwrap()
        .to_array();
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn step_rejects_bad_values() {
        let p = params();
        let s = LanderState::new(10.0, f64::NAN, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(step(&s, ControlInput::ZERO, &p), Err(Error::NonFinite(_))));
        let s = p.goal_state();
        assert!(step(&s, ControlInput::new(f64::INFINITY, 0.0), &p).is_err());
        assert!(step(&s, ControlInput::new(1.5, 0.0), &p).is_err());
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_input(ControlInput::new(-0.3, 0.5)).unwrap(), ControlInput::new(0.0, 0.5));
        assert_eq!(clamp_input(ControlInput::new(0.5, 1.7)).unwrap(), ControlInput::new(0.5, 1.0));
        assert_eq!(clamp_input(ControlInput::new(0.2, -0.4)).unwrap(), ControlInput::new(0.2, -0.4));
        assert!(clamp_input(ControlInput::new(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn sample_initial_is_deterministic() {
        let p = params();
        assert_eq!(sample_initial(7, &p), sample_initial(7, &p));
        assert_ne!(sample_initial(7, &p), sample_initial(8, &p));
        let s = sample_initial(7, &p);
        assert_eq!(s.theta, 0.0);
        assert!(s.vx.abs() <= 1.0 && s.vy.abs() <= 1.0 && s.omega.abs() <= 0.5);
    }

    #[test]
    fn sample_initial_distribution() {
        let p = params();
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|s| sample_initial(s as u64, &p).x).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mean - 10.0).abs() < 0.2 / (n as f64).sqrt() * 4.0, "mean {mean}");
        assert!((std - 0.2).abs() < 0.02, "std {std}");
    }

    #[test]
    fn zero_perturbation_starts_at_nominal() {
        let mut p = params();
        let noisy = sample_initial(3, &p);
        p.start_noise_std = 0.0;
        let s = sample_initial(3, &p);
        assert_eq!((s.x, s.y, s.theta), (10.0, 10.0, 0.0));
        assert_eq!((s.vx, s.vy, s.omega), (noisy.vx, noisy.vy, noisy.omega));
    }

    #[test]
    fn judge_examples() {
        let p = params();
        assert_eq!(judge(&p.goal_state(), 1, &p), Verdict::Done(TrialStatus::Success));
        let crashed = LanderState::new(10.0, -0.01, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(judge(&crashed, 1, &p), Verdict::Done(TrialStatus::Crash));
        let mut spinning = p.goal_state();
        spinning.omega = 10.0 * p.tol_omega;
        assert_eq!(judge(&spinning, 1, &p), Verdict::Running);
        assert_eq!(judge(&spinning, p.max_steps, &p), Verdict::Done(TrialStatus::Timeout));
        let away = LanderState::new(-0.1, 5.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(judge(&away, 1, &p), Verdict::Done(TrialStatus::OutOfBounds));
        let high = LanderState::new(5.0, 14.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(judge(&high, 1, &p), Verdict::Done(TrialStatus::OutOfBounds));
        // a full turn still counts as upright
        let mut turned = p.goal_state();
        turned.theta = std::f64::consts::TAU + 0.05;
        assert_eq!(judge(&turned, 1, &p), Verdict::Done(TrialStatus::Success));
        // crash outranks timeout and success geometry
        assert_eq!(judge(&crashed, p.max_steps, &p), Verdict::Done(TrialStatus::Crash));
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn free_fall_energy_sanity() {
        let p = params();
        let s0 = LanderState::new(10.0, 13.0, 0.0, 0.3, 0.0, 0.0);
        let mut s = s0;
        for k in 1..=200 {
            s = step(&s, ControlInput::ZERO, &p).unwrap();
            let t = k as f64 * p.dt;
            assert!((s.vy - (s0.vy - p.g * t)).abs() < 1e-12);
            assert_eq!(s.vx, s0.vx);
            assert_eq!(s.theta, 0.0);
        }
    }

    #[test]
    fn long_replay_is_identical() {
        let p = params();
        let run = || {
            let mut s = sample_initial(11, &p);
            let mut out = Vec::with_capacity(1000);
            for k in 0..1000 {
                let u = ControlInput::new(((k as f64) * 0.37).sin().abs(), ((k as f64) * 0.11).cos());
                s = step(&s, u, &p).unwrap();
                out.push(s);
            }
            out
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn mirror_commutes_with_step(
            x in 1.0..19.0f64, y in 1.0..12.0f64, th in -1.0..1.0f64,
            vx in -2.0..2.0f64, vy in -2.0..2.0f64, om in -1.0..1.0f64,
            um in 0.0..1.0f64, ur in -1.0..1.0f64,
        ) {
            let p = params();
            let axis = p.goal[0];
            let s = LanderState::new(x, y, th, vx, vy, om);
            let direct = step(&s, ControlInput::new(um, ur), &p).unwrap().mirrored(axis);
            let via = step(&s.mirrored(axis), ControlInput::new(um, -ur), &p).unwrap();
            for (a, b) in direct.to_array().iter().zip(via.to_array()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn judge_is_total(
            x in -5.0..25.0f64, y in -2.0..15.0f64, th in -7.0..7.0f64,
            v in -1.0..1.0f64, om in -1.0..1.0f64, steps in 0usize..2000,
        ) {
            let p = params();
            let s = LanderState::new(x, y, th, v, v, om);
            let verdict = judge(&s, steps, &p);
            if y <= 0.0 {
                prop_assert_eq!(verdict, Verdict::Done(TrialStatus::Crash));
            } else if x < 0.0 || x > p.l1 || y > p.l2 {
                prop_assert_eq!(verdict, Verdict::Done(TrialStatus::OutOfBounds));
            } else if verdict == Verdict::Running {
                prop_assert!(steps < p.max_steps);
            }
        }
    }
}
