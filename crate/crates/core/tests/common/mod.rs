//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sharedctl::controller::{solve_dare, CostSpec, LqrSolution, DEFAULT_DARE_MAX_ITER, DEFAULT_DARE_TOL};
use sharedctl::koopman::{extract_linear, fit_koopman, AffineLinearModel, BasisSpec, JointSample, DEFAULT_RIDGE};
use sharedctl::lander::{clamp_input, sample_initial, step, ControlInput, WorldParams};
use sharedctl::pilots::{NominalController, Pilot, PilotSpec};
use sharedctl::trial::{run_trial, Paradigm, TrialLog};

/// Unassisted demonstrations by a seeded pilot.
pub fn demos(spec: &PilotSpec, n: u64) -> Vec<TrialLog> {
    let world = WorldParams::default();
    let ctrl = NominalController::new(&world).unwrap();
    (0..n)
        .map(|t| {
            let mut pilot = Pilot::new(spec, ctrl.clone(), t).unwrap();
            run_trial(&world, Paradigm::UserOnly, None, &mut pilot, "p", 1000 + t).unwrap()
        })
        .collect()
}

pub fn fit_logs(logs: &[TrialLog]) -> AffineLinearModel {
    let trajs: Vec<_> = logs.iter().map(TrialLog::joint_samples).collect();
    extract_linear(&fit_koopman(&trajs, &BasisSpec::default(), DEFAULT_RIDGE).unwrap()).unwrap()
}

pub fn solve(model: &AffineLinearModel) -> LqrSolution {
    solve_dare(model, &CostSpec::default(), DEFAULT_DARE_TOL, DEFAULT_DARE_MAX_ITER).unwrap()
}

/// The lander flown for `steps` steps by the expert's feedback law plus a
/// bounded random walk on both inputs. Terminal checks are ignored.
pub fn random_walk_trajectory(seed: u64, steps: usize) -> Vec<JointSample> {
    let world = WorldParams::default();
    let ctrl = NominalController::new(&world).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kick = Normal::new(0.0, 0.05).unwrap();
    let mut walk = [0.0f64; 2];
    let mut s = sample_initial(seed, &world);
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        for w in &mut walk {
            *w = (*w + kick.sample(&mut rng)).clamp(-0.3, 0.3);
        }
        let base = ctrl.command(&s, 1.0);
        let u = clamp_input(ControlInput::new(base.u_main + walk[0], base.u_rot + walk[1])).unwrap();
        out.push(JointSample::new(s, u, t as f64 * world.dt));
        s = step(&s, u, &world).unwrap();
    }
    out
}
