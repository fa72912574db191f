//! Trial execution and the persisted trial log.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controller::{half_plane_filter, optimal_input, CostSpec, LqrSolution};
use crate::error::{Error, Result};
use crate::koopman::JointSample;
use crate::lander::{clamp_input, judge, sample_initial, step, ControlInput, LanderState, TrialOutcome, Verdict, WorldParams};
use crate::pilots::Pilot;

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    UserOnly,
    #[serde(alias = "shared")]
    SharedIndividual,
    SharedGeneral,
    SharedExpert,
}

impl Paradigm {
    pub const ALL: [Paradigm; 4] = [
        Paradigm::UserOnly,
        Paradigm::SharedIndividual,
        Paradigm::SharedGeneral,
        Paradigm::SharedExpert,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::UserOnly => "user_only",
            Paradigm::SharedIndividual => "shared_individual",
            Paradigm::SharedGeneral => "shared_general",
            Paradigm::SharedExpert => "shared_expert",
        }
    }

    pub fn is_shared(self) -> bool {
        self != Paradigm::UserOnly
    }

    pub fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user_only" => Ok(Paradigm::UserOnly),
            "shared" | "shared_individual" => Ok(Paradigm::SharedIndividual),
            "shared_general" => Ok(Paradigm::SharedGeneral),
            "shared_expert" => Ok(Paradigm::SharedExpert),
            other => Err(Error::Config(format!(
                "unknown paradigm '{other}' (expected user_only, shared_individual, shared_general or shared_expert)"
            ))),
        }
    }
}

/// One recorded timestep: the state the inputs were applied at, and the inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogSample {
    pub t: f64,
    pub state: LanderState,
    pub u_user: ControlInput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_opt: Option<ControlInput>,
    pub u_applied: ControlInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialLog {
    pub version: u32,
    pub paradigm: Paradigm,
    pub pilot_id: String,
    pub seed: u64,
    pub dt: f64,
    pub outcome: TrialOutcome,
    pub samples: Vec<LogSample>,
}

impl TrialLog {
    pub fn validate(&self) -> Result<()> {
        if self.version != LOG_VERSION {
            return Err(Error::MalformedLog(format!("unsupported version {}", self.version)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::MalformedLog("dt must be > 0".into()));
        }
        if self.samples.len() != self.outcome.steps {
            return Err(Error::MalformedLog(format!(
                "{} samples but outcome reports {} steps",
                self.samples.len(),
                self.outcome.steps
            )));
        }
        for (k, s) in self.samples.iter().enumerate() {
            let expect = k as f64 * self.dt;
            if (s.t - expect).abs() > 1e-9 * expect.max(1.0) {
                return Err(Error::MalformedLog(format!("sample {k} has t = {}, expected {expect}", s.t)));
            }
            if s.u_opt.is_some() != self.paradigm.is_shared() {
                return Err(Error::MalformedLog(format!(
                    "sample {k}: u_opt must be present iff the paradigm is shared"
                )));
            }
            let finite = s.state.is_finite()
                && s.u_user.is_finite()
                && s.u_applied.is_finite()
                && s.u_opt.map_or(true, |u| u.is_finite());
            if !finite {
                return Err(Error::MalformedLog(format!("sample {k} has a non-finite value")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trial log serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut log: TrialLog = serde_json::from_str(text).map_err(|e| Error::MalformedLog(e.to_string()))?;
        log.outcome.wall_time = log.outcome.steps as f64 * log.dt;
        log.validate()?;
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The trajectory as training snapshots, using the inputs that actually
    /// drove the lander.
    pub fn joint_samples(&self) -> Vec<JointSample> {
        self.samples
            .iter()
            .map(|s| JointSample::new(s.state, s.u_applied, s.t))
            .collect()
    }
}

/// Shared-control policy handed to a trial.
#[derive(Debug, Clone)]
pub struct Assist {
    pub solution: Arc<LqrSolution>,
    pub cost: CostSpec,
}

/// What one call to [`TrialRunner::advance`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub sample: LogSample,
    pub next: LanderState,
    pub verdict: Verdict,
}

/// Steps a single trial, recording every sample. Used both offline and by
/// the live session loop so the two produce identical logs.
#[derive(Debug, Clone)]
pub struct TrialRunner {
    world: WorldParams,
    paradigm: Paradigm,
    assist: Option<Assist>,
    pilot_id: String,
    seed: u64,
    state: LanderState,
    samples: Vec<LogSample>,
    outcome: Option<TrialOutcome>,
}

impl TrialRunner {
    pub fn new(
        world: &WorldParams,
        paradigm: Paradigm,
        assist: Option<Assist>,
        pilot_id: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        if paradigm.is_shared() != assist.is_some() {
            return Err(Error::Config(format!(
                "paradigm {paradigm} {} a model",
                if paradigm.is_shared() { "requires" } else { "does not take" }
            )));
        }
        Ok(Self {
            world: world.clone(),
            paradigm,
            assist,
            pilot_id: pilot_id.into(),
            seed,
            state: sample_initial(seed, world),
            samples: Vec::new(),
            outcome: None,
        })
    }

    pub fn state(&self) -> &LanderState {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[LogSample] {
        &self.samples
    }

    pub fn outcome(&self) -> Option<TrialOutcome> {
        self.outcome
    }

    pub fn paradigm(&self) -> Paradigm {
        self.paradigm
    }

    /// Apply one raw user input. Fails once the trial has ended.
    pub fn advance(&mut self, user: ControlInput) -> Result<StepRecord> {
        if self.outcome.is_some() {
            return Err(Error::Config("trial already finished".into()));
        }
        let clamped = clamp_input(user)?;
        let (u_opt, applied) = match &self.assist {
            Some(assist) => {
                let opt = optimal_input(&assist.solution, &assist.cost, &self.state);
                (Some(opt), half_plane_filter(clamped, opt))
            }
            None => (None, clamped),
        };
        let next = step(&self.state, applied, &self.world)?;
        let sample = LogSample {
            t: self.samples.len() as f64 * self.world.dt,
            state: self.state,
            u_user: user,
            u_opt,
            u_applied: applied,
        };
        self.samples.push(sample);
        self.state = next;
        let verdict = judge(&next, self.samples.len(), &self.world);
        if let Verdict::Done(status) = verdict {
            self.outcome = Some(TrialOutcome {
                status,
                steps: self.samples.len(),
                wall_time: self.samples.len() as f64 * self.world.dt,
            });
        }
        Ok(StepRecord { sample, next, verdict })
    }

    /// Force the trial closed (e.g. on abort); recorded as a timeout.
    pub fn abort(&mut self) {
        if self.outcome.is_none() {
            self.outcome = Some(TrialOutcome {
                status: crate::lander::TrialStatus::Timeout,
                steps: self.samples.len(),
                wall_time: self.samples.len() as f64 * self.world.dt,
            });
        }
    }

    /// Finished log. Panics if the trial is still running.
    pub fn into_log(self) -> TrialLog {
        TrialLog {
            version: LOG_VERSION,
            paradigm: self.paradigm,
            pilot_id: self.pilot_id,
            seed: self.seed,
            dt: self.world.dt,
            outcome: self.outcome.expect("trial finished"),
            samples: self.samples,
        }
    }
}

/// Anything that produces user inputs during a trial.
pub trait InputSource {
    fn next_input(&mut self, state: &LanderState, step: usize) -> ControlInput;
}

impl InputSource for Pilot {
    fn next_input(&mut self, state: &LanderState, _step: usize) -> ControlInput {
        self.pilot_input(state)
    }
}

/// Replays a fixed input sequence, then zeros.
#[derive(Debug, Clone)]
pub struct ScriptedInputs(pub Vec<ControlInput>);

impl InputSource for ScriptedInputs {
    fn next_input(&mut self, _state: &LanderState, step: usize) -> ControlInput {
        self.0.get(step).copied().unwrap_or(ControlInput::ZERO)
    }
}

/// Flies the optimal input directly, with no pilot in the loop.
#[derive(Debug, Clone)]
pub struct Autopilot(pub Assist);

impl InputSource for Autopilot {
    fn next_input(&mut self, state: &LanderState, _step: usize) -> ControlInput {
        optimal_input(&self.0.solution, &self.0.cost, state)
    }
}

/// Run a whole trial offline.
pub fn run_trial(
    world: &WorldParams,
    paradigm: Paradigm,
    assist: Option<Assist>,
    source: &mut dyn InputSource,
    pilot_id: &str,
    seed: u64,
) -> Result<TrialLog> {
    let mut runner = TrialRunner::new(world, paradigm, assist, pilot_id, seed)?;
    while runner.outcome().is_none() {
        let u = source.next_input(runner.state(), runner.steps());
        runner.advance(u)?;
    }
    Ok(runner.into_log())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lander::TrialStatus;

    #[test]
    fn silent_pilot_free_falls_to_crash() {
        let w = WorldParams::default();
        let log = run_trial(&w, Paradigm::UserOnly, None, &mut ScriptedInputs(vec![]), "p", 3).unwrap();
        assert_eq!(log.outcome.status, TrialStatus::Crash);
        assert_eq!(log.samples.len(), log.outcome.steps);
        assert!(log.samples.iter().all(|s| s.u_user == ControlInput::ZERO && s.u_opt.is_none()));
        log.validate().unwrap();
    }

    #[test]
    fn json_round_trip() {
        let w = WorldParams::default();
        let inputs: Vec<_> = (0..50).map(|k| ControlInput::new(0.5, ((k as f64) * 0.3).sin())).collect();
        let log = run_trial(&w, Paradigm::UserOnly, None, &mut ScriptedInputs(inputs), "p", 3).unwrap();
        let back = TrialLog::from_json(&log.to_json()).unwrap();
        assert_eq!(back, log);
        let text = log.to_json();
        assert!(text.starts_with(r#"{"version":1,"paradigm":"user_only","pilot_id":"p","seed":3,"dt":0.02,"outcome":{"status":"#));
        assert!(!text.contains("u_opt"));
        assert!(!text.contains("wall_time"));
    }

    #[test]
    fn malformed_logs_are_rejected() {
        let w = WorldParams::default();
        let log = run_trial(&w, Paradigm::UserOnly, None, &mut ScriptedInputs(vec![]), "p", 3).unwrap();
        let mut bad = log.clone();
        bad.outcome.steps += 1;
        assert!(TrialLog::from_json(&bad.to_json()).is_err());
        let mut bad = log.clone();
        bad.samples[2].t = 7.0;
        assert!(TrialLog::from_json(&bad.to_json()).is_err());
        let mut bad = log.clone();
        bad.paradigm = Paradigm::SharedExpert;
        assert!(TrialLog::from_json(&bad.to_json()).is_err());
        assert!(TrialLog::from_json("{}").is_err());
        let extra = log.to_json().replacen("{\"version\"", "{\"bogus\":1,\"version\"", 1);
        assert!(TrialLog::from_json(&extra).is_err());
    }

    #[test]
    fn paradigm_names() {
        for p in Paradigm::ALL {
            assert_eq!(p.as_str().parse::<Paradigm>().unwrap(), p);
            assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{p}\""));
        }
        assert_eq!("shared".parse::<Paradigm>().unwrap(), Paradigm::SharedIndividual);
        assert!("autopilot".parse::<Paradigm>().is_err());
    }

    #[test]
    fn shared_paradigm_requires_model() {
        let w = WorldParams::default();
        assert!(TrialRunner::new(&w, Paradigm::SharedExpert, None, "p", 0).is_err());
    }

    #[test]
    fn finished_trial_refuses_input() {
        let w = WorldParams::default();
        let mut r = TrialRunner::new(&w, Paradigm::UserOnly, None, "p", 0).unwrap();
        r.abort();
        assert!(r.advance(ControlInput::ZERO).is_err());
        assert_eq!(r.into_log().outcome.steps, 0);
    }
}
