//! One WebSocket connection: a reader task, a writer task and the session
//! loop that owns the trial.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::ws::{Message, WebSocket};
use futures_util::{SinkExt, StreamExt};
use sharedctl::experiment::load_log_dir;
use sharedctl::koopman::{fit_koopman, BasisSpec, DEFAULT_RIDGE};
use sharedctl::lander::{ControlInput, Verdict};
use sharedctl::metrics::trial_metrics;
use sharedctl::seed::derive_seed;
use sharedctl::trial::{Paradigm, TrialRunner};
use tokio::sync::mpsc;
use tokio::time::MissedTickBehavior;

use crate::mailbox::Mailbox;
use crate::outbox::Outbox;
use crate::protocol::{ClientMsg, EndMetrics, ServerMsg, StateFrame};
use crate::AppState;

pub(crate) async fn run(socket: WebSocket, app: Arc<AppState>) {
    let (mut sink, mut stream) = socket.split();
    let outbox = Arc::new(Outbox::new(app.cfg.frame_queue));
    let mailbox = Arc::new(Mailbox::default());
    let (tx, mut rx) = mpsc::unbounded_channel::<ClientMsg>();
    let lockstep = app.cfg.lockstep;

    let writer = {
        let outbox = outbox.clone();
        tokio::spawn(async move {
            while let Some(batch) = outbox.next_batch().await {
                for msg in batch {
                    if sink.send(Message::Text(msg.to_json().into())).await.is_err() {
                        return;
                    }
                }
            }
            let _ = sink.close().await;
        })
    };

    let reader = {
        let outbox = outbox.clone();
        let mailbox = mailbox.clone();
        tokio::spawn(async move {
            while let Some(Ok(frame)) = stream.next().await {
                match frame {
                    Message::Text(text) => match ClientMsg::parse(&text) {
                        Ok(ClientMsg::Input { seq, u_main, u_rot }) if !lockstep => {
                            mailbox.put(seq, ControlInput::new(u_main, u_rot), Instant::now());
                        }
                        Ok(msg) => {
                            if tx.send(msg).is_err() {
                                break;
                            }
                        }
                        Err(e) => outbox.push(ServerMsg::error(e)),
                    },
                    Message::Binary(_) => outbox.push(ServerMsg::error("malformed message: binary frames are not accepted")),
                    Message::Close(_) => break,
                    _ => {}
                }
            }
        })
    };

    let (number, session_id) = app.new_session_id();
    outbox.push(ServerMsg::Session { session_id: session_id.clone() });
    let mut session = Session {
        app: app.clone(),
        outbox: outbox.clone(),
        number,
        dir: app.cfg.logs_dir.join(&session_id),
        pilot_id: "anonymous".into(),
        runner: None,
        trial_index: 0,
        agree: 0,
    };

    let mut ticker = tokio::time::interval(app.cfg.tick);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Burst);
    loop {
        let running = session.runner.is_some();
        tokio::select! {
            msg = rx.recv() => match msg {
                None => break,
                Some(ClientMsg::Start { paradigm, model_id, seed }) => {
                    if session.start(paradigm, model_id, seed) {
                        mailbox.clear();
                        ticker.reset();
                    }
                }
                Some(msg) => session.handle(msg),
            },
            _ = ticker.tick(), if running && !lockstep => {
                session.tick(mailbox.read(Instant::now(), app.cfg.staleness));
            }
        }
    }

    // client gone mid-trial: keep what was flown
    if let Some(runner) = session.runner.as_mut() {
        runner.abort();
        session.finish();
    }
    outbox.close();
    let _ = writer.await;
    reader.abort();
}

struct Session {
    app: Arc<AppState>,
    outbox: Arc<Outbox>,
    number: u64,
    dir: PathBuf,
    pilot_id: String,
    runner: Option<TrialRunner>,
    trial_index: usize,
    /// Input dimensions so far where user and optimal inputs agree in sign.
    agree: usize,
}

impl Session {
    fn error(&self, message: impl Into<String>) {
        self.outbox.push(ServerMsg::error(message));
    }

    fn handle(&mut self, msg: ClientMsg) {
        match msg {
            ClientMsg::Hello { name } => {
                let name = name.trim();
                self.pilot_id = if name.is_empty() { "anonymous".into() } else { name.to_owned() };
            }
            ClientMsg::Input { u_main, u_rot, .. } => {
                // lockstep: one input, one step; inputs between trials are ignored
                if self.runner.is_some() {
                    self.tick(ControlInput::new(u_main, u_rot));
                }
            }
            ClientMsg::Abort => match self.runner.as_mut() {
                Some(runner) => {
                    runner.abort();
                    self.finish();
                }
                None => self.error("no trial running"),
            },
            ClientMsg::Train { session_ids } => self.train(session_ids),
            ClientMsg::Start { .. } => unreachable!("start is handled by the session loop"),
        }
    }

    /// Returns whether a trial was started.
    fn start(&mut self, paradigm: Paradigm, model_id: Option<String>, seed: Option<u64>) -> bool {
        if self.runner.is_some() {
            self.error("a trial is already running");
            return false;
        }
        let assist = if paradigm.is_shared() {
            let Some(id) = model_id else {
                self.error(format!("paradigm {paradigm} requires a model_id"));
                return false;
            };
            let Some(record) = self.app.models.get(&id) else {
                self.error(format!("unknown model '{id}'"));
                return false;
            };
            match &record.assist {
                Ok(a) => Some(a.clone()),
                Err(reason) => {
                    self.error(reason.clone());
                    return false;
                }
            }
        } else {
            None
        };
        let seed = seed.unwrap_or_else(|| derive_seed(self.number, &[self.trial_index as u64]));
        match TrialRunner::new(&self.app.cfg.world, paradigm, assist, self.pilot_id.clone(), seed) {
            Ok(runner) => {
                self.runner = Some(runner);
                self.agree = 0;
                true
            }
            Err(e) => {
                self.error(e.to_string());
                false
            }
        }
    }

    fn tick(&mut self, input: ControlInput) {
        let Some(runner) = self.runner.as_mut() else { return };
        let rec = match runner.advance(input) {
            Ok(rec) => rec,
            Err(e) => {
                // only a simulator fault lands here; close the trial
                runner.abort();
                self.error(format!("simulation error: {e}"));
                self.finish();
                return;
            }
        };
        let shared = runner.paradigm().is_shared();
        let steps = runner.steps();
        if let Some(opt) = rec.sample.u_opt {
            let u = rec.sample.u_user;
            self.agree += usize::from(u.u_main * opt.u_main >= 0.0) + usize::from(u.u_rot * opt.u_rot >= 0.0);
        }
        let agreement_so_far = if shared { self.agree as f64 / (2 * steps) as f64 } else { 1.0 };
        let status = match rec.verdict {
            Verdict::Running => "running",
            Verdict::Done(s) => s.as_str(),
        };
        self.outbox.push(ServerMsg::State(StateFrame {
            t: rec.sample.t,
            state: rec.sample.state,
            u_user: rec.sample.u_user,
            u_opt: rec.sample.u_opt,
            u_applied: rec.sample.u_applied,
            agreement_so_far,
            status: status.to_owned(),
        }));
        if matches!(rec.verdict, Verdict::Done(_)) {
            self.finish();
        }
    }

    /// Save the finished trial and report it.
    fn finish(&mut self) {
        let Some(runner) = self.runner.take() else { return };
        let log = runner.into_log();
        let path = self.dir.join(format!("trial_{:02}.json", self.trial_index));
        self.trial_index += 1;
        if let Err(e) = log.save(&path) {
            self.error(format!("could not save trial log: {e}"));
        }
        let metrics = match trial_metrics(&log, &self.app.cfg.cost) {
            Ok(m) => EndMetrics { time: m.time_s, path_length: m.path_length_m, total_cost: m.total_cost },
            Err(e) => {
                self.error(format!("could not score trial: {e}"));
                EndMetrics { time: log.outcome.steps as f64 * log.dt, path_length: 0.0, total_cost: 0.0 }
            }
        };
        self.outbox.push(ServerMsg::TrialEnd { outcome: log.outcome, metrics });
    }

    /// Fit a model from recorded sessions off the session loop.
    fn train(&self, session_ids: Vec<String>) {
        let app = self.app.clone();
        let outbox = self.outbox.clone();
        tokio::spawn(async move {
            let result = tokio::task::spawn_blocking(move || fit_sessions(&app, &session_ids)).await;
            outbox.push(match result {
                Ok(Ok(model_id)) => ServerMsg::ModelReady { model_id },
                Ok(Err(e)) => ServerMsg::error(e),
                Err(e) => ServerMsg::error(format!("training failed: {e}")),
            });
        });
    }
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn fit_sessions(app: &AppState, session_ids: &[String]) -> Result<String, String> {
    if session_ids.is_empty() {
        return Err("train needs at least one session id".into());
    }
    let mut trajectories = Vec::new();
    for id in session_ids {
        let dir = app.cfg.logs_dir.join(id);
        if !valid_session_id(id) || !dir.is_dir() {
            return Err(format!("unknown session '{id}'"));
        }
        let logs = load_log_dir(&dir).map_err(|e| e.to_string())?;
        trajectories.extend(logs.iter().map(|l| l.joint_samples()));
    }
    let model = fit_koopman(&trajectories, &BasisSpec::default(), DEFAULT_RIDGE).map_err(|e| e.to_string())?;
    let record = app.models.insert(&model).map_err(|e| e.to_string())?;
    Ok(record.model_id.clone())
}
