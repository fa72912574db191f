//! JSON frames exchanged over the session socket.

use serde::{Deserialize, Serialize};
use sharedctl::lander::{ControlInput, LanderState, TrialOutcome};
use sharedctl::trial::Paradigm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMsg {
    Hello {
        name: String,
    },
    Start {
        paradigm: Paradigm,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Input {
        seq: u64,
        u_main: f64,
        u_rot: f64,
    },
    Abort,
    Train {
        session_ids: Vec<String>,
    },
}

const CLIENT_TYPES: [&str; 5] = ["hello", "start", "input", "abort", "train"];

impl ClientMsg {
    /// Parse one text frame, with a readable reason on failure.
    pub fn parse(text: &str) -> Result<Self, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
        match value.get("type").and_then(|t| t.as_str()) {
            None => return Err("malformed message: missing \"type\"".into()),
            Some(t) if !CLIENT_TYPES.contains(&t) => return Err(format!("unknown message type '{t}'")),
            Some(_) => {}
        }
        let msg: Self = serde_json::from_value(value).map_err(|e| format!("malformed message: {e}"))?;
        if let ClientMsg::Input { u_main, u_rot, .. } = msg {
            if !(u_main.is_finite() && u_rot.is_finite()) {
                return Err("malformed message: input must be finite".into());
            }
        }
        Ok(msg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub t: f64,
    pub state: LanderState,
    pub u_user: ControlInput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_opt: Option<ControlInput>,
    pub u_applied: ControlInput,
    pub agreement_so_far: f64,
    /// "running" or the final trial status.
    pub status: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndMetrics {
    pub time: f64,
    pub path_length: f64,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    /// Sent once per connection so the client can name its session later.
    Session { session_id: String },
    State(StateFrame),
    TrialEnd { outcome: TrialOutcome, metrics: EndMetrics },
    ModelReady { model_id: String },
    Error { message: String },
}

impl ServerMsg {
    pub fn error(message: impl Into<String>) -> Self {
        ServerMsg::Error { message: message.into() }
    }

    /// State frames may be dropped under backpressure; nothing else may.
    pub fn is_droppable(&self) -> bool {
        matches!(self, ServerMsg::State(_))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server frames serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_client_type() {
        let cases = [
            (r#"{"type":"hello","name":"ana"}"#, ClientMsg::Hello { name: "ana".into() }),
            (
                r#"{"type":"start","paradigm":"shared","model_id":"m1","seed":4}"#,
                ClientMsg::Start { paradigm: Paradigm::SharedIndividual, model_id: Some("m1".into()), seed: Some(4) },
            ),
            (
                r#"{"type":"start","paradigm":"user_only"}"#,
                ClientMsg::Start { paradigm: Paradigm::UserOnly, model_id: None, seed: None },
            ),
            (r#"{"type":"input","seq":7,"u_main":0.5,"u_rot":-1}"#, ClientMsg::Input { seq: 7, u_main: 0.5, u_rot: -1.0 }),
            (r#"{"type":"abort"}"#, ClientMsg::Abort),
            (r#"{"type":"train","session_ids":["a","b"]}"#, ClientMsg::Train { session_ids: vec!["a".into(), "b".into()] }),
        ];
        for (text, want) in cases {
            assert_eq!(ClientMsg::parse(text).unwrap(), want, "{text}");
        }
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(ClientMsg::parse(r#"{"type":"fly"}"#).unwrap_err().contains("unknown message type 'fly'"));
        assert!(ClientMsg::parse("not json").is_err());
        assert!(ClientMsg::parse(r#"{"name":"x"}"#).is_err());
        assert!(ClientMsg::parse(r#"{"type":"input","seq":1,"u_main":0.5}"#).is_err());
        assert!(ClientMsg::parse(r#"{"type":"start","paradigm":"autopilot"}"#).is_err());
        assert!(ClientMsg::parse(r#"{"type":"hello","name":"x","extra":1}"#).is_err());
        assert!(ClientMsg::parse(r#"{"type":"input","seq":1,"u_main":1e999,"u_rot":0}"#).is_err());
    }

    #[test]
    fn state_frame_shape() {
        let frame = ServerMsg::State(StateFrame {
            t: 0.02,
            state: LanderState::new(1.0, 2.0, 0.0, 0.0, 0.0, 0.0),
            u_user: ControlInput::new(0.5, 0.0),
            u_opt: None,
            u_applied: ControlInput::new(0.5, 0.0),
            agreement_so_far: 1.0,
            status: "running".into(),
        });
        let v: serde_json::Value = serde_json::from_str(&frame.to_json()).unwrap();
        assert_eq!(v["type"], "state");
        assert_eq!(v["state"].as_array().unwrap().len(), 6);
        assert_eq!(v["u_user"], serde_json::json!([0.5, 0.0]));
        assert!(v.get("u_opt").is_none());
        assert!(frame.is_droppable());
        assert!(!ServerMsg::error("x").is_droppable());
    }
}
