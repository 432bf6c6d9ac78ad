//! Message schema spoken over the websocket. Every message is one JSON text
//! frame: an envelope with the schema version, the session id and a sequence
//! number, plus a body tagged by `"type"`.
//!
//! ```text
//! {"v":1,"session":"s-1","seq":7,"type":"demonstrate","action":"left"}
//! ```
//!
//! Server sequence numbers are strictly increasing per connection. Client
//! sequence numbers must be strictly increasing too; a message that breaks
//! that is rejected.

use serde::{Deserialize, Serialize};

use cba::engine::TimedEvent;
use cba::gate::{ThresholdMode, ThresholdSet};
use cba::world::{AgentPose, Car, EvalReport};
use cba::{Action, Classification, StateVector};

use crate::session::SessionConfig;

pub const WIRE_VERSION: u32 = 1;

/// Allowed tick rates: normal speed and the slowed rate used while correcting.
pub const SPEEDS: [u32; 2] = [5, 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<B> {
    pub v: u32,
    pub session: String,
    pub seq: u64,
    #[serde(flatten)]
    pub body: B,
}

impl<B> Envelope<B> {
    pub fn new(session: impl Into<String>, seq: u64, body: B) -> Self {
        Envelope {
            v: WIRE_VERSION,
            session: session.into(),
            seq,
            body,
        }
    }
}

pub type ServerMessage = Envelope<ServerBody>;
pub type ClientMessage = Envelope<ClientBody>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Drives the session: the only connection whose inputs are applied.
    Teacher,
    Observer,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerBody {
    Hello { role: Role },
    Frame(Box<Frame>),
    Event { event: TimedEvent },
    EvalResult { demonstrations: usize, report: EvalReport },
    SessionStarted { config: Box<SessionConfig> },
    Saved { path: String },
    Error { message: String, in_reply_to: Option<u64> },
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientBody {
    Demonstrate { action: Action },
    Correct { action: Action },
    SetSpeed { fps: u32 },
    PauseToggle,
    StartSession { config: Box<SessionConfig> },
    RequestEval,
    SaveSession,
}

impl ClientBody {
    pub fn kind(&self) -> &'static str {
        match self {
            ClientBody::Demonstrate { .. } => "demonstrate",
            ClientBody::Correct { .. } => "correct",
            ClientBody::SetSpeed { .. } => "set_speed",
            ClientBody::PauseToggle => "pause_toggle",
            ClientBody::StartSession { .. } => "start_session",
            ClientBody::RequestEval => "request_eval",
            ClientBody::SaveSession => "save_session",
        }
    }
}

/// One rendered tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub timestep: u64,
    pub agent: AgentPose,
    /// Lateral position in lanes, fractional during a lane change.
    pub lateral: f64,
    pub cars: Vec<Car>,
    pub sensed: StateVector,
    pub classification: Option<Classification>,
    pub thresholds: ThresholdSummary,
    pub pending_request: bool,
    pub paused: bool,
    pub fps: u32,
    pub correction_window: bool,
    pub dataset_size: usize,
    pub collision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub mode: ThresholdMode,
    #[serde(with = "cba::serde_f64")]
    pub tau_dist: f64,
    pub boundaries: usize,
    /// Smallest and largest per-boundary confidence thresholds.
    pub tau_conf_range: Option<(f64, f64)>,
    /// No model yet: everything is requested.
    pub untrained: bool,
}

impl From<&ThresholdSet> for ThresholdSummary {
    fn from(t: &ThresholdSet) -> Self {
        let range = t
            .tau_conf_by_boundary
            .values()
            .fold(None, |acc: Option<(f64, f64)>, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            });
        ThresholdSummary {
            mode: t.mode,
            tau_dist: t.tau_dist,
            boundaries: t.tau_conf_by_boundary.len(),
            tau_conf_range: range,
            untrained: t.sentinel_infinite,
        }
    }
}

pub fn encode<B: Serialize>(m: &Envelope<B>) -> String {
    serde_json::to_string(m).expect("wire messages serialize")
}

pub fn decode_client(text: &str) -> Result<ClientMessage, String> {
    let m: ClientMessage = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
    if m.v != WIRE_VERSION {
        return Err(format!("unsupported wire version {} (expected {WIRE_VERSION})", m.v));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_round_trip() {
        let bodies = vec![
            ClientBody::Demonstrate { action: Action::Left },
            ClientBody::Correct { action: Action::Forward },
            ClientBody::SetSpeed { fps: 2 },
            ClientBody::PauseToggle,
            ClientBody::StartSession {
                config: Box::default(),
            },
            ClientBody::RequestEval,
            ClientBody::SaveSession,
        ];
        for (i, b) in bodies.into_iter().enumerate() {
            let m = Envelope::new("s-1", i as u64, b);
            let text = encode(&m);
            assert_eq!(decode_client(&text).unwrap(), m);
        }
    }

    #[test]
    fn documented_layout() {
        let m = Envelope::new("s-1", 7, ClientBody::Demonstrate { action: Action::Left });
        let v: serde_json::Value = serde_json::from_str(&encode(&m)).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"v":1,"session":"s-1","seq":7,"type":"demonstrate","action":"left"})
        );
    }

    #[test]
    fn rejects_garbage_and_other_versions() {
        assert!(decode_client("not json").is_err());
        assert!(decode_client(r#"{"v":1,"session":"","seq":0,"type":"fly"}"#).is_err());
        assert!(decode_client(r#"{"v":2,"session":"","seq":0,"type":"pause_toggle"}"#).is_err());
        assert!(decode_client(r#"{"v":1,"session":"","seq":0,"type":"pause_toggle"}"#).is_ok());
    }

    #[test]
    fn summary_of_untrained_thresholds() {
        let s = ThresholdSummary::from(&ThresholdSet::initial(ThresholdMode::MultipleAdjustable));
        assert!(s.untrained);
        assert_eq!(s.boundaries, 0);
        assert_eq!(s.tau_conf_range, None);
        let text = serde_json::to_string(&s).unwrap();
        let back: ThresholdSummary = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
