//! One live teaching session: the engine, the road and the gating rules for
//! teacher input. Synchronous; the server drives it from its tick loop.

use serde::{Deserialize, Serialize};

use cba::archive::{SeedSet, SessionRecord, StepRecord};
use cba::engine::{EngineEvent, RecordingTeacher, SessionHistory, TeacherChannel, TimedEvent};
use cba::harness::{evaluate_engine, init_session, ExperimentConfig, IntervalEval};
use cba::world::{action_duration, WorldState};
use cba::{Action, Engine, StateVector};

use crate::wire::{ClientBody, Frame, ServerBody, ThresholdSummary, SPEEDS};

/// Timesteps after an autonomous action completes during which a correction
/// is still accepted.
pub const CORRECTION_GRACE: u64 = 3;

/// Whether a correction polled at engine timestep `now` still belongs to the
/// autonomous action decided at `decided_at` lasting `duration` timesteps.
pub fn correction_window(now: u64, decided_at: u64, duration: u64) -> bool {
    now >= decided_at && now < decided_at + duration + CORRECTION_GRACE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub experiment: ExperimentConfig,
    /// Start from the oracle's non-interactive init session instead of an
    /// empty dataset.
    pub oracle_bootstrap: bool,
    pub fps: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            experiment: ExperimentConfig::default(),
            oracle_bootstrap: true,
            fps: SPEEDS[0],
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum Rejection {
    #[error("no demonstration request is pending")]
    NoPendingRequest,
    #[error("the correction window is closed")]
    CorrectionWindowClosed,
    #[error("this regime does not take corrections")]
    CorrectionsDisabled,
    #[error("an input is already queued for the next tick")]
    InputQueued,
    #[error("unsupported speed {0} fps (use 5 or 2)")]
    BadSpeed(u32),
    #[error("{0}")]
    Invalid(String),
}

/// Teacher input waiting for the engine's next poll.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Queued {
    Demonstration(Action),
    Correction(Action),
}

struct Inbox(Option<Action>);

impl TeacherChannel for Inbox {
    fn poll(&mut self) -> Option<Action> {
        self.0.take()
    }
}

pub struct Session {
    pub id: String,
    config: SessionConfig,
    engine: Engine,
    world: WorldState,
    record: SessionRecord,
    history: SessionHistory,
    queued: Option<Queued>,
    /// Sensed state the engine is waiting on while a request is pending;
    /// the world is frozen, so the resume tick reuses it.
    held: Option<StateVector>,
    last_sensed: StateVector,
    /// Engine timestep of the last autonomous decision and its duration.
    last_autonomous: Option<(u64, u64)>,
    paused: bool,
    fps: u32,
    collision: bool,
}

impl Session {
    pub fn start(id: impl Into<String>, config: SessionConfig) -> cba::Result<Session> {
        let exp = &config.experiment;
        exp.validate()?;
        if !SPEEDS.contains(&config.fps) {
            return Err(cba::Error::Config(format!("fps must be 5 or 2, got {}", config.fps)));
        }
        let mut world = WorldState::new(&exp.training_pattern(), exp.training_sensor());
        let bootstrap = if config.oracle_bootstrap {
            init_session(exp, &mut world)
        } else {
            Vec::new()
        };
        let mut engine = Engine::new(exp.engine_config());
        engine.bootstrap(&bootstrap)?;
        let seeds = SeedSet { ..exp.seeds };
        let mut record = SessionRecord::new(exp.engine_config(), seeds);
        record.meta = serde_json::to_value(&config)?;
        record.bootstrap = bootstrap;
        let last_sensed = world.sense_noiseless();
        Ok(Session {
            id: id.into(),
            fps: config.fps,
            config,
            engine,
            world,
            record,
            history: SessionHistory::default(),
            queued: None,
            held: None,
            last_sensed,
            last_autonomous: None,
            paused: false,
            collision: false,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn pending_request(&self) -> bool {
        self.engine.state().pending_request
    }

    pub fn history(&self) -> &SessionHistory {
        &self.history
    }

    /// Wall-clock time between ticks. Simulated time per tick never changes.
    pub fn tick_interval(&self) -> std::time::Duration {
        std::time::Duration::from_millis(1000 / self.fps as u64)
    }

    /// Whether a correction sent now would be accepted: during the current
    /// autonomous action or within the grace period after it.
    pub fn correction_window_open(&self) -> bool {
        let st = self.engine.state();
        if !st.mode.accepts_corrections() || !st.autonomous_action_flag {
            return false;
        }
        // the correction is consumed at the next tick, engine timestep `now`
        self.last_autonomous
            .is_some_and(|(t, d)| correction_window(st.timestep, t, d))
    }

    /// Applies the gating rules to one client input. Accepted inputs that
    /// feed the engine are queued for the next tick.
    pub fn handle(&mut self, body: &ClientBody) -> Result<Vec<ServerBody>, Rejection> {
        match body {
            ClientBody::Demonstrate { action } => {
                if !self.pending_request() {
                    return Err(Rejection::NoPendingRequest);
                }
                if self.queued.is_some() {
                    return Err(Rejection::InputQueued);
                }
                self.queued = Some(Queued::Demonstration(*action));
                Ok(Vec::new())
            }
            ClientBody::Correct { action } => {
                if !self.engine.state().mode.accepts_corrections() {
                    return Err(Rejection::CorrectionsDisabled);
                }
                if !self.correction_window_open() {
                    return Err(Rejection::CorrectionWindowClosed);
                }
                if self.queued.is_some() {
                    return Err(Rejection::InputQueued);
                }
                self.queued = Some(Queued::Correction(*action));
                Ok(Vec::new())
            }
            ClientBody::SetSpeed { fps } => {
                if !SPEEDS.contains(fps) {
                    return Err(Rejection::BadSpeed(*fps));
                }
                self.fps = *fps;
                Ok(vec![self.frame_body()])
            }
            ClientBody::PauseToggle => {
                self.paused = !self.paused;
                Ok(vec![self.frame_body()])
            }
            ClientBody::RequestEval => {
                let e = self.evaluate().ok_or_else(|| Rejection::Invalid("no model to evaluate yet".into()))?;
                self.record.evaluations.push(cba::archive::EvaluationRecord {
                    demonstrations: e.demonstrations,
                    report: e.report.clone(),
                });
                Ok(vec![ServerBody::EvalResult {
                    demonstrations: e.demonstrations,
                    report: e.report,
                }])
            }
            ClientBody::StartSession { .. } | ClientBody::SaveSession => Err(Rejection::Invalid(format!(
                "`{}` is handled by the server, not the session",
                body.kind()
            ))),
        }
    }

    pub fn evaluate(&self) -> Option<IntervalEval> {
        evaluate_engine(&self.config.experiment, &self.engine)
    }

    /// Whether the next call to [`Session::tick`] would advance anything.
    pub fn ready(&self) -> bool {
        !self.paused && !(self.pending_request() && self.queued.is_none())
    }

    /// One timestep. Does nothing while paused or while a request waits for
    /// the teacher; otherwise returns the engine's events and a frame.
    pub fn tick(&mut self) -> cba::Result<Vec<ServerBody>> {
        if !self.ready() {
            return Ok(Vec::new());
        }
        let s = match self.held.take() {
            Some(s) => s,
            None => self.world.sense(),
        };
        self.last_sensed = s;
        let mut inbox = Inbox(self.queued.take().map(|q| match q {
            Queued::Demonstration(a) | Queued::Correction(a) => a,
        }));
        let mut teacher = RecordingTeacher::new(&mut inbox);
        let out = self.engine.step(s, &mut teacher)?;
        let polls = teacher.polls;
        let mut requested = false;
        let mut corrected = false;
        for e in &out.events {
            match e.event {
                EngineEvent::DemonstrationRequested { .. } => requested = true,
                EngineEvent::CorrectionReceived { .. } => corrected = true,
                EngineEvent::AutonomousExecuted { action, .. } => {
                    self.last_autonomous = Some((e.timestep, action_duration(action) as u64));
                }
                _ => {}
            }
        }
        if out.paused {
            self.held = Some(s);
            self.collision = false;
        } else {
            self.world.step(out.directive);
            self.collision = self.world.collision();
        }
        self.history.record(requested, corrected, self.collision);
        self.record.steps.push(StepRecord {
            state: s,
            polls,
            events: out.events.clone(),
            collided: self.collision,
        });
        let mut msgs: Vec<ServerBody> = out.events.into_iter().map(|event| ServerBody::Event { event }).collect();
        msgs.push(self.frame_body());
        Ok(msgs)
    }

    pub fn frame(&self) -> Frame {
        let st = self.engine.state();
        Frame {
            timestep: self.world.timestep,
            agent: self.world.agent,
            lateral: self.world.agent.lateral_position(),
            cars: self.world.cars.clone(),
            sensed: self.last_sensed,
            classification: st.last_classification,
            thresholds: ThresholdSummary::from(&st.thresholds),
            pending_request: st.pending_request,
            paused: self.paused,
            fps: self.fps,
            correction_window: self.correction_window_open(),
            dataset_size: st.dataset.len(),
            collision: self.collision,
        }
    }

    fn frame_body(&self) -> ServerBody {
        ServerBody::Frame(Box::new(self.frame()))
    }

    /// Appends a wire message to the session transcript.
    pub fn log_wire(&mut self, message: serde_json::Value) {
        self.record.transcript.push(message);
    }

    /// The archive as it stands, with the current model as its snapshot.
    pub fn archive(&self) -> SessionRecord {
        let mut r = self.record.clone();
        r.capture(&self.engine);
        r
    }

    /// Every event emitted so far, in order.
    pub fn events(&self) -> impl Iterator<Item = &TimedEvent> {
        self.record.steps.iter().flat_map(|s| s.events.iter())
    }
}
