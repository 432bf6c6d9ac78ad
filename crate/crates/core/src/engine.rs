//! The per-timestep learning loop: confident execution with corrective
//! demonstrations.
//!
//! Each call to [`Engine::step`] consumes one freshly sensed state. When no
//! action is running the engine classifies the state, measures its distance
//! to the demonstrations and either acts on its own or raises a demonstration
//! request. A pending request is re-evaluated every step, so a teacher answer
//! binds to the most recent state and a change in the surroundings can resume
//! autonomy without any demonstration. While an autonomously chosen action is
//! the latest decision, the teacher may send a correction; it is stored
//! against the state that led to that decision.

use serde::{Deserialize, Serialize};
use std::sync::mpsc::Receiver;

use crate::error::Result;
use crate::gate::{
    compute_confidence_thresholds, compute_distance_threshold, decide, nearest_neighbor_distance,
    GateConfig, GateDecision, ThresholdMode, ThresholdSet,
};
use crate::policy::{BoundaryId, Classification, GmmPolicy, ModelConfig};
use crate::seed::derive_seed;
use crate::state::{Action, DemoSource, StateVector, TrainingPoint};
use crate::world::action_duration;

/// Demonstration selection regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Confident execution with one fixed confidence threshold.
    #[serde(rename = "ce_s")]
    CeSingle,
    /// Confident execution with learned per-boundary thresholds.
    #[serde(rename = "ce_m")]
    CeMultiple,
    /// Corrections only; the agent always acts on its own.
    #[serde(rename = "cd_only")]
    CdOnly,
    /// Confident execution (per-boundary thresholds) plus corrections.
    #[serde(rename = "cba")]
    Cba,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::CeSingle, Mode::CeMultiple, Mode::CdOnly, Mode::Cba];

    pub fn accepts_corrections(self) -> bool {
        matches!(self, Mode::CdOnly | Mode::Cba)
    }

    pub fn threshold_mode(self) -> ThresholdMode {
        match self {
            Mode::CeSingle => ThresholdMode::SingleFixed,
            Mode::CeMultiple | Mode::Cba => ThresholdMode::MultipleAdjustable,
            Mode::CdOnly => ThresholdMode::AllPass,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::CeSingle => "ce_s",
            Mode::CeMultiple => "ce_m",
            Mode::CdOnly => "cd_only",
            Mode::Cba => "cba",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| crate::error::Error::Config(format!("unknown regime `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub mode: Mode,
    /// Base model seed; each retrain derives its own.
    pub model: ModelConfig,
    pub gate: GateConfig,
    /// New non-corrective demonstrations between retrains.
    pub retrain_batch: usize,
}

impl EngineConfig {
    pub fn new(mode: Mode) -> Self {
        EngineConfig {
            mode,
            model: ModelConfig::default(),
            gate: GateConfig::default(),
            retrain_batch: 10,
        }
    }
}

/// The teacher side of the loop. `poll` must never block.
pub trait TeacherChannel {
    fn poll(&mut self) -> Option<Action>;
    fn notify_request(&mut self, _state: &StateVector) {}
    fn notify_autonomous(&mut self, _action: Action, _state: &StateVector) {}
}

/// Replays a fixed sequence of poll answers; `None` once exhausted.
#[derive(Debug, Clone, Default)]
pub struct ScriptedTeacher {
    answers: std::collections::VecDeque<Option<Action>>,
}

impl ScriptedTeacher {
    pub fn new(answers: impl IntoIterator<Item = Option<Action>>) -> Self {
        ScriptedTeacher {
            answers: answers.into_iter().collect(),
        }
    }

    pub fn push(&mut self, a: Option<Action>) {
        self.answers.push_back(a);
    }
}

impl TeacherChannel for ScriptedTeacher {
    fn poll(&mut self) -> Option<Action> {
        self.answers.pop_front().flatten()
    }
}

/// Single-producer queue fed from another thread (e.g. a UI bridge).
pub struct QueueTeacher {
    rx: Receiver<Action>,
}

impl QueueTeacher {
    pub fn new(rx: Receiver<Action>) -> Self {
        QueueTeacher { rx }
    }
}

impl TeacherChannel for QueueTeacher {
    fn poll(&mut self) -> Option<Action> {
        self.rx.try_recv().ok()
    }
}

/// Wraps a teacher and records every poll answer, for session replay.
pub struct RecordingTeacher<'a, T: TeacherChannel + ?Sized> {
    pub inner: &'a mut T,
    pub polls: Vec<Option<Action>>,
}

impl<'a, T: TeacherChannel + ?Sized> RecordingTeacher<'a, T> {
    pub fn new(inner: &'a mut T) -> Self {
        RecordingTeacher {
            inner,
            polls: Vec::new(),
        }
    }
}

impl<T: TeacherChannel + ?Sized> TeacherChannel for RecordingTeacher<'_, T> {
    fn poll(&mut self) -> Option<Action> {
        let a = self.inner.poll();
        self.polls.push(a);
        a
    }

    fn notify_request(&mut self, state: &StateVector) {
        self.inner.notify_request(state);
    }

    fn notify_autonomous(&mut self, action: Action, state: &StateVector) {
        self.inner.notify_autonomous(action, state);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionInProgress {
    pub action: Action,
    /// Steps still to run after the current one.
    pub remaining: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EngineEvent {
    DemonstrationRequested {
        state: StateVector,
        /// The model's guess, if a model exists.
        classification: Option<Classification>,
        #[serde(with = "crate::serde_f64")]
        distance: f64,
    },
    DemonstrationReceived {
        state: StateVector,
        action: Action,
    },
    AutonomousExecuted {
        state: StateVector,
        action: Action,
        confidence: f64,
        boundary_id: BoundaryId,
        #[serde(with = "crate::serde_f64")]
        distance: f64,
    },
    CorrectionReceived {
        state: StateVector,
        action: Action,
    },
    Retrained {
        dataset_size: usize,
        retrain_index: u64,
        component_count: usize,
        thresholds: ThresholdSet,
    },
    ResumedByEnvironment {
        state: StateVector,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub timestep: u64,
    #[serde(flatten)]
    pub event: EngineEvent,
}

/// Everything the engine knows.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub dataset: Vec<TrainingPoint>,
    pub model: Option<GmmPolicy>,
    pub thresholds: ThresholdSet,
    pub pending_request: bool,
    /// State behind the latest autonomous decision.
    pub correction_anchor: Option<StateVector>,
    pub action_in_progress: Option<ActionInProgress>,
    pub demos_since_retrain: usize,
    pub mode: Mode,
    /// Corrections are polled while set.
    pub autonomous_action_flag: bool,
    pub retrain_count: u64,
    pub timestep: u64,
    pub last_classification: Option<Classification>,
}

impl LearnerState {
    pub fn new(mode: Mode) -> Self {
        LearnerState {
            dataset: Vec::new(),
            model: None,
            thresholds: ThresholdSet::initial(mode.threshold_mode()),
            pending_request: false,
            correction_anchor: None,
            action_in_progress: None,
            demos_since_retrain: 0,
            mode,
            autonomous_action_flag: false,
            retrain_count: 0,
            timestep: 0,
            last_classification: None,
        }
    }
}

/// Result of one engine step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    /// Action the world should start this step, if any.
    pub directive: Option<Action>,
    /// True while waiting on the teacher: the world should not advance.
    pub paused: bool,
    pub events: Vec<TimedEvent>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    state: LearnerState,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        Engine {
            state: LearnerState::new(config.mode),
            config,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn state(&self) -> &LearnerState {
        &self.state
    }

    pub fn model(&self) -> Option<&GmmPolicy> {
        self.state.model.as_ref()
    }

    /// Switches regime, keeping the data and recomputing thresholds.
    pub fn set_mode(&mut self, mode: Mode) -> Result<()> {
        self.config.mode = mode;
        self.state.mode = mode;
        if self.state.model.is_some() {
            self.state.thresholds = self.thresholds_for(self.state.retrain_count)?;
        } else {
            self.state.thresholds = ThresholdSet::initial(mode.threshold_mode());
        }
        Ok(())
    }

    pub fn set_fixed_threshold(&mut self, tau: f64) {
        self.config.gate.fixed_threshold = tau;
        if self.state.thresholds.mode == ThresholdMode::SingleFixed && !self.state.thresholds.sentinel_infinite {
            self.state.thresholds.tau_conf_fixed = tau;
        }
    }

    fn emit(&self, events: &mut Vec<TimedEvent>, event: EngineEvent) {
        events.push(TimedEvent {
            timestep: self.state.timestep,
            event,
        });
    }

    /// Loads a non-interactive bootstrap session and fits once at the end.
    pub fn bootstrap(&mut self, demos: &[(StateVector, Action)]) -> Result<Vec<TimedEvent>> {
        let mut events = Vec::new();
        for (s, a) in demos {
            self.push_point(*s, *a, DemoSource::InitSession);
        }
        if !self.state.dataset.is_empty() {
            events.push(self.retrain()?);
        }
        Ok(events)
    }

    fn push_point(&mut self, s: StateVector, a: Action, source: DemoSource) {
        let sequence_id = self.state.dataset.last().map_or(0, |p| p.sequence_id + 1);
        self.state.dataset.push(TrainingPoint {
            state: s,
            action: a,
            sequence_id,
            source,
        });
    }

    /// Appends a demonstration and retrains on cadence: corrections retrain
    /// at once, other demonstrations every `retrain_batch`.
    pub fn add_demonstration(
        &mut self,
        s: StateVector,
        a: Action,
        source: DemoSource,
    ) -> Result<Option<TimedEvent>> {
        self.push_point(s, a, source);
        self.state.demos_since_retrain += 1;
        let due = source == DemoSource::Corrective
            || self.state.demos_since_retrain >= self.config.retrain_batch;
        if due {
            Ok(Some(self.retrain()?))
        } else {
            Ok(None)
        }
    }

    fn thresholds_for(&self, retrain_index: u64) -> Result<ThresholdSet> {
        let model = self
            .state
            .model
            .as_ref()
            .expect("thresholds need a fitted model");
        let data = &self.state.dataset;
        let tau_dist = compute_distance_threshold(data, self.config.gate.distance_multiplier);
        Ok(match self.config.mode {
            Mode::CeSingle => ThresholdSet::single_fixed(tau_dist, self.config.gate.fixed_threshold),
            Mode::CeMultiple | Mode::Cba => {
                let cfg = self.model_config(retrain_index);
                let map = compute_confidence_thresholds(data, &cfg, &self.config.gate, retrain_index, model)?;
                ThresholdSet::multiple(tau_dist, map)
            }
            Mode::CdOnly => ThresholdSet::all_pass(),
        })
    }

    fn model_config(&self, retrain_index: u64) -> ModelConfig {
        self.config
            .model
            .with_seed(derive_seed(self.config.model.seed, &[retrain_index]))
    }

    /// Refits the model on the full dataset and recomputes thresholds.
    pub fn retrain(&mut self) -> Result<TimedEvent> {
        let index = self.state.retrain_count + 1;
        let model = GmmPolicy::fit(&self.state.dataset, &self.model_config(index))?;
        self.state.model = Some(model);
        self.state.retrain_count = index;
        self.state.thresholds = self.thresholds_for(index)?;
        self.state.demos_since_retrain = 0;
        Ok(TimedEvent {
            timestep: self.state.timestep,
            event: EngineEvent::Retrained {
                dataset_size: self.state.dataset.len(),
                retrain_index: index,
                component_count: self.state.model.as_ref().map_or(0, |m| m.component_count()),
                thresholds: self.state.thresholds.clone(),
            },
        })
    }

    fn start_action(&mut self, a: Action) {
        let d = action_duration(a);
        self.state.action_in_progress = (d > 1).then_some(ActionInProgress {
            action: a,
            remaining: d - 1,
        });
    }

    /// Classification and gate decision for `s` without changing any state.
    pub fn evaluate_gate(&self, s: &StateVector) -> (Option<Classification>, f64, GateDecision) {
        let d = nearest_neighbor_distance(&self.state.dataset, s);
        match &self.state.model {
            Some(m) => {
                let c = m.classify(s);
                (Some(c), d, decide(&c, d, &self.state.thresholds))
            }
            None => (None, d, GateDecision::RequestDemonstration),
        }
    }

    /// One timestep of the learning loop.
    pub fn step(&mut self, s: StateVector, teacher: &mut dyn TeacherChannel) -> Result<StepOutcome> {
        let mut out = StepOutcome::default();

        if self.state.mode.accepts_corrections() && self.state.autonomous_action_flag {
            if let (Some(a_c), Some(anchor)) = (teacher.poll(), self.state.correction_anchor) {
                self.state.autonomous_action_flag = false;
                self.emit(
                    &mut out.events,
                    EngineEvent::CorrectionReceived {
                        state: anchor,
                        action: a_c,
                    },
                );
                if let Some(ev) = self.add_demonstration(anchor, a_c, DemoSource::Corrective)? {
                    out.events.push(ev);
                }
            }
        }

        if let Some(aip) = &mut self.state.action_in_progress {
            aip.remaining -= 1;
            if aip.remaining == 0 {
                self.state.action_in_progress = None;
            }
            self.state.timestep += 1;
            return Ok(out);
        }

        let (classification, d, decision) = self.evaluate_gate(&s);
        self.state.last_classification = classification;
        match decision {
            GateDecision::Autonomous(a) => {
                let c = classification.expect("autonomy needs a classification");
                if self.state.pending_request {
                    self.state.pending_request = false;
                    self.emit(&mut out.events, EngineEvent::ResumedByEnvironment { state: s });
                }
                self.state.correction_anchor = Some(s);
                self.state.autonomous_action_flag = true;
                self.emit(
                    &mut out.events,
                    EngineEvent::AutonomousExecuted {
                        state: s,
                        action: a,
                        confidence: c.confidence,
                        boundary_id: c.boundary_id,
                        distance: d,
                    },
                );
                teacher.notify_autonomous(a, &s);
                self.start_action(a);
                out.directive = Some(a);
            }
            GateDecision::RequestDemonstration => {
                self.state.correction_anchor = None;
                self.state.autonomous_action_flag = false;
                if !self.state.pending_request {
                    self.state.pending_request = true;
                    self.emit(
                        &mut out.events,
                        EngineEvent::DemonstrationRequested {
                            state: s,
                            classification,
                            distance: d,
                        },
                    );
                    teacher.notify_request(&s);
                }
                match teacher.poll() {
                    Some(a_d) => {
                        self.state.pending_request = false;
                        self.emit(
                            &mut out.events,
                            EngineEvent::DemonstrationReceived { state: s, action: a_d },
                        );
                        if let Some(ev) = self.add_demonstration(s, a_d, DemoSource::CeRequest)? {
                            out.events.push(ev);
                        }
                        self.start_action(a_d);
                        out.directive = Some(a_d);
                    }
                    None => out.paused = true,
                }
            }
        }
        self.state.timestep += 1;
        Ok(out)
    }
}

/// Per-timestep learning signals used to decide when learning is complete.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionHistory {
    pub timesteps: u64,
    pub request_steps: Vec<u64>,
    pub correction_steps: Vec<u64>,
    pub collision_steps: Vec<u64>,
}

impl SessionHistory {
    /// Records one world timestep.
    pub fn record(&mut self, requested: bool, corrected: bool, collided: bool) {
        let t = self.timesteps;
        if requested {
            self.request_steps.push(t);
        }
        if corrected {
            self.correction_steps.push(t);
        }
        if collided {
            self.collision_steps.push(t);
        }
        self.timesteps += 1;
    }

    fn quiet_since(steps: &[u64], start: u64) -> bool {
        steps.last().is_none_or(|&t| t < start)
    }
}

/// Learning is complete once the trailing `window` timesteps hold no
/// demonstration request (CE modes), and additionally no correction and no
/// collision when corrections are part of the regime.
pub fn is_learning_complete(history: &SessionHistory, mode: Mode, window: u64) -> bool {
    if history.timesteps < window {
        return false;
    }
    let start = history.timesteps - window;
    let quiet_requests = SessionHistory::quiet_since(&history.request_steps, start);
    if !mode.accepts_corrections() {
        return quiet_requests;
    }
    quiet_requests
        && SessionHistory::quiet_since(&history.correction_steps, start)
        && SessionHistory::quiet_since(&history.collision_steps, start)
}
