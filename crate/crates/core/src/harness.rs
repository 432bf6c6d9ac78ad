//! Unattended experiments: runs a regime end to end with the oracle teacher,
//! evaluates the policy at fixed demonstration intervals and compares
//! regimes.

use serde::{Deserialize, Serialize};

use crate::archive::{EvaluationRecord, SeedSet, SessionRecord, StepRecord};
use crate::engine::{
    is_learning_complete, Engine, EngineConfig, EngineEvent, Mode, RecordingTeacher, SessionHistory,
};
use crate::error::{Error, Result};
use crate::gate::GateConfig;
use crate::oracle::{OracleConfig, OracleDriver, OraclePolicy, OracleTeacher};
use crate::policy::{GmmPolicy, ModelConfig};
use crate::seed::derive_seed;
use crate::state::{Action, DemoSource, StateVector};
use crate::world::{
    action_duration, evaluate, Driver, EvalReport, PatternKind, SensorConfig, TrafficPattern, WorldState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub regime: Mode,
    pub seeds: SeedSet,
    pub init_session_size: usize,
    pub eval_interval_demos: usize,
    pub eval_timesteps: u64,
    /// Trailing timesteps that must be free of requests (and of corrections
    /// and collisions where corrections apply) to call learning complete.
    pub completion_window: u64,
    pub max_demonstrations: usize,
    pub max_timesteps: u64,
    /// Threshold grid swept for the single-threshold regime.
    pub threshold_grid: Vec<f64>,
    pub gate: GateConfig,
    pub model: ModelConfig,
    pub retrain_batch: usize,
    pub oracle: OracleConfig,
    pub sensor: SensorConfig,
    pub evaluation_pattern: TrafficPattern,
    /// Keep a full session record in the run result.
    pub record_session: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            regime: Mode::Cba,
            seeds: SeedSet::default(),
            init_session_size: 300,
            eval_interval_demos: 100,
            eval_timesteps: 1000,
            completion_window: 2000,
            max_demonstrations: 3000,
            max_timesteps: 500_000,
            threshold_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            gate: GateConfig::default(),
            model: ModelConfig::default(),
            retrain_batch: 10,
            oracle: OracleConfig::default(),
            sensor: SensorConfig::default(),
            evaluation_pattern: TrafficPattern::evaluation(),
            record_session: false,
        }
    }
}

impl ExperimentConfig {
    pub fn with_regime(mut self, regime: Mode) -> Self {
        self.regime = regime;
        self
    }

    pub fn engine_config(&self) -> EngineConfig {
        let mut gate = self.gate;
        gate.split_seed = self.seeds.split;
        EngineConfig {
            mode: self.regime,
            model: self.model.with_seed(self.seeds.model),
            gate,
            retrain_batch: self.retrain_batch,
        }
    }

    pub fn training_pattern(&self) -> TrafficPattern {
        TrafficPattern::training(derive_seed(self.seeds.world, &[1]))
    }

    pub fn training_sensor(&self) -> SensorConfig {
        SensorConfig {
            noise_seed: derive_seed(self.seeds.world, &[2]),
            ..self.sensor
        }
    }

    /// Sensor noise for evaluations; shared by every regime under one world seed.
    pub fn evaluation_sensor(&self) -> SensorConfig {
        SensorConfig {
            noise_seed: derive_seed(self.seeds.world, &[3]),
            ..self.sensor
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.evaluation_pattern.kind != PatternKind::FixedEvaluation {
            return Err(Error::Config("evaluation pattern must be the fixed kind".into()));
        }
        if self.training_pattern().seed == self.evaluation_pattern.seed {
            return Err(Error::Config("training would reuse the evaluation road".into()));
        }
        if self.eval_interval_demos == 0 || self.retrain_batch == 0 {
            return Err(Error::Config("intervals must be positive".into()));
        }
        self.evaluation_pattern.validate()
    }
}

/// Drives the simulator with a learned policy's best guess, never asking.
pub struct PolicyDriver<'a>(pub &'a GmmPolicy);

impl Driver for PolicyDriver<'_> {
    fn act(&mut self, s: &StateVector, _: &WorldState) -> Action {
        self.0.classify(s).action
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SourceCounts {
    pub init_session: usize,
    pub ce_request: usize,
    pub corrective: usize,
}

impl SourceCounts {
    pub fn total(&self) -> usize {
        self.init_session + self.ce_request + self.corrective
    }

    fn add(&mut self, source: DemoSource) {
        match source {
            DemoSource::InitSession => self.init_session += 1,
            DemoSource::CeRequest => self.ce_request += 1,
            DemoSource::Corrective => self.corrective += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEval {
    /// Dataset size the evaluated policy was trained on.
    pub demonstrations: usize,
    pub component_count: usize,
    pub report: EvalReport,
}

/// Demonstrations acquired in one block of timesteps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineBin {
    pub start_timestep: u64,
    pub ce_request: usize,
    pub corrective: usize,
}

pub const TIMELINE_BIN: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Mode,
    pub seeds: SeedSet,
    pub completed: bool,
    pub total_demonstrations: usize,
    pub by_source: SourceCounts,
    /// Interactive demonstration sources in acquisition order.
    pub demonstration_sources: Vec<DemoSource>,
    pub training_collisions: u64,
    pub timesteps: u64,
    pub evaluations: Vec<IntervalEval>,
    pub final_evaluation: EvalReport,
    pub teacher_evaluation: EvalReport,
    pub timeline: Vec<TimelineBin>,
}

impl RegimeReport {
    /// Total-variation distance of the final lane occupancy to the teacher's.
    pub fn distance_to_teacher(&self) -> f64 {
        self.final_evaluation.occupancy_distance(&self.teacher_evaluation)
    }

    /// Corrective and request counts among the last `n` interactive demonstrations.
    pub fn last_sources(&self, n: usize) -> SourceCounts {
        let mut c = SourceCounts::default();
        let k = self.demonstration_sources.len();
        for s in &self.demonstration_sources[k.saturating_sub(n)..] {
            c.add(*s);
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct RegimeRun {
    pub report: RegimeReport,
    pub record: Option<SessionRecord>,
    pub engine: Engine,
}

/// The non-interactive init session: the oracle drives and every decision
/// is recorded. Depends only on the world seed and the oracle, so every
/// regime starts from the same data.
pub fn init_session(cfg: &ExperimentConfig, world: &mut WorldState) -> Vec<(StateVector, Action)> {
    let oracle = OraclePolicy::new(cfg.oracle);
    let mut demos = Vec::with_capacity(cfg.init_session_size);
    let mut busy = 0;
    while demos.len() < cfg.init_session_size {
        let s = world.sense();
        let action = if busy == 0 {
            let a = oracle.act(world, &s);
            busy = action_duration(a);
            demos.push((s, a));
            Some(a)
        } else {
            None
        };
        busy -= 1;
        world.step(action);
    }
    // let a lane change begun in the last demonstration finish
    while busy > 0 {
        busy -= 1;
        world.sense();
        world.step(None);
    }
    demos
}

/// The oracle's own performance on the evaluation pattern.
pub fn teacher_evaluation(cfg: &ExperimentConfig) -> EvalReport {
    evaluate(
        &mut OracleDriver(OraclePolicy::new(cfg.oracle)),
        &cfg.evaluation_pattern,
        cfg.evaluation_sensor(),
        cfg.eval_timesteps,
    )
}

/// Evaluates the engine's current policy without touching it.
pub fn evaluate_engine(cfg: &ExperimentConfig, engine: &Engine) -> Option<IntervalEval> {
    let model = engine.model()?;
    let report = evaluate(
        &mut PolicyDriver(model),
        &cfg.evaluation_pattern,
        cfg.evaluation_sensor(),
        cfg.eval_timesteps,
    );
    Some(IntervalEval {
        demonstrations: engine.state().dataset.len(),
        component_count: model.component_count(),
        report,
    })
}

/// Runs one regime until learning completes or a cap is hit.
pub fn run_regime(cfg: &ExperimentConfig) -> Result<RegimeRun> {
    cfg.validate()?;
    let mut world = WorldState::new(&cfg.training_pattern(), cfg.training_sensor());
    let demos = init_session(cfg, &mut world);
    let mut engine = Engine::new(cfg.engine_config());
    engine.bootstrap(&demos)?;
    run_from(cfg, engine, world, demos)
}

/// Continues a bootstrapped engine on a world; lets sweeps share the init session.
pub fn run_from(
    cfg: &ExperimentConfig,
    mut engine: Engine,
    mut world: WorldState,
    bootstrap: Vec<(StateVector, Action)>,
) -> Result<RegimeRun> {
    let mut record = cfg.record_session.then(|| {
        let mut r = SessionRecord::new(*engine.config(), cfg.seeds);
        r.meta = serde_json::to_value(cfg).unwrap_or_default();
        r.bootstrap = bootstrap.clone();
        r
    });
    let mut teacher = OracleTeacher::new(OraclePolicy::new(cfg.oracle), cfg.regime.accepts_corrections());
    let mut history = SessionHistory::default();
    let mut by_source = SourceCounts {
        init_session: engine.state().dataset.len(),
        ..SourceCounts::default()
    };
    let mut sources = Vec::new();
    let mut timeline: Vec<TimelineBin> = Vec::new();
    let mut evaluations: Vec<IntervalEval> = evaluate_engine(cfg, &engine).into_iter().collect();
    let mut next_eval = engine.state().dataset.len() + cfg.eval_interval_demos;
    let mut training_collisions = 0;
    let mut completed = false;
    let mut steps = 0u64;

    while steps < cfg.max_timesteps && engine.state().dataset.len() < cfg.max_demonstrations {
        teacher.observe(&world);
        let s = world.sense();
        let mut rec = RecordingTeacher::new(&mut teacher);
        let out = engine.step(s, &mut rec)?;
        let polls = std::mem::take(&mut rec.polls);
        if out.paused {
            // the oracle always answers at once; a silent teacher would stall here
            return Err(Error::Config("teacher did not answer a demonstration request".into()));
        }
        world.step(out.directive);
        let collided = world.collision();
        training_collisions += u64::from(collided);

        let bin = steps / TIMELINE_BIN;
        if timeline.len() as u64 <= bin {
            timeline.push(TimelineBin {
                start_timestep: bin * TIMELINE_BIN,
                ce_request: 0,
                corrective: 0,
            });
        }
        let mut requested = false;
        let mut corrected = false;
        for ev in &out.events {
            match ev.event {
                EngineEvent::DemonstrationRequested { .. } => requested = true,
                EngineEvent::DemonstrationReceived { .. } => {
                    by_source.add(DemoSource::CeRequest);
                    sources.push(DemoSource::CeRequest);
                    timeline.last_mut().expect("bin exists").ce_request += 1;
                }
                EngineEvent::CorrectionReceived { .. } => {
                    corrected = true;
                    by_source.add(DemoSource::Corrective);
                    sources.push(DemoSource::Corrective);
                    timeline.last_mut().expect("bin exists").corrective += 1;
                }
                _ => {}
            }
        }
        history.record(requested, corrected, collided);
        if let Some(r) = record.as_mut() {
            r.steps.push(StepRecord {
                state: s,
                polls,
                events: out.events,
                collided,
            });
        }
        steps += 1;

        if engine.state().dataset.len() >= next_eval {
            next_eval += cfg.eval_interval_demos;
            if let Some(e) = evaluate_engine(cfg, &engine) {
                if let Some(r) = record.as_mut() {
                    r.evaluations.push(EvaluationRecord {
                        demonstrations: e.demonstrations,
                        report: e.report.clone(),
                    });
                }
                evaluations.push(e);
            }
        }
        if is_learning_complete(&history, cfg.regime, cfg.completion_window) {
            completed = true;
            break;
        }
    }

    let final_evaluation = match evaluate_engine(cfg, &engine) {
        Some(e) => e.report,
        None => return Err(Error::ModelUnavailable("no model after the run".into())),
    };
    if let Some(r) = record.as_mut() {
        r.capture(&engine);
    }
    let report = RegimeReport {
        regime: cfg.regime,
        seeds: cfg.seeds,
        completed,
        total_demonstrations: engine.state().dataset.len(),
        by_source,
        demonstration_sources: sources,
        training_collisions,
        timesteps: steps,
        evaluations,
        final_evaluation,
        teacher_evaluation: teacher_evaluation(cfg),
        timeline,
    };
    Ok(RegimeRun { report, record, engine })
}

/// One row of a regime comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub regime: Mode,
    pub completed: bool,
    pub distance_to_teacher: f64,
    pub final_collision_rate: f64,
    pub total_demonstrations: usize,
    pub training_collisions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seeds: SeedSet,
    pub rows: Vec<ComparisonRow>,
    pub teacher: EvalReport,
    /// Stacked lane-occupancy bars per regime and interval.
    pub occupancy_bars: Vec<(Mode, Vec<IntervalEval>)>,
    /// Cumulative demonstrations by source per regime over time.
    pub timelines: Vec<(Mode, Vec<TimelineBin>)>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "regime,completed,distance_to_teacher,final_collision_rate,total_demonstrations,training_collisions\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.regime.as_str(),
                r.completed,
                r.distance_to_teacher,
                r.final_collision_rate,
                r.total_demonstrations,
                r.training_collisions
            ));
        }
        out
    }

    /// Plot-ready document: bars and timelines keyed by regime.
    pub fn plot_document(&self) -> serde_json::Value {
        let bars: serde_json::Map<String, serde_json::Value> = self
            .occupancy_bars
            .iter()
            .map(|(m, evals)| {
                let series = evals
                    .iter()
                    .map(|e| {
                        serde_json::json!({
                            "demonstrations": e.demonstrations,
                            "lane_occupancy": e.report.lane_occupancy,
                            "collision_rate": e.report.collision_rate,
                        })
                    })
                    .collect::<Vec<_>>();
                (m.as_str().to_string(), serde_json::Value::from(series))
            })
            .collect();
        let timelines: serde_json::Map<String, serde_json::Value> = self
            .timelines
            .iter()
            .map(|(m, bins)| {
                let (mut ce, mut cd) = (0, 0);
                let series = bins
                    .iter()
                    .map(|b| {
                        ce += b.ce_request;
                        cd += b.corrective;
                        serde_json::json!({"timestep": b.start_timestep, "ce_request": ce, "corrective": cd})
                    })
                    .collect::<Vec<_>>();
                (m.as_str().to_string(), serde_json::Value::from(series))
            })
            .collect();
        serde_json::json!({
            "teacher": {
                "lane_occupancy": self.teacher.lane_occupancy,
                "collision_rate": self.teacher.collision_rate,
            },
            "occupancy_bars": bars,
            "timelines": timelines,
        })
    }
}

/// Tabulates reports run under the same seeds.
pub fn compare_regimes(reports: &[RegimeReport]) -> Result<Comparison> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Config("nothing to compare".into()))?;
    if let Some(r) = reports.iter().find(|r| r.seeds != first.seeds) {
        return Err(Error::SeedMismatch(format!(
            "{} ran with {:?}, {} with {:?}",
            first.regime.as_str(),
            first.seeds,
            r.regime.as_str(),
            r.seeds
        )));
    }
    Ok(Comparison {
        seeds: first.seeds,
        rows: reports
            .iter()
            .map(|r| ComparisonRow {
                regime: r.regime,
                completed: r.completed,
                distance_to_teacher: r.distance_to_teacher(),
                final_collision_rate: r.final_evaluation.collision_rate,
                total_demonstrations: r.total_demonstrations,
                training_collisions: r.training_collisions,
            })
            .collect(),
        teacher: first.teacher_evaluation.clone(),
        occupancy_bars: reports.iter().map(|r| (r.regime, r.evaluations.clone())).collect(),
        timelines: reports.iter().map(|r| (r.regime, r.timeline.clone())).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best_threshold: f64,
    pub trials: Vec<(f64, RegimeReport)>,
}

impl SweepResult {
    pub fn best(&self) -> &RegimeReport {
        &self
            .trials
            .iter()
            .find(|(t, _)| *t == self.best_threshold)
            .expect("best threshold is one of the trials")
            .1
    }
}

/// Ranks sweep trials by the final policy: completed runs first, then final
/// collisions, then distance to the teacher's lane occupancy, then
/// demonstrations.
fn sweep_order(a: &RegimeReport, b: &RegimeReport) -> std::cmp::Ordering {
    (!a.completed, a.final_evaluation.collisions)
        .cmp(&(!b.completed, b.final_evaluation.collisions))
        .then(a.distance_to_teacher().total_cmp(&b.distance_to_teacher()))
        .then(a.total_demonstrations.cmp(&b.total_demonstrations))
}

/// Runs the single-threshold regime once per grid value and picks the best.
pub fn sweep_fixed_threshold(grid: &[f64], cfg: &ExperimentConfig) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty threshold grid".into()));
    }
    let mut base = cfg.clone().with_regime(Mode::CeSingle);
    base.record_session = false;
    base.validate()?;
    let mut world = WorldState::new(&base.training_pattern(), base.training_sensor());
    let demos = init_session(&base, &mut world);
    let mut trials = Vec::with_capacity(grid.len());
    for &t in grid {
        let mut c = base.clone();
        c.gate.fixed_threshold = t;
        let mut engine = Engine::new(c.engine_config());
        engine.bootstrap(&demos)?;
        let run = run_from(&c, engine, world.clone(), demos.clone())?;
        log::info!(
            "ce_s threshold {t}: {} demonstrations, completed {}",
            run.report.total_demonstrations,
            run.report.completed
        );
        trials.push((t, run.report));
    }
    let best_threshold = trials
        .iter()
        .min_by(|(_, a), (_, b)| sweep_order(a, b))
        .map(|(t, _)| *t)
        .expect("grid is non-empty");
    Ok(SweepResult { best_threshold, trials })
}
