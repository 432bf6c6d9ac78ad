//! Session archives: a line-delimited JSON log with everything needed to
//! rebuild the learner headlessly.
//!
//! Layout, one JSON object per line:
//!
//! ```text
//! {"kind":"header","schema":"cba-session","version":1}
//! {"kind":"config", ...}            engine config and seeds
//! {"kind":"bootstrap", ...}         the non-interactive init session
//! {"kind":"step", ...}              one per engine step
//! {"kind":"evaluation", ...}        interleaved, optional
//! {"kind":"wire", ...}              interleaved, optional (live sessions)
//! {"kind":"snapshot", ...}          final model and thresholds
//! {"kind":"end","steps":N}
//! ```
//!
//! A step line holds the sensed state, every teacher answer the engine
//! polled during that step, and the events it emitted. Replay feeds the
//! states and answers back through a fresh engine and compares the events.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineConfig, ScriptedTeacher, TimedEvent};
use crate::error::{Error, Result};
use crate::gate::ThresholdSet;
use crate::policy::PolicySnapshot;
use crate::state::{Action, StateVector};
use crate::world::EvalReport;

pub const ARCHIVE_SCHEMA: &str = "cba-session";
pub const ARCHIVE_VERSION: u32 = 1;

/// Seeds that fully determine a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SeedSet {
    pub world: u64,
    pub model: u64,
    pub split: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: StateVector,
    pub polls: Vec<Option<Action>>,
    pub events: Vec<TimedEvent>,
    /// World-side observation, kept so reports can be recomputed.
    #[serde(default)]
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub demonstrations: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub model: Option<PolicySnapshot>,
    pub thresholds: ThresholdSet,
    pub dataset_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header {
        schema: String,
        version: u32,
    },
    Config {
        engine: EngineConfig,
        seeds: SeedSet,
        #[serde(default)]
        meta: serde_json::Value,
    },
    Bootstrap {
        demos: Vec<(StateVector, Action)>,
    },
    Step(StepRecord),
    Evaluation(EvaluationRecord),
    Wire {
        message: serde_json::Value,
    },
    Snapshot(Snapshot),
    End {
        steps: usize,
    },
}

/// A complete session held in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub engine: EngineConfig,
    pub seeds: SeedSet,
    /// Free-form run metadata (experiment config, world patterns).
    pub meta: serde_json::Value,
    pub bootstrap: Vec<(StateVector, Action)>,
    pub steps: Vec<StepRecord>,
    pub evaluations: Vec<EvaluationRecord>,
    pub transcript: Vec<serde_json::Value>,
    pub snapshot: Option<Snapshot>,
}

impl SessionRecord {
    pub fn new(engine: EngineConfig, seeds: SeedSet) -> Self {
        SessionRecord {
            engine,
            seeds,
            meta: serde_json::Value::Null,
            bootstrap: Vec::new(),
            steps: Vec::new(),
            evaluations: Vec::new(),
            transcript: Vec::new(),
            snapshot: None,
        }
    }

    /// Stores the engine's current model and thresholds as the final snapshot.
    pub fn capture(&mut self, engine: &Engine) {
        self.snapshot = Some(snapshot_of(engine));
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let mut line = |l: &Line| -> Result<()> {
            serde_json::to_writer(&mut out, l)?;
            out.write_all(b"\n")?;
            Ok(())
        };
        line(&Line::Header {
            schema: ARCHIVE_SCHEMA.into(),
            version: ARCHIVE_VERSION,
        })?;
        line(&Line::Config {
            engine: self.engine,
            seeds: self.seeds,
            meta: self.meta.clone(),
        })?;
        line(&Line::Bootstrap {
            demos: self.bootstrap.clone(),
        })?;
        // evaluations and wire messages carry no step index; they are written
        // after the steps they follow in time
        for s in &self.steps {
            line(&Line::Step(s.clone()))?;
        }
        for e in &self.evaluations {
            line(&Line::Evaluation(e.clone()))?;
        }
        for m in &self.transcript {
            line(&Line::Wire { message: m.clone() })?;
        }
        if let Some(s) = &self.snapshot {
            line(&Line::Snapshot(s.clone()))?;
        }
        line(&Line::End {
            steps: self.steps.len(),
        })?;
        out.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
    }

    pub fn read_from(input: impl BufRead) -> Result<SessionRecord> {
        let mut record: Option<SessionRecord> = None;
        let mut header = false;
        let mut ended = false;
        for (i, raw) in input.lines().enumerate() {
            let raw = raw?;
            if raw.trim().is_empty() {
                continue;
            }
            if ended {
                return Err(Error::Integrity(format!("content after end marker on line {}", i + 1)));
            }
            let line: Line = serde_json::from_str(&raw)
                .map_err(|e| Error::Integrity(format!("line {}: {e}", i + 1)))?;
            match line {
                Line::Header { schema, version } => {
                    if schema != ARCHIVE_SCHEMA {
                        return Err(Error::Integrity(format!("not a session archive: `{schema}`")));
                    }
                    if version != ARCHIVE_VERSION {
                        return Err(Error::SchemaVersion {
                            what: "session archive",
                            found: version,
                            expected: ARCHIVE_VERSION,
                        });
                    }
                    header = true;
                }
                _ if !header => return Err(Error::Integrity("missing header".into())),
                Line::Config { engine, seeds, meta } => {
                    let mut r = SessionRecord::new(engine, seeds);
                    r.meta = meta;
                    record = Some(r);
                }
                other => {
                    let r = record
                        .as_mut()
                        .ok_or_else(|| Error::Integrity("config must precede session data".into()))?;
                    match other {
                        Line::Bootstrap { demos } => r.bootstrap = demos,
                        Line::Step(s) => r.steps.push(s),
                        Line::Evaluation(e) => r.evaluations.push(e),
                        Line::Wire { message } => r.transcript.push(message),
                        Line::Snapshot(s) => r.snapshot = Some(s),
                        Line::End { steps } => {
                            if steps != r.steps.len() {
                                return Err(Error::Integrity(format!(
                                    "end marker expects {steps} steps, found {}",
                                    r.steps.len()
                                )));
                            }
                            ended = true;
                        }
                        Line::Header { .. } | Line::Config { .. } => unreachable!(),
                    }
                }
            }
        }
        if !ended {
            return Err(Error::Integrity("archive truncated: no end marker".into()));
        }
        record.ok_or_else(|| Error::Integrity("archive has no config".into()))
    }

    pub fn from_jsonl(s: &str) -> Result<SessionRecord> {
        Self::read_from(s.as_bytes())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &std::path::Path) -> Result<SessionRecord> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

pub fn snapshot_of(engine: &Engine) -> Snapshot {
    let st = engine.state();
    Snapshot {
        model: st.model.clone().map(PolicySnapshot::from),
        thresholds: st.thresholds.clone(),
        dataset_size: st.dataset.len(),
    }
}

/// Where a replay first disagreed with the archive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    /// Engine step index; `None` for the bootstrap or the final snapshot.
    pub step: Option<usize>,
    /// Index into the archive's full event sequence.
    pub event_index: usize,
    pub expected: Option<serde_json::Value>,
    pub found: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub steps: usize,
    pub events: usize,
    pub divergence: Option<Divergence>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.divergence.is_none()
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("event serializes")
}

fn compare_events(
    step: Option<usize>,
    base: usize,
    expected: &[TimedEvent],
    found: &[TimedEvent],
) -> Option<Divergence> {
    let n = expected.len().max(found.len());
    (0..n).find_map(|i| {
        let (e, f) = (expected.get(i), found.get(i));
        (e != f).then(|| Divergence {
            step,
            event_index: base + i,
            expected: e.map(to_value),
            found: f.map(to_value),
        })
    })
}

/// Re-executes an archived session and checks it event by event.
pub fn replay(record: &SessionRecord) -> Result<ReplayReport> {
    let mut engine = Engine::new(record.engine);
    let mut cursor = 0;
    // the bootstrap fit is checked indirectly: every later decision and the
    // final snapshot depend on it
    engine.bootstrap(&record.bootstrap)?;
    for (i, step) in record.steps.iter().enumerate() {
        let mut teacher = ScriptedTeacher::new(step.polls.iter().copied());
        let out = engine.step(step.state, &mut teacher)?;
        if let Some(d) = compare_events(Some(i), cursor, &step.events, &out.events) {
            return Ok(ReplayReport {
                steps: i,
                events: cursor,
                divergence: Some(d),
            });
        }
        cursor += step.events.len();
    }
    if let Some(expected) = &record.snapshot {
        let found = snapshot_of(&engine);
        if &found != expected {
            return Ok(ReplayReport {
                steps: record.steps.len(),
                events: cursor,
                divergence: Some(Divergence {
                    step: None,
                    event_index: cursor,
                    expected: Some(to_value(expected)),
                    found: Some(to_value(&found)),
                }),
            });
        }
    }
    Ok(ReplayReport {
        steps: record.steps.len(),
        events: cursor,
        divergence: None,
    })
}
