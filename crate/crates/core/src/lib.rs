//! Confidence-based autonomy: an agent that learns a driving policy from a
//! teacher, asking for help when unsure and accepting corrections when wrong.

pub mod archive;
pub mod engine;
pub mod error;
pub mod gate;
pub mod gmm;
pub mod harness;
pub mod oracle;
pub mod policy;
pub mod seed;
pub mod serde_f64;
pub mod state;
pub mod world;

pub use engine::{Engine, EngineConfig, Mode, TeacherChannel};
pub use error::{Error, Result};
pub use gate::{GateConfig, GateDecision, ThresholdMode, ThresholdSet};
pub use policy::{BoundaryId, Classification, GmmPolicy, ModelConfig};
pub use state::{Action, DemoSource, StateVector, TrainingPoint};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/policy.md")]
    mod policy {}
    #[doc = include_str!("../../../book/src/gate.md")]
    mod gate {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
    #[doc = include_str!("../../../book/src/world.md")]
    mod world {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/archive.md")]
    mod archive {}
}
