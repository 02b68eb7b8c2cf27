//! Multi-agent simulation of coded-language evolution under an LLM content
//! supervisor. Participants converse, a supervisor screens their messages,
//! and violations feed a reflect-and-plan loop that runs between rounds.

pub mod domain;
pub mod engine;
pub mod error;
pub mod participant;
pub mod prompt;
pub mod provider;
pub mod report;
pub mod supervisor;

pub use domain::{
    AgentId, AgentProfile, Message, PetKind, ReviewStage, Roster, SecretPayload, Transcript, ViolationLog,
    ViolationRecord,
};
pub use engine::{
    run_simulation, Backends, EngineError, RoundResult, RunConfig, ScenarioKind, ScenarioSpec, Simulation,
};
pub use error::CoreError;
pub use prompt::{assemble_prompt, PromptBundle};
pub use provider::{Provider, ProviderError, ScriptBook, ScriptedProvider};
pub use report::{MetricSeries, RunReport};
pub use supervisor::{Guideline, Pressure, Supervisor, Verdict};
