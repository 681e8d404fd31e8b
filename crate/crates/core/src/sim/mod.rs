//! Dialogue simulation: goal sampling and act-level self-play between a
//! heuristic user agent and a heuristic system agent, plus the base
//! sampler that only resamples seed values.

mod agents;
mod config;
mod dataset;
mod goal;
mod realize;

pub use agents::{DialogueAct, SystemAgent, Transcript, UserAgent};
pub use config::{SimConfig, SimError, SimMode};
pub use dataset::{
    check_goal, dialogue_rng, generate_dataset, simulate_api, simulate_dialogue, ApiReturn,
    CooperationCounts, DialogueStats, GenerationStats, Simulated,
};
pub use goal::{
    sample_goal, Cooperation, Goal, GoalCall, GoalValue, Revision, RevisionTrigger, SeedIndex,
};
pub use realize::{format_values, realize_nlg, realize_user, Realized, RealizedSpan, TemplateBank};
