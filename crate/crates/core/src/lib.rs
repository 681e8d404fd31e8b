//! Seed-dialogue driven goal-oriented dialogue agents.
//!
//! A developer supplies a [`dml::DomainSchema`] and a handful of annotated
//! seed dialogues. The [`sim`] module expands them into a training corpus by
//! dual-agent self-play, [`models`] trains the entity recognizer, action
//! predictor and argument filler on top of the shared [`context`] encoders,
//! and [`runtime`] runs the trained bundle as a live agent.

pub mod context;
pub mod dml;
pub mod eval;
pub mod models;
pub mod neuro;
pub mod runtime;
pub mod sim;

pub use dml::{AnnotatedDialogue, DomainSchema};
