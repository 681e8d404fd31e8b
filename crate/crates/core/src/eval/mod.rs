//! Metrics, corpus evaluation and the ablation experiments.

mod ablation;
mod evaluate;
mod metrics;

use thiserror::Error;

pub use ablation::{
    run_ablation, run_dynamic_ablation, AblationConfig, AblationReport, ChallengeReport,
    Comparison, DynamicAblationConfig, DynamicAblationReport, RunResult,
};
pub use evaluate::{
    api_value_mentions, dynamic_slot_f1, evaluate, evaluate_dialogue, EvalReport, Metrics,
};
pub use metrics::{
    asp_accuracy, mean_std, relative_delta, span_f1, LabeledSpan, Prf, ResolvedAction, TurnEval,
};

use crate::dml::DmlError;
use crate::models::ModelError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dml(#[from] DmlError),
}
