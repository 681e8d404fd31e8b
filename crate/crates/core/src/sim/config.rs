use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dml::DmlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Self-play with goal sampling, flow and language variation.
    Full,
    /// Seed structure and text kept, entity values resampled.
    Base,
}

impl std::str::FromStr for SimMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(SimMode::Full),
            "base" => Ok(SimMode::Base),
            other => Err(format!(
                "unknown simulation mode `{other}` (expected full or base)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub num_dialogues: usize,
    pub mode: SimMode,
    pub p_correction: f64,
    pub p_over_cooperative: f64,
    pub p_under_cooperative: f64,
    pub p_proactive_offer: f64,
    pub p_api_failure: f64,
    /// Probability that a goal skeleton is a sub-sequence of one seed or a
    /// concatenation of two seeds instead of a whole seed.
    pub p_goal_recombination: f64,
    pub max_turns: usize,
    /// Resampling attempts per dialogue before giving up.
    pub max_attempts: usize,
    /// Worker threads; 0 means one per available core.
    pub threads: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            num_dialogues: 1000,
            mode: SimMode::Full,
            p_correction: 0.3,
            p_over_cooperative: 0.25,
            p_under_cooperative: 0.25,
            p_proactive_offer: 0.3,
            p_api_failure: 0.1,
            p_goal_recombination: 0.3,
            max_turns: 30,
            max_attempts: 100,
            threads: 0,
        }
    }
}

impl SimConfig {
    /// All variation sources switched off.
    pub fn quiet() -> Self {
        SimConfig {
            p_correction: 0.0,
            p_over_cooperative: 0.0,
            p_under_cooperative: 0.0,
            p_proactive_offer: 0.0,
            p_api_failure: 0.0,
            p_goal_recombination: 0.0,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let probs = [
            ("p_correction", self.p_correction),
            ("p_over_cooperative", self.p_over_cooperative),
            ("p_under_cooperative", self.p_under_cooperative),
            ("p_proactive_offer", self.p_proactive_offer),
            ("p_api_failure", self.p_api_failure),
            ("p_goal_recombination", self.p_goal_recombination),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::Config(format!(
                    "{name} = {p} is not a probability"
                )));
            }
        }
        if self.p_over_cooperative + self.p_under_cooperative > 1.0 + 1e-12 {
            return Err(SimError::Config(
                "p_over_cooperative + p_under_cooperative exceeds 1".to_string(),
            ));
        }
        if self.num_dialogues == 0 {
            return Err(SimError::Config(
                "num_dialogues must be at least 1".to_string(),
            ));
        }
        if self.max_turns == 0 || self.max_attempts == 0 {
            return Err(SimError::Config(
                "max_turns and max_attempts must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no seed dialogues")]
    EmptySeeds,
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("entity type `{0}` has an empty catalog")]
    EmptyCatalog(String),
    #[error("no user template can express `{0}`")]
    NoTemplate(String),
    #[error("no NLG response expresses `{0}`")]
    MissingNlg(String),
    #[error("NLG `{nlg}` has no template for arguments {args:?}")]
    NlgArgs { nlg: String, args: Vec<String> },
    #[error("dialogue exceeded {0} turns")]
    TurnCap(usize),
    #[error("simulation stalled: {0}")]
    Stalled(String),
    #[error("gave up after {0} discarded attempts")]
    Exhausted(usize),
    #[error(transparent)]
    Dml(#[from] DmlError),
}
