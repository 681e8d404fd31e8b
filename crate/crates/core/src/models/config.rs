use serde::{Deserialize, Serialize};

use crate::context::{EncoderConfig, FeatureSet};
use crate::neuro::AdamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed: usize,
    pub hidden: usize,
    /// History window in turns.
    pub window: usize,
    pub type_dim: usize,
    pub oov_buckets: usize,
    /// Width of the projected dialogue context fed to every tagger step.
    pub ner_context: usize,
    /// Width of the action, argument and context parts of a pointer query.
    pub pointer_query: usize,
    pub ner_features: FeatureSet,
    pub ap_features: FeatureSet,
    pub af_features: FeatureSet,
    /// Use the session's dynamic catalogue as a tagger feature.
    pub dynamic_catalog: bool,
    pub fuzzy_threshold: f64,
    /// Longest token window scanned for catalogue matches; 0 derives it
    /// from the catalogs.
    pub catalogue_window: usize,
    pub tau_high: f64,
    pub tau_low: f64,
    pub action_cap: usize,
    pub epochs: usize,
    /// Dialogues per optimizer step.
    pub batch_size: usize,
    pub word_dropout: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Models trained concurrently; 0 means one per available core (at most 3).
    pub threads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed: 32,
            hidden: 64,
            window: 8,
            type_dim: 8,
            oov_buckets: 4096,
            ner_context: 32,
            pointer_query: 16,
            ner_features: FeatureSet::DIALOGUE,
            ap_features: FeatureSet::ALL,
            af_features: FeatureSet::ALL,
            dynamic_catalog: true,
            fuzzy_threshold: 0.8,
            catalogue_window: 0,
            tau_high: 0.7,
            tau_low: 0.3,
            action_cap: 8,
            epochs: 8,
            batch_size: 8,
            word_dropout: 0.1,
            adam: AdamConfig::default(),
            seed: 0,
            threads: 0,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self, features: FeatureSet) -> EncoderConfig {
        EncoderConfig {
            embed: self.embed,
            hidden: self.hidden,
            window: self.window,
            type_dim: self.type_dim,
            features,
        }
    }
}
