//! The three trained predictors (entity recognizer, action predictor,
//! argument filler), their training loop and the on-disk bundle.

mod af;
mod ap;
mod bundle;
mod catalogue;
mod config;
mod ner;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use af::{ActionSignature, AfModel, ArgScores, Binding};
pub use ap::{select_action, ActionDistribution, ApModel};
pub use bundle::{BundleMeta, BUNDLE_VERSION};
pub use catalogue::{
    catalogue_features, levenshtein, similarity, CatalogueFeatures, StaticCatalogs,
};
pub use config::ModelConfig;
pub use ner::{bio_spans, bio_tags, NerModel};
pub use train::{train, train_models, EpochLosses, ExampleCounts, TrainReport};

use crate::context::{DialogueContext, EntityMention, Vocab};
use crate::dml::{DmlError, DomainSchema};
use crate::neuro::{NeuroError, ParamStore};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Neuro(#[from] NeuroError),
    #[error(transparent)]
    Dml(#[from] DmlError),
    #[error("no mention can fill required argument {arg} of {action}")]
    MissingArgument { action: String, arg: String },
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("bundle was trained for schema {expected}, found {found}")]
    Fingerprint { expected: String, found: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Trained (or freshly initialised) predictors with their parameters, the
/// vocabulary and the schema they were built for.
#[derive(Debug, Clone)]
pub struct Models {
    pub schema: DomainSchema,
    pub vocab: Vocab,
    pub config: ModelConfig,
    pub ner: NerModel,
    pub ner_params: ParamStore,
    pub ap: ApModel,
    pub ap_params: ParamStore,
    pub af: AfModel,
    pub af_params: ParamStore,
}

fn store_seed(seed: u64, k: u64) -> u64 {
    ChaCha8Rng::seed_from_u64(seed ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15)).random()
}

impl Models {
    pub fn init(
        schema: DomainSchema,
        vocab: Vocab,
        config: ModelConfig,
    ) -> Result<Self, ModelError> {
        let mut ner_params = ParamStore::new(store_seed(config.seed, 1));
        let ner = NerModel::new(&mut ner_params, &schema, &vocab, &config)?;
        let mut ap_params = ParamStore::new(store_seed(config.seed, 2));
        let ap = ApModel::new(&mut ap_params, &schema, &vocab, &config)?;
        let mut af_params = ParamStore::new(store_seed(config.seed, 3));
        let af = AfModel::new(&mut af_params, &schema, &vocab, &config)?;
        Ok(Models {
            schema,
            vocab,
            config,
            ner,
            ner_params,
            ap,
            ap_params,
            af,
            af_params,
        })
    }

    /// Entity mentions of the context's current utterance.
    pub fn tag(&self, ctx: &DialogueContext) -> Result<Vec<EntityMention>, ModelError> {
        Ok(self.ner.tag(&self.ner_params, ctx, &self.vocab)?)
    }

    pub fn predict_action(&self, ctx: &DialogueContext) -> Result<ActionDistribution, ModelError> {
        Ok(self.ap.predict(&self.ap_params, ctx, &self.vocab)?)
    }

    pub fn fill(
        &self,
        ctx: &DialogueContext,
        action: &str,
    ) -> Result<(ActionSignature, Vec<ArgScores>), ModelError> {
        self.af.fill(&self.af_params, ctx, &self.vocab, action)
    }

    /// Same models with a different schema catalog seen by the tagger's
    /// static features; parameters are shared.
    pub fn with_schema(&self, schema: DomainSchema) -> Result<Self, ModelError> {
        let mut out = Models::init(schema, self.vocab.clone(), self.config.clone())?;
        out.ner_params.assign(&self.ner_params)?;
        out.ap_params.assign(&self.ap_params)?;
        out.af_params.assign(&self.af_params)?;
        Ok(out)
    }
}
