use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::Vocab;
use crate::dml::parse_domain;
use crate::neuro::{load_params, params_to_json, save_params, ParamStore};

use super::{ModelConfig, ModelError, Models};

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub version: u32,
    pub fingerprint: String,
    pub config: ModelConfig,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read(path: &Path) -> Result<String, ModelError> {
    fs::read_to_string(path).map_err(io(path))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), ModelError> {
    fs::write(path, bytes).map_err(io(path))
}

impl Models {
    /// Write the bundle directory: parameters of the three models, the
    /// vocabulary, the schema and `bundle.json`. With `export_json` the
    /// parameters are also written as JSON.
    pub fn save(&self, dir: &Path, export_json: bool) -> Result<(), ModelError> {
        fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, store) in [
            ("ner", &self.ner_params),
            ("ap", &self.ap_params),
            ("af", &self.af_params),
        ] {
            write(&dir.join(format!("{name}.params")), save_params(store))?;
            if export_json {
                let json = serde_json::to_string(&params_to_json(store))
                    .map_err(|e| ModelError::Bundle(e.to_string()))?;
                write(&dir.join(format!("{name}.json")), json)?;
            }
        }
        write(&dir.join("vocab.json"), self.vocab.to_json())?;
        write(&dir.join("schema.json"), self.schema.to_json())?;
        let meta = BundleMeta {
            version: BUNDLE_VERSION,
            fingerprint: self.schema.fingerprint(),
            config: self.config.clone(),
        };
        let json =
            serde_json::to_string_pretty(&meta).map_err(|e| ModelError::Bundle(e.to_string()))?;
        write(&dir.join("bundle.json"), json + "\n")
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let meta: BundleMeta = serde_json::from_str(&read(&dir.join("bundle.json"))?)
            .map_err(|e| ModelError::Bundle(format!("bundle.json: {e}")))?;
        if meta.version != BUNDLE_VERSION {
            return Err(ModelError::Bundle(format!(
                "version {} (expected {BUNDLE_VERSION})",
                meta.version
            )));
        }
        let schema = parse_domain(&read(&dir.join("schema.json"))?)?;
        if schema.fingerprint() != meta.fingerprint {
            return Err(ModelError::Fingerprint {
                expected: meta.fingerprint,
                found: schema.fingerprint(),
            });
        }
        let vocab = Vocab::from_json(&read(&dir.join("vocab.json"))?)
            .map_err(|e| ModelError::Bundle(format!("vocab.json: {e}")))?;
        let mut models = Models::init(schema, vocab, meta.config)?;
        let load = |name: &str, store: &mut ParamStore| -> Result<(), ModelError> {
            let path = dir.join(format!("{name}.params"));
            let bytes = fs::read(&path).map_err(io(&path))?;
            let loaded = load_params(&bytes)?;
            store.assign(&loaded)?;
            Ok(())
        };
        load("ner", &mut models.ner_params)?;
        load("ap", &mut models.ap_params)?;
        load("af", &mut models.af_params)?;
        Ok(models)
    }
}
