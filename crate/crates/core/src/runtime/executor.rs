use std::collections::BTreeMap;
use std::sync::{mpsc, Arc};
use std::time::Duration;

use rand_chacha::ChaCha8Rng;

use crate::dml::{ApiDef, DomainSchema};
use crate::sim::{simulate_api, ApiReturn};

/// Result of one API invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApiOutcome {
    Value(String),
    Nothing,
    Failure(String),
}

/// Anything that can run the API actions chosen by the turn loop. `step`
/// is the index of the action within the current turn.
pub trait Executor {
    fn call(
        &mut self,
        schema: &DomainSchema,
        step: usize,
        api: &ApiDef,
        args: &BTreeMap<String, Vec<String>>,
        rng: &mut ChaCha8Rng,
    ) -> ApiOutcome;
}

/// A live API handler: resolved argument values in, return value out.
pub type Handler =
    Arc<dyn Fn(&BTreeMap<String, Vec<String>>) -> Result<Option<String>, String> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutorMode {
    Live,
    /// APIs without a handler sample their return from the catalog.
    Mock,
}

/// Handler registry with a per-call timeout.
#[derive(Clone)]
pub struct ApiExecutor {
    handlers: BTreeMap<String, Handler>,
    mode: ExecutorMode,
    timeout: Duration,
}

impl std::fmt::Debug for ApiExecutor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ApiExecutor")
            .field("handlers", &self.handlers.keys().collect::<Vec<_>>())
            .field("mode", &self.mode)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl ApiExecutor {
    pub fn mock() -> Self {
        ApiExecutor {
            handlers: BTreeMap::new(),
            mode: ExecutorMode::Mock,
            timeout: Duration::from_secs(5),
        }
    }

    pub fn live() -> Self {
        ApiExecutor {
            mode: ExecutorMode::Live,
            ..ApiExecutor::mock()
        }
    }

    pub fn mode(&self) -> ExecutorMode {
        self.mode
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_handler<F>(mut self, api: &str, handler: F) -> Self
    where
        F: Fn(&BTreeMap<String, Vec<String>>) -> Result<Option<String>, String>
            + Send
            + Sync
            + 'static,
    {
        self.handlers.insert(api.to_string(), Arc::new(handler));
        self
    }

    /// APIs of `schema` this executor cannot serve.
    pub fn missing_handlers(&self, schema: &DomainSchema) -> Vec<String> {
        match self.mode {
            ExecutorMode::Mock => Vec::new(),
            ExecutorMode::Live => schema
                .apis
                .iter()
                .filter(|a| !self.handlers.contains_key(&a.name))
                .map(|a| a.name.clone())
                .collect(),
        }
    }

    fn run(&self, handler: &Handler, args: &BTreeMap<String, Vec<String>>) -> ApiOutcome {
        let (tx, rx) = mpsc::channel();
        let (handler, args) = (Arc::clone(handler), args.clone());
        std::thread::spawn(move || {
            let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| handler(&args)));
            let _ = tx.send(out);
        });
        match rx.recv_timeout(self.timeout) {
            Ok(Ok(Ok(Some(v)))) => ApiOutcome::Value(v),
            Ok(Ok(Ok(None))) => ApiOutcome::Nothing,
            Ok(Ok(Err(e))) => ApiOutcome::Failure(e),
            Ok(Err(_)) => ApiOutcome::Failure("handler panicked".into()),
            Err(_) => ApiOutcome::Failure(format!("timed out after {:?}", self.timeout)),
        }
    }
}

impl Executor for ApiExecutor {
    fn call(
        &mut self,
        schema: &DomainSchema,
        _step: usize,
        api: &ApiDef,
        args: &BTreeMap<String, Vec<String>>,
        rng: &mut ChaCha8Rng,
    ) -> ApiOutcome {
        if let Some(h) = self.handlers.get(&api.name) {
            return self.run(h, args);
        }
        if self.mode == ExecutorMode::Live {
            return ApiOutcome::Failure(format!("no handler for {}", api.name));
        }
        match simulate_api(api, schema, 0.0, rng) {
            Ok(ApiReturn::Value(v)) => ApiOutcome::Value(v),
            Ok(ApiReturn::Nothing) => ApiOutcome::Nothing,
            Ok(ApiReturn::Failure) => ApiOutcome::Failure("sampled failure".into()),
            Err(e) => ApiOutcome::Failure(e.to_string()),
        }
    }
}
