use rand::Rng;
use serde::Serialize;

use crate::context::{ContextEncoder, DialogueContext, Dropout, EncodeBatch, Vocab};
use crate::dml::DomainSchema;
use crate::neuro::{cross_entropy, softmax, Linear, NeuroError, ParamStore};

use super::ModelConfig;

/// Next-action classifier: context vector, one linear layer, softmax over
/// every API, NLG response and control action of the schema.
#[derive(Debug, Clone)]
pub struct ApModel {
    pub enc: ContextEncoder,
    out: Linear,
    actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionDistribution {
    pub actions: Vec<String>,
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn prob(&self, action: &str) -> Option<f64> {
        self.actions
            .iter()
            .position(|a| a == action)
            .map(|i| self.probs[i])
    }

    /// Actions sorted by decreasing probability.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut out: Vec<(&str, f64)> = self
            .actions
            .iter()
            .map(String::as_str)
            .zip(self.probs.iter().copied())
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }
}

/// Pick the most likely action when it reaches `tau_high`; otherwise sample
/// among actions with probability in `[tau_low, tau_high)` in proportion to
/// their probability; `None` when no action reaches `tau_low`.
pub fn select_action<R: Rng + ?Sized>(
    dist: &ActionDistribution,
    tau_high: f64,
    tau_low: f64,
    rng: &mut R,
) -> Option<usize> {
    let best = dist.argmax();
    if dist.probs.get(best).is_some_and(|p| *p >= tau_high) {
        return Some(best);
    }
    let band: Vec<usize> = (0..dist.probs.len())
        .filter(|&i| dist.probs[i] >= tau_low && dist.probs[i] < tau_high)
        .collect();
    let total: f64 = band.iter().map(|&i| dist.probs[i]).sum();
    if band.is_empty() || total <= 0.0 {
        return None;
    }
    let mut r = rng.random::<f64>() * total;
    for &i in &band {
        r -= dist.probs[i];
        if r < 0.0 {
            return Some(i);
        }
    }
    band.last().copied()
}

impl ApModel {
    pub fn new(
        store: &mut ParamStore,
        schema: &DomainSchema,
        vocab: &Vocab,
        cfg: &ModelConfig,
    ) -> Result<Self, NeuroError> {
        let enc =
            ContextEncoder::new(store, "ap.ctx", cfg.encoder(cfg.ap_features), schema, vocab)?;
        let actions = schema.action_names();
        let out = Linear::new(store, "ap.out", enc.dim(), actions.len())?;
        Ok(ApModel { enc, out, actions })
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn loss(
        &self,
        store: &mut ParamStore,
        batch: &mut EncodeBatch<'_>,
        ctx: &DialogueContext,
        vocab: &Vocab,
        target: usize,
        dropout: Option<Dropout>,
    ) -> Result<f64, NeuroError> {
        let e = batch.encode(store, ctx, vocab, false, dropout)?;
        let logits = self.out.forward(store, &e.vector)?;
        let (loss, dl) = cross_entropy(&logits, target);
        let dv = self.out.backward(store, &e.vector, &dl);
        batch.backward(&e, &dv, None);
        Ok(loss)
    }

    pub fn predict(
        &self,
        store: &ParamStore,
        ctx: &DialogueContext,
        vocab: &Vocab,
    ) -> Result<ActionDistribution, NeuroError> {
        let e = self.enc.batch().encode(store, ctx, vocab, false, None)?;
        let logits = self.out.forward(store, &e.vector)?;
        Ok(ActionDistribution {
            actions: self.actions.clone(),
            probs: softmax(&logits),
        })
    }
}
