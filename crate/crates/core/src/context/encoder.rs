use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{fnv1a, DialogueContext, EntityMention, MentionSource, Vocab};
use crate::dml::{tokenize, DomainSchema};
use crate::neuro::{Embedding, Forest, Init, Lstm, NeuroError, ParamId, ParamStore};

/// Which context features a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub current_user_utterance: bool,
    pub current_entities: bool,
    pub past_user_utterances: bool,
    pub past_actions: bool,
    pub past_entities: bool,
}

impl FeatureSet {
    pub const ALL: FeatureSet = FeatureSet {
        current_user_utterance: true,
        current_entities: true,
        past_user_utterances: true,
        past_actions: true,
        past_entities: true,
    };

    /// Dialogue-level features only; the tagger reads the utterance itself.
    pub const DIALOGUE: FeatureSet = FeatureSet {
        current_user_utterance: false,
        current_entities: false,
        past_user_utterances: true,
        past_actions: true,
        past_entities: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub embed: usize,
    pub hidden: usize,
    pub window: usize,
    pub type_dim: usize,
    pub features: FeatureSet,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed: 32,
            hidden: 64,
            window: 8,
            type_dim: 8,
            features: FeatureSet::ALL,
        }
    }
}

/// Word-dropout settings: a known token is replaced by its OOV bucket with
/// probability `rate`, decided by hashing `(seed, event, token position)`
/// so the same utterance is perturbed the same way at every prediction
/// point of one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub seed: u64,
    pub rate: f64,
}

impl Dropout {
    fn drops(&self, event: usize, pos: usize) -> bool {
        if self.rate <= 0.0 {
            return false;
        }
        let mut key = [0u8; 24];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(event as u64).to_le_bytes());
        key[16..].copy_from_slice(&(pos as u64).to_le_bytes());
        (fnv1a(&key) >> 11) as f64 / (1u64 << 53) as f64 <= self.rate
    }
}

/// Token rows with word dropout applied.
pub fn token_rows(
    vocab: &Vocab,
    tokens: &[String],
    event: Option<usize>,
    dropout: Option<Dropout>,
) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .map(|(j, t)| match (dropout, event) {
            (Some(d), Some(e)) if vocab.contains(t) && d.drops(e, j) => vocab.oov_row(t),
            _ => vocab.row(t),
        })
        .collect()
}

/// Recurrent encoders over the dialogue context: an inner encoder over
/// utterance tokens, an outer encoder over past utterances, an encoder over
/// past actions, entity presence indicators, and per-mention encodings for
/// the pointer model.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    pub cfg: EncoderConfig,
    pub n_types: usize,
    pub word: Embedding,
    inner: Option<Lstm>,
    outer: Option<Lstm>,
    act_emb: Option<Embedding>,
    act_lstm: Option<Lstm>,
    type_emb: Embedding,
    source_emb: Embedding,
    optional: ParamId,
    type_index: HashMap<String, usize>,
    action_index: HashMap<String, usize>,
    n_actions: usize,
}

/// Encoded view of one context.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub vector: Vec<f64>,
    /// One encoding per mention followed by the optional token's.
    pub mentions: Vec<Vec<f64>>,
    cur: Option<usize>,
    outer: Option<usize>,
    acts: Option<usize>,
    mention_refs: Vec<MentionRef>,
}

#[derive(Debug, Clone)]
struct MentionRef {
    rows: Vec<usize>,
    entity_type: usize,
    source: usize,
}

impl ContextEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: EncoderConfig,
        schema: &DomainSchema,
        vocab: &Vocab,
    ) -> Result<Self, NeuroError> {
        let n_types = schema.entity_types.len();
        let f = cfg.features;
        let word = Embedding::new(store, &format!("{prefix}.word"), vocab.rows(), cfg.embed)?;
        let inner = if f.current_user_utterance || f.past_user_utterances {
            Some(Lstm::new(
                store,
                &format!("{prefix}.inner"),
                cfg.embed + n_types,
                cfg.hidden,
            )?)
        } else {
            None
        };
        let outer = if f.past_user_utterances {
            Some(Lstm::new(
                store,
                &format!("{prefix}.outer"),
                cfg.hidden,
                cfg.hidden,
            )?)
        } else {
            None
        };
        let names = schema.action_names();
        let n_actions = names.len();
        let mut action_index: HashMap<String, usize> =
            names.into_iter().enumerate().map(|(i, n)| (n, i)).collect();
        for (k, api) in schema.apis.iter().enumerate() {
            action_index.insert(format!("{}!failed", api.name), n_actions + k);
        }
        let (act_emb, act_lstm) = if f.past_actions {
            (
                Some(Embedding::new(
                    store,
                    &format!("{prefix}.action"),
                    n_actions + schema.apis.len(),
                    cfg.embed,
                )?),
                Some(Lstm::new(
                    store,
                    &format!("{prefix}.actions"),
                    cfg.embed,
                    cfg.hidden,
                )?),
            )
        } else {
            (None, None)
        };
        let type_emb = Embedding::new(
            store,
            &format!("{prefix}.mention_type"),
            n_types.max(1),
            cfg.type_dim,
        )?;
        let source_emb = Embedding::new(
            store,
            &format!("{prefix}.mention_source"),
            MentionSource::ALL.len(),
            cfg.type_dim,
        )?;
        let mention_dim = cfg.embed + 2 * cfg.type_dim + cfg.window + 4;
        let optional = store.add(
            &format!("{prefix}.optional_token"),
            &[mention_dim],
            Init::Uniform {
                fan_in: mention_dim,
            },
        )?;
        Ok(ContextEncoder {
            cfg,
            n_types,
            word,
            inner,
            outer,
            act_emb,
            act_lstm,
            type_emb,
            source_emb,
            optional,
            type_index: schema
                .entity_types
                .iter()
                .enumerate()
                .map(|(i, t)| (t.name.clone(), i))
                .collect(),
            action_index,
            n_actions,
        })
    }

    pub fn dim(&self) -> usize {
        let f = self.cfg.features;
        let h = self.cfg.hidden;
        let mut d = 0;
        if f.current_user_utterance {
            d += h;
        }
        if f.past_user_utterances {
            d += h;
        }
        if f.past_actions {
            d += h;
        }
        if f.current_entities {
            d += self.n_types;
        }
        if f.past_entities {
            d += 3 * self.n_types;
        }
        d
    }

    pub fn mention_dim(&self) -> usize {
        self.cfg.embed + 2 * self.cfg.type_dim + self.cfg.window + 4
    }

    pub fn type_id(&self, name: &str) -> Option<usize> {
        self.type_index.get(name).copied()
    }

    fn action_row(&self, name: &str, failed: bool) -> usize {
        let key = if failed {
            format!("{name}!failed")
        } else {
            name.to_string()
        };
        self.action_index
            .get(&key)
            .copied()
            .unwrap_or(self.n_actions - 1)
    }

    pub fn batch(&self) -> EncodeBatch<'_> {
        EncodeBatch {
            enc: self,
            inner: self.inner.map(Forest::new),
            inner_keys: HashMap::new(),
            inner_rows: Vec::new(),
            outer: self.outer.map(Forest::new),
            outer_keys: HashMap::new(),
            outer_inputs: Vec::new(),
            acts: self.act_lstm.map(Forest::new),
            act_keys: HashMap::new(),
            act_inputs: Vec::new(),
            dh_inner: Vec::new(),
            dh_outer: Vec::new(),
            dh_acts: Vec::new(),
            d_words: HashMap::new(),
            d_types: HashMap::new(),
            d_sources: HashMap::new(),
            d_optional: Vec::new(),
        }
    }

    /// Encode a single context.
    pub fn encode(
        &self,
        store: &ParamStore,
        ctx: &DialogueContext,
        vocab: &Vocab,
    ) -> Result<Encoded, NeuroError> {
        self.batch().encode(store, ctx, vocab, true, None)
    }
}

/// Contexts encoded together share every common utterance, turn prefix and
/// action prefix. Gradients are accumulated with [`EncodeBatch::backward`]
/// and pushed into the store by [`EncodeBatch::finish`].
pub struct EncodeBatch<'e> {
    enc: &'e ContextEncoder,
    inner: Option<Forest>,
    inner_keys: HashMap<Vec<(usize, usize)>, Option<usize>>,
    inner_rows: Vec<usize>,
    outer: Option<Forest>,
    outer_keys: HashMap<(Option<usize>, Option<usize>), usize>,
    outer_inputs: Vec<Option<usize>>,
    acts: Option<Forest>,
    act_keys: HashMap<(Option<usize>, usize), usize>,
    act_inputs: Vec<usize>,
    dh_inner: Vec<Vec<f64>>,
    dh_outer: Vec<Vec<f64>>,
    dh_acts: Vec<Vec<f64>>,
    d_words: HashMap<usize, Vec<f64>>,
    d_types: HashMap<usize, Vec<f64>>,
    d_sources: HashMap<usize, Vec<f64>>,
    d_optional: Vec<f64>,
}

fn add(acc: &mut Vec<f64>, g: &[f64]) {
    if acc.is_empty() {
        acc.resize(g.len(), 0.0);
    }
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn grow(v: &mut Vec<Vec<f64>>, n: usize) {
    if v.len() < n {
        v.resize(n, Vec::new());
    }
}

impl<'e> EncodeBatch<'e> {
    /// Inner-encoder node of an utterance given its token rows and
    /// per-token type tags (0 = none, t+1 = entity type t).
    fn utterance(
        &mut self,
        store: &ParamStore,
        rows: &[usize],
        tags: &[usize],
    ) -> Result<Option<usize>, NeuroError> {
        let key: Vec<(usize, usize)> = rows.iter().copied().zip(tags.iter().copied()).collect();
        if let Some(&node) = self.inner_keys.get(&key) {
            return Ok(node);
        }
        let forest = self.inner.as_mut().expect("inner encoder present");
        let (embed, n_types) = (self.enc.cfg.embed, self.enc.n_types);
        let mut prev = None;
        let mut x = vec![0.0; embed + n_types];
        for (&r, &t) in rows.iter().zip(tags) {
            x[..embed].copy_from_slice(self.enc.word.lookup(store, r));
            x[embed..].fill(0.0);
            if t > 0 {
                x[embed + t - 1] = 1.0;
            }
            prev = Some(forest.push(store, prev, &x)?);
            self.inner_rows.push(r);
        }
        self.inner_keys.insert(key, prev);
        Ok(prev)
    }

    fn tags(&self, ctx: &DialogueContext, event: usize, len: usize) -> Vec<usize> {
        let mut tags = vec![0; len];
        for (s, e, t) in ctx.user_spans(event) {
            if let Some(ti) = self.enc.type_id(t) {
                for tag in tags.iter_mut().take(e.min(len)).skip(s) {
                    *tag = ti + 1;
                }
            }
        }
        tags
    }

    pub fn encode(
        &mut self,
        store: &ParamStore,
        ctx: &DialogueContext,
        vocab: &Vocab,
        with_mentions: bool,
        dropout: Option<Dropout>,
    ) -> Result<Encoded, NeuroError> {
        let enc = self.enc;
        let f = enc.cfg.features;
        let mut vector = Vec::with_capacity(enc.dim());
        let mut out = Encoded {
            vector: Vec::new(),
            mentions: Vec::new(),
            cur: None,
            outer: None,
            acts: None,
            mention_refs: Vec::new(),
        };
        if f.current_user_utterance {
            let rows = token_rows(
                vocab,
                &ctx.current_user_utterance,
                ctx.current_event,
                dropout,
            );
            let tags = match ctx.current_event {
                Some(e) => self.tags(ctx, e, rows.len()),
                None => vec![0; rows.len()],
            };
            out.cur = self.utterance(store, &rows, &tags)?;
            vector.extend_from_slice(self.inner.as_ref().unwrap().h(out.cur));
        }
        if f.past_user_utterances {
            let mut prev = None;
            for (tokens, &event) in ctx.past_user_utterances.iter().zip(&ctx.past_user_events) {
                let rows = token_rows(vocab, tokens, Some(event), dropout);
                let tags = self.tags(ctx, event, rows.len());
                let u = self.utterance(store, &rows, &tags)?;
                let key = (prev, u);
                prev = Some(match self.outer_keys.get(&key) {
                    Some(&n) => n,
                    None => {
                        let x = self.inner.as_ref().unwrap().h(u).to_vec();
                        let n = self.outer.as_mut().unwrap().push(store, prev, &x)?;
                        self.outer_inputs.push(u);
                        self.outer_keys.insert(key, n);
                        n
                    }
                });
            }
            out.outer = prev;
            vector.extend_from_slice(self.outer.as_ref().unwrap().h(prev));
        }
        if f.past_actions {
            let emb = enc.act_emb.unwrap();
            let mut prev = None;
            for a in &ctx.past_actions {
                let row = enc.action_row(&a.name, a.failed);
                let key = (prev, row);
                prev = Some(match self.act_keys.get(&key) {
                    Some(&n) => n,
                    None => {
                        let n = self.acts.as_mut().unwrap().push(
                            store,
                            prev,
                            emb.lookup(store, row),
                        )?;
                        self.act_inputs.push(row);
                        self.act_keys.insert(key, n);
                        n
                    }
                });
            }
            out.acts = prev;
            vector.extend_from_slice(self.acts.as_ref().unwrap().h(prev));
        }
        let nt = enc.n_types;
        if f.current_entities {
            let mut bag = vec![0.0; nt];
            for m in &ctx.current_entities {
                if let Some(t) = enc.type_id(&m.entity_type) {
                    bag[t] = 1.0;
                }
            }
            vector.extend(bag);
        }
        if f.past_entities {
            let mut bag = vec![0.0; 3 * nt];
            for m in &ctx.past_entities {
                if let Some(t) = enc.type_id(&m.entity_type) {
                    bag[m.source.index() * nt + t] = 1.0;
                }
            }
            vector.extend(bag);
        }
        debug_assert_eq!(vector.len(), enc.dim());
        out.vector = vector;
        if with_mentions {
            self.mentions(store, ctx, vocab, dropout, &mut out);
        }
        Ok(out)
    }

    fn mentions(
        &self,
        store: &ParamStore,
        ctx: &DialogueContext,
        vocab: &Vocab,
        dropout: Option<Dropout>,
        out: &mut Encoded,
    ) {
        let enc = self.enc;
        let (embed, w) = (enc.cfg.embed, enc.cfg.window);
        let all: Vec<&EntityMention> = ctx.mentions().collect();
        let mut latest_event: HashMap<&str, usize> = HashMap::new();
        let mut latest_turn: HashMap<&str, usize> = HashMap::new();
        for m in &all {
            let e = latest_event.entry(&m.entity_type).or_insert(m.event);
            *e = (*e).max(m.event);
            let t = latest_turn.entry(&m.entity_type).or_insert(m.turn);
            *t = (*t).max(m.turn);
        }
        for m in &all {
            let tokens = tokenize(&m.value);
            // value tokens are perturbed like utterance tokens, keyed past the
            // utterance positions so the two never collide
            let rows = token_rows(
                vocab,
                &tokens,
                Some(m.event),
                dropout.map(|d| Dropout {
                    seed: d.seed ^ 0x9e37_79b9,
                    ..d
                }),
            );
            let t = enc.type_id(&m.entity_type).unwrap_or(0);
            let s = m.source.index();
            let mut v = vec![0.0; enc.mention_dim()];
            if !rows.is_empty() {
                let scale = 1.0 / rows.len() as f64;
                for &r in &rows {
                    for (a, b) in v[..embed].iter_mut().zip(enc.word.lookup(store, r)) {
                        *a += scale * b;
                    }
                }
            }
            let mut o = embed;
            v[o..o + enc.cfg.type_dim].copy_from_slice(enc.type_emb.lookup(store, t));
            o += enc.cfg.type_dim;
            v[o..o + enc.cfg.type_dim].copy_from_slice(enc.source_emb.lookup(store, s));
            o += enc.cfg.type_dim;
            v[o + ctx.turn.saturating_sub(m.turn).min(w)] = 1.0;
            o += w + 1;
            if latest_event.get(m.entity_type.as_str()) == Some(&m.event) {
                v[o] = 1.0;
            }
            if latest_turn.get(m.entity_type.as_str()) == Some(&m.turn) {
                v[o + 1] = 1.0;
            }
            if ctx.current_event == Some(m.event) {
                v[o + 2] = 1.0;
            }
            out.mentions.push(v);
            out.mention_refs.push(MentionRef {
                rows,
                entity_type: t,
                source: s,
            });
        }
        out.mentions.push(store.value(enc.optional).data().to_vec());
    }

    /// Accumulate gradients for one encoded context.
    pub fn backward(&mut self, e: &Encoded, d_vector: &[f64], d_mentions: Option<&[Vec<f64>]>) {
        let enc = self.enc;
        let f = enc.cfg.features;
        let h = enc.cfg.hidden;
        let mut o = 0;
        let zero = d_vector.is_empty();
        if f.current_user_utterance {
            if let (Some(n), false) = (e.cur, zero) {
                grow(&mut self.dh_inner, n + 1);
                add(&mut self.dh_inner[n], &d_vector[o..o + h]);
            }
            o += h;
        }
        if f.past_user_utterances {
            if let (Some(n), false) = (e.outer, zero) {
                grow(&mut self.dh_outer, n + 1);
                add(&mut self.dh_outer[n], &d_vector[o..o + h]);
            }
            o += h;
        }
        if f.past_actions {
            if let (Some(n), false) = (e.acts, zero) {
                grow(&mut self.dh_acts, n + 1);
                add(&mut self.dh_acts[n], &d_vector[o..o + h]);
            }
        }
        let Some(dm) = d_mentions else {
            return;
        };
        let (embed, td) = (enc.cfg.embed, enc.cfg.type_dim);
        for (r, g) in e.mention_refs.iter().zip(dm) {
            if g.iter().all(|x| *x == 0.0) {
                continue;
            }
            if !r.rows.is_empty() {
                let scale = 1.0 / r.rows.len() as f64;
                let gw: Vec<f64> = g[..embed].iter().map(|x| x * scale).collect();
                for &row in &r.rows {
                    add(self.d_words.entry(row).or_default(), &gw);
                }
            }
            add(
                self.d_types.entry(r.entity_type).or_default(),
                &g[embed..embed + td],
            );
            add(
                self.d_sources.entry(r.source).or_default(),
                &g[embed + td..embed + 2 * td],
            );
        }
        if let Some(g) = dm.get(e.mention_refs.len()) {
            add(&mut self.d_optional, g);
        }
    }

    /// Backpropagate everything accumulated into the parameter store.
    pub fn finish(self, store: &mut ParamStore) {
        let enc = self.enc;
        let embed = enc.cfg.embed;
        if let (Some(forest), Some(emb)) = (&self.acts, enc.act_emb) {
            let dx = forest.backward(store, self.dh_acts);
            for (row, g) in self.act_inputs.iter().zip(dx) {
                emb.accumulate(store, *row, &g);
            }
        }
        let mut dh_inner = self.dh_inner;
        if let Some(forest) = &self.outer {
            let dx = forest.backward(store, self.dh_outer);
            for (u, g) in self.outer_inputs.iter().zip(dx) {
                if let Some(n) = u {
                    grow(&mut dh_inner, n + 1);
                    add(&mut dh_inner[*n], &g);
                }
            }
        }
        if let Some(forest) = &self.inner {
            let dx = forest.backward(store, dh_inner);
            for (row, g) in self.inner_rows.iter().zip(dx) {
                enc.word.accumulate(store, *row, &g[..embed]);
            }
        }
        for (row, g) in self.d_words {
            enc.word.accumulate(store, row, &g);
        }
        for (t, g) in self.d_types {
            enc.type_emb.accumulate(store, t, &g);
        }
        for (s, g) in self.d_sources {
            enc.source_emb.accumulate(store, s, &g);
        }
        if !self.d_optional.is_empty() {
            for (a, b) in store
                .grad_mut(enc.optional)
                .data_mut()
                .iter_mut()
                .zip(&self.d_optional)
            {
                *a += b;
            }
        }
    }
}
