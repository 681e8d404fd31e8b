use crate::context::{
    token_rows, ContextEncoder, DialogueContext, Dropout, EncodeBatch, EntityMention,
    MentionSource, Vocab,
};
use crate::dml::{DomainSchema, Span};
use crate::neuro::{
    bio_mask, CrfLayer, Direction, Linear, NeuroError, ParamStore, SequenceEncoder, Tensor,
};

use super::catalogue::{catalogue_features, CatalogueFeatures, StaticCatalogs};
use super::ModelConfig;

/// BiLSTM-CRF entity tagger over `O, B-t, I-t` tags. Each token's input is
/// its word embedding, its catalogue indicators and a projection of the
/// dialogue-level context.
#[derive(Debug, Clone)]
pub struct NerModel {
    pub enc: ContextEncoder,
    proj: Linear,
    tagger: SequenceEncoder,
    emit: Linear,
    crf: CrfLayer,
    statics: StaticCatalogs,
    type_names: Vec<String>,
    pub dynamic: bool,
    pub window: usize,
    pub threshold: f64,
}

/// Gold tag sequence for `len` tokens.
pub fn bio_tags(spans: &[(usize, usize, usize)], len: usize) -> Vec<usize> {
    let mut tags = vec![0; len];
    for &(s, e, t) in spans {
        for (k, tag) in tags.iter_mut().enumerate().take(e.min(len)).skip(s) {
            *tag = if k == s { 1 + 2 * t } else { 2 + 2 * t };
        }
    }
    tags
}

/// Spans `(start, end, type)` of a well-formed BIO path.
pub fn bio_spans(path: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    for (i, &tag) in path.iter().enumerate() {
        let inside = tag > 0 && tag % 2 == 0;
        match (open, tag) {
            (Some((_, t)), _) if inside && (tag - 2) / 2 == t => continue,
            (Some((s, t)), _) => {
                out.push((s, i, t));
                open = None;
            }
            _ => {}
        }
        if tag > 0 {
            // an I tag without its B opens a span, which a masked decode never produces
            open = Some((i, (tag - 1) / 2));
        }
    }
    if let Some((s, t)) = open {
        out.push((s, path.len(), t));
    }
    out
}

impl NerModel {
    pub fn new(
        store: &mut ParamStore,
        schema: &DomainSchema,
        vocab: &Vocab,
        cfg: &ModelConfig,
    ) -> Result<Self, NeuroError> {
        let enc = ContextEncoder::new(
            store,
            "ner.ctx",
            cfg.encoder(cfg.ner_features),
            schema,
            vocab,
        )?;
        let n_types = schema.entity_types.len();
        let proj = Linear::new(store, "ner.ctx_proj", enc.dim(), cfg.ner_context)?;
        let input = cfg.embed + 2 * n_types + cfg.ner_context;
        let tagger = SequenceEncoder::new(store, "ner.bilstm", input, cfg.hidden, Direction::Bi)?;
        let tags = 1 + 2 * n_types;
        let emit = Linear::new(store, "ner.emit", tagger.output_dim(), tags)?;
        let (tm, sm) = bio_mask(n_types);
        let crf = CrfLayer::new(store, "ner.crf", tags, tm, sm)?;
        let statics = StaticCatalogs::from_schema(schema);
        Ok(NerModel {
            enc,
            proj,
            tagger,
            emit,
            crf,
            window: if cfg.catalogue_window == 0 {
                statics.max_len + 1
            } else {
                cfg.catalogue_window
            },
            statics,
            type_names: schema.entity_types.iter().map(|t| t.name.clone()).collect(),
            dynamic: cfg.dynamic_catalog,
            threshold: cfg.fuzzy_threshold,
        })
    }

    pub fn tag_count(&self) -> usize {
        1 + 2 * self.type_names.len()
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    /// Catalogue features of the context's current utterance.
    pub fn catalogue(&self, ctx: &DialogueContext) -> CatalogueFeatures {
        let dynamic: Vec<(usize, String)> = if self.dynamic {
            ctx.dynamic_catalog
                .iter()
                .filter_map(|(t, v)| self.enc.type_id(t).map(|i| (i, v.clone())))
                .collect()
        } else {
            Vec::new()
        };
        let n = self.window.max(
            dynamic
                .iter()
                .map(|(_, v)| v.split_whitespace().count() + 1)
                .max()
                .unwrap_or(1),
        );
        catalogue_features(
            &ctx.current_user_utterance,
            &self.statics,
            &dynamic,
            n,
            self.threshold,
        )
    }

    fn inputs(
        &self,
        store: &ParamStore,
        rows: &[usize],
        cat: &CatalogueFeatures,
        c: &[f64],
    ) -> Vec<Vec<f64>> {
        rows.iter()
            .zip(&cat.rows)
            .map(|(&r, k)| {
                let mut x = Vec::with_capacity(self.tagger.input);
                x.extend_from_slice(self.enc.word.lookup(store, r));
                x.extend_from_slice(k);
                x.extend_from_slice(c);
                x
            })
            .collect()
    }

    /// CRF loss of one utterance; gradients go to the store (tagger) and the
    /// batch (context encoder). Returns `None` for empty utterances.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        store: &mut ParamStore,
        batch: &mut EncodeBatch<'_>,
        ctx: &DialogueContext,
        vocab: &Vocab,
        cat: &CatalogueFeatures,
        gold: &[usize],
        dropout: Option<Dropout>,
    ) -> Result<Option<f64>, NeuroError> {
        if ctx.current_user_utterance.is_empty() {
            return Ok(None);
        }
        let e = batch.encode(store, ctx, vocab, false, dropout)?;
        let z = self.proj.forward(store, &e.vector)?;
        let c: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        let rows = token_rows(
            vocab,
            &ctx.current_user_utterance,
            ctx.current_event,
            dropout,
        );
        let xs = self.inputs(store, &rows, cat, &c);
        let tape = self.tagger.encode(store, &xs)?;
        let mut em = Vec::with_capacity(rows.len() * self.tag_count());
        for o in &tape.outputs {
            em.extend(self.emit.forward(store, o)?);
        }
        let em = Tensor::from_vec(&[rows.len(), self.tag_count()], em)?;
        let (loss, dem) = self.crf.nll(store, &em, gold)?;
        let d_out: Vec<Vec<f64>> = tape
            .outputs
            .iter()
            .enumerate()
            .map(|(i, o)| self.emit.backward(store, o, dem.row(i)))
            .collect();
        let dxs = self.tagger.backward(store, &tape, &d_out, &[]);
        let embed = self.enc.cfg.embed;
        let ctx_off = embed + cat.width();
        let mut dc = vec![0.0; c.len()];
        for (&r, dx) in rows.iter().zip(&dxs) {
            self.enc.word.accumulate(store, r, &dx[..embed]);
            for (a, b) in dc.iter_mut().zip(&dx[ctx_off..]) {
                *a += b;
            }
        }
        let dz: Vec<f64> = dc.iter().zip(&c).map(|(d, c)| d * (1.0 - c * c)).collect();
        let dv = self.proj.backward(store, &e.vector, &dz);
        batch.backward(&e, &dv, None);
        Ok(Some(loss))
    }

    pub fn emissions(
        &self,
        store: &ParamStore,
        ctx: &DialogueContext,
        vocab: &Vocab,
    ) -> Result<Tensor, NeuroError> {
        let mut batch = self.enc.batch();
        let e = batch.encode(store, ctx, vocab, false, None)?;
        let c: Vec<f64> = self
            .proj
            .forward(store, &e.vector)?
            .iter()
            .map(|v| v.tanh())
            .collect();
        let rows = token_rows(vocab, &ctx.current_user_utterance, None, None);
        let cat = self.catalogue(ctx);
        let xs = self.inputs(store, &rows, &cat, &c);
        let tape = self.tagger.encode(store, &xs)?;
        let mut em = Vec::with_capacity(rows.len() * self.tag_count());
        for o in &tape.outputs {
            em.extend(self.emit.forward(store, o)?);
        }
        Tensor::from_vec(&[rows.len(), self.tag_count()], em)
    }

    /// Tag the current utterance. Mentions carry no variable; positions
    /// continue after the context's existing mentions.
    pub fn tag(
        &self,
        store: &ParamStore,
        ctx: &DialogueContext,
        vocab: &Vocab,
    ) -> Result<Vec<EntityMention>, NeuroError> {
        if ctx.current_user_utterance.is_empty() {
            return Ok(Vec::new());
        }
        let em = self.emissions(store, ctx, vocab)?;
        let path = self.crf.decode(store, &em)?;
        Ok(self.mentions_from_path(ctx, &path))
    }

    pub fn mentions_from_path(&self, ctx: &DialogueContext, path: &[usize]) -> Vec<EntityMention> {
        let base = ctx.past_entities.len();
        bio_spans(path)
            .into_iter()
            .enumerate()
            .map(|(k, (s, e, t))| EntityMention {
                value: ctx.current_user_utterance[s..e].join(" "),
                entity_type: self.type_names[t].clone(),
                source: MentionSource::User,
                turn: ctx.turn,
                event: ctx.current_event.unwrap_or(usize::MAX),
                position: base + k,
                var: None,
                span: Some((s, e)),
            })
            .collect()
    }

    /// Gold tags for the spans of a user event.
    pub fn gold_tags(&self, spans: &[Span], len: usize) -> Vec<usize> {
        let triples: Vec<(usize, usize, usize)> = spans
            .iter()
            .filter_map(|s| {
                self.enc
                    .type_id(&s.entity_type)
                    .map(|t| (s.start, s.end, t))
            })
            .collect();
        bio_tags(&triples, len)
    }
}
