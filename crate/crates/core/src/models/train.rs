use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::context::{extract_features_at, ContextEncoder, Dropout, EncodeBatch, Vocab};
use crate::dml::{AnnotatedDialogue, ArgValue, DialogueEvent, DomainSchema};
use crate::neuro::{Adam, NeuroError, ParamStore};

use super::catalogue::CatalogueFeatures;
use super::{ModelConfig, ModelError, Models};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EpochLosses {
    pub ner: f64,
    pub ap: f64,
    pub af: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExampleCounts {
    pub ner: usize,
    pub ap: usize,
    pub af: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub examples: ExampleCounts,
    /// Mean loss per example of every epoch.
    pub epochs: Vec<EpochLosses>,
}

struct NerExample {
    n: usize,
    gold: Vec<usize>,
    cat: CatalogueFeatures,
}

struct ApExample {
    n: usize,
    target: usize,
}

struct AfExample {
    n: usize,
    action: String,
    args: BTreeMap<String, ArgValue>,
}

/// Examples grouped by dialogue index.
type Grouped<E> = Vec<Vec<E>>;

fn first_user(d: &AnnotatedDialogue) -> Option<usize> {
    d.events.iter().position(DialogueEvent::is_user)
}

/// Per-dialogue word-dropout seed for one epoch.
fn dropout_seed(seed: u64, model: u64, epoch: usize, dialogue: usize) -> u64 {
    crate::sim::dialogue_rng(
        seed ^ model.wrapping_mul(0x2545_f491_4f6c_dd1d),
        (epoch as u64) << 32 | dialogue as u64,
    )
    .random()
}

/// Minibatch loop shared by the three models: each step encodes the
/// examples of `batch_size` dialogues in one [`EncodeBatch`], averages the
/// gradients over scored examples and takes an Adam step.
fn fit<E, F>(
    store: &mut ParamStore,
    enc: &ContextEncoder,
    examples: &Grouped<E>,
    cfg: &ModelConfig,
    model: u64,
    mut example_loss: F,
) -> Result<Vec<f64>, NeuroError>
where
    F: FnMut(
        &mut ParamStore,
        &mut EncodeBatch<'_>,
        usize,
        &E,
        Option<Dropout>,
    ) -> Result<Option<(f64, usize)>, NeuroError>,
{
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = (0..examples.len())
        .filter(|&i| !examples[i].is_empty())
        .collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    store.zero_grads();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (model << 48) ^ epoch as u64);
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut batch = enc.batch();
            let mut count = 0usize;
            for &di in chunk {
                let dropout = (cfg.word_dropout > 0.0).then(|| Dropout {
                    seed: dropout_seed(cfg.seed, model, epoch, di),
                    rate: cfg.word_dropout,
                });
                for ex in &examples[di] {
                    if let Some((loss, n)) = example_loss(store, &mut batch, di, ex, dropout)? {
                        total += loss;
                        count += n;
                    }
                }
            }
            batch.finish(store);
            if count == 0 {
                store.zero_grads();
                continue;
            }
            seen += count;
            store.scale_grads(1.0 / count as f64);
            adam.step(store)?;
        }
        losses.push(if seen > 0 { total / seen as f64 } else { 0.0 });
    }
    Ok(losses)
}

type Examples = (Grouped<NerExample>, Grouped<ApExample>, Grouped<AfExample>);

fn collect(corpus: &[AnnotatedDialogue], models: &Models) -> Result<Examples, ModelError> {
    let (schema, window) = (&models.schema, models.config.window);
    let mut ner = Vec::with_capacity(corpus.len());
    let mut ap = Vec::with_capacity(corpus.len());
    let mut af = Vec::with_capacity(corpus.len());
    for d in corpus {
        let start = first_user(d).unwrap_or(d.events.len());
        let (mut n_ex, mut a_ex, mut f_ex) = (Vec::new(), Vec::new(), Vec::new());
        for (i, ev) in d.events.iter().enumerate() {
            match ev {
                DialogueEvent::User { spans, .. } => {
                    let ctx = extract_features_at(d, i + 1, schema, window);
                    if ctx.current_user_utterance.is_empty() {
                        continue;
                    }
                    let gold = models
                        .ner
                        .gold_tags(spans, ctx.current_user_utterance.len());
                    let cat = models.ner.catalogue(&ctx);
                    n_ex.push(NerExample {
                        n: i + 1,
                        gold,
                        cat,
                    });
                }
                _ if i > start => {
                    let name = ev.action_name().unwrap_or_default();
                    let target = models.ap.action_index(name).ok_or_else(|| {
                        ModelError::Bundle(format!("action {name} is not in the schema"))
                    })?;
                    a_ex.push(ApExample { n: i, target });
                    if let Some(args) = ev.args() {
                        if !models.af.args_of(name).is_empty() {
                            f_ex.push(AfExample {
                                n: i,
                                action: name.to_string(),
                                args: args.clone(),
                            });
                        }
                    }
                }
                _ => {}
            }
        }
        ner.push(n_ex);
        ap.push(a_ex);
        af.push(f_ex);
    }
    Ok((ner, ap, af))
}

/// Build the vocabulary, initialise the three models and train them on
/// `corpus`.
pub fn train(
    corpus: &[AnnotatedDialogue],
    schema: &DomainSchema,
    config: &ModelConfig,
) -> Result<(Models, TrainReport), ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let vocab = Vocab::build(schema, corpus, config.oov_buckets);
    let mut models = Models::init(schema.clone(), vocab, config.clone())?;
    let report = train_models(&mut models, corpus)?;
    Ok((models, report))
}

/// Train already initialised models in place.
pub fn train_models(
    models: &mut Models,
    corpus: &[AnnotatedDialogue],
) -> Result<TrainReport, ModelError> {
    let (ner_ex, ap_ex, af_ex) = collect(corpus, models)?;
    let examples = ExampleCounts {
        ner: ner_ex.iter().map(Vec::len).sum(),
        ap: ap_ex.iter().map(Vec::len).sum(),
        af: af_ex.iter().map(Vec::len).sum(),
    };
    let Models {
        schema,
        vocab,
        config,
        ner,
        ner_params,
        ap,
        ap_params,
        af,
        af_params,
    } = models;
    let (schema, vocab, cfg) = (&*schema, &*vocab, &*config);
    let window = cfg.window;
    let (ner, ap, af) = (&*ner, &*ap, &*af);

    let run_ner = |store: &mut ParamStore| {
        fit(
            store,
            &ner.enc,
            &ner_ex,
            cfg,
            1,
            |store, batch, di, ex: &NerExample, dropout| {
                let ctx = extract_features_at(&corpus[di], ex.n, schema, window);
                Ok(ner
                    .loss(store, batch, &ctx, vocab, &ex.cat, &ex.gold, dropout)?
                    .map(|l| (l, 1)))
            },
        )
    };
    let run_ap = |store: &mut ParamStore| {
        fit(
            store,
            &ap.enc,
            &ap_ex,
            cfg,
            2,
            |store, batch, di, ex: &ApExample, dropout| {
                let ctx = extract_features_at(&corpus[di], ex.n, schema, window);
                Ok(Some((
                    ap.loss(store, batch, &ctx, vocab, ex.target, dropout)?,
                    1,
                )))
            },
        )
    };
    let run_af = |store: &mut ParamStore| {
        fit(
            store,
            &af.enc,
            &af_ex,
            cfg,
            3,
            |store, batch, di, ex: &AfExample, dropout| {
                let ctx = extract_features_at(&corpus[di], ex.n, schema, window);
                let (loss, n) =
                    af.loss(store, batch, &ctx, vocab, &ex.action, &ex.args, dropout)?;
                Ok((n > 0).then_some((loss, n)))
            },
        )
    };

    let threads = match cfg.threads {
        0 => std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1),
        n => n,
    };
    let (l_ner, l_ap, l_af) = if threads > 1 {
        std::thread::scope(|s| {
            let h_ner = s.spawn(|| run_ner(ner_params));
            let h_ap = s.spawn(|| run_ap(ap_params));
            let l_af = run_af(af_params);
            (
                h_ner.join().expect("tagger training thread"),
                h_ap.join().expect("action training thread"),
                l_af,
            )
        })
    } else {
        (run_ner(ner_params), run_ap(ap_params), run_af(af_params))
    };
    let (l_ner, l_ap, l_af) = (l_ner?, l_ap?, l_af?);
    let epochs = (0..cfg.epochs)
        .map(|e| EpochLosses {
            ner: l_ner[e],
            ap: l_ap[e],
            af: l_af[e],
        })
        .collect();
    Ok(TrainReport { examples, epochs })
}
