use std::collections::BTreeMap;
use std::path::PathBuf;

use dialoguekit::context::{extract_features_at, Dropout, Vocab};
use dialoguekit::dml::{
    parse_corpus, parse_domain, tokenize, AnnotatedDialogue, ArgValue, DialogueEvent, DomainSchema,
};
use dialoguekit::models::{
    catalogue_features, train, Binding, ModelConfig, ModelError, Models, StaticCatalogs,
};
use dialoguekit::neuro::finite_diff_check;

fn load(name: &str) -> (DomainSchema, Vec<AnnotatedDialogue>) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../domains")
        .join(name);
    let schema = parse_domain(&std::fs::read_to_string(dir.join("schema.json")).unwrap()).unwrap();
    let seeds = parse_corpus(
        &std::fs::read_to_string(dir.join("seeds.jsonl")).unwrap(),
        &schema,
    )
    .unwrap();
    (schema, seeds)
}

fn table1() -> (DomainSchema, AnnotatedDialogue) {
    let (schema, seeds) = load("ticketbot");
    let d = seeds
        .into_iter()
        .find(|d| d.id.as_deref() == Some("ticket-seed-table1"))
        .unwrap();
    (schema, d)
}

fn small() -> ModelConfig {
    ModelConfig {
        embed: 6,
        hidden: 5,
        window: 4,
        type_dim: 3,
        oov_buckets: 16,
        ner_context: 4,
        pointer_query: 3,
        seed: 9,
        ..ModelConfig::default()
    }
}

fn toks(s: &str) -> Vec<String> {
    tokenize(s)
}

#[test]
fn static_catalogue_flags_whole_entries() {
    let (schema, _) = load("ticketbot");
    let statics = StaticCatalogs::from_schema(&schema);
    let f = catalogue_features(
        &toks("how long is la la land"),
        &statics,
        &[],
        statics.max_len,
        0.8,
    );
    assert_eq!(f.width(), 2 * schema.entity_types.len());
    assert_eq!(f.flagged(0), vec![3, 4, 5]);
    // a partial entry is not a match
    let f = catalogue_features(&toks("is la la on"), &statics, &[], statics.max_len, 0.8);
    assert!(f.flagged(0).is_empty());
    let showing = schema.entity_type_index("ShowingTitle").unwrap();
    let f = catalogue_features(
        &toks("the silent harbor"),
        &statics,
        &[],
        statics.max_len,
        0.8,
    );
    assert!(f.flagged(showing).is_empty());
}

#[test]
fn dynamic_catalogue_matches_fuzzily() {
    let (schema, _) = load("ticketbot");
    let n = schema.entity_types.len();
    let statics = StaticCatalogs::empty(n);
    let dynamic = vec![(0, "The Silent Harbor".to_string())];
    let tokens = toks("tell me about the silent harbour");
    let f = catalogue_features(&tokens, &statics, &dynamic, 4, 0.8);
    assert_eq!(f.flagged(n), vec![3, 4, 5]);
    assert!(f.rows.iter().all(|r| r[..n].iter().all(|x| *x == 0.0)));
    let exact = catalogue_features(&tokens, &statics, &dynamic, 4, 1.0);
    assert!(exact.flagged(n).is_empty());
    let hit = catalogue_features(
        &toks("the silent harbor please"),
        &statics,
        &dynamic,
        4,
        1.0,
    );
    assert_eq!(hit.flagged(n), vec![0, 1, 2]);
}

#[test]
fn no_catalogs_give_zero_features() {
    let statics = StaticCatalogs::empty(3);
    let f = catalogue_features(&toks("large pizza with olives"), &statics, &[], 3, 0.8);
    assert_eq!(f.rows.len(), 4);
    assert!(f.rows.iter().flatten().all(|x| *x == 0.0));
}

#[test]
fn tagger_loss_gradient() {
    let (schema, d) = table1();
    let cfg = small();
    let vocab = Vocab::build(&schema, std::slice::from_ref(&d), cfg.oov_buckets);
    let mut m = Models::init(schema.clone(), vocab.clone(), cfg.clone()).unwrap();
    let users: Vec<usize> = d
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_user())
        .map(|(i, _)| i + 1)
        .collect();
    let ner = m.ner.clone();
    let dropout = Some(Dropout { seed: 3, rate: 0.2 });
    let check = finite_diff_check(&mut m.ner_params, 1e-5, 60, |s| {
        let mut batch = ner.enc.batch();
        let mut total = 0.0;
        for &n in &users {
            let ctx = extract_features_at(&d, n, &schema, cfg.window);
            let spans = match &d.events[n - 1] {
                DialogueEvent::User { spans, .. } => spans.clone(),
                _ => unreachable!(),
            };
            let gold = ner.gold_tags(&spans, ctx.current_user_utterance.len());
            let cat = ner.catalogue(&ctx);
            total += ner
                .loss(s, &mut batch, &ctx, &vocab, &cat, &gold, dropout)?
                .unwrap();
        }
        batch.finish(s);
        Ok(total)
    })
    .unwrap();
    assert!(check.max_rel_error < 1e-4, "{check:?}");
}

#[test]
fn action_loss_gradient() {
    let (schema, d) = table1();
    let cfg = small();
    let vocab = Vocab::build(&schema, std::slice::from_ref(&d), cfg.oov_buckets);
    let mut m = Models::init(schema.clone(), vocab.clone(), cfg.clone()).unwrap();
    let ap = m.ap.clone();
    let check = finite_diff_check(&mut m.ap_params, 1e-5, 60, |s| {
        let mut batch = ap.enc.batch();
        let mut total = 0.0;
        for (i, ev) in d.events.iter().enumerate().skip(3) {
            if ev.is_user() {
                continue;
            }
            let ctx = extract_features_at(&d, i, &schema, cfg.window);
            let target = ap.action_index(ev.action_name().unwrap()).unwrap();
            total += ap.loss(s, &mut batch, &ctx, &vocab, target, None)?;
        }
        batch.finish(s);
        Ok(total)
    })
    .unwrap();
    assert!(check.max_rel_error < 1e-4, "{check:?}");
}

#[test]
fn pointer_loss_gradient() {
    let (schema, seeds) = load("pizzabot");
    let cfg = small();
    let vocab = Vocab::build(&schema, &seeds, cfg.oov_buckets);
    let mut m = Models::init(schema.clone(), vocab.clone(), cfg.clone()).unwrap();
    let af = m.af.clone();
    // single-valued, optional and multi-valued arguments all occur in OrderPizza
    let calls: Vec<(usize, usize)> = seeds
        .iter()
        .enumerate()
        .flat_map(|(k, d)| {
            d.events
                .iter()
                .enumerate()
                .filter(|(_, e)| e.args().is_some_and(|a| !a.is_empty()))
                .map(move |(i, _)| (k, i))
        })
        .take(6)
        .collect();
    assert!(calls
        .iter()
        .any(|&(k, i)| seeds[k].events[i].action_name() == Some("OrderPizza")));
    let check = finite_diff_check(&mut m.af_params, 1e-5, 80, |s| {
        let mut batch = af.enc.batch();
        let mut total = 0.0;
        let mut scored = 0;
        for &(k, i) in &calls {
            let ev = &seeds[k].events[i];
            let ctx = extract_features_at(&seeds[k], i, &schema, cfg.window);
            let (l, n) = af.loss(
                s,
                &mut batch,
                &ctx,
                &vocab,
                ev.action_name().unwrap(),
                ev.args().unwrap(),
                None,
            )?;
            total += l;
            scored += n;
        }
        assert!(scored > 0);
        batch.finish(s);
        Ok(total)
    })
    .unwrap();
    assert!(check.max_rel_error < 1e-4, "{check:?}");
}

#[test]
fn pointer_respects_types_and_reports_missing_arguments() {
    let (schema, d) = table1();
    let vocab = Vocab::build(&schema, std::slice::from_ref(&d), 16);
    let m = Models::init(schema.clone(), vocab, small()).unwrap();
    // before GetCast: mentions are the Movie span and the Duration return
    let ctx = extract_features_at(&d, 8, &schema, 8);
    let (sig, scores) = m.fill(&ctx, "GetCast").unwrap();
    let movie: Vec<usize> = ctx
        .mentions()
        .filter(|x| x.entity_type == "Movie")
        .map(|x| x.position)
        .collect();
    assert_eq!(
        scores[0].candidates.iter().map(|c| c.0).collect::<Vec<_>>(),
        movie
    );
    match &sig.bindings["movieTitle"] {
        Binding::Mentions(p) => assert!(p.len() == 1 && movie.contains(&p[0])),
        other => panic!("{other:?}"),
    }
    let err = m.fill(&ctx, "FindShowtimes").unwrap_err();
    assert!(
        matches!(err, ModelError::MissingArgument { ref arg, .. } if arg == "date"),
        "{err}"
    );
    let (sig, _) = m.fill(&ctx, "EndTurn").unwrap();
    assert!(sig.bindings.is_empty());
}

#[test]
fn zero_epochs_keep_initial_parameters() {
    let (schema, seeds) = load("pizzabot");
    let cfg = ModelConfig {
        epochs: 0,
        ..small()
    };
    let (trained, report) = train(&seeds, &schema, &cfg).unwrap();
    let fresh = Models::init(schema, trained.vocab.clone(), cfg).unwrap();
    assert!(report.epochs.is_empty());
    assert!(report.examples.ner > 0 && report.examples.ap > 0 && report.examples.af > 0);
    for (a, b) in [
        (&trained.ner_params, &fresh.ner_params),
        (&trained.ap_params, &fresh.ap_params),
        (&trained.af_params, &fresh.af_params),
    ] {
        for id in a.ids() {
            assert_eq!(a.value(id), b.value(id), "{}", a.name(id));
        }
    }
}

#[test]
fn training_reduces_losses_and_is_deterministic() {
    let (schema, seeds) = load("pizzabot");
    let cfg = ModelConfig {
        epochs: 6,
        threads: 1,
        ..small()
    };
    let (a, ra) = train(&seeds, &schema, &cfg).unwrap();
    let (b, rb) = train(
        &seeds,
        &schema,
        &ModelConfig {
            threads: 3,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_eq!(ra, rb);
    let (first, last) = (ra.epochs[0], ra.epochs[5]);
    assert!(
        last.ner < first.ner && last.ap < first.ap && last.af < first.af,
        "{ra:?}"
    );
    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path(), false).unwrap();
    let bytes = std::fs::read(dir.path().join("ap.params")).unwrap();
    b.save(dir.path(), true).unwrap();
    assert_eq!(bytes, std::fs::read(dir.path().join("ap.params")).unwrap());
    assert!(dir.path().join("af.json").exists());
}

#[test]
fn bundle_round_trip() {
    let (schema, seeds) = load("pizzabot");
    let cfg = ModelConfig {
        epochs: 1,
        ..small()
    };
    let (m, _) = train(&seeds, &schema, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path(), false).unwrap();
    let back = Models::load(dir.path()).unwrap();
    assert_eq!(back.config, m.config);
    let d = &seeds[0];
    for n in 1..d.events.len() {
        let ctx = extract_features_at(d, n, &schema, cfg.window);
        assert_eq!(
            back.predict_action(&ctx).unwrap(),
            m.predict_action(&ctx).unwrap()
        );
        assert_eq!(back.tag(&ctx).unwrap(), m.tag(&ctx).unwrap());
    }

    let mut other = schema.to_json();
    other = other.replace("olives", "capers");
    std::fs::write(dir.path().join("schema.json"), other).unwrap();
    assert!(matches!(
        Models::load(dir.path()),
        Err(ModelError::Fingerprint { .. })
    ));
    std::fs::write(dir.path().join("schema.json"), schema.to_json()).unwrap();
    let p = dir.path().join("ner.params");
    let mut bytes = std::fs::read(&p).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&p, bytes).unwrap();
    assert!(matches!(
        Models::load(dir.path()),
        Err(ModelError::Neuro(_))
    ));
}

#[test]
fn pointer_gold_accepts_literals() {
    let (schema, seeds) = load("pizzabot");
    let cfg = small();
    let vocab = Vocab::build(&schema, &seeds, cfg.oov_buckets);
    let m = Models::init(schema.clone(), vocab.clone(), cfg.clone()).unwrap();
    let d = &seeds[0];
    let (i, ev) = d
        .events
        .iter()
        .enumerate()
        .find(|(_, e)| e.action_name() == Some("OrderPizza"))
        .unwrap();
    let ctx = extract_features_at(d, i, &schema, cfg.window);
    let mut args: BTreeMap<String, ArgValue> = ev.args().unwrap().clone();
    let size = ctx
        .mentions()
        .find(|x| x.entity_type == "Size")
        .unwrap()
        .value
        .to_uppercase();
    args.insert("size".into(), ArgValue::literal(size));
    let mut store = m.af_params.clone();
    let mut batch = m.af.enc.batch();
    let (_, scored) =
        m.af.loss(
            &mut store,
            &mut batch,
            &ctx,
            &vocab,
            "OrderPizza",
            &args,
            None,
        )
        .unwrap();
    assert!(scored >= 3);
}
