use std::path::PathBuf;

use dialoguekit::context::{
    extract_features, extract_features_at, ContextEncoder, Dropout, EncoderConfig, FeatureSet,
    MentionSource, Vocab,
};
use dialoguekit::dml::{parse_corpus, parse_domain, AnnotatedDialogue, DomainSchema};
use dialoguekit::neuro::{finite_diff_check, Linear, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

#[test]
fn table1_context_after_anaphoric_question() {
    let (schema, d) = table1();
    // events: welcome, EndTurn, user, GetDuration, inform, EndTurn, user "who stars in it", …
    let ctx = extract_features(&d.prefix(7), &schema, 8);
    assert_eq!(ctx.current_user_utterance, ["who", "stars", "in", "it"]);
    assert!(ctx.current_entities.is_empty());
    let actions: Vec<&str> = ctx.past_actions.iter().map(|a| a.name.as_str()).collect();
    assert_eq!(
        actions,
        [
            "welcome",
            "EndTurn",
            "GetDuration",
            "inform_movie_duration",
            "EndTurn"
        ]
    );
    assert_eq!(
        ctx.past_user_utterances,
        vec![vec!["how", "long", "is", "la", "la", "land"]]
    );
    let found = |var: &str, source| {
        ctx.mentions()
            .any(|m| m.var.as_deref() == Some(var) && m.source == source)
    };
    assert!(found("mt1", MentionSource::User));
    assert!(found("d1", MentionSource::ApiReturn));
    assert!(found("mt1", MentionSource::Agent));
    assert_eq!(ctx.api_returns.keys().collect::<Vec<_>>(), ["d1"]);
    assert!(ctx
        .dynamic_catalog
        .contains(&("Duration".to_string(), "2 hours".to_string())));
    assert_eq!(ctx.optional_token_position, ctx.mention_count());
    let positions: Vec<usize> = ctx.mentions().map(|m| m.position).collect();
    assert_eq!(positions, (0..ctx.mention_count()).collect::<Vec<_>>());
}

#[test]
fn first_utterance_has_empty_past() {
    let (schema, d) = table1();
    let mut d = d;
    d.events.drain(0..2); // drop the welcome turn
    let ctx = extract_features(&d.prefix(1), &schema, 8);
    assert!(ctx.past_user_utterances.is_empty());
    assert!(ctx.past_actions.is_empty());
    assert!(ctx.past_entities.is_empty());
    assert_eq!(ctx.current_entities.len(), 1);
    assert_eq!(ctx.current_entities[0].value, "la la land");
    assert_eq!(ctx.optional_token_position, 1);
}

#[test]
fn window_drops_old_turns() {
    let (schema, d) = table1();
    let ctx = extract_features_at(&d, 11, &schema, 1);
    // only the "exit" turn remains in view
    assert_eq!(ctx.current_user_utterance, ["exit"]);
    assert!(ctx.past_user_utterances.is_empty());
    assert!(ctx.past_entities.is_empty());
    // the dynamic catalogue still covers the whole session
    assert!(ctx.dynamic_catalog.iter().any(|(t, _)| t == "Cast"));
}

fn encoder(
    schema: &DomainSchema,
    vocab: &Vocab,
    features: FeatureSet,
) -> (ParamStore, ContextEncoder) {
    let mut store = ParamStore::new(17);
    let cfg = EncoderConfig {
        embed: 6,
        hidden: 5,
        window: 8,
        type_dim: 3,
        features,
    };
    let enc = ContextEncoder::new(&mut store, "ctx", cfg, schema, vocab).unwrap();
    (store, enc)
}

#[test]
fn encoder_shapes_and_empty_history() {
    let (schema, d) = table1();
    let vocab = Vocab::build(&schema, std::slice::from_ref(&d), 64);
    let (store, enc) = encoder(&schema, &vocab, FeatureSet::ALL);
    let empty = extract_features(&AnnotatedDialogue::default(), &schema, 8);
    let e = enc.encode(&store, &empty, &vocab).unwrap();
    assert_eq!(e.vector.len(), enc.dim());
    assert!(e.vector.iter().all(|&x| x == 0.0));
    assert_eq!(e.mentions.len(), 1);
    for n in 0..=d.events.len() {
        let ctx = extract_features_at(&d, n, &schema, 8);
        let e = enc.encode(&store, &ctx, &vocab).unwrap();
        assert_eq!(e.vector.len(), enc.dim());
        assert_eq!(e.mentions.len(), ctx.mention_count() + 1);
        assert!(e.mentions.iter().all(|m| m.len() == enc.mention_dim()));
    }
}

#[test]
fn past_turn_order_matters() {
    let (schema, seeds) = load("ticketbot");
    let d = &seeds[0];
    let vocab = Vocab::build(&schema, &seeds, 64);
    let (store, enc) = encoder(&schema, &vocab, FeatureSet::ALL);
    let mut ctx = extract_features(&d.prefix(11), &schema, 8);
    ctx.past_user_utterances = vec![
        vec!["how".into(), "long".into()],
        vec!["who".into(), "stars".into()],
    ];
    ctx.past_user_events = vec![2, 6];
    let a = enc.encode(&store, &ctx, &vocab).unwrap().vector;
    ctx.past_user_utterances.reverse();
    let b = enc.encode(&store, &ctx, &vocab).unwrap().vector;
    assert_ne!(a, b);
}

#[test]
fn unseen_tokens_share_a_stable_row() {
    let (schema, seeds) = load("ticketbot");
    let vocab = Vocab::build(&schema, &seeds, 4096);
    assert!(!vocab.contains("zorblax"));
    assert_eq!(vocab.row("zorblax"), vocab.row("Zorblax"));
    assert!(vocab.row("zorblax") >= vocab.known());
    assert!(vocab.contains("la") && vocab.contains("stars"));
}

#[test]
fn batched_encoding_equals_single_encoding() {
    let (schema, seeds) = load("ticketbot");
    let vocab = Vocab::build(&schema, &seeds, 64);
    let (store, enc) = encoder(&schema, &vocab, FeatureSet::ALL);
    let mut batch = enc.batch();
    for d in &seeds {
        for n in 0..=d.events.len() {
            let ctx = extract_features_at(d, n, &schema, 8);
            let shared = batch.encode(&store, &ctx, &vocab, true, None).unwrap();
            let alone = enc.encode(&store, &ctx, &vocab).unwrap();
            assert_eq!(shared.vector, alone.vector);
            assert_eq!(shared.mentions, alone.mentions);
        }
    }
}

#[test]
fn end_to_end_gradient() {
    let (schema, seeds) = load("ticketbot");
    let vocab = Vocab::build(&schema, &seeds[..2], 16);
    for features in [FeatureSet::ALL, FeatureSet::DIALOGUE] {
        let (mut store, enc) = encoder(&schema, &vocab, features);
        let head = Linear::new(&mut store, "head", enc.dim(), 1).unwrap();
        let mhead = Linear::new(&mut store, "mhead", enc.mention_dim(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            for x in store.value_mut(id).data_mut() {
                *x += rng.random_range(-0.3..0.3);
            }
        }
        let d = &seeds[1];
        let points: Vec<usize> = (1..=d.events.len()).step_by(3).collect();
        let dropout = Some(Dropout { seed: 5, rate: 0.3 });
        let check = finite_diff_check(&mut store, 1e-5, 40, |s| {
            let mut batch = enc.batch();
            let mut loss = 0.0;
            let mut grads = Vec::new();
            for &n in &points {
                let ctx = extract_features_at(d, n, &schema, 8);
                let e = batch.encode(s, &ctx, &vocab, true, dropout)?;
                let y = head.forward(s, &e.vector)?[0];
                loss += y * y;
                let dv = head.backward(s, &e.vector, &[2.0 * y]);
                let mut dm = Vec::new();
                for m in &e.mentions {
                    let z = mhead.forward(s, m)?[0];
                    loss += z.tanh();
                    dm.push(mhead.backward(s, m, &[1.0 - z.tanh().powi(2)]));
                }
                grads.push((e, dv, dm));
            }
            for (e, dv, dm) in &grads {
                batch.backward(e, dv, Some(dm));
            }
            batch.finish(s);
            Ok(loss)
        })
        .unwrap();
        assert!(check.max_rel_error < 1e-4, "{features:?}: {check:?}");
    }
}
