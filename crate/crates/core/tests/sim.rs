use std::collections::BTreeSet;
use std::path::PathBuf;

use dialoguekit::dml::{
    parse_corpus, parse_domain, validate_dialogue, AnnotatedDialogue, DialogueEvent, DomainSchema,
    ValidationMode,
};
use dialoguekit::dml::{ActKind, ActLabel};
use dialoguekit::sim::{
    check_goal, dialogue_rng, generate_dataset, realize_nlg, realize_user, sample_goal,
    simulate_api, ApiReturn, DialogueAct, GoalValue, RevisionTrigger, SeedIndex, SimConfig,
    SimMode, TemplateBank,
};

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

fn assert_valid(
    schema: &DomainSchema,
    seeds: &[AnnotatedDialogue],
    cfg: &SimConfig,
) -> dialoguekit::sim::GenerationStats {
    let (sims, stats) = generate_dataset(seeds, schema, cfg).unwrap();
    assert_eq!(sims.len(), cfg.num_dialogues);
    for s in &sims {
        let report = validate_dialogue(&s.dialogue, schema, ValidationMode::Complete);
        assert!(
            report.is_empty(),
            "{:?}: {:?}",
            s.dialogue.id,
            report.findings
        );
        if let Err(e) = check_goal(&s.goal, &s.dialogue) {
            panic!(
                "{:?}: {e}\n{}",
                s.dialogue.id,
                dialoguekit::dml::render_pretty(&s.dialogue)
            );
        }
    }
    stats
}

#[test]
fn corners_are_valid_for_both_domains() {
    for name in ["pizzabot", "ticketbot"] {
        let (schema, seeds) = load(name);
        let base = SimConfig {
            num_dialogues: 200,
            seed: 11,
            ..SimConfig::quiet()
        };
        let mut corners = vec![
            base.clone(),
            SimConfig {
                mode: SimMode::Base,
                ..base.clone()
            },
            SimConfig::default(),
        ];
        for i in 0..6 {
            let mut c = base.clone();
            match i {
                0 => c.p_correction = 1.0,
                1 => c.p_over_cooperative = 1.0,
                2 => c.p_under_cooperative = 1.0,
                3 => c.p_proactive_offer = 1.0,
                4 => c.p_api_failure = 1.0,
                _ => c.p_goal_recombination = 1.0,
            }
            corners.push(c);
        }
        for cfg in &corners {
            assert_valid(&schema, &seeds, cfg);
        }
    }
}

#[test]
fn correction_rate_tracks_probability() {
    let (schema, seeds) = load("pizzabot");
    let cfg = SimConfig {
        num_dialogues: 1000,
        seed: 3,
        ..SimConfig::default()
    };
    let stats = assert_valid(&schema, &seeds, &cfg);
    let rate = stats.corrections as f64 / stats.dialogues as f64;
    assert!((0.25..=0.35).contains(&rate), "correction rate {rate}");
}

#[test]
fn generation_is_deterministic_and_thread_independent() {
    let (schema, seeds) = load("ticketbot");
    let cfg = SimConfig {
        num_dialogues: 60,
        seed: 5,
        threads: 1,
        ..SimConfig::default()
    };
    let (a, sa) = generate_dataset(&seeds, &schema, &cfg).unwrap();
    let (b, sb) = generate_dataset(
        &seeds,
        &schema,
        &SimConfig {
            threads: 3,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_eq!(sa, sb);
    let ja: Vec<String> = a.iter().map(|s| s.dialogue.to_json()).collect();
    let jb: Vec<String> = b.iter().map(|s| s.dialogue.to_json()).collect();
    assert_eq!(ja, jb);
    let (c, _) = generate_dataset(&seeds, &schema, &SimConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(
        ja,
        c.iter().map(|s| s.dialogue.to_json()).collect::<Vec<_>>()
    );
}

#[test]
fn single_dialogue() {
    let (schema, seeds) = load("pizzabot");
    let cfg = SimConfig {
        num_dialogues: 1,
        ..SimConfig::default()
    };
    let (sims, stats) = generate_dataset(&seeds, &schema, &cfg).unwrap();
    assert_eq!((sims.len(), stats.dialogues), (1, 1));
}

fn call_skeletons(d: &AnnotatedDialogue) -> Vec<(String, BTreeSet<String>)> {
    d.api_calls()
        .map(|(_, e)| match e {
            DialogueEvent::Api { name, args, .. } => (name.clone(), args.keys().cloned().collect()),
            _ => unreachable!(),
        })
        .collect()
}

#[test]
fn base_mode_keeps_seed_structure() {
    let (schema, seeds) = load("pizzabot");
    let skeletons: BTreeSet<_> = seeds.iter().map(call_skeletons).collect();
    let cfg = SimConfig {
        num_dialogues: 300,
        mode: SimMode::Base,
        ..SimConfig::default()
    };
    let (sims, _) = generate_dataset(&seeds, &schema, &cfg).unwrap();
    for s in &sims {
        assert!(skeletons.contains(&call_skeletons(&s.dialogue)));
        // act-isomorphic to its seed: same event kinds and action names
        let seed = &seeds[s.goal.seed];
        let shape = |d: &AnnotatedDialogue| {
            d.events
                .iter()
                .map(|e| match e {
                    DialogueEvent::User { acts, spans, .. } => format!("U{acts:?}{}", spans.len()),
                    other => other.action_name().unwrap().to_string(),
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(shape(&s.dialogue), shape(seed));
    }
}

#[test]
fn quiet_single_seed_goal_is_the_seed_skeleton() {
    let (schema, seeds) = load("ticketbot");
    let table1 = seeds[0].clone();
    let index = SeedIndex::new(vec![table1]).unwrap();
    let mut rng = dialogue_rng(1, 0);
    let goal = sample_goal(&index, &schema, &SimConfig::quiet(), &mut rng).unwrap();
    let apis: Vec<_> = goal.calls.iter().map(|c| c.api.as_str()).collect();
    assert_eq!(apis, ["GetDuration", "GetCast"]);
    assert!(goal.revision.is_none());
    // the second call's movie is the first call's movie
    assert_eq!(
        goal.calls[0].args["movieTitle"],
        goal.calls[1].args["movieTitle"]
    );
}

#[test]
fn forced_correction_goal() {
    let (schema, seeds) = load("pizzabot");
    let index = SeedIndex::new(seeds).unwrap();
    let cfg = SimConfig {
        p_correction: 1.0,
        ..SimConfig::quiet()
    };
    for i in 0..50 {
        let goal = sample_goal(&index, &schema, &cfg, &mut dialogue_rng(9, i)).unwrap();
        let r = goal.revision.clone().expect("revision injected");
        let old = match &goal.calls[r.call].args[&r.slot] {
            GoalValue::One(v) => v.clone(),
            other => panic!("{other:?}"),
        };
        assert_ne!(old, r.new_value);
        let api = schema.api(&goal.calls[r.call].api).unwrap();
        let expected = if api.confirm_before_call {
            RevisionTrigger::AtConfirm
        } else {
            RevisionTrigger::AfterInform
        };
        assert_eq!(r.trigger, expected);
    }
}

#[test]
fn empty_seed_set_is_an_error() {
    assert!(SeedIndex::new(Vec::new()).is_err());
}

#[test]
fn over_cooperative_users_are_never_asked_for_required_slots() {
    let (schema, seeds) = load("pizzabot");
    let cfg = SimConfig {
        num_dialogues: 100,
        p_over_cooperative: 1.0,
        ..SimConfig::quiet()
    };
    let (sims, stats) = generate_dataset(&seeds, &schema, &cfg).unwrap();
    assert_eq!(stats.cooperation.over, 100);
    for s in &sims {
        for e in &s.dialogue.events {
            if let DialogueEvent::Nlg { name, .. } = e {
                assert!(
                    !name.starts_with("request_"),
                    "{}",
                    dialoguekit::dml::render_pretty(&s.dialogue)
                );
            }
        }
    }
}

#[test]
fn api_failure_routes_to_no_result() {
    let (schema, seeds) = load("ticketbot");
    let cfg = SimConfig {
        num_dialogues: 50,
        p_api_failure: 1.0,
        ..SimConfig::quiet()
    };
    let (sims, stats) = generate_dataset(&seeds, &schema, &cfg).unwrap();
    assert_eq!(stats.api_calls, stats.api_failures);
    for s in &sims {
        for (i, e) in s.dialogue.api_calls() {
            match (e, &s.dialogue.events[i + 1]) {
                (
                    DialogueEvent::Api {
                        failed: true, name, ..
                    },
                    DialogueEvent::Nlg { acts, .. },
                ) => {
                    assert_eq!(acts, &vec![ActLabel::failure(name.as_str())]);
                }
                other => panic!("{other:?}"),
            }
        }
    }
}

#[test]
fn simulated_returns() {
    let (schema, _) = load("ticketbot");
    let mut rng = dialogue_rng(0, 0);
    let dur = schema.api("GetDuration").unwrap();
    match simulate_api(dur, &schema, 0.0, &mut rng).unwrap() {
        ApiReturn::Value(v) => assert!(schema.in_catalog("Duration", &v)),
        other => panic!("{other:?}"),
    }
    let find = schema.api("FindMovies").unwrap();
    match simulate_api(find, &schema, 0.0, &mut rng).unwrap() {
        ApiReturn::Value(v) => assert!(schema.in_catalog("ShowingTitle", &v)),
        other => panic!("{other:?}"),
    }
    assert_eq!(
        simulate_api(dur, &schema, 1.0, &mut rng).unwrap(),
        ApiReturn::Failure
    );
    let (pizza, _) = load("pizzabot");
    let schema2 = pizza
        .with_catalog("DeliveryTime", vec!["10 minutes".into()])
        .unwrap();
    let api = schema2.api("GetDeliveryTime").unwrap();
    assert_eq!(
        simulate_api(api, &schema2, 0.0, &mut rng).unwrap(),
        ApiReturn::Value("10 minutes".into())
    );
}

#[test]
fn nlg_realization_substitutes_values() {
    let (schema, _) = load("ticketbot");
    let nlg = schema.nlg("inform_movie_duration").unwrap();
    let args = [("movieTitle", "la la land"), ("duration", "2 hours")]
        .into_iter()
        .map(|(k, v)| (k.to_string(), vec![v.to_string()]))
        .collect();
    let mut rng = dialogue_rng(0, 1);
    let texts: BTreeSet<String> = (0..20)
        .map(|_| realize_nlg(nlg, &args, &mut rng).unwrap())
        .collect();
    assert!(texts.contains("la la land is 2 hours long"));
}

#[test]
fn user_realization_annotates_spans() {
    let (schema, _) = load("ticketbot");
    let bank = TemplateBank::new(&schema);
    let acts = vec![
        DialogueAct::targeted(ActKind::Request, "FindShowtimes"),
        DialogueAct::with_values(ActKind::Inform, "movieTitle", vec!["captain marvel".into()]),
        DialogueAct::with_values(ActKind::Inform, "date", vec!["sunday".into()]),
    ];
    let mut rng = dialogue_rng(2, 2);
    for _ in 0..20 {
        let r = realize_user(&acts, &bank, &schema, true, &mut rng).unwrap();
        let movie = r.spans.iter().find(|s| s.entity_type == "Movie").unwrap();
        assert_eq!(r.tokens[movie.start..movie.end].join(" "), "captain marvel");
        let date = r.spans.iter().find(|s| s.entity_type == "Date").unwrap();
        assert_eq!(r.tokens[date.start..date.end].join(" "), "sunday");
    }
    // without paraphrases only the canonical template is used
    let r = realize_user(&acts, &bank, &schema, false, &mut rng).unwrap();
    assert_eq!(r.text(), "what are the showtimes for captain marvel sunday");
}

#[test]
fn multi_value_informs_get_one_span_each() {
    let (schema, _) = load("pizzabot");
    let bank = TemplateBank::new(&schema);
    let acts = vec![
        DialogueAct::with_values(
            ActKind::Inform,
            "toppingsList",
            vec!["olives".into(), "tomatoes".into(), "green peppers".into()],
        ),
        DialogueAct::with_values(ActKind::Inform, "crust", vec!["thin".into()]),
        DialogueAct::with_values(ActKind::Inform, "cheese", vec!["extra".into()]),
    ];
    let r = realize_user(&acts, &bank, &schema, false, &mut dialogue_rng(0, 0)).unwrap();
    assert_eq!(
        r.text(),
        "olives , tomatoes and green peppers with thin crust and extra cheese"
    );
    assert_eq!(r.spans.len(), 5);
}

#[test]
fn goals_are_biased_to_seed_apis() {
    let (schema, seeds) = load("pizzabot");
    let apis: BTreeSet<String> = seeds
        .iter()
        .flat_map(call_skeletons)
        .map(|(n, _)| n)
        .collect();
    let (sims, _) = generate_dataset(
        &seeds,
        &schema,
        &SimConfig {
            num_dialogues: 100,
            ..SimConfig::default()
        },
    )
    .unwrap();
    for s in sims {
        assert!(s.goal.calls.iter().all(|c| apis.contains(&c.api)));
    }
}
