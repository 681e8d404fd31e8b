use std::path::PathBuf;

use dialoguekit::dml::{
    parse_corpus, parse_dialogue, parse_domain, resolve_references, tokenize, validate_dialogue,
    AnnotatedDialogue, DialogueEvent, DmlError, DomainSchema, FindingKind, ValidationMode,
};
use proptest::prelude::*;

fn domain_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../domains")
        .join(name)
}

fn load(name: &str) -> (DomainSchema, Vec<AnnotatedDialogue>) {
    let dir = domain_dir(name);
    let schema = parse_domain(&std::fs::read_to_string(dir.join("schema.json")).unwrap()).unwrap();
    let seeds = parse_corpus(
        &std::fs::read_to_string(dir.join("seeds.jsonl")).unwrap(),
        &schema,
    )
    .unwrap();
    (schema, seeds)
}

fn table1(schema: &DomainSchema) -> AnnotatedDialogue {
    let (_, seeds) = load("ticketbot");
    let d = seeds
        .into_iter()
        .find(|d| d.id.as_deref() == Some("ticket-seed-table1"))
        .unwrap();
    assert!(validate_dialogue(&d, schema, ValidationMode::Complete).is_empty());
    d
}

#[test]
fn pizzabot_schema_shape() {
    let (schema, seeds) = load("pizzabot");
    assert_eq!(schema.counts(), (3, 6));
    let order = schema.api("OrderPizza").unwrap();
    let names: Vec<_> = order.args.iter().map(|a| a.name.as_str()).collect();
    assert_eq!(names, ["size", "toppingsList", "crust", "cheese"]);
    assert!(order.arg("toppingsList").unwrap().multi_valued);
    assert!(!order.arg("cheese").unwrap().required);
    assert_eq!(seeds.len(), 7);
}

#[test]
fn bundled_domains_round_trip() {
    for name in ["pizzabot", "ticketbot"] {
        let (schema, seeds) = load(name);
        let again = parse_domain(&schema.to_json()).unwrap();
        assert_eq!(schema, again);
        for d in &seeds {
            let back = parse_dialogue(&d.to_json(), &schema).unwrap();
            assert_eq!(&back, d);
        }
    }
}

#[test]
fn seed_bindings_are_typed() {
    for name in ["pizzabot", "ticketbot"] {
        let (schema, seeds) = load(name);
        for d in &seeds {
            for ev in &d.events {
                let (Some(action), Some(args)) = (ev.action_name(), ev.args()) else {
                    continue;
                };
                let action = schema.action(action).unwrap();
                for (arg, value) in args {
                    let def = action.args().iter().find(|a| &a.name == arg).unwrap();
                    for var in value.vars() {
                        assert_eq!(
                            d.variables[var].entity_type, def.entity_type,
                            "{:?} {arg}",
                            d.id
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn table1_events() {
    let (schema, _) = load("ticketbot");
    let d = table1(&schema);
    let names: Vec<_> = d
        .events
        .iter()
        .map(|e| e.action_name().unwrap_or("<user>"))
        .collect();
    assert_eq!(
        names,
        [
            "welcome",
            "EndTurn",
            "<user>",
            "GetDuration",
            "inform_movie_duration",
            "EndTurn",
            "<user>",
            "GetCast",
            "inform_movie_cast",
            "EndTurn",
            "<user>",
            "stop",
            "EndDialogue"
        ]
    );
    match &d.events[2] {
        DialogueEvent::User { text, spans, .. } => {
            assert_eq!(text, "how long is la la land");
            assert_eq!((spans[0].start, spans[0].end), (3, 6));
            assert_eq!(spans[0].entity_type, "Movie");
            assert_eq!(spans[0].var, "mt1");
        }
        other => panic!("{other:?}"),
    }
    // "who stars in it": no spans, the binding is carried over
    match (&d.events[6], &d.events[7]) {
        (DialogueEvent::User { spans, .. }, DialogueEvent::Api { args, .. }) => {
            assert!(spans.is_empty());
            assert_eq!(args["movieTitle"].vars(), ["mt1"]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn use_before_definition_is_rejected() {
    let (schema, _) = load("ticketbot");
    let mut d = table1(&schema);
    // drop the span that defines mt1
    if let DialogueEvent::User { spans, .. } = &mut d.events[2] {
        spans.clear();
    }
    match parse_dialogue(&d.to_json(), &schema) {
        Err(DmlError::Dialogue { finding, .. }) => {
            assert_eq!(finding.kind, FindingKind::UseBeforeDefinition)
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_action_and_span_bounds() {
    let (schema, _) = load("ticketbot");
    let mut d = table1(&schema);
    if let DialogueEvent::Api { name, .. } = &mut d.events[3] {
        *name = "GetRating".into();
    }
    let report = validate_dialogue(&d, &schema, ValidationMode::Complete);
    assert!(report.has(FindingKind::UnknownAction));

    let mut d = table1(&schema);
    if let DialogueEvent::User { spans, .. } = &mut d.events[2] {
        spans[0].end = 9;
    }
    let report = validate_dialogue(&d, &schema, ValidationMode::Complete);
    assert!(report.has(FindingKind::SpanOutOfBounds));
}

#[test]
fn missing_required_argument() {
    let (schema, _) = load("ticketbot");
    let mut d = table1(&schema);
    if let DialogueEvent::Api { args, .. } = &mut d.events[3] {
        args.clear();
    }
    let report = validate_dialogue(&d, &schema, ValidationMode::Complete);
    assert!(report.has(FindingKind::MissingRequiredArgument));
    assert!(report.findings[0]
        .to_string()
        .contains("missing required argument"));
}

#[test]
fn type_mismatch() {
    let (schema, seeds) = load("ticketbot");
    // bind a Showtime variable to a Movie-typed argument
    let mut d = seeds
        .into_iter()
        .find(|d| d.id.as_deref() == Some("ticket-seed-4"))
        .unwrap();
    let i = d
        .events
        .iter()
        .position(|e| e.action_name() == Some("BuyTickets"))
        .unwrap();
    if let DialogueEvent::Api { args, .. } = &mut d.events[i] {
        args.insert(
            "movieTitle".into(),
            dialoguekit::dml::ArgValue::Var("st1".into()),
        );
    }
    let report = validate_dialogue(&d, &schema, ValidationMode::Complete);
    assert!(report.has(FindingKind::TypeMismatch));
    assert!(report
        .findings
        .iter()
        .any(|f| f.to_string().contains("type mismatch")));
}

#[test]
fn environments_follow_table1() {
    let (schema, _) = load("ticketbot");
    let d = table1(&schema);
    let envs = resolve_references(&d);
    assert_eq!(envs.len(), d.events.len() + 1);
    assert!(envs[0].vars.is_empty());
    // after GetDuration returns d1
    let after_call = &envs[4];
    assert_eq!(
        after_call
            .vars
            .keys()
            .map(String::as_str)
            .collect::<Vec<_>>(),
        ["d1", "mt1"]
    );
    assert_eq!(after_call.slot_value("Movie"), Some("la la land"));
}

#[test]
fn correction_shadows_slot() {
    let (_, seeds) = load("pizzabot");
    let d = &seeds[0];
    let envs = resolve_references(d);
    let at = d
        .events
        .iter()
        .position(|e| matches!(e, DialogueEvent::User { text, .. } if text.starts_with("actually")))
        .unwrap();
    assert_eq!(envs[at].slot_value("Size"), Some("large"));
    assert_eq!(envs[at + 1].slot_value("Size"), Some("small"));
}

#[test]
fn environments_are_prefix_monotone() {
    for name in ["pizzabot", "ticketbot"] {
        let (_, seeds) = load(name);
        for d in &seeds {
            let envs = resolve_references(d);
            for w in envs.windows(2) {
                for (k, v) in &w[0].vars {
                    assert_eq!(w[1].vars.get(k), Some(v));
                }
            }
        }
    }
}

#[test]
fn prefixes_validate_in_prefix_mode() {
    let (schema, seeds) = load("pizzabot");
    for d in &seeds {
        for n in 0..=d.events.len() {
            let report = validate_dialogue(&d.prefix(n), &schema, ValidationMode::Prefix);
            assert!(
                report.is_empty(),
                "{:?} prefix {n}: {:?}",
                d.id,
                report.findings
            );
        }
    }
}

#[test]
fn corpus_syntax_errors_report_file_lines() {
    let (schema, seeds) = load("pizzabot");
    let mut src = seeds[0].to_json();
    src.push_str("\n\n{\"dml_version\": 1, \"events\": [}\n");
    match parse_corpus(&src, &schema) {
        Err(DmlError::Syntax { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn rejects_unknown_version() {
    let (schema, seeds) = load("pizzabot");
    let src = seeds[0]
        .to_json()
        .replace("\"dml_version\":1", "\"dml_version\":7");
    assert!(matches!(
        parse_dialogue(&src, &schema),
        Err(DmlError::Version(7))
    ));
}

proptest! {
    #[test]
    fn tokens_survive_rejoining(text in "[a-z0-9$.,:' ]{0,40}") {
        let tokens = tokenize(&text);
        prop_assert_eq!(tokenize(&tokens.join(" ")), tokens);
    }
}
