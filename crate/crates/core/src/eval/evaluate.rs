use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dml::{fold_value, tokenize, AnnotatedDialogue, ApiDef, DialogueEvent, DomainSchema};
use crate::models::{ModelError, Models};
use crate::runtime::{run_turn, tag_utterance, ApiOutcome, Executor, RuntimeConfig, Selection};
use crate::sim::dialogue_rng;

use super::metrics::{asp_accuracy, span_f1, LabeledSpan, Prf, ResolvedAction, TurnEval};

/// Corpus-level scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ner: Prf,
    pub ap: f64,
    pub asp: f64,
    pub turns: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Metrics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub turns: Vec<TurnEval>,
}

impl Metrics {
    pub fn from_turns(turns: &[TurnEval]) -> Self {
        let ner = turns.iter().fold(Prf::from_counts(0, 0, 0), |acc, t| {
            acc.add(&span_f1(&t.gold_spans, &t.predicted_spans))
        });
        let (ap, asp) = asp_accuracy(turns);
        Metrics {
            ner,
            ap,
            asp,
            turns: turns.len(),
        }
    }
}

/// Replays the gold return of the API call at the same step of the gold
/// turn; any other call gets a catalog sample.
struct GoldReplay<'a> {
    gold: &'a [DialogueEvent],
    dialogue: &'a AnnotatedDialogue,
}

impl Executor for GoldReplay<'_> {
    fn call(
        &mut self,
        schema: &DomainSchema,
        step: usize,
        api: &ApiDef,
        _args: &BTreeMap<String, Vec<String>>,
        rng: &mut ChaCha8Rng,
    ) -> ApiOutcome {
        match self.gold.get(step) {
            Some(DialogueEvent::Api {
                name,
                returns,
                failed,
                ..
            }) if *name == api.name => {
                if *failed {
                    return ApiOutcome::Failure("gold call failed".into());
                }
                match returns
                    .as_ref()
                    .and_then(|r| self.dialogue.variables.get(r))
                {
                    Some(v) => ApiOutcome::Value(v.value.clone()),
                    None => ApiOutcome::Nothing,
                }
            }
            _ => match crate::sim::simulate_api(api, schema, 0.0, rng) {
                Ok(crate::sim::ApiReturn::Value(v)) => ApiOutcome::Value(v),
                Ok(_) => ApiOutcome::Nothing,
                Err(e) => ApiOutcome::Failure(e.to_string()),
            },
        }
    }
}

fn gold_action(d: &AnnotatedDialogue, ev: &DialogueEvent) -> ResolvedAction {
    let args = ev
        .args()
        .map(|a| a.iter().map(|(k, v)| (k.clone(), d.values_of(v))).collect())
        .unwrap_or_default();
    ResolvedAction::new(ev.action_name().unwrap_or_default(), args)
}

fn gold_spans(ev: &DialogueEvent) -> Vec<LabeledSpan> {
    match ev {
        DialogueEvent::User { spans, .. } => spans
            .iter()
            .map(|s| (s.start, s.end, s.entity_type.clone()))
            .collect(),
        _ => Vec::new(),
    }
}

/// Evaluate every user turn of `d` given the gold history before it. The
/// tagger's spans feed the action loop, API calls replay gold returns and
/// the loop stops at the first action that differs from gold.
pub fn evaluate_dialogue(
    models: &Models,
    d: &AnnotatedDialogue,
    index: usize,
    seed: u64,
) -> Result<Vec<TurnEval>, ModelError> {
    let config = RuntimeConfig {
        action_cap: models.config.action_cap,
        ..RuntimeConfig::default()
    };
    let id = d.id.clone().unwrap_or_else(|| format!("#{index}"));
    let mut out = Vec::new();
    for (u, ev) in d.events.iter().enumerate() {
        let DialogueEvent::User { text, .. } = ev else {
            continue;
        };
        let end = (u + 1..d.events.len())
            .find(|&i| d.events[i].is_turn_end() || d.events[i].is_user())
            .map_or(d.events.len(), |i| {
                if d.events[i].is_user() {
                    i
                } else {
                    i + 1
                }
            });
        let gold_events = &d.events[u + 1..end];
        let mut history = d.prefix(u);
        let mentions = tag_utterance(models, &mut history, text)?;
        let predicted_spans: Vec<LabeledSpan> = mentions
            .iter()
            .filter_map(|m| m.span.map(|(s, e)| (s, e, m.entity_type.clone())))
            .collect();
        let mut executor = GoldReplay {
            gold: gold_events,
            dialogue: d,
        };
        let mut rng = dialogue_rng(seed, ((index as u64) << 20) | u as u64);
        let mut mismatch: Option<String> = None;
        let outcome = run_turn(
            models,
            &config,
            &mut history,
            &mut executor,
            &mut rng,
            Selection::Argmax,
            &mut |step, name| {
                let ok = gold_events.get(step).and_then(DialogueEvent::action_name) == Some(name);
                if !ok {
                    mismatch = Some(name.to_string());
                }
                ok
            },
        )?;
        let mut predicted: Vec<ResolvedAction> = outcome
            .actions
            .iter()
            .map(|a| ResolvedAction::new(a.name.clone(), a.args.clone()))
            .collect();
        if let Some(name) = mismatch {
            predicted.push(ResolvedAction::new(name, BTreeMap::new()));
        }
        out.push(TurnEval {
            dialogue: id.clone(),
            turn: out.len(),
            gold: gold_events.iter().map(|e| gold_action(d, e)).collect(),
            predicted,
            gold_spans: gold_spans(ev),
            predicted_spans,
        });
    }
    Ok(out)
}

/// Evaluate a test corpus. With `keep_turns` the report lists every turn.
pub fn evaluate(
    models: &Models,
    corpus: &[AnnotatedDialogue],
    seed: u64,
    keep_turns: bool,
) -> Result<EvalReport, ModelError> {
    let mut turns = Vec::new();
    for (i, d) in corpus.iter().enumerate() {
        turns.extend(evaluate_dialogue(models, d, i, seed)?);
    }
    Ok(EvalReport {
        metrics: Metrics::from_turns(&turns),
        turns: if keep_turns { turns } else { Vec::new() },
    })
}

/// User events of `d` that mention a value first introduced by an API
/// return and absent from every static catalog, with the types of those
/// mentions.
pub fn api_value_mentions(
    schema: &DomainSchema,
    d: &AnnotatedDialogue,
) -> Vec<(usize, BTreeSet<String>)> {
    let mut returned: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::new();
    for (i, ev) in d.events.iter().enumerate() {
        match ev {
            DialogueEvent::Api {
                returns: Some(r), ..
            } => {
                if let Some(v) = d.variables.get(r) {
                    if !schema.in_static_catalogs(&v.value) {
                        returned.insert(fold_value(&v.value));
                    }
                }
            }
            DialogueEvent::User { text, spans, .. } => {
                let tokens = tokenize(text);
                let types: BTreeSet<String> = spans
                    .iter()
                    .filter(|s| returned.contains(&fold_value(&tokens[s.start..s.end].join(" "))))
                    .map(|s| s.entity_type.clone())
                    .collect();
                if !types.is_empty() {
                    out.push((i, types));
                }
            }
            _ => {}
        }
    }
    out
}

/// Tagger span F1 restricted to utterances that mention API-returned
/// values outside the static catalogs, counting only spans of those
/// values' types. Returns the score and the number of utterances.
pub fn dynamic_slot_f1(
    models: &Models,
    corpus: &[AnnotatedDialogue],
) -> Result<(Prf, usize), ModelError> {
    let mut total = Prf::from_counts(0, 0, 0);
    let mut n = 0;
    for d in corpus {
        for (u, types) in api_value_mentions(&models.schema, d) {
            let DialogueEvent::User { text, .. } = &d.events[u] else {
                continue;
            };
            let mut history = d.prefix(u);
            let mentions = tag_utterance(models, &mut history, text)?;
            let keep = |t: &String| types.contains(t);
            let gold: Vec<LabeledSpan> = gold_spans(&d.events[u])
                .into_iter()
                .filter(|s| keep(&s.2))
                .collect();
            let pred: Vec<LabeledSpan> = mentions
                .iter()
                .filter_map(|m| m.span.map(|(s, e)| (s, e, m.entity_type.clone())))
                .filter(|s| keep(&s.2))
                .collect();
            total = total.add(&span_f1(&gold, &pred));
            n += 1;
        }
    }
    Ok((total, n))
}
