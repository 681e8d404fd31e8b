use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dml::{tokenize, AnnotatedDialogue, DialogueEvent, DomainSchema, Variable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionSource {
    User,
    Agent,
    ApiReturn,
}

impl MentionSource {
    pub const ALL: [MentionSource; 3] = [
        MentionSource::User,
        MentionSource::Agent,
        MentionSource::ApiReturn,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub value: String,
    pub entity_type: String,
    pub source: MentionSource,
    /// Turn index within the whole dialogue.
    pub turn: usize,
    /// Index of the event the mention comes from.
    pub event: usize,
    /// Index in the context's mention list.
    pub position: usize,
    pub var: Option<String>,
    /// Token range within the user utterance, for user mentions.
    pub span: Option<(usize, usize)>,
}

/// A past agent action; failed API calls are distinguished from
/// successful ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PastAction {
    pub name: String,
    pub failed: bool,
}

/// Everything the models see at one prediction point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueContext {
    pub current_user_utterance: Vec<String>,
    /// Event index of the current utterance.
    pub current_event: Option<usize>,
    pub current_entities: Vec<EntityMention>,
    pub past_user_utterances: Vec<Vec<String>>,
    pub past_user_events: Vec<usize>,
    pub past_actions: Vec<PastAction>,
    pub past_entities: Vec<EntityMention>,
    pub api_returns: BTreeMap<String, Variable>,
    /// `(entity type, value)` of everything the agent said or an API
    /// returned so far, over the whole dialogue.
    pub dynamic_catalog: Vec<(String, String)>,
    pub turn: usize,
    pub optional_token_position: usize,
}

impl DialogueContext {
    /// `past_entities ++ current_entities`; the optional token sits at
    /// `optional_token_position` right after them.
    pub fn mentions(&self) -> impl Iterator<Item = &EntityMention> {
        self.past_entities.iter().chain(&self.current_entities)
    }

    pub fn mention(&self, position: usize) -> Option<&EntityMention> {
        self.mentions().nth(position)
    }

    pub fn mention_count(&self) -> usize {
        self.past_entities.len() + self.current_entities.len()
    }

    /// Spans of the user mentions coming from `event`.
    pub fn user_spans(&self, event: usize) -> Vec<(usize, usize, &str)> {
        self.mentions()
            .filter(|m| m.source == MentionSource::User && m.event == event)
            .filter_map(|m| m.span.map(|(s, e)| (s, e, m.entity_type.as_str())))
            .collect()
    }
}

/// Turn index of every event: the number of turn-closing events before it.
pub fn turn_ids(d: &AnnotatedDialogue) -> Vec<usize> {
    let mut t = 0;
    d.events
        .iter()
        .map(|ev| {
            let id = t;
            if ev.is_turn_end() {
                t += 1;
            }
            id
        })
        .collect()
}

/// Context before event `n` of `d` (i.e. over `d.events[..n]`), keeping
/// the last `window` turns.
pub fn extract_features_at(
    d: &AnnotatedDialogue,
    n: usize,
    schema: &DomainSchema,
    window: usize,
) -> DialogueContext {
    let turns = turn_ids(d);
    let n = n.min(d.events.len());
    let cur_turn = if n == 0 {
        0
    } else if d.events[n - 1].is_turn_end() {
        turns[n - 1] + 1
    } else {
        turns[n - 1]
    };
    let first_turn = (cur_turn + 1).saturating_sub(window.max(1));
    let current_event = (0..n)
        .rev()
        .take_while(|&i| !d.events[i].is_turn_end())
        .find(|&i| d.events[i].is_user());

    let mut ctx = DialogueContext {
        current_user_utterance: Vec::new(),
        current_event,
        current_entities: Vec::new(),
        past_user_utterances: Vec::new(),
        past_user_events: Vec::new(),
        past_actions: Vec::new(),
        past_entities: Vec::new(),
        api_returns: BTreeMap::new(),
        dynamic_catalog: Vec::new(),
        turn: cur_turn,
        optional_token_position: 0,
    };
    let value_of = |var: &str| d.variables.get(var);
    for (i, ev) in d.events[..n].iter().enumerate() {
        let in_window = turns[i] >= first_turn;
        let mention =
            |value: String, entity_type: String, source, var: Option<String>, span| EntityMention {
                value,
                entity_type,
                source,
                turn: turns[i],
                event: i,
                position: 0,
                var,
                span,
            };
        match ev {
            DialogueEvent::User { text, spans, .. } => {
                let tokens = tokenize(text);
                let ms: Vec<EntityMention> = spans
                    .iter()
                    .map(|s| {
                        let surface = tokens
                            .get(s.start..s.end)
                            .map(|t| t.join(" "))
                            .unwrap_or_default();
                        mention(
                            surface,
                            s.entity_type.clone(),
                            MentionSource::User,
                            Some(s.var.clone()),
                            Some((s.start, s.end)),
                        )
                    })
                    .collect();
                if Some(i) == current_event {
                    ctx.current_user_utterance = tokens;
                    ctx.current_entities = ms;
                } else if in_window {
                    ctx.past_user_utterances.push(tokens);
                    ctx.past_user_events.push(i);
                    ctx.past_entities.extend(ms);
                }
            }
            DialogueEvent::Api {
                name,
                returns,
                failed,
                ..
            } => {
                if in_window {
                    ctx.past_actions.push(PastAction {
                        name: name.clone(),
                        failed: *failed,
                    });
                }
                if let Some(r) = returns {
                    if let Some(v) = value_of(r) {
                        ctx.api_returns.insert(r.clone(), v.clone());
                        ctx.dynamic_catalog
                            .push((v.entity_type.clone(), v.value.clone()));
                        if in_window {
                            ctx.past_entities.push(mention(
                                v.value.clone(),
                                v.entity_type.clone(),
                                MentionSource::ApiReturn,
                                Some(r.clone()),
                                None,
                            ));
                        }
                    }
                }
            }
            DialogueEvent::Nlg { name, args, .. } => {
                if in_window {
                    ctx.past_actions.push(PastAction {
                        name: name.clone(),
                        failed: false,
                    });
                }
                for (arg, value) in args {
                    let arg_type = schema
                        .nlg(name)
                        .and_then(|nl| nl.arg(arg))
                        .map(|a| a.entity_type.clone());
                    for var in value.vars() {
                        if let Some(v) = value_of(var) {
                            ctx.dynamic_catalog
                                .push((v.entity_type.clone(), v.value.clone()));
                            if in_window {
                                ctx.past_entities.push(mention(
                                    v.value.clone(),
                                    v.entity_type.clone(),
                                    MentionSource::Agent,
                                    Some(var.to_string()),
                                    None,
                                ));
                            }
                        }
                    }
                    if let (crate::dml::ArgValue::Literal { literal }, Some(t)) = (value, arg_type)
                    {
                        ctx.dynamic_catalog.push((t.clone(), literal.clone()));
                        if in_window {
                            ctx.past_entities.push(mention(
                                literal.clone(),
                                t,
                                MentionSource::Agent,
                                None,
                                None,
                            ));
                        }
                    }
                }
            }
            DialogueEvent::EndTurn | DialogueEvent::EndDialogue => {
                if in_window {
                    ctx.past_actions.push(PastAction {
                        name: ev.action_name().unwrap_or_default().to_string(),
                        failed: false,
                    });
                }
            }
        }
    }
    for (p, m) in ctx
        .past_entities
        .iter_mut()
        .chain(ctx.current_entities.iter_mut())
        .enumerate()
    {
        m.position = p;
    }
    ctx.optional_token_position = ctx.mention_count();
    ctx.dynamic_catalog.sort();
    ctx.dynamic_catalog.dedup();
    ctx
}

/// Context at the end of a dialogue prefix.
pub fn extract_features(
    prefix: &AnnotatedDialogue,
    schema: &DomainSchema,
    window: usize,
) -> DialogueContext {
    extract_features_at(prefix, prefix.events.len(), schema, window)
}
