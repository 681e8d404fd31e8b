use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::acts::ActLabel;
use super::error::DmlError;
use super::schema::DomainSchema;
use super::tokenize::{fold_value, normalize_value, tokenize};
use super::validate::{validate_dialogue, ValidationMode};

pub const DML_VERSION: u32 = 1;

/// An argument binding: a variable reference, a literal value, or a list of
/// either (multi-valued arguments).
///
/// On disk a variable is a bare string (`"mt1"`), a literal is
/// `{"literal": "thin"}` and a list is a JSON array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArgValue {
    Var(String),
    Literal { literal: String },
    List(Vec<ArgValue>),
}

impl ArgValue {
    pub fn literal(value: impl Into<String>) -> Self {
        ArgValue::Literal {
            literal: value.into(),
        }
    }

    /// Variable ids referenced by this binding, in order.
    pub fn vars(&self) -> Vec<&str> {
        match self {
            ArgValue::Var(v) => vec![v.as_str()],
            ArgValue::Literal { .. } => Vec::new(),
            ArgValue::List(items) => items.iter().flat_map(ArgValue::vars).collect(),
        }
    }

    /// Surface values, resolving variables through `variables`. Unknown
    /// variables resolve to nothing.
    pub fn values(&self, variables: &BTreeMap<String, Variable>) -> Vec<String> {
        match self {
            ArgValue::Var(v) => variables
                .get(v)
                .map(|x| x.value.clone())
                .into_iter()
                .collect(),
            ArgValue::Literal { literal } => vec![literal.clone()],
            ArgValue::List(items) => items.iter().flat_map(|i| i.values(variables)).collect(),
        }
    }
}

/// Case-folded, de-duplicated, sorted values: the form in which two
/// bindings are compared.
pub fn canonical_values(values: &[String]) -> Vec<String> {
    let mut out: Vec<String> = values.iter().map(|v| fold_value(v)).collect();
    out.sort();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    /// Half-open token range.
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
    pub var: String,
}

impl Span {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub entity_type: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DialogueEvent {
    User {
        text: String,
        #[serde(default)]
        spans: Vec<Span>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        acts: Vec<ActLabel>,
    },
    Api {
        name: String,
        #[serde(default)]
        args: BTreeMap<String, ArgValue>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        returns: Option<String>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        failed: bool,
    },
    Nlg {
        name: String,
        #[serde(default)]
        args: BTreeMap<String, ArgValue>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        acts: Vec<ActLabel>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
    },
    EndTurn,
    EndDialogue,
}

impl DialogueEvent {
    /// The action name for agent events (`EndTurn`/`EndDialogue` for the
    /// control events); `None` for user utterances.
    pub fn action_name(&self) -> Option<&str> {
        match self {
            DialogueEvent::User { .. } => None,
            DialogueEvent::Api { name, .. } | DialogueEvent::Nlg { name, .. } => Some(name),
            DialogueEvent::EndTurn => Some(super::schema::END_TURN),
            DialogueEvent::EndDialogue => Some(super::schema::END_DIALOGUE),
        }
    }

    pub fn args(&self) -> Option<&BTreeMap<String, ArgValue>> {
        match self {
            DialogueEvent::Api { args, .. } | DialogueEvent::Nlg { args, .. } => Some(args),
            _ => None,
        }
    }

    pub fn is_user(&self) -> bool {
        matches!(self, DialogueEvent::User { .. })
    }

    pub fn is_turn_end(&self) -> bool {
        matches!(self, DialogueEvent::EndTurn | DialogueEvent::EndDialogue)
    }
}

/// One turn: an optional user utterance (absent for the opening agent
/// turn) and the agent events that follow it, including the closing
/// `EndTurn`/`EndDialogue`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnSlice {
    pub user: Option<usize>,
    pub agent: Range<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotatedDialogue {
    pub id: Option<String>,
    pub events: Vec<DialogueEvent>,
    pub variables: BTreeMap<String, Variable>,
}

#[derive(Serialize, Deserialize)]
struct DialogueRecord {
    dml_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(default)]
    variables: BTreeMap<String, Variable>,
    events: Vec<DialogueEvent>,
}

impl AnnotatedDialogue {
    /// Structural decode of one JSON document. Variables defined by spans
    /// but missing from the table are filled from the utterance text.
    /// No semantic checks; see [`parse_dialogue`].
    pub fn from_json(source: &str) -> Result<Self, DmlError> {
        let record: DialogueRecord = serde_json::from_str(source).map_err(DmlError::from_json)?;
        if record.dml_version != DML_VERSION {
            return Err(DmlError::Version(record.dml_version));
        }
        let mut d = AnnotatedDialogue {
            id: record.id,
            events: record.events,
            variables: record.variables,
        };
        d.fill_span_variables();
        Ok(d)
    }

    fn fill_span_variables(&mut self) {
        for ev in &self.events {
            if let DialogueEvent::User { text, spans, .. } = ev {
                let tokens = tokenize(text);
                for span in spans {
                    if span.start < span.end && span.end <= tokens.len() {
                        self.variables
                            .entry(span.var.clone())
                            .or_insert_with(|| Variable {
                                entity_type: span.entity_type.clone(),
                                value: tokens[span.range()].join(" "),
                            });
                    }
                }
            }
        }
    }

    pub fn to_json(&self) -> String {
        let record = DialogueRecord {
            dml_version: DML_VERSION,
            id: self.id.clone(),
            variables: self.variables.clone(),
            events: self.events.clone(),
        };
        serde_json::to_string(&record).expect("dialogue serializes")
    }

    pub fn turns(&self) -> Vec<TurnSlice> {
        let mut turns = Vec::new();
        let mut start = 0;
        let mut user = None;
        for (i, ev) in self.events.iter().enumerate() {
            if ev.is_user() {
                if i > start {
                    // agent events without a closing control event
                    turns.push(TurnSlice {
                        user,
                        agent: start..i,
                    });
                }
                user = Some(i);
                start = i + 1;
            } else if ev.is_turn_end() {
                turns.push(TurnSlice {
                    user,
                    agent: start..i + 1,
                });
                user = None;
                start = i + 1;
            }
        }
        if start < self.events.len() || user.is_some() {
            turns.push(TurnSlice {
                user,
                agent: start..self.events.len(),
            });
        }
        turns
    }

    /// Resolved values of an argument binding.
    pub fn values_of(&self, value: &ArgValue) -> Vec<String> {
        value.values(&self.variables)
    }

    /// The prefix of the first `n` events, keeping only variables those
    /// events define.
    pub fn prefix(&self, n: usize) -> AnnotatedDialogue {
        let events = self.events[..n].to_vec();
        let mut defined = std::collections::BTreeSet::new();
        for ev in &events {
            match ev {
                DialogueEvent::User { spans, .. } => {
                    defined.extend(spans.iter().map(|s| s.var.clone()))
                }
                DialogueEvent::Api {
                    returns: Some(r), ..
                } => {
                    defined.insert(r.clone());
                }
                _ => {}
            }
        }
        AnnotatedDialogue {
            id: self.id.clone(),
            events,
            variables: self
                .variables
                .iter()
                .filter(|(k, _)| defined.contains(*k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Bind a new variable named after the entity type's initials
    /// (`mt1`, `mt2`, … for `MovieTitle`).
    pub fn fresh_var(&mut self, entity_type: &str, value: &str) -> String {
        let prefix = var_prefix(entity_type);
        let id = (1..)
            .map(|n| format!("{prefix}{n}"))
            .find(|id| !self.variables.contains_key(id))
            .expect("unbounded range");
        self.variables.insert(
            id.clone(),
            Variable {
                entity_type: entity_type.to_string(),
                value: normalize_value(value),
            },
        );
        id
    }

    /// API call names in order.
    pub fn api_calls(&self) -> impl Iterator<Item = (usize, &DialogueEvent)> {
        self.events
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e, DialogueEvent::Api { .. }))
    }
}

/// Lowercased capitals of an entity type name, or its first letter.
pub fn var_prefix(entity_type: &str) -> String {
    let caps: String = entity_type
        .chars()
        .filter(|c| c.is_ascii_uppercase())
        .map(|c| c.to_ascii_lowercase())
        .collect();
    if caps.is_empty() {
        entity_type
            .chars()
            .take(1)
            .collect::<String>()
            .to_lowercase()
    } else {
        caps
    }
}

/// Decode and fully validate one dialogue document against `schema`.
/// Fails on the first validation finding.
pub fn parse_dialogue(source: &str, schema: &DomainSchema) -> Result<AnnotatedDialogue, DmlError> {
    let d = AnnotatedDialogue::from_json(source)?;
    let report = validate_dialogue(&d, schema, ValidationMode::Complete);
    if let Some(finding) = report.findings.into_iter().next() {
        return Err(DmlError::Dialogue {
            dialogue: d.id.clone(),
            finding,
        });
    }
    Ok(d)
}

/// Parse a JSON Lines corpus (blank lines skipped). Line numbers in syntax
/// errors refer to the whole file.
pub fn parse_corpus(
    source: &str,
    schema: &DomainSchema,
) -> Result<Vec<AnnotatedDialogue>, DmlError> {
    let mut out = Vec::new();
    for (lineno, line) in source.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d = parse_dialogue(line, schema).map_err(|e| match e {
            DmlError::Syntax {
                column, message, ..
            } => DmlError::Syntax {
                line: lineno + 1,
                column,
                message,
            },
            other => other,
        })?;
        out.push(d);
    }
    Ok(out)
}

pub fn write_corpus(dialogues: &[AnnotatedDialogue]) -> String {
    let mut out = String::new();
    for d in dialogues {
        out.push_str(&d.to_json());
        out.push('\n');
    }
    out
}

/// Pretty DML rendering: `U: "how long is [ la la land | Movie → mt1 ]"`.
pub fn render_pretty(d: &AnnotatedDialogue) -> String {
    let fmt_arg = |v: &ArgValue| -> String {
        match v {
            ArgValue::Var(x) => format!("${x}"),
            ArgValue::Literal { literal } => format!("\"{literal}\""),
            ArgValue::List(items) => {
                let inner: Vec<String> = items
                    .iter()
                    .map(|i| match i {
                        ArgValue::Var(x) => format!("${x}"),
                        ArgValue::Literal { literal } => format!("\"{literal}\""),
                        ArgValue::List(_) => "[..]".to_string(),
                    })
                    .collect();
                format!("[{}]", inner.join(", "))
            }
        }
    };
    let fmt_args = |args: &BTreeMap<String, ArgValue>| -> String {
        args.iter()
            .map(|(k, v)| format!("{k}={}", fmt_arg(v)))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut out = String::new();
    for ev in &d.events {
        match ev {
            DialogueEvent::User { text, spans, .. } => {
                let tokens = tokenize(text);
                let mut parts = Vec::new();
                let mut i = 0;
                let mut sorted: Vec<&Span> = spans.iter().collect();
                sorted.sort_by_key(|s| s.start);
                for s in sorted {
                    if s.start < i || s.end > tokens.len() {
                        continue;
                    }
                    parts.extend(tokens[i..s.start].iter().cloned());
                    parts.push(format!(
                        "[ {} | {} → {} ]",
                        tokens[s.range()].join(" "),
                        s.entity_type,
                        s.var
                    ));
                    i = s.end;
                }
                parts.extend(tokens[i..].iter().cloned());
                out.push_str(&format!("U: \"{}\"\n", parts.join(" ")));
            }
            DialogueEvent::Api {
                name,
                args,
                returns,
                failed,
            } => {
                let ret = match (returns, failed) {
                    (_, true) => " → <failure>".to_string(),
                    (Some(r), false) => format!(" → {r}"),
                    (None, false) => String::new(),
                };
                out.push_str(&format!("A: call: {name}({}){ret}\n", fmt_args(args)));
            }
            DialogueEvent::Nlg { name, args, .. } => {
                out.push_str(&format!("A: nlg: {name}({})\n", fmt_args(args)));
            }
            DialogueEvent::EndTurn => out.push_str("A: <end of turn>\n"),
            DialogueEvent::EndDialogue => out.push_str("A: <end of dialogue>\n"),
        }
    }
    out
}
