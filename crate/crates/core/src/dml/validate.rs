use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::dialogue::{AnnotatedDialogue, ArgValue, DialogueEvent, Variable};
use super::schema::{ActionRef, ArgDef, DomainSchema};
use super::tokenize::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    UnknownAction,
    UnknownEntityType,
    UnknownArgument,
    UnknownVariable,
    UnresolvedAct,
    SpanOutOfBounds,
    OverlappingSpans,
    UseBeforeDefinition,
    Redefinition,
    TypeMismatch,
    ValueMismatch,
    MissingRequiredArgument,
    MultiValueMismatch,
    ReturnMismatch,
    PhaseOrder,
    MissingEnd,
}

impl FindingKind {
    pub fn describe(self) -> &'static str {
        match self {
            FindingKind::UnknownAction => "unknown action",
            FindingKind::UnknownEntityType => "unknown entity type",
            FindingKind::UnknownArgument => "unknown argument",
            FindingKind::UnknownVariable => "unknown variable",
            FindingKind::UnresolvedAct => "unresolved dialogue act",
            FindingKind::SpanOutOfBounds => "span out of bounds",
            FindingKind::OverlappingSpans => "overlapping spans",
            FindingKind::UseBeforeDefinition => "use before definition",
            FindingKind::Redefinition => "variable redefinition",
            FindingKind::TypeMismatch => "type mismatch",
            FindingKind::ValueMismatch => "value mismatch",
            FindingKind::MissingRequiredArgument => "missing required argument",
            FindingKind::MultiValueMismatch => "list bound to single-valued argument",
            FindingKind::ReturnMismatch => "return variable mismatch",
            FindingKind::PhaseOrder => "user/agent phase order",
            FindingKind::MissingEnd => "dialogue does not end with EndDialogue",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    /// Event index, when the finding is tied to one event.
    pub event: Option<usize>,
    pub kind: FindingKind,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.event {
            Some(i) => write!(f, "event {i}: {}: {}", self.kind.describe(), self.message),
            None => write!(f, "{}: {}", self.kind.describe(), self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, kind: FindingKind) -> bool {
        self.findings.iter().any(|f| f.kind == kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMode {
    /// A finished dialogue: must end with `EndDialogue`.
    Complete,
    /// A live session history, which may stop anywhere.
    Prefix,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Opening,
    AwaitUser,
    Agent,
    Ended,
}

struct Checker<'a> {
    vars: &'a BTreeMap<String, Variable>,
    defined: BTreeSet<&'a str>,
    findings: Vec<Finding>,
}

impl<'a> Checker<'a> {
    fn push(&mut self, event: Option<usize>, kind: FindingKind, message: impl Into<String>) {
        self.findings.push(Finding {
            event,
            kind,
            message: message.into(),
        });
    }

    fn declared(&mut self, i: usize, var: &str, entity_type: &str) {
        match self.vars.get(var) {
            None => self.push(
                Some(i),
                FindingKind::UnknownVariable,
                format!("`{var}` missing from the variable table"),
            ),
            Some(v) if v.entity_type != entity_type => self.push(
                Some(i),
                FindingKind::TypeMismatch,
                format!(
                    "`{var}` declared `{}` but defined as `{entity_type}`",
                    v.entity_type
                ),
            ),
            Some(_) => {}
        }
    }

    fn check_value(
        &mut self,
        i: usize,
        owner: &str,
        arg: &ArgDef,
        value: &'a ArgValue,
        nested: bool,
    ) {
        match value {
            ArgValue::Var(v) => {
                if !self.defined.contains(v.as_str()) {
                    self.push(
                        Some(i),
                        FindingKind::UseBeforeDefinition,
                        format!("`{v}` used in `{owner}.{}` before it is defined", arg.name),
                    );
                }
                if let Some(var) = self.vars.get(v) {
                    if var.entity_type != arg.entity_type {
                        self.push(
                            Some(i),
                            FindingKind::TypeMismatch,
                            format!(
                                "`{v}` has type `{}` but `{owner}.{}` accepts `{}`",
                                var.entity_type, arg.name, arg.entity_type
                            ),
                        );
                    }
                }
            }
            ArgValue::Literal { .. } => {}
            ArgValue::List(items) => {
                if nested || !arg.multi_valued {
                    self.push(
                        Some(i),
                        FindingKind::MultiValueMismatch,
                        format!("`{owner}.{}` is not multi-valued", arg.name),
                    );
                }
                for item in items {
                    self.check_value(i, owner, arg, item, true);
                }
            }
        }
    }

    fn check_args(
        &mut self,
        i: usize,
        action: ActionRef<'a>,
        args: &'a BTreeMap<String, ArgValue>,
    ) {
        let owner = action.name();
        for (name, value) in args {
            match action.args().iter().find(|a| &a.name == name) {
                None => self.push(
                    Some(i),
                    FindingKind::UnknownArgument,
                    format!("`{owner}` has no argument `{name}`"),
                ),
                Some(def) => self.check_value(i, owner, def, value, false),
            }
        }
        for def in action.args() {
            let present = args
                .get(&def.name)
                .is_some_and(|v| !matches!(v, ArgValue::List(l) if l.is_empty()));
            if def.required && !present {
                self.push(
                    Some(i),
                    FindingKind::MissingRequiredArgument,
                    format!("`{owner}` requires `{}`", def.name),
                );
            }
        }
    }
}

/// Check every structural and typing invariant of an annotated dialogue.
/// Findings are data; an empty report means the dialogue is valid.
pub fn validate_dialogue(
    d: &AnnotatedDialogue,
    schema: &DomainSchema,
    mode: ValidationMode,
) -> ValidationReport {
    let mut c = Checker {
        vars: &d.variables,
        defined: BTreeSet::new(),
        findings: Vec::new(),
    };
    let mut phase = Phase::Opening;
    let mut phase_len = 0usize;

    for (i, ev) in d.events.iter().enumerate() {
        if phase == Phase::Ended {
            c.push(Some(i), FindingKind::PhaseOrder, "event after EndDialogue");
        }
        match ev {
            DialogueEvent::User { text, spans, acts } => {
                if phase == Phase::Agent || (phase == Phase::Opening && phase_len > 0) {
                    c.push(
                        Some(i),
                        FindingKind::PhaseOrder,
                        "user utterance before the agent ended its turn",
                    );
                }
                phase = Phase::Agent;
                phase_len = 0;
                let n = tokenize(text).len();
                let mut sorted: Vec<_> = spans.iter().collect();
                sorted.sort_by_key(|s| (s.start, s.end));
                let mut last_end = 0;
                for s in &sorted {
                    if s.start >= s.end || s.end > n {
                        c.push(
                            Some(i),
                            FindingKind::SpanOutOfBounds,
                            format!("span [{}, {}) outside {n} tokens", s.start, s.end),
                        );
                        continue;
                    }
                    if s.start < last_end {
                        c.push(
                            Some(i),
                            FindingKind::OverlappingSpans,
                            format!("span [{}, {}) overlaps", s.start, s.end),
                        );
                    }
                    last_end = last_end.max(s.end);
                }
                let tokens = tokenize(text);
                for s in spans {
                    if schema.entity_type(&s.entity_type).is_none() {
                        c.push(
                            Some(i),
                            FindingKind::UnknownEntityType,
                            format!("`{}`", s.entity_type),
                        );
                    }
                    c.declared(i, &s.var, &s.entity_type);
                    if s.start < s.end && s.end <= n && !c.defined.contains(s.var.as_str()) {
                        if let Some(v) = d.variables.get(&s.var) {
                            let surface = tokens[s.range()].join(" ");
                            if surface.to_lowercase() != v.value.to_lowercase() {
                                c.push(
                                    Some(i),
                                    FindingKind::ValueMismatch,
                                    format!(
                                        "`{}` is \"{}\" but the span reads \"{surface}\"",
                                        s.var, v.value
                                    ),
                                );
                            }
                        }
                    }
                }
                for s in spans {
                    c.defined.insert(s.var.as_str());
                }
                for act in acts {
                    if !schema.act_resolves(act) {
                        c.push(Some(i), FindingKind::UnresolvedAct, format!("`{act}`"));
                    }
                }
            }
            DialogueEvent::Api {
                name,
                args,
                returns,
                failed,
            } => {
                phase_len += 1;
                if phase == Phase::AwaitUser {
                    c.push(
                        Some(i),
                        FindingKind::PhaseOrder,
                        "agent action after EndTurn without a user utterance",
                    );
                }
                let Some(api) = schema.api(name) else {
                    c.push(
                        Some(i),
                        FindingKind::UnknownAction,
                        format!("no API named `{name}`"),
                    );
                    continue;
                };
                c.check_args(i, ActionRef::Api(api), args);
                match (returns, &api.return_type, failed) {
                    (Some(r), Some(ty), false) => {
                        if c.defined.contains(r.as_str()) {
                            c.push(
                                Some(i),
                                FindingKind::Redefinition,
                                format!("`{r}` is already defined"),
                            );
                        }
                        c.declared(i, r, ty);
                        c.defined.insert(r.as_str());
                    }
                    (None, None, _) | (None, Some(_), true) => {}
                    (Some(r), _, true) => c.push(
                        Some(i),
                        FindingKind::ReturnMismatch,
                        format!("failed call binds `{r}`"),
                    ),
                    (Some(r), None, false) => c.push(
                        Some(i),
                        FindingKind::ReturnMismatch,
                        format!("`{name}` returns nothing but binds `{r}`"),
                    ),
                    (None, Some(_), false) => c.push(
                        Some(i),
                        FindingKind::ReturnMismatch,
                        format!("`{name}` returns a value that is not bound"),
                    ),
                }
            }
            DialogueEvent::Nlg {
                name, args, acts, ..
            } => {
                phase_len += 1;
                if phase == Phase::AwaitUser {
                    c.push(
                        Some(i),
                        FindingKind::PhaseOrder,
                        "agent action after EndTurn without a user utterance",
                    );
                }
                let Some(nlg) = schema.nlg(name) else {
                    c.push(
                        Some(i),
                        FindingKind::UnknownAction,
                        format!("no NLG response named `{name}`"),
                    );
                    continue;
                };
                c.check_args(i, ActionRef::Nlg(nlg), args);
                for act in acts {
                    if !schema.act_resolves(act) {
                        c.push(Some(i), FindingKind::UnresolvedAct, format!("`{act}`"));
                    }
                }
            }
            DialogueEvent::EndTurn | DialogueEvent::EndDialogue => {
                match phase {
                    Phase::AwaitUser => {
                        c.push(Some(i), FindingKind::PhaseOrder, "empty agent phase")
                    }
                    Phase::Opening if phase_len == 0 && matches!(ev, DialogueEvent::EndTurn) => {
                        c.push(Some(i), FindingKind::PhaseOrder, "empty opening turn")
                    }
                    _ => {}
                }
                phase = if matches!(ev, DialogueEvent::EndDialogue) {
                    Phase::Ended
                } else {
                    Phase::AwaitUser
                };
                phase_len = 0;
            }
        }
    }
    if mode == ValidationMode::Complete && phase != Phase::Ended {
        c.push(
            None,
            FindingKind::MissingEnd,
            "last event is not EndDialogue",
        );
    }
    ValidationReport {
        findings: c.findings,
    }
}

/// Variables visible at one point of a dialogue.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Environment {
    pub vars: BTreeMap<String, Variable>,
    /// Semantic slot (entity type) -> the most recent variable of that type.
    /// A later definition shadows an earlier one, which is how corrections
    /// rebind a slot.
    pub slots: BTreeMap<String, String>,
}

impl Environment {
    pub fn slot_value(&self, entity_type: &str) -> Option<&str> {
        self.slots
            .get(entity_type)
            .and_then(|v| self.vars.get(v))
            .map(|v| v.value.as_str())
    }
}

/// Environment before each event: entry `i` holds exactly the variables
/// defined by events `< i`; the extra last entry is the environment after
/// the whole dialogue.
pub fn resolve_references(d: &AnnotatedDialogue) -> Vec<Environment> {
    let mut envs = Vec::with_capacity(d.events.len() + 1);
    let mut env = Environment::default();
    for ev in &d.events {
        envs.push(env.clone());
        let mut define = |var: &str| {
            if let Some(v) = d.variables.get(var) {
                env.vars.insert(var.to_string(), v.clone());
                env.slots.insert(v.entity_type.clone(), var.to_string());
            }
        };
        match ev {
            DialogueEvent::User { spans, .. } => {
                for s in spans {
                    define(&s.var);
                }
            }
            DialogueEvent::Api {
                returns: Some(r), ..
            } => define(r),
            _ => {}
        }
    }
    envs.push(env);
    envs
}
