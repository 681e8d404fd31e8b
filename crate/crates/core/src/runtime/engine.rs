use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{extract_features, EntityMention};
use crate::dml::{
    tokenize, ActLabel, AnnotatedDialogue, ArgValue, DialogueEvent, DomainSchema, Span,
    END_DIALOGUE, END_TURN,
};
use crate::models::{select_action, ActionSignature, ArgScores, Binding, ModelError, Models};
use crate::sim::realize_nlg;

use super::{ApiOutcome, Executor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    pub action_cap: usize,
    /// NLG response used when no action is confident enough.
    pub fallback_nlg: String,
    pub api_timeout_ms: u64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            action_cap: 8,
            fallback_nlg: "cannot_handle".into(),
            api_timeout_ms: 5000,
        }
    }
}

/// How the next action is chosen from the predicted distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Confidence bands with fallback.
    Thresholds,
    /// Always the most likely action.
    Argmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Chosen {
    Confident,
    Sampled,
    Fallback,
    Forced,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub step: usize,
    /// Most likely actions with their probabilities.
    pub top: Vec<(String, f64)>,
    pub chosen: Option<String>,
    pub how: Chosen,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub pointer: Vec<ArgScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TurnTrace {
    pub mentions: Vec<EntityMention>,
    pub steps: Vec<StepTrace>,
    pub diagnostics: Vec<String>,
}

/// An executed agent action with its resolved argument values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutedAction {
    pub name: String,
    pub args: BTreeMap<String, Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub returns: Option<String>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnOutcome {
    pub actions: Vec<ExecutedAction>,
    pub ended: bool,
    /// The loop was stopped by the caller's guard before a terminal action.
    pub stopped: bool,
    pub trace: TurnTrace,
}

/// Append a user utterance to `history` with spans predicted by the
/// tagger; each span binds a fresh variable.
pub fn tag_utterance(
    models: &Models,
    history: &mut AnnotatedDialogue,
    text: &str,
) -> Result<Vec<EntityMention>, ModelError> {
    history.events.push(DialogueEvent::User {
        text: text.to_string(),
        spans: Vec::new(),
        acts: Vec::new(),
    });
    let ctx = extract_features(history, &models.schema, models.config.window);
    let mut mentions = models.tag(&ctx)?;
    let tokens = tokenize(text);
    let mut spans = Vec::with_capacity(mentions.len());
    for m in &mut mentions {
        let (s, e) = m.span.expect("tagger mentions carry spans");
        let var = history.fresh_var(&m.entity_type, &tokens[s..e].join(" "));
        m.var = Some(var.clone());
        spans.push(Span {
            start: s,
            end: e,
            entity_type: m.entity_type.clone(),
            var,
        });
    }
    if let Some(DialogueEvent::User { spans: slot, .. }) = history.events.last_mut() {
        *slot = spans;
    }
    Ok(mentions)
}

fn binding_value(
    history: &AnnotatedDialogue,
    ctx: &crate::context::DialogueContext,
    positions: &[usize],
    multi: bool,
) -> Option<ArgValue> {
    let mut items: Vec<ArgValue> = Vec::new();
    for &p in positions {
        let m = ctx.mention(p)?;
        let v = match &m.var {
            Some(var) if history.variables.contains_key(var) => ArgValue::Var(var.clone()),
            _ => ArgValue::literal(m.value.clone()),
        };
        if !items.contains(&v) {
            items.push(v);
        }
    }
    if multi {
        Some(ArgValue::List(items))
    } else {
        items.into_iter().next()
    }
}

struct Loop<'a> {
    models: &'a Models,
    schema: &'a DomainSchema,
    history: &'a mut AnnotatedDialogue,
    rng: &'a mut ChaCha8Rng,
    out: TurnOutcome,
}

impl Loop<'_> {
    fn push_control(&mut self, name: &str) {
        let ev = if name == END_DIALOGUE {
            self.out.ended = true;
            DialogueEvent::EndDialogue
        } else {
            DialogueEvent::EndTurn
        };
        self.history.events.push(ev);
        self.out.actions.push(ExecutedAction {
            name: name.to_string(),
            args: BTreeMap::new(),
            returns: None,
            failed: false,
            text: None,
        });
    }

    /// Render and append an NLG response. Fails when no template fits the
    /// bound arguments.
    fn push_nlg(&mut self, name: &str, args: BTreeMap<String, ArgValue>) -> Result<(), String> {
        let nlg = self
            .schema
            .nlg(name)
            .ok_or_else(|| format!("unknown response {name}"))?;
        let values: BTreeMap<String, Vec<String>> = args
            .iter()
            .map(|(k, v)| (k.clone(), self.history.values_of(v)))
            .collect();
        let text = realize_nlg(nlg, &values, self.rng).map_err(|e| e.to_string())?;
        self.history.events.push(DialogueEvent::Nlg {
            name: name.to_string(),
            args,
            acts: nlg.acts.clone(),
            text: Some(text.clone()),
        });
        self.out.actions.push(ExecutedAction {
            name: name.to_string(),
            args: values,
            returns: None,
            failed: false,
            text: Some(text),
        });
        Ok(())
    }

    fn fallback(&mut self, fallback: &str, why: String) {
        self.out.trace.diagnostics.push(why);
        if self.schema.nlg(fallback).is_some() {
            if let Err(e) = self.push_nlg(fallback, BTreeMap::new()) {
                self.out.trace.diagnostics.push(e);
            }
        }
        self.push_control(END_TURN);
    }

    fn failure_nlg(&mut self, api: &str) {
        let target = self
            .schema
            .nlgs_for_acts(&[ActLabel::failure(api)])
            .first()
            .map(|n| n.name.clone());
        match target {
            Some(n) => {
                if let Err(e) = self.push_nlg(&n, BTreeMap::new()) {
                    self.out.trace.diagnostics.push(e);
                }
            }
            None => self
                .out
                .trace
                .diagnostics
                .push(format!("{api} failed and has no failure response")),
        }
    }

    fn execute(
        &mut self,
        executor: &mut dyn Executor,
        step: usize,
        sig: &ActionSignature,
        ctx: &crate::context::DialogueContext,
    ) -> Result<(), String> {
        let action = self
            .schema
            .action(&sig.action)
            .ok_or_else(|| format!("unknown action {}", sig.action))?;
        let mut args = BTreeMap::new();
        for def in action.args() {
            if let Some(Binding::Mentions(ps)) = sig.bindings.get(&def.name) {
                if let Some(v) = binding_value(self.history, ctx, ps, def.multi_valued) {
                    args.insert(def.name.clone(), v);
                }
            }
        }
        match action {
            crate::dml::ActionRef::Nlg(n) => self.push_nlg(&n.name, args),
            crate::dml::ActionRef::Api(api) => {
                let values: BTreeMap<String, Vec<String>> = args
                    .iter()
                    .map(|(k, v)| (k.clone(), self.history.values_of(v)))
                    .collect();
                let outcome = executor.call(self.schema, step, api, &values, self.rng);
                let (returns, failed, value) = match outcome {
                    ApiOutcome::Value(v) => match &api.return_type {
                        Some(t) => (Some(self.history.fresh_var(t, &v)), false, Some(v)),
                        None => (None, false, None),
                    },
                    ApiOutcome::Nothing if api.return_type.is_some() => {
                        self.out
                            .trace
                            .diagnostics
                            .push(format!("{} returned nothing", api.name));
                        (None, true, None)
                    }
                    ApiOutcome::Nothing => (None, false, None),
                    ApiOutcome::Failure(e) => {
                        self.out
                            .trace
                            .diagnostics
                            .push(format!("{} failed: {e}", api.name));
                        (None, true, None)
                    }
                };
                self.history.events.push(DialogueEvent::Api {
                    name: api.name.clone(),
                    args,
                    returns,
                    failed,
                });
                self.out.actions.push(ExecutedAction {
                    name: api.name.clone(),
                    args: values,
                    returns: value,
                    failed,
                    text: None,
                });
                if failed {
                    self.failure_nlg(&api.name);
                }
                Ok(())
            }
        }
    }
}

/// Run the agent side of one turn on `history`, which must end with the
/// user's utterance. `guard(step, action)` may stop the loop before an
/// action is executed.
pub fn run_turn(
    models: &Models,
    config: &RuntimeConfig,
    history: &mut AnnotatedDialogue,
    executor: &mut dyn Executor,
    rng: &mut ChaCha8Rng,
    selection: Selection,
    guard: &mut dyn FnMut(usize, &str) -> bool,
) -> Result<TurnOutcome, ModelError> {
    let schema = &models.schema;
    let mut lp = Loop {
        models,
        schema,
        history,
        rng,
        out: TurnOutcome {
            actions: Vec::new(),
            ended: false,
            stopped: false,
            trace: TurnTrace::default(),
        },
    };
    let cfg = &models.config;
    loop {
        let step = lp.out.actions.len();
        if step >= config.action_cap {
            lp.out.trace.steps.push(StepTrace {
                step,
                top: Vec::new(),
                chosen: Some(END_TURN.into()),
                how: Chosen::Forced,
                pointer: Vec::new(),
                note: Some(format!("action cap {} reached", config.action_cap)),
            });
            lp.out.trace.diagnostics.push(format!(
                "forced {END_TURN} after {} actions",
                config.action_cap
            ));
            lp.push_control(END_TURN);
            break;
        }
        let ctx = extract_features(lp.history, schema, cfg.window);
        let dist = lp.models.predict_action(&ctx)?;
        let top: Vec<(String, f64)> = dist
            .ranked()
            .into_iter()
            .take(5)
            .map(|(a, p)| (a.to_string(), p))
            .collect();
        let best = dist.argmax();
        let choice = match selection {
            Selection::Argmax => Some(best),
            Selection::Thresholds => select_action(&dist, cfg.tau_high, cfg.tau_low, lp.rng),
        };
        let Some(choice) = choice else {
            lp.out.trace.steps.push(StepTrace {
                step,
                top,
                chosen: None,
                how: Chosen::Fallback,
                pointer: Vec::new(),
                note: None,
            });
            if !guard(step, &config.fallback_nlg) {
                lp.out.stopped = true;
                break;
            }
            lp.fallback(
                &config.fallback_nlg,
                format!("no action reached confidence {}", cfg.tau_low),
            );
            break;
        };
        let name = dist.actions[choice].clone();
        let how = if dist.probs[choice] >= cfg.tau_high || selection == Selection::Argmax {
            Chosen::Confident
        } else {
            Chosen::Sampled
        };
        let (sig, pointer, note) = match lp.models.fill(&ctx, &name) {
            Ok((sig, pointer)) => (Some(sig), pointer, None),
            Err(ModelError::MissingArgument { arg, .. }) => (None, Vec::new(), Some(arg)),
            Err(e) => return Err(e),
        };
        let request = note
            .as_deref()
            .and_then(|arg| schema.request_nlg(arg))
            .map(|n| n.name.clone());
        lp.out.trace.steps.push(StepTrace {
            step,
            top,
            chosen: Some(name.clone()),
            how,
            pointer,
            note: note.as_ref().map(|a| format!("missing argument {a}")),
        });
        let executed = match (&note, &request) {
            (Some(_), Some(r)) => r.clone(),
            (Some(_), None) => config.fallback_nlg.clone(),
            (None, _) => name.clone(),
        };
        if !guard(step, &executed) {
            lp.out.stopped = true;
            break;
        }
        if name == END_TURN || name == END_DIALOGUE {
            lp.push_control(&name);
            break;
        }
        match (sig, note) {
            (Some(sig), None) => {
                if let Err(e) = lp.execute(executor, step, &sig, &ctx) {
                    lp.fallback(&config.fallback_nlg, e);
                    break;
                }
            }
            (_, Some(arg)) => match request {
                Some(r) => {
                    if let Err(e) = lp.push_nlg(&r, BTreeMap::new()) {
                        lp.fallback(&config.fallback_nlg, e);
                        break;
                    }
                }
                None => {
                    lp.fallback(
                        &config.fallback_nlg,
                        format!("missing argument {arg} and no request response"),
                    );
                    break;
                }
            },
            (None, None) => unreachable!("fill returns a signature or an error"),
        }
    }
    Ok(lp.out)
}
