use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;

use super::config::{SimConfig, SimError};
use super::dataset::{simulate_api, ApiReturn};
use super::goal::{sample_fresh, Cooperation, Goal, GoalValue, RevisionTrigger, SeedIndex};
use super::realize::{realize_nlg, Realized};
use crate::dml::{
    canonical_values, normalize_value, var_prefix, ActKind, ActLabel, ArgValue, DialogueEvent,
    DomainSchema, Span, Variable,
};

/// A dialogue act with its payload values (surface strings).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueAct {
    pub label: ActLabel,
    pub values: Vec<String>,
}

impl DialogueAct {
    pub fn bare(kind: ActKind) -> Self {
        DialogueAct {
            label: ActLabel::bare(kind),
            values: Vec::new(),
        }
    }

    pub fn targeted(kind: ActKind, target: &str) -> Self {
        DialogueAct {
            label: ActLabel::new(kind, target),
            values: Vec::new(),
        }
    }

    pub fn with_values(kind: ActKind, target: &str, values: Vec<String>) -> Self {
        DialogueAct {
            label: ActLabel::new(kind, target),
            values,
        }
    }

    fn target(&self) -> &str {
        self.label.target.as_deref().unwrap_or("")
    }
}

/// Incrementally built annotated dialogue.
#[derive(Debug, Clone)]
pub struct Transcript<'a> {
    schema: &'a DomainSchema,
    pub events: Vec<DialogueEvent>,
    pub variables: BTreeMap<String, Variable>,
    counters: BTreeMap<String, usize>,
}

impl<'a> Transcript<'a> {
    pub fn new(schema: &'a DomainSchema) -> Self {
        Transcript {
            schema,
            events: Vec::new(),
            variables: BTreeMap::new(),
            counters: BTreeMap::new(),
        }
    }

    pub fn fresh_var(&mut self, entity_type: &str, value: &str) -> String {
        let prefix = var_prefix(entity_type);
        let n = self.counters.entry(prefix.clone()).or_insert(0);
        let id = loop {
            *n += 1;
            let id = format!("{prefix}{n}");
            if !self.variables.contains_key(&id) {
                break id;
            }
        };
        self.variables.insert(
            id.clone(),
            Variable {
                entity_type: entity_type.to_string(),
                value: normalize_value(value),
            },
        );
        id
    }

    /// Append a realized user utterance; returns the variables bound for
    /// each act, in act order.
    pub fn user(&mut self, acts: &[DialogueAct], realized: &Realized) -> Vec<Vec<String>> {
        let mut vars = vec![Vec::new(); acts.len()];
        let mut spans = Vec::with_capacity(realized.spans.len());
        for s in &realized.spans {
            let value = realized.tokens[s.start..s.end].join(" ");
            let var = self.fresh_var(&s.entity_type, &value);
            vars[s.act].push(var.clone());
            spans.push(Span {
                start: s.start,
                end: s.end,
                entity_type: s.entity_type.clone(),
                var,
            });
        }
        self.events.push(DialogueEvent::User {
            text: realized.text(),
            spans,
            acts: acts.iter().map(|a| a.label.clone()).collect(),
        });
        vars
    }

    fn binding(&self, multi: bool, vars: &[String]) -> ArgValue {
        if multi {
            ArgValue::List(vars.iter().cloned().map(ArgValue::Var).collect())
        } else {
            ArgValue::Var(vars.last().cloned().unwrap_or_default())
        }
    }

    /// Append an NLG call with arguments bound to variables; the text is
    /// rendered from the response's templates.
    pub fn nlg<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        args: &BTreeMap<String, Vec<String>>,
        rng: &mut R,
    ) -> Result<Vec<ActLabel>, SimError> {
        let nlg = self
            .schema
            .nlg(name)
            .ok_or_else(|| SimError::MissingNlg(name.to_string()))?;
        let values: BTreeMap<String, Vec<String>> = args
            .iter()
            .map(|(k, vars)| {
                (
                    k.clone(),
                    vars.iter()
                        .map(|v| self.variables[v].value.clone())
                        .collect(),
                )
            })
            .collect();
        let text = realize_nlg(nlg, &values, rng)?;
        let bindings = args
            .iter()
            .map(|(k, vars)| {
                let multi = nlg.arg(k).is_some_and(|a| a.multi_valued);
                (k.clone(), self.binding(multi, vars))
            })
            .collect();
        self.events.push(DialogueEvent::Nlg {
            name: name.to_string(),
            args: bindings,
            acts: nlg.acts.clone(),
            text: Some(text),
        });
        Ok(nlg.acts.clone())
    }

    pub fn api(
        &mut self,
        name: &str,
        args: &BTreeMap<String, Vec<String>>,
        returns: Option<String>,
        failed: bool,
    ) {
        let api = self.schema.api(name).expect("known API");
        let bindings = args
            .iter()
            .map(|(k, vars)| {
                let multi = api.arg(k).is_some_and(|a| a.multi_valued);
                (k.clone(), self.binding(multi, vars))
            })
            .collect();
        self.events.push(DialogueEvent::Api {
            name: name.to_string(),
            args: bindings,
            returns,
            failed,
        });
    }

    pub fn end_turn(&mut self) {
        self.events.push(DialogueEvent::EndTurn);
    }

    pub fn end_dialogue(&mut self) {
        self.events.push(DialogueEvent::EndDialogue);
    }
}

/// Heuristic user: reveals a fixed goal over the conversation.
#[derive(Debug, Clone)]
pub struct UserAgent {
    goal: Goal,
    current: usize,
    started: bool,
    returns: Vec<Option<String>>,
    dropped: Vec<bool>,
    /// The user's model of what the system believes: slot -> canonical values.
    mirror: BTreeMap<String, Vec<String>>,
    revision_fired: bool,
    done: bool,
}

impl UserAgent {
    pub fn new(goal: Goal) -> Self {
        let n = goal.calls.len();
        UserAgent {
            goal,
            current: 0,
            started: false,
            returns: vec![None; n],
            dropped: vec![false; n],
            mirror: BTreeMap::new(),
            revision_fired: false,
            done: false,
        }
    }

    pub fn goal(&self) -> &Goal {
        &self.goal
    }

    pub fn into_goal(self) -> Goal {
        self.goal
    }

    pub fn corrected(&self) -> bool {
        self.revision_fired
    }

    pub fn done(&self) -> bool {
        self.done
    }

    fn revision_for(&self, call: usize, trigger: RevisionTrigger) -> Option<(String, String)> {
        match &self.goal.revision {
            Some(r) if !self.revision_fired && r.call == call && r.trigger == trigger => {
                Some((r.slot.clone(), r.new_value.clone()))
            }
            _ => None,
        }
    }

    /// What the user would say for `slot` of call `k` right now.
    fn value(&self, k: usize, slot: &str) -> Option<Vec<String>> {
        if self.revision_fired {
            if let Some(r) = &self.goal.revision {
                if r.call == k && r.slot == slot {
                    return Some(vec![r.new_value.clone()]);
                }
            }
        }
        match self.goal.calls[k].args.get(slot)? {
            GoalValue::One(v) => Some(vec![v.clone()]),
            GoalValue::Many(vs) => Some(vs.clone()),
            GoalValue::FromReturn(j) => self.returns[*j].clone().map(|v| vec![v]),
        }
    }

    fn differs(&self, k: usize, slot: &str) -> bool {
        match self.value(k, slot) {
            Some(v) => self.mirror.get(slot) != Some(&canonical_values(&v)),
            None => false,
        }
    }

    fn informs(
        &mut self,
        k: usize,
        slots: &BTreeSet<String>,
        schema: &DomainSchema,
    ) -> Vec<DialogueAct> {
        let api = schema
            .api(&self.goal.calls[k].api)
            .expect("goal APIs resolve");
        let mut out = Vec::new();
        for def in &api.args {
            if !slots.contains(&def.name) {
                continue;
            }
            if let Some(values) = self.value(k, &def.name) {
                self.mirror
                    .insert(def.name.clone(), canonical_values(&values));
                out.push(DialogueAct::with_values(ActKind::Inform, &def.name, values));
            }
        }
        if let Some((slot, new_value)) = self.revision_for(k, RevisionTrigger::AfterInform) {
            if slots.contains(&slot) {
                self.revision_fired = true;
                self.mirror.insert(
                    slot.clone(),
                    canonical_values(std::slice::from_ref(&new_value)),
                );
                out.push(DialogueAct::with_values(
                    ActKind::Correct,
                    &slot,
                    vec![new_value],
                ));
            }
        }
        out
    }

    /// Acts that open call `current`: request (or accept an offer of) its
    /// API and volunteer slots according to the cooperation level.
    fn opening(&mut self, offer: Option<&str>, schema: &DomainSchema) -> Vec<DialogueAct> {
        let n = self.goal.calls.len();
        let mut out = Vec::new();
        if self.current >= n {
            if offer.is_some() {
                out.push(DialogueAct::bare(ActKind::DeclineOffer));
            }
            out.push(DialogueAct::bare(ActKind::Bye));
            self.done = true;
            return out;
        }
        let k = self.current;
        let api_name = self.goal.calls[k].api.clone();
        match offer {
            Some(o) if o == api_name => out.push(DialogueAct::bare(ActKind::AcceptOffer)),
            Some(_) => {
                out.push(DialogueAct::bare(ActKind::DeclineOffer));
                out.push(DialogueAct::targeted(ActKind::Request, &api_name));
            }
            None => out.push(DialogueAct::targeted(ActKind::Request, &api_name)),
        }
        let api = schema.api(&api_name).expect("goal APIs resolve");
        for def in api.args.iter().filter(|a| !a.required) {
            self.mirror.remove(&def.name);
        }
        let call = &self.goal.calls[k];
        let mut slots: BTreeSet<String> = match self.goal.cooperation {
            Cooperation::Over => call.args.keys().cloned().collect(),
            Cooperation::Exact => call
                .initial
                .iter()
                .filter(|s| call.args.contains_key(*s))
                .cloned()
                .collect(),
            Cooperation::Under => BTreeSet::new(),
        };
        let keys: Vec<String> = call.args.keys().cloned().collect();
        for slot in keys {
            if self.differs(k, &slot) {
                slots.insert(slot);
            }
        }
        if let Some((slot, _)) = self.revision_for(k, RevisionTrigger::AfterInform) {
            slots.insert(slot);
        }
        out.extend(self.informs(k, &slots, schema));
        out
    }

    fn drop_dependents(&mut self, k: usize) {
        for j in self.goal.dependents(k) {
            self.dropped[j] = true;
        }
    }

    /// One user turn in response to the system's acts of the previous turn.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        incoming: &[DialogueAct],
        schema: &DomainSchema,
        rng: &mut R,
    ) -> Result<Vec<DialogueAct>, SimError> {
        if self.done {
            return Err(SimError::Stalled("user already said goodbye".to_string()));
        }
        let n = self.goal.calls.len();
        let mut advanced = false;
        for act in incoming
            .iter()
            .filter(|a| a.label.kind == ActKind::NotifyResult)
        {
            let k = self.current;
            if k >= n || self.goal.calls[k].api != act.target() {
                return Err(SimError::Stalled(format!(
                    "unexpected result of `{}`",
                    act.target()
                )));
            }
            if act.label.failure {
                self.drop_dependents(k);
            } else if let Some(value) = act.values.first() {
                self.returns[k] = Some(value.clone());
                let api = schema.api(act.target()).expect("known API");
                if let Some(ty) = &api.return_type {
                    for (slot, slot_ty) in schema.slots() {
                        if slot_ty == ty {
                            self.mirror.insert(
                                slot.to_string(),
                                canonical_values(std::slice::from_ref(value)),
                            );
                        }
                    }
                }
            }
            self.current = (k + 1..n).find(|&j| !self.dropped[j]).unwrap_or(n);
            advanced = true;
        }

        let find = |kind: ActKind| incoming.iter().find(|a| a.label.kind == kind);
        let offer = find(ActKind::Offer).map(|a| a.target().to_string());

        if !self.started {
            self.started = true;
            return Ok(self.opening(None, schema));
        }
        if find(ActKind::Confirm).is_some() {
            let k = self.current;
            if let Some((slot, new_value)) = self.revision_for(k, RevisionTrigger::AtConfirm) {
                self.revision_fired = true;
                self.mirror.insert(
                    slot.clone(),
                    canonical_values(std::slice::from_ref(&new_value)),
                );
                return Ok(vec![
                    DialogueAct::bare(ActKind::Deny),
                    DialogueAct::with_values(ActKind::Correct, &slot, vec![new_value]),
                ]);
            }
            return Ok(vec![DialogueAct::bare(ActKind::Affirm)]);
        }
        if let Some(req) = find(ActKind::Request) {
            let k = self.current;
            if k >= n {
                return Err(SimError::Stalled(format!(
                    "request `{}` after the goal is complete",
                    req.target()
                )));
            }
            let slot = req.target().to_string();
            if !self.goal.calls[k].args.contains_key(&slot) {
                // unanswerable: invent a value and commit to it
                let ty = schema.slot_type(&slot).ok_or_else(|| {
                    SimError::Stalled(format!("request for unknown slot `{slot}`"))
                })?;
                let value = sample_fresh(schema, ty, &BTreeSet::new(), rng)?;
                let v = if schema.slot_is_multi(&slot) {
                    GoalValue::Many(vec![value])
                } else {
                    GoalValue::One(value)
                };
                self.goal.calls[k].args.insert(slot.clone(), v);
            }
            let mut slots = BTreeSet::from([slot]);
            if self.goal.cooperation == Cooperation::Over {
                let keys: Vec<String> = self.goal.calls[k].args.keys().cloned().collect();
                for s in keys {
                    if self.differs(k, &s) {
                        slots.insert(s);
                    }
                }
            }
            return Ok(self.informs(k, &slots, schema));
        }
        if advanced {
            return Ok(self.opening(offer.as_deref(), schema));
        }
        Err(SimError::Stalled("nothing to respond to".to_string()))
    }
}

/// Heuristic system: tracks slot beliefs and drives each requested API to
/// completion.
#[derive(Debug, Clone)]
pub struct SystemAgent<'a> {
    schema: &'a DomainSchema,
    index: &'a SeedIndex,
    /// slot -> variables currently believed to fill it
    belief: BTreeMap<String, Vec<String>>,
    active: Option<String>,
    awaiting_confirm: bool,
    offered: Option<String>,
    pub offers: usize,
    pub calls: usize,
    pub failures: usize,
}

impl<'a> SystemAgent<'a> {
    pub fn new(schema: &'a DomainSchema, index: &'a SeedIndex) -> Self {
        SystemAgent {
            schema,
            index,
            belief: BTreeMap::new(),
            active: None,
            awaiting_confirm: false,
            offered: None,
            offers: 0,
            calls: 0,
            failures: 0,
        }
    }

    fn activate(&mut self, api: &str) {
        if let Some(def) = self.schema.api(api) {
            for a in def.args.iter().filter(|a| !a.required) {
                self.belief.remove(&a.name);
            }
            self.active = Some(api.to_string());
            self.awaiting_confirm = false;
        }
    }

    fn nlg_for(&self, label: ActLabel) -> Result<String, SimError> {
        self.schema
            .nlgs_for_acts(std::slice::from_ref(&label))
            .first()
            .map(|n| n.name.clone())
            .ok_or_else(|| SimError::MissingNlg(label.to_string()))
    }

    /// Bindings for an NLG response: arguments of `return_type` take the
    /// fresh return variable, the rest come from the belief state.
    fn nlg_args(&self, name: &str, ret: Option<(&str, &str)>) -> BTreeMap<String, Vec<String>> {
        let nlg = self.schema.nlg(name).expect("known NLG");
        let mut out = BTreeMap::new();
        for a in &nlg.args {
            match ret {
                Some((ty, var)) if a.entity_type == ty => {
                    out.insert(a.name.clone(), vec![var.to_string()]);
                }
                _ => {
                    if let Some(vars) = self.belief.get(&a.name) {
                        out.insert(a.name.clone(), vars.clone());
                    }
                }
            }
        }
        out
    }

    /// One system turn: consume the user's acts (with the variables the
    /// realized utterance bound), emit events into `t` and return the
    /// system acts the user will see.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        incoming: &[(DialogueAct, Vec<String>)],
        t: &mut Transcript<'_>,
        cfg: &SimConfig,
        rng: &mut R,
    ) -> Result<Vec<DialogueAct>, SimError> {
        let mut out = Vec::new();
        let mut affirmed = false;
        let mut bye = false;
        for (act, _) in incoming {
            match act.label.kind {
                ActKind::Request if self.schema.api(act.target()).is_some() => {
                    self.activate(act.target())
                }
                ActKind::AcceptOffer => {
                    if let Some(o) = self.offered.take() {
                        self.activate(&o);
                    }
                }
                _ => {}
            }
        }
        for (act, vars) in incoming {
            match act.label.kind {
                ActKind::Inform | ActKind::Correct => {
                    self.belief.insert(act.target().to_string(), vars.clone());
                    self.awaiting_confirm = false;
                }
                ActKind::Affirm => affirmed = true,
                ActKind::Deny => self.awaiting_confirm = false,
                ActKind::Bye => bye = true,
                _ => {}
            }
        }
        self.offered = None;

        if bye {
            let stop = self.nlg_for(ActLabel::bare(ActKind::Bye))?;
            t.nlg(&stop, &BTreeMap::new(), rng)?;
            t.end_dialogue();
            out.push(DialogueAct::bare(ActKind::Bye));
            return Ok(out);
        }

        if let Some(api_name) = self.active.clone() {
            let api = self.schema.api(&api_name).expect("active API resolves");
            if let Some(missing) = api
                .args
                .iter()
                .find(|a| a.required && !self.belief.contains_key(&a.name))
            {
                let nlg = self
                    .schema
                    .request_nlg(&missing.name)
                    .ok_or_else(|| SimError::MissingNlg(format!("request({})", missing.name)))?
                    .name
                    .clone();
                t.nlg(&nlg, &BTreeMap::new(), rng)?;
                out.push(DialogueAct::targeted(ActKind::Request, &missing.name));
            } else if api.confirm_before_call && !(self.awaiting_confirm && affirmed) {
                let nlg = self.nlg_for(ActLabel::new(ActKind::Confirm, &api_name))?;
                let args = self.nlg_args(&nlg, None);
                t.nlg(&nlg, &args, rng)?;
                self.awaiting_confirm = true;
                out.push(DialogueAct::targeted(ActKind::Confirm, &api_name));
            } else {
                let args: BTreeMap<String, Vec<String>> = api
                    .args
                    .iter()
                    .filter_map(|a| {
                        self.belief
                            .get(&a.name)
                            .map(|v| (a.name.clone(), v.clone()))
                    })
                    .collect();
                self.active = None;
                self.awaiting_confirm = false;
                self.calls += 1;
                match simulate_api(api, self.schema, cfg.p_api_failure, rng)? {
                    ApiReturn::Failure => {
                        self.failures += 1;
                        t.api(&api_name, &args, None, true);
                        let nlg = self.nlg_for(ActLabel::failure(&api_name))?;
                        t.nlg(&nlg, &BTreeMap::new(), rng)?;
                        out.push(DialogueAct {
                            label: ActLabel::failure(&api_name),
                            values: Vec::new(),
                        });
                    }
                    ret => {
                        let (ret_var, value) = match (&ret, &api.return_type) {
                            (ApiReturn::Value(v), Some(ty)) => {
                                let var = t.fresh_var(ty, v);
                                for (slot, slot_ty) in self.schema.slots() {
                                    if slot_ty == ty {
                                        self.belief.insert(slot.to_string(), vec![var.clone()]);
                                    }
                                }
                                let value = t.variables[&var].value.clone();
                                (Some(var), Some(value))
                            }
                            _ => (None, None),
                        };
                        t.api(&api_name, &args, ret_var.clone(), false);
                        let nlg = self.nlg_for(ActLabel::new(ActKind::NotifyResult, &api_name))?;
                        let ret_ref = api.return_type.as_deref().zip(ret_var.as_deref());
                        let nargs = self.nlg_args(&nlg, ret_ref);
                        t.nlg(&nlg, &nargs, rng)?;
                        out.push(DialogueAct {
                            label: ActLabel::new(ActKind::NotifyResult, &api_name),
                            values: value.into_iter().collect(),
                        });
                        if rng.random::<f64>() < cfg.p_proactive_offer {
                            let candidates: Vec<(&str, String)> = self
                                .index
                                .followers(&api_name)
                                .into_iter()
                                .filter_map(|f| {
                                    self.nlg_for(ActLabel::new(ActKind::Offer, f))
                                        .ok()
                                        .map(|n| (f, n))
                                })
                                .collect();
                            if let Some((api_offered, nlg)) = candidates.choose(rng) {
                                t.nlg(nlg, &BTreeMap::new(), rng)?;
                                self.offered = Some(api_offered.to_string());
                                self.offers += 1;
                                out.push(DialogueAct::targeted(ActKind::Offer, api_offered));
                            }
                        }
                    }
                }
            }
        }
        t.end_turn();
        Ok(out)
    }
}
