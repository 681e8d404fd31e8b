use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;

use super::config::{SimConfig, SimError, SimMode};
use crate::dml::{fold_value, ActKind, AnnotatedDialogue, DialogueEvent, DomainSchema};

/// The desired value of one argument in the user's goal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GoalValue {
    One(String),
    Many(Vec<String>),
    /// Whatever the goal's call at this index returns.
    FromReturn(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalCall {
    pub api: String,
    pub args: BTreeMap<String, GoalValue>,
    /// Slots an exactly cooperative user volunteers when asking for the API.
    pub initial: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cooperation {
    Over,
    Exact,
    Under,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RevisionTrigger {
    /// Fires when the system asks for confirmation.
    AtConfirm,
    /// Fires in the same utterance that first informs the slot.
    AfterInform,
}

/// A change of mind: the user first states the goal value of `slot` and
/// later corrects it to `new_value`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Revision {
    pub call: usize,
    pub slot: String,
    pub new_value: String,
    pub trigger: RevisionTrigger,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Goal {
    pub calls: Vec<GoalCall>,
    pub revision: Option<Revision>,
    pub cooperation: Cooperation,
    /// Index of the seed the skeleton was drawn from.
    pub seed: usize,
    pub recombined: bool,
    /// Seed variable -> resampled value (used by the base sampler).
    pub(crate) seed_values: BTreeMap<String, String>,
}

impl Goal {
    /// Arguments of call `i` after the revision, if any, has been applied.
    pub fn final_args(&self, i: usize) -> BTreeMap<String, GoalValue> {
        let mut args = self.calls[i].args.clone();
        if let Some(r) = &self.revision {
            if r.call == i {
                args.insert(r.slot.clone(), GoalValue::One(r.new_value.clone()));
            }
        }
        args
    }

    /// Calls whose arguments depend, directly or transitively, on call `i`.
    pub fn dependents(&self, i: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::from([i]);
        for (j, call) in self.calls.iter().enumerate().skip(i + 1) {
            if call
                .args
                .values()
                .any(|v| matches!(v, GoalValue::FromReturn(k) if out.contains(k)))
            {
                out.insert(j);
            }
        }
        out.remove(&i);
        out
    }
}

#[derive(Debug, Clone)]
struct SeedCall {
    api: String,
    args: BTreeMap<String, Vec<String>>,
    returns: Option<String>,
    initial: BTreeSet<String>,
}

/// Seed dialogues with their API-call skeletons extracted.
#[derive(Debug, Clone)]
pub struct SeedIndex {
    seeds: Vec<AnnotatedDialogue>,
    calls: Vec<Vec<SeedCall>>,
    follow: BTreeMap<String, BTreeSet<String>>,
}

impl SeedIndex {
    pub fn new(seeds: Vec<AnnotatedDialogue>) -> Result<Self, SimError> {
        if seeds.is_empty() {
            return Err(SimError::EmptySeeds);
        }
        let mut calls = Vec::with_capacity(seeds.len());
        let mut follow: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for d in &seeds {
            let mut out: Vec<SeedCall> = Vec::new();
            let mut opening: Option<(Option<String>, BTreeSet<String>)> = None;
            for ev in &d.events {
                match ev {
                    DialogueEvent::User { acts, .. } => {
                        let requested = acts
                            .iter()
                            .find(|a| a.kind == ActKind::Request)
                            .and_then(|a| a.target.clone());
                        let accepted = acts.iter().any(|a| a.kind == ActKind::AcceptOffer);
                        if requested.is_some() || accepted {
                            let informed = acts
                                .iter()
                                .filter(|a| a.kind == ActKind::Inform)
                                .filter_map(|a| a.target.clone())
                                .collect();
                            opening = Some((requested, informed));
                        }
                    }
                    DialogueEvent::Api {
                        name,
                        args,
                        returns,
                        ..
                    } => {
                        let initial = match &opening {
                            Some((req, informed)) if req.as_deref().is_none_or(|r| r == name) => {
                                informed
                                    .iter()
                                    .filter(|s| args.contains_key(*s))
                                    .cloned()
                                    .collect()
                            }
                            _ => BTreeSet::new(),
                        };
                        opening = None;
                        if let Some(prev) = out.last() {
                            follow
                                .entry(prev.api.clone())
                                .or_default()
                                .insert(name.clone());
                        }
                        out.push(SeedCall {
                            api: name.clone(),
                            args: args
                                .iter()
                                .map(|(k, v)| {
                                    (k.clone(), v.vars().into_iter().map(String::from).collect())
                                })
                                .collect(),
                            returns: returns.clone(),
                            initial,
                        });
                    }
                    _ => {}
                }
            }
            calls.push(out);
        }
        Ok(SeedIndex {
            seeds,
            calls,
            follow,
        })
    }

    pub fn seeds(&self) -> &[AnnotatedDialogue] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    /// APIs that directly follow `api` in some seed.
    pub fn followers(&self, api: &str) -> Vec<&str> {
        self.follow
            .get(api)
            .map(|s| s.iter().map(String::as_str).collect())
            .unwrap_or_default()
    }

    /// Resample every seed value, keeping equal values equal and distinct
    /// values distinct (per entity type, when the catalog allows it).
    /// Values equal to an API return are drawn from that API's sampler.
    fn resample_values<R: Rng + ?Sized>(
        &self,
        seed: usize,
        schema: &DomainSchema,
        rng: &mut R,
    ) -> Result<BTreeMap<String, String>, SimError> {
        let d = &self.seeds[seed];
        let mut order: Vec<String> = Vec::new();
        let mut sampler_of_class: BTreeMap<(String, String), String> = BTreeMap::new();
        for ev in &d.events {
            match ev {
                DialogueEvent::User { spans, .. } => {
                    order.extend(spans.iter().map(|s| s.var.clone()))
                }
                DialogueEvent::Api {
                    name,
                    returns: Some(r),
                    ..
                } => {
                    order.push(r.clone());
                    if let (Some(api), Some(v)) = (schema.api(name), d.variables.get(r)) {
                        if let Some(sampler) = api.sampler_type() {
                            sampler_of_class.insert(
                                (v.entity_type.clone(), fold_value(&v.value)),
                                sampler.to_string(),
                            );
                        }
                    }
                }
                _ => {}
            }
        }
        let mut class_value: BTreeMap<(String, String), String> = BTreeMap::new();
        let mut used: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut out = BTreeMap::new();
        for var in order {
            if out.contains_key(&var) {
                continue;
            }
            let Some(v) = d.variables.get(&var) else {
                continue;
            };
            let key = (v.entity_type.clone(), fold_value(&v.value));
            if let Some(value) = class_value.get(&key) {
                out.insert(var, value.clone());
                continue;
            }
            let catalog_type = sampler_of_class.get(&key).unwrap_or(&v.entity_type);
            let used_here = used.entry(v.entity_type.clone()).or_default();
            let value = sample_fresh(schema, catalog_type, used_here, rng)?;
            used_here.insert(fold_value(&value));
            class_value.insert(key, value.clone());
            out.insert(var, value);
        }
        Ok(out)
    }

    fn build_calls(
        &self,
        seed: usize,
        values: &BTreeMap<String, String>,
        schema: &DomainSchema,
    ) -> Vec<GoalCall> {
        let d = &self.seeds[seed];
        let calls = &self.calls[seed];
        let class = |var: &str| {
            d.variables
                .get(var)
                .map(|v| (v.entity_type.clone(), fold_value(&v.value)))
        };
        let mut out = Vec::with_capacity(calls.len());
        for (i, call) in calls.iter().enumerate() {
            let mut args = BTreeMap::new();
            for (slot, vars) in &call.args {
                let multi = schema
                    .api(&call.api)
                    .and_then(|a| a.arg(slot))
                    .is_some_and(|a| a.multi_valued);
                let from_return = if multi || vars.len() != 1 {
                    None
                } else {
                    calls[..i].iter().position(|c| {
                        c.returns
                            .as_deref()
                            .is_some_and(|r| r == vars[0] || class(r) == class(&vars[0]))
                    })
                };
                let value = match from_return {
                    Some(j) => GoalValue::FromReturn(j),
                    None if multi => GoalValue::Many(
                        vars.iter().filter_map(|v| values.get(v).cloned()).collect(),
                    ),
                    None => GoalValue::One(values.get(&vars[0]).cloned().unwrap_or_default()),
                };
                args.insert(slot.clone(), value);
            }
            out.push(GoalCall {
                api: call.api.clone(),
                args,
                initial: call.initial.clone(),
            });
        }
        out
    }
}

fn catalog<'a>(schema: &'a DomainSchema, entity_type: &str) -> Result<&'a [String], SimError> {
    match schema.entity_type(entity_type) {
        Some(et) if !et.catalog.is_empty() => Ok(&et.catalog),
        _ => Err(SimError::EmptyCatalog(entity_type.to_string())),
    }
}

/// A catalog value of `entity_type` not in `used` (case-folded), or any
/// value when the catalog is exhausted.
pub(crate) fn sample_fresh<R: Rng + ?Sized>(
    schema: &DomainSchema,
    entity_type: &str,
    used: &BTreeSet<String>,
    rng: &mut R,
) -> Result<String, SimError> {
    let cat = catalog(schema, entity_type)?;
    let fresh: Vec<&String> = cat
        .iter()
        .filter(|v| !used.contains(&fold_value(v)))
        .collect();
    let pick = if fresh.is_empty() {
        cat.choose(rng)
    } else {
        fresh.choose(rng).copied()
    };
    Ok(pick.expect("catalog is non-empty").clone())
}

fn sample_many<R: Rng + ?Sized>(
    schema: &DomainSchema,
    entity_type: &str,
    rng: &mut R,
) -> Result<Vec<String>, SimError> {
    let cat = catalog(schema, entity_type)?;
    let k = rng.random_range(1..=cat.len().min(3));
    Ok(cat.choose_multiple(rng, k).cloned().collect())
}

/// Draw a user goal from the seed skeletons.
pub fn sample_goal<R: Rng + ?Sized>(
    index: &SeedIndex,
    schema: &DomainSchema,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Goal, SimError> {
    if index.is_empty() {
        return Err(SimError::EmptySeeds);
    }
    let seed = rng.random_range(0..index.len());
    let seed_values = index.resample_values(seed, schema, rng)?;
    let mut calls = index.build_calls(seed, &seed_values, schema);
    if cfg.mode == SimMode::Base {
        return Ok(Goal {
            calls,
            revision: None,
            cooperation: Cooperation::Exact,
            seed,
            recombined: false,
            seed_values,
        });
    }

    let mut recombined = false;
    if rng.random::<f64>() < cfg.p_goal_recombination {
        if rng.random_bool(0.5) && calls.len() >= 2 {
            let a = rng.random_range(0..calls.len());
            let b = rng.random_range(a + 1..=calls.len());
            recombined = b - a < calls.len();
            let mut sub: Vec<GoalCall> = calls.drain(a..b).collect();
            for call in &mut sub {
                let api = schema.api(&call.api).expect("seed APIs resolve");
                for (slot, value) in call.args.iter_mut() {
                    if let GoalValue::FromReturn(j) = *value {
                        *value = if j < a {
                            let ty = &api.arg(slot).expect("seed args resolve").entity_type;
                            GoalValue::One(sample_fresh(schema, ty, &BTreeSet::new(), rng)?)
                        } else {
                            GoalValue::FromReturn(j - a)
                        };
                    }
                }
            }
            calls = sub;
        } else {
            let other = rng.random_range(0..index.len());
            let values = index.resample_values(other, schema, rng)?;
            let shift = calls.len();
            for mut call in index.build_calls(other, &values, schema) {
                for value in call.args.values_mut() {
                    if let GoalValue::FromReturn(j) = value {
                        *j += shift;
                    }
                }
                calls.push(call);
            }
            recombined = true;
        }
    }

    let u: f64 = rng.random();
    let cooperation = if u < cfg.p_over_cooperative {
        Cooperation::Over
    } else if u < cfg.p_over_cooperative + cfg.p_under_cooperative {
        Cooperation::Under
    } else {
        Cooperation::Exact
    };

    for call in &mut calls {
        let api = schema.api(&call.api).expect("seed APIs resolve");
        for def in &api.args {
            if def.multi_valued {
                if let Some(GoalValue::Many(_)) = call.args.get(&def.name) {
                    call.args.insert(
                        def.name.clone(),
                        GoalValue::Many(sample_many(schema, &def.entity_type, rng)?),
                    );
                }
            }
            if def.required {
                continue;
            }
            match cooperation {
                Cooperation::Over if !call.args.contains_key(&def.name) => {
                    let value = if def.multi_valued {
                        GoalValue::Many(sample_many(schema, &def.entity_type, rng)?)
                    } else {
                        GoalValue::One(sample_fresh(
                            schema,
                            &def.entity_type,
                            &BTreeSet::new(),
                            rng,
                        )?)
                    };
                    call.args.insert(def.name.clone(), value);
                }
                Cooperation::Under => {
                    call.args.remove(&def.name);
                }
                _ => {}
            }
        }
    }

    let mut revision = None;
    if rng.random::<f64>() < cfg.p_correction {
        let mut eligible = Vec::new();
        for (i, call) in calls.iter().enumerate() {
            for (slot, value) in &call.args {
                if let GoalValue::One(v) = value {
                    let ty = schema.slot_type(slot).expect("typed slot");
                    if catalog(schema, ty)?
                        .iter()
                        .any(|c| fold_value(c) != fold_value(v))
                    {
                        eligible.push((i, slot.clone(), v.clone(), ty.to_string()));
                    }
                }
            }
        }
        if let Some((i, slot, old, ty)) = eligible.choose(rng).cloned() {
            let new_value = sample_fresh(schema, &ty, &BTreeSet::from([fold_value(&old)]), rng)?;
            let api = schema.api(&calls[i].api).expect("seed APIs resolve");
            revision = Some(Revision {
                call: i,
                slot,
                new_value,
                trigger: if api.confirm_before_call {
                    RevisionTrigger::AtConfirm
                } else {
                    RevisionTrigger::AfterInform
                },
            });
        }
    }

    Ok(Goal {
        calls,
        revision,
        cooperation,
        seed,
        recombined,
        seed_values,
    })
}
