use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::agents::{DialogueAct, SystemAgent, Transcript, UserAgent};
use super::config::{SimConfig, SimError, SimMode};
use super::goal::{sample_goal, Cooperation, Goal, GoalValue, SeedIndex};
use super::realize::{realize_nlg, realize_user, TemplateBank};
use crate::dml::{
    canonical_values, normalize_value, tokenize, ActKind, AnnotatedDialogue, ApiDef, DialogueEvent,
    DomainSchema, Span,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApiReturn {
    Value(String),
    /// The API declares no return type.
    Nothing,
    Failure,
}

/// Sampled API result: a uniform draw from the API's return sampler, or
/// the failure marker with probability `p_failure`.
pub fn simulate_api<R: Rng + ?Sized>(
    api: &ApiDef,
    schema: &DomainSchema,
    p_failure: f64,
    rng: &mut R,
) -> Result<ApiReturn, SimError> {
    if rng.random::<f64>() < p_failure {
        return Ok(ApiReturn::Failure);
    }
    let Some(ty) = api.sampler_type() else {
        return Ok(ApiReturn::Nothing);
    };
    let catalog = schema
        .entity_type(ty)
        .map(|et| et.catalog.as_slice())
        .unwrap_or_default();
    catalog
        .choose(rng)
        .map(|v| ApiReturn::Value(v.clone()))
        .ok_or_else(|| SimError::EmptyCatalog(ty.to_string()))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent generator for dialogue `index` under global `seed`.
pub fn dialogue_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index)))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DialogueStats {
    pub corrected: bool,
    pub offers: usize,
    pub accepted_offers: usize,
    pub declined_offers: usize,
    pub api_calls: usize,
    pub api_failures: usize,
    pub turns: usize,
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub dialogue: AnnotatedDialogue,
    /// The goal as it stood at the end (requests the goal could not answer
    /// are recorded into it).
    pub goal: Goal,
    pub stats: DialogueStats,
}

fn replay<R: Rng + ?Sized>(
    seed: &AnnotatedDialogue,
    values: &BTreeMap<String, String>,
    schema: &DomainSchema,
    rng: &mut R,
) -> Result<AnnotatedDialogue, SimError> {
    let mut variables = seed.variables.clone();
    for (var, v) in variables.iter_mut() {
        if let Some(new) = values.get(var) {
            v.value = normalize_value(new);
        }
    }
    let mut events = Vec::with_capacity(seed.events.len());
    for ev in &seed.events {
        let ev = match ev {
            DialogueEvent::User { text, spans, acts } => {
                let old = tokenize(text);
                let mut sorted: Vec<&Span> = spans.iter().collect();
                sorted.sort_by_key(|s| s.start);
                let mut tokens = Vec::new();
                let mut new_spans = Vec::new();
                let mut pos = 0;
                for s in sorted {
                    tokens.extend_from_slice(&old[pos..s.start]);
                    let start = tokens.len();
                    tokens.extend(tokenize(&variables[&s.var].value));
                    new_spans.push(Span {
                        start,
                        end: tokens.len(),
                        ..s.clone()
                    });
                    pos = s.end;
                }
                tokens.extend_from_slice(&old[pos..]);
                DialogueEvent::User {
                    text: tokens.join(" "),
                    spans: new_spans,
                    acts: acts.clone(),
                }
            }
            DialogueEvent::Nlg {
                name,
                args,
                acts,
                text,
            } => {
                let text = match schema.nlg(name) {
                    Some(nlg) => {
                        let resolved = args
                            .iter()
                            .map(|(k, v)| (k.clone(), v.values(&variables)))
                            .collect();
                        Some(realize_nlg(nlg, &resolved, rng)?)
                    }
                    None => text.clone(),
                };
                DialogueEvent::Nlg {
                    name: name.clone(),
                    args: args.clone(),
                    acts: acts.clone(),
                    text,
                }
            }
            other => other.clone(),
        };
        events.push(ev);
    }
    Ok(AnnotatedDialogue {
        id: seed.id.clone(),
        events,
        variables,
    })
}

fn count_stats(d: &AnnotatedDialogue) -> DialogueStats {
    let mut s = DialogueStats::default();
    for ev in &d.events {
        match ev {
            DialogueEvent::User { acts, .. } => {
                s.turns += 1;
                for a in acts {
                    match a.kind {
                        ActKind::Correct => s.corrected = true,
                        ActKind::AcceptOffer => s.accepted_offers += 1,
                        ActKind::DeclineOffer => s.declined_offers += 1,
                        _ => {}
                    }
                }
            }
            DialogueEvent::Api { failed, .. } => {
                s.api_calls += 1;
                s.api_failures += usize::from(*failed);
            }
            DialogueEvent::Nlg { acts, .. } => {
                s.offers += acts.iter().filter(|a| a.kind == ActKind::Offer).count();
            }
            _ => {}
        }
    }
    s
}

/// Sample a goal and play it out (or, in base mode, replay its seed with
/// resampled values).
pub fn simulate_dialogue<R: Rng + ?Sized>(
    index: &SeedIndex,
    schema: &DomainSchema,
    bank: &TemplateBank,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Simulated, SimError> {
    let goal = sample_goal(index, schema, cfg, rng)?;
    if cfg.mode == SimMode::Base {
        let dialogue = replay(&index.seeds()[goal.seed], &goal.seed_values, schema, rng)?;
        let stats = count_stats(&dialogue);
        return Ok(Simulated {
            dialogue,
            goal,
            stats,
        });
    }

    let mut t = Transcript::new(schema);
    if schema.nlg("welcome").is_some() {
        t.nlg("welcome", &BTreeMap::new(), rng)?;
        t.end_turn();
    }
    let mut user = UserAgent::new(goal);
    let mut system = SystemAgent::new(schema, index);
    let mut incoming: Vec<DialogueAct> = Vec::new();
    let mut turns = 0;
    loop {
        turns += 1;
        if turns > cfg.max_turns {
            return Err(SimError::TurnCap(cfg.max_turns));
        }
        let acts = user.step(&incoming, schema, rng)?;
        let realized = realize_user(&acts, bank, schema, true, rng)?;
        let vars = t.user(&acts, &realized);
        let paired: Vec<(DialogueAct, Vec<String>)> = acts.into_iter().zip(vars).collect();
        incoming = system.step(&paired, &mut t, cfg, rng)?;
        if matches!(t.events.last(), Some(DialogueEvent::EndDialogue)) {
            break;
        }
    }
    let dialogue = AnnotatedDialogue {
        id: None,
        events: t.events,
        variables: t.variables,
    };
    let stats = count_stats(&dialogue);
    Ok(Simulated {
        dialogue,
        goal: user.into_goal(),
        stats,
    })
}

/// Check that the dialogue's API calls realize the goal's final bindings:
/// one call per goal call, in order, skipping calls that depended on a
/// failed call, with exactly the goal's arguments.
pub fn check_goal(goal: &Goal, d: &AnnotatedDialogue) -> Result<(), String> {
    let calls: Vec<&DialogueEvent> = d.api_calls().map(|(_, e)| e).collect();
    let n = goal.calls.len();
    let mut returned: Vec<Option<String>> = vec![None; n];
    let mut dead = vec![false; n];
    let mut pos = 0;
    for i in 0..n {
        let depends_on_dead = goal.calls[i]
            .args
            .values()
            .any(|v| matches!(v, GoalValue::FromReturn(j) if dead[*j]));
        if depends_on_dead {
            dead[i] = true;
            continue;
        }
        let Some(DialogueEvent::Api {
            name,
            args,
            returns,
            failed,
        }) = calls.get(pos).copied()
        else {
            return Err(format!(
                "goal call {i} (`{}`) never made",
                goal.calls[i].api
            ));
        };
        pos += 1;
        if name != &goal.calls[i].api {
            return Err(format!(
                "goal call {i} expected `{}`, got `{name}`",
                goal.calls[i].api
            ));
        }
        let expected = goal.final_args(i);
        if !expected.keys().eq(args.keys()) {
            return Err(format!(
                "`{name}` bound {:?}, goal has {:?}",
                args.keys().collect::<Vec<_>>(),
                expected.keys().collect::<Vec<_>>()
            ));
        }
        for (slot, want) in &expected {
            let want = match want {
                GoalValue::One(v) => vec![v.clone()],
                GoalValue::Many(vs) => vs.clone(),
                GoalValue::FromReturn(j) => returned[*j].clone().into_iter().collect(),
            };
            let have = d.values_of(&args[slot]);
            if canonical_values(&want) != canonical_values(&have) {
                return Err(format!("`{name}.{slot}` = {have:?}, goal wants {want:?}"));
            }
        }
        if *failed {
            dead[i] = true;
        } else {
            returned[i] = returns
                .as_ref()
                .and_then(|r| d.variables.get(r))
                .map(|v| v.value.clone());
        }
    }
    if pos != calls.len() {
        return Err(format!("{} API calls beyond the goal", calls.len() - pos));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CooperationCounts {
    pub over: usize,
    pub exact: usize,
    pub under: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GenerationStats {
    pub mode: SimMode,
    pub seed: u64,
    pub dialogues: usize,
    pub discards: usize,
    pub corrections: usize,
    pub offers: usize,
    pub accepted_offers: usize,
    pub declined_offers: usize,
    pub api_calls: usize,
    pub api_failures: usize,
    pub recombined_goals: usize,
    pub cooperation: CooperationCounts,
    pub user_turns: usize,
}

fn generate_one(
    i: usize,
    index: &SeedIndex,
    schema: &DomainSchema,
    bank: &TemplateBank,
    cfg: &SimConfig,
) -> Result<(Simulated, usize), SimError> {
    let mut rng = dialogue_rng(cfg.seed, i as u64);
    let mut discards = 0;
    while discards < cfg.max_attempts {
        match simulate_dialogue(index, schema, bank, cfg, &mut rng) {
            Ok(mut s) => {
                let prefix = match cfg.mode {
                    SimMode::Full => "sim",
                    SimMode::Base => "base",
                };
                s.dialogue.id = Some(format!("{prefix}-{i:05}"));
                return Ok((s, discards));
            }
            Err(SimError::TurnCap(_)) => discards += 1,
            Err(e) => return Err(e),
        }
    }
    Err(SimError::Exhausted(discards))
}

/// Dialogue index with its result and the number of discarded attempts.
type Attempt = (usize, Result<(Simulated, usize), SimError>);

/// Generate `cfg.num_dialogues` dialogues. Dialogue `i` uses its own
/// generator derived from `(cfg.seed, i)`, so the corpus does not depend
/// on the number of worker threads.
pub fn generate_dataset(
    seeds: &[AnnotatedDialogue],
    schema: &DomainSchema,
    cfg: &SimConfig,
) -> Result<(Vec<Simulated>, GenerationStats), SimError> {
    cfg.validate()?;
    let index = SeedIndex::new(seeds.to_vec())?;
    let bank = TemplateBank::new(schema);
    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(cfg.num_dialogues)
    .max(1);

    let mut results: Vec<Attempt> = if threads == 1 {
        (0..cfg.num_dialogues)
            .map(|i| (i, generate_one(i, &index, schema, &bank, cfg)))
            .collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let (index, bank) = (&index, &bank);
                    scope.spawn(move || {
                        (w..cfg.num_dialogues)
                            .step_by(threads)
                            .map(|i| (i, generate_one(i, index, schema, bank, cfg)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("simulation worker panicked"))
                .collect()
        })
    };
    results.sort_by_key(|(i, _)| *i);

    let mut stats = GenerationStats {
        mode: cfg.mode,
        seed: cfg.seed,
        dialogues: 0,
        discards: 0,
        corrections: 0,
        offers: 0,
        accepted_offers: 0,
        declined_offers: 0,
        api_calls: 0,
        api_failures: 0,
        recombined_goals: 0,
        cooperation: CooperationCounts::default(),
        user_turns: 0,
    };
    let mut out = Vec::with_capacity(results.len());
    for (_, r) in results {
        let (s, discards) = r?;
        stats.dialogues += 1;
        stats.discards += discards;
        stats.corrections += usize::from(s.stats.corrected);
        stats.offers += s.stats.offers;
        stats.accepted_offers += s.stats.accepted_offers;
        stats.declined_offers += s.stats.declined_offers;
        stats.api_calls += s.stats.api_calls;
        stats.api_failures += s.stats.api_failures;
        stats.recombined_goals += usize::from(s.goal.recombined);
        stats.user_turns += s.stats.turns;
        match s.goal.cooperation {
            Cooperation::Over => stats.cooperation.over += 1,
            Cooperation::Exact => stats.cooperation.exact += 1,
            Cooperation::Under => stats.cooperation.under += 1,
        }
        out.push(s);
    }
    Ok((out, stats))
}
