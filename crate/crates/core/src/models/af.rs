use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::context::{ContextEncoder, DialogueContext, Dropout, EncodeBatch, Encoded, Vocab};
use crate::dml::{fold_value, ArgDef, ArgValue, DomainSchema};
use crate::neuro::{
    dot, log_sum_exp, matvec_add, matvec_t_add, outer_add, Embedding, Init, Linear, NeuroError,
    ParamId, ParamStore,
};

use super::{ModelConfig, ModelError};

/// Filled argument of a predicted action: mention positions in the
/// context, or nothing for an optional argument left out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Mentions(Vec<usize>),
    Unfilled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActionSignature {
    pub action: String,
    pub bindings: BTreeMap<String, Binding>,
}

/// Pointer scores of one argument, for debugging.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArgScores {
    pub arg: String,
    pub candidates: Vec<(usize, f64)>,
    pub optional: Option<f64>,
}

/// Bilinear pointer over context mentions. The query concatenates an
/// action embedding, an argument embedding and a projection of the context
/// vector; a mention scores `m · U q`.
#[derive(Debug, Clone)]
pub struct AfModel {
    pub enc: ContextEncoder,
    action_emb: Embedding,
    arg_emb: Embedding,
    proj: Linear,
    bilinear: ParamId,
    query: usize,
    action_index: HashMap<String, usize>,
    arg_index: HashMap<String, usize>,
    action_args: HashMap<String, Vec<ArgDef>>,
}

struct Query {
    q: Vec<f64>,
    u: Vec<f64>,
    c: Vec<f64>,
    action: usize,
    arg: usize,
}

fn gold_matches(ctx: &DialogueContext, value: &ArgValue, positions: &[usize]) -> Vec<bool> {
    let vars = value.vars();
    let literals: Vec<String> = literals_of(value).iter().map(|l| fold_value(l)).collect();
    positions
        .iter()
        .map(|&p| {
            ctx.mention(p).is_some_and(|m| {
                m.var.as_deref().is_some_and(|v| vars.contains(&v))
                    || literals.contains(&fold_value(&m.value))
            })
        })
        .collect()
}

fn literals_of(value: &ArgValue) -> Vec<&str> {
    match value {
        ArgValue::Var(_) => Vec::new(),
        ArgValue::Literal { literal } => vec![literal.as_str()],
        ArgValue::List(items) => items.iter().flat_map(literals_of).collect(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl AfModel {
    pub fn new(
        store: &mut ParamStore,
        schema: &DomainSchema,
        vocab: &Vocab,
        cfg: &ModelConfig,
    ) -> Result<Self, NeuroError> {
        let enc =
            ContextEncoder::new(store, "af.ctx", cfg.encoder(cfg.af_features), schema, vocab)?;
        let names = schema.action_names();
        let action_index: HashMap<String, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let mut slots: Vec<String> = schema.slots().map(|(s, _)| s.to_string()).collect();
        slots.sort();
        slots.dedup();
        let arg_index: HashMap<String, usize> = slots
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let action_args = names
            .iter()
            .filter_map(|n| schema.action(n).map(|a| (n.clone(), a.args().to_vec())))
            .collect();
        let query = cfg.pointer_query;
        let action_emb = Embedding::new(store, "af.action", names.len().max(1), query)?;
        let arg_emb = Embedding::new(store, "af.arg", slots.len().max(1), query)?;
        let proj = Linear::new(store, "af.ctx_proj", enc.dim(), query)?;
        let qdim = 3 * query + 1;
        let bilinear = store.add(
            "af.bilinear",
            &[enc.mention_dim(), qdim],
            Init::Uniform { fan_in: qdim },
        )?;
        Ok(AfModel {
            enc,
            action_emb,
            arg_emb,
            proj,
            bilinear,
            query,
            action_index,
            arg_index,
            action_args,
        })
    }

    /// Arguments of an action; empty for control actions and unknown names.
    pub fn args_of(&self, action: &str) -> &[ArgDef] {
        self.action_args
            .get(action)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    fn query(
        &self,
        store: &ParamStore,
        e: &Encoded,
        action: &str,
        arg: &str,
    ) -> Result<Query, NeuroError> {
        let a = *self
            .action_index
            .get(action)
            .ok_or_else(|| NeuroError::Unknown(format!("action {action}")))?;
        let g = *self
            .arg_index
            .get(arg)
            .ok_or_else(|| NeuroError::Unknown(format!("argument {arg}")))?;
        let c: Vec<f64> = self
            .proj
            .forward(store, &e.vector)?
            .iter()
            .map(|v| v.tanh())
            .collect();
        let mut q = Vec::with_capacity(3 * self.query + 1);
        q.extend_from_slice(self.action_emb.lookup(store, a));
        q.extend_from_slice(self.arg_emb.lookup(store, g));
        q.extend_from_slice(&c);
        q.push(1.0);
        let mut u = vec![0.0; self.enc.mention_dim()];
        matvec_add(store.value(self.bilinear).data(), q.len(), &q, &mut u);
        Ok(Query {
            q,
            u,
            c,
            action: a,
            arg: g,
        })
    }

    fn candidates(ctx: &DialogueContext, arg: &ArgDef) -> Vec<usize> {
        ctx.mentions()
            .filter(|m| m.entity_type == arg.entity_type)
            .map(|m| m.position)
            .collect()
    }

    /// Backward through one query given `d_u` and accumulate `d_vector`.
    fn query_backward(
        &self,
        store: &mut ParamStore,
        e: &Encoded,
        qy: &Query,
        du: &[f64],
        d_vector: &mut [f64],
    ) {
        let qdim = qy.q.len();
        outer_add(store.grad_mut(self.bilinear).data_mut(), qdim, du, &qy.q);
        let mut dq = vec![0.0; qdim];
        matvec_t_add(store.value(self.bilinear).data(), qdim, du, &mut dq);
        let k = self.query;
        self.action_emb.accumulate(store, qy.action, &dq[..k]);
        self.arg_emb.accumulate(store, qy.arg, &dq[k..2 * k]);
        let dz: Vec<f64> = dq[2 * k..3 * k]
            .iter()
            .zip(&qy.c)
            .map(|(d, c)| d * (1.0 - c * c))
            .collect();
        let dv = self.proj.backward(store, &e.vector, &dz);
        for (a, b) in d_vector.iter_mut().zip(dv) {
            *a += b;
        }
    }

    /// Pointer loss of every argument of `action` bound in `gold`. Arguments
    /// whose gold value is not among the context's mentions are skipped.
    /// Returns the summed loss and the number of arguments scored.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        store: &mut ParamStore,
        batch: &mut EncodeBatch<'_>,
        ctx: &DialogueContext,
        vocab: &Vocab,
        action: &str,
        gold: &BTreeMap<String, ArgValue>,
        dropout: Option<Dropout>,
    ) -> Result<(f64, usize), NeuroError> {
        let args = self.args_of(action).to_vec();
        if args.is_empty() {
            return Ok((0.0, 0));
        }
        let e = batch.encode(store, ctx, vocab, true, dropout)?;
        let opt = ctx.optional_token_position;
        let mut d_mentions = vec![vec![0.0; self.enc.mention_dim()]; e.mentions.len()];
        let mut d_vector = vec![0.0; e.vector.len()];
        let (mut total, mut count) = (0.0, 0);
        for arg in &args {
            let cands = Self::candidates(ctx, arg);
            let value = gold.get(&arg.name);
            let mut ds: Vec<(usize, f64)> = Vec::new();
            let qy = self.query(store, &e, action, &arg.name)?;
            let score = |p: usize| dot(&e.mentions[p], &qy.u);
            if arg.multi_valued {
                let y = match value {
                    Some(v) => gold_matches(ctx, v, &cands),
                    None if arg.required => continue,
                    None => vec![false; cands.len()],
                };
                if value.is_some() && !y.iter().any(|b| *b) {
                    continue;
                }
                let so = score(opt);
                let mut d_opt = 0.0;
                for (&p, &yes) in cands.iter().zip(&y) {
                    let z = score(p) - so;
                    let t = if yes { 1.0 } else { 0.0 };
                    // log(1 + e^z) - t z
                    total += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
                    let dz = sigmoid(z) - t;
                    ds.push((p, dz));
                    d_opt -= dz;
                }
                ds.push((opt, d_opt));
            } else {
                let mut pos = cands.clone();
                let mut gold_mask = match value {
                    Some(v) => gold_matches(ctx, v, &cands),
                    None if arg.required => continue,
                    None => vec![false; cands.len()],
                };
                if !arg.required {
                    pos.push(opt);
                    gold_mask.push(value.is_none());
                }
                if !gold_mask.iter().any(|b| *b) {
                    continue;
                }
                let s: Vec<f64> = pos.iter().map(|&p| score(p)).collect();
                let gs: Vec<f64> = s
                    .iter()
                    .zip(&gold_mask)
                    .filter(|(_, g)| **g)
                    .map(|(x, _)| *x)
                    .collect();
                let (all, good) = (log_sum_exp(&s), log_sum_exp(&gs));
                total += all - good;
                for ((&p, &x), &g) in pos.iter().zip(&s).zip(&gold_mask) {
                    let mut d = (x - all).exp();
                    if g {
                        d -= (x - good).exp();
                    }
                    ds.push((p, d));
                }
            }
            count += 1;
            let mut du = vec![0.0; qy.u.len()];
            for &(p, d) in &ds {
                for (a, uu) in d_mentions[p].iter_mut().zip(&qy.u) {
                    *a += d * uu;
                }
                for (a, m) in du.iter_mut().zip(&e.mentions[p]) {
                    *a += d * m;
                }
            }
            self.query_backward(store, &e, &qy, &du, &mut d_vector);
        }
        if count > 0 {
            batch.backward(&e, &d_vector, Some(&d_mentions));
        }
        Ok((total, count))
    }

    /// Fill every argument of `action`. A required argument with no
    /// mention of its type is a [`ModelError::MissingArgument`].
    pub fn fill(
        &self,
        store: &ParamStore,
        ctx: &DialogueContext,
        vocab: &Vocab,
        action: &str,
    ) -> Result<(ActionSignature, Vec<ArgScores>), ModelError> {
        let mut sig = ActionSignature {
            action: action.to_string(),
            bindings: BTreeMap::new(),
        };
        let args = self.args_of(action);
        if args.is_empty() {
            return Ok((sig, Vec::new()));
        }
        let e = self.enc.batch().encode(store, ctx, vocab, true, None)?;
        let opt = ctx.optional_token_position;
        let mut debug = Vec::new();
        for arg in args {
            let cands = Self::candidates(ctx, arg);
            if cands.is_empty() && arg.required {
                return Err(ModelError::MissingArgument {
                    action: action.to_string(),
                    arg: arg.name.clone(),
                });
            }
            let qy = self.query(store, &e, action, &arg.name)?;
            let scored: Vec<(usize, f64)> = cands
                .iter()
                .map(|&p| (p, dot(&e.mentions[p], &qy.u)))
                .collect();
            let so = dot(&e.mentions[opt], &qy.u);
            let best =
                scored
                    .iter()
                    .copied()
                    .fold(None, |acc: Option<(usize, f64)>, x| match acc {
                        Some(b) if b.1 >= x.1 => Some(b),
                        _ => Some(x),
                    });
            let binding = if arg.multi_valued {
                let chosen: Vec<usize> = scored
                    .iter()
                    .filter(|(_, s)| *s > so)
                    .map(|(p, _)| *p)
                    .collect();
                match (chosen.is_empty(), arg.required, best) {
                    (false, _, _) => Binding::Mentions(chosen),
                    (true, true, Some((p, _))) => Binding::Mentions(vec![p]),
                    _ => Binding::Unfilled,
                }
            } else {
                match best {
                    Some((p, s)) if arg.required || s > so => Binding::Mentions(vec![p]),
                    _ => Binding::Unfilled,
                }
            };
            sig.bindings.insert(arg.name.clone(), binding);
            debug.push(ArgScores {
                arg: arg.name.clone(),
                candidates: scored,
                optional: (!arg.required || arg.multi_valued).then_some(so),
            });
        }
        Ok((sig, debug))
    }
}
