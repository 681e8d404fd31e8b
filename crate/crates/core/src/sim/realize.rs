use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;

use super::agents::DialogueAct;
use super::config::SimError;
use crate::dml::{tokenize, ActLabel, DomainSchema, NlgDef};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Word(String),
    Slot(String),
}

fn pieces(template: &str) -> Vec<Piece> {
    let bytes = template.as_bytes();
    let mut out = Vec::new();
    let mut literal_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'$'
            && i + 1 < bytes.len()
            && (bytes[i + 1].is_ascii_alphabetic() || bytes[i + 1] == b'_')
        {
            out.extend(
                tokenize(&template[literal_start..i])
                    .into_iter()
                    .map(Piece::Word),
            );
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            out.push(Piece::Slot(template[i + 1..j].to_string()));
            literal_start = j;
            i = j;
        } else {
            i += 1;
        }
    }
    out.extend(
        tokenize(&template[literal_start..])
            .into_iter()
            .map(Piece::Word),
    );
    out
}

#[derive(Debug, Clone)]
struct Compiled {
    acts: Vec<ActLabel>,
    /// Canonical text first, then paraphrases.
    texts: Vec<Vec<Piece>>,
}

/// User templates of a schema, pre-split into words and slots.
#[derive(Debug, Clone)]
pub struct TemplateBank {
    templates: Vec<Compiled>,
}

impl TemplateBank {
    pub fn new(schema: &DomainSchema) -> Self {
        let templates = schema
            .user_templates
            .iter()
            .map(|t| Compiled {
                acts: t.acts.clone(),
                texts: std::iter::once(&t.text)
                    .chain(&t.paraphrases)
                    .map(|s| pieces(s))
                    .collect(),
            })
            .collect();
        TemplateBank { templates }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RealizedSpan {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
    /// Index of the act the value belongs to.
    pub act: usize,
    /// Index of the value within that act.
    pub value: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Realized {
    pub tokens: Vec<String>,
    pub spans: Vec<RealizedSpan>,
}

impl Realized {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// `a`, `a and b`, `a , b and c`.
pub fn format_values(values: &[String]) -> String {
    match values {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(" , ")),
    }
}

fn push_values(out: &mut Realized, values: &[String], entity_type: &str, act: usize) {
    for (vi, value) in values.iter().enumerate() {
        if vi > 0 {
            out.tokens
                .push(if vi + 1 == values.len() { "and" } else { "," }.to_string());
        }
        let start = out.tokens.len();
        out.tokens.extend(tokenize(value));
        out.spans.push(RealizedSpan {
            start,
            end: out.tokens.len(),
            entity_type: entity_type.to_string(),
            act,
            value: vi,
        });
    }
}

/// Surface text for a user act list. Prefers one template covering as
/// many acts as possible (always including the first uncovered act), then
/// continues with the rest; chunks are joined with a comma. Every slot
/// value becomes a typed span.
pub fn realize_user<R: Rng + ?Sized>(
    acts: &[DialogueAct],
    bank: &TemplateBank,
    schema: &DomainSchema,
    paraphrases: bool,
    rng: &mut R,
) -> Result<Realized, SimError> {
    let mut out = Realized::default();
    let mut remaining: Vec<usize> = (0..acts.len()).collect();
    while let Some(&first) = remaining.first() {
        let mut best: Vec<(&Compiled, Vec<usize>)> = Vec::new();
        let mut best_len = 0;
        for t in &bank.templates {
            if t.acts.len() < best_len || !t.acts.contains(&acts[first].label) {
                continue;
            }
            let mut taken = BTreeSet::new();
            let assigned: Option<Vec<usize>> = t
                .acts
                .iter()
                .map(|label| {
                    let i = remaining
                        .iter()
                        .copied()
                        .find(|&i| !taken.contains(&i) && &acts[i].label == label)?;
                    taken.insert(i);
                    Some(i)
                })
                .collect();
            let Some(assigned) = assigned else { continue };
            if t.acts.len() > best_len {
                best.clear();
                best_len = t.acts.len();
            }
            best.push((t, assigned));
        }
        let Some((template, assigned)) = best.choose(rng) else {
            return Err(SimError::NoTemplate(acts[first].label.to_string()));
        };
        let text = if paraphrases {
            template
                .texts
                .choose(rng)
                .expect("at least the canonical text")
        } else {
            &template.texts[0]
        };
        if !out.tokens.is_empty() {
            out.tokens.push(",".to_string());
        }
        let slot_acts: BTreeMap<&str, usize> = assigned
            .iter()
            .filter_map(|&i| acts[i].label.target.as_deref().map(|t| (t, i)))
            .collect();
        for piece in text {
            match piece {
                Piece::Word(w) => out.tokens.push(w.clone()),
                Piece::Slot(slot) => {
                    let i = slot_acts[slot.as_str()];
                    let ty = schema.slot_type(slot).expect("template slots are typed");
                    push_values(&mut out, &acts[i].values, ty, i);
                }
            }
        }
        remaining.retain(|i| !assigned.contains(i));
    }
    Ok(out)
}

/// Render an NLG response. Picks uniformly among templates whose
/// placeholders are exactly the bound arguments.
pub fn realize_nlg<R: Rng + ?Sized>(
    nlg: &NlgDef,
    args: &BTreeMap<String, Vec<String>>,
    rng: &mut R,
) -> Result<String, SimError> {
    let bound: BTreeSet<&str> = args.keys().map(String::as_str).collect();
    let candidates: Vec<Vec<Piece>> = nlg
        .templates
        .iter()
        .map(|t| pieces(t))
        .filter(|p| {
            let slots: BTreeSet<&str> = p
                .iter()
                .filter_map(|x| match x {
                    Piece::Slot(s) => Some(s.as_str()),
                    Piece::Word(_) => None,
                })
                .collect();
            slots == bound
        })
        .collect();
    let Some(template) = candidates.choose(rng) else {
        return Err(SimError::NlgArgs {
            nlg: nlg.name.clone(),
            args: args.keys().cloned().collect(),
        });
    };
    let mut tokens = Vec::new();
    for piece in template {
        match piece {
            Piece::Word(w) => tokens.push(w.clone()),
            Piece::Slot(s) => tokens.extend(tokenize(&format_values(&args[s]))),
        }
    }
    Ok(tokens.join(" "))
}
