use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::dml::{tokenize, AnnotatedDialogue, DialogueEvent, DomainSchema};

/// FNV-1a; stable across platforms and releases, unlike std's hasher.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Known words plus a fixed number of hash buckets for everything else.
/// Words are case-folded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    oov_buckets: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(words: impl IntoIterator<Item = String>, oov_buckets: usize) -> Self {
        let set: BTreeSet<String> = words.into_iter().map(|w| w.to_lowercase()).collect();
        let mut v = Vocab {
            words: set.into_iter().collect(),
            oov_buckets: oov_buckets.max(1),
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    /// Words from schema catalogs, templates and the dialogues' user and
    /// agent text.
    pub fn build(
        schema: &DomainSchema,
        dialogues: &[AnnotatedDialogue],
        oov_buckets: usize,
    ) -> Self {
        let mut words = Vec::new();
        for et in &schema.entity_types {
            for v in &et.catalog {
                words.extend(tokenize(v));
            }
        }
        for t in &schema.user_templates {
            for text in std::iter::once(&t.text).chain(&t.paraphrases) {
                words.extend(tokenize(text).into_iter().filter(|w| !w.starts_with('$')));
            }
        }
        for d in dialogues {
            for ev in &d.events {
                match ev {
                    DialogueEvent::User { text, .. } => words.extend(tokenize(text)),
                    DialogueEvent::Nlg {
                        text: Some(text), ..
                    } => words.extend(tokenize(text)),
                    _ => {}
                }
            }
            for var in d.variables.values() {
                words.extend(tokenize(&var.value));
            }
        }
        Vocab::new(words, oov_buckets)
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        let mut v: Vocab = serde_json::from_str(s)?;
        v.reindex();
        Ok(v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("vocab serializes")
    }

    pub fn known(&self) -> usize {
        self.words.len()
    }

    /// Total embedding rows: known words then OOV buckets.
    pub fn rows(&self) -> usize {
        self.words.len() + self.oov_buckets
    }

    pub fn oov_row(&self, token: &str) -> usize {
        self.words.len()
            + (fnv1a(token.to_lowercase().as_bytes()) % self.oov_buckets as u64) as usize
    }

    pub fn row(&self, token: &str) -> usize {
        let folded = token.to_lowercase();
        match self.index.get(&folded) {
            Some(&i) => i,
            None => self.oov_row(&folded),
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(&token.to_lowercase())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oov_tokens_hash_stably() {
        let v = Vocab::new(["la".to_string(), "Land".to_string()], 4096);
        assert_eq!(v.row("LA"), v.row("la"));
        assert!(v.row("land") < 2);
        let a = v.row("zyzzyva");
        assert!(a >= 2 && a < v.rows());
        assert_eq!(a, v.row("zyzzyva"));
        // FNV-1a reference value for "a"
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        let back = Vocab::from_json(&v.to_json()).unwrap();
        assert_eq!(back.row("land"), v.row("land"));
    }
}
