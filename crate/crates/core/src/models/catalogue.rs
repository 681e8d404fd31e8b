use std::collections::HashSet;

use crate::dml::{fold_value, tokenize, DomainSchema};

/// Per-token binary catalogue indicators. Columns `0..n` are the static
/// catalogs (one per entity type), columns `n..2n` the dynamic catalogue
/// split by entity type.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogueFeatures {
    pub rows: Vec<Vec<f64>>,
    pub static_columns: usize,
    pub dynamic_columns: usize,
}

impl CatalogueFeatures {
    pub fn width(&self) -> usize {
        self.static_columns + self.dynamic_columns
    }

    pub fn flagged(&self, column: usize) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&i| self.rows[i][column] == 1.0)
            .collect()
    }
}

/// Static catalogs in matching form: per entity type the set of
/// case-folded entries.
#[derive(Debug, Clone)]
pub struct StaticCatalogs {
    pub columns: Vec<HashSet<String>>,
    pub max_len: usize,
}

impl StaticCatalogs {
    pub fn from_schema(schema: &DomainSchema) -> Self {
        let mut max_len = 1;
        let columns = schema
            .entity_types
            .iter()
            .map(|et| {
                if !et.catalog_feature {
                    return HashSet::new();
                }
                et.catalog
                    .iter()
                    .map(|v| {
                        max_len = max_len.max(tokenize(v).len());
                        fold_value(v)
                    })
                    .collect()
            })
            .collect();
        StaticCatalogs { columns, max_len }
    }

    pub fn empty(types: usize) -> Self {
        StaticCatalogs {
            columns: vec![HashSet::new(); types],
            max_len: 1,
        }
    }
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - levenshtein / max length`; 1 for two empty strings.
pub fn similarity(a: &str, b: &str) -> f64 {
    let n = a.chars().count().max(b.chars().count());
    if n == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / n as f64
}

/// Scan every token window of length `1..=n`. A window equal (case-folded)
/// to a static entry flags its tokens in that type's static column; a
/// window equal to, or for `threshold < 1` within normalized edit
/// similarity `threshold` of, a dynamic entry flags the type's dynamic
/// column. `dynamic` holds `(type index, value)` pairs.
pub fn catalogue_features(
    tokens: &[String],
    statics: &StaticCatalogs,
    dynamic: &[(usize, String)],
    n: usize,
    threshold: f64,
) -> CatalogueFeatures {
    let types = statics.columns.len();
    let mut rows = vec![vec![0.0; 2 * types]; tokens.len()];
    let folded: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let dyn_entries: Vec<(usize, String, usize)> = dynamic
        .iter()
        .map(|(t, v)| {
            let f = fold_value(v);
            let len = f.chars().count();
            (*t, f, len)
        })
        .collect();
    for len in 1..=n.max(1) {
        for start in 0..tokens.len().saturating_sub(len - 1) {
            let window = folded[start..start + len].join(" ");
            let wlen = window.chars().count();
            let mut mark = |col: usize| {
                for row in rows.iter_mut().skip(start).take(len) {
                    row[col] = 1.0;
                }
            };
            for (t, set) in statics.columns.iter().enumerate() {
                if set.contains(&window) {
                    mark(t);
                }
            }
            for (t, value, vlen) in &dyn_entries {
                let hit = if *value == window {
                    true
                } else if threshold < 1.0 {
                    // the length gap alone bounds the similarity from above
                    let longest = wlen.max(*vlen) as f64;
                    let gap = wlen.abs_diff(*vlen) as f64;
                    1.0 - gap / longest >= threshold && similarity(&window, value) >= threshold
                } else {
                    false
                };
                if hit && *t < types {
                    mark(types + t);
                }
            }
        }
    }
    CatalogueFeatures {
        rows,
        static_columns: types,
        dynamic_columns: types,
    }
}
