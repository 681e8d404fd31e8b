use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dml::canonical_values;

/// Span counts and the derived scores. Counts add, so corpus-level
/// scores are micro-averages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if tp + fp + fn_ == 0 {
            1.0
        } else if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    pub fn add(&self, other: &Prf) -> Prf {
        Prf::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)
    }
}

/// A labelled span: `[start, end)` token range and entity type.
pub type LabeledSpan = (usize, usize, String);

/// A prediction counts iff both boundaries and the type match a gold span.
/// Two empty sets score F1 = 1.
pub fn span_f1(gold: &[LabeledSpan], predicted: &[LabeledSpan]) -> Prf {
    let mut unmatched: Vec<&LabeledSpan> = gold.iter().collect();
    let mut tp = 0;
    for p in predicted {
        if let Some(i) = unmatched.iter().position(|g| *g == p) {
            unmatched.swap_remove(i);
            tp += 1;
        }
    }
    Prf::from_counts(tp, predicted.len() - tp, gold.len() - tp)
}

/// An agent action with its arguments resolved to values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedAction {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub args: BTreeMap<String, Vec<String>>,
}

impl ResolvedAction {
    pub fn new(name: impl Into<String>, args: BTreeMap<String, Vec<String>>) -> Self {
        ResolvedAction {
            name: name.into(),
            args: args.into_iter().filter(|(_, v)| !v.is_empty()).collect(),
        }
    }

    /// Same name and, per argument, the same case-folded value set.
    pub fn signature_matches(&self, other: &ResolvedAction) -> bool {
        self.name == other.name
            && self.args.len() == other.args.len()
            && self.args.iter().all(|(k, v)| {
                other
                    .args
                    .get(k)
                    .is_some_and(|w| canonical_values(v) == canonical_values(w))
            })
    }
}

/// One evaluated turn: the gold agent actions after a user utterance and
/// the model's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnEval {
    pub dialogue: String,
    pub turn: usize,
    pub gold: Vec<ResolvedAction>,
    pub predicted: Vec<ResolvedAction>,
    pub gold_spans: Vec<LabeledSpan>,
    pub predicted_spans: Vec<LabeledSpan>,
}

impl TurnEval {
    pub fn ap_correct(&self) -> bool {
        self.gold.len() == self.predicted.len()
            && self
                .gold
                .iter()
                .zip(&self.predicted)
                .all(|(g, p)| g.name == p.name)
    }

    pub fn asp_correct(&self) -> bool {
        self.gold.len() == self.predicted.len()
            && self
                .gold
                .iter()
                .zip(&self.predicted)
                .all(|(g, p)| g.signature_matches(p))
    }
}

/// Turn-level action (AP) and action-signature (ASP) accuracy; both 0
/// for no turns.
pub fn asp_accuracy(evals: &[TurnEval]) -> (f64, f64) {
    if evals.is_empty() {
        return (0.0, 0.0);
    }
    let n = evals.len() as f64;
    let ap = evals.iter().filter(|e| e.ap_correct()).count() as f64 / n;
    let asp = evals.iter().filter(|e| e.asp_correct()).count() as f64 / n;
    (ap, asp)
}

/// `(a − b) / b`, or `None` when `b` is 0.
pub fn relative_delta(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| (a - b) / b)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(s: usize, e: usize, t: &str) -> LabeledSpan {
        (s, e, t.to_string())
    }

    #[test]
    fn f1_examples() {
        let g = vec![span(3, 6, "Movie")];
        assert_eq!(span_f1(&g, &g).f1, 1.0);
        let none = span_f1(&g, &[]);
        assert_eq!((none.recall, none.f1), (0.0, 0.0));
        let g2 = vec![span(0, 1, "Size"), span(2, 3, "Crust")];
        let p2 = vec![span(0, 1, "Size"), span(2, 3, "Topping")];
        let half = span_f1(&g2, &p2);
        assert_eq!((half.precision, half.recall, half.f1), (0.5, 0.5, 0.5));
        // boundaries must match exactly
        assert_eq!(span_f1(&g, &[span(3, 5, "Movie")]).tp, 0);
    }

    #[test]
    fn one_wrong_argument_in_four_turns() {
        let act = |v: &str| {
            ResolvedAction::new(
                "GetDuration",
                [("movieTitle".to_string(), vec![v.to_string()])].into(),
            )
        };
        let turn = |p: &str| TurnEval {
            dialogue: "d".into(),
            turn: 0,
            gold: vec![
                act("joker"),
                ResolvedAction::new("EndTurn", BTreeMap::new()),
            ],
            predicted: vec![act(p), ResolvedAction::new("EndTurn", BTreeMap::new())],
            gold_spans: Vec::new(),
            predicted_spans: Vec::new(),
        };
        let evals = vec![turn("Joker"), turn("joker"), turn("frozen"), turn("JOKER")];
        assert_eq!(asp_accuracy(&evals), (1.0, 0.75));
    }

    #[test]
    fn relative_and_spread() {
        assert!((relative_delta(0.6, 0.4).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(relative_delta(0.6, 0.0), None);
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }
}
