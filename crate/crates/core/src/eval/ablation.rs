use serde::{Deserialize, Serialize};

use crate::dml::{AnnotatedDialogue, DomainSchema};
use crate::models::{train, ModelConfig};
use crate::sim::{generate_dataset, SimConfig, SimMode};

use super::evaluate::{dynamic_slot_f1, evaluate, Metrics};
use super::metrics::{mean_std, relative_delta, Prf};
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub runs: usize,
    /// Training dialogues per corpus.
    pub train_dialogues: usize,
    pub test_dialogues: usize,
    pub seed: u64,
    pub sim: SimConfig,
    pub model: ModelConfig,
    /// Runs trained concurrently; 0 means one per available core.
    pub threads: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            runs: 5,
            train_dialogues: 2000,
            test_dialogues: 300,
            seed: 0,
            sim: SimConfig::default(),
            model: ModelConfig::default(),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub full: Metrics,
    pub base: Metrics,
    /// Scores on the hand-written challenge set, when one is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub challenge: Option<(Metrics, Metrics)>,
}

/// Mean, standard deviation and the full-minus-base deltas of one score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub full: f64,
    pub full_std: f64,
    pub base: f64,
    pub base_std: f64,
    pub delta: f64,
    pub relative: Option<f64>,
}

impl Comparison {
    fn new(full: &[f64], base: &[f64]) -> Self {
        let (f, fs) = mean_std(full);
        let (b, bs) = mean_std(base);
        Comparison {
            full: f,
            full_std: fs,
            base: b,
            base_std: bs,
            delta: f - b,
            relative: relative_delta(f, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<RunResult>,
    pub ner_f1: Comparison,
    pub ap: Comparison,
    pub asp: Comparison,
    pub test_dialogues: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub challenge: Option<ChallengeReport>,
}

/// Full versus base on the hand-written challenge dialogues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeReport {
    pub dialogues: usize,
    pub ner_f1: Comparison,
    pub ap: Comparison,
    pub asp: Comparison,
}

fn corpus(
    seeds: &[AnnotatedDialogue],
    schema: &DomainSchema,
    sim: &SimConfig,
) -> Result<Vec<AnnotatedDialogue>, EvalError> {
    Ok(generate_dataset(seeds, schema, sim)?
        .0
        .into_iter()
        .map(|s| s.dialogue)
        .collect())
}

fn run_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add(1000 * (run as u64 + 1))
}

fn one_run(
    seeds: &[AnnotatedDialogue],
    schema: &DomainSchema,
    cfg: &AblationConfig,
    test: &[AnnotatedDialogue],
    challenge: &[AnnotatedDialogue],
    run: usize,
    model_threads: usize,
) -> Result<RunResult, EvalError> {
    let seed = run_seed(cfg.seed, run);
    let model = ModelConfig {
        seed,
        threads: model_threads,
        ..cfg.model.clone()
    };
    let mut metrics = Vec::new();
    let mut extra = Vec::new();
    for mode in [SimMode::Full, SimMode::Base] {
        let sim = SimConfig {
            seed,
            num_dialogues: cfg.train_dialogues,
            mode,
            threads: model_threads,
            ..cfg.sim.clone()
        };
        let train_set = corpus(seeds, schema, &sim)?;
        let (models, _) = train(&train_set, schema, &model)?;
        metrics.push(evaluate(&models, test, seed, false)?.metrics);
        if !challenge.is_empty() {
            extra.push(evaluate(&models, challenge, seed, false)?.metrics);
        }
    }
    let base = metrics.pop().expect("two modes");
    let full = metrics.pop().expect("two modes");
    let challenge = match (extra.pop(), extra.pop()) {
        (Some(b), Some(f)) => Some((f, b)),
        _ => None,
    };
    Ok(RunResult {
        run,
        full,
        base,
        challenge,
    })
}

/// Full simulator versus base sampler: per run, train one model set on
/// each corpus (same size, hyperparameters and seeds) and evaluate both on
/// one held-out full-simulator test set drawn with a disjoint seed, and
/// on `challenge` when it is not empty.
pub fn run_ablation(
    schema: &DomainSchema,
    seeds: &[AnnotatedDialogue],
    challenge: &[AnnotatedDialogue],
    cfg: &AblationConfig,
) -> Result<AblationReport, EvalError> {
    let test_sim = SimConfig {
        seed: cfg.seed ^ 0x7e57_0000_0000_0000,
        num_dialogues: cfg.test_dialogues,
        mode: SimMode::Full,
        ..cfg.sim.clone()
    };
    let test = corpus(seeds, schema, &test_sim)?;
    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .clamp(1, cfg.runs.max(1));
    let mut runs: Vec<RunResult> = Vec::with_capacity(cfg.runs);
    let ids: Vec<usize> = (0..cfg.runs).collect();
    for chunk in ids.chunks(threads) {
        let results: Vec<Result<RunResult, EvalError>> = if chunk.len() == 1 {
            vec![one_run(
                seeds,
                schema,
                cfg,
                &test,
                challenge,
                chunk[0],
                cfg.model.threads,
            )]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&r| {
                        let test = &test;
                        s.spawn(move || one_run(seeds, schema, cfg, test, challenge, r, 1))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("ablation run thread"))
                    .collect()
            })
        };
        for r in results {
            runs.push(r?);
        }
    }
    let pairs: Vec<(&Metrics, &Metrics)> = runs.iter().map(|r| (&r.full, &r.base)).collect();
    let [ner_f1, ap, asp] = compare(&pairs);
    let challenge_pairs: Vec<(&Metrics, &Metrics)> = runs
        .iter()
        .filter_map(|r| r.challenge.as_ref().map(|(f, b)| (f, b)))
        .collect();
    let challenge = (!challenge_pairs.is_empty()).then(|| {
        let [ner_f1, ap, asp] = compare(&challenge_pairs);
        ChallengeReport {
            dialogues: challenge.len(),
            ner_f1,
            ap,
            asp,
        }
    });
    Ok(AblationReport {
        ner_f1,
        ap,
        asp,
        runs,
        test_dialogues: test.len(),
        challenge,
    })
}

/// NER F1, AP and ASP comparisons over (full, base) pairs.
fn compare(pairs: &[(&Metrics, &Metrics)]) -> [Comparison; 3] {
    let score = |f: fn(&Metrics) -> f64| {
        let full: Vec<f64> = pairs.iter().map(|(m, _)| f(m)).collect();
        let base: Vec<f64> = pairs.iter().map(|(_, m)| f(m)).collect();
        Comparison::new(&full, &base)
    };
    [score(|m| m.ner.f1), score(|m| m.ap), score(|m| m.asp)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicAblationConfig {
    /// Entity type whose catalog an API samples its returns from.
    pub sampler_type: String,
    /// Values the test corpus samples instead; never seen in training.
    pub held_out: Vec<String>,
    pub train_dialogues: usize,
    pub test_dialogues: usize,
    pub seed: u64,
    pub sim: SimConfig,
    pub model: ModelConfig,
}

impl Default for DynamicAblationConfig {
    fn default() -> Self {
        DynamicAblationConfig {
            sampler_type: String::new(),
            held_out: Vec::new(),
            train_dialogues: 1000,
            test_dialogues: 300,
            seed: 0,
            sim: SimConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicAblationReport {
    pub with_dynamic: Prf,
    pub without_dynamic: Prf,
    pub delta: f64,
    /// Test utterances mentioning an API-returned value.
    pub utterances: usize,
}

/// Tagger trained with and without dynamic catalogue features, scored on
/// test utterances that mention API-returned values drawn from a held-out
/// catalog.
pub fn run_dynamic_ablation(
    schema: &DomainSchema,
    seeds: &[AnnotatedDialogue],
    cfg: &DynamicAblationConfig,
) -> Result<DynamicAblationReport, EvalError> {
    let train_sim = SimConfig {
        seed: cfg.seed,
        num_dialogues: cfg.train_dialogues,
        mode: SimMode::Full,
        ..cfg.sim.clone()
    };
    let train_set = corpus(seeds, schema, &train_sim)?;
    let test_schema = schema.with_catalog(&cfg.sampler_type, cfg.held_out.clone())?;
    let test_sim = SimConfig {
        seed: cfg.seed ^ 0x7e57_0000_0000_0000,
        num_dialogues: cfg.test_dialogues,
        ..train_sim.clone()
    };
    let test = corpus(seeds, &test_schema, &test_sim)?;
    let mut scores = Vec::new();
    for dynamic in [true, false] {
        let model = ModelConfig {
            dynamic_catalog: dynamic,
            seed: cfg.seed,
            ..cfg.model.clone()
        };
        let (models, _) = train(&train_set, schema, &model)?;
        scores.push(dynamic_slot_f1(&models, &test)?);
    }
    let (without, n) = scores.pop().expect("two settings");
    let (with, _) = scores.pop().expect("two settings");
    Ok(DynamicAblationReport {
        delta: with.f1 - without.f1,
        with_dynamic: with,
        without_dynamic: without,
        utterances: n,
    })
}
