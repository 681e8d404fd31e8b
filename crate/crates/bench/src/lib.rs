//! Shared fixtures for the benchmarks.

use std::path::PathBuf;

use dialoguekit::dml::{parse_corpus, parse_domain, AnnotatedDialogue, DomainSchema};
use dialoguekit::neuro::{Crf, Tensor};

/// Schema and seed dialogues of a bundled domain.
pub fn domain(name: &str) -> (DomainSchema, Vec<AnnotatedDialogue>) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../domains")
        .join(name);
    let read = |f: &str| std::fs::read_to_string(dir.join(f)).expect("bundled domain");
    let schema = parse_domain(&read("schema.json")).expect("valid schema");
    let seeds = parse_corpus(&read("seeds.jsonl"), &schema).expect("valid seeds");
    (schema, seeds)
}

/// A CRF over `tags` tags and emissions for `len` positions, filled with a
/// fixed deterministic pattern.
pub fn crf_instance(len: usize, tags: usize) -> (Crf, Tensor) {
    let wave = |n: usize, k: f64| {
        (0..n)
            .map(|i| ((i as f64 + 1.0) * k).sin() * 2.0)
            .collect::<Vec<f64>>()
    };
    let crf = Crf::new(
        tags,
        wave(tags * tags, 0.37),
        wave(tags, 0.91),
        wave(tags, 1.3),
    )
    .expect("consistent shapes");
    let e = Tensor::from_vec(&[len, tags], wave(len * tags, 0.53)).expect("consistent shapes");
    (crf, e)
}
