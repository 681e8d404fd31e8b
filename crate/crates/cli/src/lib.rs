//! The `dialoguekit` command line: validation, simulation, training,
//! evaluation, ablations, an interactive chat and the HTTP service.

pub mod chat;
pub mod service;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dialoguekit::dml::{
    parse_corpus, parse_domain, validate_dialogue, write_corpus, AnnotatedDialogue, DomainSchema,
    ValidationMode,
};
use dialoguekit::eval::{
    evaluate, run_ablation, run_dynamic_ablation, AblationConfig, AblationReport, Comparison,
    DynamicAblationConfig, EvalReport,
};
use dialoguekit::models::{train, ModelConfig, Models};
use dialoguekit::sim::{generate_dataset, SimConfig, SimMode};

#[derive(Debug, Parser)]
#[command(
    name = "dialoguekit",
    version,
    about = "Build goal-oriented dialogue agents from seed dialogues"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Full,
    Base,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a schema and, optionally, dialogue files (JSON Lines) against it.
    Validate {
        schema: PathBuf,
        dialogues: Vec<PathBuf>,
    },
    /// Generate a training corpus from seed dialogues.
    Simulate {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        num: usize,
        #[arg(long, value_enum, default_value_t = Mode::Full)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Simulator settings as JSON; command-line values take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model bundle on a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        out_bundle: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Model settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the parameters as JSON.
        #[arg(long)]
        export_json: bool,
    },
    /// Score a bundle on a test corpus.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the JSON report instead of the table.
        #[arg(long)]
        json: bool,
        /// Include every turn in the JSON report.
        #[arg(long)]
        turns: bool,
    },
    /// Full simulator versus base sampler, averaged over runs.
    Ablation {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 2000)]
        num: usize,
        #[arg(long, default_value_t = 300)]
        test_num: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Hand-written dialogues scored alongside the simulated test set.
        #[arg(long)]
        challenge: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Tagger with versus without dynamic catalogue features, on turns
    /// that mention API-returned values from a held-out catalog.
    DynamicAblation {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        seeds: PathBuf,
        /// Entity type an API samples its return values from.
        #[arg(long)]
        sampler_type: String,
        /// Replacement catalog for the test corpus, one value per line.
        #[arg(long)]
        held_out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        num: usize,
        #[arg(long, default_value_t = 300)]
        test_num: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Talk to a bundle in the terminal, or replay utterances from a file.
    Chat {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// One utterance per line; runs non-interactively.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Print each turn as a JSON line with its debug trace.
        #[arg(long)]
        json: bool,
    },
    /// Serve a bundle over HTTP.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory for session logs; sessions found there are reloaded.
        #[arg(long, default_value = "sessions")]
        log_dir: PathBuf,
    },
}

/// Outcome of a command that completed: success or validation findings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Findings,
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_schema(path: &Path) -> Result<DomainSchema> {
    parse_domain(&read(path)?).with_context(|| format!("schema {}", path.display()))
}

pub fn load_corpus(path: &Path, schema: &DomainSchema) -> Result<Vec<AnnotatedDialogue>> {
    parse_corpus(&read(path)?, schema).with_context(|| format!("corpus {}", path.display()))
}

/// Run a command; returns the process exit code (0 ok, 1 findings, 2 error).
pub fn run(cli: Cli) -> i32 {
    match execute(cli.command, &mut std::io::stdout()) {
        Ok(Status::Ok) => 0,
        Ok(Status::Findings) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

pub fn execute(command: Command, out: &mut dyn std::io::Write) -> Result<Status> {
    match command {
        Command::Validate { schema, dialogues } => validate(&schema, &dialogues, out),
        Command::Simulate {
            schema,
            seeds,
            out: path,
            num,
            mode,
            seed,
            config,
        } => {
            let schema = load_schema(&schema)?;
            let seeds = load_corpus(&seeds, &schema)?;
            let mut cfg: SimConfig = match config {
                Some(p) => serde_json::from_str(&read(&p)?).context("simulator config")?,
                None => SimConfig::default(),
            };
            cfg.num_dialogues = num;
            cfg.seed = seed;
            cfg.mode = match mode {
                Mode::Full => SimMode::Full,
                Mode::Base => SimMode::Base,
            };
            let (sims, stats) = generate_dataset(&seeds, &schema, &cfg)?;
            let corpus: Vec<AnnotatedDialogue> = sims.into_iter().map(|s| s.dialogue).collect();
            fs::write(&path, write_corpus(&corpus))
                .with_context(|| format!("writing {}", path.display()))?;
            writeln!(out, "{}", serde_json::to_string_pretty(&stats)?)?;
            Ok(Status::Ok)
        }
        Command::Train {
            corpus,
            schema,
            out_bundle,
            epochs,
            seed,
            config,
            export_json,
        } => {
            let schema = load_schema(&schema)?;
            let corpus = load_corpus(&corpus, &schema)?;
            let mut cfg: ModelConfig = match config {
                Some(p) => serde_json::from_str(&read(&p)?).context("model config")?,
                None => ModelConfig::default(),
            };
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (models, report) = train(&corpus, &schema, &cfg)?;
            models.save(&out_bundle, export_json)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(Status::Ok)
        }
        Command::Eval {
            bundle,
            test,
            seed,
            json,
            turns,
        } => {
            let models = Models::load(&bundle)?;
            let test = load_corpus(&test, &models.schema)?;
            let report = evaluate(&models, &test, seed, turns)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else {
                write!(out, "{}", eval_table(&report))?;
            }
            Ok(Status::Ok)
        }
        Command::Ablation {
            schema,
            seeds,
            runs,
            num,
            test_num,
            epochs,
            seed,
            challenge,
            json,
        } => {
            let schema = load_schema(&schema)?;
            let seeds = load_corpus(&seeds, &schema)?;
            let challenge = match challenge {
                Some(p) => load_corpus(&p, &schema)?,
                None => Vec::new(),
            };
            let mut cfg = AblationConfig {
                runs,
                train_dialogues: num,
                test_dialogues: test_num,
                seed,
                ..AblationConfig::default()
            };
            if let Some(e) = epochs {
                cfg.model.epochs = e;
            }
            let report = run_ablation(&schema, &seeds, &challenge, &cfg)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else {
                write!(out, "{}", ablation_table(&report))?;
            }
            Ok(Status::Ok)
        }
        Command::DynamicAblation {
            schema,
            seeds,
            sampler_type,
            held_out,
            num,
            test_num,
            epochs,
            seed,
        } => {
            let schema = load_schema(&schema)?;
            let seeds = load_corpus(&seeds, &schema)?;
            let held_out = read(&held_out)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect();
            let mut cfg = DynamicAblationConfig {
                sampler_type,
                held_out,
                train_dialogues: num,
                test_dialogues: test_num,
                seed,
                ..DynamicAblationConfig::default()
            };
            if let Some(e) = epochs {
                cfg.model.epochs = e;
            }
            let report = run_dynamic_ablation(&schema, &seeds, &cfg)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(Status::Ok)
        }
        Command::Chat {
            bundle,
            seed,
            replay,
            json,
        } => {
            let agent = chat::load_agent(&bundle)?;
            match replay {
                Some(path) => {
                    let lines: Vec<String> = read(&path)?.lines().map(str::to_string).collect();
                    chat::replay(&agent, seed, &lines, json, out)?;
                }
                None => chat::repl(&agent, seed, json)?,
            }
            Ok(Status::Ok)
        }
        Command::Serve {
            bundle,
            port,
            host,
            log_dir,
        } => {
            let agent = chat::load_agent(&bundle)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(service::serve(agent, &host, port, log_dir))?;
            Ok(Status::Ok)
        }
    }
}

fn validate(schema: &Path, dialogues: &[PathBuf], out: &mut dyn std::io::Write) -> Result<Status> {
    let source = read(schema)?;
    let schema = match parse_domain(&source) {
        Ok(s) => s,
        Err(e) => {
            writeln!(out, "{}: {e}", schema.display())?;
            return Ok(Status::Findings);
        }
    };
    let mut findings = 0;
    for path in dialogues {
        for (n, line) in read(path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let d = match AnnotatedDialogue::from_json(line) {
                Ok(d) => d,
                Err(e) => {
                    findings += 1;
                    writeln!(out, "{}:{}: {e}", path.display(), n + 1)?;
                    continue;
                }
            };
            for f in validate_dialogue(&d, &schema, ValidationMode::Complete).findings {
                findings += 1;
                writeln!(out, "{}:{}: {f}", path.display(), n + 1)?;
            }
        }
    }
    let (apis, types) = schema.counts();
    writeln!(
        out,
        "schema {}: {types} entity types, {apis} APIs, {} responses; {findings} findings",
        schema.name,
        schema.nlg_responses.len()
    )?;
    Ok(if findings == 0 {
        Status::Ok
    } else {
        Status::Findings
    })
}

pub fn eval_table(report: &EvalReport) -> String {
    let m = &report.metrics;
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>8}", "metric", "value");
    let _ = writeln!(s, "{:<10} {:>8.4}", "ner_p", m.ner.precision);
    let _ = writeln!(s, "{:<10} {:>8.4}", "ner_r", m.ner.recall);
    let _ = writeln!(s, "{:<10} {:>8.4}", "ner_f1", m.ner.f1);
    let _ = writeln!(s, "{:<10} {:>8.4}", "ap", m.ap);
    let _ = writeln!(s, "{:<10} {:>8.4}", "asp", m.asp);
    let _ = writeln!(s, "{:<10} {:>8}", "turns", m.turns);
    s
}

pub fn ablation_table(report: &AblationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:>16} {:>16} {:>8} {:>9}",
        "metric", "full", "base", "delta", "relative"
    );
    let row = |s: &mut String, name: &str, c: &Comparison| {
        let rel = c
            .relative
            .map_or("n/a".to_string(), |r| format!("{:+.2}%", 100.0 * r));
        let _ = writeln!(
            s,
            "{:<8} {:>8.4} ±{:<6.4} {:>8.4} ±{:<6.4} {:>+8.4} {:>9}",
            name, c.full, c.full_std, c.base, c.base_std, c.delta, rel
        );
    };
    row(&mut s, "ner_f1", &report.ner_f1);
    row(&mut s, "ap", &report.ap);
    row(&mut s, "asp", &report.asp);
    if let Some(c) = &report.challenge {
        let _ = writeln!(s, "challenge set, {} dialogues:", c.dialogues);
        row(&mut s, "ner_f1", &c.ner_f1);
        row(&mut s, "ap", &c.ap);
        row(&mut s, "asp", &c.asp);
    }
    let _ = writeln!(
        s,
        "{} runs, {} test dialogues",
        report.runs.len(),
        report.test_dialogues
    );
    s
}

/// Fail unless `path` holds a bundle directory.
pub fn check_bundle(path: &Path) -> Result<()> {
    if !path.join("bundle.json").exists() {
        bail!("{} is not a model bundle", path.display());
    }
    Ok(())
}
