use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::Result;
use dialoguekit::models::Models;
use dialoguekit::runtime::{Agent, ApiExecutor, RuntimeConfig, TurnResult};

/// Load a bundle into an agent with mock APIs.
pub fn load_agent(bundle: &Path) -> Result<Agent> {
    crate::check_bundle(bundle)?;
    let models = Models::load(bundle)?;
    let schema = models.schema.clone();
    Ok(Agent::new(
        &schema,
        Arc::new(models),
        ApiExecutor::mock(),
        RuntimeConfig::default(),
    )?)
}

fn print_turn(out: &mut dyn Write, user: &str, turn: &TurnResult, json: bool) -> Result<()> {
    if json {
        let line = serde_json::json!({ "user": user, "turn": turn });
        writeln!(out, "{line}")?;
    } else {
        writeln!(out, "user:  {user}")?;
        let names: Vec<&str> = turn.actions.iter().map(|a| a.name.as_str()).collect();
        writeln!(out, "agent: {}  [{}]", turn.text, names.join(", "))?;
    }
    Ok(())
}

/// Feed `lines` through one session with a fixed seed; stops when the
/// agent ends the dialogue. Returns every turn.
pub fn replay(
    agent: &Agent,
    seed: u64,
    lines: &[String],
    json: bool,
    out: &mut dyn Write,
) -> Result<Vec<TurnResult>> {
    let (mut session, welcome) = agent.create_session("replay", seed, None)?;
    if let (Some(w), false) = (&welcome, json) {
        writeln!(out, "agent: {w}")?;
    }
    let mut turns = Vec::new();
    for line in lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty()) {
        let turn = agent.handle_utterance(&mut session, line)?;
        print_turn(out, line, &turn, json)?;
        let ended = turn.ended;
        turns.push(turn);
        if ended {
            break;
        }
    }
    Ok(turns)
}

pub fn repl(agent: &Agent, seed: u64, json: bool) -> Result<()> {
    let (mut session, welcome) = agent.create_session("chat", seed, None)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if let Some(w) = welcome {
        writeln!(out, "agent: {w}")?;
    }
    let stdin = std::io::stdin();
    loop {
        write!(out, "> ")?;
        out.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let turn = agent.handle_utterance(&mut session, line)?;
        if json {
            print_turn(&mut out, line, &turn, true)?;
        } else {
            writeln!(out, "agent: {}", turn.text)?;
        }
        if turn.ended {
            break;
        }
    }
    Ok(())
}
