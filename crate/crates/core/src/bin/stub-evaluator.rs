//! Stand-in for a generation pipeline speaking the line-delimited JSON
//! evaluator protocol. Used by the integration tests and handy for trying
//! the CLI without a GPU.

use std::fs::OpenOptions;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use serde_json::{json, Value};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    /// Always `--accuracy`
    Constant,
    /// Deterministic accuracy derived from the prompt text
    Hash,
    /// Accuracy 1.5
    OutOfRange,
    /// Answers with the wrong request id
    WrongId,
    /// Answers with a line that is not JSON
    Garbage,
}

#[derive(Parser, Debug)]
struct Args {
    #[arg(long, value_enum, default_value = "hash")]
    mode: Mode,
    #[arg(long, default_value_t = 0.9)]
    accuracy: f64,
    /// Exit without answering once this many requests were answered
    #[arg(long)]
    fail_after: Option<usize>,
    /// Append every request line to this file
    #[arg(long)]
    log: Option<PathBuf>,
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf29ce484222325, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

fn main() -> io::Result<()> {
    let args = Args::parse();
    let mut log = match &args.log {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let stdout = io::stdout();
    let mut answered = 0;
    for line in io::stdin().lock().lines() {
        let line = line?;
        if let Some(f) = log.as_mut() {
            writeln!(f, "{line}")?;
        }
        if args.fail_after.is_some_and(|n| answered >= n) {
            std::process::exit(1);
        }
        let request: Value = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let id = request["id"].as_u64().unwrap_or(0);
        let prompt = request["prompt"].as_str().unwrap_or("");
        let n = request["n_samples"].as_u64().unwrap_or(50);
        let response = match args.mode {
            Mode::Constant => json!({"id": id, "accuracy": args.accuracy, "valid_samples": n}),
            Mode::Hash => {
                let correct = fnv1a(prompt) % (n + 1);
                json!({"id": id, "accuracy": correct as f64 / n as f64, "valid_samples": n})
            }
            Mode::OutOfRange => json!({"id": id, "accuracy": 1.5, "valid_samples": n}),
            Mode::WrongId => json!({"id": id + 1, "accuracy": 0.5, "valid_samples": n}),
            Mode::Garbage => Value::String("not a response".into()),
        };
        let mut out = stdout.lock();
        match response {
            Value::String(s) => writeln!(out, "{s}")?,
            v => writeln!(out, "{v}")?,
        }
        out.flush()?;
        answered += 1;
    }
    Ok(())
}
