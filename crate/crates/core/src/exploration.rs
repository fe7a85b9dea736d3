//! The exploration loop: select, evaluate, record, repeat until the budget is
//! spent.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::evaluation::{
    EvalError, EvaluationRecord, Evaluator, EvaluatorSpec, ReferenceTable, DEFAULT_NUM_SAMPLES,
};
use crate::exec::Execution;
use crate::selection::{SelectionContext, SelectionError, StrategySpec};
use crate::textio::{self, FINGERPRINT_KEY};

const CONFIG_KEY: &str = "config";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluator: Option<EvaluatorSpec>,
    pub strategy: StrategySpec,
    /// Exact number of evaluations.
    pub budget: usize,
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub num_samples: u32,
}

fn default_samples() -> u32 {
    DEFAULT_NUM_SAMPLES
}

impl RunConfig {
    pub fn new(strategy: StrategySpec, budget: usize, seed: u64) -> Self {
        Self {
            schema: None,
            evaluator: None,
            strategy,
            budget,
            seed,
            num_samples: DEFAULT_NUM_SAMPLES,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Budget after clamping to the domain size.
    pub fn effective_budget(&self, domain: &Domain) -> usize {
        self.budget.min(domain.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunHistory {
    pub config: RunConfig,
    pub records: Vec<EvaluationRecord>,
    /// Wall-clock milliseconds spent on each step.
    pub millis: Vec<u64>,
}

impl RunHistory {
    pub fn empty(config: RunConfig) -> Self {
        Self {
            config,
            records: Vec::new(),
            millis: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.accuracy).collect()
    }

    pub fn subdomain_ids(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.subdomain_id).collect()
    }

    pub fn truncate(&mut self, len: usize) {
        self.records.truncate(len);
        self.millis.truncate(len);
    }

    fn push(&mut self, record: EvaluationRecord, millis: u64) {
        self.records.push(record);
        self.millis.push(millis);
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunFailure {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("selection failed at step {step}: {source}")]
    Selection {
        step: usize,
        #[source]
        source: SelectionError,
    },
    #[error("evaluation failed at step {step} on {subdomain}: {source}")]
    Evaluation {
        step: usize,
        subdomain: String,
        #[source]
        source: EvalError,
    },
    #[error("resumed history diverges at step {step}: recorded subdomain {recorded}, strategy chose {selected}")]
    Diverged {
        step: usize,
        recorded: u64,
        selected: u64,
    },
}

/// A failed run together with every record completed before the failure.
#[derive(Debug, thiserror::Error)]
#[error("{failure}")]
pub struct RunError {
    pub partial: RunHistory,
    #[source]
    pub failure: RunFailure,
}

#[derive(Debug, thiserror::Error)]
#[error("run with seed {seed} failed: {error}")]
pub struct MultiSeedError {
    pub seed: u64,
    #[source]
    pub error: RunError,
}

/// Everything a run needs besides its config.
#[derive(Clone, Copy)]
pub struct Explorer<'a> {
    pub domain: &'a Domain,
    pub evaluator: &'a dyn Evaluator,
    /// Only the oracle strategy reads the table.
    pub table: Option<&'a ReferenceTable>,
}

impl<'a> Explorer<'a> {
    pub fn new(domain: &'a Domain, evaluator: &'a dyn Evaluator) -> Self {
        Self {
            domain,
            evaluator,
            table: None,
        }
    }

    pub fn with_table(mut self, table: &'a ReferenceTable) -> Self {
        self.table = Some(table);
        self
    }

    pub fn run(&self, config: &RunConfig) -> Result<RunHistory, RunError> {
        self.run_resumable(config, None, |_, _| Ok(()))
    }

    /// Runs the loop, replaying `resume` first.
    ///
    /// Replayed steps feed their recorded accuracies back to the strategy
    /// instead of re-evaluating, and must match what the strategy selects.
    /// `on_step` sees each newly evaluated record with its timing; an error
    /// from it aborts the run like an evaluator failure.
    pub fn run_resumable<F>(
        &self,
        config: &RunConfig,
        resume: Option<&RunHistory>,
        mut on_step: F,
    ) -> Result<RunHistory, RunError>
    where
        F: FnMut(&EvaluationRecord, u64) -> Result<(), EvalError>,
    {
        let domain = self.domain;
        let mut history = RunHistory::empty(config.clone());
        let fail = |history: RunHistory, failure| RunError {
            partial: history,
            failure,
        };
        if config.num_samples == 0 {
            return Err(fail(history, RunFailure::Config("num_samples must be at least 1".into())));
        }
        let budget = config.effective_budget(domain);
        if budget < config.budget {
            log::warn!(
                "budget {} exceeds the domain size; clamped to {budget}",
                config.budget
            );
        }
        let replay = resume.map_or(&[][..], |h| &h.records[..]);
        if replay.len() > budget {
            return Err(fail(
                history,
                RunFailure::Config(format!(
                    "resumed history has {} records, budget is {budget}",
                    replay.len()
                )),
            ));
        }
        let mut strategy = match config.strategy.build(domain, config.seed, self.table) {
            Ok(s) => s,
            Err(e) => return Err(fail(history, RunFailure::Config(e.to_string()))),
        };

        let mut evaluated = vec![false; domain.len()];
        let mut remaining: Vec<usize> = (0..domain.len()).collect();
        for step in 0..budget {
            let started = Instant::now();
            let ctx = SelectionContext {
                domain,
                history: &history.records,
                evaluated: &evaluated,
                remaining: &remaining,
            };
            let index = match strategy.select(&ctx) {
                Ok(i) => i,
                Err(source) => return Err(fail(history, RunFailure::Selection { step, source })),
            };
            let pos = remaining
                .binary_search(&index)
                .expect("strategies return unevaluated subdomains");
            let s = domain.get(index);

            let (record, millis) = if let Some(prior) = replay.get(step) {
                if prior.subdomain_id != s.id {
                    return Err(fail(
                        history,
                        RunFailure::Diverged {
                            step,
                            recorded: prior.subdomain_id,
                            selected: s.id,
                        },
                    ));
                }
                let millis = resume.and_then(|h| h.millis.get(step).copied()).unwrap_or(0);
                (EvaluationRecord { step, ..prior.clone() }, millis)
            } else {
                let m = match self.evaluator.evaluate(s) {
                    Ok(m) => m,
                    Err(source) => {
                        return Err(fail(
                            history,
                            RunFailure::Evaluation {
                                step,
                                subdomain: domain.schema().describe(s),
                                source,
                            },
                        ))
                    }
                };
                let record = EvaluationRecord {
                    step,
                    subdomain_id: s.id,
                    accuracy: m.accuracy,
                    num_samples: m.num_samples,
                };
                let millis = started.elapsed().as_millis() as u64;
                if let Err(source) = on_step(&record, millis) {
                    return Err(fail(
                        history,
                        RunFailure::Evaluation {
                            step,
                            subdomain: domain.schema().describe(s),
                            source,
                        },
                    ));
                }
                (record, millis)
            };
            remaining.remove(pos);
            evaluated[index] = true;
            history.push(record, millis);
        }
        Ok(history)
    }

    /// Independent runs of `config`, one per seed, in seed order.
    pub fn run_multi_seed(
        &self,
        config: &RunConfig,
        seeds: &[u64],
        exec: Execution,
    ) -> Result<Vec<RunHistory>, MultiSeedError> {
        let exec = if self.evaluator.parallel_friendly() {
            exec
        } else {
            Execution::Sequential
        };
        exec.try_map(seeds, |&seed| {
            self.run(&config.with_seed(seed))
                .map_err(|error| MultiSeedError { seed, error })
        })
    }
}

/// One run without a table; see [`Explorer::run`].
pub fn run_exploration(
    domain: &Domain,
    evaluator: &dyn Evaluator,
    table: Option<&ReferenceTable>,
    config: &RunConfig,
) -> Result<RunHistory, RunError> {
    Explorer {
        domain,
        evaluator,
        table,
    }
    .run(config)
}

pub fn run_multi_seed(
    domain: &Domain,
    evaluator: &dyn Evaluator,
    table: Option<&ReferenceTable>,
    config: &RunConfig,
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<RunHistory>, MultiSeedError> {
    Explorer {
        domain,
        evaluator,
        table,
    }
    .run_multi_seed(config, seeds, exec)
}

// ---------------------------------------------------------------------------
// history files

#[derive(Debug, thiserror::Error)]
pub enum HistoryError {
    #[error("schema fingerprint mismatch: history has {found}, schema has {expected}")]
    SchemaMismatch { expected: String, found: String },
    #[error("history metadata: {0}")]
    Meta(String),
    #[error("history header: expected {expected:?}, found {found:?}")]
    Header {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("history row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

fn header_columns(domain: &Domain) -> Vec<String> {
    let mut cols = vec!["step".to_string(), "subdomain_id".to_string()];
    cols.extend(domain.schema().attributes().iter().map(|a| a.name.clone()));
    cols.extend(["accuracy", "num_samples", "millis"].map(String::from));
    cols
}

/// Appends history rows to a file as they are produced.
///
/// In canonical mode the timing column is written as 0 so that two runs of
/// the same config produce byte-identical files.
pub struct HistoryWriter<'d> {
    domain: &'d Domain,
    out: BufWriter<File>,
    canonical: bool,
}

impl<'d> HistoryWriter<'d> {
    /// Creates (or truncates) `path` and writes the header block.
    pub fn create(
        domain: &'d Domain,
        path: impl AsRef<Path>,
        config: &RunConfig,
        canonical: bool,
    ) -> Result<Self, HistoryError> {
        let mut w = Self {
            domain,
            out: BufWriter::new(File::create(path)?),
            canonical,
        };
        write_history_header(domain, config, &mut w.out)?;
        w.out.flush()?;
        Ok(w)
    }

    /// Reopens an existing history file for appending.
    pub fn append(
        domain: &'d Domain,
        path: impl AsRef<Path>,
        canonical: bool,
    ) -> Result<Self, HistoryError> {
        Ok(Self {
            domain,
            out: BufWriter::new(OpenOptions::new().append(true).open(path)?),
            canonical,
        })
    }

    pub fn write(&mut self, record: &EvaluationRecord, millis: u64) -> Result<(), HistoryError> {
        let millis = if self.canonical { 0 } else { millis };
        write_history_row(self.domain, record, millis, &mut self.out)?;
        self.out.flush()?;
        Ok(())
    }
}

fn write_history_header<W: Write>(
    domain: &Domain,
    config: &RunConfig,
    w: &mut W,
) -> Result<(), HistoryError> {
    textio::write_meta(w, FINGERPRINT_KEY, domain.schema().fingerprint())?;
    let json = serde_json::to_string(config).expect("config serializes");
    textio::write_meta(w, CONFIG_KEY, &json)?;
    let mut csv = textio::csv_writer(w);
    csv.write_record(header_columns(domain))?;
    csv.flush()?;
    Ok(())
}

fn write_history_row<W: Write>(
    domain: &Domain,
    record: &EvaluationRecord,
    millis: u64,
    w: &mut W,
) -> Result<(), HistoryError> {
    let schema = domain.schema();
    let s = domain
        .by_id(record.subdomain_id)
        .expect("records belong to the domain");
    let mut row = vec![record.step.to_string(), record.subdomain_id.to_string()];
    row.extend(schema.value_names(s).into_iter().map(String::from));
    row.push(textio::fmt_f64(record.accuracy));
    row.push(record.num_samples.to_string());
    row.push(millis.to_string());
    let mut csv = textio::csv_writer(w);
    csv.write_record(&row)?;
    csv.flush()?;
    Ok(())
}

impl RunHistory {
    pub fn write<W: Write>(
        &self,
        domain: &Domain,
        canonical: bool,
        w: &mut W,
    ) -> Result<(), HistoryError> {
        write_history_header(domain, &self.config, w)?;
        for (i, r) in self.records.iter().enumerate() {
            let millis = if canonical { 0 } else { self.millis.get(i).copied().unwrap_or(0) };
            write_history_row(domain, r, millis, w)?;
        }
        Ok(())
    }

    pub fn save(
        &self,
        domain: &Domain,
        path: impl AsRef<Path>,
        canonical: bool,
    ) -> Result<(), HistoryError> {
        let mut buf = Vec::new();
        self.write(domain, canonical, &mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Parses a history file and checks it against the domain.
    pub fn parse(domain: &Domain, text: &str) -> Result<Self, HistoryError> {
        let schema = domain.schema();
        let (meta, body) = textio::split_meta(text);
        let found = meta
            .get(FINGERPRINT_KEY)
            .ok_or_else(|| HistoryError::Meta(format!("missing `{FINGERPRINT_KEY}`")))?;
        if found != schema.fingerprint() {
            return Err(HistoryError::SchemaMismatch {
                expected: schema.fingerprint().to_string(),
                found: found.clone(),
            });
        }
        let config: RunConfig = serde_json::from_str(
            meta.get(CONFIG_KEY)
                .ok_or_else(|| HistoryError::Meta(format!("missing `{CONFIG_KEY}`")))?,
        )
        .map_err(|e| HistoryError::Meta(format!("config: {e}")))?;

        let mut reader = textio::csv_reader(body);
        let expected = header_columns(domain);
        let found: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if found != expected {
            return Err(HistoryError::Header { expected, found });
        }
        let n_attr = schema.num_attributes();
        let mut history = RunHistory::empty(config);
        let mut seen = vec![false; domain.len()];
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let err = |message: String| HistoryError::Row { row, message };
            let field = |j: usize| rec.get(j).unwrap_or("").trim();
            fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String>
            where
                T::Err: std::fmt::Display,
            {
                s.parse().map_err(|e| format!("{what} {s:?}: {e}"))
            }
            let step: usize = num(field(0), "step").map_err(err)?;
            if step != i {
                return Err(err(format!("step {step} out of sequence, expected {i}")));
            }
            let id: u64 = num(field(1), "subdomain_id").map_err(err)?;
            let index = domain
                .index_of(id)
                .ok_or_else(|| err(format!("subdomain id {id} is not in the domain")))?;
            let values: Vec<&str> = (0..n_attr).map(|j| field(2 + j)).collect();
            if schema.value_names(domain.get(index)) != values {
                return Err(err(format!("attribute values {values:?} do not match id {id}")));
            }
            if std::mem::replace(&mut seen[index], true) {
                return Err(err(format!("subdomain id {id} appears twice")));
            }
            let accuracy: f64 = num(field(2 + n_attr), "accuracy").map_err(err)?;
            if !(0.0..=1.0).contains(&accuracy) {
                return Err(err(format!("accuracy {accuracy} outside [0, 1]")));
            }
            let num_samples: u32 = num(field(3 + n_attr), "num_samples").map_err(err)?;
            let millis: u64 = num(field(4 + n_attr), "millis").map_err(err)?;
            history.push(
                EvaluationRecord {
                    step,
                    subdomain_id: id,
                    accuracy,
                    num_samples,
                },
                millis,
            );
        }
        Ok(history)
    }

    pub fn load(domain: &Domain, path: impl AsRef<Path>) -> Result<Self, HistoryError> {
        Self::parse(domain, &std::fs::read_to_string(path)?)
    }
}
