//! Evaluators: map a subdomain to a measured classifier accuracy.

mod external;
mod synthetic;
mod table;

use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::domain::{Domain, Subdomain};
use crate::exec::Execution;

pub use external::{ExternalConfig, ExternalEvaluator, ProtocolRequest, ProtocolResponse};
pub use synthetic::{Interaction, SurfaceParams, SyntheticEvaluator, SyntheticSurface};
pub use table::{ReferenceTable, TableError, TableEvaluator};

/// Valid samples per subdomain when nothing else is configured.
pub const DEFAULT_NUM_SAMPLES: u32 = 50;

/// Evaluator selection as written in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorSpec {
    /// Look-up in a reference table file.
    Table { path: PathBuf },
    /// Seeded synthetic surface drawn from the given parameters.
    Synthetic(SurfaceParams),
    /// Line-delimited JSON worker process.
    External(ExternalConfig),
}

impl EvaluatorSpec {
    pub fn label(&self) -> &'static str {
        match self {
            EvaluatorSpec::Table { .. } => "table",
            EvaluatorSpec::Synthetic(_) => "synthetic",
            EvaluatorSpec::External(_) => "external",
        }
    }
}

/// Outcome of evaluating one subdomain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    pub accuracy: f64,
    pub num_samples: u32,
}

/// A measurement placed in a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub step: usize,
    pub subdomain_id: u64,
    pub accuracy: f64,
    pub num_samples: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("reference table has no row for subdomain {0}")]
    TableIncomplete(String),
    #[error("schema fingerprint mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("evaluator process failed: {message}")]
    Process { message: String, raw: String },
    #[error("malformed evaluator response: {message} (raw: {raw:?})")]
    Malformed { message: String, raw: String },
    #[error("evaluator timed out after {secs} s")]
    Timeout { secs: u64, raw: String },
    #[error("protocol violation: {message} (raw: {raw:?})")]
    ProtocolViolation { message: String, raw: String },
}

pub trait Evaluator: Send + Sync {
    fn evaluate(&self, s: &Subdomain) -> Result<Measurement, EvalError>;

    /// Whether concurrent calls actually run concurrently. External
    /// processes serialize requests, so materialization stays sequential.
    fn parallel_friendly(&self) -> bool {
        true
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&self, s: &Subdomain) -> Result<Measurement, EvalError> {
        (**self).evaluate(s)
    }

    fn parallel_friendly(&self) -> bool {
        (**self).parallel_friendly()
    }
}

/// Same accuracy for every subdomain.
#[derive(Clone, Copy, Debug)]
pub struct ConstantEvaluator {
    pub accuracy: f64,
    pub num_samples: u32,
}

impl Evaluator for ConstantEvaluator {
    fn evaluate(&self, _s: &Subdomain) -> Result<Measurement, EvalError> {
        Ok(Measurement {
            accuracy: self.accuracy,
            num_samples: self.num_samples,
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("materialization stopped at subdomain {failed} after {completed} of {total} rows: {source}")]
pub struct MaterializeError {
    /// Rows completed before the failure, including any resumed rows.
    pub partial: ReferenceTable,
    pub failed: String,
    pub completed: usize,
    pub total: usize,
    #[source]
    pub source: EvalError,
}

/// Evaluates every subdomain of `domain` missing from `resume_from`.
///
/// `on_row` fires once per newly evaluated subdomain. Evaluators that are not
/// parallel-friendly are always driven sequentially in domain order.
pub fn materialize_table<E, F>(
    evaluator: &E,
    domain: &Domain,
    resume_from: Option<ReferenceTable>,
    exec: Execution,
    on_row: F,
) -> Result<ReferenceTable, MaterializeError>
where
    E: Evaluator + ?Sized,
    F: Fn(&Subdomain, &Measurement) + Sync + Send,
{
    let schema = domain.schema();
    let mut table = resume_from.unwrap_or_else(|| {
        ReferenceTable::empty(schema.fingerprint().to_string(), DEFAULT_NUM_SAMPLES)
    });
    let todo: Vec<&Subdomain> = domain
        .subdomains()
        .iter()
        .filter(|s| table.get(s.id).is_none())
        .collect();
    let total = domain.len();

    let fail = |table: ReferenceTable, s: &Subdomain, source| MaterializeError {
        completed: table.len(),
        partial: table,
        failed: schema.describe(s),
        total,
        source,
    };

    if exec.is_parallel() && evaluator.parallel_friendly() {
        let on_row = Mutex::new(on_row);
        let results = exec.map(&todo, |s| {
            let r = evaluator.evaluate(s);
            if let Ok(m) = &r {
                (on_row.lock().unwrap())(s, m);
            }
            r
        });
        let mut first_err = None;
        for (s, r) in todo.iter().zip(results) {
            match r {
                Ok(m) => table.insert(s.id, m.accuracy),
                Err(e) if first_err.is_none() => first_err = Some((*s, e)),
                Err(_) => {}
            }
        }
        if let Some((s, e)) = first_err {
            return Err(fail(table, s, e));
        }
    } else {
        for s in todo {
            match evaluator.evaluate(s) {
                Ok(m) => {
                    on_row(s, &m);
                    table.insert(s.id, m.accuracy);
                }
                Err(e) => return Err(fail(table, s, e)),
            }
        }
    }
    Ok(table)
}
