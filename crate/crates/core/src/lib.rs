//! Guided exploration of categorical attribute domains to find the
//! attribute combinations on which a black-box classifier performs worst.
//!
//! The loop alternates three steps: a selection strategy picks the next
//! unevaluated subdomain, an evaluator measures the classifier's accuracy on
//! it, and the result is added to the run history that feeds the next
//! selection.

pub mod benchmark;
pub mod cli;
pub mod config;
pub mod domain;
pub mod evaluation;
pub mod exec;
pub mod exploration;
pub mod metrics;
pub mod rng;
pub mod selection;
pub mod surrogate;
pub mod textio;

pub use domain::{Attribute, AttributeSchema, Domain, ForbiddenAssignment, Subdomain};
pub use evaluation::{EvaluationRecord, Evaluator, Measurement, ReferenceTable};
pub use exec::Execution;
