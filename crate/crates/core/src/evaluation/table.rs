//! Precomputed per-subdomain accuracies and their on-disk format.
//!
//! The file mirrors a results table: one row per subdomain with the attribute
//! values in schema order and the measured accuracy. The row index is the
//! subdomain's position in the domain and is derived on load, never stored.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::{EvalError, Evaluator, Measurement, DEFAULT_NUM_SAMPLES};
use crate::domain::{AttributeSchema, Domain, Subdomain};
use crate::textio::{self, FINGERPRINT_KEY};

const NUM_SAMPLES_KEY: &str = "num_samples";

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("table belongs to schema {found}, active schema is {expected}")]
    SchemaMismatch { expected: String, found: String },
    #[error("table header must be {expected:?}, found {found:?}")]
    Header { expected: Vec<String>, found: Vec<String> },
    #[error("table row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("table is missing {count} subdomain(s), first {first}")]
    Incomplete { count: usize, first: String },
    #[error("table metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTable {
    fingerprint: String,
    num_samples: u32,
    rows: BTreeMap<u64, f64>,
}

impl ReferenceTable {
    pub fn empty(fingerprint: String, num_samples: u32) -> Self {
        Self {
            fingerprint,
            num_samples,
            rows: BTreeMap::new(),
        }
    }

    /// Builds a table for `domain` by calling `f` on every subdomain.
    pub fn from_fn(domain: &Domain, mut f: impl FnMut(&Subdomain) -> f64) -> Self {
        let mut t = Self::empty(
            domain.schema().fingerprint().to_string(),
            DEFAULT_NUM_SAMPLES,
        );
        for s in domain.subdomains() {
            t.insert(s.id, f(s));
        }
        t
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn num_samples(&self) -> u32 {
        self.num_samples
    }

    pub fn set_num_samples(&mut self, n: u32) {
        self.num_samples = n;
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<f64> {
        self.rows.get(&id).copied()
    }

    pub fn insert(&mut self, id: u64, accuracy: f64) {
        debug_assert!((0.0..=1.0).contains(&accuracy));
        self.rows.insert(id, accuracy);
    }

    pub fn rows(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.rows.iter().map(|(&k, &v)| (k, v))
    }

    pub fn check_schema(&self, schema: &AttributeSchema) -> Result<(), TableError> {
        if self.fingerprint != schema.fingerprint() {
            return Err(TableError::SchemaMismatch {
                expected: schema.fingerprint().to_string(),
                found: self.fingerprint.clone(),
            });
        }
        Ok(())
    }

    /// Domain subdomains that have no row.
    pub fn missing<'d>(&self, domain: &'d Domain) -> Vec<&'d Subdomain> {
        domain
            .subdomains()
            .iter()
            .filter(|s| !self.rows.contains_key(&s.id))
            .collect()
    }

    pub fn ensure_complete(&self, domain: &Domain) -> Result<(), TableError> {
        self.check_schema(domain.schema())?;
        let missing = self.missing(domain);
        if let Some(first) = missing.first() {
            return Err(TableError::Incomplete {
                count: missing.len(),
                first: domain.schema().describe(first),
            });
        }
        Ok(())
    }

    /// Accuracies indexed by domain position.
    pub fn accuracies(&self, domain: &Domain) -> Result<Vec<f64>, TableError> {
        self.ensure_complete(domain)?;
        Ok(domain
            .subdomains()
            .iter()
            .map(|s| self.rows[&s.id])
            .collect())
    }

    pub fn lookup(&self, schema: &AttributeSchema, s: &Subdomain) -> Result<Measurement, EvalError> {
        match self.rows.get(&s.id) {
            Some(&accuracy) => Ok(Measurement {
                accuracy,
                num_samples: self.num_samples,
            }),
            None => Err(EvalError::TableIncomplete(schema.describe(s))),
        }
    }

    pub fn write_header<W: Write>(
        schema: &AttributeSchema,
        num_samples: u32,
        w: &mut W,
    ) -> Result<(), TableError> {
        textio::write_meta(w, FINGERPRINT_KEY, schema.fingerprint())?;
        textio::write_meta(w, NUM_SAMPLES_KEY, &num_samples.to_string())?;
        let mut csv = textio::csv_writer(w);
        let mut header: Vec<&str> = schema.attributes().iter().map(|a| a.name.as_str()).collect();
        header.push("accuracy");
        csv.write_record(&header)?;
        csv.flush()?;
        Ok(())
    }

    pub fn write_row<W: Write>(
        schema: &AttributeSchema,
        s: &Subdomain,
        accuracy: f64,
        w: &mut W,
    ) -> Result<(), TableError> {
        let mut csv = textio::csv_writer(w);
        let mut record: Vec<String> = schema.value_names(s).iter().map(|v| v.to_string()).collect();
        record.push(textio::fmt_f64(accuracy));
        csv.write_record(&record)?;
        csv.flush()?;
        Ok(())
    }

    /// Writes the table, rows in domain order.
    pub fn write<W: Write>(&self, domain: &Domain, w: &mut W) -> Result<(), TableError> {
        self.check_schema(domain.schema())?;
        Self::write_header(domain.schema(), self.num_samples, w)?;
        for s in domain.subdomains() {
            if let Some(&acc) = self.rows.get(&s.id) {
                Self::write_row(domain.schema(), s, acc, w)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, domain: &Domain, path: impl AsRef<Path>) -> Result<(), TableError> {
        let mut buf = Vec::new();
        self.write(domain, &mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Parses a table; rows may cover only part of the domain.
    pub fn parse(schema: &AttributeSchema, text: &str) -> Result<Self, TableError> {
        let (meta, body) = textio::split_meta(text);
        let found = meta
            .get(FINGERPRINT_KEY)
            .ok_or_else(|| TableError::Meta(format!("missing `{FINGERPRINT_KEY}`")))?;
        if found != schema.fingerprint() {
            return Err(TableError::SchemaMismatch {
                expected: schema.fingerprint().to_string(),
                found: found.clone(),
            });
        }
        let num_samples = match meta.get(NUM_SAMPLES_KEY) {
            None => DEFAULT_NUM_SAMPLES,
            Some(v) => v
                .parse::<u32>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| TableError::Meta(format!("bad num_samples {v:?}")))?,
        };

        let mut reader = textio::csv_reader(body);
        let mut expected: Vec<String> = schema.attributes().iter().map(|a| a.name.clone()).collect();
        expected.push("accuracy".into());
        let found: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if found != expected {
            return Err(TableError::Header { expected, found });
        }

        let n_attr = schema.num_attributes();
        let mut table = Self::empty(schema.fingerprint().to_string(), num_samples);
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let err = |message: String| TableError::Row { row, message };
            let values: Vec<&str> = rec.iter().take(n_attr).collect();
            let s = schema
                .subdomain_from_values(&values)
                .map_err(|e| err(e.to_string()))?;
            let acc: f64 = rec
                .get(n_attr)
                .ok_or_else(|| err("missing accuracy".into()))?
                .trim()
                .parse()
                .map_err(|e| err(format!("accuracy: {e}")))?;
            if !(0.0..=1.0).contains(&acc) {
                return Err(err(format!("accuracy {acc} outside [0, 1]")));
            }
            if table.rows.insert(s.id, acc).is_some() {
                return Err(err(format!("duplicate subdomain {}", schema.describe(&s))));
            }
        }
        Ok(table)
    }

    pub fn load(schema: &AttributeSchema, path: impl AsRef<Path>) -> Result<Self, TableError> {
        Self::parse(schema, &std::fs::read_to_string(path)?)
    }
}

/// Look-up evaluator over a reference table.
pub struct TableEvaluator {
    schema: AttributeSchema,
    table: ReferenceTable,
}

impl TableEvaluator {
    pub fn new(schema: AttributeSchema, table: ReferenceTable) -> Result<Self, EvalError> {
        if table.fingerprint() != schema.fingerprint() {
            return Err(EvalError::SchemaMismatch {
                expected: schema.fingerprint().to_string(),
                found: table.fingerprint().to_string(),
            });
        }
        Ok(Self { schema, table })
    }

    pub fn table(&self) -> &ReferenceTable {
        &self.table
    }
}

impl Evaluator for TableEvaluator {
    fn evaluate(&self, s: &Subdomain) -> Result<Measurement, EvalError> {
        self.table.lookup(&self.schema, s)
    }
}
