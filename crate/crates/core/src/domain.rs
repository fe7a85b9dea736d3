//! Attribute schemas, subdomain enumeration, prompt rendering and one-hot
//! encoding.
//!
//! A schema is an ordered list of categorical attributes. A subdomain assigns
//! one value to every attribute; its canonical id is the mixed-radix number
//! formed by the value indices in schema order, last attribute least
//! significant. The domain is every subdomain that matches none of the
//! schema's forbidden assignments, sorted by id.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One categorical attribute and its ordered values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub values: Vec<String>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, values: &[&str]) -> Self {
        Self {
            name: name.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

/// Conjunctive partial assignment: any subdomain matching every binding is
/// excluded from the domain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ForbiddenAssignment {
    pub bindings: IndexMap<String, String>,
}

impl ForbiddenAssignment {
    pub fn new(pairs: &[(&str, &str)]) -> Self {
        Self {
            bindings: pairs
                .iter()
                .map(|(a, v)| (a.to_string(), v.to_string()))
                .collect(),
        }
    }
}

/// A single problem found while validating a schema.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SchemaViolation {
    NoAttributes,
    DuplicateAttribute(String),
    EmptyAttribute(String),
    DuplicateValue { attribute: String, value: String },
    UnknownPlaceholder(String),
    DuplicatePlaceholder(String),
    MissingPlaceholder(String),
    StrayBrace { offset: usize },
    ConstraintTooSmall { index: usize },
    ConstraintUnknownAttribute { index: usize, attribute: String },
    ConstraintUnknownValue { index: usize, attribute: String, value: String },
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use SchemaViolation::*;
        match self {
            NoAttributes => write!(f, "schema defines no attributes"),
            DuplicateAttribute(a) => write!(f, "attribute `{a}` is defined more than once"),
            EmptyAttribute(a) => write!(f, "attribute `{a}` has no values"),
            DuplicateValue { attribute, value } => {
                write!(f, "attribute `{attribute}` lists value `{value}` more than once")
            }
            UnknownPlaceholder(p) => {
                write!(f, "prompt_template placeholder `{{{p}}}` names no attribute")
            }
            DuplicatePlaceholder(p) => {
                write!(f, "prompt_template uses placeholder `{{{p}}}` more than once")
            }
            MissingPlaceholder(a) => {
                write!(f, "prompt_template has no placeholder for attribute `{a}`")
            }
            StrayBrace { offset } => {
                write!(f, "prompt_template has an unmatched or literal brace at byte {offset}")
            }
            ConstraintTooSmall { index } => {
                write!(f, "constraints[{index}] must bind at least two attributes")
            }
            ConstraintUnknownAttribute { index, attribute } => {
                write!(f, "constraints[{index}] references unknown attribute `{attribute}`")
            }
            ConstraintUnknownValue {
                index,
                attribute,
                value,
            } => write!(
                f,
                "constraints[{index}] references unknown value `{value}` of attribute `{attribute}`"
            ),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("invalid schema:{}", format_violations(.0))]
    Invalid(Vec<SchemaViolation>),
    #[error("failed to parse schema: {0}")]
    Parse(String),
    #[error("failed to read schema {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn format_violations(v: &[SchemaViolation]) -> String {
    v.iter().map(|x| format!("\n  - {x}")).collect()
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SubdomainError {
    #[error("expected {expected} values, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("attribute `{attribute}` has no value `{value}`")]
    UnknownValue { attribute: String, value: String },
    #[error("value index {index} out of range for attribute `{attribute}`")]
    IndexOutOfRange { attribute: String, index: usize },
    #[error("subdomain id {0} is outside the product space")]
    IdOutOfRange(u64),
    #[error("subdomain {0} matches a forbidden assignment")]
    Forbidden(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum TemplatePart {
    Literal(String),
    Slot(usize),
}

/// On-disk layout of a schema document.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    pub prompt_template: String,
    #[serde(default)]
    pub constraints: Vec<IndexMap<String, String>>,
    pub attributes: IndexMap<String, Vec<String>>,
}

/// Validated evaluation-domain definition.
#[derive(Clone, Debug)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
    constraints: Vec<ForbiddenAssignment>,
    prompt_template: String,
    resolved: Vec<Vec<(usize, usize)>>,
    template: Vec<TemplatePart>,
    offsets: Vec<usize>,
    fingerprint: String,
}

impl PartialEq for AttributeSchema {
    fn eq(&self, other: &Self) -> bool {
        self.fingerprint == other.fingerprint
    }
}

impl AttributeSchema {
    pub fn new(
        attributes: Vec<Attribute>,
        constraints: Vec<ForbiddenAssignment>,
        prompt_template: impl Into<String>,
    ) -> Result<Self, SchemaError> {
        let prompt_template = prompt_template.into();
        let mut violations = Vec::new();

        if attributes.is_empty() {
            violations.push(SchemaViolation::NoAttributes);
        }
        let mut names = HashSet::new();
        for attr in &attributes {
            if !names.insert(attr.name.as_str()) {
                violations.push(SchemaViolation::DuplicateAttribute(attr.name.clone()));
            }
            if attr.values.is_empty() {
                violations.push(SchemaViolation::EmptyAttribute(attr.name.clone()));
            }
            let mut seen = HashSet::new();
            for v in &attr.values {
                if !seen.insert(v.as_str()) {
                    violations.push(SchemaViolation::DuplicateValue {
                        attribute: attr.name.clone(),
                        value: v.clone(),
                    });
                }
            }
        }

        let template = parse_template(&prompt_template, &attributes, &mut violations);

        let mut resolved = Vec::with_capacity(constraints.len());
        for (index, c) in constraints.iter().enumerate() {
            if c.bindings.len() < 2 {
                violations.push(SchemaViolation::ConstraintTooSmall { index });
            }
            let mut binding = Vec::new();
            for (attribute, value) in &c.bindings {
                match attributes.iter().position(|a| &a.name == attribute) {
                    None => violations.push(SchemaViolation::ConstraintUnknownAttribute {
                        index,
                        attribute: attribute.clone(),
                    }),
                    Some(ai) => match attributes[ai].value_index(value) {
                        None => violations.push(SchemaViolation::ConstraintUnknownValue {
                            index,
                            attribute: attribute.clone(),
                            value: value.clone(),
                        }),
                        Some(vi) => binding.push((ai, vi)),
                    },
                }
            }
            binding.sort_unstable();
            resolved.push(binding);
        }

        if !violations.is_empty() {
            return Err(SchemaError::Invalid(violations));
        }

        let mut offsets = Vec::with_capacity(attributes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for a in &attributes {
            acc += a.values.len();
            offsets.push(acc);
        }

        let fingerprint = compute_fingerprint(&attributes, &constraints, &prompt_template);
        Ok(Self {
            attributes,
            constraints,
            prompt_template,
            resolved,
            template: template.unwrap_or_default(),
            offsets,
            fingerprint,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SchemaError> {
        let file: SchemaFile = toml::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
        Self::from_file_layout(file)
    }

    pub fn from_file_layout(file: SchemaFile) -> Result<Self, SchemaError> {
        let attributes = file
            .attributes
            .into_iter()
            .map(|(name, values)| Attribute { name, values })
            .collect();
        let constraints = file
            .constraints
            .into_iter()
            .map(|bindings| ForbiddenAssignment { bindings })
            .collect();
        Self::new(attributes, constraints, file.prompt_template)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_file_layout(&self) -> SchemaFile {
        SchemaFile {
            prompt_template: self.prompt_template.clone(),
            constraints: self.constraints.iter().map(|c| c.bindings.clone()).collect(),
            attributes: self
                .attributes
                .iter()
                .map(|a| (a.name.clone(), a.values.clone()))
                .collect(),
        }
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn constraints(&self) -> &[ForbiddenAssignment] {
        &self.constraints
    }

    pub fn prompt_template(&self) -> &str {
        &self.prompt_template
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Hex digest identifying this schema; embedded in every file derived
    /// from it.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Size of the unconstrained product space.
    pub fn product_size(&self) -> u64 {
        self.attributes
            .iter()
            .map(|a| a.values.len() as u64)
            .product()
    }

    /// Length of the one-hot feature vector.
    pub fn onehot_len(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Offset of an attribute's block in the one-hot vector.
    pub fn onehot_offset(&self, attribute: usize) -> usize {
        self.offsets[attribute]
    }

    pub fn is_forbidden(&self, assignment: &[usize]) -> bool {
        self.resolved
            .iter()
            .any(|c| c.iter().all(|&(a, v)| assignment[a] == v))
    }

    pub fn encode_id(&self, assignment: &[usize]) -> u64 {
        assignment
            .iter()
            .zip(&self.attributes)
            .fold(0u64, |acc, (&v, a)| acc * a.values.len() as u64 + v as u64)
    }

    pub fn decode_id(&self, id: u64) -> Result<Vec<usize>, SubdomainError> {
        if id >= self.product_size() {
            return Err(SubdomainError::IdOutOfRange(id));
        }
        let mut rest = id;
        let mut out = vec![0; self.attributes.len()];
        for (slot, a) in out.iter_mut().zip(&self.attributes).rev() {
            let radix = a.values.len() as u64;
            *slot = (rest % radix) as usize;
            rest /= radix;
        }
        Ok(out)
    }

    /// Builds a subdomain from value indices, checking ranges and constraints.
    pub fn subdomain(&self, assignment: Vec<usize>) -> Result<Subdomain, SubdomainError> {
        if assignment.len() != self.attributes.len() {
            return Err(SubdomainError::Arity {
                expected: self.attributes.len(),
                got: assignment.len(),
            });
        }
        for (&v, a) in assignment.iter().zip(&self.attributes) {
            if v >= a.values.len() {
                return Err(SubdomainError::IndexOutOfRange {
                    attribute: a.name.clone(),
                    index: v,
                });
            }
        }
        let s = Subdomain {
            id: self.encode_id(&assignment),
            assignment,
        };
        if self.is_forbidden(&s.assignment) {
            return Err(SubdomainError::Forbidden(self.describe(&s)));
        }
        Ok(s)
    }

    /// Builds a subdomain from value names in schema order.
    pub fn subdomain_from_values<S: AsRef<str>>(
        &self,
        values: &[S],
    ) -> Result<Subdomain, SubdomainError> {
        if values.len() != self.attributes.len() {
            return Err(SubdomainError::Arity {
                expected: self.attributes.len(),
                got: values.len(),
            });
        }
        let assignment = values
            .iter()
            .zip(&self.attributes)
            .map(|(v, a)| {
                a.value_index(v.as_ref())
                    .ok_or_else(|| SubdomainError::UnknownValue {
                        attribute: a.name.clone(),
                        value: v.as_ref().to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.subdomain(assignment)
    }

    pub fn value_names<'a>(&'a self, s: &Subdomain) -> Vec<&'a str> {
        s.assignment
            .iter()
            .zip(&self.attributes)
            .map(|(&v, a)| a.values[v].as_str())
            .collect()
    }

    /// Human-readable `(v1, v2, ...)` form.
    pub fn describe(&self, s: &Subdomain) -> String {
        format!("({})", self.value_names(s).join(", "))
    }

    pub fn render_prompt(&self, s: &Subdomain) -> String {
        let mut out = String::with_capacity(self.prompt_template.len() + 32);
        for part in &self.template {
            match part {
                TemplatePart::Literal(text) => out.push_str(text),
                TemplatePart::Slot(a) => {
                    out.push_str(&self.attributes[*a].values[s.assignment[*a]])
                }
            }
        }
        out
    }

    /// Indices of the active one-hot features, one per attribute.
    pub fn active_features(&self, s: &Subdomain) -> Vec<usize> {
        s.assignment
            .iter()
            .enumerate()
            .map(|(a, &v)| self.offsets[a] + v)
            .collect()
    }

    pub fn encode_onehot(&self, s: &Subdomain) -> Vec<f64> {
        let mut x = vec![0.0; self.onehot_len()];
        for f in self.active_features(s) {
            x[f] = 1.0;
        }
        x
    }
}

fn parse_template(
    template: &str,
    attributes: &[Attribute],
    violations: &mut Vec<SchemaViolation>,
) -> Option<Vec<TemplatePart>> {
    let mut parts = Vec::new();
    let mut used = vec![false; attributes.len()];
    let mut ok = true;
    let mut literal = String::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' => {
                let close = template[i + 1..].find(['{', '}']).map(|j| i + 1 + j);
                match close {
                    Some(j) if bytes[j] == b'}' && j > i + 1 => {
                        let name = &template[i + 1..j];
                        match attributes.iter().position(|a| a.name == name) {
                            Some(a) => {
                                if used[a] {
                                    violations
                                        .push(SchemaViolation::DuplicatePlaceholder(name.into()));
                                    ok = false;
                                }
                                used[a] = true;
                                if !literal.is_empty() {
                                    parts.push(TemplatePart::Literal(std::mem::take(&mut literal)));
                                }
                                parts.push(TemplatePart::Slot(a));
                            }
                            None => {
                                violations.push(SchemaViolation::UnknownPlaceholder(name.into()));
                                ok = false;
                            }
                        }
                        i = j + 1;
                    }
                    _ => {
                        violations.push(SchemaViolation::StrayBrace { offset: i });
                        ok = false;
                        i += 1;
                    }
                }
            }
            b'}' => {
                violations.push(SchemaViolation::StrayBrace { offset: i });
                ok = false;
                i += 1;
            }
            _ => {
                let next = template[i..]
                    .find(['{', '}'])
                    .map_or(bytes.len(), |j| i + j);
                literal.push_str(&template[i..next]);
                i = next;
            }
        }
    }
    if !literal.is_empty() {
        parts.push(TemplatePart::Literal(literal));
    }
    for (a, u) in attributes.iter().zip(&used) {
        if !u {
            violations.push(SchemaViolation::MissingPlaceholder(a.name.clone()));
            ok = false;
        }
    }
    ok.then_some(parts)
}

fn compute_fingerprint(
    attributes: &[Attribute],
    constraints: &[ForbiddenAssignment],
    template: &str,
) -> String {
    let canonical = serde_json::json!({
        "attributes": attributes.iter().map(|a| (&a.name, &a.values)).collect::<Vec<_>>(),
        "constraints": constraints
            .iter()
            .map(|c| c.bindings.iter().collect::<Vec<_>>())
            .collect::<Vec<_>>(),
        "prompt_template": template,
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// One full assignment of a value to every attribute.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subdomain {
    pub id: u64,
    pub assignment: Vec<usize>,
}

/// All constraint-valid subdomains of a schema, sorted by id.
#[derive(Clone, Debug)]
pub struct Domain {
    schema: AttributeSchema,
    subdomains: Vec<Subdomain>,
    position: HashMap<u64, usize>,
}

impl Domain {
    pub fn build(schema: AttributeSchema) -> Self {
        let n_attr = schema.num_attributes();
        let radices: Vec<usize> = schema.attributes().iter().map(|a| a.values.len()).collect();
        let mut subdomains = Vec::new();
        let mut assignment = vec![0usize; n_attr];
        // odometer over the product space, last attribute fastest, so ids come out ascending
        'outer: loop {
            if !schema.is_forbidden(&assignment) {
                subdomains.push(Subdomain {
                    id: schema.encode_id(&assignment),
                    assignment: assignment.clone(),
                });
            }
            let mut a = n_attr;
            loop {
                if a == 0 {
                    break 'outer;
                }
                a -= 1;
                assignment[a] += 1;
                if assignment[a] < radices[a] {
                    break;
                }
                assignment[a] = 0;
            }
        }
        let position = subdomains
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id, i))
            .collect();
        Self {
            schema,
            subdomains,
            position,
        }
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn subdomains(&self) -> &[Subdomain] {
        &self.subdomains
    }

    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }

    pub fn get(&self, index: usize) -> &Subdomain {
        &self.subdomains[index]
    }

    /// Position of a subdomain id in the sorted valid list (the derived
    /// table index).
    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.position.get(&id).copied()
    }

    pub fn by_id(&self, id: u64) -> Option<&Subdomain> {
        self.index_of(id).map(|i| &self.subdomains[i])
    }

    /// Dense one-hot design matrix, one row per listed domain index.
    pub fn design_rows(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        indices
            .iter()
            .map(|&i| self.schema.encode_onehot(&self.subdomains[i]))
            .collect()
    }
}
