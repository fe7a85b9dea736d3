//! Shared layout for the delimited text files: a block of `# key=value`
//! metadata lines followed by a CSV body with a header row.

use std::io::{self, Write};

use indexmap::IndexMap;

pub const FINGERPRINT_KEY: &str = "schema_fingerprint";

pub fn write_meta<W: Write>(w: &mut W, key: &str, value: &str) -> io::Result<()> {
    debug_assert!(!value.contains('\n'));
    writeln!(w, "# {key}={value}")
}

/// Splits leading metadata lines from the CSV body.
pub fn split_meta(text: &str) -> (IndexMap<String, String>, &str) {
    let mut meta = IndexMap::new();
    let mut rest = text;
    while let Some(line_end) = rest.find('\n').or((!rest.is_empty()).then_some(rest.len())) {
        let line = rest[..line_end].trim_end_matches('\r');
        let Some(body) = line.strip_prefix('#') else {
            break;
        };
        if let Some((k, v)) = body.trim_start().split_once('=') {
            meta.insert(k.trim().to_string(), v.to_string());
        }
        rest = &rest[(line_end + 1).min(rest.len())..];
    }
    (meta, rest)
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

pub fn csv_reader(body: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes())
}

/// Shortest decimal that round-trips to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}
