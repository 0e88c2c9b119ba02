//! CSV emission with provenance comments.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Version of the column layouts below.
pub const SCHEMA_VERSION: u32 = 1;

pub struct Table {
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &'static [&'static str]) -> Self {
        Table {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Locale-independent, round-trippable number formatting.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest.iter() {
        write!(hex, "{b:02x}").expect("writing to a String");
    }
    hex
}

pub struct Provenance<'a> {
    pub command: &'a str,
    pub config_canonical: &'a str,
    pub seed: u64,
}

pub fn render(table: &Table, prov: &Provenance) -> String {
    let mut out = String::new();
    writeln!(out, "# tool fbl-relay {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(out, "# schema {} v{SCHEMA_VERSION}", prov.command).unwrap();
    writeln!(
        out,
        "# config_sha256 {}",
        config_hash(prov.config_canonical)
    )
    .unwrap();
    writeln!(out, "# seed {}", prov.seed).unwrap();
    writeln!(out, "{}", table.header.join(",")).unwrap();
    for row in &table.rows {
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    out
}

/// Writes to `path`, or standard output when absent.
pub fn emit(text: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}
