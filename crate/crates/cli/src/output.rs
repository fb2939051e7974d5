//! CSV persistence. Every file starts with one comment line of
//! space-separated `key=value` metadata, the first being the configuration
//! fingerprint, followed by a header row.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use sormq::{Error, Result};

/// First 16 hex digits of the SHA-256 of the resolved configuration text and
/// the per-file qualifiers.
pub fn fingerprint(resolved: &str, qualifiers: &[(&str, String)]) -> String {
    let mut h = Sha256::new();
    h.update(resolved.as_bytes());
    for (k, v) in qualifiers {
        h.update(format!("\n{k}={v}").as_bytes());
    }
    let digest = h.finalize();
    let mut s = String::with_capacity(16);
    for b in &digest[..8] {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Shortest round-trip decimal form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteOutcome {
    Written,
    /// The file already carries this fingerprint and `force` was not given.
    Skipped,
}

/// Fingerprint recorded in an existing file, if any.
pub fn existing_fingerprint(path: &Path) -> Option<String> {
    let text = std::fs::read_to_string(path).ok()?;
    parse_meta(text.lines().next()?).remove("fingerprint")
}

fn parse_meta(line: &str) -> BTreeMap<String, String> {
    line.strip_prefix('#')
        .map(|rest| {
            rest.split_whitespace()
                .filter_map(|tok| tok.split_once('='))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect()
        })
        .unwrap_or_default()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(format!("{}: {e}", path.display())))
}

/// Writes `meta` as the comment line, then `header` and `rows`. An existing
/// file with the same fingerprint is left untouched unless `force`.
pub fn write_csv<I, R>(
    path: &Path,
    meta: &[(&str, String)],
    header: &[&str],
    rows: I,
    force: bool,
) -> Result<WriteOutcome>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let fp = meta
        .iter()
        .find(|(k, _)| *k == "fingerprint")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::Config("csv metadata needs a fingerprint".into()))?;
    if !force && existing_fingerprint(path).as_deref() == Some(fp.as_str()) {
        return Ok(WriteOutcome::Skipped);
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut buf = String::from("#");
    for (k, v) in meta {
        let _ = write!(buf, " {k}={v}");
    }
    buf.push('\n');
    let mut w = csv::WriterBuilder::new().from_writer(buf.into_bytes());
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row.into_iter()).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    std::fs::write(path, bytes)?;
    Ok(WriteOutcome::Written)
}

/// A parsed CSV file.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub path: PathBuf,
    pub meta: BTreeMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let (meta, body) = match text.split_once('\n') {
            Some((first, rest)) if first.starts_with('#') => (parse_meta(first), rest),
            _ => (BTreeMap::new(), text.as_str()),
        };
        let mut r = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let header = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .map_err(|e| csv_err(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            meta,
            header,
            rows,
        })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
            column: name.to_string(),
            path: self.path.clone(),
        })
    }

    /// A numeric column; unparsable cells become NaN.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        Ok(self
            .rows
            .iter()
            .map(|r| r.get(i).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN))
            .collect())
    }
}
