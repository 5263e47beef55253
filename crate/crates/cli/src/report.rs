//! Deterministic report bundles: every experiment writes CSV, JSON-lines,
//! and gnuplot-style `.dat` files into a directory keyed by the
//! subcommand and a hash of `(config bytes, master seed)`, so reruns with
//! identical inputs land on byte-identical files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::Result;

/// Twelve-hex-digit tag of `(config bytes, master seed)`.
pub fn config_tag(raw: &[u8], seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(raw);
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    let mut tag = String::with_capacity(12);
    for b in &digest[..6] {
        tag.push_str(&format!("{b:02x}"));
    }
    tag
}

/// Writes one experiment's files under `<root>/<name>-<tag>/`.
pub struct Reporter {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Reporter {
    /// Creates (or reuses) the bundle directory.
    pub fn create(root: &Path, name: &str, tag: &str) -> Result<Self> {
        let dir = root.join(format!("{name}-{tag}"));
        fs::create_dir_all(&dir)?;
        Ok(Reporter { dir, files: Vec::new() })
    }

    /// Bundle directory.
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Files written so far.
    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    /// Writes a file with exactly `contents`.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut f = fs::File::create(&path)?;
        f.write_all(contents.as_bytes())?;
        self.files.push(path.clone());
        Ok(path)
    }

    /// Writes a single JSON document (pretty, trailing newline).
    pub fn json(&mut self, name: &str, value: &Value) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)
            .expect("report values contain no non-string keys");
        text.push('\n');
        self.write(&format!("{name}.json"), &text)
    }
}

/// One cell of a report table.
pub type Cell = Value;

/// Formats a cell for CSV: strings raw (they never contain commas here),
/// everything else via its JSON rendering, which for floats is the
/// shortest round-trip decimal form.
fn csv_cell(v: &Cell) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Finite numbers become JSON numbers; NaN and infinities fall back to
/// strings, since JSON has no encoding for them.
pub fn num(v: f64) -> Cell {
    match serde_json::Number::from_f64(v) {
        Some(n) => Value::Number(n),
        None => Value::String(format!("{v}")),
    }
}

/// Columns `(x, y, yerr)` of a table to extract into a plot-data file.
#[derive(Clone, Copy, Debug)]
pub struct PlotCols {
    /// Abscissa column index.
    pub x: usize,
    /// Ordinate column index.
    pub y: usize,
    /// Error-bar column index, if any.
    pub yerr: Option<usize>,
}

/// Writes one table as `<name>.csv` and `<name>.jsonl`, plus `<name>.dat`
/// with `(x, y, yerr)` columns when `plot` is given. Returns the paths.
pub fn emit_report(
    rep: &mut Reporter,
    name: &str,
    columns: &[&str],
    rows: &[Vec<Cell>],
    plot: Option<PlotCols>,
) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    let mut csv = String::new();
    csv.push_str(&columns.join(","));
    csv.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        let line: Vec<String> = row.iter().map(csv_cell).collect();
        csv.push_str(&line.join(","));
        csv.push('\n');
    }
    paths.push(rep.write(&format!("{name}.csv"), &csv)?);

    let mut jsonl = String::new();
    for row in rows {
        let obj: serde_json::Map<String, Value> = columns
            .iter()
            .zip(row)
            .map(|(c, v)| (c.to_string(), v.clone()))
            .collect();
        jsonl.push_str(&Value::Object(obj).to_string());
        jsonl.push('\n');
    }
    paths.push(rep.write(&format!("{name}.jsonl"), &jsonl)?);

    if let Some(p) = plot {
        let mut dat = String::new();
        dat.push_str(&format!(
            "# {} {} {}\n",
            columns[p.x],
            columns[p.y],
            p.yerr.map(|e| columns[e]).unwrap_or("0")
        ));
        for row in rows {
            let err = p.yerr.map(|e| csv_cell(&row[e])).unwrap_or_else(|| "0".into());
            dat.push_str(&format!(
                "{} {} {err}\n",
                csv_cell(&row[p.x]),
                csv_cell(&row[p.y])
            ));
        }
        paths.push(rep.write(&format!("{name}.dat"), &dat)?);
    }
    Ok(paths)
}
