//! Minimal CSV reading/writing for the fixed schemas used here. Values
//! never contain separators, so no quoting is needed; parse errors carry
//! 1-based line numbers.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("missing CSV column '{name}'"))
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) if !line.trim().is_empty() => {
            line.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>()
        }
        _ => bail!("{}: line 1: missing CSV header", path.display()),
    };
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if fields.len() != header.len() {
            bail!(
                "{}: line {}: expected {} fields, found {}",
                path.display(),
                idx + 1,
                header.len(),
                fields.len()
            );
        }
        rows.push(fields);
    }
    Ok(CsvTable { header, rows })
}

/// Parses one field with file/line/column context in the error.
pub fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    column: &str,
    raw: &str,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| {
        anyhow::anyhow!(
            "{}: line {}: column '{}': cannot parse '{}' ({})",
            path.display(),
            line,
            column,
            raw,
            e
        )
    })
}
