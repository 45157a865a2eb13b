//! Minimal CSV writing and reading for the artifact tables.

use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

pub struct Csv {
    buf: String,
    width: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            buf: header.join(",") + "\n",
            width: header.len(),
        }
    }

    /// Floats use `Display`, which round-trips exactly.
    pub fn row(&mut self, cells: &[&dyn std::fmt::Display]) {
        debug_assert_eq!(cells.len(), self.width);
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            write!(self.buf, "{c}").unwrap();
        }
        self.buf.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, &self.buf)?;
        Ok(())
    }
}

/// Numeric columns of a CSV written by [`Csv`], keyed by header name.
pub fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::MissingArtifact(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            header.iter().position(|h| h == n).ok_or_else(|| {
                CliError::MissingArtifact(format!("{} has no column {n}", path.display()))
            })
        })
        .collect::<Result<_, _>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for (ln, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        for (c, &i) in idx.iter().enumerate() {
            let v = cells
                .get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| {
                    CliError::MissingArtifact(format!(
                        "{} line {}: bad number",
                        path.display(),
                        ln + 2
                    ))
                })?;
            cols[c].push(v);
        }
    }
    Ok(cols)
}
