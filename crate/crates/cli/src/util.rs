//! Shared I/O helpers: CSV readers/writers and store loading.

use concept_align_core::ccem::read_ccem;
use concept_align_core::error::{Error, Result};
use concept_align_core::manifest::{ImageStore, TextStore};
use concept_align_core::numerics::Vector;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Writes the primary tabular output to `--out` or stdout.
pub struct OutSink {
    target: Option<PathBuf>,
    buffer: Vec<u8>,
}

impl OutSink {
    pub fn new(target: Option<PathBuf>) -> Self {
        Self {
            target,
            buffer: Vec::new(),
        }
    }

    pub fn line(&mut self, line: &str) {
        self.buffer.extend_from_slice(line.as_bytes());
        self.buffer.push(b'\n');
    }

    pub fn finish(self) -> Result<()> {
        match self.target {
            Some(path) => std::fs::write(path, self.buffer)?,
            None => std::io::stdout().write_all(&self.buffer)?,
        }
        Ok(())
    }
}

pub fn load_image_store(path: &Path) -> Result<ImageStore> {
    ImageStore::from_records(&read_ccem(path)?)
}

pub fn load_text_store(path: &Path) -> Result<TextStore> {
    TextStore::from_records(&read_ccem(path)?)
}

/// Single-row records as id-ordered bare vectors.
pub fn load_vector_store(path: &Path) -> Result<Vec<(String, Vector)>> {
    read_ccem(path)?
        .iter()
        .map(|r| Ok((r.id.clone(), r.cls_vector()?)))
        .collect()
}

/// One float per line; multiple comma-separated columns allowed when
/// `multi` permits (all lines must agree on the column count).
pub fn read_float_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let content = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut cols = None;
    for (i, line) in content.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row: Vec<f64> = trimmed
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::MalformedLine {
                    line: i + 1,
                    msg: format!("not a number: {f:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(c) = cols {
            if row.len() != c {
                return Err(Error::MalformedLine {
                    line: i + 1,
                    msg: format!("expected {c} columns, found {}", row.len()),
                });
            }
        } else {
            cols = Some(row.len());
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_single_column(path: &Path) -> Result<Vec<f64>> {
    let rows = read_float_csv(path)?;
    if rows.iter().any(|r| r.len() != 1) {
        return Err(Error::MalformedLine {
            line: 0,
            msg: "expected a single column".into(),
        });
    }
    Ok(rows.into_iter().map(|r| r[0]).collect())
}

/// `id,label` rows with a header line.
pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, String)>> {
    let content = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if i == 0 {
            continue; // header
        }
        let (id, label) = trimmed.split_once(',').ok_or(Error::MalformedLine {
            line: i + 1,
            msg: "expected id,label".into(),
        })?;
        out.push((id.trim().to_string(), label.trim().to_string()));
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

pub fn fmt_float(v: f64) -> String {
    format!("{v}")
}
