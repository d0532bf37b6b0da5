//! libfm sparse text format: `<label> <index>:<value> ...` with 0-based
//! feature indices.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub label: f64,
    /// Strictly increasing indices.
    pub features: Vec<(usize, f64)>,
}

impl SparseRow {
    /// Sorts features and rejects repeated indices.
    pub fn new(label: f64, mut features: Vec<(usize, f64)>) -> std::result::Result<Self, usize> {
        features.sort_by_key(|&(i, _)| i);
        if let Some(w) = features.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(w[0].0);
        }
        Ok(Self { label, features })
    }

    /// One past the largest index, 0 for an empty row.
    pub fn dimension(&self) -> usize {
        self.features.last().map_or(0, |&(i, _)| i + 1)
    }
}

fn number(token: &str, line: usize, what: &str) -> Result<f64> {
    token
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::parse(line, format!("non-numeric {what} `{token}`")))
}

pub fn parse_libfm(text: &str) -> Result<Vec<SparseRow>> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut tokens = line.split_whitespace();
        let Some(label) = tokens.next() else { continue };
        let label = number(label, line_no, "label")?;
        let mut features = Vec::new();
        for token in tokens {
            let (index, value) = token
                .split_once(':')
                .ok_or_else(|| Error::parse(line_no, format!("expected index:value, got `{token}`")))?;
            if index.starts_with('-') {
                return Err(Error::parse(line_no, format!("negative feature index `{index}`")));
            }
            let index: usize = index
                .parse()
                .map_err(|_| Error::parse(line_no, format!("non-numeric index `{index}`")))?;
            features.push((index, number(value, line_no, "value")?));
        }
        let row = SparseRow::new(label, features)
            .map_err(|dup| Error::parse(line_no, format!("duplicate feature index {dup}")))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_libfm(path: impl AsRef<Path>) -> Result<Vec<SparseRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_libfm(&text)
}
