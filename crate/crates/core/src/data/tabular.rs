use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{config, Error, ParseError, Result};

use super::LabeledDataset;

/// How to read a delimited feature table.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularOptions {
    pub delimiter: u8,
    /// Column holding the label when labels live in the feature file.
    pub label_column: Option<usize>,
    pub has_header: bool,
    /// Subtracted from every label, e.g. 1 for one-based class ids.
    pub label_offset: usize,
}

impl Default for TabularOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            label_column: None,
            has_header: false,
            label_offset: 0,
        }
    }
}

fn read_rows(path: &Path, opts: &TabularOptions) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingData {
            path: path.to_path_buf(),
            hint: "Provide a precomputed feature table (one example per row).".into(),
        },
        _ => Error::Io(e),
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| config(format!("{}: {e}", path.display())))?;
        // Whitespace-delimited files may carry runs of separators.
        let cells: Vec<String> = record
            .iter()
            .filter(|c| !(opts.delimiter == b' ' && c.is_empty()))
            .map(str::to_string)
            .collect();
        if !cells.is_empty() {
            rows.push(cells);
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            kind: ParseError::Empty,
        });
    }
    Ok(rows)
}

fn parse_label(cell: &str, row: usize, offset: usize) -> Result<usize, ParseError> {
    let bad = || ParseError::BadLabel {
        row,
        cell: cell.to_string(),
    };
    let v: f64 = cell.parse().map_err(|_| bad())?;
    if v.fract() != 0.0 || v < offset as f64 {
        return Err(bad());
    }
    Ok(v as usize - offset)
}

/// Loads numeric features (and labels, either from a column of the same
/// file or from a separate one-per-line file). Values are returned raw;
/// standardisation is part of preprocessing so it can be fit on the
/// training split only.
pub fn load_tabular(features: &Path, labels: Option<&Path>, opts: &TabularOptions) -> Result<LabeledDataset> {
    let wrap = |path: &Path, kind| Error::Parse {
        path: path.to_path_buf(),
        kind,
    };
    let rows = read_rows(features, opts)?;
    let width = rows[0].len();
    let mut data = Vec::with_capacity(rows.len() * width);
    let mut y = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(wrap(
                features,
                ParseError::Ragged {
                    row: r,
                    expected: width,
                    found: row.len(),
                },
            ));
        }
        for (c, cell) in row.iter().enumerate() {
            if Some(c) == opts.label_column {
                y.push(parse_label(cell, r, opts.label_offset).map_err(|k| wrap(features, k))?);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                wrap(
                    features,
                    ParseError::NotNumeric {
                        row: r,
                        col: c,
                        cell: cell.clone(),
                    },
                )
            })?;
            if !v.is_finite() {
                return Err(wrap(
                    features,
                    ParseError::NotNumeric {
                        row: r,
                        col: c,
                        cell: cell.clone(),
                    },
                ));
            }
            data.push(v);
        }
    }
    let d = width - usize::from(opts.label_column.is_some_and(|c| c < width));
    if opts.label_column.is_some_and(|c| c >= width) {
        return Err(config(format!("label column {} out of range for {width} columns", opts.label_column.unwrap())));
    }

    match (labels, opts.label_column) {
        (Some(_), Some(_)) => return Err(config("labels given both as a column and as a file")),
        (None, None) => return Err(config("no label source: set a label column or a label file")),
        (Some(path), None) => {
            let label_opts = TabularOptions {
                label_column: None,
                has_header: false,
                ..opts.clone()
            };
            for (r, row) in read_rows(path, &label_opts)?.iter().enumerate() {
                if row.len() != 1 {
                    return Err(wrap(
                        path,
                        ParseError::Ragged {
                            row: r,
                            expected: 1,
                            found: row.len(),
                        },
                    ));
                }
                y.push(parse_label(&row[0], r, opts.label_offset).map_err(|k| wrap(path, k))?);
            }
            if y.len() != rows.len() {
                return Err(wrap(
                    path,
                    ParseError::CountMismatch {
                        images: rows.len(),
                        labels: y.len(),
                    },
                ));
            }
        }
        (None, Some(_)) => {}
    }

    let n_gt = y.iter().max().map_or(0, |m| m + 1);
    let name = features
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(name, Tensor::matrix(rows.len(), d, data)?, y, n_gt)
}
