//! Dataset reading and writing.
//!
//! Tables are delimiter-separated text. A cell is missing when it is
//! empty or equals the missing-value token. Numbers are written with 17
//! significant digits so that a read/write round trip is lossless.

use crate::error::{CliError, Result};
use mipca::IncompleteMatrix;
use nalgebra::DMatrix;
use std::fs;
use std::path::Path;

/// Parsing and formatting settings shared by readers and writers.
#[derive(Debug, Clone)]
pub struct TableOptions {
    /// Field separator.
    pub delimiter: char,
    /// Token that marks a missing cell (empty fields also count).
    pub na_token: String,
    /// Whether the first row holds column names.
    pub header: bool,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            delimiter: ',',
            na_token: "NA".to_string(),
            header: false,
        }
    }
}

/// A parsed dataset: the matrix plus the optional header row.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// The data, with missing cells masked.
    pub matrix: IncompleteMatrix,
    /// Column names when the file had a header row.
    pub columns: Option<Vec<String>>,
}

/// Reads a delimiter-separated dataset from `path`.
///
/// Every cell must be empty, the missing token, or a finite number;
/// anything else is a parse error citing the 1-based data row and
/// column. All rows must have the same number of fields.
pub fn read_dataset(path: &Path, opts: &TableOptions) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter as u8)
        .has_headers(opts.header)
        .flexible(true)
        .from_reader(text.as_bytes());

    let columns = if opts.header {
        let headers = reader.headers().map_err(|_| CliError::Ragged {
            path: path.to_path_buf(),
            row: 0,
            expected: 0,
            found: 0,
        })?;
        Some(headers.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(source),
        })?;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(CliError::Ragged {
                path: path.to_path_buf(),
                row,
                expected,
                found: record.len(),
            });
        }
        let mut values = Vec::with_capacity(expected);
        for (col, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() || field == opts.na_token {
                values.push(f64::NAN);
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(CliError::Parse {
                        path: path.to_path_buf(),
                        row,
                        col: col + 1,
                        token: field.to_string(),
                    });
                }
            }
        }
        rows.push(values);
    }

    let n = rows.len();
    let p = width.unwrap_or(0);
    if n == 0 || p == 0 {
        return Err(CliError::Data {
            path: path.to_path_buf(),
            source: mipca::Error::config("dataset is empty"),
        });
    }
    let values = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let matrix = IncompleteMatrix::from_nan_coded(values).map_err(|source| CliError::Data {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Dataset { matrix, columns })
}

/// Formats one value with 17 significant digits (`NaN` becomes the
/// missing token).
pub fn format_value(v: f64, na_token: &str) -> String {
    if v.is_nan() {
        na_token.to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Quotes a text field when it contains the delimiter (for example the
/// quantity label `corr:5,6` in a comma-separated table) or a quote.
pub fn format_field(field: &str, delimiter: char) -> String {
    if field.contains(delimiter) || field.contains('"') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Writes a matrix as delimiter-separated text with the same settings
/// used for reading. `NaN` cells are written as the missing token.
pub fn write_matrix(
    path: &Path,
    values: &DMatrix<f64>,
    columns: Option<&[String]>,
    opts: &TableOptions,
) -> Result<()> {
    let d = opts.delimiter;
    let mut out = String::new();
    if let Some(names) = columns {
        let quoted: Vec<String> = names.iter().map(|n| format_field(n, d)).collect();
        out.push_str(&quoted.join(&d.to_string()));
        out.push('\n');
    }
    for i in 0..values.nrows() {
        for j in 0..values.ncols() {
            if j > 0 {
                out.push(d);
            }
            out.push_str(&format_value(values[(i, j)], &opts.na_token));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes already-rendered delimiter-separated text.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_missing_tokens_and_empty_fields() {
        let f = write_temp("1,NA\n2,3\n4,\n");
        let ds = read_dataset(f.path(), &TableOptions::default()).unwrap();
        assert_eq!(ds.matrix.nrows(), 3);
        assert_eq!(ds.matrix.ncols(), 2);
        assert!(!ds.matrix.is_observed(0, 1));
        assert!(!ds.matrix.is_observed(2, 1));
        assert_eq!(ds.matrix.values()[(1, 1)], 3.0);
        assert!(ds.columns.is_none());
    }

    #[test]
    fn label_fields_with_delimiters_are_quoted() {
        assert_eq!(format_field("mean:1", ','), "mean:1");
        assert_eq!(format_field("corr:5,6", ','), "\"corr:5,6\"");
        assert_eq!(format_field("corr:5,6", ';'), "corr:5,6");
        assert_eq!(format_field("a\"b", ','), "\"a\"\"b\"");
    }

    #[test]
    fn bad_tokens_are_located() {
        let f = write_temp("1,2\n3,abc\n");
        let err = read_dataset(f.path(), &TableOptions::default()).unwrap_err();
        match err {
            CliError::Parse { row, col, token, .. } => {
                assert_eq!((row, col), (2, 2));
                assert_eq!(token, "abc");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let f = write_temp("1,2\n3\n");
        let err = read_dataset(f.path(), &TableOptions::default()).unwrap_err();
        match err {
            CliError::Ragged { row, expected, found, .. } => {
                assert_eq!((row, expected, found), (2, 2, 1));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn headers_and_custom_tokens_round_trip() {
        let opts = TableOptions {
            delimiter: ';',
            na_token: "?".to_string(),
            header: true,
        };
        let f = write_temp("a;b\n1;?\n0.25;-3\n");
        let ds = read_dataset(f.path(), &opts).unwrap();
        assert_eq!(ds.columns.as_deref().unwrap(), ["a", "b"]);
        assert!(!ds.matrix.is_observed(0, 1));

        let out = tempfile::NamedTempFile::new().unwrap();
        write_matrix(
            out.path(),
            ds.matrix.values(),
            ds.columns.as_deref(),
            &opts,
        )
        .unwrap();
        let back = read_dataset(out.path(), &opts).unwrap();
        assert_eq!(back.columns, ds.columns);
        assert_eq!(back.matrix.mask(), ds.matrix.mask());
        for (a, b) in back
            .matrix
            .values()
            .iter()
            .zip(ds.matrix.values().iter())
        {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn formatting_is_lossless() {
        for v in [0.1, 1.0 / 3.0, -2.5e-17, 1.23456789012345e10] {
            let s = format_value(v, "NA");
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(format_value(f64::NAN, "NA"), "NA");
    }
}
