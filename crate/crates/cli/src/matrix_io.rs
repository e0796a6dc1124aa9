//! Plain-text matrix files.
//!
//! ```text
//! 2 3
//! 1.0 0 -2.5
//! 0.5 1 1e-3
//! ```
//!
//! The first line holds the row and column counts; each of the following
//! `m` lines holds `n` whitespace-separated decimal reals. Trailing blank
//! lines are ignored. NaN and infinities are rejected.

use std::path::Path;

use bilip_core::Matrix;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct MatrixParseError {
    /// 1-based line number the problem was found on.
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> MatrixParseError {
    MatrixParseError { line, message: message.into() }
}

fn parse_count(tok: &str, what: &str) -> Result<usize, MatrixParseError> {
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(err(1, format!("malformed header: {what} must be a positive integer, got '{tok}'"))),
    }
}

pub fn parse_matrix(text: &str) -> Result<Matrix, MatrixParseError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file: expected header 'm n'"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 2 {
        return Err(err(1, format!("malformed header: expected 'm n', got '{}'", header.trim())));
    }
    let m = parse_count(toks[0], "m")?;
    let n = parse_count(toks[1], "n")?;

    let mut data = Vec::with_capacity(m * n);
    let mut rows = 0;
    let mut last_line = 1;
    for (ln, line) in lines {
        last_line = ln;
        if line.trim().is_empty() {
            continue;
        }
        if rows == m {
            return Err(err(ln, format!("expected {m} rows, found extra data")));
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != n {
            return Err(err(ln, format!("expected {n} values, found {}", vals.len())));
        }
        for (col, tok) in vals.iter().enumerate() {
            let v: f64 = tok
                .parse()
                .map_err(|_| err(ln, format!("column {}: invalid number '{tok}'", col + 1)))?;
            if !v.is_finite() {
                return Err(err(ln, format!("column {}: non-finite value '{tok}'", col + 1)));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows != m {
        return Err(err(last_line, format!("expected {m} rows, found {rows}")));
    }
    Matrix::new(m, n, data).map_err(|e| err(1, e.to_string()))
}

#[derive(Debug, Error)]
pub enum ReadMatrixError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: MatrixParseError },
}

pub fn read_matrix_file(path: &Path) -> Result<Matrix, ReadMatrixError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ReadMatrixError::Io { path: shown.clone(), source })?;
    parse_matrix(&text).map_err(|source| ReadMatrixError::Parse { path: shown, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_identity_and_row() {
        assert_eq!(parse_matrix("2 2\n1 0\n0 1\n").unwrap(), Matrix::identity(2));
        let r = parse_matrix("1 2\n1 0\n").unwrap();
        assert_eq!((r.rows(), r.cols()), (1, 2));
        assert_eq!(parse_matrix("1 1\n-2.5e-1\n\n\n").unwrap().get(0, 0), -0.25);
    }

    #[test]
    fn missing_row_names_count() {
        let e = parse_matrix("2 2\n1 0\n").unwrap_err();
        assert!(e.message.contains("expected 2 rows"), "{e}");
    }

    #[test]
    fn errors_name_lines() {
        assert_eq!(parse_matrix("2\n").unwrap_err().line, 1);
        assert_eq!(parse_matrix("x 2\n").unwrap_err().line, 1);
        assert_eq!(parse_matrix("0 2\n").unwrap_err().line, 1);
        assert_eq!(parse_matrix("").unwrap_err().line, 1);
        let e = parse_matrix("2 2\n1 0\n0 1 2\n").unwrap_err();
        assert_eq!((e.line, e.message.as_str()), (3, "expected 2 values, found 3"));
        let e = parse_matrix("1 2\n1 NaN\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("non-finite"));
        assert!(parse_matrix("1 1\ninf\n").unwrap_err().message.contains("non-finite"));
        assert!(parse_matrix("1 1\nabc\n").unwrap_err().message.contains("invalid number"));
        assert_eq!(parse_matrix("1 1\n1\n2\n").unwrap_err().line, 3);
    }
}
