//! Plain-text matrices: one row per line, entries separated by whitespace.
//! Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use stiep::kernel::Matrix;

pub fn parse_matrix(text: &str) -> Result<Matrix, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|e| format!("line {}: {tok:?}: {e}", lineno + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format!("line {}: expected {} entries, found {}", lineno + 1, first.len(), row.len()));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err("no matrix rows".into());
    }
    let (n, m) = (rows.len(), rows[0].len());
    if n != m {
        return Err(format!("matrix is {n}x{m}, expected square"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Matrix::from_row_slice(n, m, &flat))
}

pub fn read_matrix(path: &Path) -> Result<Matrix, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_matrix(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn format_matrix(a: &Matrix) -> String {
    let mut out = String::new();
    for row in a.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn write_matrix(path: &Path, a: &Matrix) -> Result<(), String> {
    fs::write(path, format_matrix(a)).map_err(|e| format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let a = Matrix::from_row_slice(2, 2, &[0.1, 0.9, 1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(parse_matrix(&format_matrix(&a)).unwrap(), a);
    }

    #[test]
    fn comments_and_blank_lines() {
        let a = parse_matrix("# header\n\n1 0\n  0   1\n").unwrap();
        assert_eq!(a, Matrix::identity(2, 2));
    }

    #[test]
    fn rejects_ragged_and_rectangular_input() {
        assert!(parse_matrix("1 0\n0\n").is_err());
        assert!(parse_matrix("1 0 0\n0 1 0\n").is_err());
        assert!(parse_matrix("1 x\n0 1\n").is_err());
        assert!(parse_matrix("").is_err());
    }
}
