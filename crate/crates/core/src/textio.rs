//! Plain-text dense matrix and vector files.
//!
//! A matrix file holds `n` on the first line followed by `n` lines of `n`
//! whitespace-separated decimals. A vector file holds `n` followed by `n`
//! decimals (one per line or whitespace-separated).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linops::{Matrix, Vector};

fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

fn header(it: &mut dyn Iterator<Item = &str>) -> Result<usize> {
    let first = it
        .next()
        .ok_or_else(|| Error::Parse("missing dimension header".into()))?;
    let n: usize = first
        .parse()
        .map_err(|_| Error::Parse(format!("bad dimension `{first}`")))?;
    if n == 0 {
        return Err(Error::Parse("dimension must be positive".into()));
    }
    Ok(n)
}

fn values(it: &mut dyn Iterator<Item = &str>, count: usize) -> Result<Vec<f64>> {
    let vals = it
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != count {
        return Err(Error::Parse(format!(
            "expected {count} values, found {}",
            vals.len()
        )));
    }
    Ok(vals)
}

pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut it = tokens(text);
    let n = header(&mut it)?;
    let vals = values(&mut it, n * n)?;
    Ok(Matrix::from_row_slice(n, n, &vals))
}

pub fn parse_vector(text: &str) -> Result<Vector> {
    let mut it = tokens(text);
    let n = header(&mut it)?;
    Ok(Vector::from_vec(values(&mut it, n)?))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    parse_matrix(&fs::read_to_string(path)?)
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<Vector> {
    parse_vector(&fs::read_to_string(path)?)
}

/// Shortest round-trip formatting, so written files reload bit-exactly.
pub fn format_matrix(m: &Matrix) -> String {
    let mut out = format!("{}\n", m.nrows());
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn format_vector(v: &Vector) -> String {
    let mut out = format!("{}\n", v.len());
    for x in v.iter() {
        let _ = writeln!(out, "{x:?}");
    }
    out
}
