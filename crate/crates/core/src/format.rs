//! Line-oriented text formats.
//!
//! Sparse matrices:
//!
//! ```text
//! XMRSPARSE v1 <rows> <cols> <nnz>
//! <nnz_line> <idx>:<val> <idx>:<val> ...
//! ```
//!
//! with one line per row for CSR files (queries) and one line per column
//! for CSC files (layer weights). Indices are zero-based and ascending;
//! values use the shortest decimal that parses back to the same `f32`.
//!
//! Chunk boundaries: `XMRCHUNKS v1 <num_chunks>` followed by the
//! `num_chunks + 1` column offsets, one per line.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::sparse::{CscMatrix, CsrMatrix};

pub const SPARSE_MAGIC: &str = "XMRSPARSE";
pub const CHUNKS_MAGIC: &str = "XMRCHUNKS";
pub const VERSION: &str = "v1";

fn write_lines<W: Write>(
    out: &mut W,
    rows: usize,
    cols: usize,
    offsets: &[usize],
    indices: &[u32],
    values: &[f32],
) -> Result<()> {
    writeln!(
        out,
        "{SPARSE_MAGIC} {VERSION} {rows} {cols} {}",
        values.len()
    )?;
    let mut line = String::new();
    for w in offsets.windows(2) {
        use std::fmt::Write as _;
        line.clear();
        let _ = write!(line, "{}", w[1] - w[0]);
        for p in w[0]..w[1] {
            let _ = write!(line, " {}:{}", indices[p], values[p]);
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_csr<W: Write>(m: &CsrMatrix, out: &mut W) -> Result<()> {
    write_lines(
        out,
        m.rows(),
        m.cols(),
        m.row_offsets(),
        m.col_indices(),
        m.values(),
    )
}

pub fn write_csc<W: Write>(m: &CscMatrix, out: &mut W) -> Result<()> {
    write_lines(
        out,
        m.rows(),
        m.cols(),
        m.col_offsets(),
        m.row_indices(),
        m.values(),
    )
}

struct Parsed {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f32>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_usize(tok: Option<&str>, line: usize, what: &str) -> Result<usize> {
    tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| parse_err(line, format!("invalid {what}")))
}

/// Parses a sparse file; `by_column` selects the CSC reading of the lines.
fn read_lines<R: BufRead>(input: R, by_column: bool) -> Result<Parsed> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Shape("empty sparse file".into()))??;
    let mut tok = header.split_whitespace();
    if tok.next() != Some(SPARSE_MAGIC) {
        return Err(parse_err(1, format!("expected {SPARSE_MAGIC} header")));
    }
    match tok.next() {
        Some(VERSION) => {}
        Some(v) => return Err(Error::Version(format!("{SPARSE_MAGIC} {v}"))),
        None => return Err(parse_err(1, "missing version")),
    }
    let rows = parse_usize(tok.next(), 1, "row count")?;
    let cols = parse_usize(tok.next(), 1, "column count")?;
    let nnz = parse_usize(tok.next(), 1, "nnz")?;
    if tok.next().is_some() {
        return Err(parse_err(1, "trailing header tokens"));
    }
    let (major, bound) = if by_column {
        (cols, rows)
    } else {
        (rows, cols)
    };

    let mut offsets = Vec::with_capacity(major + 1);
    offsets.push(0);
    let mut indices = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    for i in 0..major {
        let lineno = i + 2;
        let line = match lines.next() {
            Some(l) => l?,
            None => {
                return Err(Error::Shape(format!(
                    "truncated: expected {major} lines, found {i}"
                )))
            }
        };
        let mut tok = line.split_whitespace();
        let count = parse_usize(tok.next(), lineno, "entry count")?;
        let start = indices.len();
        for t in tok.by_ref() {
            let (k, v) = t
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("malformed entry `{t}`")))?;
            let k: u32 = k
                .parse()
                .map_err(|_| parse_err(lineno, format!("invalid index `{k}`")))?;
            let v: f32 = v
                .parse()
                .map_err(|_| parse_err(lineno, format!("invalid value `{v}`")))?;
            if k as usize >= bound {
                return Err(parse_err(
                    lineno,
                    format!("index {k} out of range (bound {bound})"),
                ));
            }
            if indices.len() > start && *indices.last().unwrap() >= k {
                return Err(parse_err(lineno, "indices not strictly ascending"));
            }
            indices.push(k);
            values.push(v);
        }
        if indices.len() - start != count {
            return Err(Error::Shape(format!(
                "line {lineno}: declared {count} entries, found {}",
                indices.len() - start
            )));
        }
        offsets.push(indices.len());
    }
    for (extra, l) in lines.enumerate() {
        if !l?.trim().is_empty() {
            return Err(Error::Shape(format!(
                "unexpected content after {major} lines (line {})",
                major + 2 + extra
            )));
        }
    }
    if indices.len() != nnz {
        return Err(Error::Shape(format!(
            "header declares {nnz} entries, found {}",
            indices.len()
        )));
    }
    Ok(Parsed {
        rows,
        cols,
        offsets,
        indices,
        values,
    })
}

pub fn read_csr<R: BufRead>(input: R) -> Result<CsrMatrix> {
    let p = read_lines(input, false)?;
    CsrMatrix::new(p.rows, p.cols, p.offsets, p.indices, p.values)
}

pub fn read_csc<R: BufRead>(input: R) -> Result<CscMatrix> {
    let p = read_lines(input, true)?;
    CscMatrix::new(p.rows, p.cols, p.offsets, p.indices, p.values)
}

pub fn write_chunks<W: Write>(offsets: &[usize], out: &mut W) -> Result<()> {
    writeln!(
        out,
        "{CHUNKS_MAGIC} {VERSION} {}",
        offsets.len().saturating_sub(1)
    )?;
    for o in offsets {
        writeln!(out, "{o}")?;
    }
    Ok(())
}

pub fn read_chunks<R: BufRead>(input: R) -> Result<Vec<usize>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Shape("empty chunk file".into()))??;
    let mut tok = header.split_whitespace();
    if tok.next() != Some(CHUNKS_MAGIC) {
        return Err(parse_err(1, format!("expected {CHUNKS_MAGIC} header")));
    }
    match tok.next() {
        Some(VERSION) => {}
        Some(v) => return Err(Error::Version(format!("{CHUNKS_MAGIC} {v}"))),
        None => return Err(parse_err(1, "missing version")),
    }
    let count = parse_usize(tok.next(), 1, "chunk count")?;
    let mut offsets = Vec::with_capacity(count + 1);
    for (i, l) in lines.enumerate() {
        let l = l?;
        let t = l.trim();
        if t.is_empty() {
            continue;
        }
        offsets.push(parse_usize(Some(t), i + 2, "offset")?);
    }
    if offsets.len() != count + 1 {
        return Err(Error::Shape(format!(
            "expected {} chunk offsets, found {}",
            count + 1,
            offsets.len()
        )));
    }
    Ok(offsets)
}

/// Formats like C's `%.{sig}g`: `sig` significant digits, trailing zeros
/// removed, exponent form outside `1e-4 ≤ |x| < 10^sig`.
pub fn format_significant(x: f64, sig: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { format!("{x}") };
    }
    let sig = sig.max(1);
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= sig as i32 {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
