//! Matrix file formats.
//!
//! Binary: magic `TQR1`, rows and cols as 64-bit little-endian unsigned
//! integers, then rows*cols IEEE-754 doubles little-endian, column-major.
//! CSV: one matrix row per line, comma-separated decimal values (written
//! with Rust's shortest round-trip formatting).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TQR1";

pub fn write_matrix_binary<W: Write>(mut out: W, m: &DenseMatrix) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(m.rows() as u64).to_le_bytes())?;
    out.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix_binary<R: Read>(mut input: R) -> Result<DenseMatrix> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::MalformedFile("file shorter than the header".into()))?;
    if &magic != MAGIC {
        return Err(Error::MalformedFile(
            "bad magic bytes, expected TQR1".into(),
        ));
    }
    let mut word = [0u8; 8];
    input
        .read_exact(&mut word)
        .map_err(|_| Error::MalformedFile("truncated row count".into()))?;
    let rows = u64::from_le_bytes(word) as usize;
    input
        .read_exact(&mut word)
        .map_err(|_| Error::MalformedFile("truncated column count".into()))?;
    let cols = u64::from_le_bytes(word) as usize;
    if rows == 0 || cols == 0 || rows.checked_mul(cols).is_none_or(|n| n > (1 << 34)) {
        return Err(Error::MalformedFile(format!(
            "implausible dimensions {rows}x{cols}"
        )));
    }
    let mut data = vec![0.0f64; rows * cols];
    for v in data.iter_mut() {
        input
            .read_exact(&mut word)
            .map_err(|_| Error::MalformedFile("truncated value data".into()))?;
        *v = f64::from_le_bytes(word);
    }
    DenseMatrix::new(rows, cols, data)
}

pub fn write_matrix_csv<W: Write>(mut out: W, m: &DenseMatrix) -> Result<()> {
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            if c > 0 {
                out.write_all(b",")?;
            }
            write!(out, "{}", m.get(r, c))?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_matrix_csv<R: Read>(mut input: R) -> Result<DenseMatrix> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|_| Error::MalformedFile("not valid text".into()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::MalformedFile(format!("line {}: bad value '{f}'", ln + 1)))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::MalformedFile(format!(
                    "line {}: expected {} fields, found {}",
                    ln + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::MalformedFile("no rows".into()));
    }
    let (m, n) = (rows.len(), rows[0].len());
    Ok(DenseMatrix::from_fn(m, n, |r, c| rows[r][c]))
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Writes in the format implied by the extension: `.csv` is CSV, anything
/// else the binary format.
pub fn write_matrix_path(path: &Path, m: &DenseMatrix) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    if is_csv(path) {
        write_matrix_csv(out, m)
    } else {
        write_matrix_binary(out, m)
    }
}

pub fn read_matrix_path(path: &Path) -> Result<DenseMatrix> {
    let input = BufReader::new(File::open(path)?);
    if is_csv(path) {
        read_matrix_csv(input)
    } else {
        read_matrix_binary(input)
    }
}
