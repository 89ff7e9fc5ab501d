//! Matrix file ingestion shared by the moments diagnostics and the ERM
//! simulations.
//!
//! Two on-disk formats, auto-detected on read:
//! - CSV, optional header row, rows are samples;
//! - raw binary: 4-byte magic `GUMM`, little-endian u32 row count, u32
//!   column count, then row-major little-endian f64 values.

use nalgebra::DMatrix;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const GUMM_MAGIC: [u8; 4] = *b"GUMM";

#[derive(Debug, Error)]
pub enum GulIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: truncated binary matrix at byte offset {offset}")]
    Truncated { path: String, offset: usize },
    #[error("{path}: empty matrix")]
    Empty { path: String },
}

fn io_err(path: &Path, source: std::io::Error) -> GulIoError {
    GulIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a matrix exactly as stored (rows x cols). Binary files are
/// recognized by the `GUMM` magic; anything else parses as CSV.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, GulIoError> {
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut magic = [0u8; 4];
    let got = read_up_to(&mut file, &mut magic).map_err(|e| io_err(path, e))?;
    if got == 4 && magic == GUMM_MAGIC {
        read_binary_body(path, file)
    } else {
        drop(file);
        read_csv(path)
    }
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

fn read_binary_body(path: &Path, file: File) -> Result<DMatrix<f64>, GulIoError> {
    let mut reader = BufReader::new(file);
    let mut header = [0u8; 8];
    let got = read_up_to(&mut reader, &mut header).map_err(|e| io_err(path, e))?;
    if got < 8 {
        return Err(GulIoError::Truncated {
            path: path.display().to_string(),
            offset: 4 + got,
        });
    }
    let rows = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(GulIoError::Empty {
            path: path.display().to_string(),
        });
    }
    let mut data = vec![0.0f64; rows * cols];
    let mut buf = [0u8; 8];
    for (idx, slot) in data.iter_mut().enumerate() {
        let got = read_up_to(&mut reader, &mut buf).map_err(|e| io_err(path, e))?;
        if got < 8 {
            return Err(GulIoError::Truncated {
                path: path.display().to_string(),
                offset: 12 + idx * 8 + got,
            });
        }
        *slot = f64::from_le_bytes(buf);
    }
    // Stored row-major; DMatrix::from_row_slice takes the same layout.
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn read_csv(path: &Path) -> Result<DMatrix<f64>, GulIoError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(vals) => {
                if let Some(w) = width {
                    if vals.len() != w {
                        return Err(GulIoError::Parse {
                            path: path.display().to_string(),
                            line: lineno + 1,
                            msg: format!("expected {w} columns, got {}", vals.len()),
                        });
                    }
                } else {
                    width = Some(vals.len());
                }
                rows.push(vals);
            }
            Err(e) => {
                // A non-numeric first row is a header; anywhere else it is
                // a parse error.
                if rows.is_empty() && width.is_none() {
                    continue;
                }
                return Err(GulIoError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: e.to_string(),
                });
            }
        }
    }
    let Some(w) = width else {
        return Err(GulIoError::Empty {
            path: path.display().to_string(),
        });
    };
    let n = rows.len();
    Ok(DMatrix::from_fn(n, w, |i, j| rows[i][j]))
}

/// Writes a matrix in the `GUMM` binary format (row-major f64).
pub fn write_matrix_gumm(path: &Path, mat: &DMatrix<f64>) -> Result<(), GulIoError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let put = |w: &mut BufWriter<File>, bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));
    put(&mut w, &GUMM_MAGIC)?;
    put(&mut w, &(mat.nrows() as u32).to_le_bytes())?;
    put(&mut w, &(mat.ncols() as u32).to_le_bytes())?;
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            put(&mut w, &mat[(i, j)].to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads class tags, one per line; blank lines are skipped.
pub fn read_labels(path: &Path) -> Result<Vec<String>, GulIoError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        let t = line.trim();
        if !t.is_empty() {
            out.push(t.to_string());
        }
    }
    Ok(out)
}

/// A stored matrix whose rows are samples, as a design matrix with samples
/// in columns.
pub fn stored_to_design(stored: &DMatrix<f64>) -> DMatrix<f64> {
    stored.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn binary_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.gumm");
        let mat = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 3.25, 0.0, 1e-300, f64::MAX]);
        write_matrix_gumm(&path, &mat).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(mat, back);
    }

    #[test]
    fn csv_with_and_without_header() {
        let dir = tempdir().unwrap();
        let with = dir.path().join("h.csv");
        std::fs::write(&with, "a,b\n1.0,2.0\n3.0,4.0\n").unwrap();
        let m = read_matrix(&with).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));

        let without = dir.path().join("n.csv");
        std::fs::write(&without, "1.0, 2.0\n3.0,4.0\n\n").unwrap();
        let m = read_matrix(&without).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "1.0,2.0\n3.0,oops\n").unwrap();
        match read_matrix(&bad) {
            Err(GulIoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let ragged = dir.path().join("ragged.csv");
        std::fs::write(&ragged, "1.0,2.0\n3.0\n").unwrap();
        assert!(matches!(read_matrix(&ragged), Err(GulIoError::Parse { line: 2, .. })));
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.gumm");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&GUMM_MAGIC);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_matrix(&path), Err(GulIoError::Truncated { .. })));
    }

    #[test]
    fn labels_reader() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        std::fs::write(&path, "cat\n\ndog\ncat\n").unwrap();
        assert_eq!(read_labels(&path).unwrap(), vec!["cat", "dog", "cat"]);
    }
}
