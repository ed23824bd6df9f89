//! Plain-text matrix files.
//!
//! ```text
//! klap-kernel v1 <rows> <cols>
//! <row 0: cols space-separated decimals>
//! ...
//! ```
//!
//! Kernels are written `|Y| × |X|` under the tag `klap-kernel`, couplings
//! `|X| × |Y|` under `klap-coupling`. Values carry 17 significant digits so
//! every `f64` survives a round trip exactly.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::CorruptionKernel;

pub const KERNEL_TAG: &str = "klap-kernel";
pub const COUPLING_TAG: &str = "klap-coupling";
const VERSION: &str = "v1";

/// Formats a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn write_matrix(tag: &str, matrix: &DMatrix<f64>) -> String {
    let mut out = format!("{tag} {VERSION} {} {}\n", matrix.nrows(), matrix.ncols());
    for row in matrix.row_iter() {
        let line: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn read_matrix(tag: &str, text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty input".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let bad_header = || Error::Parse {
        line: 1,
        message: format!("expected header `{tag} {VERSION} <rows> <cols>`, found `{header}`"),
    };
    if fields.len() != 4 || fields[0] != tag || fields[1] != VERSION {
        return Err(bad_header());
    }
    let rows: usize = fields[2].parse().map_err(|_| bad_header())?;
    let cols: usize = fields[3].parse().map_err(|_| bad_header())?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if seen == rows {
            return Err(Error::Parse {
                line: lineno,
                message: format!("more than the declared {rows} rows"),
            });
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("`{tok}` is not a number"),
            })?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {cols} values, found {}", data.len() - before),
            });
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("expected {rows} rows, found {seen}"),
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn write_kernel(kernel: &CorruptionKernel) -> String {
    write_matrix(KERNEL_TAG, kernel.matrix())
}

pub fn read_kernel(text: &str) -> Result<CorruptionKernel> {
    CorruptionKernel::from_matrix(read_matrix(KERNEL_TAG, text)?, "file")
}
