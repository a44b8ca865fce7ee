//! Plain-text dump of a [`SymBtd`] for offline inspection.
//!
//! ```text
//! %%SymBTD
//! <n_blocks> <b>
//! % diag 0
//! <b rows of b values>
//! ...
//! % upper 0
//! <b rows of b values>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use super::SymBtd;
use crate::error::{Error, Result};

pub fn write_dump(m: &SymBtd, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    let b = m.block_dim();
    writeln!(out, "%%SymBTD").unwrap();
    writeln!(out, "{} {}", m.n_blocks(), b).unwrap();
    let bands = [("diag", m.diag()), ("upper", m.upper())];
    for (label, blocks) in bands {
        for (i, blk) in blocks.iter().enumerate() {
            writeln!(out, "% {label} {i}").unwrap();
            for r in 0..b {
                let row: Vec<String> = (0..b).map(|c| format!("{:.17e}", blk[(r, c)])).collect();
                writeln!(out, "{}", row.join(" ")).unwrap();
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<SymBtd> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('%'));
    let header = lines.next().ok_or_else(|| Error::Parse("missing header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header `{header}`"))))
        .collect::<Result<_>>()?;
    let [n, b] = dims[..] else {
        return Err(Error::Parse(format!("bad header `{header}`")));
    };
    if n == 0 || b == 0 {
        return Err(Error::Parse("empty dimensions".into()));
    }
    let mut read_block = || -> Result<DMatrix<f64>> {
        let mut vals = Vec::with_capacity(b * b);
        for _ in 0..b {
            let line = lines.next().ok_or_else(|| Error::Parse("truncated block".into()))?;
            for tok in line.split_whitespace() {
                vals.push(tok.parse::<f64>().map_err(|_| Error::Parse(format!("bad value `{tok}`")))?);
            }
        }
        if vals.len() != b * b {
            return Err(Error::Parse("wrong block width".into()));
        }
        Ok(DMatrix::from_row_slice(b, b, &vals))
    };
    let diag = (0..n).map(|_| read_block()).collect::<Result<Vec<_>>>()?;
    let upper = (0..n - 1).map(|_| read_block()).collect::<Result<Vec<_>>>()?;
    SymBtd::new(diag, upper)
}
