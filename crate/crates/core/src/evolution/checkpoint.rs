//! Versioned text container for density-matrix checkpoints.
//!
//! ```text
//! KLSIM1
//! n_sites 5
//! n_tot 2
//! t 12.5
//! dim 23
//! <re> <im>        one line per entry, row-major
//! ```

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fockspace::{enumerate_sector, SectorBasis};

use super::DensityMatrix;

pub const MAGIC: &str = "KLSIM1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub t: f64,
    pub state: DensityMatrix,
}

pub fn write_checkpoint<W: Write>(mut out: W, t: f64, rho: &DensityMatrix) -> std::io::Result<()> {
    let b = rho.basis();
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "n_sites {}", b.n_sites())?;
    writeln!(out, "n_tot {}", b.n_tot())?;
    writeln!(out, "t {t:?}")?;
    writeln!(out, "dim {}", b.dim())?;
    let m = rho.entries();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            writeln!(out, "{:?} {:?}", v.re, v.im)?;
        }
    }
    Ok(())
}

fn header<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    line.and_then(|l| l.strip_prefix(key))
        .and_then(|l| l.strip_prefix(' '))
        .ok_or_else(|| Error::Format(format!("expected `{key} <value>` header")))
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Format(format!("bad {what}: {s:?}")))
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Checkpoint> {
    let lines: Vec<String> = input
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut it = lines.iter().map(|s| s.as_str());
    if it.next() != Some(MAGIC) {
        return Err(Error::Format(format!("missing {MAGIC} magic header")));
    }
    let n_sites: usize = num(header(it.next(), "n_sites")?, "n_sites")?;
    let n_tot: usize = num(header(it.next(), "n_tot")?, "n_tot")?;
    let t: f64 = num(header(it.next(), "t")?, "time")?;
    let dim: usize = num(header(it.next(), "dim")?, "dim")?;
    let basis: Arc<SectorBasis> =
        Arc::new(enumerate_sector(n_sites, n_tot).map_err(|e| Error::Format(e.to_string()))?);
    if basis.dim() != dim {
        return Err(Error::Format(format!(
            "dim {dim} does not match the ({n_sites}, {n_tot}) sector of dimension {}",
            basis.dim()
        )));
    }
    let mut values = Vec::with_capacity(dim * dim);
    for line in it.by_ref().take(dim * dim) {
        let mut parts = line.split_whitespace();
        let (Some(re), Some(im), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format(format!("bad entry line {line:?}")));
        };
        values.push(C64::new(num(re, "real part")?, num(im, "imaginary part")?));
    }
    if values.len() != dim * dim || it.any(|l| !l.trim().is_empty()) {
        return Err(Error::Format(format!("expected exactly {} entries", dim * dim)));
    }
    let state = DensityMatrix::new(basis, DMatrix::from_row_slice(dim, dim, &values))?;
    Ok(Checkpoint { t, state })
}
