//! MatrixMarket and PGM files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::io::{load_coo_from_matrix_market_file, save_to_matrix_market_file};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};

fn load_coo(path: &Path) -> Result<CooMatrix<f64>> {
    load_coo_from_matrix_market_file(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Reads a coordinate (or array) MatrixMarket file as CSR.
pub fn read_sparse(path: impl AsRef<Path>) -> Result<CsrMatrix<f64>> {
    Ok(CsrMatrix::from(&load_coo(path.as_ref())?))
}

pub fn write_sparse(path: impl AsRef<Path>, a: &CsrMatrix<f64>) -> Result<()> {
    Ok(save_to_matrix_market_file(a, path)?)
}

/// Reads an array (or coordinate) MatrixMarket file as a dense matrix.
pub fn read_dense(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let coo = load_coo(path.as_ref())?;
    let mut m = DMatrix::zeros(coo.nrows(), coo.ncols());
    for (i, j, &v) in coo.triplet_iter() {
        m[(i, j)] += v;
    }
    Ok(m)
}

/// Writes `m` in array format (column-major, full precision).
pub fn write_dense(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::with_capacity(24 * m.len() + 64);
    out.push_str("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for v in m.iter() {
        let _ = writeln!(out, "{v:e}");
    }
    Ok(fs::write(path, out)?)
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    let path = path.as_ref();
    let m = read_dense(path)?;
    if m.ncols() != 1 {
        return Err(Error::Parse(format!(
            "{}: expected a single column, found {}",
            path.display(),
            m.ncols()
        )));
    }
    Ok(m.column(0).into_owned())
}

pub fn write_vector(path: impl AsRef<Path>, v: &DVector<f64>) -> Result<()> {
    write_dense(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

/// Writes a 16-bit binary PGM, min–max scaled to `[0, 65535]`; rows of
/// `values` are image rows. Returns the `(min, max)` used for scaling.
pub fn write_pgm(path: impl AsRef<Path>, values: &DVector<f64>, width: usize, height: usize) -> Result<(f64, f64)> {
    crate::error::check_len("image", width * height, values.len())?;
    let (lo, hi) = (values.min(), values.max());
    let span = hi - lo;
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    bytes.reserve(2 * values.len());
    for &v in values.iter() {
        let level = if span > 0.0 && span.is_finite() {
            ((v - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        bytes.extend_from_slice(&level.to_be_bytes());
    }
    fs::write(path, bytes)?;
    Ok((lo, hi))
}

/// Reads a binary PGM (8- or 16-bit) as raw levels.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, u16, Vec<u16>)> {
    let path = path.as_ref();
    let data = fs::read(path)?;
    let bad = |msg: &str| Error::Parse(format!("{}: {msg}", path.display()));
    // Header: magic, width, height, maxval, separated by whitespace.
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(bad("bad maxval"));
    }
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let body = data.get(pos..).unwrap_or(&[]);
    if body.len() < w * h * bytes_per {
        return Err(bad("truncated pixel data"));
    }
    let pixels = (0..w * h)
        .map(|i| {
            if bytes_per == 2 {
                u16::from_be_bytes([body[2 * i], body[2 * i + 1]])
            } else {
                body[i] as u16
            }
        })
        .collect();
    Ok((w, h, maxval as u16, pixels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("mixkry-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn dense_round_trip_is_exact() {
        let m = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 0.1) / (j as f64 + 0.3) - 1e-17);
        let p = tmp("dense.mtx");
        write_dense(&p, &m).unwrap();
        assert_eq!(read_dense(&p).unwrap(), m);
        let v = DVector::from_vec(vec![1.0, -2.5e-300, std::f64::consts::PI]);
        write_vector(&p, &v).unwrap();
        assert_eq!(read_vector(&p).unwrap(), v);
        assert!(read_vector(tmp("missing.mtx")).is_err());
    }

    #[test]
    fn sparse_round_trip() {
        let mut coo = CooMatrix::new(3, 5);
        coo.push(0, 1, 0.25);
        coo.push(2, 4, -3.0);
        coo.push(1, 0, 1e-20);
        let a = CsrMatrix::from(&coo);
        let p = tmp("sparse.mtx");
        write_sparse(&p, &a).unwrap();
        assert_eq!(read_sparse(&p).unwrap(), a);
    }

    #[test]
    fn pgm_round_trip() {
        let v = DVector::from_vec(vec![0.0, 0.5, 1.0, 2.0, -1.0, 1.0]);
        let p = tmp("img.pgm");
        let (lo, hi) = write_pgm(&p, &v, 3, 2).unwrap();
        assert_eq!((lo, hi), (-1.0, 2.0));
        let (w, h, max, px) = read_pgm(&p).unwrap();
        assert_eq!((w, h, max), (3, 2, 65535));
        assert_eq!(px[4], 0);
        assert_eq!(px[3], 65535);
        assert_eq!(px[0], 21845);
        assert!(write_pgm(&p, &v, 4, 2).is_err());
    }
}
