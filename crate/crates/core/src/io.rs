//! Matrix files, sidecar headers, CSV and PGM export.
//!
//! Binary layout: 16 bytes of magic (`WAVEROM-MAT0` padded with NUL), then
//! `rows`, `cols`, `block_size` as little-endian `u64`, then the values in
//! row-major order as little-endian `f64`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

pub const MAGIC: [u8; 16] = *b"WAVEROM-MAT0\0\0\0\0";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("implausible matrix shape {rows}x{cols} (block size {block_size})")]
    BadShape {
        rows: u64,
        cols: u64,
        block_size: u64,
    },
    #[error("header: {0}")]
    Header(String),
}

pub fn write_matrix<W: Write>(mut w: W, m: &DMatrix<f64>, block_size: usize) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    for v in [m.nrows() as u64, m.ncols() as u64, block_size as u64] {
        w.write_all(&v.to_le_bytes())?;
    }
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    w.flush()
}

/// Returns the matrix and its stored block size.
pub fn read_matrix<R: Read>(mut r: R) -> Result<(DMatrix<f64>, usize), FormatError> {
    let mut magic = [0u8; 16];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let mut word = [0u8; 8];
    let mut dims = [0u64; 3];
    for d in dims.iter_mut() {
        r.read_exact(&mut word)?;
        *d = u64::from_le_bytes(word);
    }
    let [rows, cols, block_size] = dims;
    let count = rows.checked_mul(cols).filter(|&n| n < (1 << 32));
    let Some(count) = count else {
        return Err(FormatError::BadShape {
            rows,
            cols,
            block_size,
        });
    };
    let mut values = Vec::with_capacity(count as usize);
    for _ in 0..count {
        r.read_exact(&mut word)?;
        values.push(f64::from_le_bytes(word));
    }
    let m = DMatrix::from_row_slice(rows as usize, cols as usize, &values);
    Ok((m, block_size as usize))
}

pub fn save_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>, block_size: usize) -> std::io::Result<()> {
    write_matrix(BufWriter::new(File::create(path)?), m, block_size)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<(DMatrix<f64>, usize), FormatError> {
    read_matrix(BufReader::new(File::open(path)?))
}

pub fn write_csv<W: Write>(mut w: W, m: &DMatrix<f64>) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

/// `key = value` lines, sorted by key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    entries: BTreeMap<String, String>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T, FormatError> {
        let raw = self
            .get(key)
            .ok_or_else(|| FormatError::Header(format!("missing key `{key}`")))?;
        raw.parse()
            .map_err(|_| FormatError::Header(format!("bad value `{raw}` for `{key}`")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, FormatError> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| FormatError::Header(format!("line {}: expected `key = value`", n + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Header { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// 8-bit binary PGM of a `width × height` field stored row by row
/// (`values[x + width*y]`, first row on top). Min-max scaled; the range is
/// returned so it can be recorded next to the image.
pub fn write_pgm<W: Write>(mut w: W, values: &[f64], width: usize, height: usize) -> std::io::Result<(f64, f64)> {
    assert_eq!(values.len(), width * height, "pgm size");
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    write!(w, "P5\n{width} {height}\n255\n")?;
    let span = hi - lo;
    let bytes: Vec<u8> = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok((lo, hi))
}

pub fn save_pgm(path: impl AsRef<Path>, values: &[f64], width: usize, height: usize) -> std::io::Result<(f64, f64)> {
    write_pgm(BufWriter::new(File::create(path)?), values, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 0.1) * (j as f64 - 1.7) / 3.0);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m, 2).unwrap();
        assert_eq!(buf.len(), 16 + 24 + 12 * 8);
        assert_eq!(&buf[..12], b"WAVEROM-MAT0");
        // row-major: second value is entry (0, 1)
        assert_eq!(&buf[48..56], &m[(0, 1)].to_le_bytes());
        let (back, bs) = read_matrix(buf.as_slice()).unwrap();
        assert_eq!(bs, 2);
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut buf = vec![0u8; 64];
        buf[..4].copy_from_slice(b"NOPE");
        assert!(matches!(read_matrix(buf.as_slice()), Err(FormatError::BadMagic)));
    }

    #[test]
    fn truncated_file_is_io_error() {
        let mut buf = Vec::new();
        write_matrix(&mut buf, &DMatrix::<f64>::identity(3, 3), 1).unwrap();
        buf.truncate(50);
        assert!(matches!(read_matrix(buf.as_slice()), Err(FormatError::Io(_))));
    }

    #[test]
    fn header_round_trip() {
        let mut h = Header::new();
        h.set("nx", 12).set("hx", 0.25).set("units", "km");
        let back = Header::from_text(&h.to_text()).unwrap();
        assert_eq!(back, h);
        assert_eq!(back.parse_value::<usize>("nx").unwrap(), 12);
        assert!(back.parse_value::<usize>("units").is_err());
        assert!(back.parse_value::<f64>("missing").is_err());
    }

    #[test]
    fn pgm_scaling() {
        let mut buf = Vec::new();
        let range = write_pgm(&mut buf, &[0.0, 0.5, 1.0, 2.0], 2, 2).unwrap();
        assert_eq!(range, (0.0, 2.0));
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(&buf[header.len()..], &[0, 64, 128, 255]);
    }

    #[test]
    fn csv_lines() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "1e0,2e0\n3e0,4e0\n");
    }
}
