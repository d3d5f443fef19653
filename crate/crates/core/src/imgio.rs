//! Frame emission: binary 8-bit PGM for brightness (value = round(y) - 1)
//! and little-endian float PFM for depth (scale -1.0, meters). Readers are
//! provided for round-trip checks and inspection tooling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ScalarField;

/// Writes a brightness field as binary PGM (P5, maxval 255). Stored values
/// are `round(y) - 1` for brightness in [1, 256].
pub fn write_pgm(path: &Path, field: &ScalarField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", field.cols(), field.rows())?;
    let bytes: Vec<u8> = field
        .as_slice()
        .iter()
        .map(|v| (v.round() - 1.0).clamp(0.0, 255.0) as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Writes a depth field as PFM (grayscale `Pf`, scale -1.0 meaning
/// little-endian). PFM rows run bottom-to-top.
pub fn write_pfm(path: &Path, field: &ScalarField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "Pf\n{} {}\n-1.0\n", field.cols(), field.rows())?;
    for j in (0..field.rows()).rev() {
        for i in 0..field.cols() {
            w.write_all(&(field.get(i, j) as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_token(r: &mut impl Read) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(byte[0] as char);
    }
}

pub fn read_pgm(path: &Path) -> Result<ScalarField> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_token(&mut r)?;
    if magic != "P5" {
        return Err(Error::BadConfig(format!("not a binary PGM: {magic}")));
    }
    let cols: usize = read_token(&mut r)?.parse().map_err(|_| Error::BadConfig("bad PGM width".into()))?;
    let rows: usize = read_token(&mut r)?.parse().map_err(|_| Error::BadConfig("bad PGM height".into()))?;
    let _maxval = read_token(&mut r)?;
    let mut bytes = vec![0u8; cols * rows];
    r.read_exact(&mut bytes)?;
    Ok(ScalarField::from_vec(
        cols,
        rows,
        bytes.iter().map(|b| *b as f64 + 1.0).collect(),
    ))
}

pub fn read_pfm(path: &Path) -> Result<ScalarField> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_token(&mut r)?;
    if magic != "Pf" {
        return Err(Error::BadConfig(format!("not a grayscale PFM: {magic}")));
    }
    let cols: usize = read_token(&mut r)?.parse().map_err(|_| Error::BadConfig("bad PFM width".into()))?;
    let rows: usize = read_token(&mut r)?.parse().map_err(|_| Error::BadConfig("bad PFM height".into()))?;
    let scale: f64 = read_token(&mut r)?.parse().map_err(|_| Error::BadConfig("bad PFM scale".into()))?;
    if scale >= 0.0 {
        return Err(Error::BadConfig("big-endian PFM unsupported".into()));
    }
    let mut buf = vec![0u8; cols * rows * 4];
    r.read_exact(&mut buf)?;
    let mut field = ScalarField::zeros(cols, rows);
    let mut idx = 0;
    for j in (0..rows).rev() {
        for i in 0..cols {
            let v = f32::from_le_bytes(buf[idx..idx + 4].try_into().unwrap());
            field.set(i, j, v as f64);
            idx += 4;
        }
    }
    Ok(field)
}
