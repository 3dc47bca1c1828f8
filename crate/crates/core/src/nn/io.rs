//! Flat named-array parameter files.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "HLPARAM1"
//! count   u32      number of arrays
//! entry   repeated count times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   ndim     u32, dims (u32 each)
//!   values   product(dims) f64, little-endian
//! ```
//!
//! The format carries no alignment or padding, so files are comparable
//! byte-for-byte across implementations that agree on names and shapes.

use super::Param;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"HLPARAM1";

#[derive(Debug, Error)]
pub enum ParamFileError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic; not a parameter file")]
    BadMagic,
    #[error("array name is not valid UTF-8")]
    BadName,
    #[error("parameter {name}: file shape {file:?} does not match model shape {model:?}")]
    ShapeMismatch {
        name: String,
        file: Vec<usize>,
        model: Vec<usize>,
    },
    #[error("parameter {0} missing from file")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn write_named_arrays<W: Write>(w: &mut W, arrays: &[NamedArray]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for a in arrays {
        w.write_all(&(a.name.len() as u32).to_le_bytes())?;
        w.write_all(a.name.as_bytes())?;
        w.write_all(&(a.shape.len() as u32).to_le_bytes())?;
        for &d in &a.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &a.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_named_arrays<R: Read>(r: &mut R) -> Result<Vec<NamedArray>, ParamFileError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ParamFileError::BadMagic);
    }
    let count = read_u32(r)?;
    let mut arrays = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| ParamFileError::BadName)?;
        let ndim = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        arrays.push(NamedArray { name, shape, values });
    }
    Ok(arrays)
}

pub fn params_to_arrays(params: &[Param]) -> Vec<NamedArray> {
    params
        .iter()
        .map(|p| NamedArray {
            name: p.name.clone(),
            shape: p.tensor.shape(),
            values: p.tensor.values(),
        })
        .collect()
}

/// Copies file arrays into matching parameters, by name.
pub fn apply_arrays(params: &[Param], arrays: &[NamedArray]) -> Result<(), ParamFileError> {
    for p in params {
        let a = arrays
            .iter()
            .find(|a| a.name == p.name)
            .ok_or_else(|| ParamFileError::Missing(p.name.clone()))?;
        if a.shape != p.tensor.shape() {
            return Err(ParamFileError::ShapeMismatch {
                name: p.name.clone(),
                file: a.shape.clone(),
                model: p.tensor.shape(),
            });
        }
        p.tensor.set_values(&a.values);
    }
    Ok(())
}

pub fn save_params(path: &Path, params: &[Param]) -> Result<(), ParamFileError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_named_arrays(&mut w, &params_to_arrays(params))?;
    Ok(())
}

pub fn load_params(path: &Path, params: &[Param]) -> Result<(), ParamFileError> {
    let mut r = BufReader::new(File::open(path)?);
    let arrays = read_named_arrays(&mut r)?;
    apply_arrays(params, &arrays)
}
