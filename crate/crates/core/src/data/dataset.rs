//! Single-file binary datasets.
//!
//! Byte layout (integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "HLDSET01"
//! version      u32      currently 1
//! joint_count  u32
//! count        u64
//! records      count times: J*2 f64 (x2d), then J*3 f64 (y3d)
//! ```
//!
//! Sequence metadata is not stored; loaded samples carry `meta: None`.

use super::{DataError, PoseSample};
use crate::skeleton::JOINT_COUNT;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"HLDSET01";
const VERSION: u32 = 1;

pub fn save_dataset(path: &Path, samples: &[PoseSample]) -> Result<(), DataError> {
    let io_err = |e| DataError::Io(path.to_path_buf(), e);
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(io_err);
    emit(MAGIC)?;
    emit(&VERSION.to_le_bytes())?;
    emit(&(JOINT_COUNT as u32).to_le_bytes())?;
    emit(&(samples.len() as u64).to_le_bytes())?;
    for s in samples {
        for v in s.x2d.iter().chain(&s.y3d) {
            emit(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<PoseSample>, DataError> {
    let io_err = |e| DataError::Io(path.to_path_buf(), e);
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(DataError::BadMagic(path.to_path_buf()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io_err)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(DataError::BadVersion(path.to_path_buf(), version));
    }
    r.read_exact(&mut b4).map_err(io_err)?;
    let joints = u32::from_le_bytes(b4) as usize;
    if joints != JOINT_COUNT {
        return Err(DataError::BadSample(format!(
            "dataset has {joints} joints, expected {JOINT_COUNT}"
        )));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(io_err)?;
    let count = u64::from_le_bytes(b8) as usize;

    let mut read_vec = |n: usize| -> Result<Vec<f64>, DataError> {
        let mut out = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(io_err)?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let x2d = read_vec(JOINT_COUNT * 2)?;
        let y3d = read_vec(JOINT_COUNT * 3)?;
        samples.push(PoseSample::new(x2d, y3d, None)?);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, SyntheticHandConfig};
    use std::fs;

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.bin");
        let samples = generate(&SyntheticHandConfig::new(50, 7)).unwrap();
        save_dataset(&path, &samples).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.x2d), bits(&b.x2d));
            assert_eq!(bits(&a.y3d), bits(&b.y3d));
            assert_eq!(b.meta, None);
        }
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, b"definitely not a dataset").unwrap();
        assert!(matches!(load_dataset(&path), Err(DataError::BadMagic(_))));

        let good = dir.path().join("good.bin");
        let samples = generate(&SyntheticHandConfig::new(3, 1)).unwrap();
        save_dataset(&good, &samples).unwrap();
        let bytes = fs::read(&good).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 11]).unwrap();
        assert!(matches!(load_dataset(&path), Err(DataError::Io(..))));
    }

    #[test]
    fn different_seeds_produce_different_files() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        save_dataset(&p1, &generate(&SyntheticHandConfig::new(20, 1)).unwrap()).unwrap();
        save_dataset(&p2, &generate(&SyntheticHandConfig::new(20, 2)).unwrap()).unwrap();
        assert_ne!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }
}
