//! Checkpoint files.
//!
//! Parameters: `b"LGCP"`, version (u32), layer count (u32), `(rows, cols)` per layer
//! (u32 pairs), then per layer the row-major weights followed by the biases, all
//! little-endian f64. Masks: `b"LGCM"`, version, layer count, shapes, then one byte
//! (0 or 1) per connection, row-major. Header integers are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{DenseParams, Mask, NnetError};

const PARAMS_MAGIC: &[u8; 4] = b"LGCP";
const MASK_MAGIC: &[u8; 4] = b"LGCM";
const VERSION: u32 = 1;

fn write_header(w: &mut impl Write, magic: &[u8; 4], shapes: &[(usize, usize)]) -> Result<(), NnetError> {
    w.write_all(magic)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(shapes.len() as u32).to_le_bytes())?;
    for &(r, c) in shapes {
        w.write_all(&(r as u32).to_le_bytes())?;
        w.write_all(&(c as u32).to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, NnetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<Vec<(usize, usize)>, NnetError> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(NnetError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(NnetError::Format(format!("unsupported version {version}")));
    }
    let n = read_u32(r)? as usize;
    (0..n)
        .map(|_| Ok((read_u32(r)? as usize, read_u32(r)? as usize)))
        .collect()
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, NnetError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_params(mut w: impl Write, params: &DenseParams) -> Result<(), NnetError> {
    let shapes: Vec<_> = params.weights.iter().map(|m| m.dim()).collect();
    write_header(&mut w, PARAMS_MAGIC, &shapes)?;
    for (m, b) in params.weights.iter().zip(&params.biases) {
        for v in m.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in b {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_params(mut r: impl Read) -> Result<DenseParams, NnetError> {
    let shapes = read_header(&mut r, PARAMS_MAGIC)?;
    let mut weights = Vec::with_capacity(shapes.len());
    let mut biases = Vec::with_capacity(shapes.len());
    for (rows, cols) in shapes {
        let data = read_f64s(&mut r, rows * cols)?;
        weights.push(Array2::from_shape_vec((rows, cols), data).map_err(|e| NnetError::Format(e.to_string()))?);
        biases.push(read_f64s(&mut r, rows)?);
    }
    Ok(DenseParams { weights, biases })
}

pub fn write_mask(mut w: impl Write, mask: &Mask) -> Result<(), NnetError> {
    let shapes: Vec<_> = mask.keep.iter().map(|m| m.dim()).collect();
    write_header(&mut w, MASK_MAGIC, &shapes)?;
    for m in &mask.keep {
        let bytes: Vec<u8> = m.iter().map(|&k| u8::from(k)).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_mask(mut r: impl Read) -> Result<Mask, NnetError> {
    let shapes = read_header(&mut r, MASK_MAGIC)?;
    let mut keep = Vec::with_capacity(shapes.len());
    for (rows, cols) in shapes {
        let mut buf = vec![0u8; rows * cols];
        r.read_exact(&mut buf)?;
        if let Some(b) = buf.iter().find(|&&b| b > 1) {
            return Err(NnetError::Format(format!("mask byte {b} is not 0/1")));
        }
        let data = buf.into_iter().map(|b| b == 1).collect();
        keep.push(Array2::from_shape_vec((rows, cols), data).map_err(|e| NnetError::Format(e.to_string()))?);
    }
    Ok(Mask { keep })
}

fn write_matrix_csv<T: std::fmt::Display>(path: &Path, rows: usize, cols: usize, get: impl Fn(usize, usize) -> T) -> Result<(), NnetError> {
    let mut out = String::new();
    for r in 0..rows {
        let line: Vec<String> = (0..cols).map(|c| get(r, c).to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// One CSV per layer (`{stem}-layer{i}.csv`, row-major weights) plus `{stem}-bias{i}.csv`.
pub fn write_params_csv(dir: impl AsRef<Path>, stem: &str, params: &DenseParams) -> Result<Vec<PathBuf>, NnetError> {
    let dir = dir.as_ref();
    let mut written = Vec::new();
    for (i, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let path = dir.join(format!("{stem}-layer{}.csv", i + 1));
        let (rows, cols) = w.dim();
        write_matrix_csv(&path, rows, cols, |r, c| w[(r, c)])?;
        written.push(path);
        let path = dir.join(format!("{stem}-bias{}.csv", i + 1));
        write_matrix_csv(&path, b.len(), 1, |r, _| b[r])?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_mask_csv(dir: impl AsRef<Path>, stem: &str, mask: &Mask) -> Result<Vec<PathBuf>, NnetError> {
    let dir = dir.as_ref();
    let mut written = Vec::new();
    for (i, k) in mask.keep.iter().enumerate() {
        let path = dir.join(format!("{stem}-layer{}.csv", i + 1));
        let (rows, cols) = k.dim();
        write_matrix_csv(&path, rows, cols, |r, c| u8::from(k[(r, c)]))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{init_params, LayerSpec, TrainConfig};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn params_round_trip_bit_exact(sizes in prop::collection::vec(1usize..6, 2..5), seed in any::<u64>()) {
            let spec = LayerSpec::new(sizes.clone()).or_else(|_| {
                let mut s = sizes.clone();
                *s.last_mut().unwrap() = 2;
                LayerSpec::new(s)
            }).unwrap();
            let cfg = TrainConfig { seed, ..TrainConfig::default() };
            let mut p = init_params(&spec, &cfg).unwrap();
            p.biases[0][0] = -0.0;
            let mut buf = Vec::new();
            write_params(&mut buf, &p).unwrap();
            let back = read_params(buf.as_slice()).unwrap();
            for (a, b) in p.weights.iter().flatten().zip(back.weights.iter().flatten()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            for (a, b) in p.biases.iter().flatten().zip(back.biases.iter().flatten()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }

            let mut mask = Mask::full(&spec);
            mask.keep[0][(0, 0)] = seed % 2 == 0;
            let mut buf = Vec::new();
            write_mask(&mut buf, &mask).unwrap();
            prop_assert_eq!(read_mask(buf.as_slice()).unwrap(), mask);
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let spec = LayerSpec::new(vec![2, 2, 1]).unwrap();
        let mut buf = Vec::new();
        write_mask(&mut buf, &Mask::full(&spec)).unwrap();
        assert!(matches!(read_params(buf.as_slice()), Err(NnetError::Format(_))));
    }

    #[test]
    fn truncated_file_is_an_io_error() {
        let spec = LayerSpec::new(vec![2, 2, 1]).unwrap();
        let p = init_params(&spec, &TrainConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, &p).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_params(buf.as_slice()), Err(NnetError::Io(_))));
    }

    #[test]
    fn csv_export_writes_one_file_per_layer() {
        let dir = tempfile::tempdir().unwrap();
        let spec = LayerSpec::new(vec![3, 2, 1]).unwrap();
        let p = init_params(&spec, &TrainConfig::default()).unwrap();
        let files = write_params_csv(dir.path(), "dense", &p).unwrap();
        assert_eq!(files.len(), 4);
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 3);
        let mfiles = write_mask_csv(dir.path(), "mask", &Mask::full(&spec)).unwrap();
        assert_eq!(std::fs::read_to_string(&mfiles[1]).unwrap(), "1,1\n");
    }
}
