//! Flat binary parameter files.
//!
//! Layout: the 4-byte magic `GZF1`, then one record per tensor until EOF.
//! Each record is `name_len: u64 LE`, the UTF-8 name, `rank: u64 LE`,
//! `rank` dims as `u64 LE`, then the row-major data as `f64 LE`. The
//! row-major layout is fixed, so files are portable across platforms.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamModule;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GZF1";

pub fn write_tensors<W: Write>(w: &mut W, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.rank() as u64).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<Option<u64>> {
    let mut buf = [0u8; 8];
    match r.read_exact(&mut buf) {
        Ok(()) => Ok(Some(u64::from_le_bytes(buf))),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadParamFile(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut out = Vec::new();
    while let Some(name_len) = read_u64(r)? {
        let mut name_buf = vec![0u8; name_len as usize];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|e| Error::BadParamFile(format!("non-UTF-8 tensor name: {e}")))?;
        let rank = read_u64(r)?
            .ok_or_else(|| Error::BadParamFile(format!("truncated record for '{name}'")))?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let d = read_u64(r)?.ok_or_else(|| {
                Error::BadParamFile(format!("truncated dims for '{name}'"))
            })?;
            shape.push(d as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf).map_err(|_| {
                Error::BadParamFile(format!("truncated data for '{name}'"))
            })?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Clones every parameter of `m` under `prefix` into `(path, tensor)` pairs.
pub fn collect_params(m: &impl ParamModule, prefix: &str) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    m.visit_params(prefix, &mut |path, t| out.push((path.to_string(), t.clone())));
    out
}

pub fn save_to_file(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensors(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn load_from_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensors(&mut r)
}

/// Assigns stored tensors into `m` (whose paths are taken under `prefix`),
/// checking shapes and reporting any missing or unknown names.
pub fn assign_params(
    m: &mut impl ParamModule,
    prefix: &str,
    stored: &[(String, Tensor)],
) -> Result<()> {
    let mut table: BTreeMap<&str, &Tensor> =
        stored.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let mut missing = Vec::new();
    let mut bad_shape = Vec::new();
    m.visit_params_mut(prefix, &mut |path, t| {
        match table.remove(path) {
            None => missing.push(path.to_string()),
            Some(src) => {
                if src.shape() != t.shape() {
                    bad_shape.push(format!(
                        "{path}: stored {:?}, model {:?}",
                        src.shape(),
                        t.shape()
                    ));
                } else {
                    t.data_mut().copy_from_slice(src.data());
                }
            }
        }
    });
    if !missing.is_empty() || !bad_shape.is_empty() || !table.is_empty() {
        let extra: Vec<&str> = table.keys().copied().collect();
        return Err(Error::BadParamFile(format!(
            "parameter mismatch: missing {missing:?}, shape errors {bad_shape:?}, unknown {extra:?}"
        )));
    }
    Ok(())
}
