//! Binary checkpoint format.
//!
//! ```text
//! magic      10 bytes  "SPANFORGE1"
//! width      u8        32 or 64
//! entries    u32 LE
//!   name_len u32 LE, name (UTF-8)
//!   rank     u32 LE, dims (u64 LE each)
//!   values   product(dims) little-endian f32 or f64
//! aliases    u32 LE
//!   alias_len u32 LE, alias, target_len u32 LE, target
//! ```
//!
//! Entries are written in sorted name order, so equal stores produce equal
//! files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParameterStore, Precision, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 10] = b"SPANFORGE1";

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes()).map_err(io_err)
}

pub fn write_checkpoint(store: &ParameterStore, precision: Precision, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&[precision.bits()]).map_err(io_err)?;
    put_u32(w, store.len() as u32)?;
    for (name, t) in store.iter() {
        put_str(w, name)?;
        put_u32(w, t.rank() as u32)?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
        }
        for &v in t.data() {
            match precision {
                Precision::F32 => w.write_all(&(v as f32).to_le_bytes()),
                Precision::F64 => w.write_all(&v.to_le_bytes()),
            }
            .map_err(io_err)?;
        }
    }
    let aliases: Vec<_> = store.aliases().collect();
    put_u32(w, aliases.len() as u32)?;
    for (alias, target) in aliases {
        put_str(w, alias)?;
        put_str(w, target)?;
    }
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(buf)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(take::<4>(r)?))
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let n = get_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(Error::Checkpoint(format!("implausible name length {n}")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(ParameterStore, Precision)> {
    let magic = take::<10>(r)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let precision = match take::<1>(r)?[0] {
        32 => Precision::F32,
        64 => Precision::F64,
        other => return Err(Error::Checkpoint(format!("unknown value width {other}"))),
    };
    let mut store = ParameterStore::new();
    for _ in 0..get_u32(r)? {
        let name = get_str(r)?;
        let rank = get_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take::<8>(r)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(match precision {
                Precision::F32 => f32::from_le_bytes(take::<4>(r)?) as f64,
                Precision::F64 => f64::from_le_bytes(take::<8>(r)?),
            });
        }
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        store.insert(name, t)?;
    }
    for _ in 0..get_u32(r)? {
        let alias = get_str(r)?;
        let target = get_str(r)?;
        store.alias(alias, &target)?;
    }
    Ok((store, precision))
}

pub fn save_checkpoint(store: &ParameterStore, precision: Precision, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(store, precision, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterStore, Precision)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}
