//! Binary checkpoints.
//!
//! Layout, all integers little endian:
//! `SENETCK1`, u32 record count, then per record: u32 name length, name bytes,
//! u8 dtype (1 = f64, 2 = f32), u8 rank, rank x u64 dims, values.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ops::BnState;

use super::network::Network;

const MAGIC: &[u8; 8] = b"SENETCK1";
const DTYPE_F64: u8 = 1;
const DTYPE_F32: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Parameters followed by `<bn>.running_mean` / `<bn>.running_var` buffers.
pub fn records(net: &Network) -> Vec<Record> {
    let mut out: Vec<Record> = net
        .params()
        .iter()
        .map(|p| Record {
            name: p.name.clone(),
            shape: p.shape.clone(),
            values: p.value.data().to_vec(),
        })
        .collect();
    let bn = net.bn_buffers();
    for (name, s) in bn.names.iter().zip(&bn.states) {
        out.push(Record {
            name: format!("{name}.running_mean"),
            shape: vec![s.channels()],
            values: s.running_mean.clone(),
        });
        out.push(Record {
            name: format!("{name}.running_var"),
            shape: vec![s.channels()],
            values: s.running_var.clone(),
        });
    }
    out
}

pub fn write_records<W: Write>(mut w: W, records: &[Record]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for r in records {
        w.write_all(&(r.name.len() as u32).to_le_bytes())?;
        w.write_all(r.name.as_bytes())?;
        w.write_all(&[DTYPE_F64, r.shape.len() as u8])?;
        for &d in &r.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(r.values.len() * 8);
        for v in &r.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4, what)?.try_into().unwrap()))
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<Record>> {
    if read_exact(&mut r, 8, "header")? != MAGIC {
        return Err(Error::Checkpoint("bad header".into()));
    }
    let count = read_u32(&mut r, "record count")?;
    let mut out = Vec::new();
    for i in 0..count {
        let len = read_u32(&mut r, "name length")? as usize;
        if len > 4096 {
            return Err(Error::Checkpoint(format!("record {i}: name length {len}")));
        }
        let name = String::from_utf8(read_exact(&mut r, len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("record {i}: name is not utf-8")))?;
        let tag = read_exact(&mut r, 2, "dtype")?;
        let (dtype, rank) = (tag[0], tag[1] as usize);
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(read_exact(&mut r, 8, "dims")?.try_into().unwrap());
            shape.push(usize::try_from(d).map_err(|_| Error::Checkpoint(format!("{name}: dim {d}")))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= 1 << 32)
            .ok_or_else(|| Error::Checkpoint(format!("{name}: shape {shape:?} too large")))?;
        let values = match dtype {
            DTYPE_F64 => read_exact(&mut r, numel * 8, &name)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DTYPE_F32 => read_exact(&mut r, numel * 4, &name)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            other => return Err(Error::Checkpoint(format!("{name}: unknown dtype tag {other}"))),
        };
        out.push(Record { name, shape, values });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last record".into()));
    }
    Ok(out)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_records(&mut w, &records(net))?;
    w.flush()?;
    Ok(())
}

/// Copies `recs` into `net`. Every parameter and buffer must be present with a
/// matching shape and nothing extra may appear; on error `net` is untouched.
pub fn apply_records(net: &mut Network, recs: Vec<Record>) -> Result<()> {
    let expected = records(net);
    let mut by_name: HashMap<String, Record> = HashMap::with_capacity(recs.len());
    for r in recs {
        if by_name.contains_key(&r.name) {
            return Err(Error::Checkpoint(format!("duplicate record `{}`", r.name)));
        }
        by_name.insert(r.name.clone(), r);
    }
    for e in &expected {
        match by_name.get(&e.name) {
            None => return Err(Error::Checkpoint(format!("missing `{}`", e.name))),
            Some(r) if r.shape != e.shape => {
                return Err(Error::Checkpoint(format!(
                    "`{}`: shape {:?}, network expects {:?}",
                    e.name, r.shape, e.shape
                )))
            }
            Some(r) if r.values.iter().any(|v| !v.is_finite()) => {
                return Err(Error::Checkpoint(format!("`{}`: non-finite value", e.name)))
            }
            Some(_) => {}
        }
    }
    if by_name.len() != expected.len() {
        let mut extra: Vec<&String> = by_name
            .keys()
            .filter(|k| !expected.iter().any(|e| &e.name == *k))
            .collect();
        extra.sort();
        return Err(Error::Checkpoint(format!("unexpected records: {extra:?}")));
    }

    for p in net.params_mut().iter_mut() {
        let r = by_name.remove(&p.name).expect("checked above");
        p.value.data_mut().copy_from_slice(&r.values);
    }
    let bn = net.bn_buffers_mut();
    for (name, s) in bn.names.iter().zip(bn.states.iter_mut()) {
        let mean = by_name.remove(&format!("{name}.running_mean")).expect("checked above");
        let var = by_name.remove(&format!("{name}.running_var")).expect("checked above");
        *s = BnState {
            running_mean: mean.values,
            running_var: var.values,
            updates: s.updates.max(1),
        };
    }
    Ok(())
}

pub fn load_into(net: &mut Network, path: &Path) -> Result<()> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let recs = read_records(std::io::BufReader::new(file))?;
    apply_records(net, recs)
}
