//! Checkpoint container: magic "DSCKPT", version u16, then a named-parameter
//! table of `name_len u16 | name utf-8 | rank u8 | dims u32[] | f32 payload`,
//! all little-endian. Entries are written in sorted-name order so identical
//! parameter sets produce identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::scalar::{Real, Scalar};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"DSCKPT";
const VERSION: u16 = 1;

pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, tensor) in store.iter_sorted() {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::invalid_input(format!("parameter name too long: {name}")));
        }
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        let shape = tensor.shape();
        if shape.len() > u8::MAX as usize {
            return Err(Error::invalid_input("tensor rank exceeds u8"));
        }
        w.write_all(&[shape.len() as u8])?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in tensor.data() {
            w.write_all(&v.as_f32().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore<Real>> {
    let mut r = BufReader::new(
        File::open(path).map_err(|e| Error::Dependency(format!("{}: {e}", path.display())))?,
    );
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut store = ParamStore::new();
    loop {
        let mut len_buf = [0u8; 2];
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u16::from_le_bytes(len_buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format("parameter name is not utf-8".into()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut d = [0u8; 4];
            r.read_exact(&mut d)?;
            shape.push(u32::from_le_bytes(d) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0f32; numel];
        let mut buf = [0u8; 4];
        for slot in data.iter_mut() {
            r.read_exact(&mut buf)?;
            *slot = f32::from_le_bytes(buf);
        }
        store.add(name, Tensor::new(shape, data));
    }
    Ok(store)
}
