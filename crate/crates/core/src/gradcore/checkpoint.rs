//! Binary checkpoint format for parameter stores.
//!
//! Layout: magic bytes `SRLC`, version byte 0x01, then per entry (in store
//! order): u32 name length, UTF-8 name, u8 rank, u32 dims, row-major f64
//! values. All integers and floats little-endian. Round-trips bit-exactly.

use std::io::{Read, Write};

use crate::gradcore::store::{ParamStore, Shape};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SRLC";
pub const CHECKPOINT_VERSION: u8 = 0x01;

pub fn write_params<W: Write>(store: &ParamStore, mut w: W) -> Result<()> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    for entry in store.iter() {
        let name = entry.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[entry.shape.rank()])?;
        for d in entry.shape.dims() {
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &entry.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", version[0])));
    }

    let mut store = ParamStore::new();
    loop {
        let mut len_buf = [0u8; 4];
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;

        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let shape = match rank[0] {
            1 => {
                let mut d = [0u8; 4];
                r.read_exact(&mut d)?;
                Shape::Vector(u32::from_le_bytes(d) as usize)
            }
            2 => {
                let mut d0 = [0u8; 4];
                let mut d1 = [0u8; 4];
                r.read_exact(&mut d0)?;
                r.read_exact(&mut d1)?;
                Shape::Matrix(u32::from_le_bytes(d0) as usize, u32::from_le_bytes(d1) as usize)
            }
            k => return Err(Error::Checkpoint(format!("rank {k} not supported"))),
        };

        let mut data = vec![0.0f64; shape.len()];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        store.insert(&name, shape, data)?;
    }
    Ok(store)
}

pub fn write_params_file(store: &ParamStore, path: &std::path::Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_params(store, std::io::BufWriter::new(file))
}

pub fn read_params_file(path: &std::path::Path) -> Result<ParamStore> {
    let file = std::fs::File::open(path)?;
    read_params(std::io::BufReader::new(file))
}
