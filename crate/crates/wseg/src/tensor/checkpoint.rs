//! Flat binary parameter checkpoints.
//!
//! Layout: magic `WSEG`, format version (u32 LE), tensor count (u32 LE),
//! then per tensor a shape header (u32 rank, rank × u32 dims) followed by the
//! row-major little-endian float-64 payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::network::Network;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"WSEG";
pub const VERSION: u32 = 1;

pub fn save_tensors(path: &Path, tensors: &[&Tensor]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |buf: &[u8]| w.write_all(buf).map_err(|e| Error::io(path, e));
    write(&MAGIC)?;
    write(&VERSION.to_le_bytes())?;
    write(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        write(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            write(&(d as u32).to_le_bytes())?;
        }
        for v in t.values() {
            write(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_tensors(path: &Path) -> Result<Vec<Tensor>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |reason: &str| Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if magic != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(bad(&format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut payload = vec![0u8; len * 8];
        r.read_exact(&mut payload).map_err(|e| Error::io(path, e))?;
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::from_vec(&shape, values)?);
    }
    Ok(tensors)
}

/// Saves a network's parameters as (weights, bias) pairs in graph order.
pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    let mut list = Vec::new();
    for p in net.param_sets() {
        list.push(&p.weights);
        list.push(&p.bias);
    }
    save_tensors(path, &list)
}

/// Loads parameters into an already-built network of the same topology.
pub fn load_network(path: &Path, net: &mut Network) -> Result<()> {
    let tensors = load_tensors(path)?;
    if tensors.len() != net.param_sets().len() * 2 {
        return Err(Error::shape(
            "checkpoint tensor count",
            net.param_sets().len() * 2,
            tensors.len(),
        ));
    }
    for (i, chunk) in tensors.chunks_exact(2).enumerate() {
        let p = &mut net.param_sets_mut()[i];
        if chunk[0].shape() != p.weights.shape() || chunk[1].shape() != p.bias.shape() {
            return Err(Error::shape(
                format!("checkpoint layer {i}"),
                format!("{:?}/{:?}", p.weights.shape(), p.bias.shape()),
                format!("{:?}/{:?}", chunk[0].shape(), chunk[1].shape()),
            ));
        }
        p.weights.values_mut().copy_from_slice(chunk[0].values());
        p.bias.values_mut().copy_from_slice(chunk[1].values());
    }
    Ok(())
}
