//! `"MDEN"` network checkpoints: magic, u32 length of the JSON-encoded spec,
//! the spec, then every parameter as little-endian f32 in declaration order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{expect_magic, read_f32s, read_u32, write_f32s, write_u32};

use super::{Network, NetworkSpec};

pub const NETWORK_MAGIC: &[u8; 4] = b"MDEN";

pub fn write_network<W: Write>(w: &mut W, net: &Network<f32>) -> Result<()> {
    let json = serde_json::to_vec(net.spec())?;
    w.write_all(NETWORK_MAGIC)?;
    write_u32(w, json.len() as u32)?;
    w.write_all(&json)?;
    write_f32s(w, &net.flat_params())
}

pub fn read_network<R: Read>(r: &mut R) -> Result<Network<f32>> {
    expect_magic(r, NETWORK_MAGIC)?;
    let len = read_u32(r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let spec: NetworkSpec = serde_json::from_slice(&json)?;
    let count = spec.param_count();
    let flat = read_f32s(r, count)?;
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("checkpoint holds non-finite parameters".into()));
    }
    Network::from_params(spec, &flat)
}

pub fn save_network(path: &Path, net: &Network<f32>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write_network(&mut f, net)?;
    f.flush()?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<Network<f32>> {
    read_network(&mut BufReader::new(File::open(path)?))
}
