//! Little-endian binary codecs for grids.
//!
//! Heightmap block: `"MDEH"`, u32 width, u32 height, f32 cell size, then
//! `width * height` f32 heights row-major. Material masks use the magic
//! `"MDEM"`, the same header, then the density, modulus and Poisson planes.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Heightmap, MaterialMask};

pub const HEIGHTMAP_MAGIC: &[u8; 4] = b"MDEH";
pub const MASK_MAGIC: &[u8; 4] = b"MDEM";

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f32s<W: Write>(w: &mut W, vs: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 4);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

pub fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&b)
        )));
    }
    Ok(())
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], spec: GridSpec) -> Result<()> {
    w.write_all(magic)?;
    write_u32(w, spec.width as u32)?;
    write_u32(w, spec.height as u32)?;
    write_f32(w, spec.cell_size)
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<GridSpec> {
    expect_magic(r, magic)?;
    let width = read_u32(r)? as usize;
    let height = read_u32(r)? as usize;
    let cell_size = read_f32(r)?;
    GridSpec::new(width, height, cell_size).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_heightmap<W: Write>(w: &mut W, map: &Heightmap) -> Result<()> {
    write_header(w, HEIGHTMAP_MAGIC, map.spec())?;
    write_f32s(w, map.values())
}

pub fn read_heightmap<R: Read>(r: &mut R) -> Result<Heightmap> {
    let spec = read_header(r, HEIGHTMAP_MAGIC)?;
    let values = read_f32s(r, spec.cells())?;
    Heightmap::new(spec, values)
}

pub fn write_mask<W: Write>(w: &mut W, mask: &MaterialMask) -> Result<()> {
    write_header(w, MASK_MAGIC, mask.spec())?;
    write_f32s(w, &mask.mass_density)?;
    write_f32s(w, &mask.youngs_modulus)?;
    write_f32s(w, &mask.poisson_ratio)
}

pub fn read_mask<R: Read>(r: &mut R) -> Result<MaterialMask> {
    let spec = read_header(r, MASK_MAGIC)?;
    let n = spec.cells();
    let density = read_f32s(r, n)?;
    let youngs = read_f32s(r, n)?;
    let poisson = read_f32s(r, n)?;
    MaterialMask::from_planes(spec, density, youngs, poisson)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Material;

    #[test]
    fn heightmap_layout_is_bit_exact() {
        let spec = GridSpec::new(8, 8, 0.5).unwrap();
        let map = Heightmap::from_fn(spec, |x, y| (x + 8 * y) as f32 * 0.125).unwrap();
        let mut buf = Vec::new();
        write_heightmap(&mut buf, &map).unwrap();
        assert_eq!(buf.len(), 16 + 64 * 4);
        assert_eq!(&buf[0..4], b"MDEH");
        assert_eq!(&buf[4..8], &8u32.to_le_bytes());
        assert_eq!(&buf[12..16], &0.5f32.to_le_bytes());
        // cell (1, 0) follows cell (0, 0): row-major
        assert_eq!(&buf[20..24], &0.125f32.to_le_bytes());
        let back = read_heightmap(&mut buf.as_slice()).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn mask_round_trip_and_bad_magic() {
        let spec = GridSpec::new(8, 8, 1.0).unwrap();
        let mut mask = MaterialMask::empty(spec);
        mask.set(
            3,
            4,
            &Material {
                density: 1.1,
                youngs_modulus: 25.0,
                poisson_ratio: 0.45,
            },
        );
        let mut buf = Vec::new();
        write_mask(&mut buf, &mask).unwrap();
        assert_eq!(buf.len(), 16 + 3 * 64 * 4);
        assert_eq!(read_mask(&mut buf.as_slice()).unwrap(), mask);
        buf[0] = b'X';
        assert!(matches!(read_mask(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
