//! Little-endian binary formats.
//!
//! ```text
//! VGRD | u32 nz | u32 nx | f32 dz | f32 dx | nz*nx f32 (row-major)
//! SGTH | u32 n_receivers | u32 nt | f32 dt | n_receivers*nt f32 (receiver-major)
//! KMAT | u32 rows | u32 cols | f32 1 | f32 1 | rows*cols f32 (row-major)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ShotGather, VelocityGrid};
use crate::{Error, Result};

pub const GRID_MAGIC: &[u8; 4] = b"VGRD";
pub const GATHER_MAGIC: &[u8; 4] = b"SGTH";
pub const KERNEL_MAGIC: &[u8; 4] = b"KMAT";

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::format(format!("truncated header: {e}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    Ok(f32::from_le_bytes(read_exact::<4>(r)?))
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let got = read_exact::<4>(r)?;
    if &got != magic {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

/// Reads exactly `count` f32 values and insists the stream ends there.
fn read_payload(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 4 {
        return Err(Error::format(format!(
            "payload has {} bytes, header implies {}",
            bytes.len(),
            count * 4
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(format!("non-finite value at payload index {i}")));
    }
    Ok(values)
}

fn write_payload(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn dim_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::format(format!("dimension {n} exceeds u32")))
}

pub fn write_grid(w: &mut impl Write, grid: &VelocityGrid) -> Result<()> {
    w.write_all(GRID_MAGIC)?;
    w.write_all(&dim_u32(grid.nz())?.to_le_bytes())?;
    w.write_all(&dim_u32(grid.nx())?.to_le_bytes())?;
    w.write_all(&(grid.dz() as f32).to_le_bytes())?;
    w.write_all(&(grid.dx() as f32).to_le_bytes())?;
    write_payload(w, grid.values())
}

pub fn read_grid(r: &mut impl Read) -> Result<VelocityGrid> {
    expect_magic(r, GRID_MAGIC)?;
    let nz = read_u32(r)? as usize;
    let nx = read_u32(r)? as usize;
    let dz = read_f32(r)? as f64;
    let dx = read_f32(r)? as f64;
    let values = read_payload(r, nz * nx)?;
    VelocityGrid::new(nz, nx, dz, dx, values).map_err(|e| Error::format(e.to_string()))
}

pub fn write_gather(w: &mut impl Write, gather: &ShotGather) -> Result<()> {
    w.write_all(GATHER_MAGIC)?;
    w.write_all(&dim_u32(gather.n_receivers())?.to_le_bytes())?;
    w.write_all(&dim_u32(gather.nt())?.to_le_bytes())?;
    w.write_all(&(gather.dt() as f32).to_le_bytes())?;
    write_payload(w, gather.data())
}

pub fn read_gather(r: &mut impl Read) -> Result<ShotGather> {
    expect_magic(r, GATHER_MAGIC)?;
    let n_receivers = read_u32(r)? as usize;
    let nt = read_u32(r)? as usize;
    let dt = read_f32(r)? as f64;
    let data = read_payload(r, n_receivers * nt)?;
    ShotGather::new(n_receivers, nt, dt, data).map_err(|e| Error::format(e.to_string()))
}

/// Dense row-major matrix in the `KMAT` layout.
pub fn write_matrix(w: &mut impl Write, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    if values.len() != rows * cols {
        return Err(Error::invalid("matrix payload does not match its shape"));
    }
    w.write_all(KERNEL_MAGIC)?;
    w.write_all(&dim_u32(rows)?.to_le_bytes())?;
    w.write_all(&dim_u32(cols)?.to_le_bytes())?;
    w.write_all(&1f32.to_le_bytes())?;
    w.write_all(&1f32.to_le_bytes())?;
    write_payload(w, values)
}

pub fn read_matrix(r: &mut impl Read) -> Result<(usize, usize, Vec<f64>)> {
    expect_magic(r, KERNEL_MAGIC)?;
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    read_f32(r)?;
    read_f32(r)?;
    Ok((rows, cols, read_payload(r, rows * cols)?))
}

pub fn save_velocity_grid(grid: &VelocityGrid, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_grid(&mut w, grid)?;
    w.flush()?;
    Ok(())
}

pub fn load_velocity_grid(path: impl AsRef<Path>) -> Result<VelocityGrid> {
    read_grid(&mut BufReader::new(File::open(path)?))
}

pub fn save_gather(gather: &ShotGather, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_gather(&mut w, gather)?;
    w.flush()?;
    Ok(())
}

pub fn load_gather(path: impl AsRef<Path>) -> Result<ShotGather> {
    read_gather(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn bytes_of(grid: &VelocityGrid) -> Vec<u8> {
        let mut buf = Vec::new();
        write_grid(&mut buf, grid).unwrap();
        buf
    }

    #[test]
    fn grid_round_trip() {
        let g = VelocityGrid::from_fn(3, 4, 15.0, 12.5, |iz, ix| 1500.0 + 10.5 * (iz * 4 + ix) as f64).unwrap();
        let back = read_grid(&mut bytes_of(&g).as_slice()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn bad_magic() {
        let g = VelocityGrid::constant(2, 2, 1.0, 1.0, 1.0).unwrap();
        let mut b = bytes_of(&g);
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_grid(&mut b.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn size_mismatch() {
        let g = VelocityGrid::constant(2, 2, 1.0, 1.0, 1.0).unwrap();
        let mut b = bytes_of(&g);
        b.truncate(b.len() - 4);
        assert!(matches!(read_grid(&mut b.as_slice()), Err(Error::Format(_))));
        let mut long = bytes_of(&g);
        long.extend_from_slice(&1f32.to_le_bytes());
        assert!(matches!(read_grid(&mut long.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_payload() {
        let g = VelocityGrid::constant(1, 2, 1.0, 1.0, 1.0).unwrap();
        let mut b = bytes_of(&g);
        let n = b.len();
        b[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_grid(&mut b.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn gather_and_matrix_round_trip() {
        let g = ShotGather::new(2, 3, 0.002, vec![0.0, 1.0, -2.0, 3.5, 0.25, -0.125]).unwrap();
        let mut buf = Vec::new();
        write_gather(&mut buf, &g).unwrap();
        assert_eq!(&buf[..4], GATHER_MAGIC);
        let back = read_gather(&mut buf.as_slice()).unwrap();
        assert_eq!(back.data(), g.data());
        assert_eq!(back.dt(), 0.002f32 as f64);

        let mut m = Vec::new();
        write_matrix(&mut m, 2, 2, &[1.0, 2.0, 2.0, 1.0]).unwrap();
        assert_eq!(read_matrix(&mut m.as_slice()).unwrap(), (2, 2, vec![1.0, 2.0, 2.0, 1.0]));
    }

    proptest! {
        #[test]
        fn file_bytes_are_stable(vals in prop::collection::vec(1.0f32..1e4, 6), dz in 0.5f32..50.0) {
            let g = VelocityGrid::new(2, 3, dz as f64, 10.0, vals.iter().map(|v| *v as f64).collect()).unwrap();
            let once = bytes_of(&g);
            let back = read_grid(&mut once.as_slice()).unwrap();
            prop_assert_eq!(&back, &g);
            prop_assert_eq!(bytes_of(&back), once);
        }
    }
}
