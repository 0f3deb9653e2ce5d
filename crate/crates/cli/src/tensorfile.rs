//! Per-sample binary tensor files.
//!
//! Byte layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "AVTN"
//! 4       2     dtype code (1 = f32, 2 = f64)
//! 6       2     rank (1 or 2)
//! 8       4     extent 0
//! 12      4     extent 1 (0 when rank == 1)
//! 16      ...   row-major values at the stated dtype
//! ```
//!
//! The header is exactly 16 bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use avasr_core::Tensor;

use crate::error::{CliError, Result};
use crate::wire::{read_u16, read_u32, read_values, write_u16, write_u32, write_values, Dtype};

const MAGIC: &[u8; 4] = b"AVTN";

pub fn write_tensor(path: &Path, tensor: &Tensor, dtype: Dtype) -> Result<()> {
    if tensor.rank() == 0 || tensor.rank() > 2 {
        return Err(CliError::Format(format!(
            "tensor files hold rank 1 or 2, got rank {}",
            tensor.rank()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u16(&mut w, dtype.code())?;
    write_u16(&mut w, tensor.rank() as u16)?;
    write_u32(&mut w, tensor.shape()[0] as u32)?;
    write_u32(
        &mut w,
        if tensor.rank() == 2 {
            tensor.shape()[1] as u32
        } else {
            0
        },
    )?;
    write_values(&mut w, tensor.data(), dtype)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CliError::Format(format!(
            "{}: bad magic {magic:?}",
            path.display()
        )));
    }
    let dtype = Dtype::from_code(read_u16(&mut r)?)?;
    let rank = read_u16(&mut r)? as usize;
    if rank == 0 || rank > 2 {
        return Err(CliError::Format(format!(
            "{}: unsupported rank {rank}",
            path.display()
        )));
    }
    let e0 = read_u32(&mut r)? as usize;
    let e1 = read_u32(&mut r)? as usize;
    let shape = if rank == 1 { vec![e0] } else { vec![e0, e1] };
    let numel: usize = shape.iter().product();
    let data = read_values(&mut r, numel, dtype)?;
    Tensor::new(shape, data).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trips_both_dtypes() {
        let dir = tempdir().unwrap();
        let t = Tensor::from_rows(&[&[1.5, -2.25, 3.0], &[0.0, 1e-7, -4.5]]).unwrap();

        let p64 = dir.path().join("a.f64.bin");
        write_tensor(&p64, &t, Dtype::F64).unwrap();
        assert_eq!(read_tensor(&p64).unwrap(), t);

        let p32 = dir.path().join("a.f32.bin");
        write_tensor(&p32, &t, Dtype::F32).unwrap();
        let back = read_tensor(&p32).unwrap();
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn header_is_sixteen_bytes() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.bin");
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        write_tensor(&p, &t, Dtype::F32).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 16 + 3 * 4);
        assert_eq!(&bytes[..4], b"AVTN");
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        std::fs::write(&p, b"NOPE00000000000000000").unwrap();
        assert!(matches!(read_tensor(&p), Err(CliError::Format(_))));
    }
}
