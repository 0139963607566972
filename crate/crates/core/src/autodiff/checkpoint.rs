//! Named-tensor checkpoint files.
//!
//! Layout, all little-endian: magic `ADAW`, `u16` version, `u32` tensor
//! count, then per tensor `[u16 name_len, name bytes, u8 ndim, u32 dims…,
//! f32 data…]`. Tensors keep their written order, so re-encoding a parsed
//! file reproduces it byte for byte.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::autodiff::Tensor;

const MAGIC: [u8; 4] = *b"ADAW";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("checkpoint has {0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Serializes `(name, tensor)` pairs in the given order.
pub fn write_checkpoint<W: Write>(
    mut out: W,
    tensors: &[(String, Tensor)],
) -> Result<(), CheckpointError> {
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, tensor) in tensors {
        let bytes = name.as_bytes();
        out.write_all(&(bytes.len() as u16).to_le_bytes())?;
        out.write_all(bytes)?;
        out.write_all(&[tensor.shape().len() as u8])?;
        for dim in tensor.shape() {
            out.write_all(&(*dim as u32).to_le_bytes())?;
        }
        for v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8], CheckpointError> {
    if buf.len() < n {
        return Err(CheckpointError::Truncated);
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

fn take_u16(buf: &mut &[u8]) -> Result<u16, CheckpointError> {
    Ok(u16::from_le_bytes(take(buf, 2)?.try_into().unwrap()))
}

fn take_u32(buf: &mut &[u8]) -> Result<u32, CheckpointError> {
    Ok(u32::from_le_bytes(take(buf, 4)?.try_into().unwrap()))
}

/// Parses a whole checkpoint stream; the byte stream must end exactly at the
/// last tensor.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    let mut buf = raw.as_slice();

    if take(&mut buf, 4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = take_u16(&mut buf)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = take_u32(&mut buf)? as usize;

    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = take_u16(&mut buf)? as usize;
        let name = std::str::from_utf8(take(&mut buf, name_len)?)
            .map_err(|_| CheckpointError::BadName)?
            .to_owned();
        let ndim = take(&mut buf, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(take_u32(&mut buf)? as usize);
        }
        let len: usize = shape.iter().product();
        let data_bytes = take(&mut buf, len * 4)?;
        let data: Vec<f32> = data_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::from_vec(&shape, data).expect("length follows from dims");
        tensors.push((name, tensor));
    }
    if !buf.is_empty() {
        return Err(CheckpointError::TrailingBytes(buf.len()));
    }
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            (
                "conv1.kernels".into(),
                Tensor::from_vec(&[2, 2, 1, 1], vec![0.5, -1.25, 3.0, 0.0]).unwrap(),
            ),
            ("fc.bias".into(), Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap()),
            ("scalarish".into(), Tensor::scalar(42.0)),
        ]
    }

    #[test]
    fn round_trip_preserves_fields_and_bytes() {
        let tensors = sample();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &tensors).unwrap();

        let parsed = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(parsed.len(), tensors.len());
        for ((n1, t1), (n2, t2)) in tensors.iter().zip(&parsed) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert_eq!(t1.data(), t2.data());
        }

        let mut again = Vec::new();
        write_checkpoint(&mut again, &parsed).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn header_layout_is_stable() {
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &[]).unwrap();
        assert_eq!(bytes, vec![b'A', b'D', b'A', b'W', 1, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &sample()).unwrap();

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(
            read_checkpoint(wrong.as_slice()),
            Err(CheckpointError::BadMagic)
        ));

        for cut in [0, 3, 5, 9, bytes.len() - 1] {
            assert!(matches!(
                read_checkpoint(&bytes[..cut]),
                Err(CheckpointError::Truncated)
            ));
        }
    }

    #[test]
    fn rejects_trailing_bytes() {
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &sample()).unwrap();
        bytes.push(0);
        assert!(matches!(
            read_checkpoint(bytes.as_slice()),
            Err(CheckpointError::TrailingBytes(1))
        ));
    }
}
