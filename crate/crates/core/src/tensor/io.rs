//! `TVTENSOR` binary format.
//!
//! Layout: 8-byte magic `TVTENSOR`, `u8` dtype code (0 = f32, 1 = f64),
//! `u8` ndim, `ndim` little-endian `u32` dims, then the little-endian payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{DType, Storable, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TVTENSOR";

/// A tensor read from disk whose dtype is only known at runtime.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::Real32,
            AnyTensor::F64(_) => DType::Real64,
        }
    }

    /// Converts to `f64`, widening `f32` payloads.
    pub fn into_f64(self) -> Tensor<f64> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t,
        }
    }
}

pub fn write_tensor<T: Storable, W: Write>(t: &Tensor<T>, mut out: W) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(10 + 4 * t.ndim() + t.len() * T::DTYPE.size());
    buf.extend_from_slice(MAGIC);
    buf.push(T::DTYPE.code());
    buf.push(t.ndim() as u8);
    for &d in t.dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in t.data() {
        x.write_le(&mut buf);
    }
    out.write_all(&buf)
}

fn decode<T: Storable>(dims: Vec<usize>, payload: &[u8]) -> Result<Tensor<T>> {
    let size = T::DTYPE.size();
    let data = payload.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(dims, data)
}

pub fn read_tensor<R: Read>(mut input: R) -> Result<AnyTensor> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("read failed: {e}")))?;
    if bytes.len() < 10 || &bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let dtype = DType::from_code(bytes[8])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[8])))?;
    let ndim = bytes[9] as usize;
    if ndim == 0 {
        return Err(Error::Format("ndim must be >= 1".into()));
    }
    let header = 10 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Format("truncated header".into()));
    }
    let dims: Vec<usize> = bytes[10..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let expected = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::Format("dims overflow".into()))?;
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, dims {:?} need {}",
            payload.len(),
            dims,
            expected
        )));
    }
    Ok(match dtype {
        DType::Real32 => AnyTensor::F32(decode(dims, payload)?),
        DType::Real64 => AnyTensor::F64(decode(dims, payload)?),
    })
}

pub fn write_tensor_file<T: Storable>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_tensor(t, &mut buf).expect("writing to a Vec cannot fail");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_tensor(&bytes[..]).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::new(vec![2, 1], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&t, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"TVTENSOR");
        assert_eq!(buf[8], 0);
        assert_eq!(buf[9], 2);
        assert_eq!(&buf[10..14], &2u32.to_le_bytes());
        assert_eq!(&buf[14..18], &1u32.to_le_bytes());
        assert_eq!(&buf[18..22], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 26);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let t = Tensor::<f64>::from_fn(&[3, 2], |i| i as f64).unwrap();
        let mut buf = Vec::new();
        write_tensor(&t, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor(&bad[..]), Err(Error::Format(_))));

        let short = &buf[..buf.len() - 1];
        assert!(matches!(read_tensor(short), Err(Error::Format(_))));

        assert!(matches!(read_tensor(&buf[..12]), Err(Error::Format(_))));

        let mut code = buf.clone();
        code[8] = 7;
        assert!(read_tensor(&code[..]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_lossless(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64)) as f64).sin() * 1e3).collect();
            let t = Tensor::new(dims, data).unwrap();
            let mut buf = Vec::new();
            write_tensor(&t, &mut buf).unwrap();
            prop_assert_eq!(read_tensor(&buf[..]).unwrap(), AnyTensor::F64(t));
        }
    }
}
