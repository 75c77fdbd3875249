//! `GSDT` binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"GSDT" | version: u8 = 1 | dtype: u8 (1=f32, 2=f64, 3=u8) | rank: u8
//!         | extents: rank × u64 | payload: row-major elements
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DType, Element, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GSDT";
pub const VERSION: u8 = 1;

/// A tensor of whatever element type the file declared.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8(Tensor<u8>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
            AnyTensor::U8(_) => DType::U8,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
            AnyTensor::U8(t) => t.shape(),
        }
    }

    /// Float view, widening or narrowing between f32 and f64 as needed.
    pub fn into_real<T: Real>(self) -> Result<Tensor<T>> {
        match self {
            AnyTensor::F32(t) => Ok(t.cast()),
            AnyTensor::F64(t) => Ok(t.cast()),
            AnyTensor::U8(_) => Err(Error::Format("expected a float tensor, found u8".into())),
        }
    }

    pub fn into_u8(self) -> Result<Tensor<u8>> {
        match self {
            AnyTensor::U8(t) => Ok(t),
            other => Err(Error::Format(format!(
                "expected a u8 tensor, found {:?}",
                other.dtype()
            ))),
        }
    }
}

pub fn encode<T: Element>(tensor: &Tensor<T>) -> Result<Vec<u8>> {
    if tensor.rank() > u8::MAX as usize {
        return Err(Error::Format(format!("rank {} too large", tensor.rank())));
    }
    let mut out = Vec::with_capacity(7 + 8 * tensor.rank() + tensor.numel() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.push(tensor.rank() as u8);
    for &e in tensor.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

pub fn write<T: Element, W: Write>(tensor: &Tensor<T>, mut w: W) -> Result<()> {
    w.write_all(&encode(tensor)?)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated {what}: {e}")))?;
    Ok(buf)
}

fn decode_payload<T: Element, R: Read>(r: &mut R, shape: Vec<usize>) -> Result<Tensor<T>> {
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::Format("extent product overflows".into()))?;
    let size = T::DTYPE.size();
    let bytes = read_exact(r, numel * size, "payload")?;
    let data = bytes.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(shape, data)
}

pub fn read<R: Read>(mut r: R) -> Result<AnyTensor> {
    let head = read_exact(&mut r, 7, "header")?;
    if &head[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &head[..4])));
    }
    if head[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", head[4])));
    }
    let dtype = DType::from_code(head[5])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", head[5])))?;
    let rank = head[6] as usize;
    let ext = read_exact(&mut r, 8 * rank, "extents")?;
    let shape = ext
        .chunks_exact(8)
        .map(|c| {
            let v = u64::from_le_bytes(c.try_into().expect("8 bytes"));
            usize::try_from(v).map_err(|_| Error::Format(format!("extent {v} too large")))
        })
        .collect::<Result<Vec<_>>>()?;
    let tensor = match dtype {
        DType::F32 => AnyTensor::F32(decode_payload(&mut r, shape)?),
        DType::F64 => AnyTensor::F64(decode_payload(&mut r, shape)?),
        DType::U8 => AnyTensor::U8(decode_payload(&mut r, shape)?),
    };
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(tensor)
}

pub fn save<T: Element>(tensor: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write(tensor, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    read(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let bytes = encode(&t).unwrap();
        let mut expect = b"GSDT".to_vec();
        expect.extend_from_slice(&[1, 1, 2]);
        expect.extend_from_slice(&2u64.to_le_bytes());
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn round_trips_each_dtype() {
        let a = Tensor::<f64>::from_fn(&[2, 3, 1], |i| i[1] as f64 * 0.1 - i[0] as f64);
        assert_eq!(read(&encode(&a).unwrap()[..]).unwrap(), AnyTensor::F64(a));
        let b = Tensor::<u8>::from_fn(&[4], |i| i[0] as u8 * 5);
        assert_eq!(read(&encode(&b).unwrap()[..]).unwrap(), AnyTensor::U8(b));
        let s = Tensor::<f32>::new(vec![], vec![7.0]).unwrap();
        assert_eq!(read(&encode(&s).unwrap()[..]).unwrap(), AnyTensor::F32(s));
    }

    #[test]
    fn rejects_unknown_magic_version_and_dtype() {
        let t = Tensor::<u8>::zeros(&[2]);
        let good = encode(&t).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read(&bad[..]), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(read(&bad[..]), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[5] = 9;
        assert!(matches!(read(&bad[..]), Err(Error::Format(_))));
        assert!(read(&good[..good.len() - 1]).is_err());
        let mut long = good;
        long.push(0);
        assert!(read(&long[..]).is_err());
    }

    #[test]
    fn dtype_conversions() {
        let t = Tensor::<f32>::full(&[2], 0.5);
        let any = AnyTensor::F32(t);
        assert_eq!(any.clone().into_real::<f64>().unwrap().data(), &[0.5, 0.5]);
        assert!(any.into_u8().is_err());
    }
}
