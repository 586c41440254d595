//! PTCN tensor container: a minimal little-endian binary format for single
//! tensors, also embedded verbatim inside checkpoint files.
//!
//! Layout: magic `PTCN` · version u32 (=1) · dtype u32 (0 = f32, 1 = f64) ·
//! rank u32 · rank × u64 extents · row-major payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"PTCN";
pub const VERSION: u32 = 1;

/// A tensor whose element type was determined by the file, not the caller.
#[derive(Debug, Clone)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyTensor::F32(_) => Dtype::F32,
            AnyTensor::F64(_) => Dtype::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Convert to the requested element type, casting element-wise when the
    /// stored dtype differs.
    pub fn cast<T: Scalar>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => convert(&t),
            AnyTensor::F64(t) => convert(&t),
        }
    }

    /// Extract without conversion; errors if the stored dtype differs.
    pub fn exact<T: Scalar>(self, ctx: &Path) -> Result<Tensor<T>> {
        let found = self.dtype();
        if found != T::DTYPE {
            return Err(Error::format(
                ctx,
                format!("dtype mismatch: file holds {found:?}, expected {:?}", T::DTYPE),
            ));
        }
        Ok(self.cast())
    }
}

fn convert<S: Scalar, T: Scalar>(t: &Tensor<S>) -> Tensor<T> {
    let data: Vec<T> = t.data().iter().map(|&v| T::from_f64(v.to_f64())).collect();
    Tensor::new_unchecked(t.shape().to_vec(), data)
}

pub fn write_tensor_to<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&T::DTYPE.code().to_le_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let data = t.data();
    let mut buf = Vec::with_capacity(data.len() * T::DTYPE.byte_width());
    for &v in data.iter() {
        v.write_le(&mut buf);
    }
    w.write_all(&buf)
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_tensor_to(&mut w, t).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_exact_ctx<R: Read>(r: &mut R, buf: &mut [u8], ctx: &Path, what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::format(ctx, format!("truncated while reading {what}: {e}")))
}

fn read_u32<R: Read>(r: &mut R, ctx: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_ctx(r, &mut b, ctx, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensor_from<R: Read>(r: &mut R, ctx: &Path) -> Result<AnyTensor> {
    let mut magic = [0u8; 4];
    read_exact_ctx(r, &mut magic, ctx, "magic")?;
    if &magic != MAGIC {
        return Err(Error::format(ctx, format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = read_u32(r, ctx, "version")?;
    if version != VERSION {
        return Err(Error::format(ctx, format!("unsupported version {version}")));
    }
    let dtype = Dtype::from_code(read_u32(r, ctx, "dtype")?)
        .ok_or_else(|| Error::format(ctx, "unknown dtype code".to_string()))?;
    let rank = read_u32(r, ctx, "rank")? as usize;
    if rank > 8 {
        return Err(Error::format(ctx, format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for i in 0..rank {
        let mut b = [0u8; 8];
        read_exact_ctx(r, &mut b, ctx, "extents")?;
        let d = u64::from_le_bytes(b);
        let d = usize::try_from(d).map_err(|_| Error::format(ctx, format!("extent {d} overflows")))?;
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| Error::format(ctx, format!("element count overflows at axis {i}")))?;
        shape.push(d);
    }
    let width = dtype.byte_width();
    let mut payload = vec![0u8; numel * width];
    read_exact_ctx(r, &mut payload, ctx, "payload")?;

    fn decode<T: Scalar>(shape: Vec<usize>, payload: &[u8], width: usize) -> Tensor<T> {
        let data: Vec<T> = payload.chunks_exact(width).map(T::read_le).collect();
        Tensor::new_unchecked(shape, data)
    }
    Ok(match dtype {
        Dtype::F32 => AnyTensor::F32(decode(shape, &payload, width)),
        Dtype::F64 => AnyTensor::F64(decode(shape, &payload, width)),
    })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let t = read_tensor_from(&mut r, path)?;
    // trailing garbage means the file is not what we think it is
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(t),
        Ok(_) => Err(Error::format(path, "trailing bytes after tensor payload".to_string())),
        Err(e) => Err(Error::io(path, e)),
    }
}
