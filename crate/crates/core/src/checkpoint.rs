//! Checkpoint files: named tensor entries (parameters, batch-norm buffers,
//! optimizer momentum under `opt.<name>`) plus the iteration counter, written
//! atomically via a temp-file rename. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{self, AnyTensor};
use crate::params::ParamSet;
use crate::tensor::{Scalar, Tensor};

pub const CKPT_MAGIC: &[u8; 8] = b"PTCKPT1\n";

/// Serializes entries in the given order. The write lands under a temporary
/// name in the target directory first, so an interrupted save never clobbers
/// an existing checkpoint.
pub fn save<'a, T, I>(path: impl AsRef<Path>, entries: I, iteration: u64) -> Result<()>
where
    T: Scalar,
    I: IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
{
    let path = path.as_ref();
    let entries: Vec<(&str, &Tensor<T>)> = entries.into_iter().collect();
    if entries.len() > u32::MAX as usize {
        return Err(Error::format(path, "too many checkpoint entries"));
    }
    {
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &entries {
            if name.len() > u16::MAX as usize {
                return Err(Error::format(path, format!("entry name too long: {name:.40}…")));
            }
            if !seen.insert(*name) {
                return Err(Error::format(path, format!("duplicate checkpoint entry {name:?}")));
            }
        }
    }

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "checkpoint path has no file name"))?
        .to_string_lossy()
        .into_owned();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));

    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let werr = |e: std::io::Error| Error::io(&tmp, e);
        w.write_all(CKPT_MAGIC).map_err(werr)?;
        w.write_all(&(entries.len() as u32).to_le_bytes()).map_err(werr)?;
        for (name, tensor) in &entries {
            w.write_all(&(name.len() as u16).to_le_bytes()).map_err(werr)?;
            w.write_all(name.as_bytes()).map_err(werr)?;
            io::write_tensor_to(&mut w, *tensor).map_err(werr)?;
        }
        w.write_all(&iteration.to_le_bytes()).map_err(werr)?;
        w.flush().map_err(werr)?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A loaded checkpoint: entries in file order plus a name index.
pub struct Snapshot {
    entries: Vec<(String, AnyTensor)>,
    index: std::collections::HashMap<String, usize>,
    pub iteration: u64,
}

impl Snapshot {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|e| Error::format(path, format!("truncated header: {e}")))?;
        if &magic != CKPT_MAGIC {
            return Err(Error::format(path, format!("bad checkpoint magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)
            .map_err(|e| Error::format(path, format!("truncated entry count: {e}")))?;
        let count = u32::from_le_bytes(b4) as usize;

        let mut entries = Vec::with_capacity(count);
        let mut index = std::collections::HashMap::with_capacity(count);
        for i in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2)
                .map_err(|e| Error::format(path, format!("truncated name length of entry {i}: {e}")))?;
            let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
            r.read_exact(&mut name)
                .map_err(|e| Error::format(path, format!("truncated name of entry {i}: {e}")))?;
            let name = String::from_utf8(name)
                .map_err(|e| Error::format(path, format!("entry {i} name is not UTF-8: {e}")))?;
            let tensor = io::read_tensor_from(&mut r, path)?;
            if index.insert(name.clone(), entries.len()).is_some() {
                return Err(Error::format(path, format!("duplicate checkpoint entry {name:?}")));
            }
            entries.push((name, tensor));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)
            .map_err(|e| Error::format(path, format!("truncated iteration counter: {e}")))?;
        let iteration = u64::from_le_bytes(b8);
        let mut probe = [0u8; 1];
        if r.read(&mut probe).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::format(path, "trailing bytes after checkpoint payload"));
        }
        Ok(Self { entries, index, iteration })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&AnyTensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    /// Copies entries into every tensor of `set` (matched by name, with an
    /// optional name prefix in the file), requiring exact dtype and shape.
    pub fn apply<T: Scalar>(&self, set: &ParamSet<T>, prefix: &str, ctx: &Path) -> Result<()> {
        for (name, tensor) in set.iter() {
            let full = format!("{prefix}{name}");
            let stored = self
                .get(&full)
                .ok_or_else(|| Error::format(ctx, format!("checkpoint is missing entry {full:?}")))?;
            if stored.dtype() != T::DTYPE {
                return Err(Error::format(
                    ctx,
                    format!("entry {full:?} holds {:?}, expected {:?}", stored.dtype(), T::DTYPE),
                ));
            }
            let loaded = stored.clone().cast::<T>();
            if loaded.shape() != tensor.shape() {
                return Err(Error::format(
                    ctx,
                    format!(
                        "entry {full:?} has shape {:?}, model expects {:?}",
                        loaded.shape(),
                        tensor.shape()
                    ),
                ));
            }
            tensor.data_mut().copy_from_slice(&loaded.data());
        }
        Ok(())
    }
}
