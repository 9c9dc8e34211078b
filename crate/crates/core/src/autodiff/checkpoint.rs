//! Named-tensor checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  b"SRCNCKPT"
//! version  u32      currently 1
//! count    u32      number of tensors
//! per tensor:
//!   name_len u32, name UTF-8 bytes,
//!   rank     u32, dims u64 * rank,
//!   payload  f32 * product(dims), row-major
//! ```
//!
//! Values are stored as `f32`; loading widens back to `f64`, so a save/load
//! round trip quantizes parameters once.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use super::{Tensor, TensorError};

const MAGIC: &[u8; 8] = b"SRCNCKPT";
const VERSION: u32 = 1;

/// Ordered name → tensor map. Iteration (and file) order is name order, so
/// files are byte-stable for equal contents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedTensors(BTreeMap<String, Tensor>);

impl NamedTensors {
    pub fn new() -> Self {
        NamedTensors::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.0.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        let mut out = io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut out)
    }

    pub fn load(path: &Path) -> Result<Self, TensorError> {
        let mut input = io::BufReader::new(std::fs::File::open(path)?);
        Self::read(&mut input)
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<(), TensorError> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.0.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.0 {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(tensor.rank() as u32).to_le_bytes())?;
            for &d in tensor.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in tensor.data() {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self, TensorError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::BadCheckpoint("magic bytes mismatch".into()));
        }
        let version = read_u32(input)?;
        if version != VERSION {
            return Err(TensorError::BadCheckpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let count = read_u32(input)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(input)? as usize;
            let mut name = vec![0u8; name_len];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| TensorError::BadCheckpoint("tensor name is not UTF-8".into()))?;
            let rank = read_u32(input)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                input.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            let mut b = [0u8; 4];
            for _ in 0..len {
                input.read_exact(&mut b)?;
                data.push(f32::from_le_bytes(b) as f64);
            }
            tensors.insert(name, Tensor::from_vec(&shape, data)?);
        }
        Ok(NamedTensors(tensors))
    }
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
