//! Little-endian named-tensor container.
//!
//! Layout: magic `ADIN` | version u32 = 1 | tensor_count u32 | per tensor:
//! name_len u32, UTF-8 name, ndims u32, dims u32 x ndims, payload f32 x prod(dims).
//!
//! Values are `f64` in memory and `f32` on disk; the narrowing happens in
//! [`encode`] and nowhere else.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

pub const MAGIC: [u8; 4] = *b"ADIN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContainerError {
    #[error("no tensors")]
    NoTensors,
    #[error("empty tensor name")]
    EmptyName,
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("tensor {name:?}: dims product {expected} != value count {actual}")]
    DimsMismatch { name: String, expected: usize, actual: usize },
    #[error("dimension too large for u32")]
    Oversize,
    #[error("bad magic")]
    BadMagic,
    #[error("version mismatch: expected {VERSION}, found {0}")]
    Version(u32),
    #[error("truncated")]
    Truncated,
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("trailing bytes after last tensor")]
    TrailingBytes,
    #[error("missing tensor {0:?}")]
    Missing(String),
}

/// A named, shaped block of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, values: Vec<f64>) -> Self {
        Self { name: name.into(), dims, values }
    }

    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        Self::new(name, alloc::vec![1], alloc::vec![value])
    }
}

/// Looks up a tensor by name.
pub fn find<'a>(tensors: &'a [NamedTensor], name: &str) -> Result<&'a NamedTensor, ContainerError> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| ContainerError::Missing(name.into()))
}

fn validate(tensors: &[NamedTensor]) -> Result<(), ContainerError> {
    if tensors.is_empty() {
        return Err(ContainerError::NoTensors);
    }
    let mut seen = BTreeSet::new();
    for t in tensors {
        if t.name.is_empty() {
            return Err(ContainerError::EmptyName);
        }
        if !seen.insert(t.name.as_str()) {
            return Err(ContainerError::DuplicateName(t.name.clone()));
        }
        let expected: usize = t.dims.iter().product();
        if expected != t.values.len() {
            return Err(ContainerError::DimsMismatch {
                name: t.name.clone(),
                expected,
                actual: t.values.len(),
            });
        }
        if t.name.len() > u32::MAX as usize
            || t.dims.len() > u32::MAX as usize
            || t.dims.iter().any(|&d| d > u32::MAX as usize)
        {
            return Err(ContainerError::Oversize);
        }
    }
    Ok(())
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>, ContainerError> {
    validate(tensors)?;
    let payload: usize = tensors
        .iter()
        .map(|t| 8 + t.name.len() + 4 * t.dims.len() + 4 * t.values.len())
        .sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.bytes.len() < n {
            return Err(ContainerError::Truncated);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>, ContainerError> {
    let mut r = Reader { bytes };
    let magic = r.take(4).map_err(|_| ContainerError::BadMagic)?;
    if magic != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ContainerError::Version(version));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = core::str::from_utf8(r.take(name_len)?).map_err(|_| ContainerError::BadName)?;
        let ndims = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndims.min(16));
        for _ in 0..ndims {
            dims.push(r.u32()? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(ContainerError::Truncated)?;
        let raw = r.take(n.checked_mul(4).ok_or(ContainerError::Truncated)?)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        tensors.push(NamedTensor { name: name.into(), dims, values });
    }
    if !r.bytes.is_empty() {
        return Err(ContainerError::TrailingBytes);
    }
    validate(&tensors)?;
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn smallest_container_layout() {
        let bytes = encode(&[NamedTensor::new("rho", vec![3], vec![0.0; 3])]).unwrap();
        // header 12 + name_len 4 + "rho" 3 + ndims 4 + dims 4 + payload 12
        assert_eq!(bytes.len(), 12 + 4 + 3 + 4 + 4 + 12);
        assert_eq!(&bytes[..4], b"ADIN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[bytes.len() - 12..], &[0u8; 12]);
    }

    #[test]
    fn empty_list_is_rejected() {
        assert_eq!(encode(&[]), Err(ContainerError::NoTensors));
    }

    #[test]
    fn duplicate_and_mismatch_are_rejected() {
        let t = NamedTensor::new("a", vec![1], vec![1.0]);
        assert!(matches!(encode(&[t.clone(), t]), Err(ContainerError::DuplicateName(_))));
        let bad = NamedTensor::new("b", vec![2, 2], vec![1.0; 3]);
        assert!(matches!(encode(&[bad]), Err(ContainerError::DimsMismatch { .. })));
        assert_eq!(encode(&[NamedTensor::new("", vec![0], vec![])]), Err(ContainerError::EmptyName));
    }

    #[test]
    fn corrupt_headers() {
        let mut bytes = encode(&[NamedTensor::scalar("x", 1.5)]).unwrap();
        let good = bytes.clone();
        bytes[0] = b'X';
        assert_eq!(decode(&bytes), Err(ContainerError::BadMagic));
        assert_eq!(decode(&good[..good.len() - 1]), Err(ContainerError::Truncated));
        let mut v2 = good.clone();
        v2[4] = 2;
        assert_eq!(decode(&v2), Err(ContainerError::Version(2)));
        assert_eq!(decode(&good[..2]), Err(ContainerError::BadMagic));
    }

    #[test]
    fn zero_sized_tensor_round_trips() {
        let ts = vec![NamedTensor::new("empty", vec![0, 3], vec![])];
        assert_eq!(decode(&encode(&ts).unwrap()).unwrap(), ts);
    }
}
