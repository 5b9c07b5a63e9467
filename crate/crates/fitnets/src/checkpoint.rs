//! Binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `FITN` |
//! | 4 | format version (u32) |
//! | 8 | architecture text length (u64) |
//! | n | architecture text, canonical form of [`crate::archfile`] |
//! | 8·k | every parameter scalar as f64, in declaration order |
//! | 8 | scalar count `k` (u64) |

use std::path::Path;

use fitnets_core::netarch::ArchitectureSpec;
use fitnets_core::train::{param_shapes, ParameterSet};
use fitnets_core::{Scalar, Tensor};

use crate::archfile::{parse_arch, write_arch};
use crate::error::{FitError, Result};
use crate::report::write_atomic;

pub const MAGIC: &[u8; 4] = b"FITN";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(arch: &ArchitectureSpec, params: &ParameterSet) -> Vec<u8> {
    let text = write_arch(arch);
    let count = params.scalar_count();
    let mut out = Vec::with_capacity(24 + text.len() + 8 * count as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for t in params.tensors() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f64).to_le_bytes());
        }
    }
    out.extend_from_slice(&count.to_le_bytes());
    out
}

fn bad(msg: impl Into<String>) -> FitError {
    FitError::Checkpoint(msg.into())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(bad(format!("truncated while reading {what}: need {n} bytes, {} left", bytes.len())));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn u64_le(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().expect("8 bytes"))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ArchitectureSpec, ParameterSet)> {
    let mut rest = bytes;
    if take(&mut rest, 4, "magic")? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(take(&mut rest, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version}, expected {VERSION}")));
    }
    let text_len = u64_le(take(&mut rest, 8, "architecture length")?) as usize;
    let text = std::str::from_utf8(take(&mut rest, text_len, "architecture")?)
        .map_err(|_| bad("architecture text is not UTF-8"))?;
    let arch = parse_arch(text, "checkpoint")?;
    let shapes = param_shapes(&arch)?;
    let expected: usize = shapes
        .iter()
        .flat_map(|(_, pair)| pair.iter())
        .map(|s| s.iter().product::<usize>())
        .sum();
    if rest.len() != 8 * expected + 8 {
        return Err(bad(format!(
            "expected {expected} scalars plus footer ({} bytes), found {} bytes",
            8 * expected + 8,
            rest.len()
        )));
    }
    let footer = u64_le(&rest[8 * expected..]);
    if footer != expected as u64 {
        return Err(bad(format!("footer records {footer} scalars, the architecture has {expected}")));
    }
    let mut values = rest[..8 * expected]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as Scalar);
    let mut tensors = Vec::with_capacity(2 * shapes.len());
    for (_, pair) in &shapes {
        for shape in pair {
            let n = shape.iter().product();
            tensors.push(Tensor::new(shape, values.by_ref().take(n).collect())?);
        }
    }
    let params = ParameterSet::from_tensors(&arch, tensors)?;
    Ok((arch, params))
}

pub fn save_checkpoint(path: &Path, arch: &ArchitectureSpec, params: &ParameterSet) -> Result<()> {
    write_atomic(path, &encode_checkpoint(arch, params))
}

pub fn load_checkpoint(path: &Path) -> Result<(ArchitectureSpec, ParameterSet)> {
    let bytes = std::fs::read(path).map_err(|e| FitError::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        FitError::Checkpoint(m) => FitError::Checkpoint(format!("{}: {m}", path.display())),
        e => e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use fitnets_core::netarch::build_paper_arch;
    use fitnets_core::train::init_params;

    #[test]
    fn bit_exact_round_trip() {
        let a = build_paper_arch("desk-student").unwrap();
        let p = init_params(&a, 0.005, 3).unwrap();
        let bytes = encode_checkpoint(&a, &p);
        let (a2, p2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(a2, a);
        assert_eq!(p2, p);
        assert_eq!(encode_checkpoint(&a2, &p2), bytes);
        assert_eq!(&bytes[..4], b"FITN");
        assert_eq!(u64_le(&bytes[bytes.len() - 8..]), p.scalar_count());
    }

    #[test]
    fn corruption_is_detected() {
        let a = build_paper_arch("desk-teacher").unwrap();
        let bytes = encode_checkpoint(&a, &init_params(&a, 0.005, 1).unwrap());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut footer = bytes.clone();
        let n = footer.len();
        footer[n - 8] ^= 1;
        assert!(decode_checkpoint(&footer).unwrap_err().to_string().contains("footer"));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_checkpoint(&magic).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(decode_checkpoint(&version).unwrap_err().to_string().contains("version"));
    }
}
