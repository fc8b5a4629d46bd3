//! Single-tensor `.nt` files:
//! `"NTNS"`, u32 version (1), u8 dtype (0 = F32, 1 = I64), u8 rank,
//! rank x u64 dims, payload. All little-endian.

use std::fs;
use std::path::Path;

use super::{DType, NmifError, TensorData};

const MAGIC: &[u8; 4] = b"NTNS";
const VERSION: u32 = 1;

pub fn encode_nt(t: &TensorData) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 8 * t.rank() + t.numel() * t.dtype().size_in_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(t.dtype().code());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&t.to_le_bytes());
    out
}

pub fn decode_nt(bytes: &[u8], allow_non_finite: bool) -> Result<TensorData, NmifError> {
    let truncated = || NmifError::SchemaViolation {
        node_id: None,
        reason: "truncated tensor file".into(),
    };
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(NmifError::MagicMismatch("missing NTNS magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(NmifError::VersionUnsupported(version as u64));
    }
    let dtype = DType::from_code(bytes[8]).ok_or_else(|| NmifError::SchemaViolation {
        node_id: None,
        reason: format!("unknown dtype code {}", bytes[8]),
    })?;
    let rank = bytes[9] as usize;
    let header = 10 + 8 * rank;
    if bytes.len() < header {
        return Err(truncated());
    }
    let shape: Vec<usize> = bytes[10..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let want = shape
        .iter()
        .try_fold(dtype.size_in_bytes(), |acc, &d| acc.checked_mul(d))
        .ok_or_else(truncated)?;
    if bytes.len() - header != want {
        return Err(truncated());
    }
    let t = TensorData::from_le_bytes(dtype, shape, &bytes[header..])?;
    if !allow_non_finite && t.non_finite_count() > 0 {
        return Err(NmifError::NonFinite("tensor file".into()));
    }
    Ok(t)
}

pub fn write_nt(path: &Path, t: &TensorData) -> Result<(), NmifError> {
    fs::write(path, encode_nt(t)).map_err(|e| NmifError::io(path, e))
}

pub fn read_nt(path: &Path, allow_non_finite: bool) -> Result<TensorData, NmifError> {
    let bytes = fs::read(path).map_err(|e| NmifError::io(path, e))?;
    decode_nt(&bytes, allow_non_finite).map_err(|e| match e {
        NmifError::NonFinite(_) => NmifError::NonFinite(path.display().to_string()),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = TensorData::from_i64(vec![2], vec![7, -1]).unwrap();
        let b = encode_nt(&t);
        assert_eq!(&b[..4], b"NTNS");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(b[8], 1);
        assert_eq!(b[9], 1);
        assert_eq!(&b[10..18], &2u64.to_le_bytes());
        assert_eq!(&b[18..26], &7i64.to_le_bytes());
        assert_eq!(decode_nt(&b, false).unwrap(), t);
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(decode_nt(b"NOPE\x01\0\0\0\0\0", false), Err(NmifError::MagicMismatch(_))));
        let t = TensorData::from_f32(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = encode_nt(&t);
        assert!(decode_nt(&b[..b.len() - 1], false).is_err());
    }

    #[test]
    fn non_finite_needs_opt_in() {
        let t = TensorData::from_f32(vec![1], vec![f32::INFINITY]).unwrap();
        let b = encode_nt(&t);
        assert!(matches!(decode_nt(&b, false), Err(NmifError::NonFinite(_))));
        assert_eq!(decode_nt(&b, true).unwrap(), t);
    }
}
