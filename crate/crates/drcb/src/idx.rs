//! IDX1 label-file ingestion (the classic big-endian digit-label format).
//!
//! Only label files are read: magic `0x00000801`, a big-endian u32 item
//! count, then one unsigned byte per label. Pixel files (magic 0x00000803)
//! are deliberately not supported — the simulator consumes labels only.

use std::fs;
use std::path::Path;
use thiserror::Error;

pub const IDX1_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("file too short: {0} bytes, need at least 8 for the header")]
    TooShort(usize),
    #[error("bad magic 0x{0:08x}, expected 0x00000801 (IDX1 label file)")]
    BadMagic(u32),
    #[error("truncated: header declares {declared} labels but {present} bytes follow")]
    Truncated { declared: usize, present: usize },
    #[error("trailing garbage: {0} bytes past the declared label block")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Bit-exact parse of an IDX1 label buffer.
pub fn parse_idx1_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    if bytes.len() < 8 {
        return Err(IdxError::TooShort(bytes.len()));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if magic != IDX1_LABEL_MAGIC {
        return Err(IdxError::BadMagic(magic));
    }
    let count = u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(IdxError::Truncated {
            declared: count,
            present: body.len(),
        });
    }
    if body.len() > count {
        return Err(IdxError::TrailingBytes(body.len() - count));
    }
    Ok(body.to_vec())
}

pub fn load_idx1_labels(path: &Path) -> Result<Vec<u8>, IdxError> {
    let bytes = fs::read(path)?;
    parse_idx1_labels(&bytes)
}

/// Serialize labels back into the IDX1 wire format (used by tests and the
/// `ingest-idx` converter round-trip).
pub fn encode_idx1_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX1_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_well_formed_file() {
        let bytes = encode_idx1_labels(&[7, 2, 1, 0, 9]);
        assert_eq!(parse_idx1_labels(&bytes).unwrap(), vec![7, 2, 1, 0, 9]);
    }

    #[test]
    fn header_is_big_endian() {
        // 5 labels: count must be 00 00 00 05, not 05 00 00 00.
        let mut bytes = vec![0x00, 0x00, 0x08, 0x01, 0x05, 0x00, 0x00, 0x00];
        bytes.extend_from_slice(&[1; 5]);
        // little-endian count of 5 reads as 83886080 labels -> truncated
        assert!(matches!(
            parse_idx1_labels(&bytes),
            Err(IdxError::Truncated { .. })
        ));
    }

    #[test]
    fn rejects_pixel_magic() {
        let mut bytes = 0x0000_0803u32.to_be_bytes().to_vec();
        bytes.extend_from_slice(&0u32.to_be_bytes());
        assert!(matches!(
            parse_idx1_labels(&bytes),
            Err(IdxError::BadMagic(0x0000_0803))
        ));
    }

    #[test]
    fn rejects_truncated_and_trailing() {
        let mut bytes = encode_idx1_labels(&[1, 2, 3]);
        bytes.pop();
        assert!(matches!(
            parse_idx1_labels(&bytes),
            Err(IdxError::Truncated { declared: 3, present: 2 })
        ));

        let mut bytes = encode_idx1_labels(&[1, 2, 3]);
        bytes.push(0xff);
        assert!(matches!(
            parse_idx1_labels(&bytes),
            Err(IdxError::TrailingBytes(1))
        ));

        assert!(matches!(parse_idx1_labels(&[0, 0]), Err(IdxError::TooShort(2))));
    }

    #[test]
    fn empty_label_block_is_valid_idx1() {
        // format-level: zero labels parse; the env layer rejects empty sources
        let bytes = encode_idx1_labels(&[]);
        assert_eq!(parse_idx1_labels(&bytes).unwrap(), Vec::<u8>::new());
    }
}
