use thiserror::Error;

use crate::binarizer::{pack_bits, unpack_bits};
use crate::link::interleave::Scheme;

pub const FRAME_MAGIC: &[u8; 4] = b"DS2C";
pub const FRAME_VERSION: u8 = 1;
/// magic + version + 3 dims + scheme id + scheme param + binarizer seed
pub const FRAME_HEADER_LEN: usize = 4 + 1 + 6 + 1 + 8 + 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    BadCrc { stored: u32, computed: u32 },
    #[error("truncated: {len} bytes, need {need}")]
    Truncated { len: usize, need: usize },
    #[error("length mismatch: {len} bytes, expected {expected}")]
    Length { len: usize, expected: usize },
    #[error("unknown interleaver scheme id {0}")]
    UnknownScheme(u8),
    #[error("latent dimension {0} does not fit in 16 bits")]
    Oversize(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameHeader {
    pub latent_shape: [usize; 3],
    pub scheme: Scheme,
    pub binarizer_seed: u64,
}

impl FrameHeader {
    pub fn total_bits(&self) -> usize {
        self.latent_shape.iter().product()
    }

    pub fn payload_len(&self) -> usize {
        self.total_bits().div_ceil(8)
    }
}

/// Serialize a bit stream (in transmission order) with its header and CRC32 trailer.
pub fn frame_encode(header: &FrameHeader, bits: &[bool]) -> Result<Vec<u8>, FrameError> {
    if bits.len() != header.total_bits() {
        return Err(FrameError::Length { len: bits.len(), expected: header.total_bits() });
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + header.payload_len() + 4);
    out.extend_from_slice(FRAME_MAGIC);
    out.push(FRAME_VERSION);
    for &d in &header.latent_shape {
        let d16 = u16::try_from(d).map_err(|_| FrameError::Oversize(d))?;
        out.extend_from_slice(&d16.to_le_bytes());
    }
    out.push(header.scheme.id());
    out.extend_from_slice(&header.scheme.param().to_le_bytes());
    out.extend_from_slice(&header.binarizer_seed.to_le_bytes());
    out.extend_from_slice(&pack_bits(bits));
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn frame_decode(bytes: &[u8]) -> Result<(FrameHeader, Vec<bool>), FrameError> {
    if bytes.len() < FRAME_HEADER_LEN + 4 {
        return Err(FrameError::Truncated { len: bytes.len(), need: FRAME_HEADER_LEN + 4 });
    }
    if &bytes[..4] != FRAME_MAGIC {
        return Err(FrameError::BadMagic);
    }
    if bytes[4] != FRAME_VERSION {
        return Err(FrameError::BadVersion(bytes[4]));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let latent_shape = [u16_at(5), u16_at(7), u16_at(9)];
    let scheme_id = bytes[11];
    let param = u64_at(12);
    let binarizer_seed = u64_at(20);
    let scheme = Scheme::from_parts(scheme_id, param).ok_or(FrameError::UnknownScheme(scheme_id))?;
    let header = FrameHeader { latent_shape, scheme, binarizer_seed };
    let expected = FRAME_HEADER_LEN + header.payload_len() + 4;
    if bytes.len() < expected {
        return Err(FrameError::Truncated { len: bytes.len(), need: expected });
    }
    if bytes.len() > expected {
        return Err(FrameError::Length { len: bytes.len(), expected });
    }
    let body = &bytes[..expected - 4];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FrameError::BadCrc { stored, computed });
    }
    let bits = unpack_bits(&body[FRAME_HEADER_LEN..], header.total_bits()).expect("length validated above");
    Ok((header, bits))
}
