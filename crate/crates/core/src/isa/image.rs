use super::{decode_instruction, encode_instruction, Instruction, IsaError};

pub const IMAGE_MAGIC: &[u8; 8] = b"DBND0001";
const WORD_BYTES: usize = 9;
const HEADER_BYTES: usize = 12;

/// Serializes instructions as magic, little-endian count, then 9 little-endian bytes each.
pub fn write_image(instrs: &[Instruction]) -> Result<Vec<u8>, IsaError> {
    let mut out = Vec::with_capacity(HEADER_BYTES + instrs.len() * WORD_BYTES);
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&(instrs.len() as u32).to_le_bytes());
    for i in instrs {
        let w = encode_instruction(i)?;
        out.extend_from_slice(&w.to_le_bytes()[..WORD_BYTES]);
    }
    Ok(out)
}

pub fn read_image(bytes: &[u8]) -> Result<Vec<Instruction>, IsaError> {
    read_image_words(bytes)?.into_iter().collect()
}

/// Like [`read_image`] but keeps undecodable words as per-instruction errors.
pub fn read_image_words(bytes: &[u8]) -> Result<Vec<Result<Instruction, IsaError>>, IsaError> {
    if bytes.len() < HEADER_BYTES || &bytes[..8] != IMAGE_MAGIC {
        return Err(IsaError::BadMagic);
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = HEADER_BYTES + count * WORD_BYTES;
    if bytes.len() < expected {
        return Err(IsaError::TruncatedImage { expected, found: bytes.len() });
    }
    Ok(bytes[HEADER_BYTES..expected]
        .chunks_exact(WORD_BYTES)
        .map(|chunk| {
            let mut buf = [0u8; 16];
            buf[..WORD_BYTES].copy_from_slice(chunk);
            decode_instruction(u128::from_le_bytes(buf))
        })
        .collect())
}
