use crate::error::{Error, Result};

/// -1 -> 0, +1 -> 255, one pixel per bit.
pub fn to_image_domain(bits: &[bool]) -> Vec<u8> {
    bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
}

pub fn to_tensor_domain(bytes: &[u8]) -> Result<Vec<bool>> {
    bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(false),
            255 => Ok(true),
            other => Err(Error::domain("to_tensor_domain", format!("byte {} at index {} is not 0 or 255", other, i))),
        })
        .collect()
}
