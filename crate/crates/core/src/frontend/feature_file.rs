//! Binary feature files: `"CNFB"`, u32 LE frame count, u32 LE dimension,
//! then row-major f32 LE values.

use std::fs;
use std::path::Path;

use super::mel::AcousticFeatures;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"CNFB";

pub fn encode_features(f: &AcousticFeatures) -> Vec<u8> {
    let (t, d) = (f.num_frames(), f.dim());
    let mut out = Vec::with_capacity(12 + 4 * t * d);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in f.frames.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<AcousticFeatures> {
    let bad = |detail: &str| Error::UnsupportedFormat {
        field: "feature file".into(),
        detail: detail.into(),
    };
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("missing CNFB magic"));
    }
    let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != 4 * t * d {
        return Err(bad(&format!("header says {t}x{d} values, body holds {} bytes", body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(AcousticFeatures::from_frames(Tensor::new(&[t, d], data)?))
}

pub fn write_features(path: impl AsRef<Path>, f: &AcousticFeatures) -> Result<()> {
    fs::write(path, encode_features(f))?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<AcousticFeatures> {
    decode_features(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let f = AcousticFeatures::from_frames(Tensor::from_f64(&[2, 80], &[0.5; 160]).unwrap());
        let bytes = encode_features(&f);
        assert_eq!(&bytes[..4], b"CNFB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 80);
        assert_eq!(bytes.len(), 12 + 2 * 80 * 4);
        assert_eq!(decode_features(&bytes).unwrap(), f);
    }

    #[test]
    fn truncated_body_is_rejected() {
        let f = AcousticFeatures::from_frames(Tensor::zeros(&[3, 80]));
        let bytes = encode_features(&f);
        assert!(decode_features(&bytes[..bytes.len() - 4]).is_err());
        assert!(decode_features(b"XXXX").is_err());
    }
}
