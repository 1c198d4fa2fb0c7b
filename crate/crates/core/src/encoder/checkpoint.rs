//! Binary checkpoint format.
//!
//! ```text
//! "CRNK"  u32 version
//! u64 vocab_size  u32 dim  u32 hidden  u32 pooling (0 = mean, 1 = attention)
//! tensors in ParamSet::tensors() order, little-endian f64
//! ```

use std::path::Path;

use super::params::{EncoderParams, EncoderShape, ParamSet, Pooling};
use crate::binio::{put_f64s, put_u32, put_u64, to_u32, ByteReader};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CRNK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &EncoderParams) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_u64(&mut buf, params.shape.vocab_size as u64);
    put_u32(&mut buf, to_u32(params.shape.dim, "dim")?);
    put_u32(&mut buf, to_u32(params.shape.hidden, "hidden")?);
    put_u32(&mut buf, params.pooling.code());
    for (_, _, t) in params.weights.tensors() {
        put_f64s(&mut buf, t);
    }
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EncoderParams> {
    let mut r = ByteReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let vocab_size = r.u64()?;
    let dim = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let pooling_offset = r.offset();
    let code = r.u32()?;
    let pooling = Pooling::from_code(code).ok_or_else(|| Error::Corrupt {
        offset: pooling_offset,
        message: format!("unknown pooling mode {code}"),
    })?;
    let vocab_size = usize::try_from(vocab_size).map_err(|_| Error::Corrupt {
        offset: 8,
        message: "vocabulary size overflows".into(),
    })?;
    let shape = EncoderShape {
        vocab_size,
        dim,
        hidden,
    };
    let floats: u64 = [
        vocab_size as u64 * dim as u64,
        2 * (4 * hidden as u64 * (dim as u64 + hidden as u64 + 1)),
        2 * hidden as u64 + 1,
    ]
    .iter()
    .sum();
    r.expect_remaining(floats * 8)?;
    let mut weights = ParamSet::zeros(&shape);
    for (_, _, t) in weights.tensors_mut() {
        r.f64_into(t)?;
    }
    Ok(EncoderParams {
        shape,
        pooling,
        weights,
    })
}

pub fn save_checkpoint(params: &EncoderParams, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> EncoderParams {
        let shape = EncoderShape {
            vocab_size: 7,
            dim: 3,
            hidden: 2,
        };
        let mut p = EncoderParams::init(shape, Pooling::Attention, 9);
        p.weights.attn_weight = vec![0.1, -0.2, 0.3, f64::MIN_POSITIVE];
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = params();
        let bytes = encode_checkpoint(&p).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.shape, p.shape);
        assert_eq!(back.pooling, p.pooling);
        for ((_, _, a), (_, _, b)) in p
            .weights
            .tensors()
            .iter()
            .zip(back.weights.tensors().iter())
        {
            let a: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_checkpoint(&params()).unwrap();

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(decode_checkpoint(&bad)
            .unwrap_err()
            .to_string()
            .contains("bad magic"));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(Error::VersionMismatch { found: 9, .. })
        ));

        let cut = &bytes[..bytes.len() - 5];
        match decode_checkpoint(cut) {
            Err(Error::Truncated {
                expected, actual, ..
            }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, cut.len() as u64);
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut bad = bytes.clone();
        bad[24] = 7;
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(Error::Corrupt { offset: 24, .. })
        ));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode_checkpoint(&long),
            Err(Error::Corrupt { .. })
        ));
    }
}
