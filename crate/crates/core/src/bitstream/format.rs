//! Version-1 container: fixed header followed by two byte-aligned parameter groups.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "N2L1"
//!      4     1  version (1)
//!      5     1  setting id
//!      6     1  flags (bit0 no-GPP, bit1 single-scale)
//!      7     2  height, big-endian
//!      9     2  width, big-endian
//!     11     2  noise seed, big-endian
//!     13     2  init seed, big-endian
//!     15     1  GPP step exponent (i8)
//!     16     1  synthesis step exponent (i8)
//!     17     .  GPP group, then synthesis group
//! ```
//!
//! Each group is the zigzag + order-0 Exp-Golomb code of its integers in
//! canonical parameter order, zero-padded to a byte boundary. The group
//! lengths follow from the setting and flags, so the stream carries no counts.

use super::golomb::{read_group, write_group, BitReader, BitWriter};
use super::quant::{check_step_exp, QuantizedModel};
use crate::error::{Error, Result};
use crate::model::{layout, ModelConfig};

pub const MAGIC: [u8; 4] = *b"N2L1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 17;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u8,
    pub setting_id: u8,
    pub flags: u8,
    pub height: u16,
    pub width: u16,
    pub seed: u16,
    pub init_seed: u16,
    pub gpp_step_exp: i8,
    pub synth_step_exp: i8,
}

impl Header {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..4].copy_from_slice(&MAGIC);
        b[4] = self.version;
        b[5] = self.setting_id;
        b[6] = self.flags;
        b[7..9].copy_from_slice(&self.height.to_be_bytes());
        b[9..11].copy_from_slice(&self.width.to_be_bytes());
        b[11..13].copy_from_slice(&self.seed.to_be_bytes());
        b[13..15].copy_from_slice(&self.init_seed.to_be_bytes());
        b[15] = self.gpp_step_exp as u8;
        b[16] = self.synth_step_exp as u8;
        b
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let n = bytes.len().min(4);
        if bytes[..n] != MAGIC[..n] {
            return Err(Error::Unsupported("not an N2L1 stream (bad magic)".into()));
        }
        if bytes.len() < 5 {
            return Err(Error::malformed(
                bytes.len() as u64 * 8,
                "stream truncated inside the header",
            ));
        }
        if bytes[4] != VERSION {
            return Err(Error::Unsupported(format!(
                "stream version {} (expected {VERSION})",
                bytes[4]
            )));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::malformed(
                bytes.len() as u64 * 8,
                "stream truncated inside the header",
            ));
        }
        let u16_at = |i: usize| u16::from_be_bytes([bytes[i], bytes[i + 1]]);
        let h = Header {
            version: bytes[4],
            setting_id: bytes[5],
            flags: bytes[6],
            height: u16_at(7),
            width: u16_at(9),
            seed: u16_at(11),
            init_seed: u16_at(13),
            gpp_step_exp: bytes[15] as i8,
            synth_step_exp: bytes[16] as i8,
        };
        h.config()?;
        if h.height == 0 || h.width == 0 {
            return Err(Error::malformed(7 * 8, "zero image dimension"));
        }
        for (exp, at) in [(h.gpp_step_exp, 15), (h.synth_step_exp, 16)] {
            check_step_exp(exp).map_err(|e| Error::malformed(at * 8, e.to_string()))?;
        }
        Ok(h)
    }

    pub fn config(&self) -> Result<ModelConfig> {
        ModelConfig::from_header(self.setting_id, self.flags)
    }

    /// Parameter counts of the two groups implied by the setting and flags.
    pub fn group_sizes(&self) -> Result<(usize, usize)> {
        let (gpp, synth) = layout(&self.config()?);
        let count = |specs: &[crate::model::ParamSpec]| specs.iter().map(|s| s.shape.numel()).sum();
        Ok((count(&gpp), count(&synth)))
    }
}

/// A parsed stream and the byte length of each part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Parsed {
    pub header: Header,
    pub params: QuantizedModel,
    pub gpp_bytes: usize,
    pub synth_bytes: usize,
}

impl Parsed {
    pub fn total_bytes(&self) -> usize {
        HEADER_LEN + self.gpp_bytes + self.synth_bytes
    }

    pub fn bpp(&self) -> f64 {
        bpp(self.total_bytes(), self.header.height.into(), self.header.width.into())
    }
}

pub fn bpp(bytes: usize, height: usize, width: usize) -> f64 {
    (8 * bytes) as f64 / (height * width) as f64
}

/// Codes the groups only, each zero-padded to a byte.
pub fn encode_payload(gpp: &[i64], synth: &[i64]) -> Vec<u8> {
    let mut w = BitWriter::new();
    write_group(&mut w, gpp);
    write_group(&mut w, synth);
    w.into_bytes()
}

/// Inverse of [`encode_payload`]. `base_bits` offsets error positions.
/// Returns both groups and the byte length of the GPP group.
pub fn decode_payload(
    bytes: &[u8],
    gpp_len: usize,
    synth_len: usize,
    base_bits: u64,
) -> Result<(Vec<i64>, Vec<i64>, usize)> {
    let mut r = BitReader::with_base(bytes, base_bits);
    let gpp = read_group(&mut r, gpp_len)?;
    let gpp_bytes = (r.position() / 8) as usize;
    let synth = read_group(&mut r, synth_len)?;
    if r.remaining() != 0 {
        return Err(Error::malformed(
            r.offset(),
            format!("{} trailing bytes after the payload", r.remaining() / 8),
        ));
    }
    Ok((gpp, synth, gpp_bytes))
}

pub fn serialize(header: &Header, params: &QuantizedModel) -> Result<Vec<u8>> {
    if header.gpp_step_exp != params.gpp_step_exp || header.synth_step_exp != params.synth_step_exp {
        return Err(Error::contract("header step exponents differ from the quantized model"));
    }
    let (gl, sl) = header.group_sizes()?;
    if params.gpp.len() != gl || params.synth.len() != sl {
        return Err(Error::contract(format!(
            "parameter groups ({}, {}) do not match the setting ({gl}, {sl})",
            params.gpp.len(),
            params.synth.len()
        )));
    }
    let mut out = header.to_bytes().to_vec();
    out.extend(encode_payload(&params.gpp, &params.synth));
    Ok(out)
}

pub fn deserialize(bytes: &[u8]) -> Result<Parsed> {
    let header = Header::parse(bytes)?;
    let (gl, sl) = header.group_sizes()?;
    let (gpp, synth, gpp_bytes) = decode_payload(&bytes[HEADER_LEN..], gl, sl, HEADER_LEN as u64 * 8)?;
    Ok(Parsed {
        header,
        params: QuantizedModel {
            gpp_step_exp: header.gpp_step_exp,
            synth_step_exp: header.synth_step_exp,
            gpp,
            synth,
        },
        gpp_bytes,
        synth_bytes: bytes.len() - HEADER_LEN - gpp_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstream::quant::quantize_model;
    use crate::model::{CodecModel, Setting};

    fn header() -> Header {
        Header {
            version: VERSION,
            setting_id: 0,
            flags: 0,
            height: 64,
            width: 48,
            seed: 0xBEEF,
            init_seed: 3,
            gpp_step_exp: -9,
            synth_step_exp: -7,
        }
    }

    #[test]
    fn header_layout() {
        let b = header().to_bytes();
        assert_eq!(b.len(), HEADER_LEN);
        assert_eq!(&b[..7], b"N2L1\x01\x00\x00");
        assert_eq!(&b[7..15], &[0, 64, 0, 48, 0xBE, 0xEF, 0, 3]);
        assert_eq!(b[15] as i8, -9);
        assert_eq!(Header::parse(&b).unwrap(), header());
    }

    #[test]
    fn stream_round_trip() {
        let h = header();
        let q = quantize_model(&CodecModel::new(Setting::S0.config(), 5), -9, -7).unwrap();
        let bytes = serialize(&h, &q).unwrap();
        let p = deserialize(&bytes).unwrap();
        assert_eq!(p.header, h);
        assert_eq!(p.params, q);
        assert_eq!(p.total_bytes(), bytes.len());
        assert_eq!(p.bpp(), 8.0 * bytes.len() as f64 / (64.0 * 48.0));
    }

    #[test]
    fn empty_groups() {
        let bytes = encode_payload(&[], &[]);
        assert!(bytes.is_empty());
        let (g, s, n) = decode_payload(&bytes, 0, 0, 0).unwrap();
        assert!(g.is_empty() && s.is_empty() && n == 0);
    }

    #[test]
    fn header_errors() {
        let mut b = header().to_bytes();
        b[0] = b'X';
        assert!(matches!(Header::parse(&b), Err(Error::Unsupported(_))));
        let mut b = header().to_bytes();
        b[4] = 2;
        assert!(matches!(Header::parse(&b), Err(Error::Unsupported(_))));
        let mut b = header().to_bytes();
        b[5] = 9;
        assert!(matches!(Header::parse(&b), Err(Error::Unsupported(_))));
        let mut b = header().to_bytes();
        b[15] = 3;
        assert!(matches!(
            Header::parse(&b),
            Err(Error::Malformed { bit_offset: 120, .. })
        ));
        assert!(matches!(
            Header::parse(&header().to_bytes()[..10]),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn length_mismatch_is_malformed() {
        let h = header();
        let q = quantize_model(&CodecModel::new(Setting::S0.config(), 5), -9, -7).unwrap();
        let bytes = serialize(&h, &q).unwrap();
        assert!(matches!(
            deserialize(&bytes[..bytes.len() - 1]),
            Err(Error::Malformed { .. })
        ));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(deserialize(&longer), Err(Error::Malformed { .. })));
        // a stream written for another setting
        let mut other = bytes;
        other[5] = 4;
        assert!(matches!(deserialize(&other), Err(Error::Malformed { .. })));
    }
}
