//! Bit-level IO, zigzag mapping and order-0 Exp-Golomb codes.

use crate::error::{Error, Result};

/// MSB-first bit writer.
#[derive(Clone, Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_bit(&mut self, bit: bool) {
        let used = (self.bits % 8) as u32;
        if used == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().expect("byte was just pushed") |= 0x80 >> used;
        }
        self.bits += 1;
    }

    /// Writes the low `count` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u128, count: u32) {
        for i in (0..count).rev() {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    /// Zero-pads to the next byte boundary.
    pub fn align(&mut self) {
        self.bits = self.bytes.len() as u64 * 8;
    }

    pub fn bit_len(&self) -> u64 {
        self.bits
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// MSB-first bit reader. Offsets in errors count from the start of the
/// enclosing stream, which begins `base_bits` before `bytes`.
#[derive(Clone, Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
    base_bits: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self::with_base(bytes, 0)
    }

    pub fn with_base(bytes: &'a [u8], base_bits: u64) -> Self {
        BitReader {
            bytes,
            pos: 0,
            base_bits,
        }
    }

    /// Bit offset of the next read within the enclosing stream.
    pub fn offset(&self) -> u64 {
        self.base_bits + self.pos
    }

    /// Bits consumed so far from `bytes`.
    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.bytes.len() as u64 * 8 - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        let byte = self
            .bytes
            .get((self.pos / 8) as usize)
            .ok_or_else(|| Error::malformed(self.offset(), "stream truncated"))?;
        let bit = (byte >> (7 - self.pos % 8)) & 1 == 1;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, count: u32) -> Result<u128> {
        let mut v = 0u128;
        for _ in 0..count {
            v = (v << 1) | u128::from(self.read_bit()?);
        }
        Ok(v)
    }

    /// Skips to the next byte boundary; padding bits must be zero.
    pub fn align(&mut self) -> Result<()> {
        while !self.pos.is_multiple_of(8) {
            let at = self.offset();
            if self.read_bit()? {
                return Err(Error::malformed(at, "nonzero padding bit"));
            }
        }
        Ok(())
    }
}

/// `0, -1, 1, -2, 2, ...` onto `0, 1, 2, 3, 4, ...`.
pub fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

pub fn unzigzag(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

/// Length in bits of the order-0 Exp-Golomb code for `v`.
pub fn exp_golomb_len(v: u64) -> u32 {
    let x = u128::from(v) + 1;
    2 * (127 - x.leading_zeros()) + 1
}

pub fn write_exp_golomb(w: &mut BitWriter, v: u64) {
    let x = u128::from(v) + 1;
    let n = 128 - x.leading_zeros();
    w.push_bits(0, n - 1);
    w.push_bits(x, n);
}

pub fn read_exp_golomb(r: &mut BitReader) -> Result<u64> {
    let start = r.offset();
    let mut zeros = 0u32;
    while !r.read_bit()? {
        zeros += 1;
        if zeros > 64 {
            return Err(Error::malformed(start, "Exp-Golomb prefix longer than 64 bits"));
        }
    }
    let x = (1u128 << zeros) | r.read_bits(zeros)?;
    u64::try_from(x - 1).map_err(|_| Error::malformed(start, "Exp-Golomb value exceeds 64 bits"))
}

/// Codes `values` and returns the bit string as `'0'`/`'1'` characters.
pub fn exp_golomb_string(values: &[u64]) -> String {
    let mut w = BitWriter::new();
    for &v in values {
        write_exp_golomb(&mut w, v);
    }
    let bits = w.bit_len();
    let bytes = w.into_bytes();
    (0..bits)
        .map(|i| {
            if (bytes[(i / 8) as usize] >> (7 - i % 8)) & 1 == 1 {
                '1'
            } else {
                '0'
            }
        })
        .collect()
}

/// Byte-aligned Exp-Golomb encoding of `values`.
pub fn exp_golomb_encode(values: &[u64]) -> Vec<u8> {
    let mut w = BitWriter::new();
    for &v in values {
        write_exp_golomb(&mut w, v);
    }
    w.align();
    w.into_bytes()
}

/// Inverse of [`exp_golomb_encode`] for a known symbol count.
pub fn exp_golomb_decode(bytes: &[u8], count: usize) -> Result<Vec<u64>> {
    let mut r = BitReader::new(bytes);
    let values = (0..count)
        .map(|_| read_exp_golomb(&mut r))
        .collect::<Result<Vec<_>>>()?;
    r.align()?;
    if r.remaining() != 0 {
        return Err(Error::malformed(r.offset(), "trailing bytes after the last symbol"));
    }
    Ok(values)
}

/// Zigzag + Exp-Golomb for one parameter group, zero-padded to a byte.
pub fn write_group(w: &mut BitWriter, values: &[i64]) {
    for &q in values {
        write_exp_golomb(w, zigzag(q));
    }
    w.align();
}

pub fn read_group(r: &mut BitReader, count: usize) -> Result<Vec<i64>> {
    let values = (0..count)
        .map(|_| read_exp_golomb(r).map(unzigzag))
        .collect::<Result<Vec<_>>>()?;
    r.align()?;
    Ok(values)
}
