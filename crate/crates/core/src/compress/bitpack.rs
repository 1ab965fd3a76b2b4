//! Fixed-width bit packing, LSB-first within each byte, each row padded to a
//! byte boundary.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Bytes needed for `count` codes of `bits` bits.
pub fn packed_len(count: usize, bits: u8) -> usize {
    (count * bits as usize).div_ceil(8)
}

fn check_bits(bits: u8) -> Result<()> {
    if !(1..=31).contains(&bits) {
        return Err(Error::InvalidArgument(format!(
            "bit width must be in [1, 31], got {bits}"
        )));
    }
    Ok(())
}

fn write_codes(out: &mut [u8], codes: &[u32], bits: u8) {
    let b = bits as usize;
    for (i, &code) in codes.iter().enumerate() {
        let pos = i * b;
        let (mut byte, shift) = (pos / 8, pos % 8);
        let mut v = (code as u64) << shift;
        let mut remaining = b + shift;
        while remaining > 0 {
            out[byte] |= v as u8;
            v >>= 8;
            byte += 1;
            remaining = remaining.saturating_sub(8);
        }
    }
}

fn read_code(bytes: &[u8], index: usize, bits: u8) -> u32 {
    let b = bits as usize;
    let pos = index * b;
    let (first, shift) = (pos / 8, pos % 8);
    let last = (pos + b - 1) / 8;
    let mut acc = 0u64;
    for (k, &byte) in bytes[first..=last].iter().enumerate() {
        acc |= (byte as u64) << (8 * k);
    }
    ((acc >> shift) & ((1u64 << b) - 1)) as u32
}

/// Packs a single run of codes.
pub fn pack_bits(codes: &[u32], bits: u8) -> Result<Vec<u8>> {
    check_bits(bits)?;
    check_range(codes, bits)?;
    let mut out = vec![0u8; packed_len(codes.len(), bits)];
    write_codes(&mut out, codes, bits);
    Ok(out)
}

pub fn unpack_bits(bytes: &[u8], bits: u8, count: usize) -> Result<Vec<u32>> {
    check_bits(bits)?;
    let need = packed_len(count, bits);
    if bytes.len() < need {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: need - bytes.len(),
        });
    }
    Ok((0..count).map(|i| read_code(bytes, i, bits)).collect())
}

fn check_range(codes: &[u32], bits: u8) -> Result<()> {
    let limit = 1u64 << bits;
    if let Some(pos) = codes.iter().position(|&c| c as u64 >= limit) {
        return Err(Error::InvalidArgument(format!(
            "code {} at position {pos} does not fit in {bits} bits",
            codes[pos]
        )));
    }
    Ok(())
}

/// Row-major matrix of `bits`-wide codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    bits: u8,
    rows: usize,
    per_row: usize,
    bytes: Vec<u8>,
}

impl PackedCodes {
    pub fn pack(codes: &[u32], rows: usize, per_row: usize, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        if codes.len() != rows * per_row {
            return Err(Error::InvalidArgument(format!(
                "expected {rows}x{per_row} codes, got {}",
                codes.len()
            )));
        }
        check_range(codes, bits)?;
        let row_bytes = packed_len(per_row, bits);
        let mut bytes = vec![0u8; rows * row_bytes];
        if row_bytes > 0 {
            bytes
                .par_chunks_mut(row_bytes)
                .zip(codes.par_chunks(per_row.max(1)))
                .for_each(|(out, row)| write_codes(out, row, bits));
        }
        Ok(Self {
            bits,
            rows,
            per_row,
            bytes,
        })
    }

    pub fn from_bytes(bytes: Vec<u8>, rows: usize, per_row: usize, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        let need = rows * packed_len(per_row, bits);
        if bytes.len() != need {
            return Err(Error::InvalidArgument(format!(
                "packed code buffer has {} bytes, expected {need}",
                bytes.len()
            )));
        }
        Ok(Self {
            bits,
            rows,
            per_row,
            bytes,
        })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn per_row(&self) -> usize {
        self.per_row
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn row_bytes(&self) -> usize {
        packed_len(self.per_row, self.bits)
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        let rb = self.row_bytes();
        read_code(&self.bytes[row * rb..(row + 1) * rb], col, self.bits)
    }

    pub fn unpack(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.rows * self.per_row);
        for i in 0..self.rows {
            for j in 0..self.per_row {
                out.push(self.get(i, j));
            }
        }
        out
    }
}
