//! The `EQC1` compressed-embedding container.
//!
//! All integers are little-endian:
//!
//! ```text
//! magic "EQC1" | version u16 | method u8 | rounding u8 | seed u64 | n u64 | d_orig u32
//! uniform: b u8 | r f64 | codes
//! kmeans:  b u8 | 2^b codebook f64 | codes
//! pca:     k u32 | reduced f64[n*k] | has_v u8 | V f64[d_orig*k]
//! vocabulary: count u64 | (len u32, utf-8 bytes)*
//! crc32 of everything above
//! ```
//!
//! Codes are bit-packed row-major, LSB-first, each row padded to a byte.

use std::fs;
use std::path::Path;

use crate::compress::{
    packed_len, CompressedEmbedding, Method, PackedCodes, Payload, QuantizationGrid, Rounding,
};
use crate::embedding::Vocabulary;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const MAGIC: [u8; 4] = *b"EQC1";
pub const FORMAT_VERSION: u16 = 1;

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes `c` and an optional vocabulary.
pub fn encode(c: &CompressedEmbedding, vocab: Option<&Vocabulary>) -> Result<Vec<u8>> {
    if let Some(v) = vocab {
        if v.len() != c.n() {
            return Err(Error::InvalidArgument(format!(
                "vocabulary has {} tokens but the embedding has {} rows",
                v.len(),
                c.n()
            )));
        }
    }
    let d_orig = u32::try_from(c.d_orig()).map_err(|_| {
        Error::InvalidArgument(format!("dimension {} does not fit in u32", c.d_orig()))
    })?;
    let mut out = Vec::with_capacity(c.payload_bits() as usize / 8 + 16);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(c.method().tag());
    out.push(c.rounding().tag());
    out.extend_from_slice(&c.seed().to_le_bytes());
    out.extend_from_slice(&(c.n() as u64).to_le_bytes());
    out.extend_from_slice(&d_orig.to_le_bytes());
    match c.payload() {
        Payload::Uniform { grid, codes } => {
            out.push(grid.bits());
            out.extend_from_slice(&grid.clip().to_le_bytes());
            out.extend_from_slice(codes.bytes());
        }
        Payload::KMeans { codebook, codes } => {
            out.push(codes.bits());
            put_f64s(&mut out, codebook);
            out.extend_from_slice(codes.bytes());
        }
        Payload::Pca { reduced, basis_v } => {
            out.extend_from_slice(&(reduced.cols() as u32).to_le_bytes());
            put_f64s(&mut out, reduced.data());
            match basis_v {
                Some(v) => {
                    out.push(1);
                    put_f64s(&mut out, v.data());
                }
                None => out.push(0),
            }
        }
    }
    let tokens = vocab.map_or(&[][..], |v| v.tokens());
    out.extend_from_slice(&(tokens.len() as u64).to_le_bytes());
    for t in tokens {
        let len = u32::try_from(t.len()).map_err(|_| {
            Error::InvalidArgument(format!("token of {} bytes is too long", t.len()))
        })?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(t.as_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if len > left {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: len - left,
            });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice has length N"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// `count` f64 values, checking the length before allocating.
    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(8)
            .ok_or_else(|| self.malformed("array length overflows"))?;
        let bytes = self.take(len)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn malformed(&self, msg: impl Into<String>) -> Error {
        Error::Malformed {
            offset: self.pos,
            msg: msg.into(),
        }
    }
}

fn to_usize(v: u64, cur: &Cursor<'_>, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| cur.malformed(format!("{what} {v} does not fit in memory")))
}

fn codes_block(cur: &mut Cursor<'_>, n: usize, d: usize, bits: u8) -> Result<PackedCodes> {
    if !(1..=31).contains(&bits) {
        return Err(cur.malformed(format!("bit width {bits} is outside [1, 31]")));
    }
    let len = n
        .checked_mul(packed_len(d, bits))
        .ok_or_else(|| cur.malformed("code block length overflows"))?;
    let bytes = cur.take(len)?.to_vec();
    PackedCodes::from_bytes(bytes, n, d, bits)
}

fn matrix_block(cur: &mut Cursor<'_>, rows: usize, cols: usize, what: &str) -> Result<DenseMatrix> {
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| cur.malformed(format!("{what} size overflows")))?;
    let start = cur.pos;
    let data = cur.f64s(count)?;
    DenseMatrix::new(rows, cols, data).map_err(|e| Error::Malformed {
        offset: start,
        msg: format!("{what}: {e}"),
    })
}

fn parse(buf: &[u8]) -> Result<(CompressedEmbedding, Option<Vocabulary>)> {
    let mut cur = Cursor { buf, pos: 4 };
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let method_tag = cur.u8()?;
    let method = Method::from_tag(method_tag)
        .ok_or_else(|| cur.malformed(format!("unknown method tag {method_tag}")))?;
    let rounding_tag = cur.u8()?;
    let rounding = Rounding::from_tag(rounding_tag)
        .ok_or_else(|| cur.malformed(format!("unknown rounding tag {rounding_tag}")))?;
    let seed = cur.u64()?;
    let raw_n = cur.u64()?;
    let n = to_usize(raw_n, &cur, "row count")?;
    let d = cur.u32()? as usize;
    let block_start = cur.pos;
    let payload = match method {
        Method::Uniform => {
            let bits = cur.u8()?;
            let r = cur.f64()?;
            let grid = QuantizationGrid::new(bits, r).map_err(|e| Error::Malformed {
                offset: block_start,
                msg: e.to_string(),
            })?;
            Payload::Uniform {
                grid,
                codes: codes_block(&mut cur, n, d, bits)?,
            }
        }
        Method::KMeans => {
            let bits = cur.u8()?;
            if !(1..=16).contains(&bits) {
                return Err(cur.malformed(format!("k-means bit width {bits} is outside [1, 16]")));
            }
            let codebook = cur.f64s(1usize << bits)?;
            Payload::KMeans {
                codebook,
                codes: codes_block(&mut cur, n, d, bits)?,
            }
        }
        Method::Pca => {
            let k = cur.u32()? as usize;
            let reduced = matrix_block(&mut cur, n, k, "reduced matrix")?;
            let basis_v = match cur.u8()? {
                0 => None,
                1 => Some(matrix_block(&mut cur, d, k, "basis")?),
                other => {
                    return Err(cur.malformed(format!("basis flag must be 0 or 1, got {other}")))
                }
            };
            Payload::Pca { reduced, basis_v }
        }
    };
    let c =
        CompressedEmbedding::new(n, d, rounding, seed, payload).map_err(|e| Error::Malformed {
            offset: block_start,
            msg: e.to_string(),
        })?;

    let vocab_start = cur.pos;
    let count = to_usize(cur.u64()?, &cur, "vocabulary size")?;
    if count != 0 && count != n {
        return Err(Error::Malformed {
            offset: vocab_start,
            msg: format!("vocabulary has {count} tokens but the embedding has {n} rows"),
        });
    }
    let mut tokens = Vec::with_capacity(count.min(buf.len() / 4));
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let at = cur.pos;
        let bytes = cur.take(len)?;
        let token = std::str::from_utf8(bytes).map_err(|e| Error::Malformed {
            offset: at,
            msg: format!("token is not UTF-8: {e}"),
        })?;
        tokens.push(token.to_string());
    }
    let vocab = if count == 0 {
        None
    } else {
        Some(Vocabulary::new(tokens).map_err(|e| Error::Malformed {
            offset: vocab_start,
            msg: e.to_string(),
        })?)
    };
    let end = cur.pos + 4;
    if end > buf.len() {
        return Err(Error::Truncated {
            offset: buf.len(),
            needed: end - buf.len(),
        });
    }
    if end < buf.len() {
        return Err(Error::Malformed {
            offset: end,
            msg: format!("{} trailing bytes after the checksum", buf.len() - end),
        });
    }
    Ok((c, vocab))
}

/// Parses a container. Magic, version and truncation errors are reported as
/// such; any other structural failure on data whose checksum does not match
/// is reported as a checksum error.
pub fn decode(buf: &[u8]) -> Result<(CompressedEmbedding, Option<Vocabulary>)> {
    if buf.len() < 4 {
        return Err(Error::Truncated {
            offset: buf.len(),
            needed: 4 - buf.len(),
        });
    }
    let found: [u8; 4] = buf[..4].try_into().expect("4 bytes");
    if found != MAGIC {
        return Err(Error::BadMagic { found });
    }
    let crc = || {
        (buf.len() >= 8).then(|| {
            let (body, tail) = buf.split_at(buf.len() - 4);
            (
                u32::from_le_bytes(tail.try_into().expect("4 bytes")),
                crc32fast::hash(body),
            )
        })
    };
    match parse(buf) {
        Ok(v) => match crc() {
            Some((stored, computed)) if stored != computed => Err(Error::Crc { stored, computed }),
            _ => Ok(v),
        },
        Err(e @ (Error::Truncated { .. } | Error::VersionMismatch { .. })) => Err(e),
        Err(e) => match crc() {
            Some((stored, computed)) if stored != computed => Err(Error::Crc { stored, computed }),
            _ => Err(e),
        },
    }
}

pub fn write_compressed(
    path: &Path,
    c: &CompressedEmbedding,
    vocab: Option<&Vocabulary>,
) -> Result<()> {
    fs::write(path, encode(c, vocab)?).map_err(|e| Error::io(path, e))
}

pub fn read_compressed(path: &Path) -> Result<(CompressedEmbedding, Option<Vocabulary>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
