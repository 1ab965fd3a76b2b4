//! Embedding compressors and the shared compressed representation.

pub mod bitpack;
pub mod kmeans;
pub mod pca;
pub mod uniform;

pub use bitpack::{pack_bits, packed_len, unpack_bits, PackedCodes};
pub use kmeans::{compress_kmeans, kmeans_1d, KMeansResult};
pub use pca::compress_pca;
pub use uniform::{
    clip, clip_objective, compress_uniform, compress_uniform_with, find_clip_threshold,
    grid_clip_threshold, quantize_codes, quantize_det, quantize_stoch, ClipSearch,
    QuantizationGrid, UniformOptions, DEFAULT_CLIP_TOL, DEFAULT_GRID_POINTS,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Uniform,
    KMeans,
    Pca,
}

impl Method {
    pub fn tag(self) -> u8 {
        match self {
            Method::Uniform => 0,
            Method::KMeans => 1,
            Method::Pca => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Method::Uniform),
            1 => Some(Method::KMeans),
            2 => Some(Method::Pca),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Uniform => "uniform",
            Method::KMeans => "kmeans",
            Method::Pca => "pca",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    #[default]
    Deterministic,
    Stochastic,
}

impl Rounding {
    pub fn tag(self) -> u8 {
        match self {
            Rounding::Deterministic => 0,
            Rounding::Stochastic => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Rounding::Deterministic),
            1 => Some(Rounding::Stochastic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Uniform {
        grid: QuantizationGrid,
        codes: PackedCodes,
    },
    KMeans {
        codebook: Vec<f64>,
        codes: PackedCodes,
    },
    Pca {
        reduced: DenseMatrix,
        basis_v: Option<DenseMatrix>,
    },
}

/// Bytes between the magic and the method block: version, method, rounding, seed, n, d_orig.
pub const COMMON_HEADER_BYTES: usize = 2 + 1 + 1 + 8 + 8 + 4;

/// A compressed `n x d_orig` embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedEmbedding {
    n: usize,
    d_orig: usize,
    rounding: Rounding,
    seed: u64,
    payload: Payload,
}

impl CompressedEmbedding {
    pub fn new(
        n: usize,
        d_orig: usize,
        rounding: Rounding,
        seed: u64,
        payload: Payload,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match &payload {
            Payload::Uniform { codes, grid } => {
                if (codes.rows(), codes.per_row()) != (n, d_orig) {
                    return bad(format!(
                        "code matrix is {}x{}, expected {n}x{d_orig}",
                        codes.rows(),
                        codes.per_row()
                    ));
                }
                if codes.bits() != grid.bits() {
                    return bad(format!(
                        "codes use {} bits but the grid has {}",
                        codes.bits(),
                        grid.bits()
                    ));
                }
            }
            Payload::KMeans { codebook, codes } => {
                if (codes.rows(), codes.per_row()) != (n, d_orig) {
                    return bad(format!(
                        "code matrix is {}x{}, expected {n}x{d_orig}",
                        codes.rows(),
                        codes.per_row()
                    ));
                }
                if codes.bits() > 16 || codebook.len() != 1usize << codes.bits() {
                    return bad(format!(
                        "codebook has {} entries, expected 2^{}",
                        codebook.len(),
                        codes.bits()
                    ));
                }
                if codebook.iter().any(|c| !c.is_finite()) {
                    return bad("codebook contains a non-finite value".into());
                }
            }
            Payload::Pca { reduced, basis_v } => {
                let k = reduced.cols();
                if reduced.rows() != n || k == 0 || k > d_orig {
                    return bad(format!(
                        "reduced matrix is {}x{k}, expected {n} rows and 1..={d_orig} columns",
                        reduced.rows()
                    ));
                }
                if let Some(v) = basis_v {
                    if v.shape() != (d_orig, k) {
                        return bad(format!(
                            "basis is {:?}, expected ({d_orig}, {k})",
                            v.shape()
                        ));
                    }
                }
            }
        }
        Ok(Self {
            n,
            d_orig,
            rounding,
            seed,
            payload,
        })
    }

    pub fn method(&self) -> Method {
        match self.payload {
            Payload::Uniform { .. } => Method::Uniform,
            Payload::KMeans { .. } => Method::KMeans,
            Payload::Pca { .. } => Method::Pca,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d_orig(&self) -> usize {
        self.d_orig
    }

    pub fn rounding(&self) -> Rounding {
        self.rounding
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn bits(&self) -> Option<u8> {
        match &self.payload {
            Payload::Uniform { grid, .. } => Some(grid.bits()),
            Payload::KMeans { codes, .. } => Some(codes.bits()),
            Payload::Pca { .. } => None,
        }
    }

    /// Column count of [`decompress`](Self::decompress)'s output.
    pub fn output_dim(&self) -> usize {
        match &self.payload {
            Payload::Pca {
                reduced,
                basis_v: None,
            } => reduced.cols(),
            _ => self.d_orig,
        }
    }

    /// Bits of the stored embedding: everything after the magic up to the end
    /// of the codes or matrix data, excluding vocabulary and checksum.
    pub fn payload_bits(&self) -> u64 {
        let body = match &self.payload {
            Payload::Uniform { codes, .. } => 1 + 8 + codes.bytes().len(),
            Payload::KMeans { codebook, codes } => 1 + 8 * codebook.len() + codes.bytes().len(),
            Payload::Pca { reduced, basis_v } => {
                4 + 8 * reduced.data().len()
                    + 1
                    + basis_v.as_ref().map_or(0, |v| 8 * v.data().len())
            }
        };
        8 * (COMMON_HEADER_BYTES + body) as u64
    }

    /// `32 · n · d_orig / payload_bits`.
    pub fn compression_rate(&self) -> f64 {
        32.0 * self.n as f64 * self.d_orig as f64 / self.payload_bits() as f64
    }

    pub fn decompress(&self) -> Result<DenseMatrix> {
        let lookup = |codes: &PackedCodes, table: &(dyn Fn(u32) -> f64 + Sync)| {
            let d = self.d_orig;
            let mut data = vec![0.0; self.n * d];
            if d > 0 {
                data.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
                    for (j, slot) in row.iter_mut().enumerate() {
                        *slot = table(codes.get(i, j));
                    }
                });
            }
            DenseMatrix::from_vec_unchecked(self.n, d, data)
        };
        match &self.payload {
            Payload::Uniform { grid, codes } => {
                let top = grid.num_levels() - 1;
                Ok(lookup(codes, &|c| grid.level((c as u64).min(top) as u32)))
            }
            Payload::KMeans { codebook, codes } => Ok(lookup(codes, &|c| codebook[c as usize])),
            Payload::Pca { reduced, basis_v } => match basis_v {
                Some(v) => reduced.matmul_t(v),
                None => Ok(reduced.clone()),
            },
        }
    }
}

/// What to build, independent of the input matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompressionSpec {
    Uniform {
        bits: u8,
        rounding: Rounding,
        search: ClipSearch,
    },
    KMeans {
        bits: u8,
    },
    Pca {
        k: usize,
        keep_v: bool,
    },
}

pub fn compress(x: &DenseMatrix, spec: &CompressionSpec, seed: u64) -> Result<CompressedEmbedding> {
    match *spec {
        CompressionSpec::Uniform {
            bits,
            rounding,
            search,
        } => compress_uniform_with(
            x,
            &UniformOptions {
                bits,
                rounding,
                seed,
                search,
            },
        ),
        CompressionSpec::KMeans { bits } => compress_kmeans(x, bits, seed),
        CompressionSpec::Pca { k, keep_v } => compress_pca(x, k, keep_v),
    }
}
