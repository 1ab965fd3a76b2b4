use super::{CompressedEmbedding, Payload, Rounding};
use crate::error::{Error, Result};
use crate::linalg::{thin_svd, DenseMatrix};

/// Keeps the top-`k` principal directions: `reduced = U_k diag(s_k)`, plus `V_k` when `keep_v`.
pub fn compress_pca(x: &DenseMatrix, k: usize, keep_v: bool) -> Result<CompressedEmbedding> {
    if k == 0 || k > x.cols() {
        return Err(Error::InvalidArgument(format!(
            "PCA dimension must be in [1, {}], got {k}",
            x.cols()
        )));
    }
    let svd = thin_svd(x)?;
    let rank = svd.rank();
    if k > rank {
        return Err(Error::RankDeficient {
            op: "compress_pca",
            rank,
            required: k,
        });
    }
    let reduced = svd.u.leading_cols(k).scale_cols(&svd.s[..k]);
    let basis_v = keep_v.then(|| svd.v.leading_cols(k));
    CompressedEmbedding::new(
        x.rows(),
        x.cols(),
        Rounding::Deterministic,
        0,
        Payload::Pca { reduced, basis_v },
    )
}
