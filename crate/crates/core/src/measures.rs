//! Quality measures for a compressed embedding `X̃` against its source `X`.
//!
//! Everything that needs an n×n Gram matrix is evaluated in a small basis
//! instead: the eigenspace overlap through left singular vectors, the PIP loss
//! through the R factor of `[X | X̃]`, and the spectral Δ's through the
//! joint span of both left singular bases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::json::maybe_inf;
use crate::linalg::{
    householder_r, joint_orthonormal_basis, pairwise_sum, sym_generalized_eigs, thin_svd,
    DenseMatrix, ThinSvd,
};

/// Left singular basis of one matrix, truncated to its numerical rank.
#[derive(Debug, Clone)]
pub struct LeftBasis {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub rank: usize,
    pub declared_cols: usize,
}

impl LeftBasis {
    pub fn of(m: &DenseMatrix) -> Result<Self> {
        let svd: ThinSvd = thin_svd(m)?;
        let rank = svd.rank();
        Ok(Self {
            u: svd.u.leading_cols(rank),
            s: svd.s,
            rank,
            declared_cols: m.cols(),
        })
    }

    pub fn full_rank(&self) -> bool {
        self.rank == self.declared_cols
    }
}

fn same_rows(x: &DenseMatrix, xt: &DenseMatrix, op: &'static str) -> Result<()> {
    if x.rows() != xt.rows() {
        return Err(Error::DimensionMismatch {
            op,
            expected: (x.rows(), xt.cols()),
            got: xt.shape(),
        });
    }
    Ok(())
}

/// `‖UᵀŨ‖_F²` with the squared entries summed in sorted order, so swapping
/// the arguments gives the same bits.
pub fn overlap_mass(u: &DenseMatrix, ut: &DenseMatrix) -> Result<f64> {
    let m = u.t_matmul(ut)?;
    let mut sq: Vec<f64> = m.data().iter().map(|v| v * v).collect();
    sq.sort_by(f64::total_cmp);
    Ok(pairwise_sum(&sq))
}

pub fn overlap_from_bases(b: &LeftBasis, bt: &LeftBasis) -> Result<f64> {
    let denom = b.declared_cols.max(bt.declared_cols) as f64;
    Ok(overlap_mass(&b.u, &bt.u)? / denom)
}

/// Eigenspace overlap `‖UᵀŨ‖_F² / max(d, k)`.
pub fn eigenspace_overlap(x: &DenseMatrix, xt: &DenseMatrix) -> Result<f64> {
    same_rows(x, xt, "eigenspace_overlap")?;
    overlap_from_bases(&LeftBasis::of(x)?, &LeftBasis::of(xt)?)
}

/// `‖XXᵀ − X̃X̃ᵀ‖_F`, evaluated as `‖R_a R_aᵀ − R_b R_bᵀ‖_F` where
/// `[X | X̃] = Q [R_a | R_b]`.
pub fn pip_loss(x: &DenseMatrix, xt: &DenseMatrix) -> Result<f64> {
    same_rows(x, xt, "pip_loss")?;
    let r = householder_r(&x.hconcat(xt)?);
    let d = x.cols();
    let all: Vec<usize> = (0..r.cols()).collect();
    let ra = r.select_cols(&all[..d]);
    let rb = r.select_cols(&all[d..]);
    let ga = ra.matmul_t(&ra)?;
    let gb = rb.matmul_t(&rb)?;
    Ok(ga.sub(&gb)?.frobenius())
}

/// `‖X − X̃‖_F`; only defined when the shapes agree.
pub fn reconstruction_error(x: &DenseMatrix, xt: &DenseMatrix) -> Result<f64> {
    if x.shape() != xt.shape() {
        return Err(Error::DimensionMismatch {
            op: "reconstruction_error",
            expected: x.shape(),
            got: xt.shape(),
        });
    }
    Ok(x.sub(xt)?.frobenius())
}

fn projected_residual(x: &DenseMatrix, ut: &DenseMatrix) -> Result<f64> {
    let coeffs = ut.t_matmul(x)?;
    Ok(x.sub(&ut.matmul(&coeffs)?)?.frobenius_sq())
}

/// `min_P ‖X̃P − X‖_F² = ‖X‖_F² − ‖ŨᵀX‖_F²`, evaluated as the squared norm of
/// the residual `X − ŨŨᵀX` so it never goes negative.
pub fn projected_reconstruction_error(x: &DenseMatrix, xt: &DenseMatrix) -> Result<f64> {
    same_rows(x, xt, "projected_reconstruction_error")?;
    let bt = LeftBasis::of(xt)?;
    if !bt.full_rank() {
        return Err(Error::RankDeficient {
            op: "projected_reconstruction_error",
            rank: bt.rank,
            required: bt.declared_cols,
        });
    }
    projected_residual(x, &bt.u)
}

fn lambda_from_basis(b: &LeftBasis) -> Result<f64> {
    if b.rank == 0 {
        return Err(Error::Degenerate(
            "default lambda is undefined for a zero matrix".into(),
        ));
    }
    let s = b.s[b.rank - 1];
    Ok(s * s)
}

/// Smallest nonzero eigenvalue of `XᵀX`.
pub fn default_lambda(x: &DenseMatrix) -> Result<f64> {
    lambda_from_basis(&LeftBasis::of(x)?)
}

/// Tightest `(Δ₁, Δ₂)` with `(1−Δ₁)B ⪯ A ⪯ (1+Δ₂)B`, plus `Δ` and `Δmax`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralDeltas {
    pub delta1: f64,
    pub delta2: f64,
    pub delta: f64,
    #[serde(with = "maybe_inf")]
    pub delta_max: f64,
}

impl SpectralDeltas {
    fn from_extremes(mu_min: f64, mu_max: f64) -> Self {
        let delta1 = 1.0 - mu_min;
        let delta2 = mu_max - 1.0;
        let delta_max = if delta1 >= 1.0 {
            f64::INFINITY
        } else {
            (1.0 / (1.0 - delta1)).max(delta2)
        };
        Self {
            delta1,
            delta2,
            delta: delta1.max(delta2),
            delta_max,
        }
    }
}

fn deltas_from_bases(
    x: &DenseMatrix,
    xt: &DenseMatrix,
    b: &LeftBasis,
    bt: &LeftBasis,
    lambda: f64,
) -> Result<SpectralDeltas> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive and finite, got {lambda}"
        )));
    }
    let q = joint_orthonormal_basis(&b.u, &bt.u)?;
    let m = q.cols();
    let reg = DenseMatrix::identity(m).scaled(lambda);
    let px = q.t_matmul(x)?;
    let pxt = q.t_matmul(xt)?;
    let a = pxt.matmul_t(&pxt)?.add(&reg)?.symmetrized();
    let bb = px.matmul_t(&px)?.add(&reg)?.symmetrized();
    let mut mu = if m > 0 {
        sym_generalized_eigs(&a, &bb)?
    } else {
        Vec::new()
    };
    if x.rows() > m {
        mu.push(1.0);
    }
    let lo = mu.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectralDeltas::from_extremes(lo, hi))
}

/// Δ's of the pencil `A = X̃X̃ᵀ + λI`, `B = XXᵀ + λI`, reduced to the span of
/// both left singular bases; the complement contributes `μ = 1`.
pub fn spectral_deltas(x: &DenseMatrix, xt: &DenseMatrix, lambda: f64) -> Result<SpectralDeltas> {
    same_rows(x, xt, "spectral_deltas")?;
    deltas_from_bases(x, xt, &LeftBasis::of(x)?, &LeftBasis::of(xt)?, lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub eigenspace_overlap: f64,
    pub pip_loss: f64,
    pub reconstruction_error: Option<f64>,
    pub projected_reconstruction_error: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta: f64,
    #[serde(with = "maybe_inf")]
    pub delta_max: f64,
    pub lambda_used: f64,
    /// Numerical ranks of `X` and `X̃`.
    pub ranks: (usize, usize),
    /// `(n, d, k)`.
    pub dims: (usize, usize, usize),
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// All measures for one pair. `lambda` defaults to [`default_lambda`] of `X`.
/// Rank-deficient inputs fall back to their retained singular vectors and
/// add a warning.
pub fn quality_report(
    x: &DenseMatrix,
    xt: &DenseMatrix,
    lambda: Option<f64>,
) -> Result<QualityReport> {
    same_rows(x, xt, "quality_report")?;
    let b = LeftBasis::of(x)?;
    let bt = LeftBasis::of(xt)?;
    let mut warnings = Vec::new();
    if !b.full_rank() {
        warnings.push(format!(
            "base embedding has numerical rank {} < {} columns; using retained singular vectors",
            b.rank, b.declared_cols
        ));
    }
    if !bt.full_rank() {
        warnings.push(format!(
            "compressed embedding has numerical rank {} < {} columns; using retained singular vectors",
            bt.rank, bt.declared_cols
        ));
    }
    let lambda_used = match lambda {
        Some(l) => l,
        None => lambda_from_basis(&b)?,
    };
    let deltas = deltas_from_bases(x, xt, &b, &bt, lambda_used)?;
    let reconstruction_error = if x.shape() == xt.shape() {
        Some(reconstruction_error(x, xt)?)
    } else {
        None
    };
    Ok(QualityReport {
        eigenspace_overlap: overlap_from_bases(&b, &bt)?,
        pip_loss: pip_loss(x, xt)?,
        reconstruction_error,
        projected_reconstruction_error: projected_residual(x, &bt.u)?,
        delta1: deltas.delta1,
        delta2: deltas.delta2,
        delta: deltas.delta,
        delta_max: deltas.delta_max,
        lambda_used,
        ranks: (b.rank, bt.rank),
        dims: (x.rows(), x.cols(), xt.cols()),
        warnings,
    })
}
