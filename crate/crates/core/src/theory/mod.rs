//! Generalization theory for compressed embeddings, and the synthetic
//! experiments that check it.
//!
//! Labels are modelled as `ȳ = Uz`, where `U` holds the left singular
//! vectors of the uncompressed matrix and `z` has covariance `Σ`. Label noise
//! has variance `σ² = c²·tr(Σ)/n`.

mod generate;
mod regression;
mod sweeps;

pub use generate::{
    gen_scaled_matrix, gen_student_t_matrix, gen_uniform_matrix, log_spaced_scales,
};
pub use regression::{
    closed_form_risk, fit_linear_model, logistic_loss, simulate_lipschitz_gap,
    simulate_regression_gap, FitResult, GdConfig, Loss,
};
pub use sweeps::{
    clip_grid, clip_optima, clipping_curve, quantization_overlap_trials, rounding_seed,
    scaling_experiment, table4_perturbation, ClipOptima, ClipPoint, OverlapSample, OverlapTrials,
    ScalingAxis, ScalingBase, ScalingRow, Table4Result, Table4Values,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, sym_eigen, DenseMatrix};
use crate::measures::{overlap_mass, pip_loss, LeftBasis};

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Identity,
    Explicit(DenseMatrix),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum CovarianceRepr {
    Named(String),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelModelRepr {
    #[serde(default = "identity_repr")]
    covariance: CovarianceRepr,
    noise_ratio: f64,
}

fn identity_repr() -> CovarianceRepr {
    CovarianceRepr::Named("identity".into())
}

/// Distribution of the clean labels and the noise level.
///
/// In JSON the covariance is either `"identity"` or a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LabelModelRepr", into = "LabelModelRepr")]
pub struct LabelModel {
    covariance: Covariance,
    noise_ratio: f64,
}

impl TryFrom<LabelModelRepr> for LabelModel {
    type Error = Error;

    fn try_from(r: LabelModelRepr) -> Result<Self> {
        match r.covariance {
            CovarianceRepr::Named(name) if name == "identity" => {
                LabelModel::identity(r.noise_ratio)
            }
            CovarianceRepr::Named(name) => Err(Error::InvalidArgument(format!(
                "covariance must be \"identity\" or a matrix, got {name:?}"
            ))),
            CovarianceRepr::Rows(rows) => {
                LabelModel::explicit(DenseMatrix::from_rows(&rows)?, r.noise_ratio)
            }
        }
    }
}

impl From<LabelModel> for LabelModelRepr {
    fn from(m: LabelModel) -> Self {
        let covariance = match m.covariance {
            Covariance::Identity => identity_repr(),
            Covariance::Explicit(s) => {
                CovarianceRepr::Rows((0..s.rows()).map(|i| s.row(i).to_vec()).collect())
            }
        };
        Self {
            covariance,
            noise_ratio: m.noise_ratio,
        }
    }
}

fn check_noise_ratio(c: f64) -> Result<()> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise ratio must be finite and >= 0, got {c}"
        )));
    }
    Ok(())
}

impl LabelModel {
    pub fn identity(noise_ratio: f64) -> Result<Self> {
        check_noise_ratio(noise_ratio)?;
        Ok(Self {
            covariance: Covariance::Identity,
            noise_ratio,
        })
    }

    /// Explicit `Σ`; must be symmetric and PSD to within `1e-10`.
    pub fn explicit(sigma: DenseMatrix, noise_ratio: f64) -> Result<Self> {
        check_noise_ratio(noise_ratio)?;
        let eig = sym_eigen(&sigma)?;
        let scale = sigma.max_abs().max(1.0);
        if let Some(&low) = eig.values.first() {
            if low < -1e-10 * scale {
                return Err(Error::InvalidArgument(format!(
                    "covariance is not positive semidefinite (eigenvalue {low:e})"
                )));
            }
        }
        Ok(Self {
            covariance: Covariance::Explicit(sigma.symmetrized()),
            noise_ratio,
        })
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    pub fn noise_ratio(&self) -> f64 {
        self.noise_ratio
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if let Covariance::Explicit(s) = &self.covariance {
            if s.rows() != d {
                return Err(Error::DimensionMismatch {
                    op: "label covariance",
                    expected: (d, d),
                    got: s.shape(),
                });
            }
        }
        Ok(())
    }

    pub fn trace(&self, d: usize) -> Result<f64> {
        self.check_dim(d)?;
        Ok(match &self.covariance {
            Covariance::Identity => d as f64,
            Covariance::Explicit(s) => {
                pairwise_sum(&(0..d).map(|i| s.get(i, i)).collect::<Vec<_>>())
            }
        })
    }

    /// Noise variance `c²·tr(Σ)/n`.
    pub fn noise_variance(&self, d: usize, n: usize) -> Result<f64> {
        Ok(self.noise_ratio * self.noise_ratio * self.trace(d)? / n as f64)
    }

    pub fn lambda_min(&self, d: usize) -> Result<f64> {
        self.check_dim(d)?;
        Ok(match &self.covariance {
            Covariance::Identity => 1.0,
            Covariance::Explicit(s) => sym_eigen(s)?
                .values
                .first()
                .copied()
                .unwrap_or(0.0)
                .max(0.0),
        })
    }

    /// Symmetric square root of `Σ`, or `None` for the identity.
    pub(crate) fn sqrt_covariance(&self, d: usize) -> Result<Option<DenseMatrix>> {
        self.check_dim(d)?;
        match &self.covariance {
            Covariance::Identity => Ok(None),
            Covariance::Explicit(s) => {
                let eig = sym_eigen(s)?;
                let roots: Vec<f64> = eig.values.iter().map(|v| v.max(0.0).sqrt()).collect();
                Ok(Some(eig.vectors.scale_cols(&roots).matmul_t(&eig.vectors)?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoryKind {
    ExactIdentity,
    UpperBound,
}

/// Monte-Carlo estimate next to its theoretical counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub estimate: f64,
    pub std_error: f64,
    pub theory_value: f64,
    pub theory_kind: TheoryKind,
    pub trials: usize,
    pub config_echo: serde_json::Value,
}

/// Mean and standard error of the mean.
pub(crate) fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = pairwise_sum(samples) / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = samples.iter().map(|s| (s - mean) * (s - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub(crate) fn full_rank_basis(x: &DenseMatrix, op: &'static str) -> Result<LeftBasis> {
    let b = LeftBasis::of(x)?;
    if !b.full_rank() {
        return Err(Error::RankDeficient {
            op,
            rank: b.rank,
            required: b.declared_cols,
        });
    }
    Ok(b)
}

pub(crate) struct GapParts {
    d: usize,
    k: usize,
    n: usize,
    trace: f64,
    sigma2: f64,
    /// `UᵀŨ`.
    cross: DenseMatrix,
}

pub(crate) fn gap_parts(
    x: &DenseMatrix,
    xt: &DenseMatrix,
    model: &LabelModel,
) -> Result<(GapParts, LeftBasis, LeftBasis)> {
    if x.rows() != xt.rows() {
        return Err(Error::DimensionMismatch {
            op: "expected gap",
            expected: (x.rows(), xt.cols()),
            got: xt.shape(),
        });
    }
    let b = full_rank_basis(x, "expected gap")?;
    let bt = LeftBasis::of(xt)?;
    let (n, d, k) = (x.rows(), b.rank, bt.rank);
    let parts = GapParts {
        d,
        k,
        n,
        trace: model.trace(d)?,
        sigma2: model.noise_variance(d, n)?,
        cross: b.u.t_matmul(&bt.u)?,
    };
    Ok((parts, b, bt))
}

fn noise_term(p: &GapParts) -> f64 {
    (p.d as f64 - p.k as f64) * p.sigma2 / p.n as f64
}

/// `E[R(X̃) − R(X)]` over `z` and the label noise, with `d = rank(X)` and
/// `k = rank(X̃)`:
///
/// `(tr Σ − ‖ŨᵀUΣ^{1/2}‖_F²)/n − (d − k)σ²/n`.
///
/// For identity `Σ` the middle term is `‖ŨᵀU‖_F²`, which is `d·𝓔` when `k ≤ d`.
pub fn exact_expected_gap(x: &DenseMatrix, xt: &DenseMatrix, model: &LabelModel) -> Result<f64> {
    let (p, b, bt) = gap_parts(x, xt, model)?;
    let captured = match model.covariance() {
        Covariance::Identity => overlap_mass(&b.u, &bt.u)?,
        Covariance::Explicit(s) => {
            // tr(UᵀŨŨᵀU Σ)
            let m = p.cross.matmul_t(&p.cross)?;
            let terms: Vec<f64> = m.data().iter().zip(s.data()).map(|(a, c)| a * c).collect();
            pairwise_sum(&terms)
        }
    };
    Ok((p.trace - captured) / p.n as f64 - noise_term(&p))
}

/// The same expectation written as `(E‖Uᵀȳ‖² − E‖Ũᵀȳ‖²)/n − (d − k)σ²/n`,
/// with both expectations evaluated as traces of `k x k` or `d x d` products.
pub fn expected_gap_via_traces(
    x: &DenseMatrix,
    xt: &DenseMatrix,
    model: &LabelModel,
) -> Result<f64> {
    let (p, _, _) = gap_parts(x, xt, model)?;
    // E‖Ũᵀȳ‖² = tr(ŨᵀU Σ UᵀŨ)
    let inner = match model.covariance() {
        Covariance::Identity => p.cross.t_matmul(&p.cross)?,
        Covariance::Explicit(s) => p.cross.t_matmul(&s.matmul(&p.cross)?)?,
    };
    let diag: Vec<f64> = (0..inner.rows()).map(|i| inner.get(i, i)).collect();
    Ok((p.trace - pairwise_sum(&diag)) / p.n as f64 - noise_term(&p))
}

/// `(tr Σ − λ_min(Σ)·‖ŨᵀU‖_F²)/n − (d − k)σ²/n`, an upper bound on
/// [`exact_expected_gap`] that only needs the overlap.
pub fn expected_gap_upper_bound(
    x: &DenseMatrix,
    xt: &DenseMatrix,
    model: &LabelModel,
) -> Result<f64> {
    let (p, b, bt) = gap_parts(x, xt, model)?;
    let mass = overlap_mass(&b.u, &bt.u)?;
    Ok((p.trace - model.lambda_min(p.d)? * mass) / p.n as f64 - noise_term(&p))
}

/// `(L/√n)(√(tr Σ − d·λ_min(Σ)·𝓔) + 2c√tr Σ)`.
pub fn lipschitz_gap_bound(
    x: &DenseMatrix,
    xt: &DenseMatrix,
    lipschitz: f64,
    model: &LabelModel,
) -> Result<f64> {
    if !(lipschitz > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Lipschitz constant must be positive, got {lipschitz}"
        )));
    }
    let (p, b, bt) = gap_parts(x, xt, model)?;
    let mass = overlap_mass(&b.u, &bt.u)?;
    let missing = (p.trace - model.lambda_min(p.d)? * mass).max(0.0);
    Ok(lipschitz / (p.n as f64).sqrt()
        * (missing.sqrt() + 2.0 * model.noise_ratio() * p.trace.sqrt()))
}

/// Value of the quantization overlap bound; `value` is capped at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapBound {
    pub value: f64,
    pub raw: f64,
    pub vacuous: bool,
}

/// `E[1 − 𝓔] ≤ 20 / ((2^b − 1)² a⁴)` for `b`-bit quantization of a matrix with
/// entries in `[−1/√d, 1/√d]` and `σ_min = a√(n/d)`.
pub fn uniform_overlap_bound(bits: u32, a: f64) -> Result<OverlapBound> {
    if bits == 0 || bits > 63 {
        return Err(Error::InvalidArgument(format!(
            "bits must be in 1..=63, got {bits}"
        )));
    }
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "a must lie in (0, 1], got {a}"
        )));
    }
    let levels = ((1u64 << bits) - 1) as f64;
    let raw = 20.0 / (levels * levels * a.powi(4));
    Ok(OverlapBound {
        value: raw.min(1.0),
        raw,
        vacuous: raw > 1.0,
    })
}

/// `a = σ_min(X)·√(d/n)`.
pub fn conditioning_constant(x: &DenseMatrix) -> Result<f64> {
    let b = full_rank_basis(x, "conditioning_constant")?;
    let smin = b.s[b.rank - 1];
    Ok(smin * (x.cols() as f64 / x.rows() as f64).sqrt())
}

/// `‖XCᵀ + CXᵀ + CCᵀ‖_F² / (d·σ_min(XXᵀ)²)` with `C = X̃ − X`. The numerator is
/// the squared PIP loss, and `σ_min(XXᵀ)` is `s_min(X)²`.
pub fn davis_kahan_sample_bound(x: &DenseMatrix, xt: &DenseMatrix) -> Result<f64> {
    if x.shape() != xt.shape() {
        return Err(Error::DimensionMismatch {
            op: "davis_kahan_sample_bound",
            expected: x.shape(),
            got: xt.shape(),
        });
    }
    let b = full_rank_basis(x, "davis_kahan_sample_bound")?;
    let smin = b.s[b.rank - 1];
    let pip = pip_loss(x, xt)?;
    Ok(pip * pip / (x.cols() as f64 * smin.powi(4)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::eigenspace_overlap;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = stream_rng(seed, 11);
        DenseMatrix::new(
            n,
            d,
            (0..n * d)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn gap_vanishes_for_identical_inputs() {
        let x = gaussian(30, 4, 1);
        for c in [0.0, 0.5] {
            let m = LabelModel::identity(c).unwrap();
            assert!(exact_expected_gap(&x, &x, &m).unwrap().abs() < 1e-14);
        }
    }

    #[test]
    fn gap_hand_example() {
        // n=4, d=2, k=1, overlap 1/2: U = (e1, e2), Ũ = (e1 + e3)/√2.
        let x = DenseMatrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        ])
        .unwrap();
        let h = 0.5f64.sqrt();
        let xt = DenseMatrix::from_rows(&[vec![h], vec![0.0], vec![h], vec![0.0]]).unwrap();
        assert!((eigenspace_overlap(&x, &xt).unwrap() - 0.25).abs() < 1e-15);
        // ‖ŨᵀU‖² = 1/2, so d·𝓔 with max(d, k) = d is 0.5.
        let m = LabelModel::identity(1.0).unwrap();
        let gap = exact_expected_gap(&x, &xt, &m).unwrap();
        assert!((gap - ((2.0 - 0.5) / 4.0 - 1.0 * 2.0 / 16.0)).abs() < 1e-15);

        // 𝓔 = 1/2 exactly: Ũ = e1.
        let xt = DenseMatrix::from_rows(&[vec![1.0], vec![0.0], vec![0.0], vec![0.0]]).unwrap();
        assert!((eigenspace_overlap(&x, &xt).unwrap() - 0.5).abs() < 1e-15);
        let gap = exact_expected_gap(&x, &xt, &m).unwrap();
        assert!((gap - 0.125).abs() < 1e-15, "{gap}");
    }

    #[test]
    fn explicit_identity_matches_identity() {
        let x = gaussian(40, 5, 2);
        let xt = gaussian(40, 3, 3);
        let a = LabelModel::identity(0.3).unwrap();
        let b = LabelModel::explicit(DenseMatrix::identity(5), 0.3).unwrap();
        let ga = exact_expected_gap(&x, &xt, &a).unwrap();
        let gb = exact_expected_gap(&x, &xt, &b).unwrap();
        assert!((ga - gb).abs() < 1e-12);
        assert!((expected_gap_upper_bound(&x, &xt, &a).unwrap() - ga).abs() < 1e-12);
    }

    #[test]
    fn wrong_covariance_size_fails() {
        let x = gaussian(20, 3, 4);
        let m = LabelModel::explicit(DenseMatrix::identity(4), 0.0).unwrap();
        assert!(exact_expected_gap(&x, &x, &m).is_err());
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let s = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(LabelModel::explicit(s, 0.0).is_err());
        assert!(LabelModel::identity(-1.0).is_err());
    }

    #[test]
    fn label_model_json() {
        let m: LabelModel =
            serde_json::from_str(r#"{"covariance": [[2, 0], [0, 1]], "noise_ratio": 0.5}"#)
                .unwrap();
        assert_eq!(m.trace(2).unwrap(), 3.0);
        assert!((m.noise_variance(2, 10).unwrap() - 0.25 * 3.0 / 10.0).abs() < 1e-15);
        let back: LabelModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        let id: LabelModel = serde_json::from_str(r#"{"noise_ratio": 0}"#).unwrap();
        assert_eq!(id.covariance(), &Covariance::Identity);
        assert!(
            serde_json::from_str::<LabelModel>(r#"{"covariance": "diag", "noise_ratio": 0}"#)
                .is_err()
        );
    }

    #[test]
    fn lipschitz_examples() {
        // 𝓔 = 1, c = 0
        let x = gaussian(25, 3, 5);
        let m = LabelModel::identity(0.0).unwrap();
        assert!(lipschitz_gap_bound(&x, &x, 1.0, &m).unwrap() < 1e-6);
        // d = 4, n = 100, 𝓔 = 3/4: X spans e1..e4, X̃ spans e1..e3 plus an orthogonal direction.
        let x = DenseMatrix::from_fn(100, 4, |i, j| (i == j) as u8 as f64);
        let xt = DenseMatrix::from_fn(100, 4, |i, j| {
            if j < 3 {
                (i == j) as u8 as f64
            } else {
                (i == 50) as u8 as f64
            }
        });
        assert!((eigenspace_overlap(&x, &xt).unwrap() - 0.75).abs() < 1e-15);
        let b = lipschitz_gap_bound(&x, &xt, 1.0, &m).unwrap();
        assert!((b - 0.1).abs() < 1e-14, "{b}");
        assert!(lipschitz_gap_bound(&x, &xt, 0.0, &m).is_err());
    }

    #[test]
    fn overlap_bound_examples() {
        let b4 = uniform_overlap_bound(4, 1.0).unwrap();
        assert!((b4.value - 20.0 / 225.0).abs() < 1e-15 && !b4.vacuous);
        let b1 = uniform_overlap_bound(1, 1.0).unwrap();
        assert_eq!(b1.raw, 20.0);
        assert!(b1.vacuous && b1.value == 1.0);
        let b8 = uniform_overlap_bound(8, 1.0).unwrap();
        assert!((b8.value - 20.0 / 65025.0).abs() < 1e-18);
        assert!(uniform_overlap_bound(4, 0.0).is_err());
        assert!(uniform_overlap_bound(4, 1.5).is_err());
    }

    #[test]
    fn davis_kahan_matches_definition() {
        let x = DenseMatrix::from_fn(6, 2, |i, j| match (i, j) {
            (0, 0) => 2.0,
            (1, 1) => 1.0,
            _ => 0.0,
        });
        let c = DenseMatrix::from_fn(6, 2, |i, j| 1e-3 * ((i + 2 * j) as f64).sin());
        let xt = x.add(&c).unwrap();
        // H = XCᵀ + CXᵀ + CCᵀ, formed densely.
        let h = x
            .matmul_t(&c)
            .unwrap()
            .add(&c.matmul_t(&x).unwrap())
            .unwrap()
            .add(&c.matmul_t(&c).unwrap())
            .unwrap();
        let want = h.frobenius_sq() / (2.0 * 1.0f64.powi(2));
        let got = davis_kahan_sample_bound(&x, &xt).unwrap();
        assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
        assert_eq!(davis_kahan_sample_bound(&x, &x).unwrap(), 0.0);
        let deficient = DenseMatrix::zeros(6, 2);
        assert!(davis_kahan_sample_bound(&deficient, &x).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn trace_forms_agree(seed in 0u64..1000, n in 8usize..40, d in 1usize..6, k in 1usize..6, c in 0.0f64..2.0, explicit in any::<bool>()) {
            let x = gaussian(n, d, seed);
            let xt = gaussian(n, k, seed + 5000);
            let model = if explicit {
                let a = gaussian(d, d, seed + 9000);
                LabelModel::explicit(a.t_matmul(&a).unwrap(), c).unwrap()
            } else {
                LabelModel::identity(c).unwrap()
            };
            let g1 = exact_expected_gap(&x, &xt, &model).unwrap();
            let g2 = expected_gap_via_traces(&x, &xt, &model).unwrap();
            prop_assert!((g1 - g2).abs() <= 1e-10 * (1.0 + g1.abs()), "{} vs {}", g1, g2);
            let ub = expected_gap_upper_bound(&x, &xt, &model).unwrap();
            prop_assert!(g1 <= ub + 1e-10 * (1.0 + ub.abs()));
        }

        #[test]
        fn davis_kahan_holds_for_small_noise(seed in 0u64..1000) {
            let x = gaussian(60, 4, seed);
            let noise = gaussian(60, 4, seed + 1).scaled(1e-2);
            let xt = x.add(&noise).unwrap();
            let loss = 1.0 - eigenspace_overlap(&x, &xt).unwrap();
            prop_assert!(loss <= davis_kahan_sample_bound(&x, &xt).unwrap());
        }
    }
}
