use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    conditioning_constant, davis_kahan_sample_bound, gen_scaled_matrix, mean_and_stderr,
    uniform_overlap_bound, OverlapBound,
};
use crate::compress::{quantize_codes, QuantizationGrid, Rounding};
use crate::error::{Error, Result};
use crate::linalg::{orthonormal_columns, DenseMatrix};
use crate::measures::{overlap_from_bases, quality_report, LeftBasis, QualityReport};
use crate::rng::stream_rng;

// Keeps stochastic rounding independent of the generator's entry draws,
// which use the same counter RNG keyed by the bare seed.
const ROUNDING_SALT: u64 = 0x6A09_E667_F3BC_C909;

/// Seed used for the rounding noise of an experiment seeded with `seed`.
pub fn rounding_seed(seed: u64) -> u64 {
    seed ^ ROUNDING_SALT
}

/// Quantizes `clip_r(X)` and maps the codes straight back to grid levels.
pub(crate) fn quantize_dense(
    x: &DenseMatrix,
    grid: &QuantizationGrid,
    rounding: Rounding,
    seed: u64,
) -> DenseMatrix {
    let codes = quantize_codes(x, grid, rounding, seed);
    let data = codes.into_iter().map(|c| grid.level(c)).collect();
    DenseMatrix::from_vec_unchecked(x.rows(), x.cols(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingAxis {
    /// Precision `b`.
    Bits,
    /// Smallest column scale `decay_min`.
    Scalar,
    /// Vocabulary size `n`.
    Vocab,
    /// Dimension `d`.
    Dim,
}

/// Parameters held fixed while one axis is swept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingBase {
    pub n: usize,
    pub d: usize,
    pub bits: u8,
    pub decay_min: f64,
}

impl Default for ScalingBase {
    fn default() -> Self {
        Self {
            n: 10_000,
            d: 10,
            bits: 1,
            decay_min: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub axis: ScalingAxis,
    pub level: f64,
    pub seed: u64,
    pub one_minus_overlap: f64,
    /// Capped overlap bound for the measured `a`.
    pub bound: f64,
}

fn as_count(level: f64, what: &str) -> Result<usize> {
    if level >= 1.0 && level.fract() == 0.0 && level <= u32::MAX as f64 {
        Ok(level as usize)
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} level must be a positive integer, got {level}"
        )))
    }
}

fn apply_level(axis: ScalingAxis, level: f64, base: &ScalingBase) -> Result<ScalingBase> {
    let mut cfg = *base;
    match axis {
        ScalingAxis::Bits => {
            let b = as_count(level, "bits")?;
            if b > 31 {
                return Err(Error::InvalidArgument(format!(
                    "bits level must be at most 31, got {level}"
                )));
            }
            cfg.bits = b as u8;
        }
        ScalingAxis::Scalar => cfg.decay_min = level,
        ScalingAxis::Vocab => cfg.n = as_count(level, "vocab")?,
        ScalingAxis::Dim => cfg.d = as_count(level, "dim")?,
    }
    Ok(cfg)
}

fn scaling_point(
    axis: ScalingAxis,
    level: f64,
    cfg: &ScalingBase,
    seed: u64,
) -> Result<ScalingRow> {
    let x = gen_scaled_matrix(cfg.n, cfg.d, cfg.decay_min, seed)?;
    let grid = QuantizationGrid::new(cfg.bits, 1.0 / (cfg.d as f64).sqrt())?;
    let xt = quantize_dense(&x, &grid, Rounding::Stochastic, rounding_seed(seed));
    let b = LeftBasis::of(&x)?;
    let bt = LeftBasis::of(&xt)?;
    let one_minus_overlap = 1.0 - overlap_from_bases(&b, &bt)?;
    let bound = if b.full_rank() {
        let a = b.s[b.rank - 1] * (cfg.d as f64 / cfg.n as f64).sqrt();
        uniform_overlap_bound(cfg.bits as u32, a.min(1.0))?.value
    } else {
        1.0
    };
    Ok(ScalingRow {
        axis,
        level,
        seed,
        one_minus_overlap,
        bound,
    })
}

/// Sweeps one parameter of the synthetic setup. Every `(level, seed)` pair
/// draws a fresh uniform matrix, stochastically quantizes it over the full
/// interval `[−1/√d, 1/√d]` and records `1 − 𝓔` next to the overlap bound.
/// Rows come back level-major in input order.
pub fn scaling_experiment(
    axis: ScalingAxis,
    levels: &[f64],
    base: &ScalingBase,
    seeds: &[u64],
) -> Result<Vec<ScalingRow>> {
    if levels.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "scaling experiment needs at least one level and one seed".into(),
        ));
    }
    let jobs: Vec<(f64, ScalingBase, u64)> = levels
        .iter()
        .map(|&l| apply_level(axis, l, base).map(|cfg| seeds.iter().map(move |&s| (l, cfg, s))))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    jobs.par_iter()
        .map(|(level, cfg, seed)| scaling_point(axis, *level, cfg, *seed))
        .collect()
}

/// Where a clipping curve peaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipOptima {
    /// Index of the smallest reconstruction error (first on ties).
    pub argmin_error: usize,
    /// Index of the largest overlap (first on ties).
    pub argmax_overlap: usize,
    /// Grid steps from `argmin_error` to the nearest point whose overlap is
    /// within a relative `1e-9` of the largest. Flat curves (1-bit
    /// deterministic rounding yields `r·sign(X)` for every `r`) count as 0.
    pub steps_apart: usize,
}

pub fn clip_optima(points: &[ClipPoint]) -> Option<ClipOptima> {
    if points.is_empty() {
        return None;
    }
    let mut argmin_error = 0;
    let mut argmax_overlap = 0;
    for (i, p) in points.iter().enumerate() {
        if p.recon_error < points[argmin_error].recon_error {
            argmin_error = i;
        }
        if p.overlap > points[argmax_overlap].overlap {
            argmax_overlap = i;
        }
    }
    let top = points[argmax_overlap].overlap;
    let steps_apart = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.overlap >= top - 1e-9 * top.abs())
        .map(|(i, _)| i.abs_diff(argmin_error))
        .min()
        .expect("the maximum qualifies");
    Some(ClipOptima {
        argmin_error,
        argmax_overlap,
        steps_apart,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapSample {
    pub rounding_seed: u64,
    pub one_minus_overlap: f64,
    pub davis_kahan: f64,
}

/// Repeated stochastic quantization of one matrix over `[−1/√d, 1/√d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapTrials {
    pub bits: u8,
    /// `σ_min(X)·√(d/n)`.
    pub a: f64,
    pub bound: OverlapBound,
    /// Whether `n ≥ max(33, d)` and the entries lie in `[−1/√d, 1/√d]`.
    pub preconditions_met: bool,
    pub mean_one_minus_overlap: f64,
    pub std_error: f64,
    pub samples: Vec<OverlapSample>,
}

/// Quantizes `x` stochastically `trials` times at `r = 1/√d` and compares
/// `1 − 𝓔` with the expected-value bound and, per sample, with the
/// Davis-Kahan bound.
pub fn quantization_overlap_trials(
    x: &DenseMatrix,
    bits: u8,
    trials: usize,
    seed: u64,
) -> Result<OverlapTrials> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let (n, d) = x.shape();
    let r = 1.0 / (d as f64).sqrt();
    let a = conditioning_constant(x)?;
    let bound = uniform_overlap_bound(bits as u32, a.min(1.0))?;
    let grid = QuantizationGrid::new(bits, r)?;
    let base = LeftBasis::of(x)?;
    let samples = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let rs = rounding_seed(seed).wrapping_add(t);
            let xt = quantize_dense(x, &grid, Rounding::Stochastic, rs);
            Ok(OverlapSample {
                rounding_seed: rs,
                one_minus_overlap: 1.0 - overlap_from_bases(&base, &LeftBasis::of(&xt)?)?,
                davis_kahan: davis_kahan_sample_bound(x, &xt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let losses: Vec<f64> = samples.iter().map(|s| s.one_minus_overlap).collect();
    let (mean_one_minus_overlap, std_error) = mean_and_stderr(&losses);
    Ok(OverlapTrials {
        bits,
        a,
        bound,
        preconditions_met: n >= d.max(33) && x.max_abs() <= r,
        mean_one_minus_overlap,
        std_error,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipPoint {
    pub r: f64,
    pub overlap: f64,
    pub recon_error: f64,
}

/// `points` thresholds `max|X|·i/points`, `i = 1..=points`.
pub fn clip_grid(x: &DenseMatrix, points: usize) -> Vec<f64> {
    let top = x.max_abs();
    (1..=points)
        .map(|i| top * (i as f64 / points as f64))
        .collect()
}

/// Overlap and reconstruction error of `b`-bit quantization at each clip
/// threshold in `r_grid`.
pub fn clipping_curve(
    x: &DenseMatrix,
    bits: u8,
    rounding: Rounding,
    r_grid: &[f64],
    seed: u64,
) -> Result<Vec<ClipPoint>> {
    let top = x.max_abs();
    if let Some(&bad) = r_grid.iter().find(|&&r| !(r > 0.0 && r <= top)) {
        return Err(Error::InvalidArgument(format!(
            "clip threshold {bad} is outside (0, {top}]"
        )));
    }
    let base = LeftBasis::of(x)?;
    r_grid
        .par_iter()
        .map(|&r| {
            let grid = QuantizationGrid::new(bits, r)?;
            let xt = quantize_dense(x, &grid, rounding, seed);
            Ok(ClipPoint {
                r,
                overlap: overlap_from_bases(&base, &LeftBasis::of(&xt)?)?,
                recon_error: x.sub(&xt)?.frobenius(),
            })
        })
        .collect()
}

/// The measures that the largest-singular-value perturbation moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Table4Values {
    pub rel_reconstruction: f64,
    pub rel_pip: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta: f64,
    #[serde(with = "crate::io::json::maybe_inf")]
    pub delta_max: f64,
    pub one_minus_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table4Result {
    pub spectrum: Vec<f64>,
    pub lambda: f64,
    pub report: QualityReport,
    pub measured: Table4Values,
    pub predicted: Table4Values,
}

impl Table4Result {
    /// Largest absolute difference between measured and predicted values.
    pub fn max_abs_deviation(&self) -> f64 {
        let (m, p) = (&self.measured, &self.predicted);
        [
            m.rel_reconstruction - p.rel_reconstruction,
            m.rel_pip - p.rel_pip,
            m.delta1 - p.delta1,
            m.delta2 - p.delta2,
            m.delta - p.delta,
            m.delta_max - p.delta_max,
            m.one_minus_overlap - p.one_minus_overlap,
        ]
        .iter()
        .fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }
}

fn random_orthonormal(rows: usize, cols: usize, seed: u64, stream: u64) -> DenseMatrix {
    let mut rng = stream_rng(seed, stream);
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    orthonormal_columns(&DenseMatrix::from_vec_unchecked(rows, cols, data))
}

/// Builds `X = U diag(spectrum) Vᵀ` from random orthonormal factors, zeroes
/// the largest singular value to get `X̃`, and returns the measured quality
/// report next to the closed-form predictions. `lambda` defaults to the
/// smallest squared singular value.
pub fn table4_perturbation(
    spectrum: &[f64],
    n: usize,
    seed: u64,
    lambda: Option<f64>,
) -> Result<Table4Result> {
    let d = spectrum.len();
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "spectrum needs at least 2 values, got {d}"
        )));
    }
    if n < d {
        return Err(Error::InvalidArgument(format!(
            "need n >= d, got n = {n}, d = {d}"
        )));
    }
    if spectrum.iter().any(|s| !(*s > 0.0) || !s.is_finite())
        || spectrum.windows(2).any(|w| w[0] < w[1])
    {
        return Err(Error::InvalidArgument(
            "spectrum must be positive and non-increasing".into(),
        ));
    }
    let lambda = lambda.unwrap_or(spectrum[d - 1] * spectrum[d - 1]);
    let u = random_orthonormal(n, d, seed, 0);
    let v = random_orthonormal(d, d, seed, 1);
    let x = u.scale_cols(spectrum).matmul_t(&v)?;
    let mut cut = spectrum.to_vec();
    cut[0] = 0.0;
    let xt = u.scale_cols(&cut).matmul_t(&v)?;

    let report = quality_report(&x, &xt, Some(lambda))?;
    let recon = report
        .reconstruction_error
        .expect("shapes agree, so the reconstruction error exists");
    let measured = Table4Values {
        rel_reconstruction: recon / x.frobenius(),
        rel_pip: report.pip_loss / x.t_matmul(&x)?.frobenius(),
        delta1: report.delta1,
        delta2: report.delta2,
        delta: report.delta,
        delta_max: report.delta_max,
        one_minus_overlap: 1.0 - report.eigenspace_overlap,
    };

    let s1 = spectrum[0] * spectrum[0];
    let sum2: f64 = spectrum.iter().map(|s| s * s).sum();
    let sum4: f64 = spectrum.iter().map(|s| s.powi(4)).sum();
    let predicted = Table4Values {
        rel_reconstruction: spectrum[0] / sum2.sqrt(),
        rel_pip: s1 / sum4.sqrt(),
        delta1: s1 / (s1 + lambda),
        delta2: 0.0,
        delta: s1 / (s1 + lambda),
        delta_max: (s1 + lambda) / lambda,
        one_minus_overlap: 1.0 / d as f64,
    };
    Ok(Table4Result {
        spectrum: spectrum.to_vec(),
        lambda,
        report,
        measured,
        predicted,
    })
}
