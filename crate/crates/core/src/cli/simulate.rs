//! `simulate`: synthetic experiments driven by a JSON config.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use super::{fmt_value, usage, Ctx};
use crate::compress::{compress, ClipSearch, CompressionSpec, Rounding};
use crate::error::{Error, Result};
use crate::io::json::{maybe_inf, read_json, write_report};
use crate::io::{read_text_embedding, write_csv};
use crate::linalg::DenseMatrix;
use crate::theory::{
    clip_grid, clip_optima, clipping_curve, exact_expected_gap, expected_gap_upper_bound,
    expected_gap_via_traces, gen_student_t_matrix, gen_uniform_matrix, lipschitz_gap_bound,
    quantization_overlap_trials, rounding_seed, scaling_experiment, simulate_lipschitz_gap,
    simulate_regression_gap, table4_perturbation, uniform_overlap_bound, ClipPoint,
    ExperimentResult, GdConfig, LabelModel, OverlapBound, OverlapTrials, ScalingAxis, ScalingBase,
    ScalingRow, Table4Result,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Monte-Carlo regression gap against its closed form.
    Theorem1,
    /// Monte-Carlo logistic-loss gap against the Lipschitz bound.
    Theorem2,
    /// Expected 1 - overlap under stochastic quantization against its bound.
    Theorem3,
    /// Measures of a rotated, rescaled embedding against their closed forms.
    Table4,
    /// 1 - overlap while one of bits, scale, vocabulary or dimension varies.
    Scaling,
    /// Overlap and reconstruction error across clip thresholds.
    ClippingCurve,
}

impl Experiment {
    fn kind(self) -> &'static str {
        match self {
            Experiment::Theorem1 => "theorem1",
            Experiment::Theorem2 => "theorem2",
            Experiment::Theorem3 => "theorem3",
            Experiment::Table4 => "table4",
            Experiment::Scaling => "scaling",
            Experiment::ClippingCurve => "clipping_curve",
        }
    }
}

/// How `X̃` is built from `X` in the regression experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum CompressionConfig {
    Uniform {
        bits: u8,
        #[serde(default)]
        rounding: Rounding,
        #[serde(default)]
        clip_search: ClipSearch,
    },
    Kmeans {
        bits: u8,
    },
    Pca {
        k: usize,
    },
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig::Uniform {
            bits: 1,
            rounding: Rounding::Deterministic,
            clip_search: ClipSearch::default(),
        }
    }
}

impl CompressionConfig {
    fn spec(self) -> CompressionSpec {
        match self {
            CompressionConfig::Uniform {
                bits,
                rounding,
                clip_search,
            } => CompressionSpec::Uniform {
                bits,
                rounding,
                search: clip_search,
            },
            CompressionConfig::Kmeans { bits } => CompressionSpec::KMeans { bits },
            CompressionConfig::Pca { k } => CompressionSpec::Pca { k, keep_v: false },
        }
    }
}

fn default_model() -> LabelModel {
    LabelModel::identity(0.0).expect("zero noise is valid")
}

fn default_n() -> usize {
    200
}

fn default_d() -> usize {
    10
}

fn default_regression_trials() -> usize {
    10_000
}

fn default_lipschitz_trials() -> usize {
    1_000
}

fn default_lipschitz() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegressionConfig {
    /// Text embedding used as `X`; otherwise `X` is drawn uniformly.
    #[serde(default)]
    input: Option<PathBuf>,
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default = "default_d")]
    d: usize,
    #[serde(default)]
    compression: CompressionConfig,
    #[serde(default = "default_model")]
    model: LabelModel,
    #[serde(default)]
    trials: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default = "default_lipschitz")]
    lipschitz: f64,
    #[serde(default)]
    gd: GdConfig,
}

#[derive(Debug, Clone, Serialize)]
struct Theorem1Body {
    result: ExperimentResult,
    exact_gap: f64,
    trace_gap: f64,
    upper_bound: f64,
    /// `|estimate − exact| / std_error`.
    std_errors_from_exact: f64,
}

#[derive(Debug, Clone, Serialize)]
struct Theorem2Body {
    result: ExperimentResult,
    bound: f64,
    /// `bound − estimate`, in units of the standard error.
    std_errors_below_bound: f64,
}

fn default_overlap_trials() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Theorem3Config {
    #[serde(alias = "b")]
    bits: u8,
    /// Conditioning constant; measured from `X` when absent.
    #[serde(default)]
    a: Option<f64>,
    #[serde(default)]
    n: Option<usize>,
    #[serde(default)]
    d: Option<usize>,
    #[serde(default = "default_overlap_trials")]
    trials: usize,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
struct Theorem3Body {
    bits: u8,
    a: f64,
    bound: OverlapBound,
    trials: Option<OverlapTrials>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Table4Config {
    spectrum: Vec<f64>,
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default)]
    lambda: Option<f64>,
    #[serde(default)]
    seed: Option<u64>,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalingConfig {
    axis: ScalingAxis,
    levels: Vec<f64>,
    #[serde(default)]
    base: ScalingBase,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
struct ScalingLevel {
    level: f64,
    mean_one_minus_overlap: f64,
    mean_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
struct ScalingBody {
    axis: ScalingAxis,
    base: ScalingBase,
    levels: Vec<ScalingLevel>,
    rows: Vec<ScalingRow>,
}

fn default_clip_bits() -> Vec<u8> {
    vec![1, 2, 4]
}

fn default_roundings() -> Vec<Rounding> {
    vec![Rounding::Deterministic, Rounding::Stochastic]
}

fn default_points() -> usize {
    100
}

fn default_clip_n() -> usize {
    10_000
}

fn default_clip_d() -> usize {
    50
}

fn default_df() -> f64 {
    5.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClippingConfig {
    /// Text embedding to sweep; otherwise Student-t entries are drawn.
    #[serde(default)]
    input: Option<PathBuf>,
    #[serde(default = "default_clip_n")]
    n: usize,
    #[serde(default = "default_clip_d")]
    d: usize,
    #[serde(default = "default_df")]
    df: f64,
    #[serde(default = "default_clip_bits")]
    bits: Vec<u8>,
    #[serde(default = "default_roundings")]
    rounding: Vec<Rounding>,
    #[serde(default = "default_points")]
    points: usize,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
struct ClipCurve {
    bits: u8,
    rounding: Rounding,
    argmin_error_r: f64,
    argmax_overlap_r: f64,
    /// Grid steps from the error minimizer to the nearest overlap maximizer.
    steps_apart: usize,
    points: Vec<ClipPoint>,
}

#[derive(Debug, Clone, Serialize)]
struct ClipCsvRow {
    bits: u8,
    rounding: Rounding,
    r: f64,
    overlap: f64,
    recon_error: f64,
}

#[derive(Debug, Clone, Serialize)]
struct ClippingBody {
    n: usize,
    d: usize,
    #[serde(with = "maybe_inf")]
    max_abs: f64,
    curves: Vec<ClipCurve>,
}

pub(super) fn run(
    exp: Experiment,
    config: &Path,
    out: &Path,
    csv: Option<&Path>,
    ctx: &mut Ctx,
) -> Result<()> {
    if csv.is_some() && !matches!(exp, Experiment::Scaling | Experiment::ClippingCurve) {
        return Err(usage(
            "--csv only applies to the scaling and clipping-curve experiments",
        ));
    }
    let mut inputs = vec![config.to_path_buf()];
    match exp {
        Experiment::Theorem1 | Experiment::Theorem2 => {
            let cfg: RegressionConfig = read_json(config)?;
            if let Some(p) = &cfg.input {
                inputs.push(p.clone());
            }
            let seed = cfg.seed.unwrap_or(ctx.seed);
            let x = match &cfg.input {
                Some(p) => read_text_embedding(p, ctx.format)?.into_parts().0,
                None => gen_uniform_matrix(cfg.n, cfg.d, seed)?,
            };
            let xt = compress(&x, &cfg.compression.spec(), rounding_seed(seed))?.decompress()?;
            if exp == Experiment::Theorem1 {
                let body = theorem1(&x, &xt, &cfg, seed)?;
                ctx.say(format!(
                    "gap estimate {:.6e} +/- {:.2e}; exact {:.6e} ({:.2} standard errors)",
                    body.result.estimate,
                    body.result.std_error,
                    body.exact_gap,
                    body.std_errors_from_exact
                ));
                write_report(out, exp.kind(), &inputs, &body)?;
            } else {
                let body = theorem2(&x, &xt, &cfg, seed)?;
                ctx.say(format!(
                    "gap estimate {:.6e} +/- {:.2e}; bound {:.6e}",
                    body.result.estimate, body.result.std_error, body.bound
                ));
                write_report(out, exp.kind(), &inputs, &body)?;
            }
        }
        Experiment::Theorem3 => {
            let cfg: Theorem3Config = read_json(config)?;
            let body = theorem3(&cfg, cfg.seed.unwrap_or(ctx.seed))?;
            ctx.say(format!(
                "b={} a={:.6}: bound {:.5}{}",
                body.bits,
                body.a,
                body.bound.value,
                if body.bound.vacuous { " (vacuous)" } else { "" }
            ));
            if let Some(t) = &body.trials {
                ctx.say(format!(
                    "mean 1 - overlap {:.6e} +/- {:.2e} over {} trials",
                    t.mean_one_minus_overlap,
                    t.std_error,
                    t.samples.len()
                ));
            }
            write_report(out, exp.kind(), &inputs, &body)?;
        }
        Experiment::Table4 => {
            let cfg: Table4Config = read_json(config)?;
            let body: Table4Result = table4_perturbation(
                &cfg.spectrum,
                cfg.n,
                cfg.seed.unwrap_or(ctx.seed),
                cfg.lambda,
            )?;
            ctx.say(format!(
                "max |measured - predicted| = {:.3e}",
                body.max_abs_deviation()
            ));
            write_report(out, exp.kind(), &inputs, &body)?;
        }
        Experiment::Scaling => {
            let cfg: ScalingConfig = read_json(config)?;
            let rows = scaling_experiment(cfg.axis, &cfg.levels, &cfg.base, &cfg.seeds)?;
            let levels: Vec<ScalingLevel> = cfg
                .levels
                .iter()
                .map(|&level| {
                    let at: Vec<&ScalingRow> = rows.iter().filter(|r| r.level == level).collect();
                    let k = at.len() as f64;
                    ScalingLevel {
                        level,
                        mean_one_minus_overlap: at.iter().map(|r| r.one_minus_overlap).sum::<f64>()
                            / k,
                        mean_bound: at.iter().map(|r| r.bound).sum::<f64>() / k,
                    }
                })
                .collect();
            for l in &levels {
                ctx.say(format!(
                    "level {}: mean 1 - overlap {:.6e} (bound {})",
                    l.level,
                    l.mean_one_minus_overlap,
                    fmt_value(Some(l.mean_bound))
                ));
            }
            if let Some(p) = csv {
                write_csv(p, &rows)?;
            }
            let body = ScalingBody {
                axis: cfg.axis,
                base: cfg.base,
                levels,
                rows,
            };
            write_report(out, exp.kind(), &inputs, &body)?;
        }
        Experiment::ClippingCurve => {
            let cfg: ClippingConfig = read_json(config)?;
            if let Some(p) = &cfg.input {
                inputs.push(p.clone());
            }
            let seed = cfg.seed.unwrap_or(ctx.seed);
            let body = clipping(&cfg, seed, ctx)?;
            for c in &body.curves {
                ctx.say(format!(
                    "b={} {:?}: argmin error r={:.6}, argmax overlap r={:.6} ({} steps apart)",
                    c.bits, c.rounding, c.argmin_error_r, c.argmax_overlap_r, c.steps_apart
                ));
            }
            if let Some(p) = csv {
                let rows: Vec<ClipCsvRow> = body
                    .curves
                    .iter()
                    .flat_map(|c| {
                        c.points.iter().map(|p| ClipCsvRow {
                            bits: c.bits,
                            rounding: c.rounding,
                            r: p.r,
                            overlap: p.overlap,
                            recon_error: p.recon_error,
                        })
                    })
                    .collect();
                write_csv(p, &rows)?;
            }
            write_report(out, exp.kind(), &inputs, &body)?;
        }
    }
    ctx.say(format!("wrote {}", out.display()));
    Ok(())
}

fn theorem1(
    x: &DenseMatrix,
    xt: &DenseMatrix,
    cfg: &RegressionConfig,
    seed: u64,
) -> Result<Theorem1Body> {
    let trials = cfg.trials.unwrap_or_else(default_regression_trials);
    let mut result = simulate_regression_gap(x, xt, &cfg.model, trials, seed)?;
    result.config_echo = echo(cfg)?;
    let exact_gap = exact_expected_gap(x, xt, &cfg.model)?;
    Ok(Theorem1Body {
        std_errors_from_exact: (result.estimate - exact_gap).abs() / result.std_error,
        exact_gap,
        trace_gap: expected_gap_via_traces(x, xt, &cfg.model)?,
        upper_bound: expected_gap_upper_bound(x, xt, &cfg.model)?,
        result,
    })
}

fn theorem2(
    x: &DenseMatrix,
    xt: &DenseMatrix,
    cfg: &RegressionConfig,
    seed: u64,
) -> Result<Theorem2Body> {
    let trials = cfg.trials.unwrap_or_else(default_lipschitz_trials);
    let mut result =
        simulate_lipschitz_gap(x, xt, &cfg.model, cfg.lipschitz, trials, seed, &cfg.gd)?;
    result.config_echo = echo(cfg)?;
    let bound = lipschitz_gap_bound(x, xt, cfg.lipschitz, &cfg.model)?;
    Ok(Theorem2Body {
        std_errors_below_bound: (bound - result.estimate) / result.std_error,
        bound,
        result,
    })
}

fn echo<T: Serialize>(cfg: &T) -> Result<serde_json::Value> {
    serde_json::to_value(cfg).map_err(|source| Error::Json {
        context: "config echo".into(),
        source,
    })
}

fn theorem3(cfg: &Theorem3Config, seed: u64) -> Result<Theorem3Body> {
    let trials = match (cfg.n, cfg.d) {
        (Some(n), Some(d)) => Some(quantization_overlap_trials(
            &gen_uniform_matrix(n, d, seed)?,
            cfg.bits,
            cfg.trials,
            seed,
        )?),
        (None, None) => None,
        _ => {
            return Err(usage(
                "theorem3 config: give both \"n\" and \"d\" to run trials, or neither",
            ))
        }
    };
    let a = match (cfg.a, &trials) {
        (Some(a), _) => a,
        (None, Some(t)) => t.a,
        (None, None) => {
            return Err(usage(
                "theorem3 config: give \"a\", or \"n\" and \"d\" to measure it",
            ))
        }
    };
    Ok(Theorem3Body {
        bits: cfg.bits,
        a,
        bound: uniform_overlap_bound(cfg.bits as u32, a)?,
        trials,
    })
}

fn clipping(cfg: &ClippingConfig, seed: u64, ctx: &Ctx) -> Result<ClippingBody> {
    if cfg.points == 0 {
        return Err(usage(
            "clipping-curve config: \"points\" must be at least 1",
        ));
    }
    let x = match &cfg.input {
        Some(p) => read_text_embedding(p, ctx.format)?.into_parts().0,
        None => gen_student_t_matrix(cfg.n, cfg.d, cfg.df, seed)?,
    };
    let grid = clip_grid(&x, cfg.points);
    let mut curves = Vec::new();
    for &bits in &cfg.bits {
        for &rounding in &cfg.rounding {
            let points = clipping_curve(&x, bits, rounding, &grid, rounding_seed(seed))?;
            let o =
                clip_optima(&points).ok_or_else(|| usage("clipping-curve config: empty grid"))?;
            curves.push(ClipCurve {
                bits,
                rounding,
                argmin_error_r: points[o.argmin_error].r,
                argmax_overlap_r: points[o.argmax_overlap].r,
                steps_apart: o.steps_apart,
                points,
            });
        }
    }
    Ok(ClippingBody {
        n: x.rows(),
        d: x.cols(),
        max_abs: x.max_abs(),
        curves,
    })
}
