//! Uniform quantization on a symmetric `2^b`-level grid, with the clip
//! threshold picked by golden-section search on the reconstruction error.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bitpack::PackedCodes;
use super::{CompressedEmbedding, Payload, Rounding};
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, DenseMatrix};
use crate::rng::CounterRng;

pub const DEFAULT_CLIP_TOL: f64 = 0.01;
pub const DEFAULT_GRID_POINTS: usize = 1000;

/// `2^bits` equally spaced levels on `[-clip, clip]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizationGrid {
    bits: u8,
    clip: f64,
}

impl QuantizationGrid {
    pub fn new(bits: u8, clip: f64) -> Result<Self> {
        if !(1..=31).contains(&bits) {
            return Err(Error::InvalidArgument(format!(
                "bit width must be in [1, 31], got {bits}"
            )));
        }
        if !(clip > 0.0) || !clip.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "clip threshold must be positive and finite, got {clip}"
            )));
        }
        Ok(Self { bits, clip })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn num_levels(&self) -> u64 {
        1u64 << self.bits
    }

    fn intervals(&self) -> f64 {
        (self.num_levels() - 1) as f64
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.clip / self.intervals()
    }

    /// Level `j`, computed so that the grid is exactly symmetric with endpoints `±clip`.
    pub fn level(&self, j: u32) -> f64 {
        let m = self.intervals();
        self.clip * ((2.0 * j as f64 - m) / m)
    }

    pub fn levels(&self) -> Vec<f64> {
        (0..self.num_levels())
            .map(|j| self.level(j as u32))
            .collect()
    }

    fn check(&self, x: f64) -> Result<()> {
        if x.abs() > self.clip || x.is_nan() {
            return Err(Error::OutOfRange {
                value: x,
                clip: self.clip,
            });
        }
        Ok(())
    }

    // Fractional grid position of x in [0, 2^b - 1].
    fn position(&self, x: f64) -> f64 {
        (x / self.clip + 1.0) * self.intervals() / 2.0
    }

    /// Index of the nearest level; midpoints go up.
    pub fn index_det(&self, x: f64) -> Result<u32> {
        self.check(x)?;
        let top = self.intervals();
        Ok((self.position(x) + 0.5).floor().clamp(0.0, top) as u32)
    }

    /// Indices of the levels bracketing `x`, `lo <= x <= hi`.
    pub fn bracket(&self, x: f64) -> Result<(u32, u32)> {
        self.check(x)?;
        let top = self.num_levels() as u32 - 1;
        let mut lo = (self.position(x).floor().max(0.0) as u32).min(top - 1);
        if self.level(lo) > x {
            lo -= 1;
        } else if self.level(lo + 1) < x {
            lo += 1;
        }
        Ok((lo, lo + 1))
    }

    /// Unbiased stochastic rounding, driven by a uniform draw `u` in `[0, 1)`.
    pub fn index_stoch(&self, x: f64, u: f64) -> Result<u32> {
        let (lo, hi) = self.bracket(x)?;
        let (a, b) = (self.level(lo), self.level(hi));
        if x == a {
            return Ok(lo);
        }
        if x == b {
            return Ok(hi);
        }
        let p_up = (x - a) / (b - a);
        Ok(if u < p_up { hi } else { lo })
    }
}

pub fn clip_value(x: f64, r: f64) -> f64 {
    x.clamp(-r, r)
}

pub fn clip(x: &DenseMatrix, r: f64) -> Result<DenseMatrix> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "clip threshold must be positive, got {r}"
        )));
    }
    Ok(x.map(|v| clip_value(v, r)))
}

pub fn quantize_det(x: f64, grid: &QuantizationGrid) -> Result<f64> {
    Ok(grid.level(grid.index_det(x)?))
}

pub fn quantize_stoch(
    x: f64,
    grid: &QuantizationGrid,
    rng: &CounterRng,
    row: u64,
    col: u64,
) -> Result<f64> {
    Ok(grid.level(grid.index_stoch(x, rng.uniform(row, col))?))
}

/// `‖Q_{b,r}(clip_r(X)) − X‖_F` with deterministic rounding; `r = 0` maps every entry to 0.
pub fn clip_objective(x: &DenseMatrix, bits: u8, r: f64) -> Result<f64> {
    if r <= 0.0 {
        return Ok(x.frobenius());
    }
    let grid = QuantizationGrid::new(bits, r)?;
    let d = x.cols();
    let row_sums: Vec<f64> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let errs: Vec<f64> = x
                .row(i)
                .iter()
                .map(|&v| {
                    let q = grid.level(
                        grid.index_det(clip_value(v, r))
                            .expect("clipped value is in range"),
                    );
                    (q - v) * (q - v)
                })
                .collect();
            debug_assert_eq!(errs.len(), d);
            pairwise_sum(&errs)
        })
        .collect();
    Ok(pairwise_sum(&row_sums).sqrt())
}

/// How the clip threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipSearch {
    Golden { tol: f64 },
    Grid { points: usize },
    Fixed { clip: f64 },
}

impl Default for ClipSearch {
    fn default() -> Self {
        ClipSearch::Golden {
            tol: DEFAULT_CLIP_TOL,
        }
    }
}

fn max_abs_nonzero(x: &DenseMatrix) -> Result<f64> {
    let m = x.max_abs();
    if m == 0.0 {
        return Err(Error::Degenerate(
            "cannot choose a clip threshold for an all-zero matrix".into(),
        ));
    }
    Ok(m)
}

// Keeps the lowest objective seen; the first evaluation wins ties.
struct Best {
    r: f64,
    obj: f64,
}

impl Best {
    fn offer(&mut self, r: f64, obj: f64) {
        if obj < self.obj {
            self.r = r;
            self.obj = obj;
        }
    }
}

/// Golden-section search for the clip threshold over `[0, max|X|]`.
///
/// The upper endpoint is evaluated first, so data that already sits on a grid
/// spanning `±max|X|` is recovered exactly.
pub fn find_clip_threshold(x: &DenseMatrix, bits: u8, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "clip search tolerance must be positive, got {tol}"
        )));
    }
    QuantizationGrid::new(bits, 1.0)?;
    let hi_r = max_abs_nonzero(x)?;
    let f = |r: f64| clip_objective(x, bits, r);

    let mut best = Best {
        r: hi_r,
        obj: f(hi_r)?,
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, hi_r);
    let mut c = b - inv_phi * (b - a);
    let mut e = a + inv_phi * (b - a);
    let (mut fc, mut fe) = (f(c)?, f(e)?);
    best.offer(c, fc);
    best.offer(e, fe);
    while b - a > tol {
        if fc <= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
            best.offer(c, fc);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + inv_phi * (b - a);
            fe = f(e)?;
            best.offer(e, fe);
        }
    }
    Ok(best.r)
}

/// Exhaustive search over `r_i = max|X| · i / points`, `i = 1..=points`.
pub fn grid_clip_threshold(x: &DenseMatrix, bits: u8, points: usize) -> Result<f64> {
    if points == 0 {
        return Err(Error::InvalidArgument(
            "grid search needs at least one point".into(),
        ));
    }
    QuantizationGrid::new(bits, 1.0)?;
    let hi_r = max_abs_nonzero(x)?;
    let mut best = Best {
        r: hi_r,
        obj: f64::INFINITY,
    };
    for i in 1..=points {
        let r = hi_r * i as f64 / points as f64;
        best.offer(r, clip_objective(x, bits, r)?);
    }
    Ok(best.r)
}

pub fn choose_clip(x: &DenseMatrix, bits: u8, search: ClipSearch) -> Result<f64> {
    match search {
        ClipSearch::Golden { tol } => find_clip_threshold(x, bits, tol),
        ClipSearch::Grid { points } => grid_clip_threshold(x, bits, points),
        ClipSearch::Fixed { clip } => {
            QuantizationGrid::new(bits, clip)?;
            Ok(clip)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformOptions {
    pub bits: u8,
    pub rounding: Rounding,
    pub seed: u64,
    pub search: ClipSearch,
}

/// Quantizes `clip_r(X)` onto a fixed grid; returns the level index of every entry.
pub fn quantize_codes(
    x: &DenseMatrix,
    grid: &QuantizationGrid,
    rounding: Rounding,
    seed: u64,
) -> Vec<u32> {
    let rng = CounterRng::new(seed);
    let r = grid.clip();
    let d = x.cols();
    let mut codes = vec![0u32; x.rows() * d];
    if d == 0 {
        return codes;
    }
    codes.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
        for (j, (slot, &v)) in out.iter_mut().zip(x.row(i)).enumerate() {
            let c = clip_value(v, r);
            *slot = match rounding {
                Rounding::Deterministic => grid.index_det(c),
                Rounding::Stochastic => grid.index_stoch(c, rng.uniform(i as u64, j as u64)),
            }
            .expect("clipped value is in range");
        }
    });
    codes
}

pub fn compress_uniform_with(
    x: &DenseMatrix,
    opts: &UniformOptions,
) -> Result<CompressedEmbedding> {
    let r = choose_clip(x, opts.bits, opts.search)?;
    let grid = QuantizationGrid::new(opts.bits, r)?;
    let codes = quantize_codes(x, &grid, opts.rounding, opts.seed);
    let packed = PackedCodes::pack(&codes, x.rows(), x.cols(), opts.bits)?;
    CompressedEmbedding::new(
        x.rows(),
        x.cols(),
        opts.rounding,
        opts.seed,
        Payload::Uniform {
            grid,
            codes: packed,
        },
    )
}

/// Algorithm-1 style compression: golden-section clip search, then rounding.
pub fn compress_uniform(
    x: &DenseMatrix,
    bits: u8,
    rounding: Rounding,
    seed: u64,
) -> Result<CompressedEmbedding> {
    compress_uniform_with(
        x,
        &UniformOptions {
            bits,
            rounding,
            seed,
            search: ClipSearch::default(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(b: u8, r: f64) -> QuantizationGrid {
        QuantizationGrid::new(b, r).unwrap()
    }

    #[test]
    fn grid_shape() {
        let g = grid(2, 1.0);
        let lv = g.levels();
        assert_eq!(lv.len(), 4);
        assert_eq!(lv[0], -1.0);
        assert_eq!(lv[3], 1.0);
        for j in 0..4 {
            assert_eq!(lv[j], -lv[3 - j]);
        }
        assert!((g.spacing() - 2.0 / 3.0).abs() < 1e-15);
        assert!(QuantizationGrid::new(0, 1.0).is_err());
        assert!(QuantizationGrid::new(3, 0.0).is_err());
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_value(0.5, 1.0), 0.5);
        assert_eq!(clip_value(-3.0, 1.0), -1.0);
        assert_eq!(clip_value(1.0000001, 1.0), 1.0);
    }

    #[test]
    fn deterministic_examples() {
        assert_eq!(quantize_det(0.3, &grid(1, 1.0)).unwrap(), 1.0);
        assert!((quantize_det(0.5, &grid(2, 1.0)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(quantize_det(2.0 / 3.0, &grid(2, 1.0)).unwrap(), 1.0);
        assert!(matches!(
            quantize_det(1.5, &grid(2, 1.0)),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn stochastic_examples() {
        let g = grid(2, 1.0);
        // x = 0.5 sits a quarter of the way from 1/3 to 1
        assert_eq!(g.index_stoch(0.5, 0.2499).unwrap(), 3);
        assert_eq!(g.index_stoch(0.5, 0.2501).unwrap(), 2);
        for u in [0.0, 0.5, 0.999_999] {
            assert_eq!(
                g.index_stoch(1.0 / 3.0 * 1.0, u).unwrap(),
                g.index_det(1.0 / 3.0).unwrap()
            );
            assert_eq!(g.index_stoch(-1.0, u).unwrap(), 0);
            assert_eq!(g.index_stoch(1.0, u).unwrap(), 3);
        }
        assert!(g.index_stoch(-1.01, 0.5).is_err());
    }

    #[test]
    fn stochastic_mean_at_zero() {
        let g = grid(1, 1.0);
        let rng = CounterRng::new(5);
        let n = 1_000_000u64;
        let draws: Vec<f64> = (0..n)
            .map(|i| quantize_stoch(0.0, &g, &rng, i / 1000, i % 1000).unwrap())
            .collect();
        let mean = pairwise_sum(&draws) / n as f64;
        // sigma = 1 per draw
        assert!(mean.abs() <= 3.0 / 1000.0, "mean {mean}");
    }

    #[test]
    fn empirical_probability_matches() {
        let g = grid(2, 1.0);
        let rng = CounterRng::new(9);
        let n = 200_000u64;
        let ups = (0..n)
            .filter(|&i| quantize_stoch(0.5, &g, &rng, i, 0).unwrap() == 1.0)
            .count();
        let p = ups as f64 / n as f64;
        let se = (0.25f64 * 0.75 / n as f64).sqrt();
        assert!((p - 0.25).abs() < 4.0 * se, "p {p}");
    }

    fn on_grid_matrix(b: u8, r: f64, rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let g = grid(b, r);
        let rng = CounterRng::new(seed);
        let mut m = DenseMatrix::from_fn(rows, cols, |i, j| {
            g.level((rng.bits(i as u64, j as u64) % g.num_levels()) as u32)
        });
        m.set(0, 0, r);
        m
    }

    #[test]
    fn on_grid_data_round_trips_exactly() {
        for b in [1u8, 2, 3, 5] {
            let x = on_grid_matrix(b, 0.7, 12, 5, b as u64);
            let c = compress_uniform(&x, b, Rounding::Deterministic, 0).unwrap();
            assert_eq!(c.decompress().unwrap(), x, "b = {b}");
            let s = compress_uniform(&x, b, Rounding::Stochastic, 3).unwrap();
            assert_eq!(s.decompress().unwrap(), x, "b = {b}");
        }
    }

    #[test]
    fn constant_magnitude_objective_vanishes() {
        let v = 0.37;
        let x = DenseMatrix::from_fn(6, 4, |i, j| if (i + j) % 3 == 0 { v } else { -v });
        let r = find_clip_threshold(&x, 1, DEFAULT_CLIP_TOL).unwrap();
        let best = clip_objective(&x, 1, r).unwrap();
        assert_eq!(best, 0.0);
        for i in 1..=10_000 {
            let rr = v * i as f64 / 10_000.0;
            assert!(best <= clip_objective(&x, 1, rr).unwrap());
        }
    }

    #[test]
    fn outliers_get_clipped() {
        // 99% at ±0.1, 1% at ±10
        let x = DenseMatrix::from_fn(100, 10, |i, j| {
            let mag = if (i * 10 + j) % 100 == 0 { 10.0 } else { 0.1 };
            if (i + j) % 2 == 0 {
                mag
            } else {
                -mag
            }
        });
        let r = find_clip_threshold(&x, 1, DEFAULT_CLIP_TOL).unwrap();
        assert!(r < 10.0);
        // dense sweep oracle with step 1e-3·max|X|
        let oracle = (1..=1000)
            .map(|i| clip_objective(&x, 1, 10.0 * i as f64 / 1000.0).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(clip_objective(&x, 1, r).unwrap() <= oracle + 1e-9 + 0.02 * oracle);
    }

    #[test]
    fn fine_grid_limit() {
        let x = DenseMatrix::from_fn(20, 7, |i, j| ((i * 7 + j) as f64 * 0.37).sin());
        let obj = clip_objective(&x, 31, x.max_abs()).unwrap();
        assert!(obj <= 1e-6 * x.frobenius());
    }

    #[test]
    fn zero_matrix_has_no_threshold() {
        assert!(matches!(
            find_clip_threshold(&DenseMatrix::zeros(3, 3), 2, 0.01),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn stochastic_codes_are_reproducible() {
        let x = DenseMatrix::from_fn(30, 8, |i, j| ((i * 8 + j) as f64).cos());
        let a = compress_uniform(&x, 3, Rounding::Stochastic, 42).unwrap();
        let b = compress_uniform(&x, 3, Rounding::Stochastic, 42).unwrap();
        assert_eq!(a, b);
        let c = compress_uniform(&x, 3, Rounding::Stochastic, 43).unwrap();
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn deterministic_error_within_half_spacing(
            bits in 1u8..=12,
            r in 0.01f64..10.0,
            t in -1.0f64..=1.0,
        ) {
            let g = grid(bits, r);
            let x = clip_value(t * r, r);
            let q = quantize_det(x, &g).unwrap();
            prop_assert!((q - x).abs() <= g.spacing() / 2.0 * (1.0 + 1e-12));
        }

        #[test]
        fn stochastic_result_brackets_input(
            bits in 1u8..=12,
            r in 0.01f64..10.0,
            t in -1.0f64..=1.0,
            u in 0.0f64..1.0,
        ) {
            let g = grid(bits, r);
            let x = clip_value(t * r, r);
            let (lo, hi) = g.bracket(x).unwrap();
            prop_assert!(g.level(lo) <= x && x <= g.level(hi));
            let j = g.index_stoch(x, u).unwrap();
            prop_assert!(j == lo || j == hi);
        }
    }
}
