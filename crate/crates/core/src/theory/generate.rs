use rand_distr::{Distribution, StudentT};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{stream_rng, CounterRng};

/// I.i.d. uniform entries on `[−1/√d, 1/√d]`, drawn per entry from a counter RNG.
pub fn gen_uniform_matrix(n: usize, d: usize, seed: u64) -> Result<DenseMatrix> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "matrix shape must be positive, got {n}x{d}"
        )));
    }
    let rng = CounterRng::new(seed);
    let bound = 1.0 / (d as f64).sqrt();
    Ok(DenseMatrix::from_fn(n, d, |i, j| {
        (2.0 * rng.uniform(i as u64, j as u64) - 1.0) * bound
    }))
}

/// `d` factors spaced logarithmically from 1 down to `decay_min`.
pub fn log_spaced_scales(d: usize, decay_min: f64) -> Result<Vec<f64>> {
    if !(decay_min > 0.0 && decay_min <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "decay_min must lie in (0, 1], got {decay_min}"
        )));
    }
    if d == 1 {
        return Ok(vec![1.0]);
    }
    Ok((0..d)
        .map(|j| decay_min.powf(j as f64 / (d - 1) as f64))
        .collect())
}

/// [`gen_uniform_matrix`] with column `j` scaled by the `j`-th log-spaced factor.
pub fn gen_scaled_matrix(n: usize, d: usize, decay_min: f64, seed: u64) -> Result<DenseMatrix> {
    let g = log_spaced_scales(d, decay_min)?;
    Ok(gen_uniform_matrix(n, d, seed)?.scale_cols(&g))
}

/// Heavy-tailed test matrix: i.i.d. Student-t entries with `df` degrees of
/// freedom, scaled by `1/√d`.
pub fn gen_student_t_matrix(n: usize, d: usize, df: f64, seed: u64) -> Result<DenseMatrix> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "matrix shape must be positive, got {n}x{d}"
        )));
    }
    let dist = StudentT::new(df)
        .map_err(|e| Error::InvalidArgument(format!("degrees of freedom {df}: {e}")))?;
    let mut rng = stream_rng(seed, 0);
    let scale = 1.0 / (d as f64).sqrt();
    let data = (0..n * d).map(|_| dist.sample(&mut rng) * scale).collect();
    DenseMatrix::new(n, d, data)
}
