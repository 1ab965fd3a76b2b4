#![allow(dead_code)]

use embcomp::linalg::DenseMatrix;
use embcomp::rng::stream_rng;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(n: usize, d: usize, seed: u64) -> DenseMatrix {
    let mut rng = stream_rng(seed, 1000);
    let data = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    DenseMatrix::new(n, d, data).unwrap()
}

pub fn na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Orthonormal basis of the column span via Householder QR (full column rank assumed).
pub fn span(m: &DenseMatrix) -> DMatrix<f64> {
    na(m).qr().q()
}

pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = na(m).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `‖QᵀQ̃‖²/max(d, k)` from two independent QR factorizations.
pub fn overlap_oracle(x: &DenseMatrix, xt: &DenseMatrix) -> f64 {
    let (q, qt) = (span(x), span(xt));
    (q.transpose() * qt).norm_squared() / x.cols().max(xt.cols()) as f64
}

pub fn write_temp_embedding(dir: &std::path::Path, name: &str, m: &DenseMatrix) -> std::path::PathBuf {
    let tokens = (0..m.rows()).map(|i| format!("w{i}")).collect();
    let vocab = embcomp::embedding::Vocabulary::new(tokens).unwrap();
    let p = dir.join(name);
    embcomp::io::write_text_embedding(&p, m, Some(&vocab)).unwrap();
    p
}
