use super::qr::HouseholderQr;
use super::{dot, norm_sq, DenseMatrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `M = U diag(s) Vᵀ`.
///
/// `u` is `rows x r`, `v` is `cols x r` with `r = min(rows, cols)`; `s` is
/// non-increasing.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
}

impl ThinSvd {
    /// Numerical rank under the `s[0] * max(rows, cols) * eps` convention.
    pub fn rank(&self) -> usize {
        numerical_rank(&self.s, self.u.rows().max(self.v.rows()))
    }

    /// Left singular vectors belonging to the numerically nonzero singular values.
    pub fn retained_u(&self) -> DenseMatrix {
        self.u.leading_cols(self.rank())
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.u
            .scale_cols(&self.s)
            .matmul_t(&self.v)
            .expect("factor shapes are consistent")
    }
}

/// Count of singular values above `s[0] * m * eps`.
pub fn numerical_rank(s: &[f64], m: usize) -> usize {
    match s.first() {
        None => 0,
        Some(&top) if top <= 0.0 => 0,
        Some(&top) => {
            let threshold = top * m as f64 * f64::EPSILON;
            s.iter().filter(|&&x| x > threshold).count()
        }
    }
}

/// Thin SVD via Householder QR followed by one-sided Jacobi on the square factor.
pub fn thin_svd(m: &DenseMatrix) -> Result<ThinSvd> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "thin_svd needs a non-empty matrix, got {rows}x{cols}"
        )));
    }
    if rows < cols {
        let t = thin_svd(&m.transpose())?;
        return Ok(ThinSvd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    let qr = HouseholderQr::new(m);
    let r = qr.r();
    let (ur, s, v) = jacobi_svd_square(&r).ok_or(Error::NoConvergence {
        rows,
        cols,
        sweeps: MAX_SWEEPS,
    })?;
    let u = qr.q_times(&ur);
    Ok(ThinSvd { u, s, v })
}

/// One-sided Jacobi on a square matrix. Returns `(U, s, V)` sorted by `s` descending.
fn jacobi_svd_square(a: &DenseMatrix) -> Option<(DenseMatrix, Vec<f64>, DenseMatrix)> {
    let p = a.rows();
    debug_assert_eq!(p, a.cols());
    let t = a.transpose();
    let mut w: Vec<Vec<f64>> = (0..p).map(|j| t.row(j).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * p as f64;
    // Columns at rounding level relative to ‖A‖ cannot be orthogonalised
    // further; they are left alone and later replaced by completion.
    let frob_sq: f64 = w.iter().map(|c| norm_sq(c)).sum();
    let floor = tol * tol * frob_sq;

    let mut converged = p < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for i in 0..p - 1 {
            for j in i + 1..p {
                let alpha = norm_sq(&w[i]);
                let beta = norm_sq(&w[j]);
                if alpha <= floor || beta <= floor {
                    continue;
                }
                let gamma = dot(&w[i], &w[j]);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let tan = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + tan * tan).sqrt();
                let s = c * tan;
                rotate(&mut w, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return None;
    }

    let sing: Vec<f64> = w.iter().map(|c| norm_sq(c).sqrt()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| sing[y].total_cmp(&sing[x]).then(x.cmp(&y)));

    let top = sing[order[0]];
    let negligible = (top * p as f64 * f64::EPSILON).max(floor.sqrt());
    let mut ucols: Vec<Option<Vec<f64>>> = order
        .iter()
        .map(|&k| {
            let sk = sing[k];
            (sk > negligible && sk > 0.0).then(|| w[k].iter().map(|x| x / sk).collect())
        })
        .collect();
    complete_orthonormal(&mut ucols, p);

    let s: Vec<f64> = order.iter().map(|&k| sing[k]).collect();
    let u = DenseMatrix::from_fn(p, p, |i, j| ucols[j].as_ref().unwrap()[i]);
    let vm = DenseMatrix::from_fn(p, p, |i, j| v[order[j]][i]);
    Some((u, s, vm))
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    let (a, b) = (&mut lo[i], &mut hi[0]);
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Fills `None` slots with unit vectors orthogonal to every other column.
fn complete_orthonormal(cols: &mut [Option<Vec<f64>>], dim: usize) {
    let mut candidate = 0;
    for slot in 0..cols.len() {
        if cols[slot].is_some() {
            continue;
        }
        while candidate < dim {
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of Gram-Schmidt against everything filled so far.
            for _ in 0..2 {
                for other in cols.iter().flatten() {
                    let proj = dot(other, &e);
                    for (x, o) in e.iter_mut().zip(other) {
                        *x -= proj * o;
                    }
                }
            }
            let nrm = norm_sq(&e).sqrt();
            if nrm > 0.5 {
                cols[slot] = Some(e.into_iter().map(|x| x / nrm).collect());
                break;
            }
        }
    }
}

/// Orthonormal basis of `span(U) + span(W)`, via the SVD of `[U | W]`.
pub fn joint_orthonormal_basis(u: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix> {
    let cat = u.hconcat(w)?;
    let svd = thin_svd(&cat)?;
    let rank = numerical_rank(&svd.s, cat.rows().max(cat.cols()));
    Ok(svd.u.leading_cols(rank))
}

/// Minimiser of `||M w - y||` through the SVD pseudo-inverse.
pub fn least_squares_solve(m: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != m.rows() {
        return Err(Error::DimensionMismatch {
            op: "least_squares_solve",
            expected: (m.rows(), 1),
            got: (y.len(), 1),
        });
    }
    let svd = thin_svd(m)?;
    let rank = svd.rank();
    if rank < m.cols() {
        return Err(Error::RankDeficient {
            op: "least_squares_solve",
            rank,
            required: m.cols(),
        });
    }
    let uty = svd.u.t_matvec(y)?;
    let scaled: Vec<f64> = uty.iter().zip(&svd.s).map(|(c, s)| c / s).collect();
    svd.v.matvec(&scaled)
}
