use super::{dot, DenseMatrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix; `values` ascending, `vectors`
/// holds the matching eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

fn check_square(a: &DenseMatrix, op: &'static str) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch {
            op,
            expected: (a.rows(), a.rows()),
            got: a.shape(),
        });
    }
    Ok(())
}

fn check_symmetric(a: &DenseMatrix) -> Result<()> {
    let tol = 1e-10 * a.max_abs().max(1.0);
    for i in 0..a.rows() {
        for j in i + 1..a.cols() {
            let gap = (a.get(i, j) - a.get(j, i)).abs();
            if gap > tol {
                return Err(Error::NotSymmetric {
                    row: i,
                    col: j,
                    gap,
                });
            }
        }
    }
    Ok(())
}

/// Cyclic Jacobi eigen-solver for symmetric matrices.
pub fn sym_eigen(a: &DenseMatrix) -> Result<SymEigen> {
    check_square(a, "sym_eigen")?;
    check_symmetric(a)?;
    let m = a.rows();
    let mut w = a.symmetrized().into_data();
    let mut v = DenseMatrix::identity(m).into_data();
    let abs_floor = f64::EPSILON * 1e-2 * a.frobenius();

    let mut converged = m < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..m - 1 {
            for q in p + 1..m {
                let apq = w[p * m + q];
                let (app, aqq) = (w[p * m + p], w[q * m + q]);
                if apq.abs() <= abs_floor || apq.abs() <= f64::EPSILON * (app * aqq).abs().sqrt() {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                w[p * m + p] = app - t * apq;
                w[q * m + q] = aqq + t * apq;
                w[p * m + q] = 0.0;
                w[q * m + p] = 0.0;
                for r in 0..m {
                    if r == p || r == q {
                        continue;
                    }
                    let g = w[r * m + p];
                    let h = w[r * m + q];
                    let np = g - s * (h + g * tau);
                    let nq = h + s * (g - h * tau);
                    w[r * m + p] = np;
                    w[p * m + r] = np;
                    w[r * m + q] = nq;
                    w[q * m + r] = nq;
                }
                for r in 0..m {
                    let g = v[r * m + p];
                    let h = v[r * m + q];
                    v[r * m + p] = g - s * (h + g * tau);
                    v[r * m + q] = h + s * (g - h * tau);
                }
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            rows: m,
            cols: m,
            sweeps: MAX_SWEEPS,
        });
    }

    let diag: Vec<f64> = (0..m).map(|i| w[i * m + i]).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| diag[x].total_cmp(&diag[y]).then(x.cmp(&y)));
    let values = order.iter().map(|&k| diag[k]).collect();
    let vectors = DenseMatrix::from_fn(m, m, |i, j| v[i * m + order[j]]);
    Ok(SymEigen { values, vectors })
}

pub fn sym_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(sym_eigen(a)?.values)
}

/// Lower-triangular `L` with `B = L Lᵀ`.
pub fn cholesky(b: &DenseMatrix) -> Result<DenseMatrix> {
    check_square(b, "cholesky")?;
    let m = b.rows();
    let mut l = DenseMatrix::zeros(m, m);
    for j in 0..m {
        let lj = l.row(j)[..j].to_vec();
        let pivot = b.get(j, j) - dot(&lj, &lj);
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                value: pivot,
            });
        }
        let diag = pivot.sqrt();
        l.set(j, j, diag);
        for i in j + 1..m {
            let v = (b.get(i, j) - dot(&l.row(i)[..j], &lj)) / diag;
            l.set(i, j, v);
        }
    }
    Ok(l)
}

// Solves L X = B column by column; returns X as rows = columns of the solution.
fn forward_solve_cols(l: &DenseMatrix, b: &DenseMatrix) -> Vec<Vec<f64>> {
    let m = l.rows();
    (0..b.cols())
        .map(|c| {
            let mut x = vec![0.0; m];
            for i in 0..m {
                x[i] = (b.get(i, c) - dot(&l.row(i)[..i], &x[..i])) / l.get(i, i);
            }
            x
        })
        .collect()
}

/// Eigenvalues `μ` of the pencil `A v = μ B v`, ascending, through the
/// Cholesky reduction `L⁻¹ A L⁻ᵀ`.
pub fn sym_generalized_eigs(a: &DenseMatrix, b: &DenseMatrix) -> Result<Vec<f64>> {
    check_square(a, "sym_generalized_eigs")?;
    check_square(b, "sym_generalized_eigs")?;
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            op: "sym_generalized_eigs",
            expected: a.shape(),
            got: b.shape(),
        });
    }
    check_symmetric(a)?;
    let l = cholesky(b)?;
    let m = a.rows();
    // Y = L⁻¹ A, stored by columns; C = L⁻¹ Yᵀ since A is symmetric.
    let y_cols = forward_solve_cols(&l, a);
    let yt = DenseMatrix::from_fn(m, m, |i, j| y_cols[i][j]);
    let c_cols = forward_solve_cols(&l, &yt);
    let c = DenseMatrix::from_fn(m, m, |i, j| c_cols[j][i]).symmetrized();
    sym_eigenvalues(&c)
}
