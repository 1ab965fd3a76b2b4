use rayon::prelude::*;

use super::{dot, norm_sq, DenseMatrix};

/// Householder QR of an `n x p` matrix, held column-major.
pub(crate) struct HouseholderQr {
    n: usize,
    p: usize,
    vs: Vec<Vec<f64>>,
    taus: Vec<f64>,
    // column-major; upper triangle holds R after factoring
    cols: Vec<Vec<f64>>,
}

impl HouseholderQr {
    pub(crate) fn new(m: &DenseMatrix) -> Self {
        let (n, p) = m.shape();
        let t = m.transpose();
        let mut cols: Vec<Vec<f64>> = (0..p).map(|j| t.row(j).to_vec()).collect();
        let steps = n.min(p);
        let mut vs = Vec::with_capacity(steps);
        let mut taus = Vec::with_capacity(steps);
        for k in 0..steps {
            let x = &cols[k][k..];
            let norm = norm_sq(x).sqrt();
            let mut v = x.to_vec();
            let (tau, alpha) = if norm == 0.0 {
                (0.0, 0.0)
            } else {
                let alpha = if x[0] >= 0.0 { -norm } else { norm };
                v[0] -= alpha;
                let vn = norm_sq(&v);
                if vn == 0.0 {
                    (0.0, x[0])
                } else {
                    (2.0 / vn, alpha)
                }
            };
            if tau != 0.0 {
                let (_, rest) = cols.split_at_mut(k + 1);
                rest.par_iter_mut().for_each(|col| {
                    let seg = &mut col[k..];
                    let w = tau * dot(&v, seg);
                    for (s, vi) in seg.iter_mut().zip(&v) {
                        *s -= w * vi;
                    }
                });
                let col = &mut cols[k];
                col[k] = alpha;
                for s in &mut col[k + 1..] {
                    *s = 0.0;
                }
            }
            vs.push(v);
            taus.push(tau);
        }
        Self {
            n,
            p,
            vs,
            taus,
            cols,
        }
    }

    /// Upper-trapezoidal factor, `min(n, p) x p`.
    pub(crate) fn r(&self) -> DenseMatrix {
        let s = self.n.min(self.p);
        DenseMatrix::from_fn(s, self.p, |i, j| if i <= j { self.cols[j][i] } else { 0.0 })
    }

    /// Applies `Q` to column vectors of length `n`.
    pub(crate) fn apply_q(&self, ys: &mut [Vec<f64>]) {
        ys.par_iter_mut().for_each(|y| {
            debug_assert_eq!(y.len(), self.n);
            for k in (0..self.vs.len()).rev() {
                let tau = self.taus[k];
                if tau == 0.0 {
                    continue;
                }
                let v = &self.vs[k];
                let seg = &mut y[k..];
                let w = tau * dot(v, seg);
                for (s, vi) in seg.iter_mut().zip(v) {
                    *s -= w * vi;
                }
            }
        });
    }

    /// `Q * B` for a `min(n,p) x q` matrix `B`, returned as an `n x q` matrix.
    pub(crate) fn q_times(&self, b: &DenseMatrix) -> DenseMatrix {
        let s = self.n.min(self.p);
        assert_eq!(b.rows(), s);
        let mut ys: Vec<Vec<f64>> = (0..b.cols())
            .map(|j| {
                let mut y = vec![0.0; self.n];
                for i in 0..s {
                    y[i] = b.get(i, j);
                }
                y
            })
            .collect();
        self.apply_q(&mut ys);
        DenseMatrix::from_fn(self.n, b.cols(), |i, j| ys[j][i])
    }
}

/// `R` factor of a Householder QR, `min(n, p) x p`.
pub fn householder_r(m: &DenseMatrix) -> DenseMatrix {
    HouseholderQr::new(m).r()
}

/// Thin `Q` factor: an `n x min(n, p)` matrix with orthonormal columns whose
/// span contains the column span of `m`.
pub fn orthonormal_columns(m: &DenseMatrix) -> DenseMatrix {
    let qr = HouseholderQr::new(m);
    let s = m.rows().min(m.cols());
    qr.q_times(&DenseMatrix::identity(s))
}
