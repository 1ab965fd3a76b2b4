use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{exact_expected_gap, full_rank_basis, gap_parts, lipschitz_gap_bound, mean_and_stderr};
use super::{ExperimentResult, LabelModel, TheoryKind};
use crate::error::{Error, Result};
use crate::linalg::{least_squares_solve, norm_sq, pairwise_sum, thin_svd, DenseMatrix};
use crate::measures::LeftBasis;
use crate::rng::stream_rng;

fn risk_in_basis(u: &DenseMatrix, ybar: &[f64], sigma2: f64) -> Result<f64> {
    let proj = u.t_matvec(ybar)?;
    let n = ybar.len() as f64;
    Ok((norm_sq(ybar) - norm_sq(&proj) + u.cols() as f64 * sigma2) / n)
}

/// Risk of ordinary least squares on `X` under fixed design with clean labels
/// `ȳ` and noise variance `σ²`: `(‖ȳ‖² − ‖Uᵀȳ‖² + dσ²)/n`.
pub fn closed_form_risk(x: &DenseMatrix, ybar: &[f64], sigma2: f64) -> Result<f64> {
    if ybar.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            op: "closed_form_risk",
            expected: (x.rows(), 1),
            got: (ybar.len(), 1),
        });
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be >= 0, got {sigma2}"
        )));
    }
    let b = full_rank_basis(x, "closed_form_risk")?;
    risk_in_basis(&b.u, ybar, sigma2)
}

fn draw_z(rng: &mut impl Rng, d: usize, root: Option<&DenseMatrix>) -> Result<Vec<f64>> {
    let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    match root {
        Some(r) => r.matvec(&g),
        None => Ok(g),
    }
}

/// Monte-Carlo check of [`exact_expected_gap`]: draws `z`, sets `ȳ = Uz`
/// and averages the difference of the closed-form risks. Trial `t` uses the
/// random stream `(seed, t)`.
pub fn simulate_regression_gap(
    x: &DenseMatrix,
    xt: &DenseMatrix,
    model: &LabelModel,
    trials: usize,
    seed: u64,
) -> Result<ExperimentResult> {
    if trials < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 trials, got {trials}"
        )));
    }
    let (parts, b, bt) = gap_parts(x, xt, model)?;
    let root = model.sqrt_covariance(parts.d)?;
    let sigma2 = parts.sigma2;
    let gaps = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let z = draw_z(&mut rng, parts.d, root.as_ref())?;
            let ybar = b.u.matvec(&z)?;
            Ok(risk_in_basis(&bt.u, &ybar, sigma2)? - risk_in_basis(&b.u, &ybar, sigma2)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (estimate, std_error) = mean_and_stderr(&gaps);
    Ok(ExperimentResult {
        estimate,
        std_error,
        theory_value: exact_expected_gap(x, xt, model)?,
        theory_kind: TheoryKind::ExactIdentity,
        trials,
        config_echo: json!({
            "n": parts.n,
            "d": parts.d,
            "k": parts.k,
            "model": model,
            "trials": trials,
            "seed": seed,
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Squared,
    /// Logistic loss against logit labels.
    Logistic,
}

/// Full-batch gradient descent settings for the logistic fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdConfig {
    pub max_steps: usize,
    /// Gradient-norm target for the summed loss; `None` means `1e-6·n`.
    pub tol: Option<f64>,
    /// Consecutive loss increases treated as divergence.
    pub divergence_window: usize,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            max_steps: 100_000,
            tol: None,
            divergence_window: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub weights: Vec<f64>,
    pub steps: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Cross-entropy between the label probability `σ(label)` and `σ(pred)`.
pub fn logistic_loss(pred: f64, label: f64) -> f64 {
    let p = sigmoid(label);
    p * softplus(-pred) + (1.0 - p) * softplus(pred)
}

fn mean_logistic(pred: &[f64], labels: &[f64]) -> f64 {
    let terms: Vec<f64> = pred
        .iter()
        .zip(labels)
        .map(|(&a, &b)| logistic_loss(a, b))
        .collect();
    pairwise_sum(&terms) / pred.len() as f64
}

/// Fits `w` minimising `Σ ℓ(xᵢᵀw, yᵢ)`. Squared loss goes through the SVD
/// solver; logistic loss uses gradient descent with step `0.5/λ_max(XᵀX/n)`,
/// halved until the Armijo condition holds.
pub fn fit_linear_model(
    x: &DenseMatrix,
    y: &[f64],
    loss: Loss,
    gd: &GdConfig,
) -> Result<FitResult> {
    let n = x.rows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            op: "fit_linear_model",
            expected: (n, 1),
            got: (y.len(), 1),
        });
    }
    let svd = thin_svd(x)?;
    let rank = svd.rank();
    if rank < x.cols() {
        return Err(Error::RankDeficient {
            op: "fit_linear_model",
            rank,
            required: x.cols(),
        });
    }
    match loss {
        Loss::Squared => {
            let weights = least_squares_solve(x, y)?;
            let resid: Vec<f64> = x
                .matvec(&weights)?
                .iter()
                .zip(y)
                .map(|(p, t)| p - t)
                .collect();
            let grad_norm = norm_sq(&x.t_matvec(&resid)?).sqrt();
            Ok(FitResult {
                weights,
                steps: 0,
                converged: true,
                grad_norm,
            })
        }
        Loss::Logistic => {
            let lmax = svd.s[0] * svd.s[0] / n as f64;
            logistic_descent(x, y, 0.5 / lmax, gd)
        }
    }
}

fn logistic_descent(x: &DenseMatrix, y: &[f64], step0: f64, gd: &GdConfig) -> Result<FitResult> {
    let n = x.rows() as f64;
    let tol = gd.tol.unwrap_or(1e-6 * n);
    let targets: Vec<f64> = y.iter().map(|&v| sigmoid(v)).collect();
    let mut w = vec![0.0; x.cols()];
    let mut pred = vec![0.0; x.rows()];
    let mut f = mean_logistic(&pred, y);
    let mut increases = 0;
    let mut steps = 0;
    loop {
        let resid: Vec<f64> = pred
            .iter()
            .zip(&targets)
            .map(|(&p, &t)| sigmoid(p) - t)
            .collect();
        // gradient of the mean loss; the summed loss has n times this
        let g: Vec<f64> = x.t_matvec(&resid)?.iter().map(|v| v / n).collect();
        let gsq = norm_sq(&g);
        let grad_norm = n * gsq.sqrt();
        if grad_norm <= tol || steps >= gd.max_steps {
            return Ok(FitResult {
                weights: w,
                steps,
                converged: grad_norm <= tol,
                grad_norm,
            });
        }
        let mut t = step0;
        let mut next = None;
        for _ in 0..60 {
            let cand: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let cand_pred = x.matvec(&cand)?;
            let fc = mean_logistic(&cand_pred, y);
            let accept = fc <= f - 1e-4 * t * gsq;
            next = Some((cand, cand_pred, fc));
            if accept {
                break;
            }
            t *= 0.5;
        }
        let (cand, cand_pred, fc) = next.expect("at least one trial step");
        if !fc.is_finite() {
            return Err(Error::Divergence { steps, loss: fc });
        }
        increases = if fc > f { increases + 1 } else { 0 };
        if increases >= gd.divergence_window {
            return Err(Error::Divergence { steps, loss: fc });
        }
        w = cand;
        pred = cand_pred;
        f = fc;
        steps += 1;
    }
}

fn scaled_basis(b: &LeftBasis) -> DenseMatrix {
    // √n·U has XᵀX/n = I; the fitted predictions only depend on the span.
    b.u.scaled((b.u.rows() as f64).sqrt())
}

/// Monte-Carlo estimate of `E[R(X̃) − R(X)]` for the logistic loss, compared
/// against [`lipschitz_gap_bound`]. Each trial draws `z` and Gaussian noise
/// `ε`, fits on `y = Uz + ε` in both spaces and scores the predictions
/// against `ȳ = Uz`.
///
/// Fits run in the retained left singular basis of each matrix, which spans
/// the same predictions as the raw columns and is perfectly conditioned.
pub fn simulate_lipschitz_gap(
    x: &DenseMatrix,
    xt: &DenseMatrix,
    model: &LabelModel,
    lipschitz: f64,
    trials: usize,
    seed: u64,
    gd: &GdConfig,
) -> Result<ExperimentResult> {
    if trials < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 trials, got {trials}"
        )));
    }
    let theory_value = lipschitz_gap_bound(x, xt, lipschitz, model)?;
    let (parts, b, bt) = gap_parts(x, xt, model)?;
    let root = model.sqrt_covariance(parts.d)?;
    let noise = Normal::new(0.0, parts.sigma2.sqrt())
        .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
    let (fx, fxt) = (scaled_basis(&b), scaled_basis(&bt));
    let gaps = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let z = draw_z(&mut rng, parts.d, root.as_ref())?;
            let ybar = b.u.matvec(&z)?;
            let y: Vec<f64> = ybar.iter().map(|v| v + noise.sample(&mut rng)).collect();
            let risk = |m: &DenseMatrix| -> Result<f64> {
                let fit = fit_linear_model(m, &y, Loss::Logistic, gd)?;
                Ok(mean_logistic(&m.matvec(&fit.weights)?, &ybar))
            };
            Ok(risk(&fxt)? - risk(&fx)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (estimate, std_error) = mean_and_stderr(&gaps);
    Ok(ExperimentResult {
        estimate,
        std_error,
        theory_value,
        theory_kind: TheoryKind::UpperBound,
        trials,
        config_echo: json!({
            "n": parts.n,
            "d": parts.d,
            "k": parts.k,
            "model": model,
            "lipschitz": lipschitz,
            "trials": trials,
            "seed": seed,
            "gd": gd,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormal_columns;

    fn gaussian(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = stream_rng(seed, 21);
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
    fn risk_zero_in_span() {
        let x = gaussian(12, 3, 1);
        let ybar = x.matvec(&[1.0, -2.0, 0.5]).unwrap();
        let scale = norm_sq(&ybar) / 12.0;
        let r = closed_form_risk(&x, &ybar, 0.0).unwrap();
        assert!(r.abs() < 1e-14 * scale, "{r} at scale {scale}");
    }

    #[test]
    fn risk_hand_example() {
        let x = DenseMatrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let r = closed_form_risk(&x, &[1.0, 1.0], 0.5).unwrap();
        assert!((r - 0.75).abs() < 1e-15);
        assert!(closed_form_risk(&DenseMatrix::zeros(2, 1), &[1.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn risk_matches_direct_simulation() {
        // Solve the normal equations for every noise draw and average the excess error.
        let x = DenseMatrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let ybar = [1.0, 1.0];
        let sigma2: f64 = 0.5;
        let noise = Normal::new(0.0, sigma2.sqrt()).unwrap();
        let mut rng = stream_rng(5, 0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                let y: Vec<f64> = ybar.iter().map(|v| v + noise.sample(&mut rng)).collect();
                let xtx = x.t_matmul(&x).unwrap().get(0, 0);
                let w = x.t_matvec(&y).unwrap()[0] / xtx;
                let pred = x.matvec(&[w]).unwrap();
                pred.iter()
                    .zip(&ybar)
                    .map(|(p, t)| (p - t) * (p - t))
                    .sum::<f64>()
                    / 2.0
            })
            .collect();
        let (mean, se) = mean_and_stderr(&draws);
        let exact = closed_form_risk(&x, &ybar, sigma2).unwrap();
        assert!((mean - exact).abs() <= 3.0 * se, "{mean} ± {se} vs {exact}");
    }

    #[test]
    fn regression_gap_identical_inputs_exact_zero() {
        let x = gaussian(40, 4, 2);
        let m = LabelModel::identity(0.7).unwrap();
        let r = simulate_regression_gap(&x, &x, &m, 50, 1).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert_eq!(r.std_error, 0.0);
        assert_eq!(r.theory_kind, TheoryKind::ExactIdentity);
    }

    #[test]
    fn regression_gap_same_span_zero() {
        let x = gaussian(40, 4, 3);
        let rot = orthonormal_columns(&gaussian(4, 4, 4));
        let xt = x.matmul(&rot).unwrap();
        let m = LabelModel::identity(0.0).unwrap();
        let r = simulate_regression_gap(&x, &xt, &m, 20, 1).unwrap();
        assert!(r.estimate.abs() < 1e-12);
    }

    #[test]
    fn regression_gap_monte_carlo() {
        let x = gaussian(200, 10, 4);
        let xt = gaussian(200, 5, 5).add(&x.leading_cols(5)).unwrap();
        let m = LabelModel::identity(0.5).unwrap();
        let r = simulate_regression_gap(&x, &xt, &m, 10_000, 9).unwrap();
        assert!(
            (r.estimate - r.theory_value).abs() <= 4.0 * r.std_error,
            "{r:?}"
        );
        let again = simulate_regression_gap(&x, &xt, &m, 10_000, 9).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn squared_fit_is_least_squares() {
        let x = gaussian(30, 4, 6);
        let y: Vec<f64> = (0..30).map(|i| (i as f64).cos()).collect();
        let fit = fit_linear_model(&x, &y, Loss::Squared, &GdConfig::default()).unwrap();
        assert_eq!(fit.weights, least_squares_solve(&x, &y).unwrap());
        assert!(fit.grad_norm < 1e-10);
    }

    #[test]
    fn logistic_fit_refines_consistently() {
        let x = gaussian(80, 3, 7);
        let y = x.matvec(&[0.5, -1.0, 0.25]).unwrap();
        let coarse = fit_linear_model(&x, &y, Loss::Logistic, &GdConfig::default()).unwrap();
        assert!(coarse.converged);
        let fine_cfg = GdConfig {
            tol: Some(1e-7 * 80.0),
            ..GdConfig::default()
        };
        let fine = fit_linear_model(&x, &y, Loss::Logistic, &fine_cfg).unwrap();
        let pc = x.matvec(&coarse.weights).unwrap();
        let pf = x.matvec(&fine.weights).unwrap();
        let worst = pc
            .iter()
            .zip(&pf)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-3, "{worst}");
        // labels are logits of a linear model, so the optimum recovers them
        let err = pf
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn logistic_fit_rejects_zero_column() {
        let mut x = gaussian(20, 3, 8);
        for i in 0..20 {
            x.set(i, 1, 0.0);
        }
        let y = vec![0.0; 20];
        assert!(matches!(
            fit_linear_model(&x, &y, Loss::Logistic, &GdConfig::default()),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn logistic_loss_is_stable() {
        assert!((logistic_loss(0.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(logistic_loss(800.0, -800.0).is_finite());
        // minimised at pred = label
        let at = logistic_loss(1.3, 1.3);
        assert!(logistic_loss(1.2, 1.3) > at && logistic_loss(1.4, 1.3) > at);
    }

    #[test]
    fn lipschitz_gap_small_cases() {
        let x = gaussian(60, 3, 9);
        let m = LabelModel::identity(0.1).unwrap();
        let same = simulate_lipschitz_gap(&x, &x, &m, 1.0, 20, 2, &GdConfig::default()).unwrap();
        assert!(
            same.estimate.abs() <= 3.0 * same.std_error + 1e-9,
            "{same:?}"
        );
        let xt = x.add(&gaussian(60, 3, 10).scaled(0.3)).unwrap();
        let two = simulate_lipschitz_gap(&x, &xt, &m, 1.0, 2, 3, &GdConfig::default()).unwrap();
        assert!(two.std_error.is_finite() && two.std_error > 0.0);
        assert_eq!(two.theory_kind, TheoryKind::UpperBound);
        assert!(two.estimate <= two.theory_value + 4.0 * two.std_error);
    }
}
