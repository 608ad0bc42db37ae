//! Logistic and linear regression on dense design matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("perfect separation: coefficients diverge")]
    PerfectSeparation,
    #[error("singular information matrix")]
    Singular,
    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },
    #[error("design has {rows} rows but {len} responses")]
    Dimension { rows: usize, len: usize },
}

pub const MAX_ITERATIONS: usize = 100;
pub const GRADIENT_TOLERANCE: f64 = 1e-10;
/// Coefficient norm beyond which the MLE is treated as non-existent.
pub const DIVERGENCE_NORM: f64 = 1e3;
/// A fitted linear predictor beyond this magnitude means some observations
/// are fitted with probability 0 or 1, i.e. the data are separated.
pub const SATURATED_ETA: f64 = 20.0;

/// Size of the pending Newton step, at a saturated fit, that signals
/// divergence rather than convergence.
const SEPARATION_STEP: f64 = 1e-4;

const POLISH_STEPS: usize = 2;

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    /// ∞-norm of the mean score at the returned coefficients.
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub convergence: Convergence,
    /// Mean (weighted) log-likelihood.
    pub log_likelihood: f64,
}

/// Optional offset and case weights for a logistic fit.
#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions<'a> {
    pub offset: Option<&'a [f64]>,
    pub weights: Option<&'a [f64]>,
}

fn linear_predictor(x: &DMatrix<f64>, beta: &DVector<f64>, offset: Option<&[f64]>) -> DVector<f64> {
    let mut eta = x * beta;
    if let Some(off) = offset {
        for (e, o) in eta.iter_mut().zip(off) {
            *e += o;
        }
    }
    eta
}

/// Mean weighted Bernoulli log-likelihood. `y` may be fractional in [0, 1]
/// (quasi-binomial).
pub fn logistic_log_likelihood(x: &DMatrix<f64>, y: &[f64], beta: &[f64], opts: FitOptions<'_>) -> f64 {
    let eta = linear_predictor(x, &DVector::from_column_slice(beta), opts.offset);
    mean_ll(&eta, y, opts.weights)
}

fn mean_ll(eta: &DVector<f64>, y: &[f64], w: Option<&[f64]>) -> f64 {
    let mut ll = 0.0;
    let mut total = 0.0;
    for (i, (&e, &yi)) in eta.iter().zip(y).enumerate() {
        let wi = w.map_or(1.0, |w| w[i]);
        ll += wi * (yi * e - softplus(e));
        total += wi;
    }
    ll / total
}

/// Mean weighted score `Xᵀ W (y - p) / Σw`.
pub fn logistic_gradient(x: &DMatrix<f64>, y: &[f64], beta: &[f64], opts: FitOptions<'_>) -> Vec<f64> {
    let eta = linear_predictor(x, &DVector::from_column_slice(beta), opts.offset);
    gradient(x, &eta, y, opts.weights).0.as_slice().to_vec()
}

fn gradient(x: &DMatrix<f64>, eta: &DVector<f64>, y: &[f64], w: Option<&[f64]>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, p) = x.shape();
    let mut total = 0.0;
    let mut resid = DVector::zeros(n);
    let mut xw = x.clone();
    for i in 0..n {
        let wi = w.map_or(1.0, |w| w[i]);
        let pi = expit(eta[i]);
        resid[i] = wi * (y[i] - pi);
        let v = wi * pi * (1.0 - pi);
        for j in 0..p {
            xw[(i, j)] *= v;
        }
        total += wi;
    }
    let g = x.tr_mul(&resid) / total;
    let info = x.tr_mul(&xw) / total;
    (g, info)
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Logistic MLE by damped Newton–Raphson.
///
/// Converges when the ∞-norm of the mean score is at most
/// [`GRADIENT_TOLERANCE`]; gives up after [`MAX_ITERATIONS`]. Separation is
/// reported when the coefficient norm exceeds [`DIVERGENCE_NORM`], or when
/// the fitted linear predictor saturates while Newton steps stay large.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], opts: FitOptions<'_>) -> Result<LogisticFit, FitError> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(FitError::Dimension { rows: n, len: y.len() });
    }
    let mut beta = DVector::<f64>::zeros(p);
    let mut eta = linear_predictor(x, &beta, opts.offset);
    let mut ll = mean_ll(&eta, y, opts.weights);
    let mut iterations = 0;
    let (mut g, mut info) = gradient(x, &eta, y, opts.weights);

    while inf_norm(&g) > GRADIENT_TOLERANCE {
        if iterations == MAX_ITERATIONS {
            if beta.norm() > DIVERGENCE_NORM || eta.amax() > SATURATED_ETA {
                return Err(FitError::PerfectSeparation);
            }
            return Err(FitError::NotConverged { iterations, gradient_norm: inf_norm(&g) });
        }
        iterations += 1;
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                if eta.amax() > SATURATED_ETA {
                    return Err(FitError::PerfectSeparation);
                }
                return Err(FitError::Singular);
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let cand_eta = linear_predictor(x, &cand, opts.offset);
            let cand_ll = mean_ll(&cand_eta, y, opts.weights);
            // slack covers roundoff in the n-term likelihood sum
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No ascent direction at machine precision; accept where we are.
            break;
        }
        if beta.norm() > DIVERGENCE_NORM {
            return Err(FitError::PerfectSeparation);
        }
        (g, info) = gradient(x, &eta, y, opts.weights);
    }
    // Quadratic convergence: two more full steps take the score from the
    // tolerance down to roundoff.
    for _ in 0..POLISH_STEPS {
        let Some(ch) = info.clone().cholesky() else { break };
        let cand = &beta + ch.solve(&g);
        let cand_eta = linear_predictor(x, &cand, opts.offset);
        let (cand_g, cand_info) = gradient(x, &cand_eta, y, opts.weights);
        if !(inf_norm(&cand_g) < inf_norm(&g)) {
            break;
        }
        ll = mean_ll(&cand_eta, y, opts.weights);
        (beta, eta, g, info) = (cand, cand_eta, cand_g, cand_info);
    }
    // Under separation the score and the information vanish together, so
    // the next Newton step stays O(1); at a genuine optimum it is negligible.
    if eta.amax() > SATURATED_ETA {
        let next = info.clone().cholesky().map_or(f64::INFINITY, |ch| ch.solve(&g).norm());
        if next > SEPARATION_STEP {
            return Err(FitError::PerfectSeparation);
        }
    }
    Ok(LogisticFit {
        coefficients: beta.as_slice().to_vec(),
        convergence: Convergence { iterations, gradient_norm: inf_norm(&g) },
        log_likelihood: ll,
    })
}

/// Inverse of the observed information (unscaled by n), i.e. the
/// asymptotic covariance of the logistic MLE.
pub fn logistic_covariance(x: &DMatrix<f64>, beta: &[f64], weights: Option<&[f64]>) -> Option<DMatrix<f64>> {
    let eta = x * DVector::from_column_slice(beta);
    let (n, p) = x.shape();
    let mut xw = x.clone();
    for i in 0..n {
        let pi = expit(eta[i]);
        let v = weights.map_or(1.0, |w| w[i]) * pi * (1.0 - pi);
        for j in 0..p {
            xw[(i, j)] *= v;
        }
    }
    x.tr_mul(&xw).try_inverse()
}

/// Weighted least squares via the normal equations.
pub fn fit_linear(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>) -> Result<Vec<f64>, FitError> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(FitError::Dimension { rows: n, len: y.len() });
    }
    let mut xw = x.clone();
    let mut yw = DVector::from_column_slice(y);
    if let Some(w) = weights {
        for i in 0..n {
            for j in 0..p {
                xw[(i, j)] *= w[i];
            }
            yw[i] *= w[i];
        }
    }
    let xtx = x.tr_mul(&xw);
    let xty = x.tr_mul(&yw);
    let ch = xtx.cholesky().ok_or(FitError::Singular)?;
    Ok(ch.solve(&xty).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn design(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn symmetric_strata_give_zero_coefficients() {
        // binary C, half treated in each stratum
        let rows: Vec<[f64; 2]> = (0..8).map(|i| [1.0, (i / 4) as f64]).collect();
        let r: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let x = design(&r);
        let y: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
        let fit = fit_logistic(&x, &y, FitOptions::default()).unwrap();
        assert!(fit.coefficients.iter().all(|b| b.abs() < 1e-12));
    }

    #[test]
    fn steep_but_overlapping_fit_converges() {
        // y = 1{x > 0} except one flip on each side of 0
        let xs: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = xs.iter().map(|&x| if x == 0.5 { 0.0 } else if x == -0.5 { 1.0 } else { (x > 0.0) as u8 as f64 }).collect();
        let x = DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let fit = fit_logistic(&x, &y, FitOptions::default()).unwrap();
        assert!(fit.coefficients[1] * 20.0 > SATURATED_ETA, "{:?}", fit.coefficients);
        assert!(fit.convergence.gradient_norm <= GRADIENT_TOLERANCE);
    }

    #[test]
    fn separation_detected() {
        let rows: Vec<[f64; 2]> = (0..10).map(|i| [1.0, (i % 2) as f64]).collect();
        let r: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let x = design(&r);
        let y: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        assert_eq!(fit_logistic(&x, &y, FitOptions::default()), Err(FitError::PerfectSeparation));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let rows: Vec<[f64; 3]> =
            (0..40).map(|i| [1.0, (i as f64 * 0.37).sin(), ((i * 7 % 5) as f64) / 5.0]).collect();
        let r: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let x = design(&r);
        let y: Vec<f64> = (0..40).map(|i| ((i * 13 % 7) < 3) as u8 as f64).collect();
        let beta = [0.2, -0.7, 1.1];
        let g = logistic_gradient(&x, &y, &beta, FitOptions::default());
        for j in 0..3 {
            let h = 1e-5;
            let mut up = beta;
            let mut dn = beta;
            up[j] += h;
            dn[j] -= h;
            let fd = (logistic_log_likelihood(&x, &y, &up, FitOptions::default())
                - logistic_log_likelihood(&x, &y, &dn, FitOptions::default()))
                / (2.0 * h);
            assert_relative_eq!(g[j], fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn weights_equal_duplication() {
        let rows: Vec<[f64; 2]> = (0..12).map(|i| [1.0, i as f64 / 3.0]).collect();
        let r: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let x = design(&r);
        let y: Vec<f64> = (0..12).map(|i| ((i * 5 % 3) == 0) as u8 as f64).collect();
        let w: Vec<f64> = (0..12).map(|i| 1.0 + (i % 3) as f64).collect();
        let weighted = fit_logistic(&x, &y, FitOptions { weights: Some(&w), offset: None }).unwrap();
        let mut dup_rows = Vec::new();
        let mut dup_y = Vec::new();
        for i in 0..12 {
            for _ in 0..w[i] as usize {
                dup_rows.push(rows[i]);
                dup_y.push(y[i]);
            }
        }
        let r: Vec<&[f64]> = dup_rows.iter().map(|r| r.as_slice()).collect();
        let dup = fit_logistic(&design(&r), &dup_y, FitOptions::default()).unwrap();
        for (a, b) in weighted.coefficients.iter().zip(&dup.coefficients) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn linear_recovers_exact_fit() {
        let rows: Vec<[f64; 2]> = (0..5).map(|i| [1.0, i as f64]).collect();
        let r: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let y: Vec<f64> = (0..5).map(|i| 2.0 + 0.5 * i as f64).collect();
        let b = fit_linear(&design(&r), &y, None).unwrap();
        assert_relative_eq!(b[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(b[1], 0.5, epsilon = 1e-12);
    }
}
