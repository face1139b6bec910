//! Gaussian approximation of pi(x | theta, y): Newton mode search with
//! step-halving and likelihood-curvature flooring, sum-to-zero constraint
//! correction by conditioning, and the Laplace evidence term used by the
//! hyperparameter stage.

use crate::error::{Error, Result};
use crate::model::LatentModel;
use crate::precision::{build_precision, constraint_matrix};
use crate::priors::LN_2PI;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Sup-norm gradient tolerance for Newton convergence.
pub const NEWTON_TOL: f64 = 1e-8;
/// Maximum Newton iterations before giving up.
pub const NEWTON_MAX_ITER: usize = 100;

/// The Gaussian approximation at one hyperparameter configuration.
#[derive(Clone, Debug)]
pub struct GaussianApprox {
    /// Mode of the approximation, after any constraint correction.
    pub mode: DVector<f64>,
    /// Negative Hessian of the log joint at the (unconstrained) mode.
    pub precision: DMatrix<f64>,
    /// Covariance of the approximation, after any constraint correction.
    pub sigma: DMatrix<f64>,
    /// Marginal standard deviations (diagonal of `sigma`).
    pub marginal_sd: DVector<f64>,
    /// log det of `precision`.
    pub log_det_p: f64,
    /// log pi_G evaluated at its own mode, constraint-aware. This is the
    /// denominator of the Laplace evidence term.
    pub log_norm_const: f64,
    pub iterations: usize,
    pub constrained: bool,
}

/// Sum of the data log-likelihood over all rows at latent value `x`.
pub fn loglik_sum(model: &LatentModel, theta: &[f64], x: &DVector<f64>) -> Result<f64> {
    let mut total = 0.0;
    for (i, row) in model.rows.iter().enumerate() {
        let eta = row.eta(x, theta);
        let t = row.loglik(eta, theta).map_err(|e| match e {
            Error::NonFiniteLikelihood { reason, .. } => {
                Error::NonFiniteLikelihood { row: i, reason }
            }
            other => other,
        })?;
        total += t.value;
    }
    Ok(total)
}

/// Full log joint: latent prior log-density (constants included) plus the
/// data log-likelihood, with its gradient in x and the per-row likelihood
/// derivative triples in eta. The prior on theta is excluded.
pub fn log_joint(
    model: &LatentModel,
    theta: &[f64],
    x: &DVector<f64>,
) -> Result<(f64, DVector<f64>, Vec<crate::likelihoods::LikTriple>)> {
    let n = model.latent_dim();
    let q = build_precision(model, theta)?;
    let chol_q = cholesky_of(&q, "latent prior precision")?;
    let mu0 = DVector::from_column_slice(&model.prior_mean);
    let diff = x - &mu0;
    let quad = (&q * &diff).dot(&diff);
    let mut value = 0.5 * log_det_chol(&chol_q) - 0.5 * n as f64 * LN_2PI - 0.5 * quad;
    let mut grad = -(&q * &diff);
    let mut triples = Vec::with_capacity(model.rows.len());
    for (i, row) in model.rows.iter().enumerate() {
        let eta = row.eta(x, theta);
        let t = row.loglik(eta, theta).map_err(|e| match e {
            Error::NonFiniteLikelihood { reason, .. } => {
                Error::NonFiniteLikelihood { row: i, reason }
            }
            other => other,
        })?;
        value += t.value;
        for (col, coef) in &row.design {
            grad[*col] += coef.value(theta) * t.d1;
        }
        triples.push(t);
    }
    Ok((value, grad, triples))
}

/// Log joint (up to theta-dependent constants): prior quadratic plus data
/// log-likelihood. NEG_INFINITY when the likelihood is not finite, which the
/// line search treats as a rejected step.
fn objective(model: &LatentModel, theta: &[f64], q: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let mu0 = DVector::from_column_slice(&model.prior_mean);
    let diff = x - mu0;
    let quad = (q * &diff).dot(&diff);
    match loglik_sum(model, theta, x) {
        Ok(l) => -0.5 * quad + l,
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Gradient of the log joint and the curvature-floored negative Hessian
/// P = Q + sum_i max(-l_i'', 0) a_i a_i^T.
fn grad_and_precision(
    model: &LatentModel,
    theta: &[f64],
    q: &DMatrix<f64>,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mu0 = DVector::from_column_slice(&model.prior_mean);
    let mut grad = -(q * (x - mu0));
    let mut p = q.clone();
    for (i, row) in model.rows.iter().enumerate() {
        let eta = row.eta(x, theta);
        let t = row.loglik(eta, theta).map_err(|e| match e {
            Error::NonFiniteLikelihood { reason, .. } => {
                Error::NonFiniteLikelihood { row: i, reason }
            }
            other => other,
        })?;
        let c = (-t.d2).max(0.0);
        for (col_a, coef_a) in &row.design {
            let a = coef_a.value(theta);
            grad[*col_a] += a * t.d1;
            if c > 0.0 {
                for (col_b, coef_b) in &row.design {
                    let b = coef_b.value(theta);
                    p[(*col_a, *col_b)] += c * a * b;
                }
            }
        }
    }
    Ok((grad, p))
}

fn cholesky_of(p: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(p.clone())
        .ok_or_else(|| Error::IndefiniteHessian(format!("{what} is not positive definite")))
}

fn log_det_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Compute the Gaussian approximation at `theta`, optionally warm-started.
pub fn gaussian_approx(
    model: &LatentModel,
    theta: &[f64],
    warm_start: Option<&DVector<f64>>,
) -> Result<GaussianApprox> {
    let n = model.latent_dim();
    let q = build_precision(model, theta)?;
    let mu0 = DVector::from_column_slice(&model.prior_mean);
    let mut x = warm_start.cloned().unwrap_or_else(|| mu0.clone());
    let mut f = objective(model, theta, &q, &x);
    if !f.is_finite() {
        // A warm start from a different theta can land outside the
        // likelihood's finite region; fall back to the prior mean.
        x = mu0.clone();
        f = objective(model, theta, &q, &x);
        if !f.is_finite() {
            return Err(Error::NonFiniteLikelihood {
                row: 0,
                reason: "log-likelihood not finite at the prior mean".into(),
            });
        }
    }

    let mut iterations = 0;
    let precision = loop {
        let (grad, p) = grad_and_precision(model, theta, &q, &x)?;
        if grad.amax() <= NEWTON_TOL {
            break p;
        }
        if iterations >= NEWTON_MAX_ITER {
            return Err(Error::NewtonNonConvergence {
                iterations,
                grad_norm: grad.amax(),
            });
        }
        let chol = cholesky_of(&p, "Newton system")?;
        let delta = chol.solve(&grad);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &x + step * &delta;
            let ft = objective(model, theta, &q, &trial);
            if ft >= f - 1e-10 * (1.0 + f.abs()) && ft.is_finite() {
                x = trial;
                f = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonNonConvergence {
                iterations,
                grad_norm: grad.amax(),
            });
        }
        iterations += 1;
    };

    let chol = cholesky_of(&precision, "curvature-floored Hessian")?;
    let log_det_p = log_det_chol(&chol);
    let sigma = chol.inverse();

    let b = constraint_matrix(model);
    let (mode, sigma_c, log_norm_const, constrained) = match b {
        None => {
            let lnc = 0.5 * log_det_p - 0.5 * n as f64 * LN_2PI;
            (x, sigma, lnc, false)
        }
        Some(b) => {
            // Conditioning by kriging: condition the unconstrained Gaussian
            // on Bx = 0.
            let k = b.nrows();
            let sbt = &sigma * b.transpose();
            let w = &b * &sbt;
            let chol_w = cholesky_of(&w, "constraint matrix W = B Sigma B^T")?;
            let bx = &b * &x;
            let mode = &x - &sbt * chol_w.solve(&bx);
            let sigma_c = &sigma - &sbt * chol_w.solve(&sbt.transpose());
            let lnc = 0.5 * log_det_p - 0.5 * (n - k) as f64 * LN_2PI
                + 0.5 * log_det_chol(&chol_w);
            (mode, sigma_c, lnc, true)
        }
    };

    let marginal_sd = DVector::from_iterator(n, (0..n).map(|i| sigma_c[(i, i)].max(0.0).sqrt()));
    Ok(GaussianApprox {
        mode,
        precision,
        sigma: sigma_c,
        marginal_sd,
        log_det_p,
        log_norm_const,
        iterations,
        constrained,
    })
}

/// Unnormalised log posterior of theta (the Laplace evidence term):
/// log p(x*|theta) + log g(theta) + sum_i log f(y_i | x*, theta)
///  - log pi_G(x* | y, theta),
/// evaluated at the (constrained) mode x*. Also returns the approximation so
/// callers can reuse its mode and covariance.
pub fn log_posterior_theta(
    model: &LatentModel,
    theta: &[f64],
    warm_start: Option<&DVector<f64>>,
) -> Result<(f64, GaussianApprox)> {
    let ga = gaussian_approx(model, theta, warm_start)?;
    let n = model.latent_dim();
    let q = build_precision(model, theta)?;
    let chol_q = cholesky_of(&q, "latent prior precision")?;
    let log_det_q = log_det_chol(&chol_q);
    let mu0 = DVector::from_column_slice(&model.prior_mean);
    let diff = &ga.mode - mu0;
    let quad = (&q * &diff).dot(&diff);
    let mut log_prior_x = 0.5 * log_det_q - 0.5 * n as f64 * LN_2PI - 0.5 * quad;
    if let Some(b) = constraint_matrix(model) {
        // Constrained prior density: divide by the density of Bx at zero.
        let k = b.nrows();
        let qinv_bt = chol_q.solve(&b.transpose());
        let bqb = &b * qinv_bt;
        let chol_bqb = cholesky_of(&bqb, "B Q^-1 B^T")?;
        log_prior_x += 0.5 * k as f64 * LN_2PI + 0.5 * log_det_chol(&chol_bqb);
    }
    let loglik = loglik_sum(model, theta, &ga.mode)?;
    let lp = log_prior_x + model.log_prior_theta(theta)? + loglik - ga.log_norm_const;
    Ok((lp, ga))
}
