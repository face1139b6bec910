//! Hyperparameter posterior exploration: Nelder-Mead mode search on the
//! internal scale, finite-difference Hessian, and either a standardised-axis
//! grid (low dimension) or an empirical-Bayes single point.

use crate::error::{Error, Result};
use crate::gauss::{self, GaussianApprox};
use crate::model::LatentModel;
use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use std::collections::{HashSet, VecDeque};

/// Function tolerance for the Nelder-Mead mode search.
pub const NM_TOL: f64 = 1e-6;
/// Maximum Nelder-Mead iterations.
pub const NM_MAX_ITER: usize = 500;
/// Central-difference step for the Hessian at the mode.
pub const HESS_STEP: f64 = 1e-4;
/// Grid step in standardised z coordinates.
pub const GRID_STEP: f64 = 0.75;
/// Log-density drop (from the mode) at which grid expansion stops.
pub const GRID_DROP: f64 = 3.5;
/// Grid exploration is used up to this many hyperparameters; above it the
/// engine falls back to empirical Bayes.
pub const GRID_MAX_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Grid,
    EmpiricalBayes,
    Auto,
}

/// One explored configuration with its normalised weight and the Gaussian
/// approximation computed there.
#[derive(Clone, Debug)]
pub struct ThetaPoint {
    pub theta: Vec<f64>,
    /// Unnormalised log posterior density at this point.
    pub log_post: f64,
    /// Normalised integration weight (sums to one over points).
    pub weight: f64,
    pub approx: GaussianApprox,
}

#[derive(Clone, Debug)]
pub struct ThetaPosterior {
    pub points: Vec<ThetaPoint>,
    pub mode: Vec<f64>,
    /// Negative Hessian of log pi(theta|y) at the mode (internal scale).
    pub neg_hessian: DMatrix<f64>,
    /// Covariance of theta (inverse of `neg_hessian`).
    pub covariance: DMatrix<f64>,
    /// Log marginal likelihood estimate (grid sum, or Laplace at the EB
    /// point).
    pub log_mlik: f64,
    pub strategy_used: Strategy,
    /// Non-fatal notes from the exploration (e.g., Hessian repair).
    pub warnings: Vec<String>,
}

impl ThetaPosterior {
    /// Posterior mean of theta on the internal scale (weight-mixture).
    pub fn mean(&self) -> Vec<f64> {
        let d = self.mode.len();
        let mut m = vec![0.0; d];
        for p in &self.points {
            for j in 0..d {
                m[j] += p.weight * p.theta[j];
            }
        }
        m
    }

    /// Largest absolute posterior correlation between theta coordinates,
    /// from the mode Hessian. Zero for dimension < 2.
    pub fn max_abs_correlation(&self) -> f64 {
        let d = self.mode.len();
        let mut best: f64 = 0.0;
        for i in 0..d {
            for j in 0..i {
                let denom = (self.covariance[(i, i)] * self.covariance[(j, j)]).sqrt();
                if denom > 0.0 {
                    best = best.max((self.covariance[(i, j)] / denom).abs());
                }
            }
        }
        best
    }
}

/// Nelder-Mead maximisation of `f` from `start`. Returns the best point.
/// Hand-rolled so the simplex parameters and the deterministic tie-breaking
/// stay under our control.
pub fn nelder_mead<F>(f: &F, start: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    let d = start.len();
    if d == 0 {
        return Ok((vec![], f(&[])));
    }
    // Initial simplex: start plus unit-ish perturbations per axis.
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    simplex.push(start.to_vec());
    for i in 0..d {
        let mut v = start.to_vec();
        v[i] += if v[i].abs() > 1.0 { 0.1 * v[i].abs() } else { 0.25 };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for iter in 0..max_iter {
        // Sort descending by value (we maximise).
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
        let simplex_sorted: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let values_sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = simplex_sorted;
        values = values_sorted;

        if (values[0] - values[d]).abs() < tol && iter > d {
            return Ok((simplex[0].clone(), values[0]));
        }

        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let reflect: Vec<f64> =
            (0..d).map(|j| centroid[j] + (centroid[j] - worst[j])).collect();
        let fr = f(&reflect);

        if fr > values[0] {
            let expand: Vec<f64> =
                (0..d).map(|j| centroid[j] + 2.0 * (centroid[j] - worst[j])).collect();
            let fe = f(&expand);
            if fe > fr {
                simplex[d] = expand;
                values[d] = fe;
            } else {
                simplex[d] = reflect;
                values[d] = fr;
            }
        } else if fr > values[d - 1] {
            simplex[d] = reflect;
            values[d] = fr;
        } else {
            let contract: Vec<f64> =
                (0..d).map(|j| centroid[j] + 0.5 * (worst[j] - centroid[j])).collect();
            let fc = f(&contract);
            if fc > values[d] {
                simplex[d] = contract;
                values[d] = fc;
            } else {
                // Shrink toward the best vertex.
                for i in 1..=d {
                    for j in 0..d {
                        simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    Err(Error::ModeSearchNonConvergence(format!(
        "Nelder-Mead did not reach tolerance {tol} in {max_iter} iterations"
    )))
}

/// Central-difference negative Hessian of log pi(theta|y) at `mode`.
pub fn fd_neg_hessian<F>(f: &F, mode: &[f64], h: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = mode.len();
    let f0 = f(mode);
    let mut hess = DMatrix::zeros(d, d);
    let at = |shift: &[(usize, f64)]| {
        let mut t = mode.to_vec();
        for &(i, s) in shift {
            t[i] += s;
        }
        f(&t)
    };
    for i in 0..d {
        let fpp = at(&[(i, h)]);
        let fmm = at(&[(i, -h)]);
        hess[(i, i)] = -(fpp - 2.0 * f0 + fmm) / (h * h);
        for j in 0..i {
            let fpp = at(&[(i, h), (j, h)]);
            let fpm = at(&[(i, h), (j, -h)]);
            let fmp = at(&[(i, -h), (j, h)]);
            let fmm = at(&[(i, -h), (j, -h)]);
            let v = -(fpp - fpm - fmp + fmm) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// If the negative Hessian is not positive definite, fall back to its
/// diagonal curvature (floored away from zero) and report a warning.
fn make_pd(h: &DMatrix<f64>) -> (DMatrix<f64>, Option<String>) {
    if Cholesky::new(h.clone()).is_some() {
        return (h.clone(), None);
    }
    let d = h.nrows();
    let mut diag = DMatrix::zeros(d, d);
    for i in 0..d {
        diag[(i, i)] = h[(i, i)].abs().max(1e-6);
    }
    (
        diag,
        Some("negative Hessian at the theta mode is not positive definite; \
              falling back to diagonal curvature"
            .into()),
    )
}

/// Explore the hyperparameter posterior.
pub fn explore_theta(model: &LatentModel, strategy: Strategy) -> Result<ThetaPosterior> {
    let d = model.theta_dim();
    let eval = |theta: &[f64]| -> f64 {
        gauss::log_posterior_theta(model, theta, None)
            .map(|(lp, _)| lp)
            .unwrap_or(f64::NEG_INFINITY)
    };

    let (mode, log_post_mode) = if d == 0 {
        (vec![], eval(&[]))
    } else {
        nelder_mead(&eval, &model.theta_start(), NM_TOL, NM_MAX_ITER)?
    };
    if !log_post_mode.is_finite() {
        return Err(Error::ModeSearchNonConvergence(
            "log posterior not finite at the located mode".into(),
        ));
    }

    let mut warnings = Vec::new();
    let neg_hessian = if d == 0 {
        DMatrix::zeros(0, 0)
    } else {
        let raw = fd_neg_hessian(&eval, &mode, HESS_STEP);
        let (fixed, warn) = make_pd(&raw);
        if let Some(w) = warn {
            warnings.push(w);
        }
        fixed
    };
    let (eigvals, eigvecs) = if d == 0 {
        (vec![], DMatrix::zeros(0, 0))
    } else {
        let eig = neg_hessian.clone().symmetric_eigen();
        // Guard the scale even after the diagonal fallback.
        let vals: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(1e-6)).collect();
        (vals, eig.eigenvectors)
    };
    let covariance = if d == 0 {
        DMatrix::zeros(0, 0)
    } else {
        neg_hessian
            .clone()
            .cholesky()
            .ok_or_else(|| Error::IndefiniteHessian("theta Hessian".into()))?
            .inverse()
    };

    let use_grid = match strategy {
        Strategy::Grid => true,
        Strategy::EmpiricalBayes => false,
        Strategy::Auto => d <= GRID_MAX_DIM,
    };

    if !use_grid || d == 0 {
        // Empirical Bayes: a single point with unit weight. The marginal
        // likelihood uses the Laplace correction |H|^{-1/2} (2 pi)^{d/2}.
        let (lp, ga) = gauss::log_posterior_theta(model, &mode, None)?;
        let log_det_h: f64 = eigvals.iter().map(|v| v.ln()).sum();
        let log_mlik = lp + 0.5 * d as f64 * crate::priors::LN_2PI - 0.5 * log_det_h;
        return Ok(ThetaPosterior {
            points: vec![ThetaPoint { theta: mode.clone(), log_post: lp, weight: 1.0, approx: ga }],
            mode,
            neg_hessian,
            covariance,
            log_mlik,
            strategy_used: Strategy::EmpiricalBayes,
            warnings,
        });
    }

    // Grid exploration on standardised axes: theta = mode + V diag(l^-1/2) z,
    // z on an integer lattice scaled by GRID_STEP, expanded breadth-first
    // while the log density stays within GRID_DROP of the mode.
    let scale: Vec<f64> = eigvals.iter().map(|&l| l.sqrt().recip()).collect();
    let to_theta = |z: &[i64]| -> Vec<f64> {
        let zv = DVector::from_iterator(
            d,
            z.iter().enumerate().map(|(k, &zi)| zi as f64 * GRID_STEP * scale[k]),
        );
        let shift = &eigvecs * zv;
        (0..d).map(|j| mode[j] + shift[j]).collect()
    };

    let origin = vec![0i64; d];
    let mut seen: HashSet<Vec<i64>> = HashSet::new();
    let mut queue: VecDeque<Vec<i64>> = VecDeque::new();
    let mut kept: Vec<(Vec<i64>, Vec<f64>, f64)> = Vec::new();
    seen.insert(origin.clone());
    queue.push_back(origin);
    while let Some(z) = queue.pop_front() {
        let theta = to_theta(&z);
        let lp = eval(&theta);
        if !(lp.is_finite() && log_post_mode - lp <= GRID_DROP) {
            continue;
        }
        for k in 0..d {
            for s in [-1i64, 1] {
                let mut nz = z.clone();
                nz[k] += s;
                if seen.insert(nz.clone()) {
                    queue.push_back(nz);
                }
            }
        }
        kept.push((z, theta, lp));
    }
    if kept.is_empty() {
        return Err(Error::ModeSearchNonConvergence(
            "grid exploration kept no points".into(),
        ));
    }

    // Deterministic order: sort by lattice coordinates.
    kept.sort_by(|a, b| a.0.cmp(&b.0));

    // Gaussian approximations in parallel, deterministic order preserved.
    let approxes: Vec<Result<(f64, GaussianApprox)>> = kept
        .par_iter()
        .map(|(_, theta, _)| gauss::log_posterior_theta(model, theta, None))
        .collect();

    let mut points = Vec::with_capacity(kept.len());
    for ((_, theta, lp), res) in kept.into_iter().zip(approxes) {
        let (_, ga) = res?;
        points.push(ThetaPoint { theta, log_post: lp, weight: 0.0, approx: ga });
    }

    // Weights: w_k proportional to exp(lp_k - lp_max) times the (common)
    // lattice cell volume, which cancels in the normalisation but enters the
    // marginal likelihood.
    let lp_max = points.iter().map(|p| p.log_post).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for p in &mut points {
        p.weight = (p.log_post - lp_max).exp();
        total += p.weight;
    }
    for p in &mut points {
        p.weight /= total;
    }
    let log_cell = d as f64 * GRID_STEP.ln() + scale.iter().map(|s| s.ln()).sum::<f64>();
    let log_mlik = lp_max + total.ln() + log_cell;

    Ok(ThetaPosterior {
        points,
        mode,
        neg_hessian,
        covariance,
        log_mlik,
        strategy_used: Strategy::Grid,
        warnings,
    })
}
