//! Independent brute-force verification tools: tensor-grid quadrature
//! posteriors for tiny models and finite-difference checks of the engine's
//! analytic derivatives. `quad_posterior` deliberately avoids the Laplace
//! machinery — it assembles its own prior density and integrates the exact
//! unnormalised posterior on a grid.

use crate::error::{Error, Result};
use crate::marginal::Marginal;
use crate::model::{BlockKind, LatentModel};
use crate::priors::LN_2PI;
use nalgebra::{DMatrix, DVector};

/// Maximum total grid dimension (latent + hyper) for quadrature.
const MAX_LATENT: usize = 2;
const MAX_HYPER: usize = 2;

/// Log prior density of the latent field, assembled directly from the block
/// definitions (fixed-effect and iid blocks only — enough for tiny models).
fn log_prior_latent(model: &LatentModel, theta: &[f64], x: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (bi, block) in model.blocks.iter().enumerate() {
        let tau = match &block.kind {
            BlockKind::FixedEffect { precision } => *precision,
            BlockKind::IidRandom { prec_hyper } => theta[*prec_hyper].exp(),
            other => {
                return Err(Error::Unsupported(format!(
                    "quadrature oracle does not handle block kind {other:?}"
                )))
            }
        };
        for idx in model.block_range(bi) {
            let d = x[idx] - model.prior_mean[idx];
            total += 0.5 * tau.ln() - 0.5 * LN_2PI - 0.5 * tau * d * d;
        }
    }
    Ok(total)
}

/// Per-axis integration support.
#[derive(Clone, Debug)]
pub struct QuadAxis {
    pub values: Vec<f64>,
}

/// Quadrature posterior of a tiny model: marginals for each latent
/// coordinate followed by each hyperparameter (internal scale), plus the log
/// normalising constant (log marginal likelihood).
#[derive(Clone, Debug)]
pub struct QuadPosterior {
    pub latent: Vec<Marginal>,
    pub hyper: Vec<Marginal>,
    pub log_evidence: f64,
}

fn log_unnorm_posterior(model: &LatentModel, theta: &[f64], x: &DVector<f64>) -> f64 {
    let prior_x = match log_prior_latent(model, theta, x.as_slice()) {
        Ok(v) => v,
        Err(_) => return f64::NEG_INFINITY,
    };
    let prior_t = match model.log_prior_theta(theta) {
        Ok(v) => v,
        Err(_) => return f64::NEG_INFINITY,
    };
    let lik = match crate::gauss::loglik_sum(model, theta, x) {
        Ok(v) => v,
        Err(_) => return f64::NEG_INFINITY,
    };
    prior_x + prior_t + lik
}

/// Direct tensor-grid quadrature of the exact unnormalised posterior.
/// Two passes: a coarse scan over a wide prior-derived box locates the mass,
/// then a fine grid at `resolution` points per axis integrates it.
pub fn quad_posterior(model: &LatentModel, resolution: usize) -> Result<QuadPosterior> {
    let n = model.latent_dim();
    let d = model.theta_dim();
    if n > MAX_LATENT || d > MAX_HYPER {
        return Err(Error::Unsupported(format!(
            "quadrature oracle limited to {MAX_LATENT} latent and {MAX_HYPER} hyper dims \
             (got {n} and {d})"
        )));
    }
    if resolution < 11 {
        return Err(Error::Unsupported("quadrature resolution below 11".into()));
    }
    let dims = n + d;

    // Wide initial box: latent axes span prior mean +- 10 prior sd at the
    // prior-median theta; hyper axes span [-14, 14] on the internal scale.
    let theta_med = model.theta_start();
    let mut lo = vec![0.0; dims];
    let mut hi = vec![0.0; dims];
    for (bi, block) in model.blocks.iter().enumerate() {
        let tau = match &block.kind {
            BlockKind::FixedEffect { precision } => *precision,
            BlockKind::IidRandom { prec_hyper } => theta_med[*prec_hyper].exp(),
            other => {
                return Err(Error::Unsupported(format!(
                    "quadrature oracle does not handle block kind {other:?}"
                )))
            }
        };
        let sd = tau.sqrt().recip();
        for idx in model.block_range(bi) {
            lo[idx] = model.prior_mean[idx] - 10.0 * sd;
            hi[idx] = model.prior_mean[idx] + 10.0 * sd;
        }
    }
    for j in 0..d {
        lo[n + j] = theta_med[j] - 14.0;
        hi[n + j] = theta_med[j] + 14.0;
    }

    let eval = |point: &[f64]| -> f64 {
        let x = DVector::from_column_slice(&point[..n]);
        log_unnorm_posterior(model, &point[n..], &x)
    };

    // Coarse pass to shrink the box to where the density lives.
    let coarse = 41usize;
    let (c_grid, c_logp) = tensor_scan(&lo, &hi, coarse, &eval);
    let max_lp = c_logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max_lp.is_finite() {
        return Err(Error::Oracle("posterior not finite anywhere in the scan box".into()));
    }
    let cutoff = max_lp - 25.0;
    let mut new_lo = vec![f64::INFINITY; dims];
    let mut new_hi = vec![f64::NEG_INFINITY; dims];
    for (idx, &lp) in c_logp.iter().enumerate() {
        if lp >= cutoff {
            let point = index_to_point(idx, dims, coarse, &c_grid);
            for k in 0..dims {
                new_lo[k] = new_lo[k].min(point[k]);
                new_hi[k] = new_hi[k].max(point[k]);
            }
        }
    }
    // Pad by one coarse step so the fine grid covers the tails.
    for k in 0..dims {
        let step = (hi[k] - lo[k]) / (coarse - 1) as f64;
        new_lo[k] -= step;
        new_hi[k] += step;
    }

    // Fine pass.
    let (f_grid, f_logp) = tensor_scan(&new_lo, &new_hi, resolution, &eval);
    let max_lp = f_logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cell = 1.0;
    for axis in &f_grid {
        cell *= axis.values[1] - axis.values[0];
    }
    let total: f64 = f_logp.iter().map(|&lp| (lp - max_lp).exp()).sum();
    let log_evidence = max_lp + (total * cell).ln();

    // Axis marginals by summation over the other axes.
    let mut marginals = Vec::with_capacity(dims);
    for k in 0..dims {
        let mut dens = vec![0.0; resolution];
        for (idx, &lp) in f_logp.iter().enumerate() {
            let ik = axis_index(idx, dims, resolution, k);
            dens[ik] += (lp - max_lp).exp();
        }
        marginals.push(Marginal::from_grid(f_grid[k].values.clone(), dens)?);
    }
    let hyper = marginals.split_off(n);
    Ok(QuadPosterior { latent: marginals, hyper, log_evidence })
}

fn tensor_scan(
    lo: &[f64],
    hi: &[f64],
    res: usize,
    eval: &dyn Fn(&[f64]) -> f64,
) -> (Vec<QuadAxis>, Vec<f64>) {
    let dims = lo.len();
    let grid: Vec<QuadAxis> = (0..dims)
        .map(|k| QuadAxis {
            values: (0..res)
                .map(|i| lo[k] + (hi[k] - lo[k]) * i as f64 / (res - 1) as f64)
                .collect(),
        })
        .collect();
    let total = res.pow(dims as u32);
    let mut logp = Vec::with_capacity(total);
    let mut point = vec![0.0; dims];
    for idx in 0..total {
        let mut rest = idx;
        for k in 0..dims {
            point[k] = grid[k].values[rest % res];
            rest /= res;
        }
        logp.push(eval(&point));
    }
    (grid, logp)
}

fn index_to_point(idx: usize, dims: usize, res: usize, grid: &[QuadAxis]) -> Vec<f64> {
    let mut rest = idx;
    let mut point = vec![0.0; dims];
    for k in 0..dims {
        point[k] = grid[k].values[rest % res];
        rest /= res;
    }
    point
}

fn axis_index(idx: usize, _dims: usize, res: usize, k: usize) -> usize {
    (idx / res.pow(k as u32)) % res
}

/// Finite-difference report: worst relative errors of the analytic gradient
/// and Hessian of `log_joint` against central differences at `x`.
#[derive(Clone, Copy, Debug)]
pub struct FdReport {
    pub max_grad_rel_err: f64,
    pub max_hess_rel_err: f64,
}

/// Compare analytic derivatives of the log joint with central differences
/// of step `h`. The Hessian comparison uses the exact (unfloored) likelihood
/// curvature.
pub fn fd_check(model: &LatentModel, theta: &[f64], x: &DVector<f64>, h: f64) -> Result<FdReport> {
    let n = model.latent_dim();
    let (_, grad, triples) = crate::gauss::log_joint(model, theta, x)?;
    let value_at = |x: &DVector<f64>| -> Result<f64> {
        Ok(crate::gauss::log_joint(model, theta, x)?.0)
    };

    let mut max_grad_rel_err: f64 = 0.0;
    for i in 0..n {
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        let fd = (value_at(&xp)? - value_at(&xm)?) / (2.0 * h);
        let scale = grad[i].abs().max(fd.abs()).max(1.0);
        max_grad_rel_err = max_grad_rel_err.max((grad[i] - fd).abs() / scale);
    }

    // Exact Hessian: -Q plus the unfloored likelihood curvature.
    let q = crate::precision::build_precision(model, theta)?;
    let mut hess = -q;
    for (row, t) in model.rows.iter().zip(&triples) {
        for (ca, coef_a) in &row.design {
            let a = coef_a.value(theta);
            for (cb, coef_b) in &row.design {
                let b = coef_b.value(theta);
                hess[(*ca, *cb)] += t.d2 * a * b;
            }
        }
    }
    let mut max_hess_rel_err: f64 = 0.0;
    let fd_hess = {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let (_, gp, _) = crate::gauss::log_joint(model, theta, &xp)?;
            let (_, gm, _) = crate::gauss::log_joint(model, theta, &xm)?;
            for j in 0..n {
                m[(i, j)] = (gp[j] - gm[j]) / (2.0 * h);
            }
        }
        m
    };
    for i in 0..n {
        for j in 0..n {
            let scale = hess[(i, j)].abs().max(fd_hess[(i, j)].abs()).max(1.0);
            max_hess_rel_err = max_hess_rel_err.max((hess[(i, j)] - fd_hess[(i, j)]).abs() / scale);
        }
    }
    Ok(FdReport { max_grad_rel_err, max_hess_rel_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihoods::SurvPayload;
    use crate::model::{
        Coef, DataRow, Family, HyperDecl, HyperRole, InternalScale, LatentBlock, PrecSpec,
    };
    use crate::priors::PriorSpec;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_gaussian_quadrature_matches_closed_form() {
        let (q0, tau) = (1.0, 2.0);
        let ys = [0.8, -0.3];
        let rows = ys
            .iter()
            .map(|&y| {
                DataRow::new(
                    Family::Gaussian { y, precision: PrecSpec::Fixed(tau) },
                    vec![(0, Coef::Const(1.0))],
                )
            })
            .collect();
        let model = LatentModel::new(
            vec![LatentBlock {
                name: "mu".into(),
                kind: BlockKind::FixedEffect { precision: q0 },
                size: 1,
                sum_to_zero: false,
            }],
            vec![],
            rows,
        );
        let qp = quad_posterior(&model, 301).unwrap();
        let post_prec = q0 + tau * ys.len() as f64;
        let post_mean = tau * ys.iter().sum::<f64>() / post_prec;
        assert_relative_eq!(qp.latent[0].mean, post_mean, epsilon = 1e-6);
        assert_relative_eq!(qp.latent[0].sd, post_prec.sqrt().recip(), epsilon = 1e-6);
    }

    #[test]
    fn evidence_matches_closed_form() {
        let (q0, tau) = (0.6, 1.7);
        let ys = [0.4, -1.1, 2.2];
        let rows = ys
            .iter()
            .map(|&y| {
                DataRow::new(
                    Family::Gaussian { y, precision: PrecSpec::Fixed(tau) },
                    vec![(0, Coef::Const(1.0))],
                )
            })
            .collect();
        let model = LatentModel::new(
            vec![LatentBlock {
                name: "mu".into(),
                kind: BlockKind::FixedEffect { precision: q0 },
                size: 1,
                sum_to_zero: false,
            }],
            vec![],
            rows,
        );
        let qp = quad_posterior(&model, 401).unwrap();
        let m = ys.len();
        let mut cov = DMatrix::from_element(m, m, 1.0 / q0);
        for i in 0..m {
            cov[(i, i)] += 1.0 / tau;
        }
        let chol = nalgebra::Cholesky::new(cov).unwrap();
        let y = DVector::from_column_slice(&ys);
        let quad = chol.solve(&y).dot(&y);
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let expect = -0.5 * logdet - 0.5 * m as f64 * LN_2PI - 0.5 * quad;
        assert_relative_eq!(qp.log_evidence, expect, epsilon = 1e-4);
    }

    #[test]
    fn fd_check_gaussian_hessian_constant() {
        let rows = vec![DataRow::new(
            Family::Gaussian { y: 1.0, precision: PrecSpec::Fixed(1.0) },
            vec![(0, Coef::Const(1.0))],
        )];
        let model = LatentModel::new(
            vec![LatentBlock {
                name: "mu".into(),
                kind: BlockKind::FixedEffect { precision: 1.0 },
                size: 1,
                sum_to_zero: false,
            }],
            vec![],
            rows,
        );
        for x0 in [-2.0, 0.0, 3.5] {
            let report =
                fd_check(&model, &[], &DVector::from_vec(vec![x0]), 1e-5).unwrap();
            assert!(report.max_grad_rel_err < 1e-6, "{report:?}");
            assert!(report.max_hess_rel_err < 1e-6, "{report:?}");
        }
    }

    #[test]
    fn fd_check_survival_model() {
        let rows = vec![
            DataRow::new(
                Family::SurvWeibull { payload: SurvPayload::exact(1.3), shape_hyper: Some(0) },
                vec![(0, Coef::Const(1.0)), (1, Coef::Const(0.5))],
            ),
            DataRow::new(
                Family::SurvWeibull {
                    payload: SurvPayload::right_censored(2.1),
                    shape_hyper: Some(0),
                },
                vec![(0, Coef::Const(1.0))],
            ),
        ];
        let model = LatentModel::new(
            vec![LatentBlock {
                name: "beta".into(),
                kind: BlockKind::FixedEffect { precision: 0.01 },
                size: 2,
                sum_to_zero: false,
            }],
            vec![HyperDecl {
                name: "shape".into(),
                scale: InternalScale::LogShape,
                prior: Some(PriorSpec::PcWeibullShape { lambda: 5.0 }),
                role: HyperRole::Likelihood,
            }],
            rows,
        );
        let report = fd_check(
            &model,
            &[0.3],
            &DVector::from_vec(vec![-0.4, 0.9]),
            1e-5,
        )
        .unwrap();
        assert!(report.max_grad_rel_err < 1e-4, "{report:?}");
        assert!(report.max_hess_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn dimension_guard() {
        let model = LatentModel::new(
            vec![LatentBlock {
                name: "big".into(),
                kind: BlockKind::FixedEffect { precision: 1.0 },
                size: 3,
                sum_to_zero: false,
            }],
            vec![],
            vec![],
        );
        assert!(quad_posterior(&model, 51).is_err());
    }
}
