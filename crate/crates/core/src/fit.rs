//! Fit orchestration: hyperparameter exploration, marginal extraction,
//! posterior sampling, fit criteria (log-mlik / DIC / WAIC), diagnostics,
//! and the prior report.

use crate::error::{Error, Result};
use crate::marginal::{hyper_marginal, latent_marginal, Marginal};
use crate::model::{BlockKind, LatentModel};
use crate::precision::constraint_matrix;
use crate::theta::{explore_theta, Strategy, ThetaPosterior};
use nalgebra::{Cholesky, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitConfig {
    pub strategy: Strategy,
    pub seed: u64,
    /// Draw count for DIC/WAIC and sampling-based post-processing.
    pub samples: usize,
    /// Retain factorisations so `sample_posterior` can be called later.
    pub keep_config: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { strategy: Strategy::Auto, seed: 1, samples: 1000, keep_config: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitCriteria {
    pub log_mlik: f64,
    pub dic: f64,
    pub waic: f64,
    /// True when log-mlik is the Laplace estimate at the EB mode rather
    /// than a grid sum.
    pub mlik_approximate: bool,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub theta: ThetaPosterior,
    /// One marginal per latent coordinate.
    pub latent: Vec<Marginal>,
    /// One marginal per hyperparameter, internal scale.
    pub hyper_internal: Vec<Marginal>,
    pub criteria: FitCriteria,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
    pub config: FitConfig,
}

/// One posterior configuration draw.
#[derive(Clone, Debug)]
pub struct Draw {
    pub theta: Vec<f64>,
    pub x: DVector<f64>,
}

/// Fit a model end to end.
pub fn fit(model: &LatentModel, config: &FitConfig) -> Result<FitResult> {
    model.validate()?;
    let start = std::time::Instant::now();
    let tp = explore_theta(model, config.strategy)?;
    let n = model.latent_dim();
    let d = model.theta_dim();
    let latent: Vec<Marginal> =
        (0..n).map(|i| latent_marginal(&tp, i)).collect::<Result<_>>()?;
    let hyper_internal: Vec<Marginal> =
        (0..d).map(|j| hyper_marginal(&tp, j)).collect::<Result<_>>()?;
    let draws = sample_posterior(model, &tp, config.samples, config.seed)?;
    let criteria = fit_criteria(model, &tp, &latent, &draws)?;
    let mut warnings = tp.warnings.clone();
    warnings.extend(diagnostics(model, &tp, &latent, &hyper_internal));
    Ok(FitResult {
        theta: tp,
        latent,
        hyper_internal,
        criteria,
        warnings,
        wall_time_s: start.elapsed().as_secs_f64(),
        config: config.clone(),
    })
}

/// Draw `n` joint (theta, latent) samples: theta categorically by weight,
/// the latent field from the matching Gaussian conditional, with the
/// sum-to-zero correction applied to each draw.
pub fn sample_posterior(
    model: &LatentModel,
    tp: &ThetaPosterior,
    n: usize,
    seed: u64,
) -> Result<Vec<Draw>> {
    if tp.points.is_empty() {
        return Err(Error::ConfigNotRetained);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = constraint_matrix(model);
    // Per-point samplers: Cholesky of the precision plus constraint data.
    struct Sampler {
        chol: Cholesky<f64, nalgebra::Dyn>,
        correction: Option<(nalgebra::DMatrix<f64>, Cholesky<f64, nalgebra::Dyn>)>,
    }
    let mut samplers: Vec<Option<Sampler>> = (0..tp.points.len()).map(|_| None).collect();
    let cum: Vec<f64> = tp
        .points
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p.weight;
            Some(*acc)
        })
        .collect();
    let dim = model.latent_dim();
    let normal = rand_distr::StandardNormal;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen();
        let k = cum.iter().position(|&c| u <= c).unwrap_or(tp.points.len() - 1);
        if samplers[k].is_none() {
            let p = &tp.points[k];
            let chol = Cholesky::new(p.approx.precision.clone()).ok_or_else(|| {
                Error::IndefiniteHessian("retained posterior precision".into())
            })?;
            let correction = match &b {
                None => None,
                Some(bm) => {
                    let sigma_u = chol.inverse();
                    let sbt = &sigma_u * bm.transpose();
                    let w = bm * &sbt;
                    let chol_w = Cholesky::new(w).ok_or_else(|| {
                        Error::IndefiniteHessian("constraint matrix W".into())
                    })?;
                    Some((sbt, chol_w))
                }
            };
            samplers[k] = Some(Sampler { chol, correction });
        }
        let sampler = samplers[k].as_ref().unwrap();
        let point = &tp.points[k];
        // Fluctuation y ~ N(0, P^-1): solve L^T y = z.
        let z = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(normal)));
        let y = sampler
            .chol
            .l_dirty()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::IndefiniteHessian("triangular solve in sampling".into()))?;
        let x = match (&sampler.correction, &b) {
            (Some((sbt, chol_w)), Some(bm)) => {
                let by = bm * &y;
                &point.approx.mode + (&y - sbt * chol_w.solve(&by))
            }
            _ => &point.approx.mode + y,
        };
        out.push(Draw { theta: point.theta.clone(), x });
    }
    Ok(out)
}

/// Deviance −2 sum_i log f(y_i | x, theta).
fn deviance(model: &LatentModel, theta: &[f64], x: &DVector<f64>) -> Result<f64> {
    Ok(-2.0 * crate::gauss::loglik_sum(model, theta, x)?)
}

/// Fit criteria from the explored posterior and a set of joint draws.
pub fn fit_criteria(
    model: &LatentModel,
    tp: &ThetaPosterior,
    latent: &[Marginal],
    draws: &[Draw],
) -> Result<FitCriteria> {
    let mlik_approximate = tp.strategy_used == Strategy::EmpiricalBayes;

    // DIC: mean deviance over draws plus pD, with pD = mean deviance minus
    // deviance at the posterior mean of (x, theta).
    let (dic, waic) = if draws.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let mut dev_sum = 0.0;
        // Per-row log-likelihood matrix for WAIC, accumulated streaming.
        let m = model.rows.len();
        let s = draws.len();
        let mut row_loglik: Vec<Vec<f64>> = vec![Vec::with_capacity(s); m];
        for draw in draws {
            let mut total = 0.0;
            for (i, row) in model.rows.iter().enumerate() {
                let eta = row.eta(&draw.x, &draw.theta);
                let t = row.loglik(eta, &draw.theta)?;
                row_loglik[i].push(t.value);
                total += t.value;
            }
            dev_sum += -2.0 * total;
        }
        let dev_mean = dev_sum / s as f64;
        let x_mean = DVector::from_iterator(latent.len(), latent.iter().map(|mg| mg.mean));
        let theta_mean = tp.mean();
        let dev_at_mean = deviance(model, &theta_mean, &x_mean)?;
        let p_d = dev_mean - dev_at_mean;
        let dic = dev_mean + p_d;

        let mut lppd = 0.0;
        let mut p_waic = 0.0;
        for lls in &row_loglik {
            let max = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean_lik =
                lls.iter().map(|l| (l - max).exp()).sum::<f64>() / s as f64;
            lppd += max + mean_lik.ln();
            let mean_ll = lls.iter().sum::<f64>() / s as f64;
            let var_ll =
                lls.iter().map(|l| (l - mean_ll).powi(2)).sum::<f64>() / (s as f64 - 1.0).max(1.0);
            p_waic += var_ll;
        }
        let waic = -2.0 * (lppd - p_waic);
        (dic, waic)
    };

    Ok(FitCriteria { log_mlik: tp.log_mlik, dic, waic, mlik_approximate })
}

/// Symmetrised KL divergence between two Gaussians.
fn sym_kl_gaussian(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let kl = |ma: f64, sa: f64, mb: f64, sb: f64| {
        (sb / sa).ln() + (sa * sa + (ma - mb).powi(2)) / (2.0 * sb * sb) - 0.5
    };
    kl(m1, s1, m2, s2) + kl(m2, s2, m1, s1)
}

/// Model-check warnings:
/// (a) |correlation| between theta axes above 0.99,
/// (b) more random-effect coordinates than data rows,
/// (c) posterior matching its prior (symmetrised KL < 0.1), flagged for
///     fixed effects and Normal-prior hyperparameters, indicating
///     non-identifiability.
pub fn diagnostics(
    model: &LatentModel,
    tp: &ThetaPosterior,
    latent: &[Marginal],
    hyper_internal: &[Marginal],
) -> Vec<String> {
    let mut warnings = Vec::new();
    let max_cor = tp.max_abs_correlation();
    if max_cor > 0.99 {
        warnings.push(format!(
            "highly correlated hyperparameters: |correlation| = {max_cor:.4} at the mode"
        ));
    }
    let re = model.random_effect_count();
    if re > model.rows.len() {
        warnings.push(format!(
            "number of random effects ({re}) larger than number of data points ({})",
            model.rows.len()
        ));
    }
    for (bi, block) in model.blocks.iter().enumerate() {
        if let BlockKind::FixedEffect { precision } = block.kind {
            let prior_sd = precision.sqrt().recip();
            for (j, idx) in model.block_range(bi).enumerate() {
                let post = &latent[idx];
                if post.sd <= 0.0 {
                    continue;
                }
                let kl = sym_kl_gaussian(
                    model.prior_mean[idx],
                    prior_sd,
                    post.mean,
                    post.sd,
                );
                if kl < 0.1 {
                    warnings.push(format!(
                        "posterior of '{}[{j}]' matches its prior (symmetrised KL {kl:.4}); \
                         the parameter may not be identifiable",
                        block.name
                    ));
                }
            }
        }
    }
    for (h, decl) in model.hypers.iter().enumerate() {
        if let Some(crate::priors::PriorSpec::Normal { mean, precision }) = decl.prior {
            let post = &hyper_internal[h];
            if post.sd <= 0.0 {
                continue;
            }
            let kl = sym_kl_gaussian(mean, precision.sqrt().recip(), post.mean, post.sd);
            if kl < 0.1 {
                warnings.push(format!(
                    "posterior of hyperparameter '{}' matches its prior (symmetrised KL {kl:.4})",
                    decl.name
                ));
            }
        }
    }
    warnings
}

/// One entry of the prior report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriorReportEntry {
    pub target: String,
    pub prior: String,
}

/// Human-readable report of every prior in effect, block by block and
/// hyperparameter by hyperparameter.
pub fn priors_used(model: &LatentModel) -> Vec<PriorReportEntry> {
    let mut report = Vec::new();
    for block in &model.blocks {
        let prior = match &block.kind {
            BlockKind::FixedEffect { precision } => {
                format!("Normal(0, variance {0})", 1.0 / precision)
            }
            BlockKind::IidRandom { prec_hyper }
            | BlockKind::Rw1 { prec_hyper }
            | BlockKind::Rw2 { prec_hyper } => format!(
                "Gaussian with precision driven by hyperparameter '{}'",
                model.hypers[*prec_hyper].name
            ),
            BlockKind::CopyScaled { source, scale_hyper } => format!(
                "copy of block '{}' scaled by hyperparameter '{}'",
                model.blocks[*source].name, model.hypers[*scale_hyper].name
            ),
            BlockKind::CorrelatedRe { dim, .. } => {
                format!("{dim}-dimensional correlated random effects")
            }
        };
        report.push(PriorReportEntry { target: block.name.clone(), prior });
    }
    for decl in &model.hypers {
        let prior = match &decl.prior {
            Some(p) => p.describe(),
            None => "covered by a joint prior".into(),
        };
        report.push(PriorReportEntry { target: decl.name.clone(), prior });
    }
    for jp in &model.joint_priors {
        let names: Vec<&str> =
            jp.hypers.iter().map(|&h| model.hypers[h].name.as_str()).collect();
        report.push(PriorReportEntry {
            target: names.join(", "),
            prior: jp.spec.describe(),
        });
    }
    report
}
