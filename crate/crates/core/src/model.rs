//! The assembled inference problem: latent blocks with Gaussian prior
//! structure, hyperparameter declarations, and data rows tied to likelihood
//! families through a (possibly theta-dependent) sparse design.

use crate::error::{Error, Result};
use crate::likelihoods::{self, LikTriple, SurvPayload};
use crate::priors::PriorSpec;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BlockKind {
    /// Independent Gaussian coordinates with fixed prior precision.
    FixedEffect { precision: f64 },
    /// Exchangeable Gaussian effects with one log-precision hyperparameter.
    IidRandom { prec_hyper: usize },
    /// First-order random walk (first-difference structure, rank size-1).
    Rw1 { prec_hyper: usize },
    /// Second-order random walk (second-difference structure, rank size-2).
    Rw2 { prec_hyper: usize },
    /// Tight copy of another block scaled by one hyperparameter.
    CopyScaled { source: usize, scale_hyper: usize },
    /// Correlated random effects of dimension `dim` per group, laid out
    /// group-major, with precision parameterised by `hypers`
    /// (log marginal precisions then Fisher-z correlations).
    CorrelatedRe { dim: usize, hypers: Vec<usize> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatentBlock {
    pub name: String,
    pub kind: BlockKind,
    pub size: usize,
    pub sum_to_zero: bool,
}

impl LatentBlock {
    pub fn hyper_links(&self) -> Vec<usize> {
        match &self.kind {
            BlockKind::FixedEffect { .. } => vec![],
            BlockKind::IidRandom { prec_hyper }
            | BlockKind::Rw1 { prec_hyper }
            | BlockKind::Rw2 { prec_hyper } => vec![*prec_hyper],
            BlockKind::CopyScaled { scale_hyper, .. } => vec![*scale_hyper],
            BlockKind::CorrelatedRe { hypers, .. } => hypers.clone(),
        }
    }
}

/// Internal-scale transform of one hyperparameter coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InternalScale {
    LogPrecision,
    LogShape,
    Identity,
    FisherZ,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperRole {
    Likelihood,
    BlockPrecision,
    Association,
    CureCoefficient,
    ReMatrixComponent,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HyperDecl {
    pub name: String,
    pub scale: InternalScale,
    /// Scalar prior; `None` when the coordinate is covered by a joint prior.
    pub prior: Option<PriorSpec>,
    pub role: HyperRole,
}

/// A prior spanning several internal coordinates (the Wishart RE prior).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointPrior {
    pub hypers: Vec<usize>,
    pub spec: PriorSpec,
}

/// Design coefficient: constant, or scaled by an identity-scale
/// hyperparameter (copy scale gamma, possibly times a known factor such as
/// the interval midpoint for time-scaled shares).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Coef {
    Const(f64),
    Scaled { hyper: usize, factor: f64 },
}

impl Coef {
    pub fn value(&self, theta: &[f64]) -> f64 {
        match *self {
            Coef::Const(c) => c,
            Coef::Scaled { hyper, factor } => theta[hyper] * factor,
        }
    }
}

/// Additive offset on the linear predictor of a row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Offset {
    Const(f64),
    /// Parametric baseline folded into a Poisson-augmented row:
    /// log alpha + (alpha - 1) log t_mid + log dt, alpha = exp(theta[shape]).
    /// `shape_hyper = None` means exponential (alpha = 1).
    WeibullHazard { shape_hyper: Option<usize>, log_t: f64, log_dt: f64 },
}

impl Offset {
    pub fn value(&self, theta: &[f64]) -> f64 {
        match *self {
            Offset::Const(c) => c,
            Offset::WeibullHazard { shape_hyper, log_t, log_dt } => {
                let alpha = shape_hyper.map_or(1.0, |h| theta[h].exp());
                alpha.ln() + (alpha - 1.0) * log_t + log_dt
            }
        }
    }
}

/// Precision of a Gaussian-type response: fixed or hyperparameter-driven.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PrecSpec {
    Fixed(f64),
    Hyper(usize),
}

impl PrecSpec {
    pub fn value(&self, theta: &[f64]) -> f64 {
        match *self {
            PrecSpec::Fixed(p) => p,
            PrecSpec::Hyper(h) => theta[h].exp(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Family {
    Gaussian { y: f64, precision: PrecSpec },
    Lognormal { y: f64, precision: PrecSpec },
    Binomial { y: f64, trials: f64 },
    /// Count response; the log-exposure offset lives on the row.
    Poisson { y: f64 },
    /// Parametric survival; `shape_hyper = None` is the exponential family.
    SurvWeibull { payload: SurvPayload, shape_hyper: Option<usize> },
    /// Mixture cure with Weibull latency; `cure_design` maps identity-scale
    /// hyperparameters (the cure coefficients) to this row's cure covariates.
    SurvCure {
        payload: SurvPayload,
        shape_hyper: Option<usize>,
        cure_design: Vec<(usize, f64)>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataRow {
    pub family: Family,
    pub design: Vec<(usize, Coef)>,
    pub offset: Offset,
}

impl DataRow {
    pub fn new(family: Family, design: Vec<(usize, Coef)>) -> Self {
        DataRow { family, design, offset: Offset::Const(0.0) }
    }

    /// Linear predictor including the offset.
    pub fn eta(&self, x: &nalgebra::DVector<f64>, theta: &[f64]) -> f64 {
        let mut eta = self.offset.value(theta);
        for (col, coef) in &self.design {
            eta += coef.value(theta) * x[*col];
        }
        eta
    }

    pub fn loglik(&self, eta: f64, theta: &[f64]) -> Result<LikTriple> {
        match &self.family {
            Family::Gaussian { y, precision } => {
                likelihoods::loglik_gaussian(*y, eta, precision.value(theta))
            }
            Family::Lognormal { y, precision } => {
                likelihoods::loglik_lognormal(*y, eta, precision.value(theta))
            }
            Family::Binomial { y, trials } => likelihoods::loglik_binomial(*y, *trials, eta),
            Family::Poisson { y } => likelihoods::loglik_poisson(*y, eta),
            Family::SurvWeibull { payload, shape_hyper } => {
                let alpha = shape_hyper.map_or(1.0, |h| theta[h].exp());
                likelihoods::loglik_weibull_surv(payload, eta, alpha)
            }
            Family::SurvCure { payload, shape_hyper, cure_design } => {
                let alpha = shape_hyper.map_or(1.0, |h| theta[h].exp());
                let cure_eta: f64 = cure_design.iter().map(|(h, v)| theta[*h] * v).sum();
                likelihoods::loglik_cure(payload, eta, alpha, cure_eta)
            }
        }
    }
}

/// A fully assembled latent Gaussian model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatentModel {
    pub blocks: Vec<LatentBlock>,
    pub hypers: Vec<HyperDecl>,
    pub joint_priors: Vec<JointPrior>,
    pub rows: Vec<DataRow>,
    /// Prior mean of the latent field (zero unless overridden).
    pub prior_mean: Vec<f64>,
}

impl LatentModel {
    pub fn new(blocks: Vec<LatentBlock>, hypers: Vec<HyperDecl>, rows: Vec<DataRow>) -> Self {
        let n: usize = blocks.iter().map(|b| b.size).sum();
        LatentModel { blocks, hypers, joint_priors: Vec::new(), rows, prior_mean: vec![0.0; n] }
    }

    pub fn latent_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.size).sum()
    }

    pub fn theta_dim(&self) -> usize {
        self.hypers.len()
    }

    /// Offset of a block's first coordinate in the latent vector.
    pub fn block_offset(&self, block: usize) -> usize {
        self.blocks[..block].iter().map(|b| b.size).sum()
    }

    pub fn block_range(&self, block: usize) -> std::ops::Range<usize> {
        let start = self.block_offset(block);
        start..start + self.blocks[block].size
    }

    /// Count of latent coordinates that are random effects (everything that
    /// is not a fixed-effect block), for the ill-definedness diagnostic.
    pub fn random_effect_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| !matches!(b.kind, BlockKind::FixedEffect { .. }))
            .map(|b| b.size)
            .sum()
    }

    /// Internal-scale start point for the hyperparameter mode search.
    pub fn theta_start(&self) -> Vec<f64> {
        let mut start = vec![0.0; self.theta_dim()];
        for (i, h) in self.hypers.iter().enumerate() {
            if let Some(prior) = &h.prior {
                start[i] = prior.median_internal()[0];
            }
        }
        for jp in &self.joint_priors {
            let med = jp.spec.median_internal();
            for (k, &h) in jp.hypers.iter().enumerate() {
                start[h] = med[k];
            }
        }
        start
    }

    /// log g(theta): sum of all scalar and joint priors on the internal scale.
    pub fn log_prior_theta(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.theta_dim() {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} coordinates, model declares {}",
                theta.len(),
                self.theta_dim()
            )));
        }
        let mut total = 0.0;
        for (i, h) in self.hypers.iter().enumerate() {
            if let Some(prior) = &h.prior {
                total += prior.log_density(&theta[i..=i])?;
            }
        }
        for jp in &self.joint_priors {
            let sub: Vec<f64> = jp.hypers.iter().map(|&h| theta[h]).collect();
            total += jp.spec.log_density(&sub)?;
        }
        Ok(total)
    }

    pub fn validate(&self) -> Result<()> {
        let nt = self.theta_dim();
        for (bi, b) in self.blocks.iter().enumerate() {
            if b.size == 0 {
                return Err(Error::InvalidBlockSize(b.name.clone(), b.size));
            }
            for h in b.hyper_links() {
                if h >= nt {
                    return Err(Error::HyperIndexOutOfRange(h, nt));
                }
            }
            match &b.kind {
                BlockKind::CopyScaled { source, .. } => {
                    if *source >= self.blocks.len() || *source == bi {
                        return Err(Error::InvalidBlock {
                            name: b.name.clone(),
                            reason: "copy-scaled source block out of range".into(),
                        });
                    }
                    if self.blocks[*source].size != b.size {
                        return Err(Error::InvalidBlock {
                            name: b.name.clone(),
                            reason: "copy-scaled source must have identical size".into(),
                        });
                    }
                }
                BlockKind::CorrelatedRe { dim, hypers } => {
                    if b.size % dim != 0 {
                        return Err(Error::InvalidBlock {
                            name: b.name.clone(),
                            reason: format!("size {} not a multiple of RE dimension {dim}", b.size),
                        });
                    }
                    if hypers.len() != dim * (dim + 1) / 2 {
                        return Err(Error::InvalidBlock {
                            name: b.name.clone(),
                            reason: "correlated RE needs dim(dim+1)/2 hyperparameters".into(),
                        });
                    }
                }
                _ => {}
            }
            if b.sum_to_zero && !matches!(b.kind, BlockKind::Rw1 { .. } | BlockKind::Rw2 { .. }) {
                return Err(Error::InvalidBlock {
                    name: b.name.clone(),
                    reason: "sum-to-zero is only valid on rw1/rw2 blocks".into(),
                });
            }
        }
        let n = self.latent_dim();
        if self.prior_mean.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "prior mean has {} entries, latent dim is {n}",
                self.prior_mean.len()
            )));
        }
        for row in &self.rows {
            for (col, coef) in &row.design {
                if *col >= n {
                    return Err(Error::DimensionMismatch(format!(
                        "design column {col} out of range (latent dim {n})"
                    )));
                }
                if let Coef::Scaled { hyper, .. } = coef {
                    if *hyper >= nt {
                        return Err(Error::HyperIndexOutOfRange(*hyper, nt));
                    }
                }
            }
        }
        for jp in &self.joint_priors {
            for &h in &jp.hypers {
                if h >= nt {
                    return Err(Error::HyperIndexOutOfRange(h, nt));
                }
            }
        }
        Ok(())
    }
}
