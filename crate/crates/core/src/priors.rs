//! Prior log-densities on the internal (unconstrained) hyperparameter scales.
//!
//! Every density here includes the Jacobian of the internal-scale transform,
//! so `log_prior` can be summed directly into the log posterior of the
//! internal hyperparameter vector.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Prior family declarations. Parameters are on the user scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PriorSpec {
    /// Gaussian on the identity scale.
    Normal { mean: f64, precision: f64 },
    /// Penalised-complexity prior on a precision, stated as P(sigma > u) = alpha.
    /// Internal scale is the log precision.
    PcPrecision { u: f64, alpha: f64 },
    /// Gamma(a, b) on a precision; internal scale is the log precision.
    GammaPrecision { a: f64, b: f64 },
    /// Penalised-complexity prior on a Weibull shape with base model shape 1,
    /// built from the Kullback-Leibler distance. Internal scale is log shape.
    PcWeibullShape { lambda: f64 },
    /// Fallback Gamma prior on a Weibull shape; internal scale is log shape.
    GammaWeibullShape { a: f64, b: f64 },
    /// Wishart(r, identity) on the precision matrix of a correlated
    /// random-effect block of dimension `dim` (2 or 3). Internal scale is
    /// (log marginal precisions, Fisher-z correlations).
    WishartRe { dim: usize, r: f64 },
    Flat,
}

impl PriorSpec {
    /// Number of internal hyperparameter coordinates this prior covers.
    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::WishartRe { dim, .. } => dim * (dim + 1) / 2,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PriorSpec::Normal { precision, .. } if precision <= 0.0 => Err(
                Error::PriorDomain(format!("normal precision must be > 0, got {precision}")),
            ),
            PriorSpec::PcPrecision { u, alpha } if u <= 0.0 || alpha <= 0.0 || alpha >= 1.0 => {
                Err(Error::PriorDomain(format!(
                    "pc-precision requires u > 0 and 0 < alpha < 1, got u={u}, alpha={alpha}"
                )))
            }
            PriorSpec::GammaPrecision { a, b } | PriorSpec::GammaWeibullShape { a, b }
                if a <= 0.0 || b <= 0.0 =>
            {
                Err(Error::PriorDomain(format!(
                    "gamma prior requires a, b > 0, got a={a}, b={b}"
                )))
            }
            PriorSpec::PcWeibullShape { lambda } if lambda <= 0.0 => Err(Error::PriorDomain(
                format!("pc-weibull-shape requires lambda > 0, got {lambda}"),
            )),
            PriorSpec::WishartRe { dim, r } => {
                if dim != 2 && dim != 3 {
                    return Err(Error::PriorDomain(format!(
                        "wishart-re supports dim 2 or 3, got {dim}"
                    )));
                }
                if r <= (dim as f64) - 1.0 {
                    return Err(Error::PriorDomain(format!(
                        "wishart-re requires r > dim - 1, got r={r}, dim={dim}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Median of the prior on the internal scale, used to start the
    /// hyperparameter mode search. Clamped to [-4, 4]: extreme medians
    /// (e.g. Gamma(0.01, 0.01)) would start the search far outside the
    /// region where the Gaussian approximation is computable.
    pub fn median_internal(&self) -> Vec<f64> {
        let clamp = |v: f64| v.clamp(-4.0, 4.0);
        match *self {
            PriorSpec::Normal { mean, .. } => vec![clamp(mean)],
            PriorSpec::PcPrecision { u, alpha } => {
                let lambda = -alpha.ln() / u;
                let sigma_med = std::f64::consts::LN_2 / lambda;
                vec![clamp(-2.0 * sigma_med.ln())]
            }
            PriorSpec::GammaPrecision { a, b } | PriorSpec::GammaWeibullShape { a, b } => {
                vec![clamp(gamma_median(a, b).ln())]
            }
            // Symmetric two-sided construction: median shape is the base model.
            PriorSpec::PcWeibullShape { .. } => vec![0.0],
            PriorSpec::WishartRe { dim, .. } => vec![0.0; dim * (dim + 1) / 2],
            PriorSpec::Flat => vec![0.0],
        }
    }

    /// Log-density at the internal-scale coordinates, Jacobian included.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        self.validate()?;
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "prior expects {} coordinates, got {}",
                self.dim(),
                theta.len()
            )));
        }
        match *self {
            PriorSpec::Normal { mean, precision } => {
                let z = theta[0] - mean;
                Ok(0.5 * (precision.ln() - LN_2PI) - 0.5 * precision * z * z)
            }
            PriorSpec::PcPrecision { u, alpha } => {
                // density on tau: (lambda/2) tau^(-3/2) exp(-lambda tau^(-1/2)),
                // transformed to theta = log tau.
                let lambda = -alpha.ln() / u;
                let th = theta[0];
                Ok((lambda / 2.0).ln() - 0.5 * th - lambda * (-0.5 * th).exp())
            }
            PriorSpec::GammaPrecision { a, b } | PriorSpec::GammaWeibullShape { a, b } => {
                let th = theta[0];
                Ok(a * b.ln() - ln_gamma(a) + a * th - b * th.exp())
            }
            PriorSpec::PcWeibullShape { lambda } => {
                let alpha = theta[0].exp();
                // Deep in the alpha -> 0 tail the Gamma(1 + 1/alpha) term
                // overflows; the distance is then astronomically large and
                // the density is zero for any workable lambda.
                if ln_gamma(1.0 + 1.0 / alpha) > 500.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let (d, dprime) = pc_weibull_distance(alpha);
                // Exponential on the distance, half mass per branch; Jacobian
                // alpha from theta = log alpha.
                Ok((lambda / 2.0).ln() - lambda * d + dprime.abs().ln() + theta[0])
            }
            PriorSpec::WishartRe { dim, r } => wishart_re_log_density(dim, r, theta),
            PriorSpec::Flat => Ok(0.0),
        }
    }

    /// Short human-readable description for the prior report.
    pub fn describe(&self) -> String {
        match *self {
            PriorSpec::Normal { mean, precision } => {
                format!("Normal(mean={}, variance={})", mean, 1.0 / precision)
            }
            PriorSpec::PcPrecision { u, alpha } => {
                format!("PC-precision(P(sigma > {u}) = {alpha})")
            }
            PriorSpec::GammaPrecision { a, b } => format!("Gamma(a={a}, b={b}) on precision"),
            PriorSpec::PcWeibullShape { lambda } => format!("PC({lambda}) on Weibull shape"),
            PriorSpec::GammaWeibullShape { a, b } => format!("Gamma(a={a}, b={b}) on Weibull shape"),
            PriorSpec::WishartRe { dim, r } => format!("Wishart(r={r}, identity) on {dim}x{dim} precision"),
            PriorSpec::Flat => "Flat".to_string(),
        }
    }
}

/// KL distance from a Weibull(shape alpha, scale 1) to the exponential base
/// model, d(alpha) = sqrt(2 KL(alpha)), with its derivative in alpha.
///
/// KL(alpha) = ln(alpha) - gamma_E (alpha - 1)/alpha - 1 + Gamma(1 + 1/alpha).
fn pc_weibull_distance(alpha: f64) -> (f64, f64) {
    const EULER_GAMMA: f64 = 0.5772156649015329;
    let kl = |a: f64| a.ln() - EULER_GAMMA * (a - 1.0) / a - 1.0 + ln_gamma(1.0 + 1.0 / a).exp();
    let k = kl(alpha).max(0.0);
    let d = (2.0 * k).sqrt();
    if (alpha - 1.0).abs() < 1e-3 {
        // d(alpha) ~ sqrt(K''(1)) |alpha - 1| near the base model, with
        // K''(1) = pi^2/6 + (1 - gamma_E)^2.
        let curv = 1.3504372109997856;
        return (d, if alpha >= 1.0 { curv } else { -curv });
    }
    let g1 = ln_gamma(1.0 + 1.0 / alpha).exp();
    let kprime = 1.0 / alpha - EULER_GAMMA / (alpha * alpha)
        - g1 * digamma(1.0 + 1.0 / alpha) / (alpha * alpha);
    (d, kprime / d)
}

/// Numeric median of Gamma(a, b) by bisection on the regularised CDF.
fn gamma_median(a: f64, b: f64) -> f64 {
    let cdf = |x: f64| statrs::function::gamma::gamma_lr(a, b * x);
    let (mut lo, mut hi): (f64, f64) = (1e-300, 1e300);
    for _ in 0..200 {
        let mid = (lo.ln() + hi.ln()) / 2.0;
        let m = mid.exp();
        if cdf(m) < 0.5 {
            lo = m;
        } else {
            hi = m;
        }
    }
    (lo * hi).sqrt()
}

/// Covariance matrix from the internal parameterisation
/// (log marginal precisions, then Fisher-z correlations in row order
/// (1,2), (1,3), (2,3)).
pub fn re_covariance(dim: usize, theta: &[f64]) -> nalgebra::DMatrix<f64> {
    let mut sigma = nalgebra::DMatrix::zeros(dim, dim);
    for i in 0..dim {
        sigma[(i, i)] = (-theta[i]).exp();
    }
    let mut k = dim;
    for i in 0..dim {
        for j in (i + 1)..dim {
            let rho = theta[k].tanh();
            let v = rho * (sigma[(i, i)] * sigma[(j, j)]).sqrt();
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
            k += 1;
        }
    }
    sigma
}

fn wishart_re_log_density(dim: usize, r: f64, theta: &[f64]) -> Result<f64> {
    let p = dim as f64;
    let sigma = re_covariance(dim, theta);
    let chol = match nalgebra::Cholesky::new(sigma.clone()) {
        Some(c) => c,
        // Inconsistent correlation triple: zero prior mass.
        None => return Ok(f64::NEG_INFINITY),
    };
    let log_det_sigma: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let prec = chol.inverse();
    let log_det_prec = -log_det_sigma;
    let trace: f64 = (0..dim).map(|i| prec[(i, i)]).sum();

    // Wishart(r, identity) density of the precision matrix.
    let mut ln_gamma_p = p * (p - 1.0) / 4.0 * std::f64::consts::PI.ln();
    for j in 1..=dim {
        ln_gamma_p += ln_gamma(r / 2.0 + (1.0 - j as f64) / 2.0);
    }
    let log_wishart = (r - p - 1.0) / 2.0 * log_det_prec - 0.5 * trace
        - r * p / 2.0 * std::f64::consts::LN_2
        - ln_gamma_p;

    // Jacobian theta -> vech(Sigma): block triangular, diagonal entries
    // -Sigma_ii for the log precisions and (1 - rho^2) exp(-(th_i+th_j)/2)
    // for the Fisher-z terms; then vech(Sigma) -> vech(P): |Sigma|^-(p+1).
    let mut log_jac = 0.0;
    for i in 0..dim {
        log_jac += sigma[(i, i)].ln();
    }
    let mut k = dim;
    for i in 0..dim {
        for j in (i + 1)..dim {
            let rho = theta[k].tanh();
            log_jac += (1.0 - rho * rho).ln() - 0.5 * (theta[i] + theta[j]);
            k += 1;
        }
    }
    log_jac -= (p + 1.0) * log_det_sigma;

    Ok(log_wishart + log_jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn integrate_1d(spec: &PriorSpec, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * spec.log_density(&[x]).unwrap().exp();
        }
        total * h
    }

    #[test]
    fn normal_log_density_closed_form() {
        let spec = PriorSpec::Normal { mean: 0.0, precision: 0.01 };
        let v = spec.log_density(&[0.0]).unwrap();
        assert_relative_eq!(v, 0.5 * (0.01f64.ln() - LN_2PI), epsilon = 1e-12);
    }

    #[test]
    fn scalar_priors_normalise() {
        for spec in [
            PriorSpec::Normal { mean: 1.0, precision: 0.25 },
            PriorSpec::PcPrecision { u: 0.5, alpha: 0.01 },
            PriorSpec::GammaPrecision { a: 1.5, b: 0.8 },
            PriorSpec::GammaWeibullShape { a: 25.0, b: 5.0 },
            PriorSpec::PcWeibullShape { lambda: 5.0 },
        ] {
            let total = integrate_1d(&spec, -60.0, 40.0, 400_000);
            assert!(
                (total - 1.0).abs() < 1e-4,
                "{} integrates to {total}",
                spec.describe()
            );
        }
    }

    #[test]
    fn pc_precision_tail_identity() {
        // P(sigma > u) = alpha with sigma = exp(-theta/2): integrate the
        // internal density over theta < -2 ln(u).
        let (u, alpha) = (0.5, 0.01);
        let spec = PriorSpec::PcPrecision { u, alpha };
        let cut = -2.0 * u.ln();
        let mass = integrate_1d(&spec, -80.0, cut, 800_000);
        assert!((mass - alpha).abs() < 1e-6, "tail mass {mass}");
    }

    #[test]
    fn gamma_median_matches_quantile() {
        // Gamma(2, 1) median is about 1.6783.
        let m = gamma_median(2.0, 1.0);
        assert_relative_eq!(m, 1.6783469900166608, epsilon = 1e-6);
    }

    /// Independent oracle: Wishart density at a point obtained by mapping the
    /// internal coordinates through a *numeric* Jacobian.
    fn wishart_oracle(dim: usize, r: f64, theta: &[f64]) -> f64 {
        let p = dim as f64;
        let prec_of = |th: &[f64]| {
            let sigma = re_covariance(dim, th);
            sigma.clone().try_inverse().unwrap()
        };
        let prec = prec_of(theta);
        let chol = nalgebra::Cholesky::new(prec.clone()).unwrap();
        let log_det_prec: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let trace: f64 = (0..dim).map(|i| prec[(i, i)]).sum();
        let mut ln_gamma_p = p * (p - 1.0) / 4.0 * std::f64::consts::PI.ln();
        for j in 1..=dim {
            ln_gamma_p += ln_gamma(r / 2.0 + (1.0 - j as f64) / 2.0);
        }
        let log_wishart = (r - p - 1.0) / 2.0 * log_det_prec - 0.5 * trace
            - r * p / 2.0 * std::f64::consts::LN_2
            - ln_gamma_p;
        // Numeric Jacobian of theta -> vech(P).
        let m = theta.len();
        let h = 1e-6;
        let mut jac = nalgebra::DMatrix::zeros(m, m);
        let vech = |p: &nalgebra::DMatrix<f64>| {
            let mut v = Vec::new();
            for i in 0..dim {
                v.push(p[(i, i)]);
            }
            for i in 0..dim {
                for j in (i + 1)..dim {
                    v.push(p[(i, j)]);
                }
            }
            v
        };
        for k in 0..m {
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[k] += h;
            tm[k] -= h;
            let vp = vech(&prec_of(&tp));
            let vm = vech(&prec_of(&tm));
            for i in 0..m {
                jac[(i, k)] = (vp[i] - vm[i]) / (2.0 * h);
            }
        }
        log_wishart + jac.determinant().abs().ln()
    }

    #[test]
    fn wishart_2x2_matches_numeric_jacobian_oracle() {
        let spec = PriorSpec::WishartRe { dim: 2, r: 10.0 };
        for theta in [[0.0, 0.0, 0.0], [0.3, -0.2, 0.4], [-0.5, 0.1, -0.8]] {
            let ours = spec.log_density(&theta).unwrap();
            let oracle = wishart_oracle(2, 10.0, &theta);
            assert_relative_eq!(ours, oracle, epsilon = 1e-5);
        }
    }

    #[test]
    fn wishart_3x3_matches_numeric_jacobian_oracle() {
        let spec = PriorSpec::WishartRe { dim: 3, r: 10.0 };
        for theta in [
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.2, -0.1, 0.3, 0.2, -0.3, 0.1],
        ] {
            let ours = spec.log_density(&theta).unwrap();
            let oracle = wishart_oracle(3, 10.0, &theta);
            assert_relative_eq!(ours, oracle, epsilon = 1e-4);
        }
    }

    #[test]
    fn wishart_2x2_normalises_by_monte_carlo() {
        // Importance-sample the internal space with a wide Gaussian.
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let spec = PriorSpec::WishartRe { dim: 2, r: 10.0 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let prop = Normal::new(0.0, 2.0).unwrap();
        let n = 400_000;
        let mut total = 0.0;
        for _ in 0..n {
            let th = [prop.sample(&mut rng), prop.sample(&mut rng), prop.sample(&mut rng)];
            let logq: f64 = th
                .iter()
                .map(|&x| -0.5 * (x / 2.0) * (x / 2.0) - (2.0f64).ln() - 0.5 * LN_2PI)
                .sum();
            total += (spec.log_density(&th).unwrap() - logq).exp();
        }
        let est = total / n as f64;
        assert!((est - 1.0).abs() < 0.01, "MC normalisation {est}");
    }

    #[test]
    fn out_of_domain_parameters_rejected() {
        assert!(PriorSpec::PcPrecision { u: -1.0, alpha: 0.01 }.log_density(&[0.0]).is_err());
        assert!(PriorSpec::GammaPrecision { a: 0.0, b: 1.0 }.log_density(&[0.0]).is_err());
        assert!(PriorSpec::WishartRe { dim: 4, r: 10.0 }.validate().is_err());
        assert!(PriorSpec::WishartRe { dim: 3, r: 1.0 }.validate().is_err());
    }
}
