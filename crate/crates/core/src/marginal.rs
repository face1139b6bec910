//! Posterior marginals as weight-mixtures of per-configuration Gaussian
//! conditionals, with analytic moments and grid-based densities/quantiles.

use crate::error::{Error, Result};
use crate::theta::ThetaPosterior;
use serde::{Deserialize, Serialize};

/// Number of abscissae in a tabulated marginal density.
pub const MARGINAL_GRID_POINTS: usize = 75;
/// Half-width of the tabulation range, in mixture standard deviations.
pub const MARGINAL_GRID_SPAN: f64 = 6.0;

/// A univariate posterior marginal: tabulated density plus analytic moments
/// where available.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Marginal {
    pub xs: Vec<f64>,
    pub density: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

fn normal_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

impl Marginal {
    /// Build from mixture components (weight, mean, sd). Moments are the
    /// exact mixture moments; the density is tabulated on a regular grid
    /// spanning `MARGINAL_GRID_SPAN` mixture sds around the mixture mean.
    pub fn from_mixture(components: &[(f64, f64, f64)]) -> Result<Marginal> {
        if components.is_empty() {
            return Err(Error::DimensionMismatch("empty mixture".into()));
        }
        let mean: f64 = components.iter().map(|(w, m, _)| w * m).sum();
        let second: f64 = components.iter().map(|(w, m, s)| w * (s * s + m * m)).sum();
        let var = (second - mean * mean).max(0.0);
        let sd = var.sqrt();
        let width = if sd > 0.0 { sd } else { 1e-6 };
        let lo = mean - MARGINAL_GRID_SPAN * width;
        let hi = mean + MARGINAL_GRID_SPAN * width;
        let xs: Vec<f64> = (0..MARGINAL_GRID_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (MARGINAL_GRID_POINTS - 1) as f64)
            .collect();
        let density = xs
            .iter()
            .map(|&x| {
                components
                    .iter()
                    .map(|&(w, m, s)| if s > 0.0 { w * normal_pdf(x, m, s) } else { 0.0 })
                    .sum()
            })
            .collect();
        Ok(Marginal { xs, density, mean, sd })
    }

    /// Build from a tabulated density; normalises it and computes moments by
    /// the trapezoid rule.
    pub fn from_grid(xs: Vec<f64>, mut density: Vec<f64>) -> Result<Marginal> {
        if xs.len() != density.len() || xs.len() < 3 {
            return Err(Error::DimensionMismatch(
                "marginal grid needs matching xs/density with at least 3 points".into(),
            ));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::DimensionMismatch("marginal grid must be increasing".into()));
        }
        let mass = trapezoid(&xs, &density);
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::DimensionMismatch("marginal density has no mass".into()));
        }
        for d in &mut density {
            *d /= mass;
        }
        let mean = trapezoid_weighted(&xs, &density, |x| x);
        let second = trapezoid_weighted(&xs, &density, |x| x * x);
        let sd = (second - mean * mean).max(0.0).sqrt();
        Ok(Marginal { xs, density, mean, sd })
    }

    /// Quantile by inverting the trapezoid CDF with linear interpolation.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::DimensionMismatch(format!("quantile level {p} outside [0,1]")));
        }
        let mass = trapezoid(&self.xs, &self.density);
        let target = p * mass;
        let mut acc = 0.0;
        for i in 1..self.xs.len() {
            let w = self.xs[i] - self.xs[i - 1];
            let (d0, d1) = (self.density[i - 1], self.density[i]);
            let seg = 0.5 * (d0 + d1) * w;
            if acc + seg >= target {
                // Density is linear on the segment, so the CDF is quadratic:
                // solve d0 u + (d1-d0)/(2w) u^2 = target - acc for u in [0,w].
                let rem = target - acc;
                let a = 0.5 * (d1 - d0) / w;
                let disc = (d0 * d0 + 4.0 * a * rem).max(0.0).sqrt();
                let u = if d0 + disc > 0.0 { 2.0 * rem / (d0 + disc) } else { 0.0 };
                return Ok(self.xs[i - 1] + u.clamp(0.0, w));
            }
            acc += seg;
        }
        Ok(*self.xs.last().unwrap())
    }

    /// Posterior median.
    pub fn median(&self) -> f64 {
        self.quantile(0.5).unwrap_or(self.mean)
    }

    /// Mode of the tabulated density.
    pub fn grid_mode(&self) -> f64 {
        let mut best = 0;
        for i in 1..self.density.len() {
            if self.density[i] > self.density[best] {
                best = i;
            }
        }
        self.xs[best]
    }
}

pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 1..xs.len() {
        total += 0.5 * (ys[i - 1] + ys[i]) * (xs[i] - xs[i - 1]);
    }
    total
}

fn trapezoid_weighted<F: Fn(f64) -> f64>(xs: &[f64], dens: &[f64], f: F) -> f64 {
    let ys: Vec<f64> = xs.iter().zip(dens).map(|(&x, &d)| f(x) * d).collect();
    trapezoid(xs, &ys)
}

/// Marginal of latent coordinate `index`: mixture over configurations of the
/// per-theta Gaussian conditionals (Gaussian marginal strategy).
pub fn latent_marginal(tp: &ThetaPosterior, index: usize) -> Result<Marginal> {
    let comps: Vec<(f64, f64, f64)> = tp
        .points
        .iter()
        .map(|p| (p.weight, p.approx.mode[index], p.approx.marginal_sd[index]))
        .collect();
    Marginal::from_mixture(&comps)
}

/// Marginal of a linear combination a'x of the latent field, plus an
/// optional theta-independent offset.
pub fn lincomb_marginal(tp: &ThetaPosterior, a: &[f64], offset: f64) -> Result<Marginal> {
    let n = tp
        .points
        .first()
        .map(|p| p.approx.mode.len())
        .ok_or_else(|| Error::DimensionMismatch("no theta points".into()))?;
    if a.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "lincomb has {} coefficients, latent dim is {n}",
            a.len()
        )));
    }
    let av = nalgebra::DVector::from_column_slice(a);
    let comps: Vec<(f64, f64, f64)> = tp
        .points
        .iter()
        .map(|p| {
            let mu = av.dot(&p.approx.mode) + offset;
            let var = (&p.approx.sigma * &av).dot(&av);
            (p.weight, mu, var.max(0.0).sqrt())
        })
        .collect();
    Marginal::from_mixture(&comps)
}

/// Marginal of hyperparameter coordinate `j` on the internal scale. With a
/// grid posterior this is a kernel mixture over the weighted grid points;
/// with empirical Bayes it is the Gaussian implied by the mode Hessian.
pub fn hyper_marginal(tp: &ThetaPosterior, j: usize) -> Result<Marginal> {
    let d = tp.mode.len();
    if j >= d {
        return Err(Error::HyperIndexOutOfRange(j, d));
    }
    let sd_j = tp.covariance[(j, j)].max(0.0).sqrt().max(1e-8);
    if tp.points.len() < 3 {
        return Marginal::from_mixture(&[(1.0, tp.mode[j], sd_j)]);
    }
    // Kernel bandwidth tied to the lattice spacing along this coordinate.
    let bw = crate::theta::GRID_STEP * sd_j;
    let comps: Vec<(f64, f64, f64)> =
        tp.points.iter().map(|p| (p.weight, p.theta[j], bw)).collect();
    Marginal::from_mixture(&comps)
}
