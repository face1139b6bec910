//! Post-processing of fitted models: marginal transformations, summary
//! tables on user scales, hazard ratios, baseline risk curves, cumulative
//! incidence functions, transition probabilities, and prior/posterior
//! overlays.

use crate::assemble::{Assembled, Baseline, SymbolTarget};
use crate::error::{Error, Result};
use crate::marginal::{hyper_marginal, latent_marginal, lincomb_marginal, Marginal};
use crate::model::{HyperRole, InternalScale};
use crate::theta::ThetaPosterior;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Monotone scalar transformations applied to a marginal density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Negate,
    Exp,
    /// exp(-x): log-precision to variance in one step.
    ExpNegate,
    Reciprocal,
    Affine { a: f64, b: f64 },
    InverseLogit,
}

impl Transform {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Transform::Negate => -x,
            Transform::Exp => x.exp(),
            Transform::ExpNegate => (-x).exp(),
            Transform::Reciprocal => 1.0 / x,
            Transform::Affine { a, b } => a * x + b,
            Transform::InverseLogit => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// |d f / d x|.
    fn abs_jacobian(&self, x: f64) -> f64 {
        match self {
            Transform::Negate => 1.0,
            Transform::Exp => x.exp(),
            Transform::ExpNegate => (-x).exp(),
            Transform::Reciprocal => 1.0 / (x * x),
            Transform::Affine { a, .. } => a.abs(),
            Transform::InverseLogit => {
                let p = 1.0 / (1.0 + (-x).exp());
                p * (1.0 - p)
            }
        }
    }

    fn is_increasing(&self) -> bool {
        match self {
            Transform::Negate | Transform::Reciprocal => false,
            Transform::Exp | Transform::ExpNegate | Transform::InverseLogit => {
                matches!(self, Transform::Exp | Transform::InverseLogit)
            }
            Transform::Affine { a, .. } => *a > 0.0,
        }
    }
}

/// Push a marginal through a monotone transformation, applying the Jacobian
/// and renormalising on the new grid.
pub fn tmarginal(m: &Marginal, t: Transform) -> Result<Marginal> {
    if t == Transform::Reciprocal {
        let lo = m.xs.first().unwrap();
        let hi = m.xs.last().unwrap();
        if *lo <= 0.0 && *hi >= 0.0 {
            return Err(Error::Transform(
                "reciprocal transform of a marginal whose support crosses zero".into(),
            ));
        }
    }
    let mut xs: Vec<f64> = m.xs.iter().map(|&x| t.apply(x)).collect();
    let mut density: Vec<f64> = m
        .xs
        .iter()
        .zip(&m.density)
        .map(|(&x, &d)| {
            let j = t.abs_jacobian(x);
            if j > 0.0 {
                d / j
            } else {
                0.0
            }
        })
        .collect();
    if !t.is_increasing() {
        xs.reverse();
        density.reverse();
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Transform("transform produced non-finite grid values".into()));
    }
    Marginal::from_grid(xs, density)
}

/// Apply a chain of transformations left to right.
pub fn tmarginal_chain(m: &Marginal, ts: &[Transform]) -> Result<Marginal> {
    let mut out = m.clone();
    for t in ts {
        out = tmarginal(&out, *t)?;
    }
    Ok(out)
}

/// One row of a summary table: posterior mean, sd, and standard quantiles.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q975: f64,
}

/// Reduce a marginal to its summary row.
pub fn zmarginal(name: &str, m: &Marginal) -> Result<SummaryRow> {
    Ok(SummaryRow {
        name: name.to_string(),
        mean: m.mean,
        sd: m.sd,
        q025: m.quantile(0.025)?,
        q25: m.quantile(0.25)?,
        q50: m.quantile(0.5)?,
        q75: m.quantile(0.75)?,
        q975: m.quantile(0.975)?,
    })
}

/// The user-scale transformation chain for a hyperparameter.
fn user_scale_chain(scale: InternalScale, role: HyperRole, sdcor: bool) -> Vec<Transform> {
    match scale {
        InternalScale::Identity => vec![],
        InternalScale::LogShape => vec![Transform::Exp],
        InternalScale::LogPrecision => {
            // Residual error precisions are reported as sd; block precisions
            // as variance unless sd/cor reporting is requested.
            let as_sd = sdcor || role == HyperRole::Likelihood;
            if as_sd {
                vec![Transform::Affine { a: -0.5, b: 0.0 }, Transform::Exp]
            } else {
                vec![Transform::ExpNegate]
            }
        }
        InternalScale::FisherZ => vec![
            // rho = tanh(theta) = 2 * logistic(2 theta) - 1.
            Transform::Affine { a: 2.0, b: 0.0 },
            Transform::InverseLogit,
            Transform::Affine { a: 2.0, b: -1.0 },
        ],
    }
}

/// A hyperparameter's posterior marginal on its user scale.
pub fn hyper_marginal_user(
    a: &Assembled,
    tp: &ThetaPosterior,
    hyper: usize,
    sdcor: bool,
) -> Result<Marginal> {
    let decl = &a.model.hypers[hyper];
    let m = hyper_marginal(tp, hyper)?;
    tmarginal_chain(&m, &user_scale_chain(decl.scale, decl.role, sdcor))
}

/// Full summary table over the symbol table: fixed effects on the latent
/// scale, hyperparameters on their user scales.
pub fn summary_table(a: &Assembled, tp: &ThetaPosterior, sdcor: bool) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for sym in &a.symbols {
        let m = match sym.target {
            SymbolTarget::Latent(i) => latent_marginal(tp, i)?,
            SymbolTarget::Hyper(h) => hyper_marginal_user(a, tp, h, sdcor)?,
        };
        rows.push(zmarginal(&sym.name, &m)?);
    }
    Ok(rows)
}

/// Hazard ratios: exp of the fixed-effect marginals (intercepts excluded).
pub fn hazard_ratios(a: &Assembled, tp: &ThetaPosterior) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for (si, m) in a.meta.surv.iter().enumerate() {
        let _ = si;
        for (name, idx) in &m.fixed {
            let _ = name;
            let sym = a
                .symbols
                .iter()
                .find(|s| s.target == SymbolTarget::Latent(*idx))
                .expect("fixed effect has a symbol");
            let hr = tmarginal(&latent_marginal(tp, *idx)?, Transform::Exp)?;
            rows.push(zmarginal(&sym.name, &hr)?);
        }
    }
    Ok(rows)
}

/// Convert a Weibull PH fit to the Gumbel (extreme-value AFT) scale:
/// fixed effects are negated and a scale parameter equal to the reciprocal
/// of the shape is reported.
pub fn gumbel_convert(a: &Assembled, tp: &ThetaPosterior) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for (si, m) in a.meta.surv.iter().enumerate() {
        if m.baseline != Baseline::Weibull {
            return Err(Error::Unsupported(
                "gumbel conversion applies to weibull baselines only".into(),
            ));
        }
        let mut latents: Vec<usize> = m.intercepts.iter().map(|(_, i)| *i).collect();
        latents.extend(m.fixed.iter().map(|(_, i)| *i));
        for idx in latents {
            let sym = a
                .symbols
                .iter()
                .find(|s| s.target == SymbolTarget::Latent(idx))
                .expect("latent symbol");
            let neg = tmarginal(&latent_marginal(tp, idx)?, Transform::Negate)?;
            rows.push(zmarginal(&sym.name, &neg)?);
        }
        // Internal scale is log(shape); 1/shape = exp(-theta).
        let h = m.shape_hyper.expect("weibull baseline has a shape hyper");
        let scale = tmarginal(&hyper_marginal(tp, h)?, Transform::ExpNegate)?;
        rows.push(zmarginal(&format!("Gumbel (scale)_S{}", si + 1), &scale)?);
    }
    Ok(rows)
}

/// One step curve: value per baseline interval with credible bounds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    /// Left cutpoint of each interval.
    pub t: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Baseline risk curves for a piecewise-constant submodel: the marginal of
/// exp(intercept + rw_j) per interval and stratum. With `log10` the curve is
/// reported on the log10 scale instead.
pub fn baseline_curve(
    a: &Assembled,
    tp: &ThetaPosterior,
    surv_index: usize,
    log10: bool,
) -> Result<Vec<Curve>> {
    let m = &a.meta.surv[surv_index];
    if m.baseline.is_parametric() {
        return Err(Error::Unsupported(
            "baseline_curve requires a piecewise (rw1/rw2) baseline".into(),
        ));
    }
    let cuts = m.cutpoints.as_ref().expect("piecewise baseline has cutpoints");
    let n = a.model.latent_dim();
    let mut curves = Vec::new();
    for (label, bi) in &m.rw_blocks {
        let intercept = m
            .intercepts
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, i)| *i)
            .unwrap_or(m.intercepts[0].1);
        let off = a.model.block_offset(*bi);
        let size = a.model.blocks[*bi].size;
        let mut curve = Curve {
            name: if label.is_empty() {
                "baseline".to_string()
            } else {
                format!("baseline({label})")
            },
            t: Vec::new(),
            mean: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
        };
        for j in 0..size {
            let mut coef = vec![0.0; n];
            coef[intercept] = 1.0;
            coef[off + j] = 1.0;
            let log_risk = lincomb_marginal(tp, &coef, 0.0)?;
            let out = if log10 {
                tmarginal(
                    &log_risk,
                    Transform::Affine { a: std::f64::consts::LOG10_E, b: 0.0 },
                )?
            } else {
                tmarginal(&log_risk, Transform::Exp)?
            };
            curve.t.push(cuts[j]);
            curve.mean.push(out.mean);
            curve.lower.push(out.quantile(0.025)?);
            curve.upper.push(out.quantile(0.975)?);
        }
        curves.push(curve);
    }
    Ok(curves)
}

/// Posterior-mean latent field: the weight-mixture of conditional modes.
fn latent_mean(tp: &ThetaPosterior) -> Vec<f64> {
    let n = tp.points[0].approx.mode.len();
    let mut mean = vec![0.0; n];
    for p in &tp.points {
        for i in 0..n {
            mean[i] += p.weight * p.approx.mode[i];
        }
    }
    mean
}

/// Posterior mean of the hyperparameters on the internal scale.
fn hyper_mean(tp: &ThetaPosterior) -> Vec<f64> {
    tp.mean()
}

/// Point-estimate hazard of one survival submodel at time `t` for a
/// covariate profile, using posterior means.
fn point_hazard(
    a: &Assembled,
    xmean: &[f64],
    tmean: &[f64],
    surv_index: usize,
    profile: &HashMap<String, f64>,
    t: f64,
    cuts_lookup: &dyn Fn(&[f64], f64) -> usize,
) -> Result<f64> {
    let m = &a.meta.surv[surv_index];
    // Unstratified point estimates; stratified profiles would pick an
    // intercept by label, which none of the target models need.
    let mut eta = xmean[m.intercepts[0].1];
    for (name, idx) in &m.fixed {
        let v = *profile.get(name).ok_or_else(|| {
            Error::Transform(format!("profile is missing covariate '{name}'"))
        })?;
        eta += v * xmean[*idx];
    }
    match m.baseline {
        Baseline::Weibull => {
            let alpha = tmean[m.shape_hyper.unwrap()].exp();
            Ok(alpha * t.powf(alpha - 1.0) * eta.exp())
        }
        Baseline::Exponential => Ok(eta.exp()),
        Baseline::Rw1 | Baseline::Rw2 => {
            let cuts = m.cutpoints.as_ref().unwrap();
            let j = cuts_lookup(cuts, t);
            let off = a.model.block_offset(m.rw_blocks[0].1);
            Ok((eta + xmean[off + j]).exp())
        }
    }
}

fn interval_of(cuts: &[f64], t: f64) -> usize {
    let n = cuts.len() - 1;
    for j in 0..n {
        if t < cuts[j + 1] {
            return j;
        }
    }
    n - 1
}

/// Cumulative incidence functions for a competing-risks fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CifResult {
    pub t: Vec<f64>,
    /// One CIF per cause, ordered like the survival submodels.
    pub cif: Vec<Vec<f64>>,
    /// Overall survival.
    pub surv: Vec<f64>,
}

/// Left-Riemann cumulative incidence with explicit step `delta`:
///   CIF_k(t) = sum_{u < t} h_k(u) S(u) delta,
///   S updated by S <- S (1 - sum_k h_k(u) delta).
/// The discrete scheme conserves sum_k CIF_k(t) + S(t) = 1 exactly.
pub fn cif(
    a: &Assembled,
    tp: &ThetaPosterior,
    profile: &HashMap<String, f64>,
    delta: f64,
    t_max: f64,
) -> Result<CifResult> {
    if delta <= 0.0 || t_max <= 0.0 {
        return Err(Error::Transform("cif requires delta > 0 and t_max > 0".into()));
    }
    let k = a.meta.surv.len();
    if k < 2 {
        return Err(Error::Unsupported("cif requires at least two competing causes".into()));
    }
    let xmean = latent_mean(tp);
    let tmean = hyper_mean(tp);
    let steps = (t_max / delta).ceil() as usize;
    let mut out = CifResult { t: Vec::new(), cif: vec![Vec::new(); k], surv: Vec::new() };
    let mut s = 1.0;
    let mut acc = vec![0.0; k];
    for step in 0..=steps {
        let t = step as f64 * delta;
        out.t.push(t);
        for (c, acc_c) in acc.iter().enumerate() {
            out.cif[c].push(*acc_c);
        }
        out.surv.push(s);
        if step == steps {
            break;
        }
        // Hazards at the left endpoint; clamp the t=0 singularity of
        // shape < 1 Weibull hazards by evaluating at mid-delta there.
        let te = if t == 0.0 { 0.5 * delta } else { t };
        let mut total = 0.0;
        for c in 0..k {
            let h = point_hazard(a, &xmean, &tmean, c, profile, te, &interval_of)?;
            acc[c] += h * s * delta;
            total += h;
        }
        s *= 1.0 - total * delta;
        if s < 0.0 {
            return Err(Error::Transform(
                "cif step too coarse: survival went negative, reduce delta".into(),
            ));
        }
    }
    Ok(out)
}

/// Transition probabilities for the three-state illness-death model
/// (states 1 = healthy, 2 = ill, 3 = dead; submodels ordered 1->2, 1->3,
/// 2->3).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitionProbs {
    pub t: Vec<f64>,
    pub p11: Vec<f64>,
    pub p12: Vec<f64>,
    pub p13: Vec<f64>,
    pub p22: Vec<f64>,
    pub p23: Vec<f64>,
}

/// Compute illness-death transition probabilities on a left-Riemann grid.
///
/// With a clock-forward 2->3 transition, p22(u, t) factorises as
/// p22(t) / p22(u), which turns the p12 integral into a single running sum.
/// With `clock_reset` the 2->3 hazard restarts at entry, so
/// p22(u, t) = exp(-H23(t - u)) and p12 is an explicit convolution.
pub fn transition_probs(
    a: &Assembled,
    tp: &ThetaPosterior,
    profile: &HashMap<String, f64>,
    delta: f64,
    t_max: f64,
    clock_reset: bool,
) -> Result<TransitionProbs> {
    if a.meta.surv.len() != 3 {
        return Err(Error::Unsupported(
            "transition_probs requires exactly three transitions (1->2, 1->3, 2->3)".into(),
        ));
    }
    if delta <= 0.0 || t_max <= 0.0 {
        return Err(Error::Transform("transition_probs requires delta > 0 and t_max > 0".into()));
    }
    let xmean = latent_mean(tp);
    let tmean = hyper_mean(tp);
    let steps = (t_max / delta).ceil() as usize;
    let haz = |c: usize, t: f64| -> Result<f64> {
        let te = if t == 0.0 { 0.5 * delta } else { t };
        point_hazard(a, &xmean, &tmean, c, profile, te, &interval_of)
    };
    // Pre-compute hazards and cumulative hazards on the grid.
    let mut h12 = Vec::with_capacity(steps);
    let mut h13 = Vec::with_capacity(steps);
    let mut h23 = Vec::with_capacity(steps);
    for j in 0..steps {
        let t = j as f64 * delta;
        h12.push(haz(0, t)?);
        h13.push(haz(1, t)?);
        h23.push(haz(2, t)?);
    }
    let cumsum = |h: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(h.len() + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for v in h {
            acc += v * delta;
            out.push(acc);
        }
        out
    };
    let ch12 = cumsum(&h12);
    let ch13 = cumsum(&h13);
    let ch23 = cumsum(&h23);

    let mut out = TransitionProbs {
        t: Vec::new(),
        p11: Vec::new(),
        p12: Vec::new(),
        p13: Vec::new(),
        p22: Vec::new(),
        p23: Vec::new(),
    };
    for j in 0..=steps {
        let t = j as f64 * delta;
        let p11 = (-(ch12[j] + ch13[j])).exp();
        let p22 = (-ch23[j]).exp();
        let p12 = if clock_reset {
            // Explicit convolution: integrand p11(u) h12(u) exp(-H23(t-u)).
            let mut acc = 0.0;
            for (u, h) in h12.iter().enumerate().take(j) {
                let p11u = (-(ch12[u] + ch13[u])).exp();
                acc += p11u * h * (-ch23[j - u]).exp() * delta;
            }
            acc
        } else {
            // Markov clock-forward simplification: p22(u, t) = p22(t)/p22(u).
            let mut acc = 0.0;
            for (u, h) in h12.iter().enumerate().take(j) {
                let p11u = (-(ch12[u] + ch13[u])).exp();
                acc += p11u * h / (-ch23[u]).exp() * delta;
            }
            p22 * acc
        };
        out.t.push(t);
        out.p11.push(p11);
        out.p12.push(p12);
        out.p13.push(1.0 - p11 - p12);
        out.p22.push(p22);
        out.p23.push(1.0 - p22);
    }
    Ok(out)
}

/// Prior and posterior densities of a hyperparameter on a shared
/// internal-scale grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriorPosterior {
    pub name: String,
    pub xs: Vec<f64>,
    pub prior: Vec<f64>,
    pub posterior: Vec<f64>,
}

pub fn prior_vs_posterior(
    a: &Assembled,
    tp: &ThetaPosterior,
    hyper: usize,
) -> Result<PriorPosterior> {
    let decl = &a.model.hypers[hyper];
    let prior = decl.prior.as_ref().ok_or_else(|| Error::Transform(format!(
        "hyperparameter '{}' has no scalar prior (covered by a joint prior)",
        decl.name
    )))?;
    let post = hyper_marginal(tp, hyper)?;
    let mut prior_density = Vec::with_capacity(post.xs.len());
    for &x in &post.xs {
        let ld = prior.log_density(&[x])?;
        prior_density.push(ld.exp());
    }
    Ok(PriorPosterior {
        name: decl.name.clone(),
        xs: post.xs.clone(),
        prior: prior_density,
        posterior: post.density.clone(),
    })
}
