//! Per-row log-likelihoods with first and second derivatives in the linear
//! predictor, covering the GLM families, parametric survival under the full
//! censoring/truncation table, and the mixture-cure likelihood.

use crate::error::{Error, Result};
use crate::priors::LN_2PI;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Log-likelihood value with derivatives in eta.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LikTriple {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl LikTriple {
    fn new(value: f64, d1: f64, d2: f64) -> Self {
        LikTriple { value, d1, d2 }
    }
}

impl std::ops::AddAssign for LikTriple {
    fn add_assign(&mut self, rhs: Self) {
        self.value += rhs.value;
        self.d1 += rhs.d1;
        self.d2 += rhs.d2;
    }
}

impl std::ops::SubAssign for LikTriple {
    fn sub_assign(&mut self, rhs: Self) {
        self.value -= rhs.value;
        self.d1 -= rhs.d1;
        self.d2 -= rhs.d2;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Exact,
    RightCensored,
    LeftCensored,
    IntervalCensored,
}

/// One observation of the censoring/truncation table: observed time(s),
/// event kind, and optional truncation bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvPayload {
    pub time: f64,
    pub time2: Option<f64>,
    pub event: EventKind,
    pub trunc_left: Option<f64>,
    pub trunc_right: Option<f64>,
}

impl SurvPayload {
    pub fn exact(time: f64) -> Self {
        SurvPayload { time, time2: None, event: EventKind::Exact, trunc_left: None, trunc_right: None }
    }

    pub fn right_censored(time: f64) -> Self {
        SurvPayload { time, time2: None, event: EventKind::RightCensored, trunc_left: None, trunc_right: None }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidPayload(msg));
        if !self.time.is_finite() || self.time < 0.0 {
            return fail(format!("time must be finite and >= 0, got {}", self.time));
        }
        if self.event == EventKind::Exact && self.time <= 0.0 {
            return fail("exact event time must be > 0".into());
        }
        match self.event {
            EventKind::IntervalCensored => match self.time2 {
                Some(t2) if t2 > self.time => {}
                Some(t2) => return fail(format!("interval requires time < time2, got [{}, {t2}]", self.time)),
                None => return fail("interval censoring requires time2".into()),
            },
            _ if self.time2.is_some() => {
                return fail("time2 is only valid with interval censoring".into())
            }
            _ => {}
        }
        if let Some(l) = self.trunc_left {
            if l < 0.0 {
                return fail(format!("trunc-left must be >= 0, got {l}"));
            }
            if l >= self.time && l > 0.0 {
                return fail(format!("trunc-left {l} must be below the observed time {}", self.time));
            }
        }
        if let Some(r) = self.trunc_right {
            let l = self.trunc_left.unwrap_or(0.0);
            if r <= l {
                return fail(format!("trunc-right {r} must exceed trunc-left {l}"));
            }
        }
        Ok(())
    }
}

/// log(1 - exp(-u)) for u > 0, as a function of eta when u is proportional
/// to exp(eta): returns (value, d/deta, d2/deta2).
fn log1m_exp_prop(u: f64) -> LikTriple {
    debug_assert!(u > 0.0);
    let value = (-(-u).exp_m1()).ln();
    if u < 1e-5 {
        // Series around u = 0: d1 -> 1 - u/2, d2 -> -u/2 + u^2/6.
        return LikTriple::new(value, 1.0 - 0.5 * u + u * u / 12.0, -0.5 * u + u * u / 6.0);
    }
    let em1 = u.exp_m1();
    let d1 = u / em1;
    let d2 = d1 - u * u * (u.exp()) / (em1 * em1);
    LikTriple::new(value, d1, d2)
}

/// Cumulative hazard exp(eta) * t^alpha; returns 0 at t = 0 for any alpha > 0.
fn cum_hazard(eta: f64, t: f64, alpha: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        eta.exp() * t.powf(alpha)
    }
}

/// Weibull proportional-hazards log-likelihood: h(t) = exp(eta) alpha t^(alpha-1).
///
/// Covers the full censoring table in the numerator and truncation bounds in
/// the denominator.
pub fn loglik_weibull_surv(payload: &SurvPayload, eta: f64, alpha: f64) -> Result<LikTriple> {
    payload.validate()?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidPayload(format!("Weibull shape must be > 0, got {alpha}")));
    }
    let mut out = match payload.event {
        EventKind::Exact => {
            let t = payload.time;
            let lam = cum_hazard(eta, t, alpha);
            LikTriple::new(alpha.ln() + (alpha - 1.0) * t.ln() + eta - lam, 1.0 - lam, -lam)
        }
        EventKind::RightCensored => {
            let lam = cum_hazard(eta, payload.time, alpha);
            LikTriple::new(-lam, -lam, -lam)
        }
        EventKind::LeftCensored => {
            let lam = cum_hazard(eta, payload.time, alpha);
            if lam == 0.0 {
                return Err(Error::InvalidPayload("left-censoring time must be > 0".into()));
            }
            log1m_exp_prop(lam)
        }
        EventKind::IntervalCensored => {
            let a = cum_hazard(eta, payload.time, alpha);
            let b = cum_hazard(eta, payload.time2.unwrap(), alpha);
            let mut tri = log1m_exp_prop(b - a);
            tri += LikTriple::new(-a, -a, -a);
            tri
        }
    };
    // Truncation denominators from the censoring table.
    match (payload.trunc_left, payload.trunc_right) {
        (None, None) => {}
        (Some(l), None) => {
            let lam = cum_hazard(eta, l, alpha);
            // -log S(L) = Lambda(L); exactly zero when L = 0.
            out += LikTriple::new(lam, lam, lam);
        }
        (None, Some(r)) => {
            let lam = cum_hazard(eta, r, alpha);
            out -= log1m_exp_prop(lam);
        }
        (Some(l), Some(r)) => {
            let a = cum_hazard(eta, l, alpha);
            let b = cum_hazard(eta, r, alpha);
            let mut den = log1m_exp_prop(b - a);
            den += LikTriple::new(-a, -a, -a);
            out -= den;
        }
    }
    if !out.value.is_finite() {
        return Err(Error::InvalidPayload(format!(
            "non-finite survival log-likelihood at eta={eta}, alpha={alpha}"
        )));
    }
    Ok(out)
}

/// Exponential survival: Weibull with the shape fixed at 1.
pub fn loglik_exp_surv(payload: &SurvPayload, eta: f64) -> Result<LikTriple> {
    loglik_weibull_surv(payload, eta, 1.0)
}

/// Mixture cure: a cured fraction pi = inv-logit(cure_eta) never experiences
/// the event; the susceptible fraction follows the Weibull PH latency model.
pub fn loglik_cure(payload: &SurvPayload, eta: f64, alpha: f64, cure_eta: f64) -> Result<LikTriple> {
    let pi = 1.0 / (1.0 + (-cure_eta).exp());
    match payload.event {
        EventKind::Exact => {
            let mut tri = loglik_weibull_surv(payload, eta, alpha)?;
            tri.value += (1.0 - pi).ln();
            Ok(tri)
        }
        EventKind::RightCensored => {
            if payload.trunc_left.is_some() || payload.trunc_right.is_some() {
                return Err(Error::Unsupported("truncation is not supported with cure models".into()));
            }
            let lam = cum_hazard(eta, payload.time, alpha);
            // log(pi + (1 - pi) exp(-Lambda))
            let q = (1.0 - pi) * (-lam).exp();
            let m = pi + q;
            let d1 = -q * lam / m;
            let d2 = q * lam * (lam - 1.0) / m - (q * lam / m) * (q * lam / m);
            Ok(LikTriple::new(m.ln(), d1, d2))
        }
        _ => Err(Error::Unsupported(
            "cure likelihood supports exact and right-censored observations only".into(),
        )),
    }
}

/// Poisson with a log-offset folded into eta by the caller: mean exp(eta).
pub fn loglik_poisson(y: f64, eta: f64) -> Result<LikTriple> {
    if y < 0.0 || y.fract() != 0.0 {
        return Err(Error::InvalidPayload(format!("Poisson count must be a nonnegative integer, got {y}")));
    }
    let mu = eta.exp();
    Ok(LikTriple::new(y * eta - mu - ln_gamma(y + 1.0), y - mu, -mu))
}

pub fn loglik_gaussian(y: f64, eta: f64, precision: f64) -> Result<LikTriple> {
    if precision <= 0.0 {
        return Err(Error::InvalidPayload(format!("Gaussian precision must be > 0, got {precision}")));
    }
    let r = y - eta;
    Ok(LikTriple::new(
        0.5 * (precision.ln() - LN_2PI) - 0.5 * precision * r * r,
        precision * r,
        -precision,
    ))
}

/// Gaussian on log(y) with the log-transform Jacobian included.
pub fn loglik_lognormal(y: f64, eta: f64, precision: f64) -> Result<LikTriple> {
    if y <= 0.0 {
        return Err(Error::InvalidPayload(format!("lognormal response must be > 0, got {y}")));
    }
    let mut tri = loglik_gaussian(y.ln(), eta, precision)?;
    tri.value -= y.ln();
    Ok(tri)
}

/// Binomial with logit link; y successes out of `trials`.
pub fn loglik_binomial(y: f64, trials: f64, eta: f64) -> Result<LikTriple> {
    if trials <= 0.0 || y < 0.0 || y > trials {
        return Err(Error::InvalidPayload(format!("binomial requires 0 <= y <= trials, got y={y}, trials={trials}")));
    }
    let p = 1.0 / (1.0 + (-eta).exp());
    // log C(n, y) + y eta - n log(1 + e^eta); the softplus written stably.
    let softplus = if eta > 30.0 { eta } else { eta.exp().ln_1p() };
    let c = ln_gamma(trials + 1.0) - ln_gamma(y + 1.0) - ln_gamma(trials - y + 1.0);
    Ok(LikTriple::new(
        c + y * eta - trials * softplus,
        y - trials * p,
        -trials * p * (1.0 - p),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd_check<F: Fn(f64) -> f64>(f: F, eta: f64, tri: &LikTriple) {
        let h = 1e-5;
        let d1 = (f(eta + h) - f(eta - h)) / (2.0 * h);
        let d2 = (f(eta + h) - 2.0 * f(eta) + f(eta - h)) / (h * h);
        let scale1 = tri.d1.abs().max(1.0);
        let scale2 = tri.d2.abs().max(1.0);
        assert!((d1 - tri.d1).abs() / scale1 < 1e-4, "d1 {} vs fd {d1}", tri.d1);
        assert!((d2 - tri.d2).abs() / scale2 < 1e-3, "d2 {} vs fd {d2}", tri.d2);
    }

    #[test]
    fn weibull_unit_cases() {
        let tri = loglik_weibull_surv(&SurvPayload::exact(1.0), 0.0, 1.0).unwrap();
        assert_relative_eq!(tri.value, -1.0, epsilon = 1e-12);
        let tri = loglik_weibull_surv(&SurvPayload::right_censored(2.0), 0.0, 1.0).unwrap();
        assert_relative_eq!(tri.value, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn interval_censoring_direct_evaluation() {
        let payload = SurvPayload {
            time: 1.0,
            time2: Some(2.0),
            event: EventKind::IntervalCensored,
            trunc_left: None,
            trunc_right: None,
        };
        let tri = loglik_weibull_surv(&payload, 0.0, 1.0).unwrap();
        let expected = ((-1.0f64).exp() - (-2.0f64).exp()).ln();
        assert_relative_eq!(tri.value, expected, epsilon = 1e-12);
        assert_relative_eq!(tri.value, -1.4586751453870818, epsilon = 1e-6);
    }

    #[test]
    fn left_truncation_subtracts_denominator() {
        let payload = SurvPayload { trunc_left: Some(1.0), ..SurvPayload::exact(2.0) };
        let tri = loglik_weibull_surv(&payload, 0.0, 1.0).unwrap();
        // -2 - (-1) = -1 (h(2) = 1 contributes log 1 = 0 under exp baseline).
        assert_relative_eq!(tri.value, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_left_truncation_is_bit_identical() {
        let base = SurvPayload::exact(1.7);
        let trunc = SurvPayload { trunc_left: Some(0.0), ..base };
        for eta in [-1.0, 0.3, 2.0] {
            let a = loglik_weibull_surv(&base, eta, 1.4).unwrap();
            let b = loglik_weibull_surv(&trunc, eta, 1.4).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn exponential_equals_weibull_shape_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let t: f64 = rng.gen_range(0.1..5.0);
            let eta: f64 = rng.gen_range(-2.0..2.0);
            let payload = match rng.gen_range(0..4) {
                0 => SurvPayload::exact(t),
                1 => SurvPayload::right_censored(t),
                2 => SurvPayload { event: EventKind::LeftCensored, ..SurvPayload::exact(t) },
                _ => SurvPayload {
                    time2: Some(t + rng.gen_range(0.1..2.0)),
                    event: EventKind::IntervalCensored,
                    ..SurvPayload::exact(t)
                },
            };
            let a = loglik_exp_surv(&payload, eta).unwrap();
            let b = loglik_weibull_surv(&payload, eta, 1.0).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn left_censored_direct_evaluation() {
        let payload = SurvPayload { event: EventKind::LeftCensored, ..SurvPayload::exact(1.0) };
        let tri = loglik_exp_surv(&payload, 0.0).unwrap();
        assert_relative_eq!(tri.value, (1.0 - (-1.0f64).exp()).ln(), epsilon = 1e-12);
        assert_relative_eq!(tri.value, -0.45867514538708193, epsilon = 1e-6);
    }

    #[test]
    fn censoring_limits_consistent() {
        // interval -> right-censored as time2 -> inf; -> left-censored as time -> 0.
        let eta = 0.2;
        let alpha = 1.3;
        let right = loglik_weibull_surv(&SurvPayload::right_censored(1.0), eta, alpha).unwrap();
        let iv = loglik_weibull_surv(
            &SurvPayload { time2: Some(1e8), event: EventKind::IntervalCensored, ..SurvPayload::exact(1.0) },
            eta,
            alpha,
        )
        .unwrap();
        assert!((right.value - iv.value).abs() < 1e-6);
        let left = loglik_weibull_surv(
            &SurvPayload { event: EventKind::LeftCensored, ..SurvPayload::exact(1.0) },
            eta,
            alpha,
        )
        .unwrap();
        let iv2 = loglik_weibull_surv(
            &SurvPayload {
                time: 1e-10,
                time2: Some(1.0),
                event: EventKind::IntervalCensored,
                trunc_left: None,
                trunc_right: None,
            },
            eta,
            alpha,
        )
        .unwrap();
        assert!((left.value - iv2.value).abs() < 1e-6);
    }

    #[test]
    fn glm_unit_cases() {
        assert_relative_eq!(loglik_poisson(0.0, 0.0).unwrap().value, -1.0, epsilon = 1e-12);
        assert_relative_eq!(loglik_binomial(1.0, 1.0, 0.0).unwrap().value, 0.5f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(
            loglik_gaussian(1.0, 0.0, 1.0).unwrap().value,
            -0.5 - 0.5 * LN_2PI,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cure_degenerate_mixtures() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let t: f64 = rng.gen_range(0.1..5.0);
            let eta: f64 = rng.gen_range(-2.0..2.0);
            let alpha: f64 = rng.gen_range(0.5..2.5);
            let payload = if rng.gen_bool(0.5) { SurvPayload::exact(t) } else { SurvPayload::right_censored(t) };
            // pi = 0 reduces to the plain Weibull likelihood.
            let cure = loglik_cure(&payload, eta, alpha, -745.0).unwrap();
            let weib = loglik_weibull_surv(&payload, eta, alpha).unwrap();
            assert_relative_eq!(cure.value, weib.value, epsilon = 1e-10);
            assert_relative_eq!(cure.d1, weib.d1, epsilon = 1e-10);
        }
        // pi = 1 and right-censored: certainty of cure, zero log-likelihood.
        let tri = loglik_cure(&SurvPayload::right_censored(3.0), 0.5, 1.2, 745.0).unwrap();
        assert_relative_eq!(tri.value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let eta: f64 = rng.gen_range(-1.5..1.5);
            let t: f64 = rng.gen_range(0.2..4.0);
            let alpha: f64 = rng.gen_range(0.6..2.2);

            let p = SurvPayload::exact(t);
            fd_check(|e| loglik_weibull_surv(&p, e, alpha).unwrap().value, eta, &loglik_weibull_surv(&p, eta, alpha).unwrap());

            let p = SurvPayload { event: EventKind::LeftCensored, ..SurvPayload::exact(t) };
            fd_check(|e| loglik_weibull_surv(&p, e, alpha).unwrap().value, eta, &loglik_weibull_surv(&p, eta, alpha).unwrap());

            let p = SurvPayload {
                time2: Some(t + 1.0),
                event: EventKind::IntervalCensored,
                trunc_left: Some(t * 0.5),
                trunc_right: Some(t + 9.0),
                ..SurvPayload::exact(t)
            };
            fd_check(|e| loglik_weibull_surv(&p, e, alpha).unwrap().value, eta, &loglik_weibull_surv(&p, eta, alpha).unwrap());

            let p = SurvPayload::right_censored(t);
            let ce: f64 = rng.gen_range(-2.0..2.0);
            fd_check(|e| loglik_cure(&p, e, alpha, ce).unwrap().value, eta, &loglik_cure(&p, eta, alpha, ce).unwrap());

            fd_check(|e| loglik_poisson(3.0, e).unwrap().value, eta, &loglik_poisson(3.0, eta).unwrap());
            fd_check(|e| loglik_binomial(2.0, 5.0, e).unwrap().value, eta, &loglik_binomial(2.0, 5.0, eta).unwrap());
            fd_check(|e| loglik_lognormal(1.5, e, 2.0).unwrap().value, eta, &loglik_lognormal(1.5, eta, 2.0).unwrap());
        }
    }
}
