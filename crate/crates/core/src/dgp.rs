//! Synthetic survival cohorts with closed-form ground truth.
//!
//! Covariates `x1..xD` are Uniform(0,1) except `x4 ~ Bernoulli(0.5)`.
//! Treatment follows odds `0.25 + beta (x1 + x2)`. Event times are
//! exponential with rate
//!
//! ```text
//! tau(a, x) = (a (x1 + 3 x5 + (1 - 3 x2)^2 + x3 x4) + x1 + ... + xD) / r
//! ```
//!
//! and censoring times are Weibull with shape `1 + 0.2 x1` and scale 50.
//! Both are ceiled onto the integer period grid before comparison; a tie
//! counts as an event.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;
use thiserror::Error;

use crate::data::{Cohort, Subject};
use crate::math::{mean, Matrix};
use crate::rng::{self, uniform, uniform_open0};

/// Contributing features of the heterogeneous effect (`x1..x5`, zero-based).
pub const TRUE_FEATURES: [usize; 5] = [0, 1, 2, 3, 4];
/// Monte Carlo sample size used for rate calibration.
pub const CALIBRATION_DRAWS: usize = 200_000;
/// Seed of the calibration sample, independent of any run seed.
pub const CALIBRATION_SEED: u64 = 0x5EED_CA1B;
/// Accepted absolute deviation of the calibrated event rate.
pub const CALIBRATION_TOLERANCE: f64 = 0.002;
pub const R_BRACKET: (f64, f64) = (0.1, 10_000.0);
pub const CENSOR_SCALE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DgpError {
    #[error("covariate vector has {0} entries, at least 5 are required")]
    Dimension(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpParams {
    pub n: usize,
    pub d: usize,
    pub beta: f64,
    /// Survival-scale denominator; calibrated from `target_rate` when absent.
    pub r: Option<f64>,
    /// Event rate (events within the horizon per subject) used to calibrate `r`.
    pub target_rate: Option<f64>,
    pub horizon: u32,
    pub seed: u64,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self { n: 3000, d: 10, beta: 0.5, r: None, target_rate: Some(0.10), horizon: 12, seed: 1 }
    }
}

impl DgpParams {
    pub fn validate(&self) -> Result<(), DgpError> {
        let bad = |m: String| Err(DgpError::InvalidParams(m));
        if self.n < 1 {
            return bad("n must be at least 1".into());
        }
        if self.d < 6 {
            return bad(format!("d = {} but at least 6 covariates are required", self.d));
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta = {} must be finite and non-negative", self.beta));
        }
        match (self.r, self.target_rate) {
            (Some(r), _) if !(r.is_finite() && r > 0.0) => bad(format!("r = {r} must be positive")),
            (_, Some(t)) if !(t > 0.0 && t < 1.0) => bad(format!("target rate {t} must lie in (0, 1)")),
            (None, None) => bad("either r or target_rate is required".into()),
            _ => Ok(()),
        }
    }
}

/// Heterogeneous part of the treated hazard numerator.
#[inline]
fn effect_term(x: &[f64]) -> f64 {
    let q = 1.0 - 3.0 * x[1];
    x[0] + 3.0 * x[4] + q * q + x[2] * x[3]
}

/// Event-time rate `tau(a, x)`.
pub fn tau(treated: bool, x: &[f64], r: f64) -> Result<f64, DgpError> {
    if x.len() < 5 {
        return Err(DgpError::Dimension(x.len()));
    }
    let base: f64 = x.iter().sum();
    let het = if treated { effect_term(x) } else { 0.0 };
    Ok((het + base) / r)
}

/// `S(t | a, x) = exp(-t tau(a, x))`.
pub fn true_survival(treated: bool, x: &[f64], t: f64, r: f64) -> Result<f64, DgpError> {
    Ok((-t * tau(treated, x, r)?).exp())
}

/// Individual effect `S(t | 1, x) - S(t | 0, x)`.
pub fn true_ite(x: &[f64], t: f64, r: f64) -> Result<f64, DgpError> {
    Ok(true_survival(true, x, t, r)? - true_survival(false, x, t, r)?)
}

/// `P(A = 1 | x)` from odds `0.25 + beta (x1 + x2)`.
pub fn true_propensity(x: &[f64], beta: f64) -> f64 {
    let odds = 0.25 + beta * (x[0] + x[1]);
    odds / (1.0 + odds)
}

/// Weibull(shape, scale) CDF.
pub fn weibull_cdf(t: f64, shape: f64, scale: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        1.0 - (-(t / scale).powf(shape)).exp()
    }
}

/// Latent draws for one subject, before `r` is applied.
#[derive(Debug, Clone)]
struct Latent {
    x: Vec<f64>,
    treated: bool,
    /// Unit-rate exponential; the event time is `exp1 / tau`.
    exp1: f64,
    censor: f64,
}

fn draw_covariates(rng: &mut rng::StreamRng, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let u = uniform(rng);
            if j == 3 {
                if u < 0.5 {
                    1.0
                } else {
                    0.0
                }
            } else {
                u
            }
        })
        .collect()
}

fn draw_latent(seed: u64, index: u64, d: usize, beta: f64) -> Latent {
    let mut rng = rng::stream(seed, index);
    let x = draw_covariates(&mut rng, d);
    let treated = uniform(&mut rng) < true_propensity(&x, beta);
    let exp1 = -uniform_open0(&mut rng).ln();
    let shape = 1.0 + 0.2 * x[0];
    let censor = CENSOR_SCALE * (-uniform_open0(&mut rng).ln()).powf(1.0 / shape);
    Latent { x, treated, exp1, censor }
}

/// Continuous event time for rate `tau`; infinite when `tau = 0`.
#[inline]
fn event_time(exp1: f64, tau: f64) -> f64 {
    if tau > 0.0 {
        exp1 / tau
    } else {
        f64::INFINITY
    }
}

/// Observed `(period, event)` after ceiling both times onto the grid.
fn observe(event_t: f64, censor_t: f64) -> (u32, bool) {
    let ce = event_t.ceil();
    let cc = censor_t.ceil();
    let event = ce <= cc;
    let t = if event { ce } else { cc };
    let t = t.max(1.0).min(u32::MAX as f64) as u32;
    (t, event)
}

/// Ground truth retained next to a generated cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthHandle {
    pub params: DgpParams,
    /// Resolved survival-scale denominator.
    pub r: f64,
    /// Continuous `(event time, censoring time)` per subject.
    pub latent: Vec<(f64, f64)>,
}

impl TruthHandle {
    /// Truth for an arbitrary cohort sharing this generator's `r`.
    pub fn from_r(params: DgpParams, r: f64) -> Self {
        Self { params, r, latent: Vec::new() }
    }

    pub fn survival(&self, treated: bool, x: &[f64], t: f64) -> f64 {
        true_survival(treated, x, t, self.r).expect("cohort dimension checked at generation")
    }

    pub fn ite(&self, x: &[f64], t: f64) -> f64 {
        self.survival(true, x, t) - self.survival(false, x, t)
    }

    /// `n x horizon` matrix of true individual effects at `t = 1..=horizon`.
    pub fn ite_matrix(&self, cohort: &Cohort) -> Matrix {
        let h = cohort.horizon() as usize;
        let mut m = Matrix::zeros(cohort.len(), h);
        for (i, s) in cohort.subjects().iter().enumerate() {
            for t in 0..h {
                m.set(i, t, self.ite(&s.x, (t + 1) as f64));
            }
        }
        m
    }

    /// Sample-average true effect per period over the given subjects.
    pub fn ate_curve(&self, cohort: &Cohort, members: &[usize]) -> Vec<f64> {
        let h = cohort.horizon() as usize;
        (1..=h)
            .map(|t| {
                let v: Vec<f64> = members.iter().map(|&i| self.ite(&cohort.subject(i).x, t as f64)).collect();
                mean(&v)
            })
            .collect()
    }

    pub fn true_features(&self) -> Vec<usize> {
        TRUE_FEATURES.to_vec()
    }
}

pub fn feature_names(d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("x{k}")).collect()
}

/// Resolves `r` (calibrating when needed) and draws the cohort.
pub fn generate_cohort(params: &DgpParams) -> Result<(Cohort, TruthHandle), DgpError> {
    params.validate()?;
    let r = match params.r {
        Some(r) => r,
        None => calibrate_rate(params.target_rate.expect("validated"), params)?,
    };
    let seed = rng::derive_seed(params.seed, rng::label::DGP);
    let mut subjects = Vec::with_capacity(params.n);
    let mut latent = Vec::with_capacity(params.n);
    for i in 0..params.n {
        let l = draw_latent(seed, i as u64, params.d, params.beta);
        let rate = tau(l.treated, &l.x, r)?;
        let te = event_time(l.exp1, rate);
        let (time, event) = observe(te, l.censor);
        latent.push((te, l.censor));
        subjects.push(Subject { id: format!("{}", i + 1), x: l.x, treated: l.treated, time, event });
    }
    let cohort = Cohort::from_subjects(subjects, feature_names(params.d), params.horizon)
        .map_err(|e| DgpError::InvalidParams(format!("{e}")))?;
    let mut resolved = params.clone();
    resolved.r = Some(r);
    Ok((cohort, TruthHandle { params: resolved, r, latent }))
}

/// Pre-drawn calibration sample; only `r` varies between evaluations.
struct CalibrationSample {
    numerators: Vec<f64>,
    exp1: Vec<f64>,
    censor_period: Vec<f64>,
    horizon: f64,
}

impl CalibrationSample {
    fn new(params: &DgpParams) -> Self {
        let mut numerators = Vec::with_capacity(CALIBRATION_DRAWS);
        let mut exp1 = Vec::with_capacity(CALIBRATION_DRAWS);
        let mut censor_period = Vec::with_capacity(CALIBRATION_DRAWS);
        for i in 0..CALIBRATION_DRAWS {
            let l = draw_latent(CALIBRATION_SEED, i as u64, params.d, params.beta);
            let het = if l.treated { effect_term(&l.x) } else { 0.0 };
            numerators.push(het + l.x.iter().sum::<f64>());
            exp1.push(l.exp1);
            censor_period.push(l.censor.ceil());
        }
        Self { numerators, exp1, censor_period, horizon: params.horizon as f64 }
    }

    /// Fraction of subjects with an event observed within the horizon.
    fn event_rate(&self, r: f64) -> f64 {
        let mut events = 0usize;
        for i in 0..self.numerators.len() {
            let te = event_time(self.exp1[i], self.numerators[i] / r).ceil();
            if te <= self.censor_period[i] && te <= self.horizon {
                events += 1;
            }
        }
        events as f64 / self.numerators.len() as f64
    }
}

/// Bisection on `log r` until the Monte Carlo event rate is within
/// [`CALIBRATION_TOLERANCE`] of `target_rate`.
pub fn calibrate_rate(target_rate: f64, params: &DgpParams) -> Result<f64, DgpError> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(DgpError::Calibration(format!("target rate {target_rate} outside (0, 1)")));
    }
    let sample = CalibrationSample::new(params);
    let (mut lo, mut hi) = R_BRACKET;
    let rate_lo = sample.event_rate(lo);
    let rate_hi = sample.event_rate(hi);
    // The rate decreases in r; the tolerance band must sit strictly inside the bracket.
    if !(rate_lo > target_rate + CALIBRATION_TOLERANCE && rate_hi < target_rate - CALIBRATION_TOLERANCE) {
        return Err(DgpError::Calibration(format!(
            "target {target_rate} not bracketed: rate({lo}) = {rate_lo}, rate({hi}) = {rate_hi}"
        )));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        let rate = sample.event_rate(mid);
        if (rate - target_rate).abs() <= CALIBRATION_TOLERANCE {
            return Ok(mid);
        }
        if rate > target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(DgpError::Calibration(format!("bisection did not reach tolerance for target {target_rate}")))
}

/// Monte Carlo population ATE at `t = 1..=horizon` over `draws` fresh covariate vectors.
pub fn monte_carlo_ate(d: usize, r: f64, horizon: u32, draws: usize, seed: u64) -> Result<Vec<f64>, DgpError> {
    if d < 5 {
        return Err(DgpError::Dimension(d));
    }
    let mut acc = alloc::vec![0.0; horizon as usize];
    for i in 0..draws {
        let mut rng = rng::stream(seed, i as u64);
        let x = draw_covariates(&mut rng, d);
        for (k, slot) in acc.iter_mut().enumerate() {
            *slot += true_ite(&x, (k + 1) as f64, r)?;
        }
    }
    Ok(acc.into_iter().map(|v| v / draws as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Kolmogorov-Smirnov statistic of a sample against a continuous CDF.
    fn ks_stat(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        crate::math::sort_floats(&mut xs);
        let n = xs.len() as f64;
        let mut d: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let f = cdf(x);
            d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
        }
        d
    }

    /// Asymptotic KS critical value at alpha = 0.001.
    fn ks_crit(n: usize) -> f64 {
        1.949 / (n as f64).sqrt()
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau(false, &[0.0; 10], 3.0).unwrap(), 0.0);
        assert_relative_eq!(tau(true, &[0.0; 10], 10.0).unwrap(), 0.1, epsilon = 1e-15);
        let mut x = [0.0; 10];
        x[0] = 1.0;
        x[4] = 1.0;
        x[1] = 1.0 / 3.0;
        x[2] = 1.0;
        x[3] = 1.0;
        assert_relative_eq!(tau(true, &x, 1.0).unwrap(), 1.0 + 3.0 + 0.0 + 1.0 + 13.0 / 3.0, epsilon = 1e-12);
        assert_eq!(tau(true, &[0.0; 4], 1.0), Err(DgpError::Dimension(4)));
    }

    #[test]
    fn survival_examples() {
        assert_eq!(true_survival(false, &[0.0; 10], 12.0, 5.0).unwrap(), 1.0);
        assert_relative_eq!(true_survival(true, &[0.0; 10], 1.0, 10.0).unwrap(), 0.904_837_418, epsilon = 1e-9);
        assert_relative_eq!(true_ite(&[0.0; 10], 1.0, 10.0).unwrap(), (-0.1f64).exp() - 1.0, epsilon = 1e-15);
        assert_eq!(true_ite(&[0.0; 10], 0.0, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn propensity_examples() {
        let mut x = [0.3; 10];
        assert_relative_eq!(true_propensity(&x, 0.0), 0.2, epsilon = 1e-15);
        x[0] = 1.0;
        x[1] = 1.0;
        assert_relative_eq!(true_propensity(&x, 0.5), 1.25 / 2.25, epsilon = 1e-15);
        assert_relative_eq!(true_propensity(&x, 2.0), 4.25 / 5.25, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn survival_is_monotone_and_ite_nonpositive(
            x in prop::collection::vec(0.0f64..1.0, 10),
            t in 0.0f64..30.0,
            r in 0.5f64..5000.0,
            treated in any::<bool>(),
        ) {
            let s0 = true_survival(treated, &x, t, r).unwrap();
            let s1 = true_survival(treated, &x, t + 1.0, r).unwrap();
            prop_assert!(s1 <= s0);
            prop_assert!(s0 > 0.0 && s0 <= 1.0);
            prop_assert!(true_ite(&x, t, r).unwrap() <= 0.0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let p = DgpParams { n: 500, r: Some(300.0), target_rate: None, seed: 42, ..Default::default() };
        let (a, ta) = generate_cohort(&p).unwrap();
        let (b, tb) = generate_cohort(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate_cohort(&DgpParams { seed: 43, ..p }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_beta_treated_fraction() {
        let n = 20_000;
        let p = DgpParams { n, beta: 0.0, r: Some(300.0), target_rate: None, seed: 3, ..Default::default() };
        let (c, _) = generate_cohort(&p).unwrap();
        let frac = c.treated_count() as f64 / n as f64;
        let se = (0.2 * 0.8 / n as f64).sqrt();
        assert!((frac - 0.2).abs() < 3.0 * se, "treated fraction {frac}");
    }

    #[test]
    fn marginal_laws_pass_ks() {
        let n = 100_000;
        let p = DgpParams { n, d: 6, beta: 0.5, r: Some(300.0), target_rate: None, seed: 8, horizon: 12 };
        let (c, truth) = generate_cohort(&p).unwrap();
        for j in [0usize, 1, 2, 4, 5] {
            let col: Vec<f64> = c.subjects().iter().map(|s| s.x[j]).collect();
            assert!(ks_stat(col, |v| v.clamp(0.0, 1.0)) < ks_crit(n), "x{} not uniform", j + 1);
        }
        let x4 = c.subjects().iter().filter(|s| s.x[3] == 1.0).count() as f64 / n as f64;
        assert!((x4 - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
        assert!(c.subjects().iter().all(|s| s.x[3] == 0.0 || s.x[3] == 1.0));

        // probability-integral transforms of the latent times are Uniform(0,1)
        let pit_c: Vec<f64> = c
            .subjects()
            .iter()
            .zip(&truth.latent)
            .map(|(s, &(_, ct))| weibull_cdf(ct, 1.0 + 0.2 * s.x[0], CENSOR_SCALE))
            .collect();
        assert!(ks_stat(pit_c, |v| v) < ks_crit(n), "censoring law");
        let pit_t: Vec<f64> = c
            .subjects()
            .iter()
            .zip(&truth.latent)
            .map(|(s, &(te, _))| 1.0 - (-te * tau(s.treated, &s.x, truth.r).unwrap()).exp())
            .collect();
        assert!(ks_stat(pit_t, |v| v) < ks_crit(n), "event-time law");

        // treatment: observed share matches the mean propensity
        let expected = mean(&c.subjects().iter().map(|s| true_propensity(&s.x, 0.5)).collect::<Vec<_>>());
        let observed = c.treated_count() as f64 / n as f64;
        assert!((observed - expected).abs() < 3.0 * (expected * (1.0 - expected) / n as f64).sqrt());

        // observed period and indicator follow the ceiled latent times
        for (s, &(te, ct)) in c.subjects().iter().zip(&truth.latent).take(1000) {
            let (t, ev) = observe(te, ct);
            assert_eq!((s.time, s.event), (t, ev));
            assert_eq!(s.event, te.ceil() <= ct.ceil());
        }
    }

    #[test]
    fn calibration_hits_target_and_is_monotone() {
        let base = DgpParams { n: 100_000, r: None, target_rate: Some(0.10), ..Default::default() };
        let r10 = calibrate_rate(0.10, &base).unwrap();
        let (c, _) = generate_cohort(&DgpParams { r: Some(r10), seed: 77, ..base.clone() }).unwrap();
        assert!((c.event_rate() - 0.10).abs() <= 0.01, "rate {}", c.event_rate());
        let r_low = calibrate_rate(0.025, &base).unwrap();
        let r_high = calibrate_rate(0.20, &base).unwrap();
        assert!(r_low > r_high);
        assert!(matches!(calibrate_rate(0.9999, &base), Err(DgpError::Calibration(_))));
    }

    #[test]
    fn params_validation() {
        assert!(DgpParams { d: 5, ..Default::default() }.validate().is_err());
        assert!(DgpParams { target_rate: Some(1.0), ..Default::default() }.validate().is_err());
        assert!(DgpParams { r: Some(-1.0), ..Default::default() }.validate().is_err());
        assert!(DgpParams { r: None, target_rate: None, ..Default::default() }.validate().is_err());
        assert!(DgpParams::default().validate().is_ok());
    }
}
