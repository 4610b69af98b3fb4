//! Propensity and censoring nuisance models, one-step targeting of the
//! arm-specific survival curves, and simultaneous confidence bands.
//!
//! Arrays indexed by arm use `0` for control and `1` for treated.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;
use thiserror::Error;

use crate::data::{expand_censoring_process, Cohort};
use crate::learners::{assign_folds, fit_super_learner, Design, LearnerError, LearnerSpec};
use crate::math::{clamp, logit, mean, probit, psd_factor, sigmoid, sort_floats, Matrix};
use crate::rng;
use crate::survival::{arm_name, hazard_roles, hazard_row_into, hazards_from_survival, survival_from_hazards, EffectSurface, DEFAULT_FOLDS, HAZARD_FLOOR};

pub const G_BOUNDS: (f64, f64) = (0.01, 0.99);
pub const HC_BOUNDS: (f64, f64) = (1e-6, 0.99);
/// Share of clamped propensities above which a positivity warning is raised.
pub const POSITIVITY_SHARE: f64 = 0.05;
pub const BAND_DRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TmleError {
    #[error("the {0} arm has no subjects")]
    EmptyArm(&'static str),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite update in the {arm} arm at step {step}")]
    NonFiniteUpdate { arm: &'static str, step: usize },
    #[error("invalid targeting settings: {0}")]
    InvalidSettings(&'static str),
    #[error("targeting needs at least 2 subjects, got {0}")]
    TooFewMembers(usize),
    #[error("band level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
}

#[inline]
fn arm(treated: bool) -> usize {
    treated as usize
}

/// Fitted propensity and censoring models, evaluated for every subject.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFits {
    /// Clamped `P(A = 1 | x_i)`.
    pub g: Vec<f64>,
    /// Clamped censoring hazards `hc(t | a, x_i)`, n x horizon per arm.
    pub hc: [Matrix; 2],
    /// Censoring survivor `G(t | a, x_i)`, n x horizon per arm.
    pub gc: [Matrix; 2],
    /// Share of propensity predictions that hit a clamp bound.
    pub clamped_share: f64,
    pub positivity_warning: bool,
}

impl NuisanceFits {
    /// Builds the fits from raw values, applying the clamps.
    pub fn from_values(g: Vec<f64>, hc_treated: Matrix, hc_control: Matrix) -> Result<Self, TmleError> {
        let n = g.len();
        for m in [&hc_treated, &hc_control] {
            if m.rows() != n {
                return Err(TmleError::Dimension { expected: n, got: m.rows() });
            }
        }
        if hc_treated.cols() != hc_control.cols() {
            return Err(TmleError::Dimension { expected: hc_treated.cols(), got: hc_control.cols() });
        }
        let clamped = g.iter().filter(|&&p| p <= G_BOUNDS.0 || p >= G_BOUNDS.1).count();
        let clamped_share = if n == 0 { 0.0 } else { clamped as f64 / n as f64 };
        let positivity_warning = clamped_share > POSITIVITY_SHARE;
        if positivity_warning {
            log::warn!("positivity: {:.1}% of propensity scores hit the clamps", 100.0 * clamped_share);
        }
        let g = g.into_iter().map(|p| clamp(p, G_BOUNDS.0, G_BOUNDS.1)).collect();
        let prep = |mut hc: Matrix| {
            let mut gc = Matrix::zeros(hc.rows(), hc.cols());
            for i in 0..hc.rows() {
                let mut s = 1.0;
                for t in 0..hc.cols() {
                    let h = clamp(hc.get(i, t), HC_BOUNDS.0, HC_BOUNDS.1);
                    hc.set(i, t, h);
                    s *= 1.0 - h;
                    gc.set(i, t, s);
                }
            }
            (hc, gc)
        };
        let (h1, g1) = prep(hc_treated);
        let (h0, g0) = prep(hc_control);
        Ok(Self { g, hc: [h0, h1], gc: [g0, g1], clamped_share, positivity_warning })
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn horizon(&self) -> u32 {
        self.hc[0].cols() as u32
    }

    /// `P(A = a | x_i)`.
    pub fn g_arm(&self, i: usize, treated: bool) -> f64 {
        if treated {
            self.g[i]
        } else {
            1.0 - self.g[i]
        }
    }

    /// `G(s - 1 | a, x_i)`, equal to 1 at `s = 1`.
    pub fn gc_before(&self, i: usize, treated: bool, s: u32) -> f64 {
        if s <= 1 {
            1.0
        } else {
            self.gc[arm(treated)].get(i, s as usize - 2)
        }
    }
}

/// Fits the propensity model on `X -> A` and the censoring hazard on the
/// censoring person-period expansion with `(X, A)` as covariates.
pub fn fit_nuisances(cohort: &Cohort, specs: &[LearnerSpec], seed: u64) -> Result<NuisanceFits, TmleError> {
    let n = cohort.len();
    let treated = cohort.treated_count();
    if treated == 0 {
        return Err(TmleError::EmptyArm(arm_name(true)));
    }
    if treated == n {
        return Err(TmleError::EmptyArm(arm_name(false)));
    }
    let seed = rng::derive_seed(seed, rng::label::NUISANCE);
    let folds = assign_folds(n, DEFAULT_FOLDS, rng::derive_seed(seed, rng::label::FOLDS));

    let x = cohort.covariates();
    let a: Vec<f64> = cohort.subjects().iter().map(|s| if s.treated { 1.0 } else { 0.0 }).collect();
    let g_model = fit_super_learner(specs, &Design::covariates(x.clone()), &a, &folds, DEFAULT_FOLDS, rng::derive_seed(seed, 0))?;
    let g: Vec<f64> = x.iter_rows().map(|r| g_model.predict(r)).collect();

    let horizon = cohort.horizon();
    let d = cohort.dim();
    let width = d + 2 + horizon as usize;
    let table = expand_censoring_process(cohort, horizon);
    let mut design = Matrix::zeros(table.len(), width);
    let mut y = Vec::with_capacity(table.len());
    let mut fold_of = Vec::with_capacity(table.len());
    let mut xa = vec![0.0; d + 1];
    for (k, r) in table.rows.iter().enumerate() {
        let s = cohort.subject(r.subject);
        xa[..d].copy_from_slice(&s.x);
        xa[d] = a[r.subject];
        hazard_row_into(&xa, r.t, horizon, design.row_mut(k));
        y.push(if r.event { 1.0 } else { 0.0 });
        fold_of.push(folds[r.subject]);
    }
    let design = Design { x: design, roles: hazard_roles(d + 1, horizon) };
    let hc_model = fit_super_learner(specs, &design, &y, &fold_of, DEFAULT_FOLDS, rng::derive_seed(seed, 1))?;
    for (learner, reason) in g_model.dropped.iter().chain(&hc_model.dropped) {
        log::warn!("nuisance model dropped {learner}: {reason}");
    }

    let mut hc = [Matrix::zeros(n, horizon as usize), Matrix::zeros(n, horizon as usize)];
    let mut row = vec![0.0; width];
    for (i, s) in cohort.subjects().iter().enumerate() {
        xa[..d].copy_from_slice(&s.x);
        for (k, m) in hc.iter_mut().enumerate() {
            xa[d] = k as f64;
            for t in 1..=horizon {
                hazard_row_into(&xa, t, horizon, &mut row);
                m.set(i, t as usize - 1, hc_model.predict(&row));
            }
        }
    }
    let [hc0, hc1] = hc;
    NuisanceFits::from_values(g, hc1, hc0)
}

/// `H_{a,t}(s) = -1[A_i = a] / (g_a(x_i) G(s-1 | a, x_i)) * S(t | a, x_i) / S(s | a, x_i)`.
///
/// `curves` holds `S(. | a, x_i)` with rows aligned to the cohort.
pub fn clever_covariate(cohort: &Cohort, fits: &NuisanceFits, curves: &Matrix, i: usize, treated: bool, s: u32, t: u32) -> f64 {
    assert!(1 <= s && s <= t && t as usize <= curves.cols(), "clever covariate needs 1 <= s <= t <= horizon");
    if cohort.subject(i).treated != treated {
        return 0.0;
    }
    -curves.get(i, t as usize - 1) / (fits.g_arm(i, treated) * fits.gc_before(i, treated, s) * curves.get(i, s as usize - 1))
}

/// Per-arm targeting state over a member subset.
struct ArmState<'a> {
    cohort: &'a Cohort,
    fits: &'a NuisanceFits,
    members: &'a [usize],
    treated: bool,
}

impl ArmState<'_> {
    /// Fills `eic` (members x horizon) and returns the column means.
    fn eic_into(&self, h: &Matrix, s: &Matrix, eic: &mut Matrix) -> Vec<f64> {
        let th = h.cols();
        let m = self.members.len();
        let mut psi = vec![0.0; th];
        for r in 0..m {
            for t in 0..th {
                psi[t] += s.get(r, t);
            }
        }
        psi.iter_mut().for_each(|v| *v /= m as f64);
        let mut pn = vec![0.0; th];
        for (r, &i) in self.members.iter().enumerate() {
            let subj = self.cohort.subject(i);
            let out = eic.row_mut(r);
            if subj.treated != self.treated {
                for t in 0..th {
                    out[t] = s.get(r, t) - psi[t];
                }
            } else {
                let ga = self.fits.g_arm(i, self.treated);
                let last = (subj.time as usize).min(th);
                let mut acc = 0.0;
                for t in 0..th {
                    if t < last {
                        let dn = if subj.event && subj.time as usize == t + 1 { 1.0 } else { 0.0 };
                        acc += (dn - h.get(r, t)) / (self.fits.gc_before(i, self.treated, t as u32 + 1) * s.get(r, t));
                    }
                    out[t] = -s.get(r, t) / ga * acc + s.get(r, t) - psi[t];
                }
            }
            for t in 0..th {
                pn[t] += out[t];
            }
        }
        pn.iter_mut().for_each(|v| *v /= m as f64);
        pn
    }

    /// Moves every member's logit hazard along the normalized summed clever covariate.
    fn step(&self, h: &Matrix, s: &Matrix, w: &[f64], eps: f64, h_new: &mut Matrix, s_new: &mut Matrix) {
        let th = h.cols();
        let mut tail = vec![0.0; th + 1];
        for (r, &i) in self.members.iter().enumerate() {
            let ga = self.fits.g_arm(i, self.treated);
            for t in (0..th).rev() {
                tail[t] = tail[t + 1] + s.get(r, t) * w[t];
            }
            for u in 0..th {
                let dir = -tail[u] / (ga * self.fits.gc_before(i, self.treated, u as u32 + 1) * s.get(r, u));
                let v = sigmoid(logit(h.get(r, u)) + eps * dir);
                h_new.set(r, u, clamp(v, HAZARD_FLOOR, 1.0 - HAZARD_FLOOR));
            }
            let curve = survival_from_hazards(h_new.row(r));
            s_new.row_mut(r).copy_from_slice(&curve);
        }
    }
}

fn column_sd(m: &Matrix) -> Vec<f64> {
    (0..m.cols())
        .map(|t| {
            let c = m.column(t);
            let mu = mean(&c);
            (c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c.len() as f64).sqrt()
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// EIC of `S(t | a)` over `members`, one row per member.
pub fn eic_matrix(cohort: &Cohort, fits: &NuisanceFits, curves: &Matrix, treated: bool, members: &[usize]) -> Result<Matrix, TmleError> {
    check_shapes(cohort, fits, curves)?;
    let th = curves.cols();
    let mut h = Matrix::zeros(members.len(), th);
    let mut s = Matrix::zeros(members.len(), th);
    for (r, &i) in members.iter().enumerate() {
        s.row_mut(r).copy_from_slice(curves.row(i));
        h.row_mut(r).copy_from_slice(&hazards_from_survival(curves.row(i)));
    }
    let mut eic = Matrix::zeros(members.len(), th);
    if !members.is_empty() {
        ArmState { cohort, fits, members, treated }.eic_into(&h, &s, &mut eic);
    }
    Ok(eic)
}

fn check_shapes(cohort: &Cohort, fits: &NuisanceFits, curves: &Matrix) -> Result<(), TmleError> {
    if fits.len() != cohort.len() {
        return Err(TmleError::Dimension { expected: cohort.len(), got: fits.len() });
    }
    if curves.rows() != cohort.len() {
        return Err(TmleError::Dimension { expected: cohort.len(), got: curves.rows() });
    }
    if curves.cols() != fits.horizon() as usize {
        return Err(TmleError::Dimension { expected: fits.horizon() as usize, got: curves.cols() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetOptions {
    pub epsilon: f64,
    pub max_steps: usize,
}

impl Default for TargetOptions {
    fn default() -> Self {
        Self { epsilon: 1e-3, max_steps: 5000 }
    }
}

/// Targeted curves of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmTarget {
    pub hazards: Matrix,
    pub curves: Matrix,
    pub eic: Matrix,
    /// Update steps taken, rejected ones included.
    pub steps: usize,
    /// Final `max_t |P_n D_t|`.
    pub max_abs_mean: f64,
    /// Final per-period EIC means.
    pub eic_mean: Vec<f64>,
    /// Per-period stopping tolerance `sd_t / (sqrt(n) ln n)`.
    pub tolerance: Vec<f64>,
    pub converged: bool,
    pub max_steps_hit: bool,
    /// Step size at exit.
    pub epsilon: f64,
}

impl ArmTarget {
    /// Mean targeted survival per period.
    pub fn mean_curve(&self) -> Vec<f64> {
        (0..self.curves.cols()).map(|t| mean(&self.curves.column(t))).collect()
    }
}

/// Targeted fit over a subset of subjects; rows follow `members`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetedFit {
    pub members: Vec<usize>,
    /// Indexed by arm.
    pub arms: [ArmTarget; 2],
}

impl TargetedFit {
    pub fn arm(&self, treated: bool) -> &ArmTarget {
        &self.arms[arm(treated)]
    }

    pub fn horizon(&self) -> u32 {
        self.arms[0].curves.cols() as u32
    }

    /// Targeted individual effects `S*(t|1,x) - S*(t|0,x)`.
    pub fn effects(&self) -> Matrix {
        let (s1, s0) = (&self.arms[1].curves, &self.arms[0].curves);
        let mut out = Matrix::zeros(s1.rows(), s1.cols());
        for i in 0..s1.rows() {
            for t in 0..s1.cols() {
                out.set(i, t, s1.get(i, t) - s0.get(i, t));
            }
        }
        out
    }

    /// Targeted average effect per period over the members.
    pub fn ate(&self) -> Vec<f64> {
        let e = self.effects();
        (0..e.cols()).map(|t| mean(&e.column(t))).collect()
    }

    /// EIC of the effect, `D_1 - D_0`.
    pub fn effect_eic(&self) -> Matrix {
        let (d1, d0) = (&self.arms[1].eic, &self.arms[0].eic);
        let mut out = Matrix::zeros(d1.rows(), d1.cols());
        for i in 0..d1.rows() {
            for t in 0..d1.cols() {
                out.set(i, t, d1.get(i, t) - d0.get(i, t));
            }
        }
        out
    }

    /// True when both arms met the stopping rule.
    pub fn converged(&self) -> bool {
        self.arms.iter().all(|a| a.converged)
    }

    pub fn max_steps_hit(&self) -> bool {
        self.arms.iter().any(|a| a.max_steps_hit)
    }
}

fn target_arm(
    state: &ArmState<'_>,
    initial: &Matrix,
    opts: &TargetOptions,
) -> Result<ArmTarget, TmleError> {
    let m = state.members.len();
    let th = initial.cols();
    let mut h = Matrix::zeros(m, th);
    let mut s = Matrix::zeros(m, th);
    for (r, &i) in state.members.iter().enumerate() {
        h.row_mut(r).copy_from_slice(&hazards_from_survival(initial.row(i)));
        let curve = survival_from_hazards(h.row(r));
        s.row_mut(r).copy_from_slice(&curve);
    }
    let mut eic = Matrix::zeros(m, th);
    let mut pn = state.eic_into(&h, &s, &mut eic);
    let scale = (m as f64).sqrt() * (m as f64).ln();
    let tolerance_of = |eic: &Matrix| -> Vec<f64> { column_sd(eic).iter().map(|sd| (sd / scale).max(1e-12)).collect() };
    let mut tol = tolerance_of(&eic);
    let mut eps = opts.epsilon;
    let mut steps = 0;
    let mut h_new = h.clone();
    let mut s_new = s.clone();
    let mut eic_new = eic.clone();
    let (converged, max_steps_hit) = loop {
        if pn.iter().zip(&tol).all(|(p, t)| p.abs() <= *t) {
            break (true, false);
        }
        if steps >= opts.max_steps {
            break (false, true);
        }
        let nrm = norm(&pn);
        let w: Vec<f64> = pn.iter().map(|p| p / nrm).collect();
        state.step(&h, &s, &w, eps, &mut h_new, &mut s_new);
        let pn_new = state.eic_into(&h_new, &s_new, &mut eic_new);
        steps += 1;
        if !pn_new.iter().all(|v| v.is_finite()) || !s_new.is_finite() {
            return Err(TmleError::NonFiniteUpdate { arm: arm_name(state.treated), step: steps });
        }
        if norm(&pn_new) > nrm {
            eps *= 0.5;
            continue;
        }
        core::mem::swap(&mut h, &mut h_new);
        core::mem::swap(&mut s, &mut s_new);
        core::mem::swap(&mut eic, &mut eic_new);
        pn = pn_new;
        tol = tolerance_of(&eic);
    };
    if max_steps_hit {
        log::warn!("{} arm targeting stopped after {steps} steps", arm_name(state.treated));
    }
    Ok(ArmTarget {
        hazards: h,
        curves: s,
        eic,
        steps,
        max_abs_mean: max_abs(&pn),
        eic_mean: pn,
        tolerance: tol,
        converged,
        max_steps_hit,
        epsilon: eps,
    })
}

/// One-step targeting of both arms' survival curves within `members`.
///
/// Each arm's logit hazards move along the clever covariates summed over
/// periods and weighted by the current EIC means, normalized to unit length.
/// A step that increases the EIC-mean norm is rejected and the step size
/// halved. Nuisance fits are never changed.
pub fn one_step_target(
    cohort: &Cohort,
    fits: &NuisanceFits,
    initial: &EffectSurface,
    members: &[usize],
    opts: &TargetOptions,
) -> Result<TargetedFit, TmleError> {
    if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
        return Err(TmleError::InvalidSettings("epsilon must be positive"));
    }
    if members.len() < 2 {
        return Err(TmleError::TooFewMembers(members.len()));
    }
    if let Some(&bad) = members.iter().find(|&&i| i >= cohort.len()) {
        return Err(TmleError::Dimension { expected: cohort.len(), got: bad + 1 });
    }
    check_shapes(cohort, fits, initial.curves(true))?;
    check_shapes(cohort, fits, initial.curves(false))?;
    let run = |treated: bool| {
        let state = ArmState { cohort, fits, members, treated };
        target_arm(&state, initial.curves(treated), opts)
    };
    let control = run(false)?;
    let treated = run(true)?;
    Ok(TargetedFit { members: members.to_vec(), arms: [control, treated] })
}

/// Simultaneous band over periods.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub level: f64,
    /// Multiplier: `level` quantile of `max_t |Z_t|`.
    pub q: f64,
    /// `sd(EIC_t) / sqrt(n)`.
    pub sigma: Vec<f64>,
    pub half_width: Vec<f64>,
    /// Periods whose EIC column has zero variance.
    pub degenerate: Vec<bool>,
}

impl Band {
    pub fn degenerate_covariance(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }

    /// `(lower, upper)` around the estimates.
    pub fn interval(&self, estimate: &[f64]) -> Vec<(f64, f64)> {
        estimate.iter().zip(&self.half_width).map(|(e, w)| (e - w, e + w)).collect()
    }

    /// Upper bound minus estimate.
    pub fn ci_star(&self, estimate: &[f64]) -> Vec<f64> {
        self.interval(estimate).iter().zip(estimate).map(|((_, u), e)| u - e).collect()
    }
}

/// Simultaneous band from an EIC matrix (subjects x periods).
///
/// The multiplier is estimated from [`BAND_DRAWS`] Gaussian draws with the
/// EIC correlation; a rank-one correlation uses the normal quantile directly.
pub fn simultaneous_band(eic: &Matrix, level: f64, seed: u64) -> Result<Band, TmleError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(TmleError::InvalidLevel(level));
    }
    let n = eic.rows();
    let th = eic.cols();
    if n < 2 {
        return Err(TmleError::TooFewMembers(n));
    }
    let means: Vec<f64> = (0..th).map(|t| mean(&eic.column(t))).collect();
    let mut cov = vec![0.0; th * th];
    for row in eic.iter_rows() {
        for a in 0..th {
            let da = row[a] - means[a];
            for b in 0..=a {
                cov[a * th + b] += da * (row[b] - means[b]);
            }
        }
    }
    for a in 0..th {
        for b in 0..=a {
            cov[a * th + b] /= n as f64;
            cov[b * th + a] = cov[a * th + b];
        }
    }
    let sd: Vec<f64> = (0..th).map(|t| cov[t * th + t].max(0.0).sqrt()).collect();
    let scale_max = sd.iter().fold(0.0f64, |a, &b| a.max(b));
    let degenerate: Vec<bool> = sd.iter().map(|&s| s <= 1e-12 * scale_max.max(1e-300)).collect();
    if degenerate.iter().any(|&d| d) {
        log::warn!("degenerate EIC covariance: zero variance at some periods");
    }
    let mut corr = vec![0.0; th * th];
    for a in 0..th {
        for b in 0..th {
            if !degenerate[a] && !degenerate[b] {
                corr[a * th + b] = cov[a * th + b] / (sd[a] * sd[b]);
            }
        }
    }
    let l = psd_factor(&corr, th, 1e-10);
    let rank = (0..th).filter(|&j| l[j * th + j] != 0.0).count();
    let q = if rank <= 1 {
        probit(0.5 + level / 2.0)
    } else {
        let mut r = rng::stream(rng::derive_seed(seed, rng::label::BAND), 0);
        let mut z = vec![0.0; th];
        let mut maxima: Vec<f64> = (0..BAND_DRAWS)
            .map(|_| {
                z.iter_mut().for_each(|v| *v = rng::normal(&mut r));
                (0..th)
                    .map(|a| (0..=a).map(|k| l[a * th + k] * z[k]).sum::<f64>().abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        sort_floats(&mut maxima);
        crate::math::quantile_sorted(&maxima, level)
    };
    let sigma: Vec<f64> = sd.iter().map(|s| s / (n as f64).sqrt()).collect();
    let half_width = sigma.iter().zip(&degenerate).map(|(s, &d)| if d { 0.0 } else { q * s }).collect();
    Ok(Band { level, q, sigma, half_width, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cohort, Subject};
    use alloc::format;
    use alloc::string::ToString;

    fn cohort_of(rows: &[(bool, u32, bool)], horizon: u32) -> Cohort {
        let subjects = rows
            .iter()
            .enumerate()
            .map(|(i, &(treated, time, event))| Subject { id: format!("{i}"), x: vec![0.5], treated, time, event })
            .collect();
        Cohort::from_subjects(subjects, vec!["x1".to_string()], horizon).unwrap()
    }

    fn flat_fits(n: usize, g: f64, horizon: usize) -> NuisanceFits {
        NuisanceFits::from_values(vec![g; n], Matrix::zeros(n, horizon), Matrix::zeros(n, horizon)).unwrap()
    }

    #[test]
    fn clever_covariate_examples() {
        let c = cohort_of(&[(true, 3, true), (false, 2, false)], 3);
        let curves = Matrix::from_rows(&[vec![0.9, 0.8, 0.7], vec![0.9, 0.8, 0.7]]);
        let f = NuisanceFits::from_values(vec![0.5, 0.5], Matrix::zeros(2, 3), Matrix::zeros(2, 3)).unwrap();
        assert!((clever_covariate(&c, &f, &curves, 0, true, 2, 2) + 2.0).abs() < 1e-5);
        assert_eq!(clever_covariate(&c, &f, &curves, 1, true, 2, 2), 0.0);
        let f1 = NuisanceFits::from_values(vec![0.99, 0.99], Matrix::zeros(2, 3), Matrix::zeros(2, 3)).unwrap();
        // the clamp keeps g_1 at 0.99, and G is 1 - 1e-6 per period
        assert!((clever_covariate(&c, &f1, &curves, 0, true, 1, 1) + 1.0 / 0.99).abs() < 1e-9);
    }

    #[test]
    fn clamps_apply_and_gc_is_monotone() {
        let hc = Matrix::from_rows(&[vec![0.0, 0.5, 1.0]]);
        let f = NuisanceFits::from_values(vec![1.0], hc.clone(), hc).unwrap();
        assert_eq!(f.g[0], 0.99);
        assert!(f.positivity_warning);
        assert_eq!(f.hc[1].row(0), &[1e-6, 0.5, 0.99]);
        assert!(f.gc[1].get(0, 0) >= f.gc[1].get(0, 1) && f.gc[1].get(0, 1) >= f.gc[1].get(0, 2));
        assert_eq!(f.gc_before(0, true, 1), 1.0);
    }

    #[test]
    fn other_arm_eic_is_centered_survival() {
        let c = cohort_of(&[(true, 3, true), (false, 2, false), (false, 3, false)], 3);
        let curves = Matrix::from_rows(&[vec![0.9, 0.8, 0.7], vec![0.95, 0.9, 0.85], vec![0.9, 0.8, 0.7]]);
        let f = flat_fits(3, 0.4, 3);
        let d = eic_matrix(&c, &f, &curves, true, &[0, 1, 2]).unwrap();
        let mean_t2 = (0.8 + 0.9 + 0.8) / 3.0;
        assert!((d.get(1, 1) - (0.9 - mean_t2)).abs() < 1e-12);
        assert!((d.get(2, 1) - (0.8 - mean_t2)).abs() < 1e-12);
    }

    #[test]
    fn empirical_hazards_solve_the_score_equation() {
        // covariate-free cohort, no censoring, g equal to the empirical share
        let mut rows = Vec::new();
        let times = [1, 2, 2, 3, 4, 4, 4, 5, 5, 5];
        for (k, &t) in times.iter().enumerate() {
            rows.push((k % 2 == 0, t, true));
            rows.push((k % 2 == 1, t, true));
        }
        let c = cohort_of(&rows, 4);
        let all: Vec<usize> = (0..c.len()).collect();
        let s = crate::survival::life_table(&c, &all, 4);
        let curves = Matrix::from_rows(&vec![s; c.len()]);
        let f = NuisanceFits::from_values(vec![0.5; c.len()], Matrix::zeros(c.len(), 4), Matrix::zeros(c.len(), 4)).unwrap();
        for treated in [true, false] {
            let d = eic_matrix(&c, &f, &curves, treated, &all).unwrap();
            for t in 0..4 {
                // G is (1 - 1e-6)^s rather than 1, hence the loose bound
                assert!(mean(&d.column(t)).abs() < 1e-4, "t={t} {}", mean(&d.column(t)));
            }
        }
    }

    #[test]
    fn already_solved_fit_takes_no_steps() {
        let rows: Vec<_> = (0..20).map(|k| (k % 2 == 0, 1 + (k as u32 / 2) % 5, k % 3 != 0)).collect();
        let c = cohort_of(&rows, 4);
        let all: Vec<usize> = (0..c.len()).collect();
        let treated: Vec<usize> = all.iter().copied().filter(|&i| c.subject(i).treated).collect();
        let control: Vec<usize> = all.iter().copied().filter(|&i| !c.subject(i).treated).collect();
        let s1 = crate::survival::life_table(&c, &treated, 4);
        let s0 = crate::survival::life_table(&c, &control, 4);
        let surf = EffectSurface::from_curves(Matrix::from_rows(&vec![s1; 20]), Matrix::from_rows(&vec![s0; 20])).unwrap();
        let f = flat_fits(20, 0.5, 4);
        let fit = one_step_target(&c, &f, &surf, &all, &TargetOptions::default()).unwrap();
        assert!(fit.converged());
        assert_eq!(fit.arm(true).steps, 0);
        assert_eq!(fit.arm(false).steps, 0);
        assert!((fit.arm(true).curves.get(3, 2) - surf.s1.get(3, 2)).abs() < 1e-12);
    }

    #[test]
    fn targeting_reaches_the_stopping_rule() {
        let rows: Vec<_> = (0..60).map(|k| (k % 4 < 2, 1 + (k as u32 * 7) % 6, k % 5 != 0)).collect();
        let c = cohort_of(&rows, 5);
        let all: Vec<usize> = (0..c.len()).collect();
        let s = Matrix::from_rows(&vec![vec![0.95, 0.9, 0.85, 0.8, 0.75]; 60]);
        let surf = EffectSurface::from_curves(s.clone(), s).unwrap();
        let f = flat_fits(60, 0.6, 5);
        let fit = one_step_target(&c, &f, &surf, &all, &TargetOptions::default()).unwrap();
        for a in &fit.arms {
            assert!(a.converged, "{a:?}");
            assert!(a.eic_mean.iter().zip(&a.tolerance).all(|(p, t)| p.abs() <= *t));
            for r in 0..a.curves.rows() {
                let row = a.curves.row(r);
                assert!(row.windows(2).all(|w| w[1] <= w[0]) && row.iter().all(|&v| v > 0.0));
            }
        }
        let half = one_step_target(&c, &f, &surf, &all, &TargetOptions { epsilon: 5e-4, ..Default::default() }).unwrap();
        for (a, b) in fit.ate().iter().zip(half.ate()) {
            let tol = fit.arms[0].tolerance.iter().chain(&fit.arms[1].tolerance).fold(0.0f64, |x, &y| x.max(y));
            assert!((a - b).abs() <= 10.0 * tol.max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn band_multipliers() {
        let mut r = rng::stream(3, 0);
        let one = Matrix::from_vec(500, 1, (0..500).map(|_| rng::normal(&mut r)).collect());
        let b = simultaneous_band(&one, 0.95, 1).unwrap();
        assert!((b.q - 1.96).abs() < 0.02);

        let pair = Matrix::from_vec(5000, 2, (0..10000).map(|_| rng::normal(&mut r)).collect());
        let b = simultaneous_band(&pair, 0.95, 1).unwrap();
        assert!((b.q - 2.24).abs() < 0.03, "{}", b.q);

        let same: Vec<f64> = (0..500).flat_map(|_| {
            let z = rng::normal(&mut r);
            [z, 2.0 * z]
        }).collect();
        let b = simultaneous_band(&Matrix::from_vec(500, 2, same), 0.95, 1).unwrap();
        assert!((b.q - 1.96).abs() < 0.02);
        assert!((b.half_width[1] - 2.0 * b.half_width[0]).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_column_is_flagged() {
        let m = Matrix::from_rows(&[vec![1.0, 0.3], vec![-1.0, 0.3], vec![0.5, 0.3]]);
        let b = simultaneous_band(&m, 0.95, 1).unwrap();
        assert!(b.degenerate_covariance() && b.degenerate[1] && !b.degenerate[0]);
        assert_eq!(b.half_width[1], 0.0);
        assert!(matches!(simultaneous_band(&m, 1.0, 1), Err(TmleError::InvalidLevel(_))));
    }
}
