//! Strata on one feature, stratum-mean effects and percentage bias.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::data::Cohort;
use crate::math::{mean, quantile_sorted, sort_floats, Matrix};
use crate::tmle::{simultaneous_band, TargetedFit, TmleError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CateError {
    #[error("invalid breaks: {0}")]
    InvalidBreaks(&'static str),
    #[error("feature {index} is out of range for {dim} covariates")]
    InvalidFeature { index: usize, dim: usize },
    #[error("stratum {0} has no members")]
    EmptyStratum(usize),
    #[error("subject {0} is not covered by the targeted fit")]
    NotTargeted(usize),
    #[error("period {t} is outside 1..={horizon}")]
    InvalidPeriod { t: u32, horizon: u32 },
    #[error("estimate is zero; percentage bias is undefined")]
    DegenerateDenominator,
    #[error(transparent)]
    Band(#[from] TmleError),
}

/// How a continuous feature is cut into strata.
#[derive(Debug, Clone, PartialEq)]
pub enum Binning {
    /// `q` equal-width bins over `[lo, hi]`.
    EqualWidth { q: usize, lo: f64, hi: f64 },
    /// `q` bins at empirical quantiles.
    Quantile(usize),
    /// Interior cut points; the outer bins are open-ended.
    Breaks(Vec<f64>),
}

impl Binning {
    /// Equal-width bins on the unit interval.
    pub fn unit(q: usize) -> Self {
        Binning::EqualWidth { q, lo: 0.0, hi: 1.0 }
    }

    fn cuts(&self, values: &[f64]) -> Result<Vec<f64>, CateError> {
        let cuts = match self {
            Binning::EqualWidth { q, lo, hi } => {
                if *q == 0 {
                    return Err(CateError::InvalidBreaks("need at least one stratum"));
                }
                if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                    return Err(CateError::InvalidBreaks("range must be finite with hi > lo"));
                }
                (1..*q).map(|k| lo + (hi - lo) * k as f64 / *q as f64).collect()
            }
            Binning::Quantile(q) => {
                if *q == 0 {
                    return Err(CateError::InvalidBreaks("need at least one stratum"));
                }
                let mut sorted = values.to_vec();
                sort_floats(&mut sorted);
                let mut c: Vec<f64> = (1..*q).map(|k| quantile_sorted(&sorted, k as f64 / *q as f64)).collect();
                c.dedup();
                c
            }
            Binning::Breaks(b) => b.clone(),
        };
        if cuts.iter().any(|v| !v.is_finite()) {
            return Err(CateError::InvalidBreaks("breaks must be finite"));
        }
        if cuts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CateError::InvalidBreaks("breaks must be strictly increasing"));
        }
        Ok(cuts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bounds {
    /// `[lo, hi)`, with infinite ends for the outer bins.
    Interval { lo: f64, hi: f64 },
    Level(f64),
}

impl Bounds {
    pub fn contains(&self, v: f64) -> bool {
        match *self {
            Bounds::Interval { lo, hi } => v >= lo && v < hi,
            Bounds::Level(l) => v == l,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub feature: usize,
    /// 1-based label; labels of dropped empty bins are skipped.
    pub label: usize,
    pub members: Vec<usize>,
    pub bounds: Bounds,
}

impl Stratum {
    pub fn h_q(&self) -> usize {
        self.members.len()
    }
}

fn is_binary(values: &[f64]) -> bool {
    values.iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Partitions the cohort on `feature`. Binary features split by level;
/// other features use `binning`. Empty strata are dropped with a warning.
pub fn stratify(cohort: &Cohort, feature: usize, binning: &Binning) -> Result<Vec<Stratum>, CateError> {
    if feature >= cohort.dim() {
        return Err(CateError::InvalidFeature { index: feature, dim: cohort.dim() });
    }
    let values: Vec<f64> = cohort.subjects().iter().map(|s| s.x[feature]).collect();
    let bounds: Vec<Bounds> = if is_binary(&values) {
        if let Binning::EqualWidth { q: 0, .. } | Binning::Quantile(0) = binning {
            return Err(CateError::InvalidBreaks("need at least one stratum"));
        }
        vec![Bounds::Level(0.0), Bounds::Level(1.0)]
    } else {
        let cuts = binning.cuts(&values)?;
        let mut edges = vec![f64::NEG_INFINITY];
        edges.extend(cuts);
        edges.push(f64::INFINITY);
        edges.windows(2).map(|w| Bounds::Interval { lo: w[0], hi: w[1] }).collect()
    };
    let mut members = vec![Vec::new(); bounds.len()];
    for (i, &v) in values.iter().enumerate() {
        let k = bounds.iter().position(|b| b.contains(v)).expect("bins cover the real line");
        members[k].push(i);
    }
    let mut out = Vec::new();
    for (k, (b, m)) in bounds.into_iter().zip(members).enumerate() {
        if m.is_empty() {
            log::warn!("feature {feature}: stratum {} is empty and dropped", k + 1);
            continue;
        }
        out.push(Stratum { feature, label: k + 1, members: m, bounds: b });
    }
    Ok(out)
}

/// Row of each cohort subject inside `fit`.
fn rows_of(fit: &TargetedFit, members: &[usize]) -> Result<Vec<usize>, CateError> {
    let top = fit.members.iter().copied().max().unwrap_or(0);
    let mut pos = vec![usize::MAX; top + 1];
    for (r, &i) in fit.members.iter().enumerate() {
        pos[i] = r;
    }
    members
        .iter()
        .map(|&i| match pos.get(i) {
            Some(&r) if r != usize::MAX => Ok(r),
            _ => Err(CateError::NotTargeted(i)),
        })
        .collect()
}

fn mean_rows(m: &Matrix, rows: &[usize], t: usize) -> f64 {
    rows.iter().map(|&r| m.get(r, t)).sum::<f64>() / rows.len() as f64
}

/// Mean targeted effect of the stratum members at period `t`.
pub fn mcate(fit: &TargetedFit, stratum: &Stratum, t: u32) -> Result<f64, CateError> {
    if stratum.members.is_empty() {
        return Err(CateError::EmptyStratum(stratum.label));
    }
    let horizon = fit.horizon();
    if t == 0 || t > horizon {
        return Err(CateError::InvalidPeriod { t, horizon });
    }
    let rows = rows_of(fit, &stratum.members)?;
    Ok(mean_rows(&fit.effects(), &rows, t as usize - 1))
}

/// `|(estimate - truth) / estimate|`.
pub fn pct_bias(estimate: f64, truth: f64) -> Result<f64, CateError> {
    if !(estimate.abs() > 1e-12) {
        return Err(CateError::DegenerateDenominator);
    }
    Ok(((estimate - truth) / estimate).abs())
}

/// Stratum effect curve with its simultaneous band.
#[derive(Debug, Clone, PartialEq)]
pub struct CateEstimate {
    pub feature: usize,
    pub label: usize,
    pub h_q: usize,
    pub estimate: Vec<f64>,
    pub half_width: Vec<f64>,
    /// Band multiplier.
    pub q: f64,
}

impl CateEstimate {
    pub fn lower(&self) -> Vec<f64> {
        self.estimate.iter().zip(&self.half_width).map(|(e, w)| e - w).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.estimate.iter().zip(&self.half_width).map(|(e, w)| e + w).collect()
    }
}

fn estimate_rows(effects: &Matrix, eic: &Matrix, stratum: &Stratum, rows: &[usize], level: f64, seed: u64) -> Result<CateEstimate, CateError> {
    let th = effects.cols();
    let estimate: Vec<f64> = (0..th).map(|t| mean_rows(effects, rows, t)).collect();
    let (half_width, q) = if rows.len() >= 2 {
        let band = simultaneous_band(&eic.select_rows(rows), level, seed)?;
        (band.half_width, band.q)
    } else {
        (vec![0.0; th], 0.0)
    };
    Ok(CateEstimate { feature: stratum.feature, label: stratum.label, h_q: rows.len(), estimate, half_width, q })
}

/// Stratum effects read off one targeted fit covering all members.
pub fn estimate_strata(fit: &TargetedFit, strata: &[Stratum], level: f64, seed: u64) -> Result<Vec<CateEstimate>, CateError> {
    let effects = fit.effects();
    let eic = fit.effect_eic();
    strata
        .iter()
        .map(|s| {
            if s.members.is_empty() {
                return Err(CateError::EmptyStratum(s.label));
            }
            let rows = rows_of(fit, &s.members)?;
            estimate_rows(&effects, &eic, s, &rows, level, seed)
        })
        .collect()
}

/// Stratum effect from a fit targeted within that stratum.
pub fn estimate_subgroup(fit: &TargetedFit, stratum: &Stratum, level: f64, seed: u64) -> Result<CateEstimate, CateError> {
    if stratum.members.is_empty() {
        return Err(CateError::EmptyStratum(stratum.label));
    }
    let rows = rows_of(fit, &stratum.members)?;
    estimate_rows(&fit.effects(), &fit.effect_eic(), stratum, &rows, level, seed)
}

/// Size-weighted mean of stratum curves.
pub fn weighted_mean(estimates: &[CateEstimate]) -> Vec<f64> {
    let n: usize = estimates.iter().map(|e| e.h_q).sum();
    let th = estimates.first().map_or(0, |e| e.estimate.len());
    (0..th)
        .map(|t| estimates.iter().map(|e| e.h_q as f64 * e.estimate[t]).sum::<f64>() / n as f64)
        .collect()
}

/// True stratum effect: mean of the true individual effects of the members.
pub fn true_stratum_effect(truth_ite: &Matrix, members: &[usize]) -> Vec<f64> {
    (0..truth_ite.cols())
        .map(|t| mean(&members.iter().map(|&i| truth_ite.get(i, t)).collect::<Vec<_>>()))
        .collect()
}
