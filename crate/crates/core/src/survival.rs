//! Discrete-time hazard models per treatment arm, chained into potential
//! survival curves and individual treatment effects.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;
use thiserror::Error;

use crate::data::{expand_counting_process, Cohort, PersonPeriodTable};
use crate::learners::{assign_folds, fit_super_learner, ColumnRole, Design, LearnerError, LearnerSpec, StackedModel};
use crate::math::{clamp, mean, Matrix};
use crate::rng;

pub const HAZARD_FLOOR: f64 = 1e-6;
pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurvivalError {
    #[error("the {0} arm has no subjects")]
    EmptyArm(&'static str),
    #[error("the {0} arm has no events within the horizon")]
    NoEvents(&'static str),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("mean estimated effect is zero; NRMSE is undefined")]
    DegenerateNormalizer,
}

pub(crate) fn arm_name(treated: bool) -> &'static str {
    if treated {
        "treated"
    } else {
        "control"
    }
}

/// Column roles of a hazard design: covariates, period, one-hot periods.
pub fn hazard_roles(d: usize, horizon: u32) -> Vec<ColumnRole> {
    let mut roles = vec![ColumnRole::Covariate; d];
    roles.push(ColumnRole::TimeLinear);
    roles.extend(core::iter::repeat_n(ColumnRole::TimeIndicator, horizon as usize));
    roles
}

/// Writes the hazard-design row for covariates `x` at period `t` into `out`.
#[inline]
pub fn hazard_row_into(x: &[f64], t: u32, horizon: u32, out: &mut [f64]) {
    let d = x.len();
    out[..d].copy_from_slice(x);
    out[d] = t as f64;
    for (k, v) in out[d + 1..d + 1 + horizon as usize].iter_mut().enumerate() {
        *v = if k + 1 == t as usize { 1.0 } else { 0.0 };
    }
}

/// Person-period design restricted to rows accepted by `keep`, with the
/// binary outcome and the subject of each row.
pub fn person_period_design(
    cohort: &Cohort,
    table: &PersonPeriodTable,
    keep: impl Fn(usize) -> bool,
) -> (Design, Vec<f64>, Vec<usize>) {
    let d = cohort.dim();
    let horizon = table.horizon;
    let width = d + 1 + horizon as usize;
    let picked: Vec<_> = table.rows.iter().filter(|r| keep(r.subject)).collect();
    let mut x = Matrix::zeros(picked.len(), width);
    let mut y = Vec::with_capacity(picked.len());
    let mut subj = Vec::with_capacity(picked.len());
    for (i, r) in picked.iter().enumerate() {
        hazard_row_into(&cohort.subject(r.subject).x, r.t, horizon, x.row_mut(i));
        y.push(if r.event { 1.0 } else { 0.0 });
        subj.push(r.subject);
    }
    (Design { x, roles: hazard_roles(d, horizon) }, y, subj)
}

/// Stacked hazard models `h(t | A = a, x)` for both arms.
#[derive(Debug, Clone)]
pub struct OutcomeModels {
    pub treated: StackedModel,
    pub control: StackedModel,
    pub horizon: u32,
    pub dim: usize,
}

impl OutcomeModels {
    pub fn model(&self, treated: bool) -> &StackedModel {
        if treated {
            &self.treated
        } else {
            &self.control
        }
    }

    /// Clamped hazards `h(1..horizon)` for covariates `x`.
    pub fn hazard_curve(&self, treated: bool, x: &[f64]) -> Vec<f64> {
        hazard_curve(self.model(treated), x, self.horizon)
    }
}

pub fn hazard_curve(model: &StackedModel, x: &[f64], horizon: u32) -> Vec<f64> {
    let mut row = vec![0.0; x.len() + 1 + horizon as usize];
    (1..=horizon)
        .map(|t| {
            hazard_row_into(x, t, horizon, &mut row);
            clamp(model.predict(&row), HAZARD_FLOOR, 1.0 - HAZARD_FLOOR)
        })
        .collect()
}

/// `S(t) = prod_{s <= t} (1 - h(s))` with hazards clamped to `[1e-6, 1 - 1e-6]`.
pub fn survival_from_hazards(h: &[f64]) -> Vec<f64> {
    let mut s = 1.0;
    h.iter()
        .map(|&hi| {
            s *= 1.0 - clamp(hi, HAZARD_FLOOR, 1.0 - HAZARD_FLOOR);
            s
        })
        .collect()
}

/// Hazards recovered from a survival curve: `1 - S(t) / S(t-1)`.
pub fn hazards_from_survival(s: &[f64]) -> Vec<f64> {
    let mut prev = 1.0;
    s.iter()
        .map(|&si| {
            let h = 1.0 - si / prev;
            prev = si;
            clamp(h, HAZARD_FLOOR, 1.0 - HAZARD_FLOOR)
        })
        .collect()
}

pub fn survival_curve(model: &StackedModel, x: &[f64], horizon: u32) -> Vec<f64> {
    survival_from_hazards(&hazard_curve(model, x, horizon))
}

/// Fits one hazard model per arm on the person-period expansion.
///
/// Cross-validation folds are drawn per subject so a subject's periods
/// never straddle folds.
pub fn fit_outcome_models(cohort: &Cohort, specs: &[LearnerSpec], seed: u64) -> Result<OutcomeModels, SurvivalError> {
    let horizon = cohort.horizon();
    let table = expand_counting_process(cohort, horizon);
    let folds = assign_folds(cohort.len(), DEFAULT_FOLDS, rng::derive_seed(seed, rng::label::FOLDS));
    let fit_arm = |treated: bool| -> Result<StackedModel, SurvivalError> {
        let name = arm_name(treated);
        if !cohort.subjects().iter().any(|s| s.treated == treated) {
            return Err(SurvivalError::EmptyArm(name));
        }
        let (design, y, subj) = person_period_design(cohort, &table, |i| cohort.subject(i).treated == treated);
        if !y.contains(&1.0) {
            return Err(SurvivalError::NoEvents(name));
        }
        let fold_of: Vec<usize> = subj.iter().map(|&s| folds[s]).collect();
        let m = fit_super_learner(specs, &design, &y, &fold_of, DEFAULT_FOLDS, rng::derive_seed(seed, treated as u64))?;
        for (learner, reason) in &m.dropped {
            log::warn!("{name} hazard model dropped {learner}: {reason}");
        }
        Ok(m)
    };
    let treated = fit_arm(true)?;
    let control = fit_arm(false)?;
    Ok(OutcomeModels { treated, control, horizon, dim: cohort.dim() })
}

/// Potential survival curves and their difference, one row per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectSurface {
    pub s1: Matrix,
    pub s0: Matrix,
    pub psi: Matrix,
}

impl EffectSurface {
    pub fn from_curves(s1: Matrix, s0: Matrix) -> Result<Self, SurvivalError> {
        if s1.rows() != s0.rows() || s1.cols() != s0.cols() {
            return Err(SurvivalError::Dimension { expected: s1.rows() * s1.cols(), got: s0.rows() * s0.cols() });
        }
        let mut psi = Matrix::zeros(s1.rows(), s1.cols());
        for i in 0..s1.rows() {
            for t in 0..s1.cols() {
                psi.set(i, t, s1.get(i, t) - s0.get(i, t));
            }
        }
        Ok(Self { s1, s0, psi })
    }

    pub fn len(&self) -> usize {
        self.psi.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn horizon(&self) -> u32 {
        self.psi.cols() as u32
    }

    pub fn curves(&self, treated: bool) -> &Matrix {
        if treated {
            &self.s1
        } else {
            &self.s0
        }
    }

    /// Effects of every subject at period `t` (1-based).
    pub fn psi_at(&self, t: u32) -> Vec<f64> {
        self.psi.column(t as usize - 1)
    }

    /// Mean effect per period.
    pub fn ate(&self) -> Vec<f64> {
        (1..=self.horizon()).map(|t| mean(&self.psi_at(t))).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self { s1: self.s1.select_rows(idx), s0: self.s0.select_rows(idx), psi: self.psi.select_rows(idx) }
    }
}

pub fn estimate_ite(models: &OutcomeModels, cohort: &Cohort) -> Result<EffectSurface, SurvivalError> {
    if cohort.dim() != models.dim {
        return Err(SurvivalError::Dimension { expected: models.dim, got: cohort.dim() });
    }
    let n = cohort.len();
    let th = models.horizon as usize;
    let mut s1 = Matrix::zeros(n, th);
    let mut s0 = Matrix::zeros(n, th);
    for (i, s) in cohort.subjects().iter().enumerate() {
        s1.row_mut(i).copy_from_slice(&survival_curve(&models.treated, &s.x, models.horizon));
        s0.row_mut(i).copy_from_slice(&survival_curve(&models.control, &s.x, models.horizon));
    }
    EffectSurface::from_curves(s1, s0)
}

/// Root-mean-square error divided by the magnitude of the mean estimate.
pub fn nrmse(estimate: &[f64], truth: &[f64]) -> Result<f64, SurvivalError> {
    if estimate.len() != truth.len() {
        return Err(SurvivalError::Dimension { expected: estimate.len(), got: truth.len() });
    }
    let m = mean(estimate);
    if m.abs() < 1e-12 {
        return Err(SurvivalError::DegenerateNormalizer);
    }
    let mse = estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / estimate.len() as f64;
    Ok(mse.sqrt() / m.abs())
}

/// Life-table (discrete Kaplan-Meier) survival of the given subjects.
pub fn life_table(cohort: &Cohort, members: &[usize], horizon: u32) -> Vec<f64> {
    let mut s = 1.0;
    (1..=horizon)
        .map(|t| {
            let (mut risk, mut events) = (0usize, 0usize);
            for &i in members {
                let sub = cohort.subject(i);
                if sub.time >= t {
                    risk += 1;
                    if sub.event && sub.time == t {
                        events += 1;
                    }
                }
            }
            if risk > 0 {
                s *= 1.0 - events as f64 / risk as f64;
            }
            s
        })
        .collect()
}

/// Human-readable summary of stacked weights, for reports.
pub fn describe_weights(model: &StackedModel) -> Vec<(String, f64, f64)> {
    model.names.iter().cloned().zip(model.weights.iter().copied()).zip(model.cv_loss.iter().copied()).map(|((n, w), l)| (n, w, l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Subject;
    use crate::dgp::{generate_cohort, DgpParams};
    use crate::learners::FittedLearner;
    use crate::math::variance;
    use alloc::format;
    use alloc::string::ToString;
    use approx::assert_relative_eq;

    #[test]
    fn chain_rule_arithmetic() {
        assert_relative_eq!(survival_from_hazards(&[0.5, 0.5])[1], 0.25);
        let s = survival_from_hazards(&[0.0, 0.0, 0.0]);
        assert!(s.iter().all(|&v| v < 1.0 && v > 0.99999));
        let h = hazards_from_survival(&survival_from_hazards(&[0.1, 0.2, 0.3]));
        for (a, b) in h.iter().zip(&[0.1, 0.2, 0.3]) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn nrmse_examples() {
        assert_relative_eq!(nrmse(&[-0.1, -0.1], &[-0.2, 0.0]).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(nrmse(&[-0.3, -0.1], &[-0.3, -0.1]).unwrap(), 0.0);
        assert_eq!(nrmse(&[0.0, 0.0], &[0.1, 0.1]), Err(SurvivalError::DegenerateNormalizer));
    }

    #[test]
    fn surface_difference() {
        let s1 = Matrix::from_rows(&[vec![0.8, 0.7]]);
        let s0 = Matrix::from_rows(&[vec![0.9, 0.8]]);
        let e = EffectSurface::from_curves(s1.clone(), s0).unwrap();
        assert_relative_eq!(e.psi.get(0, 0), -0.1, epsilon = 1e-12);
        let same = EffectSurface::from_curves(s1.clone(), s1).unwrap();
        assert!(same.psi.as_slice().iter().all(|&v| v == 0.0));
    }

    fn tiny_cohort(treated: impl Fn(usize) -> bool, event: bool) -> Cohort {
        let subjects = (0..40)
            .map(|i| Subject {
                id: format!("s{i}"),
                x: vec![i as f64 / 40.0],
                treated: treated(i),
                time: 1 + (i % 5) as u32,
                event,
            })
            .collect();
        Cohort::from_subjects(subjects, vec!["x1".to_string()], 5).unwrap()
    }

    #[test]
    fn degenerate_arms_are_reported() {
        let lib = LearnerSpec::default_library();
        let c = tiny_cohort(|_| false, true);
        assert_eq!(fit_outcome_models(&c, &lib, 1).unwrap_err(), SurvivalError::EmptyArm("treated"));
        let c = tiny_cohort(|i| i % 2 == 0, false);
        assert_eq!(fit_outcome_models(&c, &lib, 1).unwrap_err(), SurvivalError::NoEvents("treated"));
    }

    #[test]
    fn identical_models_give_zero_effects() {
        let m = StackedModel::single("c", FittedLearner::Constant(0.1), 1 + 1 + 3);
        let models = OutcomeModels { treated: m.clone(), control: m, horizon: 3, dim: 1 };
        let c = tiny_cohort(|i| i % 2 == 0, true).with_horizon(3);
        let e = estimate_ite(&models, &c).unwrap();
        assert!(e.psi.as_slice().iter().all(|&v| v == 0.0));
        assert_relative_eq!(e.s1.get(0, 1), 0.81, epsilon = 1e-12);
    }

    #[test]
    fn default_dgp_step_one() {
        let p = DgpParams { n: 1500, seed: 7, ..DgpParams::default() };
        let (cohort, _) = generate_cohort(&p).unwrap();
        let models = fit_outcome_models(&cohort, &LearnerSpec::default_library(), 7).unwrap();
        let e = estimate_ite(&models, &cohort).unwrap();
        for i in 0..e.len() {
            for arm in [true, false] {
                let row = e.curves(arm).row(i);
                assert!(row.windows(2).all(|w| w[1] <= w[0]));
                assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
            }
        }
        assert!(e.psi.as_slice().iter().all(|v| v.abs() <= 1.0));
        assert!(mean(&e.psi_at(12)) < 0.0);
        assert!(variance(&e.psi_at(12)) > variance(&e.psi_at(1)));
    }
}
