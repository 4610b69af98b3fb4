//! The three estimation steps chained together, plus single-replicate
//! runners for the simulation experiments. Replicates are independent and
//! fully determined by their seed, so callers may run them in any order.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::cate::{self, Binning, CateError, CateEstimate, Stratum};
use crate::data::Cohort;
use crate::dgp::{self, DgpError, DgpParams, TruthHandle};
use crate::importance::{self, Accuracy, ImportanceError, Method, ScoreOptions, SelectionResult};
use crate::learners::LearnerSpec;
use crate::math::{mean, variance};
use crate::rng::{self, label};
use crate::survival::{self, EffectSurface, OutcomeModels, SurvivalError};
use crate::tmle::{self, NuisanceFits, TargetOptions, TargetedFit, TmleError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error(transparent)]
    Importance(#[from] ImportanceError),
    #[error(transparent)]
    Tmle(#[from] TmleError),
    #[error(transparent)]
    Cate(#[from] CateError),
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error("invalid settings: {0}")]
    Settings(String),
}

/// Shared settings of all steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub learners: Vec<LearnerSpec>,
    pub methods: Vec<Method>,
    pub score: ScoreOptions,
    pub target: TargetOptions,
    /// Simultaneous band level.
    pub level: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            learners: LearnerSpec::default_library(),
            methods: Method::ALL.to_vec(),
            score: ScoreOptions::default(),
            target: TargetOptions::default(),
            level: 0.95,
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.learners.is_empty() {
            return Err(PipelineError::Settings("at least one learner is required".into()));
        }
        for l in &self.learners {
            l.validate().map_err(|e| PipelineError::Settings(alloc::format!("{}: {e}", l.name())))?;
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(PipelineError::Settings(alloc::format!("band level {} outside (0, 1)", self.level)));
        }
        if !(self.target.epsilon > 0.0) || self.target.max_steps == 0 {
            return Err(PipelineError::Settings("targeting needs epsilon > 0 and max_steps >= 1".into()));
        }
        if self.score.folds < 2 {
            return Err(PipelineError::Settings("importance scoring needs at least 2 folds".into()));
        }
        Ok(())
    }
}

/// Hazard models and the effect surface they imply.
#[derive(Debug, Clone)]
pub struct Step1 {
    pub models: OutcomeModels,
    pub surface: EffectSurface,
}

pub fn step1(cohort: &Cohort, settings: &Settings, seed: u64) -> Result<Step1, PipelineError> {
    let models = survival::fit_outcome_models(cohort, &settings.learners, rng::derive_seed(seed, label::OUTCOME))?;
    let surface = survival::estimate_ite(&models, cohort)?;
    Ok(Step1 { models, surface })
}

/// Scores and selections for every configured method on the horizon effect.
pub fn step2(cohort: &Cohort, surface: &EffectSurface, settings: &Settings, seed: u64) -> Result<Vec<SelectionResult>, PipelineError> {
    let psi = surface.psi_at(surface.horizon());
    let x = cohort.covariates();
    let seed = rng::derive_seed(seed, label::IMPORTANCE);
    settings
        .methods
        .iter()
        .map(|&m| {
            let curve = importance::score_features(&psi, &x, m, &settings.score, seed)?;
            Ok(importance::select_features(&curve))
        })
        .collect()
}

pub fn fit_nuisances(cohort: &Cohort, settings: &Settings, seed: u64) -> Result<NuisanceFits, PipelineError> {
    Ok(tmle::fit_nuisances(cohort, &settings.learners, seed)?)
}

/// Targets the whole cohort at once.
pub fn target_all(cohort: &Cohort, surface: &EffectSurface, fits: &NuisanceFits, settings: &Settings) -> Result<TargetedFit, PipelineError> {
    let all: Vec<usize> = (0..cohort.len()).collect();
    Ok(tmle::one_step_target(cohort, fits, surface, &all, &settings.target)?)
}

/// Stratum estimates for one feature.
#[derive(Debug, Clone)]
pub struct FeatureCate {
    pub feature: usize,
    pub strata: Vec<Stratum>,
    /// Read off the whole-cohort targeted fit.
    pub pooled: Vec<CateEstimate>,
    /// Targeted within each stratum; `None` where targeting failed.
    pub subgroup: Vec<Option<CateEstimate>>,
    pub subgroup_fits: Vec<Option<TargetedFit>>,
}

/// Stratifies on `feature` and estimates each stratum's effect curve.
pub fn step3_feature(
    cohort: &Cohort,
    surface: &EffectSurface,
    fits: &NuisanceFits,
    global: &TargetedFit,
    feature: usize,
    binning: &Binning,
    settings: &Settings,
    seed: u64,
) -> Result<FeatureCate, PipelineError> {
    let strata = cate::stratify(cohort, feature, binning)?;
    let band_seed = rng::derive_seed(seed, label::BAND);
    let pooled = cate::estimate_strata(global, &strata, settings.level, band_seed)?;
    let mut subgroup = Vec::with_capacity(strata.len());
    let mut subgroup_fits = Vec::with_capacity(strata.len());
    for s in &strata {
        let fit = if s.h_q() >= 2 { tmle::one_step_target(cohort, fits, surface, &s.members, &settings.target) } else { Err(TmleError::TooFewMembers(s.h_q())) };
        match fit {
            Ok(f) => {
                subgroup.push(Some(cate::estimate_subgroup(&f, s, settings.level, band_seed)?));
                subgroup_fits.push(Some(f));
            }
            Err(e) => {
                log::warn!("feature {feature} stratum {}: targeting failed: {e}", s.label);
                subgroup.push(None);
                subgroup_fits.push(None);
            }
        }
    }
    Ok(FeatureCate { feature, strata, pooled, subgroup, subgroup_fits })
}

/// Subsample of `m` distinct subjects.
pub fn subsample(n: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, 0);
    rng::shuffle(&mut r, &mut idx);
    idx.truncate(m);
    idx.sort_unstable();
    idx
}

/// Steps 1 and 2 on bootstrap sample `b`.
pub fn bootstrap_replicate(cohort: &Cohort, settings: &Settings, m: usize, b: usize, seed: u64) -> Result<Vec<SelectionResult>, PipelineError> {
    if m == 0 || m > cohort.len() {
        return Err(PipelineError::Settings(alloc::format!("sample size {m} must lie in 1..={}", cohort.len())));
    }
    let seed = rng::derive_seed(rng::derive_seed(seed, label::BOOTSTRAP), b as u64);
    let sample = cohort.subset(&subsample(cohort.len(), m, seed));
    let s1 = step1(&sample, settings, seed)?;
    step2(&sample, &s1.surface, settings, seed)
}

/// Selection counts per method and feature over bootstrap samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Stability {
    pub methods: Vec<Method>,
    /// `counts[k][j]`: samples in which method `k` selected feature `j`.
    pub counts: Vec<Vec<usize>>,
    pub completed: usize,
    pub failed: usize,
}

impl Stability {
    /// Tallies finished replicates; failures only increase `failed`.
    pub fn tally(methods: &[Method], d: usize, replicates: &[Result<Vec<SelectionResult>, PipelineError>]) -> Self {
        let mut counts = vec![vec![0usize; d]; methods.len()];
        let (mut completed, mut failed) = (0, 0);
        for r in replicates {
            match r {
                Ok(sel) => {
                    completed += 1;
                    for s in sel {
                        if let Some(k) = methods.iter().position(|&m| m == s.method) {
                            for &j in &s.selected {
                                counts[k][j] += 1;
                            }
                        }
                    }
                }
                Err(e) => {
                    failed += 1;
                    log::warn!("bootstrap replicate failed: {e}");
                }
            }
        }
        Self { methods: methods.to_vec(), counts, completed, failed }
    }
}

/// Sequential bootstrap stability.
pub fn bootstrap_stability(cohort: &Cohort, settings: &Settings, replicates: usize, m: usize, seed: u64) -> Result<Stability, PipelineError> {
    if replicates == 0 {
        return Err(PipelineError::Settings("at least one bootstrap sample is required".into()));
    }
    let runs: Vec<_> = (0..replicates).map(|b| bootstrap_replicate(cohort, settings, m, b, seed)).collect();
    Ok(Stability::tally(&settings.methods, cohort.dim(), &runs))
}

/// One simulation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub n: usize,
    pub d: usize,
    pub beta: f64,
    pub rate: f64,
    /// Number of equal-width strata for the effect surface study.
    pub strata: usize,
    pub horizon: u32,
}

impl Default for Scenario {
    fn default() -> Self {
        Self { n: 3000, d: 10, beta: 0.5, rate: 0.10, strata: 10, horizon: 12 }
    }
}

impl Scenario {
    /// Generator parameters with a resolved `r` and a replicate seed.
    pub fn params(&self, r: f64, seed: u64) -> DgpParams {
        DgpParams { n: self.n, d: self.d, beta: self.beta, r: Some(r), target_rate: Some(self.rate), horizon: self.horizon, seed }
    }

    /// Calibrates the survival scale for this scenario's event rate.
    pub fn calibrate(&self) -> Result<f64, PipelineError> {
        let p = DgpParams { n: self.n, d: self.d, beta: self.beta, r: None, target_rate: Some(self.rate), horizon: self.horizon, seed: 0 };
        p.validate()?;
        Ok(dgp::calibrate_rate(self.rate, &p)?)
    }
}

/// Per-method selection outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: Method,
    pub selected: Vec<usize>,
    pub no_knee: bool,
    pub scores: Vec<f64>,
    pub accuracy: Accuracy,
}

/// Metrics of one feature-identification replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Exp1Replicate {
    pub seed: u64,
    pub event_rate: f64,
    /// NRMSE of the individual effects per period (`NaN` when undefined).
    pub nrmse: Vec<f64>,
    /// Variance of the estimated individual effects per period.
    pub psi_variance: Vec<f64>,
    pub ate_estimate: Vec<f64>,
    pub ate_truth: Vec<f64>,
    pub methods: Vec<MethodOutcome>,
}

fn nrmse_curve(surface: &EffectSurface, truth: &crate::math::Matrix) -> Vec<f64> {
    (0..surface.horizon() as usize)
        .map(|t| survival::nrmse(&surface.psi.column(t), &truth.column(t)).unwrap_or(f64::NAN))
        .collect()
}

fn simulate(scenario: &Scenario, r: f64, seed: u64) -> Result<(Cohort, TruthHandle), PipelineError> {
    Ok(dgp::generate_cohort(&scenario.params(r, seed))?)
}

/// Generates a cohort, runs Steps 1 and 2 and scores the selections.
pub fn exp1_replicate(scenario: &Scenario, r: f64, settings: &Settings, seed: u64) -> Result<Exp1Replicate, PipelineError> {
    let (cohort, truth) = simulate(scenario, r, seed)?;
    let s1 = step1(&cohort, settings, seed)?;
    let truth_ite = truth.ite_matrix(&cohort);
    let selections = step2(&cohort, &s1.surface, settings, seed)?;
    let true_features = truth.true_features();
    let methods = selections
        .into_iter()
        .map(|s| MethodOutcome {
            method: s.method,
            accuracy: importance::ppv_tpr(&s.selected, &true_features, cohort.dim()),
            selected: s.selected,
            no_knee: s.no_knee,
            scores: s.curve.scores,
        })
        .collect();
    let th = cohort.horizon() as usize;
    Ok(Exp1Replicate {
        seed,
        event_rate: cohort.event_rate(),
        nrmse: nrmse_curve(&s1.surface, &truth_ite),
        psi_variance: (0..th).map(|t| variance(&s1.surface.psi.column(t))).collect(),
        ate_estimate: s1.surface.ate(),
        ate_truth: (0..th).map(|t| mean(&truth_ite.column(t))).collect(),
        methods,
    })
}

/// Which stratum Experiment 2 reports.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumChoice {
    pub feature: usize,
    /// 1-based stratum label under equal-width unit binning.
    pub label: usize,
}

impl Default for StratumChoice {
    fn default() -> Self {
        // X2 in [0, 0.1)
        Self { feature: 1, label: 1 }
    }
}

/// Metrics of one subgroup-effect replicate; `NaN` marks undefined %bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Exp2Replicate {
    pub seed: u64,
    pub event_rate: f64,
    pub nrmse: Vec<f64>,
    pub ate_truth: Vec<f64>,
    pub ate_initial: Vec<f64>,
    pub ate_targeted: Vec<f64>,
    pub ate_bias_initial: Vec<f64>,
    pub ate_bias_targeted: Vec<f64>,
    pub stratum_h_q: usize,
    pub stratum_truth: Vec<f64>,
    pub stratum_initial: Vec<f64>,
    pub stratum_targeted: Vec<f64>,
    pub stratum_half_width: Vec<f64>,
    pub stratum_bias_initial: Vec<f64>,
    pub stratum_bias_targeted: Vec<f64>,
    /// Largest gap between the size-weighted stratum means of the pooled
    /// targeted fit and its overall mean.
    pub partition_gap: f64,
    pub targeting_steps: [usize; 2],
    pub converged: bool,
    pub max_steps_hit: bool,
    pub positivity_warning: bool,
    /// Every targeted curve, global and per stratum, is non-increasing.
    pub curves_monotone: bool,
    /// Every targeted fit met its stopping rule or raised the step-limit flag.
    pub stopping_rule_ok: bool,
}

/// True when every row of every arm is non-increasing in `t`.
pub fn curves_monotone(fit: &TargetedFit) -> bool {
    fit.arms.iter().all(|a| a.curves.iter_rows().all(|r| r.windows(2).all(|w| w[1] <= w[0])))
}

fn bias_curve(est: &[f64], truth: &[f64]) -> Vec<f64> {
    est.iter().zip(truth).map(|(e, t)| cate::pct_bias(*e, *t).unwrap_or(f64::NAN)).collect()
}

/// Full pipeline on a simulated cohort with the selected stratum fixed in advance.
pub fn exp2_replicate(scenario: &Scenario, r: f64, settings: &Settings, choice: &StratumChoice, seed: u64) -> Result<Exp2Replicate, PipelineError> {
    let (cohort, truth) = simulate(scenario, r, seed)?;
    if choice.feature >= cohort.dim() {
        return Err(PipelineError::Settings(alloc::format!("feature {} out of range", choice.feature)));
    }
    let s1 = step1(&cohort, settings, seed)?;
    let truth_ite = truth.ite_matrix(&cohort);
    let th = cohort.horizon() as usize;
    let fits = fit_nuisances(&cohort, settings, seed)?;
    let global = target_all(&cohort, &s1.surface, &fits, settings)?;

    let binning = Binning::unit(scenario.strata);
    let fc = step3_feature(&cohort, &s1.surface, &fits, &global, choice.feature, &binning, settings, seed)?;
    let partition_gap = cate::weighted_mean(&fc.pooled)
        .iter()
        .zip(global.ate())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let k = fc.strata.iter().position(|s| s.label == choice.label).ok_or(CateError::EmptyStratum(choice.label))?;
    let stratum = &fc.strata[k];
    let est = fc.subgroup[k].as_ref().ok_or(CateError::EmptyStratum(choice.label))?;
    let stratum_truth = cate::true_stratum_effect(&truth_ite, &stratum.members);
    let stratum_initial: Vec<f64> =
        (0..th).map(|t| mean(&stratum.members.iter().map(|&i| s1.surface.psi.get(i, t)).collect::<Vec<_>>())).collect();
    let ate_truth: Vec<f64> = (0..th).map(|t| mean(&truth_ite.column(t))).collect();
    let ate_initial = s1.surface.ate();
    let ate_targeted = global.ate();
    Ok(Exp2Replicate {
        seed,
        event_rate: cohort.event_rate(),
        nrmse: nrmse_curve(&s1.surface, &truth_ite),
        ate_bias_initial: bias_curve(&ate_initial, &ate_truth),
        ate_bias_targeted: bias_curve(&ate_targeted, &ate_truth),
        stratum_h_q: stratum.h_q(),
        stratum_bias_initial: bias_curve(&stratum_initial, &stratum_truth),
        stratum_bias_targeted: bias_curve(&est.estimate, &stratum_truth),
        stratum_targeted: est.estimate.clone(),
        stratum_half_width: est.half_width.clone(),
        stratum_truth,
        stratum_initial,
        ate_truth,
        ate_initial,
        ate_targeted,
        partition_gap,
        targeting_steps: [global.arms[0].steps, global.arms[1].steps],
        converged: global.converged(),
        max_steps_hit: global.max_steps_hit(),
        positivity_warning: fits.positivity_warning,
        curves_monotone: curves_monotone(&global) && fc.subgroup_fits.iter().flatten().all(curves_monotone),
        stopping_rule_ok: core::iter::once(&global)
            .chain(fc.subgroup_fits.iter().flatten())
            .all(|f| f.converged() || f.max_steps_hit()),
    })
}
