//! Command-line interface: argument parsing and the subcommands.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use survhte_core::cate::{Binning, Bounds, CateEstimate, Stratum};
use survhte_core::data::Cohort;
use survhte_core::dgp::{self, DgpParams, TruthHandle};
use survhte_core::importance::{self, SelectionResult};
use survhte_core::math::{mean, Matrix};
use survhte_core::pipeline::{self, FeatureCate, Settings};
use survhte_core::rng::{derive_seed, label};
use survhte_core::survival::{self, EffectSurface, OutcomeModels};
use survhte_core::tmle::{self, NuisanceFits, TargetedFit};

use crate::config::{BinningKind, RunConfig};
use crate::error::CliError;
use crate::io;
use crate::runner::{self, ExperimentReport};

pub const THREADS_ENV: &str = "SURVHTE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "survhte", version, about = "Heterogeneous treatment effects on discrete-time survival data")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "TOML")]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Worker threads (overrides the config).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CohortArgs {
    /// Cohort CSV: id,time,event,treatment,<covariates>.
    #[arg(long)]
    pub cohort: PathBuf,
}

#[derive(Debug, Args)]
pub struct SurfaceArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    /// Effect surface CSV written by `fit`.
    #[arg(long)]
    pub surface: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a cohort from the simulation design.
    Simulate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        /// Target event rate within the horizon.
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Fit hazard models and write the effect surface.
    Fit {
        #[command(flatten)]
        cohort: CohortArgs,
        /// JSON written by `simulate`; enables NRMSE.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Score features on the horizon effect and select them.
    Importance {
        #[command(flatten)]
        input: SurfaceArgs,
        /// Sidecar JSON from `simulate`; enables PPV and TPR.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Target the survival curves and report the effect with a band.
    Target {
        #[command(flatten)]
        input: SurfaceArgs,
    },
    /// Stratum effects for one feature.
    Cate {
        #[command(flatten)]
        input: SurfaceArgs,
        #[arg(long)]
        feature: String,
        /// Number of strata.
        #[arg(long, conflicts_with = "breaks")]
        strata: Option<usize>,
        /// Interior cut points, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        breaks: Option<Vec<f64>>,
        /// Equal-width bins over the observed range instead of quantiles.
        #[arg(long, conflicts_with = "breaks")]
        equal_width: bool,
    },
    /// Feature identification experiment over the grid.
    Exp1,
    /// Subgroup effect experiment over the grid.
    Exp2,
    /// All steps on a cohort file.
    Pipeline {
        #[command(flatten)]
        cohort: CohortArgs,
    },
}

/// Config with command-line overrides applied.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        config.out_dir = d.clone();
    }
    if let Some(t) = cli.threads {
        config.threads = t;
    }
    Ok(config)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = resolve_config(&cli)?;
    if let Command::Simulate { n, d, beta, rate } = &cli.command {
        let g = &mut config.grid;
        if let Some(v) = n {
            g.n = vec![*v];
        }
        if let Some(v) = d {
            g.d = vec![*v];
        }
        if let Some(v) = beta {
            g.beta = vec![*v];
        }
        if let Some(v) = rate {
            g.rate = vec![*v];
        }
    }
    let pool = runner::pool(config.threads)?;
    pool.install(|| dispatch(&cli.command, &config))
}

fn dispatch(command: &Command, config: &RunConfig) -> Result<(), CliError> {
    let out = config.out_dir.as_path();
    match command {
        Command::Simulate { .. } => simulate(config, out),
        Command::Fit { cohort, truth } => fit(config, out, &cohort.cohort, truth.as_deref()),
        Command::Importance { input, truth } => importance_cmd(config, out, input, truth.as_deref()),
        Command::Target { input } => target(config, out, input),
        Command::Cate { input, feature, strata, breaks, equal_width } => {
            cate_cmd(config, out, input, feature, *strata, breaks.as_deref(), *equal_width)
        }
        Command::Exp1 => experiment(out, runner::run_experiment1(config)?),
        Command::Exp2 => experiment(out, runner::run_experiment2(config)?),
        Command::Pipeline { cohort } => pipeline_cmd(config, out, &cohort.cohort),
    }
}

#[derive(Debug, Serialize)]
struct Header<'a> {
    version: &'static str,
    config_hash: String,
    seed: u64,
    kind: &'a str,
}

fn header<'a>(config: &RunConfig, kind: &'a str) -> Header<'a> {
    Header { version: env!("CARGO_PKG_VERSION"), config_hash: config.hash(), seed: config.seed, kind }
}

// ---------------------------------------------------------------- simulate

/// Sidecar written next to a simulated cohort.
#[derive(Debug, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub n: usize,
    pub d: usize,
    pub beta: f64,
    pub rate: f64,
    pub horizon: u32,
    pub seed: u64,
    pub r: f64,
    pub event_rate: f64,
    pub true_features: Vec<String>,
    /// Sample mean of the true individual effects per period.
    pub true_ate: Vec<f64>,
}

impl TruthSidecar {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        #[derive(Deserialize)]
        struct Wrapped {
            truth: TruthSidecar,
        }
        serde_json::from_str::<Wrapped>(&text)
            .map(|w| w.truth)
            .map_err(|e| CliError::validation(format!("{}: invalid truth sidecar: {e}", path.display())))
    }

    fn handle(&self, cohort: &Cohort) -> Result<TruthHandle, CliError> {
        if cohort.dim() != self.d {
            return Err(CliError::validation(format!("truth describes {} covariates, cohort has {}", self.d, cohort.dim())));
        }
        let params = DgpParams { n: self.n, d: self.d, beta: self.beta, r: Some(self.r), target_rate: Some(self.rate), horizon: self.horizon, seed: self.seed };
        Ok(TruthHandle::from_r(params, self.r))
    }
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    truth: TruthSidecar,
}

fn single<T: Copy>(name: &str, v: &[T]) -> Result<T, CliError> {
    match v {
        [x] => Ok(*x),
        _ => Err(CliError::validation(format!("simulate needs exactly one grid.{name} value, found {}", v.len()))),
    }
}

fn simulate(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    config.validate_grid()?;
    let g = &config.grid;
    let (n, d, beta, rate) = (single("n", &g.n)?, single("d", &g.d)?, single("beta", &g.beta)?, single("rate", &g.rate)?);
    let params = DgpParams { n, d, beta, r: None, target_rate: Some(rate), horizon: config.horizon, seed: config.seed };
    let (cohort, truth) = dgp::generate_cohort(&params)?;
    let all: Vec<usize> = (0..cohort.len()).collect();
    let sidecar = TruthSidecar {
        n,
        d,
        beta,
        rate,
        horizon: config.horizon,
        seed: config.seed,
        r: truth.r,
        event_rate: cohort.event_rate(),
        true_features: truth.true_features().iter().map(|&j| cohort.feature_names()[j].clone()).collect(),
        true_ate: truth.ate_curve(&cohort, &all),
    };
    io::write_cohort(&out.join("cohort.csv"), &cohort)?;
    io::write_json(&out.join("cohort.json"), &SimulateReport { header: header(config, "simulate"), truth: sidecar })
}

// --------------------------------------------------------------------- fit

#[derive(Serialize)]
struct LearnerWeight {
    learner: String,
    weight: f64,
    cv_loss: f64,
}

#[derive(Serialize)]
struct FitReport<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    n: usize,
    horizon: u32,
    event_rate: f64,
    ate: Vec<f64>,
    weights_treated: Vec<LearnerWeight>,
    weights_control: Vec<LearnerWeight>,
    nrmse: Option<Vec<Option<f64>>>,
}

fn weights(models: &OutcomeModels, treated: bool) -> Vec<LearnerWeight> {
    survival::describe_weights(models.model(treated))
        .into_iter()
        .map(|(learner, weight, cv_loss)| LearnerWeight { learner, weight, cv_loss })
        .collect()
}

fn nrmse_curve(surface: &EffectSurface, truth: &Matrix) -> Vec<Option<f64>> {
    (0..surface.horizon() as usize).map(|t| survival::nrmse(&surface.psi.column(t), &truth.column(t)).ok()).collect()
}

fn fit_stage(config: &RunConfig, settings: &Settings, cohort: &Cohort, truth: Option<&TruthHandle>, out: &Path) -> Result<EffectSurface, CliError> {
    let s1 = pipeline::step1(cohort, settings, config.seed)?;
    io::write_surface(&out.join("surface.csv"), cohort, &s1.surface)?;
    let report = FitReport {
        header: header(config, "fit"),
        n: cohort.len(),
        horizon: cohort.horizon(),
        event_rate: cohort.event_rate(),
        ate: s1.surface.ate(),
        weights_treated: weights(&s1.models, true),
        weights_control: weights(&s1.models, false),
        nrmse: truth.map(|t| nrmse_curve(&s1.surface, &t.ite_matrix(cohort))),
    };
    io::write_json(&out.join("fit.json"), &report)?;
    Ok(s1.surface)
}

fn load_truth(path: Option<&Path>, cohort: &Cohort) -> Result<Option<TruthHandle>, CliError> {
    path.map(|p| TruthSidecar::load(p)?.handle(cohort)).transpose()
}

fn fit(config: &RunConfig, out: &Path, cohort_path: &Path, truth: Option<&Path>) -> Result<(), CliError> {
    config.validate()?;
    let settings = config.settings()?;
    let cohort = io::read_cohort(cohort_path, config.horizon)?;
    let truth = load_truth(truth, &cohort)?;
    fit_stage(config, &settings, &cohort, truth.as_ref(), out).map(drop)
}

// -------------------------------------------------------------- importance

#[derive(Serialize)]
struct KneeReport {
    rank: usize,
    shape: &'static str,
    cutoff: usize,
    height: f64,
}

#[derive(Serialize)]
struct MethodReport {
    method: &'static str,
    scores: Vec<f64>,
    order: Vec<String>,
    knee: Option<KneeReport>,
    no_knee: bool,
    selected: Vec<String>,
    ppv: Option<f64>,
    tpr: Option<f64>,
}

#[derive(Serialize)]
struct ImportanceReport<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    features: Vec<String>,
    methods: Vec<MethodReport>,
}

fn method_report(cohort: &Cohort, s: &SelectionResult, truth: Option<&[usize]>) -> MethodReport {
    let names = cohort.feature_names();
    let acc = truth.map(|t| importance::ppv_tpr(&s.selected, t, cohort.dim()));
    MethodReport {
        method: s.method.name(),
        scores: s.curve.scores.clone(),
        order: s.curve.order.iter().map(|&j| names[j].clone()).collect(),
        knee: s.knee.map(|k| KneeReport {
            rank: k.rank,
            shape: match k.shape {
                importance::Shape::Concave => "concave",
                importance::Shape::Convex => "convex",
            },
            cutoff: k.cutoff,
            height: k.height,
        }),
        no_knee: s.no_knee,
        selected: s.selected.iter().map(|&j| names[j].clone()).collect(),
        ppv: acc.as_ref().map(|a| a.ppv),
        tpr: acc.as_ref().map(|a| a.tpr),
    }
}

fn importance_stage(
    config: &RunConfig,
    settings: &Settings,
    cohort: &Cohort,
    surface: &EffectSurface,
    truth: Option<&TruthHandle>,
    out: &Path,
) -> Result<Vec<SelectionResult>, CliError> {
    let selections = pipeline::step2(cohort, surface, settings, config.seed)?;
    let true_features = truth.map(TruthHandle::true_features);
    let report = ImportanceReport {
        header: header(config, "importance"),
        features: cohort.feature_names().to_vec(),
        methods: selections.iter().map(|s| method_report(cohort, s, true_features.as_deref())).collect(),
    };
    io::write_json(&out.join("importance.json"), &report)?;
    Ok(selections)
}

fn read_inputs(config: &RunConfig, input: &SurfaceArgs) -> Result<(Cohort, EffectSurface), CliError> {
    let cohort = io::read_cohort(&input.cohort.cohort, config.horizon)?;
    let surface = io::read_surface(&input.surface, &cohort)?;
    Ok((cohort, surface))
}

fn importance_cmd(config: &RunConfig, out: &Path, input: &SurfaceArgs, truth: Option<&Path>) -> Result<(), CliError> {
    config.validate()?;
    let settings = config.settings()?;
    let (cohort, surface) = read_inputs(config, input)?;
    let truth = load_truth(truth, &cohort)?;
    importance_stage(config, &settings, &cohort, &surface, truth.as_ref(), out).map(drop)
}

// ------------------------------------------------------------------ target

#[derive(Serialize)]
struct ArmReport {
    arm: &'static str,
    steps: usize,
    converged: bool,
    max_steps_hit: bool,
    max_abs_mean: f64,
    epsilon: f64,
    eic_mean: Vec<f64>,
    tolerance: Vec<f64>,
    mean_survival: Vec<f64>,
}

#[derive(Serialize)]
struct TargetReport<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    level: f64,
    ate_initial: Vec<f64>,
    ate_targeted: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    q: f64,
    sigma: Vec<f64>,
    degenerate: Vec<bool>,
    clamped_propensity_share: f64,
    positivity_warning: bool,
    arms: Vec<ArmReport>,
}

struct Targeted {
    fits: NuisanceFits,
    global: TargetedFit,
}

fn target_stage(config: &RunConfig, settings: &Settings, cohort: &Cohort, surface: &EffectSurface, out: &Path) -> Result<Targeted, CliError> {
    let fits = pipeline::fit_nuisances(cohort, settings, config.seed)?;
    if fits.positivity_warning {
        log::warn!("{:.1}% of propensity predictions were clamped", 100.0 * fits.clamped_share);
    }
    let global = pipeline::target_all(cohort, surface, &fits, settings)?;
    if global.max_steps_hit() {
        log::warn!("targeting stopped at the step limit");
    }
    let band = tmle::simultaneous_band(&global.effect_eic(), settings.level, derive_seed(config.seed, label::BAND))?;
    let ate = global.ate();
    let targeted = EffectSurface::from_curves(global.arms[1].curves.clone(), global.arms[0].curves.clone())?;
    io::write_surface(&out.join("targeted.csv"), cohort, &targeted)?;
    let arms = [(false, "control"), (true, "treated")]
        .iter()
        .map(|&(treated, arm)| {
            let a = global.arm(treated);
            ArmReport {
                arm,
                steps: a.steps,
                converged: a.converged,
                max_steps_hit: a.max_steps_hit,
                max_abs_mean: a.max_abs_mean,
                epsilon: a.epsilon,
                eic_mean: a.eic_mean.clone(),
                tolerance: a.tolerance.clone(),
                mean_survival: a.mean_curve(),
            }
        })
        .collect();
    let report = TargetReport {
        header: header(config, "target"),
        level: settings.level,
        ate_initial: surface.ate(),
        lower: ate.iter().zip(&band.half_width).map(|(e, w)| e - w).collect(),
        upper: ate.iter().zip(&band.half_width).map(|(e, w)| e + w).collect(),
        ate_targeted: ate,
        q: band.q,
        sigma: band.sigma,
        degenerate: band.degenerate,
        clamped_propensity_share: fits.clamped_share,
        positivity_warning: fits.positivity_warning,
        arms,
    };
    io::write_json(&out.join("target.json"), &report)?;
    Ok(Targeted { fits, global })
}

fn target(config: &RunConfig, out: &Path, input: &SurfaceArgs) -> Result<(), CliError> {
    config.validate()?;
    let settings = config.settings()?;
    let (cohort, surface) = read_inputs(config, input)?;
    target_stage(config, &settings, &cohort, &surface, out).map(drop)
}

// -------------------------------------------------------------------- cate

pub const CATE_HEADER: [&str; 7] = ["feature", "stratum", "t", "estimate", "lower", "upper", "h_q"];

#[derive(Serialize)]
struct StratumReport {
    label: usize,
    h_q: usize,
    bounds: String,
    subgroup_targeted: bool,
}

#[derive(Serialize)]
struct FeatureReport {
    feature: String,
    q: Option<f64>,
    strata: Vec<StratumReport>,
    /// Size-weighted mean of the pooled stratum estimates.
    weighted_mean: Vec<f64>,
}

#[derive(Serialize)]
struct CateReport<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    level: f64,
    ate_targeted: Vec<f64>,
    features: Vec<FeatureReport>,
}

fn bounds_label(b: &Bounds) -> String {
    match *b {
        Bounds::Interval { lo, hi } => format!("[{lo}, {hi})"),
        Bounds::Level(v) => format!("= {v}"),
    }
}

fn cate_rows(name: &str, estimates: &[CateEstimate]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for e in estimates {
        let (lo, hi) = (e.lower(), e.upper());
        for t in 0..e.estimate.len() {
            rows.push(vec![
                name.to_string(),
                e.label.to_string(),
                (t + 1).to_string(),
                e.estimate[t].to_string(),
                lo[t].to_string(),
                hi[t].to_string(),
                e.h_q.to_string(),
            ]);
        }
    }
    rows
}

fn feature_report(cohort: &Cohort, fc: &FeatureCate) -> FeatureReport {
    FeatureReport {
        feature: cohort.feature_names()[fc.feature].clone(),
        q: fc.pooled.first().map(|e| e.q),
        strata: fc
            .strata
            .iter()
            .zip(&fc.subgroup)
            .map(|(s, g): (&Stratum, _)| StratumReport { label: s.label, h_q: s.h_q(), bounds: bounds_label(&s.bounds), subgroup_targeted: g.is_some() })
            .collect(),
        weighted_mean: survhte_core::cate::weighted_mean(&fc.pooled),
    }
}

#[allow(clippy::too_many_arguments)]
fn cate_stage(
    config: &RunConfig,
    settings: &Settings,
    cohort: &Cohort,
    surface: &EffectSurface,
    targeted: &Targeted,
    features: &[(usize, Binning)],
    out: &Path,
) -> Result<(), CliError> {
    let mut pooled_rows = Vec::new();
    let mut subgroup_rows = Vec::new();
    let mut reports = Vec::new();
    for (j, binning) in features {
        let fc = pipeline::step3_feature(cohort, surface, &targeted.fits, &targeted.global, *j, binning, settings, config.seed)?;
        let name = &cohort.feature_names()[*j];
        pooled_rows.extend(cate_rows(name, &fc.pooled));
        let sub: Vec<CateEstimate> = fc.subgroup.iter().flatten().cloned().collect();
        subgroup_rows.extend(cate_rows(name, &sub));
        reports.push(feature_report(cohort, &fc));
    }
    io::write_rows(&out.join("cate.csv"), &CATE_HEADER, pooled_rows)?;
    io::write_rows(&out.join("cate_subgroup.csv"), &CATE_HEADER, subgroup_rows)?;
    let report = CateReport { header: header(config, "cate"), level: settings.level, ate_targeted: targeted.global.ate(), features: reports };
    io::write_json(&out.join("cate.json"), &report)
}

fn default_binning(config: &RunConfig, cohort: &Cohort, j: usize) -> Binning {
    match config.binning {
        BinningKind::Quantile => Binning::Quantile(config.strata),
        BinningKind::EqualWidth => observed_range(cohort, j, config.strata),
    }
}

fn observed_range(cohort: &Cohort, j: usize, q: usize) -> Binning {
    let v: Vec<f64> = cohort.subjects().iter().map(|s| s.x[j]).collect();
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Binning::EqualWidth { q, lo, hi: if hi > lo { hi } else { lo + 1.0 } }
}

fn cate_cmd(
    config: &RunConfig,
    out: &Path,
    input: &SurfaceArgs,
    feature: &str,
    strata: Option<usize>,
    breaks: Option<&[f64]>,
    equal_width: bool,
) -> Result<(), CliError> {
    config.validate()?;
    let settings = config.settings()?;
    let (cohort, surface) = read_inputs(config, input)?;
    let j = cohort.feature_index(feature).ok_or_else(|| CliError::validation(format!("unknown feature {feature:?}")))?;
    let binning = match (breaks, strata) {
        (Some(b), _) => Binning::Breaks(b.to_vec()),
        (None, Some(q)) if equal_width => observed_range(&cohort, j, q),
        (None, Some(q)) => Binning::Quantile(q),
        (None, None) if equal_width => observed_range(&cohort, j, config.strata),
        (None, None) => default_binning(config, &cohort, j),
    };
    let targeted = target_stage(config, &settings, &cohort, &surface, out)?;
    cate_stage(config, &settings, &cohort, &surface, &targeted, &[(j, binning)], out)
}

// ------------------------------------------------------------- experiments

fn experiment(out: &Path, report: ExperimentReport) -> Result<(), CliError> {
    let name = report.experiment;
    let header = ["scenario", "replicate", "seed", "metric", "method", "feature", "t", "value"];
    let rows = report.rows.iter().map(|r| {
        vec![
            r.scenario.to_string(),
            r.replicate.to_string(),
            r.seed.to_string(),
            r.metric.to_string(),
            r.method.clone(),
            r.feature.clone(),
            r.t.map(|t| t.to_string()).unwrap_or_default(),
            r.value.to_string(),
        ]
    });
    io::write_rows(&out.join(format!("{name}_metrics.csv")), &header, rows)?;
    io::write_json(&out.join(format!("{name}_report.json")), &report)?;
    let failed: usize = report.scenarios.iter().map(|s| s.failed).sum();
    if failed > 0 {
        log::warn!("{name}: {failed} replicate(s) failed; see the report");
    }
    Ok(())
}

// ---------------------------------------------------------------- pipeline

#[derive(Serialize)]
struct StabilityReport<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    samples: usize,
    size: usize,
    completed: usize,
    failed: usize,
    features: Vec<String>,
    /// Selection counts per method, in feature order.
    counts: Vec<(String, Vec<usize>)>,
}

#[derive(Serialize)]
struct PipelineReport<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    n: usize,
    horizon: u32,
    selected_features: Vec<String>,
    ate_initial_horizon: f64,
    files: Vec<&'static str>,
}

fn pipeline_cmd(config: &RunConfig, out: &Path, cohort_path: &Path) -> Result<(), CliError> {
    config.validate()?;
    let settings = config.settings()?;
    let cohort = io::read_cohort(cohort_path, config.horizon)?;
    if config.bootstrap.samples > 0 && config.bootstrap.size > cohort.len() {
        return Err(CliError::validation(format!("bootstrap.size = {} exceeds the cohort size {}", config.bootstrap.size, cohort.len())));
    }
    let surface = fit_stage(config, &settings, &cohort, None, out)?;
    let selections = importance_stage(config, &settings, &cohort, &surface, None, out)?;
    let targeted = target_stage(config, &settings, &cohort, &surface, out)?;
    let chosen: BTreeSet<usize> = selections.iter().flat_map(|s| s.selected.iter().copied()).collect();
    let features: Vec<(usize, Binning)> = chosen.iter().map(|&j| (j, default_binning(config, &cohort, j))).collect();
    cate_stage(config, &settings, &cohort, &surface, &targeted, &features, out)?;
    let mut files = vec!["surface.csv", "fit.json", "importance.json", "targeted.csv", "target.json", "cate.csv", "cate_subgroup.csv", "cate.json"];
    if config.bootstrap.samples > 0 {
        let st = runner::bootstrap_stability(&cohort, &settings, config.bootstrap.samples, config.bootstrap.size, config.seed)?;
        let report = StabilityReport {
            header: header(config, "stability"),
            samples: config.bootstrap.samples,
            size: config.bootstrap.size,
            completed: st.completed,
            failed: st.failed,
            features: cohort.feature_names().to_vec(),
            counts: st.methods.iter().map(|m| m.name().to_string()).zip(st.counts).collect(),
        };
        io::write_json(&out.join("stability.json"), &report)?;
        files.push("stability.json");
    }
    let th = surface.horizon();
    let report = PipelineReport {
        header: header(config, "pipeline"),
        n: cohort.len(),
        horizon: th,
        selected_features: chosen.iter().map(|&j| cohort.feature_names()[j].clone()).collect(),
        ate_initial_horizon: mean(&surface.psi_at(th)),
        files,
    };
    io::write_json(&out.join("pipeline.json"), &report)
}
