//! Seeded experiment runners over the scenario grid and their reports.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;
use survhte_core::cate;
use survhte_core::data::Cohort;
use survhte_core::importance::SelectionResult;
use survhte_core::pipeline::{self, Exp1Replicate, Exp2Replicate, PipelineError, Scenario, Settings, Stability, StratumChoice};
use survhte_core::rng::derive_seed;

use crate::config::RunConfig;
use crate::error::CliError;

/// One value in the long metric table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub scenario: usize,
    pub replicate: usize,
    pub seed: u64,
    pub metric: &'static str,
    pub method: String,
    pub feature: String,
    pub t: Option<u32>,
    pub value: f64,
}

/// Mean and standard error of one metric over the finite replicate values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub scenario: usize,
    pub metric: &'static str,
    pub method: String,
    pub feature: String,
    pub t: Option<u32>,
    pub n: usize,
    pub mean: Option<f64>,
    pub se: Option<f64>,
}

/// Groups rows by everything except replicate and seed, in first-seen order.
pub fn aggregate(rows: &[MetricRow]) -> Vec<Aggregate> {
    type Key<'a> = (usize, &'static str, &'a str, &'a str, Option<u32>);
    let mut index: HashMap<Key<'_>, usize> = HashMap::new();
    let mut groups: Vec<(Key<'_>, Vec<f64>)> = Vec::new();
    for r in rows {
        let key = (r.scenario, r.metric, r.method.as_str(), r.feature.as_str(), r.t);
        let k = *index.entry(key).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        if r.value.is_finite() {
            groups[k].1.push(r.value);
        }
    }
    groups
        .into_iter()
        .map(|((scenario, metric, method, feature, t), v)| {
            let n = v.len();
            let mean = (n > 0).then(|| v.iter().sum::<f64>() / n as f64);
            let se = mean.filter(|_| n > 1).map(|m| {
                let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            });
            Aggregate { scenario, metric, method: method.to_string(), feature: feature.to_string(), t, n, mean, se }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub replicate: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub index: usize,
    pub n: usize,
    pub d: usize,
    pub beta: f64,
    pub rate: f64,
    pub m: usize,
    pub horizon: u32,
    pub seed: u64,
    /// Calibrated survival scale; absent when calibration failed.
    pub r: Option<f64>,
    pub completed: usize,
    pub failed: usize,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: &'static str,
    pub version: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub replicates: usize,
    pub scenarios: Vec<ScenarioSummary>,
    pub aggregates: Vec<Aggregate>,
    #[serde(skip)]
    pub rows: Vec<MetricRow>,
}

struct Sink<'a> {
    rows: &'a mut Vec<MetricRow>,
    scenario: usize,
    replicate: usize,
    seed: u64,
}

impl Sink<'_> {
    fn push(&mut self, metric: &'static str, method: &str, feature: &str, t: Option<u32>, value: f64) {
        self.rows.push(MetricRow {
            scenario: self.scenario,
            replicate: self.replicate,
            seed: self.seed,
            metric,
            method: method.to_string(),
            feature: feature.to_string(),
            t,
            value,
        });
    }

    fn scalar(&mut self, metric: &'static str, value: f64) {
        self.push(metric, "", "", None, value);
    }

    fn curve(&mut self, metric: &'static str, feature: &str, values: &[f64]) {
        for (t, &v) in values.iter().enumerate() {
            self.push(metric, "", feature, Some(t as u32 + 1), v);
        }
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn bias_curve(est: &[f64], truth: &[f64]) -> Vec<f64> {
    est.iter().zip(truth).map(|(e, t)| cate::pct_bias(*e, *t).unwrap_or(f64::NAN)).collect()
}

fn exp1_rows(sink: &mut Sink<'_>, r: &Exp1Replicate) {
    sink.scalar("event_rate", r.event_rate);
    sink.curve("nrmse", "", &r.nrmse);
    sink.curve("psi_variance", "", &r.psi_variance);
    sink.curve("ate_estimate", "", &r.ate_estimate);
    sink.curve("ate_truth", "", &r.ate_truth);
    sink.curve("ate_bias", "", &bias_curve(&r.ate_estimate, &r.ate_truth));
    for m in &r.methods {
        let name = m.method.name();
        sink.push("ppv", name, "", None, m.accuracy.ppv);
        sink.push("tpr", name, "", None, m.accuracy.tpr);
        sink.push("no_knee", name, "", None, flag(m.no_knee));
        for j in 0..m.scores.len() {
            sink.push("hit", name, &format!("x{}", j + 1), None, flag(m.selected.contains(&j)));
        }
    }
}

fn exp2_rows(sink: &mut Sink<'_>, r: &Exp2Replicate, feature: &str) {
    sink.scalar("event_rate", r.event_rate);
    sink.curve("nrmse", "", &r.nrmse);
    sink.curve("ate_truth", "", &r.ate_truth);
    sink.curve("ate_initial", "", &r.ate_initial);
    sink.curve("ate_targeted", "", &r.ate_targeted);
    sink.curve("ate_bias_initial", "", &r.ate_bias_initial);
    sink.curve("ate_bias_targeted", "", &r.ate_bias_targeted);
    sink.push("stratum_h_q", "", feature, None, r.stratum_h_q as f64);
    sink.curve("stratum_truth", feature, &r.stratum_truth);
    sink.curve("stratum_initial", feature, &r.stratum_initial);
    sink.curve("stratum_targeted", feature, &r.stratum_targeted);
    sink.curve("stratum_half_width", feature, &r.stratum_half_width);
    sink.curve("stratum_bias_initial", feature, &r.stratum_bias_initial);
    sink.curve("stratum_bias_targeted", feature, &r.stratum_bias_targeted);
    sink.scalar("partition_gap", r.partition_gap);
    sink.scalar("steps_control", r.targeting_steps[0] as f64);
    sink.scalar("steps_treated", r.targeting_steps[1] as f64);
    sink.scalar("converged", flag(r.converged));
    sink.scalar("max_steps_hit", flag(r.max_steps_hit));
    sink.scalar("positivity_warning", flag(r.positivity_warning));
    sink.scalar("curves_monotone", flag(r.curves_monotone));
    sink.scalar("stopping_rule_ok", flag(r.stopping_rule_ok));
}

/// Builds a thread pool; 0 threads leaves the choice to rayon.
pub fn pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

/// Runs `job` over every (scenario, replicate) pair with seeds from the
/// master seed, then folds the results into rows in grid order.
fn run_grid<T, J, E>(config: &RunConfig, experiment: &'static str, job: J, mut emit: E) -> Result<ExperimentReport, CliError>
where
    T: Send,
    J: Fn(&Scenario, f64, u64) -> Result<T, PipelineError> + Sync,
    E: FnMut(&mut Sink<'_>, &T),
{
    let scenarios = config.scenarios();
    let reps = config.replicates;
    let calibrated: Vec<Result<f64, PipelineError>> = scenarios.par_iter().map(Scenario::calibrate).collect();
    let jobs: Vec<(usize, usize)> = (0..scenarios.len()).flat_map(|s| (0..reps).map(move |b| (s, b))).collect();
    let results: Vec<Option<Result<T, PipelineError>>> = jobs
        .par_iter()
        .map(|&(s, b)| {
            let r = *calibrated[s].as_ref().ok()?;
            let seed = derive_seed(derive_seed(config.seed, s as u64), b as u64);
            log::info!("{experiment}: scenario {s} replicate {b}");
            Some(job(&scenarios[s], r, seed))
        })
        .collect();

    let mut rows = Vec::new();
    let mut summaries: Vec<ScenarioSummary> = scenarios
        .iter()
        .enumerate()
        .map(|(s, sc)| ScenarioSummary {
            index: s,
            n: sc.n,
            d: sc.d,
            beta: sc.beta,
            rate: sc.rate,
            m: sc.strata,
            horizon: sc.horizon,
            seed: derive_seed(config.seed, s as u64),
            r: calibrated[s].as_ref().ok().copied(),
            completed: 0,
            failed: 0,
            failures: Vec::new(),
        })
        .collect();
    for (&(s, b), res) in jobs.iter().zip(results) {
        let seed = derive_seed(derive_seed(config.seed, s as u64), b as u64);
        let summary = &mut summaries[s];
        let outcome = match res {
            Some(r) => r.map_err(|e| e.to_string()),
            None => Err(format!("calibration failed: {}", calibrated[s].as_ref().err().map(ToString::to_string).unwrap_or_default())),
        };
        match outcome {
            Ok(v) => {
                summary.completed += 1;
                emit(&mut Sink { rows: &mut rows, scenario: s, replicate: b, seed }, &v);
            }
            Err(error) => {
                log::warn!("{experiment}: scenario {s} replicate {b} failed: {error}");
                summary.failed += 1;
                summary.failures.push(Failure { replicate: b, seed, error });
            }
        }
    }
    Ok(ExperimentReport {
        experiment,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: config.hash(),
        seed: config.seed,
        replicates: reps,
        scenarios: summaries,
        aggregates: aggregate(&rows),
        rows,
    })
}

/// Feature identification over the grid.
pub fn run_experiment1(config: &RunConfig) -> Result<ExperimentReport, CliError> {
    config.validate_grid()?;
    let settings = config.settings()?;
    run_grid(config, "exp1", |sc, r, seed| pipeline::exp1_replicate(sc, r, &settings, seed), exp1_rows)
}

/// Full pipeline with the configured stratum over the grid.
pub fn run_experiment2(config: &RunConfig) -> Result<ExperimentReport, CliError> {
    config.validate_grid()?;
    let settings = config.settings()?;
    let feature = config.stratum.feature.clone();
    let choices: HashMap<usize, StratumChoice> =
        config.grid.d.iter().map(|&d| config.stratum_choice(d).map(|c| (d, c))).collect::<Result<_, _>>()?;
    run_grid(
        config,
        "exp2",
        |sc, r, seed| pipeline::exp2_replicate(sc, r, &settings, &choices[&sc.d], seed),
        |sink, rep| exp2_rows(sink, rep, &feature),
    )
}

/// Bootstrap selection stability with replicates spread over the pool.
pub fn bootstrap_stability(cohort: &Cohort, settings: &Settings, samples: usize, size: usize, seed: u64) -> Result<Stability, CliError> {
    if samples == 0 {
        return Err(CliError::validation("bootstrap.samples must be positive"));
    }
    if size == 0 || size > cohort.len() {
        return Err(CliError::validation(format!("bootstrap.size = {size} must lie in 1..={}", cohort.len())));
    }
    let runs: Vec<Result<Vec<SelectionResult>, PipelineError>> =
        (0..samples).into_par_iter().map(|b| pipeline::bootstrap_replicate(cohort, settings, size, b, seed)).collect();
    Ok(Stability::tally(&settings.methods, cohort.dim(), &runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(replicate: usize, metric: &'static str, t: Option<u32>, value: f64) -> MetricRow {
        MetricRow { scenario: 0, replicate, seed: replicate as u64, metric, method: String::new(), feature: String::new(), t, value }
    }

    #[test]
    fn aggregates_recompute_from_rows() {
        let rows = vec![
            row(0, "a", Some(1), 1.0),
            row(0, "b", None, 5.0),
            row(1, "a", Some(1), 3.0),
            row(1, "b", None, f64::NAN),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!((agg[0].metric, agg[0].n, agg[0].mean), ("a", 2, Some(2.0)));
        assert!((agg[0].se.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!((agg[1].n, agg[1].mean, agg[1].se), (1, Some(5.0), None));
    }
}
