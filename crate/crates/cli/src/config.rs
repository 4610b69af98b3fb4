//! Run configuration read from TOML, with range checks and a stable hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use survhte_core::importance::bart::BartParams;
use survhte_core::importance::forest::ForestParams;
use survhte_core::importance::{Method, ScoreOptions};
use survhte_core::learners::LearnerSpec;
use survhte_core::pipeline::{Scenario, Settings, StratumChoice};
use survhte_core::tmle::TargetOptions;

use crate::error::CliError;

pub const N_RANGE: (usize, usize) = (1000, 15000);
pub const D_RANGE: (usize, usize) = (8, 30);
pub const BETA_RANGE: (f64, f64) = (0.0, 2.0);
pub const RATE_RANGE: (f64, f64) = (0.025, 0.30);
pub const M_RANGE: (usize, usize) = (1, 50);
pub const MAX_REPLICATES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    pub beta: Vec<f64>,
    pub rate: Vec<f64>,
    pub m: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self { n: vec![3000], d: vec![10], beta: vec![0.5], rate: vec![0.10], m: vec![10] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerConfig {
    ElasticNet { alpha: f64, n_lambda: usize },
    AdaptiveLasso { n_lambda: usize, weight_cap: f64 },
    Spline { knots: usize, ridge: f64 },
    Hinge { max_terms: usize, knots: usize },
    TreeEnsemble { trees: usize, depth: usize, min_leaf: usize },
}

impl From<&LearnerConfig> for LearnerSpec {
    fn from(c: &LearnerConfig) -> Self {
        match *c {
            LearnerConfig::ElasticNet { alpha, n_lambda } => LearnerSpec::ElasticNet { alpha, n_lambda },
            LearnerConfig::AdaptiveLasso { n_lambda, weight_cap } => LearnerSpec::AdaptiveLasso { n_lambda, weight_cap },
            LearnerConfig::Spline { knots, ridge } => LearnerSpec::Spline { knots, ridge },
            LearnerConfig::Hinge { max_terms, knots } => LearnerSpec::Hinge { max_terms, knots },
            LearnerConfig::TreeEnsemble { trees, depth, min_leaf } => LearnerSpec::TreeEnsemble { trees, depth, min_leaf },
        }
    }
}

impl From<&LearnerSpec> for LearnerConfig {
    fn from(s: &LearnerSpec) -> Self {
        match *s {
            LearnerSpec::ElasticNet { alpha, n_lambda } => LearnerConfig::ElasticNet { alpha, n_lambda },
            LearnerSpec::AdaptiveLasso { n_lambda, weight_cap } => LearnerConfig::AdaptiveLasso { n_lambda, weight_cap },
            LearnerSpec::Spline { knots, ridge } => LearnerConfig::Spline { knots, ridge },
            LearnerSpec::Hinge { max_terms, knots } => LearnerConfig::Hinge { max_terms, knots },
            LearnerSpec::TreeEnsemble { trees, depth, min_leaf } => LearnerConfig::TreeEnsemble { trees, depth, min_leaf },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceConfig {
    pub methods: Vec<String>,
    pub folds: usize,
    pub forest_trees: usize,
    pub bart_trees: usize,
    pub bart_burn_in: usize,
    pub bart_draws: usize,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        let f = ForestParams::default();
        let b = BartParams::default();
        Self {
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            folds: ScoreOptions::default().folds,
            forest_trees: f.trees,
            bart_trees: b.trees,
            bart_burn_in: b.burn_in,
            bart_draws: b.draws,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TmleConfig {
    pub epsilon: f64,
    pub max_steps: usize,
    pub level: f64,
}

impl Default for TmleConfig {
    fn default() -> Self {
        let t = TargetOptions::default();
        Self { epsilon: t.epsilon, max_steps: t.max_steps, level: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StratumConfig {
    /// Feature whose stratum Experiment 2 reports.
    pub feature: String,
    /// 1-based stratum label under equal-width unit binning.
    pub label: usize,
}

impl Default for StratumConfig {
    fn default() -> Self {
        Self { feature: "x2".into(), label: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    /// Number of samples; 0 disables the stability analysis.
    pub samples: usize,
    pub size: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { samples: 0, size: 8000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningKind {
    EqualWidth,
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub replicates: usize,
    pub horizon: u32,
    pub out_dir: PathBuf,
    /// Worker threads; 0 lets the thread pool decide.
    pub threads: usize,
    pub grid: Grid,
    pub learners: Vec<LearnerConfig>,
    pub importance: ImportanceConfig,
    pub tmle: TmleConfig,
    pub stratum: StratumConfig,
    pub bootstrap: BootstrapConfig,
    /// Strata count for ingested cohorts.
    pub strata: usize,
    pub binning: BinningKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            replicates: 10,
            horizon: 12,
            out_dir: PathBuf::from("out"),
            threads: 0,
            grid: Grid::default(),
            learners: LearnerSpec::default_library().iter().map(LearnerConfig::from).collect(),
            importance: ImportanceConfig::default(),
            tmle: TmleConfig::default(),
            stratum: StratumConfig::default(),
            bootstrap: BootstrapConfig::default(),
            strata: 10,
            binning: BinningKind::Quantile,
        }
    }
}

fn check_range<T: PartialOrd + std::fmt::Display + Copy>(name: &str, values: &[T], (lo, hi): (T, T)) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(CliError::validation(format!("grid.{name} must not be empty")));
    }
    for &v in values {
        if !(v >= lo && v <= hi) {
            return Err(CliError::validation(format!("grid.{name} = {v} outside [{lo}, {hi}]")));
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::validation(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| e.in_file(path))
    }

    /// Checks settings shared by every subcommand.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.horizon < 1 {
            return Err(CliError::validation("horizon must be at least 1"));
        }
        if self.replicates == 0 || self.replicates > MAX_REPLICATES {
            return Err(CliError::validation(format!("replicates = {} outside [1, {MAX_REPLICATES}]", self.replicates)));
        }
        if !(1..=M_RANGE.1).contains(&self.strata) {
            return Err(CliError::validation(format!("strata = {} outside [1, {}]", self.strata, M_RANGE.1)));
        }
        self.settings()?.validate()?;
        Ok(())
    }

    /// Adds the simulation grid ranges.
    pub fn validate_grid(&self) -> Result<(), CliError> {
        self.validate()?;
        let g = &self.grid;
        check_range("n", &g.n, N_RANGE)?;
        check_range("d", &g.d, D_RANGE)?;
        check_range("beta", &g.beta, BETA_RANGE)?;
        check_range("rate", &g.rate, RATE_RANGE)?;
        check_range("m", &g.m, M_RANGE)?;
        let d_min = *g.d.iter().min().expect("checked non-empty");
        self.stratum_choice(d_min)?;
        for &m in &g.m {
            if self.stratum.label == 0 || self.stratum.label > m {
                return Err(CliError::validation(format!("stratum.label = {} outside 1..={m}", self.stratum.label)));
            }
        }
        Ok(())
    }

    pub fn methods(&self) -> Result<Vec<Method>, CliError> {
        self.importance
            .methods
            .iter()
            .map(|m| Method::from_name(m).ok_or_else(|| CliError::validation(format!("unknown importance method {m:?}"))))
            .collect()
    }

    pub fn settings(&self) -> Result<Settings, CliError> {
        let imp = &self.importance;
        let score = ScoreOptions {
            folds: imp.folds,
            forest: ForestParams { trees: imp.forest_trees, ..ForestParams::default() },
            bart: BartParams { trees: imp.bart_trees, burn_in: imp.bart_burn_in, draws: imp.bart_draws, ..BartParams::default() },
            ..ScoreOptions::default()
        };
        if imp.forest_trees == 0 || imp.bart_trees == 0 || imp.bart_draws == 0 {
            return Err(CliError::validation("forest_trees, bart_trees and bart_draws must be positive"));
        }
        Ok(Settings {
            learners: self.learners.iter().map(LearnerSpec::from).collect(),
            methods: self.methods()?,
            score,
            target: TargetOptions { epsilon: self.tmle.epsilon, max_steps: self.tmle.max_steps },
            level: self.tmle.level,
        })
    }

    /// Scenario grid in row-major order over `n, d, beta, rate, m`.
    pub fn scenarios(&self) -> Vec<Scenario> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &n in &g.n {
            for &d in &g.d {
                for &beta in &g.beta {
                    for &rate in &g.rate {
                        for &m in &g.m {
                            out.push(Scenario { n, d, beta, rate, strata: m, horizon: self.horizon });
                        }
                    }
                }
            }
        }
        out
    }

    /// Resolves the reported stratum's feature name (`x1`, `x2`, ...).
    pub fn stratum_choice(&self, d: usize) -> Result<StratumChoice, CliError> {
        let name = &self.stratum.feature;
        let k: usize = name
            .strip_prefix('x')
            .and_then(|s| s.parse().ok())
            .filter(|&k| k >= 1 && k <= d)
            .ok_or_else(|| CliError::validation(format!("stratum.feature {name:?} is not one of x1..x{d}")))?;
        Ok(StratumChoice { feature: k - 1, label: self.stratum.label })
    }

    /// Hex SHA-256 of the canonical JSON form. Output location and thread
    /// count do not change results and are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.threads = 0;
        let canonical = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate_grid().unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        assert_eq!(c.hash(), RunConfig::from_toml(&text).unwrap().hash());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml("seed = 7\n[grid]\nbeta = [0.0, 2.0]\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.grid.n, vec![3000]);
        assert_eq!(c.scenarios().len(), 2);
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let c = RunConfig::from_toml("[grid]\nrate = [0.5]\n").unwrap();
        assert!(matches!(c.validate_grid(), Err(CliError::Validation(_))));
        let c = RunConfig::from_toml("[grid]\nd = [40]\n").unwrap();
        assert!(c.validate_grid().is_err());
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
        let c = RunConfig::from_toml("[importance]\nmethods = [\"lasso\"]\n").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::from_toml("[stratum]\nfeature = \"x40\"\n").unwrap();
        assert!(c.validate_grid().is_err());
    }

    #[test]
    fn learners_parse_from_tables() {
        let c = RunConfig::from_toml("[[learners]]\nkind = \"tree_ensemble\"\ntrees = 50\ndepth = 3\nmin_leaf = 20\n").unwrap();
        assert_eq!(c.settings().unwrap().learners, vec![LearnerSpec::TreeEnsemble { trees: 50, depth: 3, min_leaf: 20 }]);
    }
}
