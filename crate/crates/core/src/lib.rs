//! Heterogeneous treatment effects on right-censored time-to-event data,
//! expressed as differences in survival probabilities.
//!
//! The estimation runs in three steps:
//!
//! 1. [`survival`]: stacked discrete-time hazard models per treatment arm,
//!    chained into potential survival curves and individual effects.
//! 2. [`importance`]: four importance scorers regress the horizon effect on
//!    covariates; a Kneedle threshold picks the contributing features.
//! 3. [`tmle`] and [`cate`]: one-step targeting of the arm-specific survival
//!    curves using propensity and censoring models, then stratum averages.
//!
//! [`dgp`] generates synthetic cohorts with closed-form ground truth.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

#![cfg_attr(test, allow(unused_imports))]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cate;
pub mod data;
pub mod dgp;
pub mod importance;
pub mod learners;
pub mod math;
pub mod pipeline;
pub mod rng;
pub mod survival;
pub mod tmle;

pub use data::{Cohort, PersonPeriodRow, PersonPeriodTable, RawRow, Subject};
pub use dgp::{DgpParams, TruthHandle};
pub use learners::{LearnerSpec, StackedModel};
pub use importance::{Method, SelectionResult};
pub use pipeline::{PipelineError, Scenario, Settings};
pub use survival::{EffectSurface, OutcomeModels};
pub use tmle::{NuisanceFits, TargetOptions, TargetedFit};
