//! Cohort representation, validation and counting-process expansion.
//!
//! Time is discrete: a subject observed at `time = t` was at risk in periods
//! `1..=t`, and an event at `t` falls in the interval `(t - 1, t]`.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::math::Matrix;

/// One subject of the observed sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub x: Vec<f64>,
    pub treated: bool,
    /// Observed period, `min(event, censoring)` on the integer grid; at least 1.
    pub time: u32,
    /// `true` when an event was observed at `time`, `false` when censored there.
    pub event: bool,
}

impl Subject {
    #[inline]
    pub fn arm(&self) -> u8 {
        u8::from(self.treated)
    }
}

/// Unvalidated row as read from ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub id: String,
    pub time: i64,
    pub event: i64,
    pub treatment: i64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    TimePositive,
    BinaryEvent,
    BinaryTreatment,
    RaggedCovariates,
    FiniteCovariates,
    UniqueIds,
    HorizonPositive,
    NonEmpty,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::TimePositive => "t_obs ≥ 1",
            Rule::BinaryEvent => "event ∈ {0,1}",
            Rule::BinaryTreatment => "treatment ∈ {0,1}",
            Rule::RaggedCovariates => "covariate count equals cohort dimension",
            Rule::FiniteCovariates => "covariates finite",
            Rule::UniqueIds => "ids unique",
            Rule::HorizonPositive => "horizon ≥ 1",
            Rule::NonEmpty => "at least one subject",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Zero-based index of the offending raw row (0 for cohort-level rules).
    pub row: usize,
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{} validation violation(s), first: row {} violates \"{}\"", .violations.len(), .violations[0].row, .violations[0].rule)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl ValidationError {
    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

/// Validated sample with a shared covariate dimension and follow-up horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    subjects: Vec<Subject>,
    dim: usize,
    horizon: u32,
    feature_names: Vec<String>,
}

impl Cohort {
    /// Checks every row and collects all violations rather than stopping at the first.
    pub fn validate(
        rows: Vec<RawRow>,
        feature_names: Vec<String>,
        horizon: u32,
    ) -> Result<Cohort, ValidationError> {
        let dim = feature_names.len();
        let mut violations = Vec::new();
        if horizon < 1 {
            violations.push(Violation { row: 0, rule: Rule::HorizonPositive });
        }
        if rows.is_empty() {
            violations.push(Violation { row: 0, rule: Rule::NonEmpty });
        }
        let mut seen = BTreeSet::new();
        for (i, r) in rows.iter().enumerate() {
            if r.time < 1 || r.time > u32::MAX as i64 {
                violations.push(Violation { row: i, rule: Rule::TimePositive });
            }
            if !(r.event == 0 || r.event == 1) {
                violations.push(Violation { row: i, rule: Rule::BinaryEvent });
            }
            if !(r.treatment == 0 || r.treatment == 1) {
                violations.push(Violation { row: i, rule: Rule::BinaryTreatment });
            }
            if r.x.len() != dim {
                violations.push(Violation { row: i, rule: Rule::RaggedCovariates });
            } else if r.x.iter().any(|v| !v.is_finite()) {
                violations.push(Violation { row: i, rule: Rule::FiniteCovariates });
            }
            if !seen.insert(r.id.as_str()) {
                violations.push(Violation { row: i, rule: Rule::UniqueIds });
            }
        }
        if !violations.is_empty() {
            return Err(ValidationError { violations });
        }
        let subjects = rows
            .into_iter()
            .map(|r| Subject {
                id: r.id,
                x: r.x,
                treated: r.treatment == 1,
                time: r.time as u32,
                event: r.event == 1,
            })
            .collect();
        Ok(Cohort { subjects, dim, horizon, feature_names })
    }

    /// Builds a cohort from subjects already known to be valid (generators, subsets).
    pub fn from_subjects(
        subjects: Vec<Subject>,
        feature_names: Vec<String>,
        horizon: u32,
    ) -> Result<Cohort, ValidationError> {
        let rows = subjects
            .into_iter()
            .map(|s| RawRow {
                id: s.id,
                time: s.time as i64,
                event: i64::from(s.event),
                treatment: i64::from(s.treated),
                x: s.x,
            })
            .collect();
        Cohort::validate(rows, feature_names, horizon)
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn subject(&self, i: usize) -> &Subject {
        &self.subjects[i]
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    /// Same subjects with a different follow-up horizon.
    pub fn with_horizon(&self, horizon: u32) -> Cohort {
        assert!(horizon >= 1, "horizon must be positive");
        Cohort { horizon, ..self.clone() }
    }

    /// Sub-cohort of the listed subjects, in the listed order.
    pub fn subset(&self, idx: &[usize]) -> Cohort {
        Cohort {
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
            dim: self.dim,
            horizon: self.horizon,
            feature_names: self.feature_names.clone(),
        }
    }

    /// `n x J` covariate matrix.
    pub fn covariates(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), self.dim);
        for (i, s) in self.subjects.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&s.x);
        }
        m
    }

    pub fn treated_count(&self) -> usize {
        self.subjects.iter().filter(|s| s.treated).count()
    }

    /// Subjects with an event observed within the horizon.
    pub fn events_within_horizon(&self) -> usize {
        self.subjects.iter().filter(|s| s.event && s.time <= self.horizon).count()
    }

    /// Events within the horizon divided by sample size.
    pub fn event_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.events_within_horizon() as f64 / self.len() as f64
    }
}

/// One at-risk period of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PersonPeriodRow {
    /// Index of the subject in the source cohort.
    pub subject: usize,
    pub t: u32,
    pub event: bool,
    pub treated: bool,
}

impl PersonPeriodRow {
    /// Every expanded row is at risk by construction.
    #[inline]
    pub fn at_risk(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonPeriodTable {
    pub rows: Vec<PersonPeriodRow>,
    pub horizon: u32,
}

/// Number of periods subject `s` is at risk for the event within `horizon`.
#[inline]
pub fn periods_at_risk(s: &Subject, horizon: u32) -> u32 {
    s.time.min(horizon)
}

/// Event indicator at the last at-risk period within `horizon`.
#[inline]
pub fn event_within(s: &Subject, horizon: u32) -> bool {
    s.event && s.time <= horizon
}

/// Expands the cohort into one binary-outcome row per subject per at-risk period.
pub fn expand_counting_process(cohort: &Cohort, horizon: u32) -> PersonPeriodTable {
    assert!(horizon >= 1, "horizon must be positive");
    let total: usize = cohort.subjects().iter().map(|s| periods_at_risk(s, horizon) as usize).sum();
    let mut rows = Vec::with_capacity(total);
    for (i, s) in cohort.subjects().iter().enumerate() {
        let last = periods_at_risk(s, horizon);
        let ev = event_within(s, horizon);
        for t in 1..=last {
            rows.push(PersonPeriodRow { subject: i, t, event: ev && t == last, treated: s.treated });
        }
    }
    PersonPeriodTable { rows, horizon }
}

/// Expands the censoring process: a subject is at risk of censoring in every
/// period it survives event-free, and the outcome is 1 in the period it is
/// censored. Events at `t` occur before censoring at `t`, so an event subject
/// contributes periods `1..t`.
pub fn expand_censoring_process(cohort: &Cohort, horizon: u32) -> PersonPeriodTable {
    assert!(horizon >= 1, "horizon must be positive");
    let mut rows = Vec::new();
    for (i, s) in cohort.subjects().iter().enumerate() {
        let (last, censored) = if s.time > horizon {
            (horizon, false)
        } else if s.event {
            (s.time - 1, false)
        } else {
            (s.time, true)
        };
        for t in 1..=last {
            rows.push(PersonPeriodRow { subject: i, t, event: censored && t == last, treated: s.treated });
        }
    }
    PersonPeriodTable { rows, horizon }
}

impl PersonPeriodTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn events(&self) -> usize {
        self.rows.iter().filter(|r| r.event).count()
    }

    /// Last row per subject as `(subject, periods, event)`, in subject order.
    pub fn collapse(&self) -> Vec<(usize, u32, bool)> {
        let mut out: Vec<(usize, u32, bool)> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some(last) if last.0 == r.subject => {
                    last.1 = r.t;
                    last.2 = r.event;
                }
                _ => out.push((r.subject, r.t, r.event)),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn raw(id: &str, time: i64, event: i64, treatment: i64, x: Vec<f64>) -> RawRow {
        RawRow { id: id.to_string(), time, event, treatment, x }
    }

    fn names(j: usize) -> Vec<String> {
        (1..=j).map(|k| format!("x{k}")).collect()
    }

    fn one(time: u32, event: bool) -> Cohort {
        let s = Subject { id: "a".into(), x: vec![0.5], treated: false, time, event };
        Cohort::from_subjects(vec![s], names(1), 12).unwrap()
    }

    #[test]
    fn validates_well_formed_rows() {
        let rows = vec![
            raw("1", 3, 1, 0, vec![0.1, 0.2]),
            raw("2", 5, 0, 1, vec![0.3, 0.4]),
            raw("3", 1, 1, 1, vec![0.5, 0.6]),
        ];
        let c = Cohort::validate(rows, names(2), 12).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.dim(), 2);
    }

    #[test]
    fn rejects_zero_time() {
        let err = Cohort::validate(vec![raw("1", 0, 1, 0, vec![0.0])], names(1), 12).unwrap_err();
        assert_eq!(err.violations[0].rule, Rule::TimePositive);
        assert_eq!(err.violations[0].rule.to_string(), "t_obs ≥ 1");
    }

    #[test]
    fn rejects_duplicate_ids() {
        let rows = vec![raw("7", 2, 0, 0, vec![0.0]), raw("7", 3, 1, 1, vec![1.0])];
        let err = Cohort::validate(rows, names(1), 12).unwrap_err();
        assert_eq!(err.violations, vec![Violation { row: 1, rule: Rule::UniqueIds }]);
        assert_eq!(err.violations[0].rule.to_string(), "ids unique");
    }

    #[test]
    fn collects_every_violation() {
        let rows = vec![raw("1", 2, 2, 3, vec![0.0, 1.0]), raw("2", 2, 0, 0, vec![f64::NAN])];
        let err = Cohort::validate(rows, names(1), 12).unwrap_err();
        assert!(err.has(Rule::BinaryEvent));
        assert!(err.has(Rule::BinaryTreatment));
        assert!(err.has(Rule::RaggedCovariates));
        assert!(err.has(Rule::FiniteCovariates));
    }

    #[test]
    fn expansion_of_event_subject() {
        let pp = expand_counting_process(&one(3, true), 12);
        let ev: Vec<bool> = pp.rows.iter().map(|r| r.event).collect();
        assert_eq!(ev, vec![false, false, true]);
        assert!(pp.rows.iter().all(PersonPeriodRow::at_risk));
    }

    #[test]
    fn expansion_of_censored_subject() {
        let pp = expand_counting_process(&one(2, false), 12);
        assert_eq!(pp.rows.iter().map(|r| r.event).collect::<Vec<_>>(), vec![false, false]);
    }

    #[test]
    fn expansion_truncates_at_horizon() {
        let pp = expand_counting_process(&one(9, true), 3);
        assert_eq!(pp.rows.iter().map(|r| (r.t, r.event)).collect::<Vec<_>>(), vec![
            (1, false),
            (2, false),
            (3, false)
        ]);
    }

    #[test]
    fn censoring_expansion() {
        let ev = expand_censoring_process(&one(4, true), 12);
        assert_eq!(ev.len(), 3);
        assert_eq!(ev.events(), 0);
        let cens = expand_censoring_process(&one(4, false), 12);
        assert_eq!(cens.len(), 4);
        assert!(cens.rows[3].event);
        let late = expand_censoring_process(&one(20, false), 12);
        assert_eq!(late.len(), 12);
        assert_eq!(late.events(), 0);
    }

    fn arb_subjects() -> impl Strategy<Value = Vec<(u32, bool, bool)>> {
        prop::collection::vec((1u32..30, any::<bool>(), any::<bool>()), 1..40)
    }

    proptest! {
        #[test]
        fn collapse_round_trips(subs in arb_subjects(), horizon in 1u32..20) {
            let subjects: Vec<Subject> = subs.iter().enumerate().map(|(i, &(t, e, a))| Subject {
                id: format!("s{i}"), x: vec![0.0], treated: a, time: t, event: e,
            }).collect();
            let c = Cohort::from_subjects(subjects, names(1), horizon).unwrap();
            let pp = expand_counting_process(&c, horizon);
            let expected_rows: usize = subs.iter().map(|&(t, _, _)| t.min(horizon) as usize).sum();
            prop_assert_eq!(pp.len(), expected_rows);
            let collapsed = pp.collapse();
            prop_assert_eq!(collapsed.len(), subs.len());
            for (k, &(i, periods, ev)) in collapsed.iter().enumerate() {
                let (t, e, _) = subs[k];
                prop_assert_eq!(i, k);
                prop_assert_eq!(periods, t.min(horizon));
                prop_assert_eq!(ev, e && t <= horizon);
            }
            prop_assert_eq!(pp.events(), c.events_within_horizon());
            // at most one event row per subject, and it is the last
            for w in pp.rows.windows(2) {
                if w[0].subject == w[1].subject {
                    prop_assert!(!w[0].event);
                    prop_assert_eq!(w[1].t, w[0].t + 1);
                }
            }
        }
    }
}
