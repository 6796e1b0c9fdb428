//! Monte Carlo group sequential trials.
//!
//! Every test in a study sees the same simulated dataset per trial. Within a
//! trial the looks are processed in order; each test freezes its statistics,
//! covariance entries and direction at the look where they are first
//! computed, solves for that look's boundary, and stops at its first
//! crossing. Trials are independent given `(seed, trial index)`, so results
//! do not depend on how trials are distributed over threads.

mod trial;

pub use trial::{analyze_dataset, pilot_model, run_trial, FixedModel, LookReport, TrackModel, TrialSettings};

use crate::boundaries::{Method, MvnConfig, SpendingPlan};
use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::stream::{stream, Purpose};
use crate::survdata::ScenarioSpec;
use crate::wilcoxon::Target;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Restriction offset `t_j - L_j` used when none is configured.
pub const DEFAULT_L_OFFSET: f64 = 0.2;

/// Lattice size per trial in simulations: 8 shifts of 1024 points.
pub const SIM_MVN_POINTS: usize = 1 << 10;

/// Monitoring design shared by all tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Design {
    /// Analysis times `t_1 < ... < t_K`.
    pub times: Vec<f64>,
    pub plan: SpendingPlan,
    /// Offsets `t_j - L_j` for the RMST restriction times; empty means
    /// [`DEFAULT_L_OFFSET`] at every look.
    #[serde(default)]
    pub l_offsets: Vec<f64>,
    /// Delay used by tests that need one and do not set their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_delay: Option<f64>,
}

impl Design {
    /// Five looks at `t = 1.0, 1.5, ..., 3.0`, cumulative spending
    /// `(0.05, 0.1, 0.4, 0.7, 1) x 0.05` and `L_j = t_j - 0.2`.
    pub fn reference() -> Self {
        Self {
            times: vec![1.0, 1.5, 2.0, 2.5, 3.0],
            plan: SpendingPlan {
                alpha: 0.05,
                fractions: vec![0.05, 0.1, 0.4, 0.7, 1.0],
            },
            l_offsets: vec![DEFAULT_L_OFFSET; 5],
            t_delay: None,
        }
    }

    pub fn looks(&self) -> usize {
        self.times.len()
    }

    /// RMST restriction time `L_j` at look `j` (zero-based).
    pub fn restriction(&self, j: usize) -> f64 {
        self.times[j] - self.l_offsets.get(j).copied().unwrap_or(DEFAULT_L_OFFSET)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.times.is_empty() {
            return bad("design.times: at least one analysis time is required".into());
        }
        let mut prev = 0.0;
        for &t in &self.times {
            if !(t.is_finite() && t > prev) {
                return bad(format!("design.times: must be positive and strictly increasing, got {t}"));
            }
            prev = t;
        }
        self.plan
            .validate()
            .map_err(|e| Error::InvalidSpec(format!("design.plan: {e}")))?;
        if self.plan.looks() != self.looks() {
            return bad(format!(
                "design.plan: {} spending fractions for {} analysis times",
                self.plan.looks(),
                self.looks()
            ));
        }
        if !self.l_offsets.is_empty() && self.l_offsets.len() != self.looks() {
            return bad(format!(
                "design.l_offsets: expected {} entries, got {}",
                self.looks(),
                self.l_offsets.len()
            ));
        }
        let mut prev_l = 0.0;
        for j in 0..self.looks() {
            let l = self.restriction(j);
            let offset = self.times[j] - l;
            if !(offset >= 0.0 && l > 0.0) || l < prev_l {
                return bad(format!(
                    "design.l_offsets: restriction time {l} at look {} must lie in (0, t] and not decrease",
                    j + 1
                ));
            }
            prev_l = l;
        }
        if let Some(d) = self.t_delay {
            if !(d.is_finite() && d >= 0.0) {
                return bad(format!("design.t_delay: must be nonnegative, got {d}"));
            }
        }
        Ok(())
    }
}

/// The eleven monitored procedures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestFamily {
    #[serde(rename = "wilcoxon-unadjusted")]
    WilcoxonUnadjusted,
    #[serde(rename = "wilcoxon-adjusted")]
    WilcoxonAdjusted,
    #[serde(rename = "wilcoxon-I")]
    WilcoxonI,
    #[serde(rename = "wilcoxon-II")]
    WilcoxonII,
    #[serde(rename = "wilcoxon-III")]
    WilcoxonIII,
    #[serde(rename = "wilcoxon-IV")]
    WilcoxonIV,
    #[serde(rename = "logrank")]
    Logrank,
    #[serde(rename = "rmst")]
    Rmst,
    #[serde(rename = "rmst-I")]
    RmstI,
    #[serde(rename = "rmst-II")]
    RmstII,
    #[serde(rename = "rmst-III")]
    RmstIII,
}

impl TestFamily {
    pub const ALL: [TestFamily; 11] = [
        TestFamily::WilcoxonUnadjusted,
        TestFamily::WilcoxonAdjusted,
        TestFamily::WilcoxonI,
        TestFamily::WilcoxonII,
        TestFamily::WilcoxonIII,
        TestFamily::WilcoxonIV,
        TestFamily::Logrank,
        TestFamily::Rmst,
        TestFamily::RmstI,
        TestFamily::RmstII,
        TestFamily::RmstIII,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestFamily::WilcoxonUnadjusted => "wilcoxon-unadjusted",
            TestFamily::WilcoxonAdjusted => "wilcoxon-adjusted",
            TestFamily::WilcoxonI => "wilcoxon-I",
            TestFamily::WilcoxonII => "wilcoxon-II",
            TestFamily::WilcoxonIII => "wilcoxon-III",
            TestFamily::WilcoxonIV => "wilcoxon-IV",
            TestFamily::Logrank => "logrank",
            TestFamily::Rmst => "rmst",
            TestFamily::RmstI => "rmst-I",
            TestFamily::RmstII => "rmst-II",
            TestFamily::RmstIII => "rmst-III",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Whether the family is parameterized by a delay.
    pub fn needs_delay(self) -> bool {
        matches!(self, TestFamily::WilcoxonIV | TestFamily::RmstIII)
    }

    pub fn method(self) -> Method {
        match self {
            TestFamily::WilcoxonAdjusted | TestFamily::Rmst => Method::Mvn,
            _ => Method::Indinc,
        }
    }
}

/// A test to monitor, with its delay when the family has one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    pub family: TestFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_delay: Option<f64>,
}

impl TestSpec {
    pub fn new(family: TestFamily) -> Self {
        Self { family, t_delay: None }
    }

    pub fn delayed(family: TestFamily, t_delay: f64) -> Self {
        Self {
            family,
            t_delay: Some(t_delay),
        }
    }

    pub fn name(&self) -> &'static str {
        self.family.name()
    }

    /// The eleven tests of the reference study, with `t_delay` for the
    /// delayed-effect variants.
    pub fn roster(t_delay: f64) -> Vec<TestSpec> {
        TestFamily::ALL
            .into_iter()
            .map(|f| if f.needs_delay() { Self::delayed(f, t_delay) } else { Self::new(f) })
            .collect()
    }

    /// Checks family-parameter consistency, filling a missing delay from
    /// `default_delay`.
    pub fn resolve(&self, default_delay: Option<f64>) -> Result<TestSpec> {
        let name = self.name();
        if !self.family.needs_delay() {
            if self.t_delay.is_some() {
                return Err(Error::InvalidSpec(format!("tests.{name}: t_delay does not apply to this test")));
            }
            return Ok(*self);
        }
        match self.t_delay.or(default_delay) {
            Some(d) if d.is_finite() && d >= 0.0 => Ok(Self::delayed(self.family, d)),
            Some(d) => Err(Error::InvalidSpec(format!("tests.{name}: t_delay must be nonnegative, got {d}"))),
            None => Err(Error::InvalidSpec(format!("tests.{name}: t_delay is required"))),
        }
    }

    /// Targeted alternative of a modified test.
    pub(crate) fn target(&self) -> Option<Target> {
        let delay = self.t_delay.unwrap_or(0.0);
        match self.family {
            TestFamily::WilcoxonII | TestFamily::RmstI => Some(Target::LogOdds),
            TestFamily::WilcoxonIII | TestFamily::RmstII => Some(Target::Delayed { t_delay: 0.0 }),
            TestFamily::WilcoxonIV | TestFamily::RmstIII => Some(Target::Delayed { t_delay: delay }),
            _ => None,
        }
    }
}

/// One test's result in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    /// First look (one-based) at which `|z|` reached the boundary.
    pub stop_look: Option<usize>,
    pub rejected: bool,
    /// Per-look standardized statistic; `None` where none was available.
    pub z: Vec<Option<f64>>,
    pub boundary: Vec<Option<f64>>,
    /// Per-look unstandardized statistic (`X_j` or the combination `Y_j`).
    pub statistic: Vec<Option<f64>>,
    /// Numeric failure that ended monitoring for this test.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

impl TrialOutcome {
    pub(crate) fn new() -> Self {
        Self {
            stop_look: None,
            rejected: false,
            z: Vec::new(),
            boundary: Vec::new(),
            statistic: Vec::new(),
            flag: None,
        }
    }

    /// Number of analyses conducted before stopping in a `looks`-look design.
    pub fn analyses(&self, looks: usize) -> usize {
        self.stop_look.unwrap_or(looks)
    }

    /// The statistic at every look, when all `looks` are present.
    pub fn complete_statistics(&self, looks: usize) -> Option<Vec<f64>> {
        if self.statistic.len() != looks {
            return None;
        }
        self.statistic.iter().copied().collect()
    }
}

/// Where boundary and combination covariances come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceSource {
    /// Sequential per-trial estimates frozen at each look.
    #[default]
    Estimated,
    /// Averages over null pilot trials, shared by every trial.
    Fixed,
}

/// Study-level settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub reps: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Compute every look even after a test stops.
    pub complete_paths: bool,
    pub mvn: MvnConfig,
    pub covariance: CovarianceSource,
    pub pilot_reps: usize,
}

impl StudyOptions {
    pub fn new(reps: usize, seed: u64) -> Self {
        Self {
            reps,
            seed,
            threads: None,
            complete_paths: false,
            mvn: MvnConfig {
                points: SIM_MVN_POINTS,
                ..MvnConfig::default()
            },
            covariance: CovarianceSource::Estimated,
            pilot_reps: 500,
        }
    }
}

/// Aggregate results for one test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: TestSpec,
    pub rejections: usize,
    pub rate: f64,
    /// Binomial standard error of `rate`.
    pub mc_se: f64,
    pub avg_analyses: f64,
    pub avg_analyses_se: f64,
    /// Trials where a numeric failure ended monitoring.
    pub flagged: usize,
    /// Empirical covariance of the per-look statistics divided by the
    /// empirical variance of the last one, from complete paths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardized_cov: Option<SymMatrix>,
    #[serde(default)]
    pub complete_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub scenario: ScenarioSpec,
    pub design: Design,
    pub reps: usize,
    pub seed: u64,
    pub complete_paths: bool,
    pub covariance_source: CovarianceSource,
    pub tests: Vec<TestReport>,
}

impl SimReport {
    pub fn test(&self, family: TestFamily) -> Option<&TestReport> {
        self.tests.iter().find(|t| t.test.family == family)
    }
}

/// Empirical covariance of `vectors` divided by the empirical variance of
/// their last component.
pub fn standardized_cov_report(vectors: &[Vec<f64>]) -> Result<SymMatrix> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 complete vectors, got {n}")));
    }
    let k = vectors[0].len();
    if k == 0 || vectors.iter().any(|v| v.len() != k || v.iter().any(|x| !x.is_finite())) {
        return Err(Error::InsufficientData("vectors must be nonempty, finite and of equal length".into()));
    }
    let mut mean = vec![0.0; k];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = SymMatrix::zeros(k);
    for i in 0..k {
        for j in i..k {
            let s: f64 = vectors.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum();
            cov.set(i, j, s / (n - 1) as f64);
        }
    }
    let last = cov.get(k - 1, k - 1);
    if !(last > 0.0) {
        return Err(Error::InsufficientData(format!("last component has variance {last}")));
    }
    Ok(cov.scaled(1.0 / last))
}

/// Runs `options.reps` trials of `scenario` and aggregates each test.
pub fn run_study(
    scenario: &ScenarioSpec,
    design: &Design,
    tests: &[TestSpec],
    options: &StudyOptions,
) -> Result<SimReport> {
    scenario.validate()?;
    design.validate()?;
    if options.reps == 0 {
        return Err(Error::InvalidSpec("reps must be at least 1".into()));
    }
    let tests = tests
        .iter()
        .map(|t| t.resolve(design.t_delay))
        .collect::<Result<Vec<_>>>()?;
    let work = || -> Result<SimReport> {
        let fixed = match options.covariance {
            CovarianceSource::Estimated => None,
            CovarianceSource::Fixed => {
                Some(Arc::new(pilot_model(scenario, design, &tests, options.pilot_reps, options.seed)?))
            }
        };
        let settings = TrialSettings {
            complete_paths: options.complete_paths,
            mvn: options.mvn,
            fixed,
        };
        let outcomes = (0..options.reps as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(options.seed, i, Purpose::Data);
                run_trial(scenario, design, &tests, &settings, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(aggregate(scenario, design, &tests, options, &outcomes))
    };
    match options.threads {
        None => work(),
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::InvalidSpec(format!("threads: {e}")))?
            .install(work),
    }
}

fn aggregate(
    scenario: &ScenarioSpec,
    design: &Design,
    tests: &[TestSpec],
    options: &StudyOptions,
    outcomes: &[Vec<TrialOutcome>],
) -> SimReport {
    let k = design.looks();
    let reps = outcomes.len() as f64;
    let reports = tests
        .iter()
        .enumerate()
        .map(|(i, test)| {
            let per_test = outcomes.iter().map(|o| &o[i]);
            let rejections = per_test.clone().filter(|o| o.rejected).count();
            let flagged = per_test.clone().filter(|o| o.flag.is_some()).count();
            let analyses: Vec<f64> = per_test.clone().map(|o| o.analyses(k) as f64).collect();
            let avg = analyses.iter().sum::<f64>() / reps;
            let spread = if analyses.len() > 1 {
                analyses.iter().map(|a| (a - avg).powi(2)).sum::<f64>() / (reps - 1.0)
            } else {
                0.0
            };
            let rate = rejections as f64 / reps;
            let (standardized_cov, complete_trials) = if options.complete_paths {
                let vectors: Vec<Vec<f64>> = per_test
                    .filter(|o| o.flag.is_none())
                    .filter_map(|o| o.complete_statistics(k))
                    .collect();
                (standardized_cov_report(&vectors).ok(), vectors.len())
            } else {
                (None, 0)
            };
            TestReport {
                test: *test,
                rejections,
                rate,
                mc_se: (rate * (1.0 - rate) / reps).sqrt(),
                avg_analyses: avg,
                avg_analyses_se: (spread / reps).sqrt(),
                flagged,
                standardized_cov,
                complete_trials,
            }
        })
        .collect();
    SimReport {
        label: None,
        scenario: scenario.clone(),
        design: design.clone(),
        reps: outcomes.len(),
        seed: options.seed,
        complete_paths: options.complete_paths,
        covariance_source: options.covariance,
        tests: reports,
    }
}

/// Writes one row per test and report: `scenario, test, delta, reps, rate,
/// mc_se, avg_analyses, avg_analyses_se, flagged`.
pub fn write_summary_csv<W: std::io::Write>(reports: &[SimReport], writer: W) -> Result<()> {
    let io = |e: csv::Error| Error::Schema(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "scenario",
        "test",
        "delta",
        "reps",
        "rate",
        "mc_se",
        "avg_analyses",
        "avg_analyses_se",
        "flagged",
    ])
    .map_err(io)?;
    for report in reports {
        let label = report.label.clone().unwrap_or_default();
        for t in &report.tests {
            w.write_record([
                label.clone(),
                t.test.name().to_string(),
                format!("{:.4}", report.scenario.delta),
                report.reps.to_string(),
                format!("{:.6}", t.rate),
                format!("{:.6}", t.mc_se),
                format!("{:.6}", t.avg_analyses),
                format!("{:.6}", t.avg_analyses_se),
                t.flagged.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Schema(e.to_string()))?;
    Ok(())
}
