use crate::boundaries::MvnConfig;
use crate::error::{Error, Result};
use crate::mcsim::{CovarianceSource, Design, TestSpec, SIM_MVN_POINTS};
use crate::survdata::{Family, ScenarioSpec};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::PathBuf;

/// A named scenario in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub name: String,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_pi")]
    pub pi: f64,
    #[serde(default = "default_entry_max")]
    pub entry_max: f64,
    #[serde(default = "default_rate")]
    pub baseline_rate: f64,
    pub family: Family,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub t_delay: f64,
}

fn default_n() -> usize {
    1000
}
fn default_pi() -> f64 {
    0.5
}
fn default_entry_max() -> f64 {
    2.0
}
fn default_rate() -> f64 {
    1.0
}

impl ScenarioEntry {
    pub fn new(name: &str, family: Family, delta: f64, t_delay: f64) -> Self {
        Self {
            name: name.to_string(),
            n: default_n(),
            pi: default_pi(),
            entry_max: default_entry_max(),
            baseline_rate: default_rate(),
            family,
            delta,
            t_delay,
        }
    }

    pub fn spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            n: self.n,
            pi: self.pi,
            entry_max: self.entry_max,
            baseline_rate: self.baseline_rate,
            family: self.family,
            delta: self.delta,
            t_delay: self.t_delay,
        }
    }

    /// Null, proportional hazards, log-odds and delayed-effect scenarios
    /// with `n = 1000`.
    pub fn reference() -> Vec<ScenarioEntry> {
        vec![
            Self::new("null", Family::Null, 0.0, 0.0),
            Self::new("prop-haz", Family::Proportional, 0.23, 0.0),
            Self::new("log-odds", Family::LogOdds, 0.32, 0.0),
            Self::new("non-prop-haz", Family::Delayed, 0.47, 0.6),
        ]
    }
}

/// Which scenarios are simulated without early stopping so that the
/// standardized covariance of complete paths can be reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompletePaths {
    None,
    /// Scenarios of the null family only.
    #[default]
    Null,
    All,
}

impl CompletePaths {
    pub fn applies(self, family: Family) -> bool {
        match self {
            CompletePaths::None => false,
            CompletePaths::Null => family == Family::Null,
            CompletePaths::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    /// Directory for the files below; `--out` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_json")]
    pub json: String,
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_cov_csv")]
    pub cov_csv: String,
}

fn default_json() -> String {
    "report.json".into()
}
fn default_csv() -> String {
    "summary.csv".into()
}
fn default_cov_csv() -> String {
    "covariance.csv".into()
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            dir: None,
            json: default_json(),
            csv: default_csv(),
            cov_csv: default_cov_csv(),
        }
    }
}

/// Everything `simulate` needs; every field has a default reproducing the
/// reference study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "Design::reference")]
    pub design: Design,
    #[serde(default = "ScenarioEntry::reference")]
    pub scenarios: Vec<ScenarioEntry>,
    #[serde(default = "default_tests")]
    pub tests: Vec<TestSpec>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: OutputPaths,
    #[serde(default)]
    pub covariance_source: CovarianceSource,
    #[serde(default)]
    pub complete_paths: CompletePaths,
    #[serde(default = "default_mvn")]
    pub mvn: MvnConfig,
    #[serde(default = "default_pilot_reps")]
    pub pilot_reps: usize,
}

fn default_tests() -> Vec<TestSpec> {
    TestSpec::roster(0.6)
}
fn default_reps() -> usize {
    10_000
}
fn default_seed() -> u64 {
    20_240_501
}
fn default_pilot_reps() -> usize {
    500
}
pub(crate) fn default_mvn() -> MvnConfig {
    MvnConfig {
        points: SIM_MVN_POINTS,
        ..MvnConfig::default()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Checks every field; error messages start with the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.reps == 0 {
            return bad("reps: must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads: must be at least 1".into());
        }
        self.design.validate()?;
        if self.scenarios.is_empty() {
            return bad("scenarios: at least one scenario is required".into());
        }
        let mut names = HashSet::new();
        for (i, s) in self.scenarios.iter().enumerate() {
            if s.name.is_empty() || !names.insert(s.name.as_str()) {
                return bad(format!("scenarios[{i}].name: must be nonempty and unique"));
            }
            if s.n == 0 {
                return bad(format!("scenarios[{i}].n: must be at least 1"));
            }
            s.spec()
                .validate()
                .map_err(|e| Error::InvalidSpec(format!("scenarios[{i}]: {e}")))?;
        }
        if self.tests.is_empty() {
            return bad("tests: at least one test is required".into());
        }
        for t in &self.tests {
            t.resolve(self.design.t_delay)?;
        }
        if self.mvn.points == 0 || self.mvn.shifts == 0 {
            return bad("mvn: shifts and points must be at least 1".into());
        }
        if self.covariance_source == CovarianceSource::Fixed && self.pilot_reps == 0 {
            return bad("pilot_reps: must be at least 1 with a fixed covariance source".into());
        }
        Ok(())
    }

    pub fn resolved_tests(&self) -> Result<Vec<TestSpec>> {
        self.tests.iter().map(|t| t.resolve(self.design.t_delay)).collect()
    }
}
